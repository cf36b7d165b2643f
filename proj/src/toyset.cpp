/* Copyright 2026 The dhoi Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "dhoi/toyset.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <random>

#include "dhoi/errors.hpp"
#include "dhoi/rng.hpp"

namespace dhoi {
namespace {

constexpr std::array<std::array<double, 3>, 6> kObjectColors{{
    {0.55, 0.33, 0.12}, {0.15, 0.30, 0.90}, {0.92, 0.12, 0.10},
    {0.10, 0.70, 0.20}, {0.60, 0.15, 0.70}, {0.95, 0.85, 0.10},
}};
// Object extent as a fraction of the image side (w, h).
constexpr std::array<std::array<double, 2>, 6> kObjectSizes{{
    {0.42, 0.26}, {0.13, 0.16}, {0.16, 0.16}, {0.30, 0.20}, {0.20, 0.30}, {0.12, 0.24},
}};

int position(const std::vector<std::string>& v, const std::string& s, const char* what) {
  auto it = std::find(v.begin(), v.end(), s);
  if (it == v.end()) throw LookupError(std::string("toy scene: unknown ") + what + " '" + s + "'");
  return static_cast<int>(it - v.begin());
}

void fill(Image& img, const Box& b, const std::array<double, 3>& rgb) {
  const int x1 = std::max(0, static_cast<int>(b.x1)), x2 = std::min(img.width, static_cast<int>(b.x2));
  const int y1 = std::max(0, static_cast<int>(b.y1)), y2 = std::min(img.height, static_cast<int>(b.y2));
  for (int y = y1; y < y2; ++y)
    for (int x = x1; x < x2; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c];
}

}  // namespace

ToyScene render_toy_scene(const ToyOptions& opt, const HoiClass& hoi, std::uint64_t seed) {
  const int a = position(opt.actions, hoi.action, "action");
  const int o = position(opt.objects, hoi.object, "object");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double s = opt.size;
  ToyScene scene;
  scene.action = hoi.action;
  scene.object_class = hoi.object;
  scene.image = Image(opt.size, opt.size);
  const double base = 0.55 + 0.3 * u(rng);
  for (int y = 0; y < opt.size; ++y)
    for (int x = 0; x < opt.size; ++x)
      for (int c = 0; c < 3; ++c) scene.image.at(y, x, c) = base - 0.05 * c;

  const double hw = std::round(0.16 * s), hh = std::round(0.42 * s);
  const double ow = std::round(kObjectSizes[o % 6][0] * s), oh = std::round(kObjectSizes[o % 6][1] * s);
  // Placement by action: 0 on top of the object, 1 object held at the side,
  // 2 object at the feet; further actions mirror these.
  const int mode = a % 3;
  const bool mirror = (a / 3) % 2 == 1;
  double hx, hy, ox, oy;
  const double jx = std::round((u(rng) - 0.5) * 0.16 * s), jy = std::round((u(rng) - 0.5) * 0.1 * s);
  if (mode == 0) {
    ox = std::round(0.5 * s - ow / 2) + jx;
    oy = std::round(0.62 * s);
    hx = ox + std::round(ow / 2 - hw / 2);
    hy = oy - hh + std::round(0.1 * s);
  } else if (mode == 1) {
    hx = std::round(0.32 * s) + jx;
    hy = std::round(0.3 * s) + jy;
    ox = hx + hw;
    oy = hy + std::round(0.35 * hh);
  } else {
    hx = std::round(0.45 * s) + jx;
    hy = std::round(0.28 * s) + jy;
    ox = hx - ow;
    oy = hy + hh - oh;
  }
  if (mirror) {
    hx = s - hx - hw;
    ox = s - ox - ow;
  }
  auto clampx = [&](double v, double w) { return std::clamp(v, 0.0, s - w); };
  scene.human = {clampx(hx, hw), clampx(hy, hh), 0, 0};
  scene.human.x2 = scene.human.x1 + hw;
  scene.human.y2 = scene.human.y1 + hh;
  scene.object = {clampx(ox, ow), clampx(oy, oh), 0, 0};
  scene.object.x2 = scene.object.x1 + ow;
  scene.object.y2 = scene.object.y1 + oh;

  fill(scene.image, scene.object, kObjectColors[o % 6]);
  fill(scene.image, scene.human, {0.95, 0.72, 0.55});
  Box head = scene.human;
  head.y2 = head.y1 + std::round(0.25 * hh);
  fill(scene.image, head, {0.35, 0.2, 0.1});
  return scene;
}

ToySet make_toyset(const ToyOptions& opt, int count) {
  if (opt.hois.empty()) throw InputError("toy set needs at least one triplet class");
  if (opt.size % 8 != 0 || opt.size < 32) throw DimensionError("toy image size must be a multiple of 8, >= 32");
  ToySet set;
  set.dataset.source = "real";
  set.dataset.vocab.actions = opt.actions;
  set.dataset.vocab.objects = opt.objects;
  set.dataset.vocab.hois = opt.hois;
  for (int i = 0; i < count; ++i) {
    const HoiClass& hoi = opt.hois[i % opt.hois.size()];
    ToyScene scene = render_toy_scene(opt, hoi, derive_seed(opt.seed, {static_cast<std::uint64_t>(i)}));
    char name[32];
    std::snprintf(name, sizeof(name), "img_%04d.png", i);
    set.dataset.images.push_back({i, std::string("images/") + name, opt.size, opt.size});
    Annotation ann;
    ann.image_id = i;
    ann.humans.push_back(scene.human);
    ann.objects.push_back({scene.object, scene.object_class});
    ann.hois.push_back({0, 0, scene.action});
    set.dataset.annotations.push_back(std::move(ann));
    set.scenes.push_back(std::move(scene));
  }
  set.dataset.validate();
  return set;
}

std::string write_toyset(const ToySet& set, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  for (std::size_t i = 0; i < set.scenes.size(); ++i) {
    write_png((fs::path(dir) / set.dataset.images[i].path).string(), set.scenes[i].image);
  }
  const std::string path = (fs::path(dir) / "dataset.json").string();
  save_dataset(path, set.dataset);
  return path;
}

}  // namespace dhoi
