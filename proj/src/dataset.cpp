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

#include "dhoi/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "dhoi/container.hpp"
#include "dhoi/errors.hpp"

namespace dhoi {

using json = nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw SchemaError(path + ": " + what);
}

void check_box(const Box& b, const ImageEntry& img, const std::string& path) {
  if (!(b.x2 > b.x1 && b.y2 > b.y1)) fail(path, "box needs x2 > x1 and y2 > y1");
  if (!b.inside(img.width, img.height)) fail(path, "box outside the " + std::to_string(img.width) + "x" +
                                                        std::to_string(img.height) + " image");
}

const json& field(const json& j, const char* key, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) fail(path + "." + key, "missing");
  return *it;
}

template <class T>
T get_as(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(path, "wrong type");
  }
}

Box box_from(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 4) fail(path, "box must be [x1, y1, x2, y2]");
  Box b;
  b.x1 = get_as<double>(j[0], path + "[0]");
  b.y1 = get_as<double>(j[1], path + "[1]");
  b.x2 = get_as<double>(j[2], path + "[2]");
  b.y2 = get_as<double>(j[3], path + "[3]");
  return b;
}

json box_to(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

}  // namespace

const ImageEntry& DatasetFile::image(int id) const {
  for (const ImageEntry& im : images)
    if (im.id == id) return im;
  throw LookupError("no image with id " + std::to_string(id));
}

int DatasetFile::hoi_index(const std::string& action, const std::string& object) const {
  for (std::size_t i = 0; i < vocab.hois.size(); ++i)
    if (vocab.hois[i].action == action && vocab.hois[i].object == object) return static_cast<int>(i);
  return -1;
}

void DatasetFile::validate() const {
  if (source != "real" && source != "synthetic") fail("$.source", "must be \"real\" or \"synthetic\"");
  std::set<std::string> actions(vocab.actions.begin(), vocab.actions.end());
  std::set<std::string> objects(vocab.objects.begin(), vocab.objects.end());
  if (actions.size() != vocab.actions.size()) fail("$.vocab.actions", "duplicate names");
  if (objects.size() != vocab.objects.size()) fail("$.vocab.objects", "duplicate names");
  std::set<std::pair<std::string, std::string>> hois;
  for (std::size_t i = 0; i < vocab.hois.size(); ++i) {
    const std::string p = "$.vocab.hois[" + std::to_string(i) + "]";
    if (!actions.count(vocab.hois[i].action)) fail(p, "unknown action '" + vocab.hois[i].action + "'");
    if (!objects.count(vocab.hois[i].object)) fail(p, "unknown object '" + vocab.hois[i].object + "'");
    if (!hois.insert({vocab.hois[i].action, vocab.hois[i].object}).second) fail(p, "duplicate triplet");
  }
  std::map<int, const ImageEntry*> by_id;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string p = "$.images[" + std::to_string(i) + "]";
    if (images[i].width <= 0 || images[i].height <= 0) fail(p, "non-positive image size");
    if (images[i].path.empty()) fail(p + ".path", "empty");
    if (!by_id.emplace(images[i].id, &images[i]).second) fail(p + ".id", "duplicate image id");
  }
  for (std::size_t a = 0; a < annotations.size(); ++a) {
    const Annotation& ann = annotations[a];
    const std::string p = "$.annotations[" + std::to_string(a) + "]";
    auto it = by_id.find(ann.image_id);
    if (it == by_id.end()) fail(p + ".image_id", "no image with id " + std::to_string(ann.image_id));
    for (std::size_t h = 0; h < ann.humans.size(); ++h) {
      check_box(ann.humans[h], *it->second, p + ".humans[" + std::to_string(h) + "]");
    }
    for (std::size_t o = 0; o < ann.objects.size(); ++o) {
      const std::string q = p + ".objects[" + std::to_string(o) + "]";
      check_box(ann.objects[o].box, *it->second, q + ".box");
      if (!objects.count(ann.objects[o].category)) fail(q + ".category", "unknown object '" + ann.objects[o].category + "'");
    }
    for (std::size_t k = 0; k < ann.hois.size(); ++k) {
      const HoiAnn& h = ann.hois[k];
      const std::string q = p + ".hois[" + std::to_string(k) + "]";
      if (h.human_idx < 0 || h.human_idx >= static_cast<int>(ann.humans.size())) fail(q + ".human_idx", "out of range");
      if (h.object_idx < 0 || h.object_idx >= static_cast<int>(ann.objects.size())) fail(q + ".object_idx", "out of range");
      if (!actions.count(h.action)) fail(q + ".action", "unknown action '" + h.action + "'");
      if (!hois.count({h.action, ann.objects[h.object_idx].category})) fail(q, "triplet not in vocab.hois");
    }
  }
}

json to_json(const DatasetFile& ds) {
  json j;
  j["source"] = ds.source;
  j["images"] = json::array();
  for (const ImageEntry& im : ds.images) {
    j["images"].push_back({{"id", im.id}, {"path", im.path}, {"width", im.width}, {"height", im.height}});
  }
  j["annotations"] = json::array();
  for (const Annotation& a : ds.annotations) {
    json ja;
    ja["image_id"] = a.image_id;
    ja["humans"] = json::array();
    for (const Box& b : a.humans) ja["humans"].push_back(box_to(b));
    ja["objects"] = json::array();
    for (const ObjectAnn& o : a.objects) ja["objects"].push_back({{"box", box_to(o.box)}, {"category", o.category}});
    ja["hois"] = json::array();
    for (const HoiAnn& h : a.hois) {
      ja["hois"].push_back({{"human_idx", h.human_idx}, {"object_idx", h.object_idx}, {"action", h.action}});
    }
    j["annotations"].push_back(std::move(ja));
  }
  j["vocab"]["actions"] = ds.vocab.actions;
  j["vocab"]["objects"] = ds.vocab.objects;
  j["vocab"]["hois"] = json::array();
  for (const HoiClass& h : ds.vocab.hois) j["vocab"]["hois"].push_back(json::array({h.action, h.object}));
  j["meta"]["skipped"] = ds.skipped;
  return j;
}

DatasetFile dataset_from_json(const json& j) {
  DatasetFile ds;
  if (!j.is_object()) fail("$", "expected an object");
  if (j.contains("source")) ds.source = get_as<std::string>(j["source"], "$.source");
  const json& images = field(j, "images", "$");
  if (!images.is_array()) fail("$.images", "expected an array");
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string p = "$.images[" + std::to_string(i) + "]";
    ImageEntry im;
    im.id = get_as<int>(field(images[i], "id", p), p + ".id");
    im.path = get_as<std::string>(field(images[i], "path", p), p + ".path");
    im.width = get_as<int>(field(images[i], "width", p), p + ".width");
    im.height = get_as<int>(field(images[i], "height", p), p + ".height");
    ds.images.push_back(im);
  }
  const json& anns = field(j, "annotations", "$");
  if (!anns.is_array()) fail("$.annotations", "expected an array");
  for (std::size_t a = 0; a < anns.size(); ++a) {
    const std::string p = "$.annotations[" + std::to_string(a) + "]";
    Annotation ann;
    ann.image_id = get_as<int>(field(anns[a], "image_id", p), p + ".image_id");
    const json& humans = field(anns[a], "humans", p);
    if (!humans.is_array()) fail(p + ".humans", "expected an array");
    for (std::size_t h = 0; h < humans.size(); ++h) ann.humans.push_back(box_from(humans[h], p + ".humans[" + std::to_string(h) + "]"));
    const json& objects = field(anns[a], "objects", p);
    if (!objects.is_array()) fail(p + ".objects", "expected an array");
    for (std::size_t o = 0; o < objects.size(); ++o) {
      const std::string q = p + ".objects[" + std::to_string(o) + "]";
      ObjectAnn oa;
      oa.box = box_from(field(objects[o], "box", q), q + ".box");
      oa.category = get_as<std::string>(field(objects[o], "category", q), q + ".category");
      ann.objects.push_back(oa);
    }
    const json& hois = field(anns[a], "hois", p);
    if (!hois.is_array()) fail(p + ".hois", "expected an array");
    for (std::size_t k = 0; k < hois.size(); ++k) {
      const std::string q = p + ".hois[" + std::to_string(k) + "]";
      HoiAnn h;
      h.human_idx = get_as<int>(field(hois[k], "human_idx", q), q + ".human_idx");
      h.object_idx = get_as<int>(field(hois[k], "object_idx", q), q + ".object_idx");
      h.action = get_as<std::string>(field(hois[k], "action", q), q + ".action");
      ann.hois.push_back(h);
    }
    ds.annotations.push_back(std::move(ann));
  }
  const json& vocab = field(j, "vocab", "$");
  ds.vocab.actions = get_as<std::vector<std::string>>(field(vocab, "actions", "$.vocab"), "$.vocab.actions");
  ds.vocab.objects = get_as<std::vector<std::string>>(field(vocab, "objects", "$.vocab"), "$.vocab.objects");
  if (vocab.contains("hois")) {
    const json& hois = vocab["hois"];
    if (!hois.is_array()) fail("$.vocab.hois", "expected an array");
    for (std::size_t i = 0; i < hois.size(); ++i) {
      const std::string p = "$.vocab.hois[" + std::to_string(i) + "]";
      if (!hois[i].is_array() || hois[i].size() != 2) fail(p, "expected [action, object]");
      ds.vocab.hois.push_back({get_as<std::string>(hois[i][0], p + "[0]"), get_as<std::string>(hois[i][1], p + "[1]")});
    }
  } else {
    std::set<std::pair<int, int>> seen;
    auto pos = [](const std::vector<std::string>& v, const std::string& s) {
      return static_cast<int>(std::find(v.begin(), v.end(), s) - v.begin());
    };
    for (const Annotation& a : ds.annotations)
      for (const HoiAnn& h : a.hois) {
        if (h.object_idx < 0 || h.object_idx >= static_cast<int>(a.objects.size())) continue;
        seen.insert({pos(ds.vocab.actions, h.action), pos(ds.vocab.objects, a.objects[h.object_idx].category)});
      }
    for (auto [ai, oi] : seen) {
      if (ai >= static_cast<int>(ds.vocab.actions.size()) || oi >= static_cast<int>(ds.vocab.objects.size())) continue;
      ds.vocab.hois.push_back({ds.vocab.actions[ai], ds.vocab.objects[oi]});
    }
  }
  if (j.contains("meta") && j["meta"].contains("skipped")) ds.skipped = get_as<int>(j["meta"]["skipped"], "$.meta.skipped");
  ds.validate();
  return ds;
}

DatasetFile load_dataset(const std::string& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path + ": not valid JSON (" + e.what() + ")");
  }
  return dataset_from_json(j);
}

void save_dataset(const std::string& path, const DatasetFile& ds) {
  ds.validate();
  write_file_atomic(path, to_json(ds).dump(1) + "\n");
}

std::string resolve_image_path(const std::string& dataset_path, const ImageEntry& image) {
  namespace fs = std::filesystem;
  const fs::path p(image.path);
  if (p.is_absolute()) return p.string();
  return (fs::path(dataset_path).parent_path() / p).string();
}

}  // namespace dhoi
