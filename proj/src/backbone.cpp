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

#include "dhoi/backbone.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <regex>

#include "dhoi/container.hpp"
#include "dhoi/errors.hpp"
#include "dhoi/kernels.hpp"
#include "dhoi/rng.hpp"

namespace dhoi {

// ---------------------------------------------------------------- grids

LatentGrid::LatentGrid(int h, int w, int s, Matrix d) : height(h), width(w), stride(s), data(std::move(d)) {
  validate();
}

void LatentGrid::validate() const {
  if (height < 1 || width < 1) throw DimensionError("latent grid must be at least 1x1");
  if (data.rows() != height * width) {
    throw DimensionError("latent grid has " + std::to_string(data.rows()) + " rows for " +
                         std::to_string(height) + "x" + std::to_string(width) + " cells");
  }
  static constexpr int kStrides[] = {8, 16, 32, 64, 128};
  if (std::find(std::begin(kStrides), std::end(kStrides), stride) == std::end(kStrides)) {
    throw DimensionError("unsupported latent stride " + std::to_string(stride));
  }
  if (!all_finite(data)) throw NumericalError("latent grid holds non-finite values");
}

// ---------------------------------------------------------------- schedule

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw RangeError("schedule needs at least one step");
  NoiseSchedule s;
  s.steps = steps;
  double prod = 1.0;
  for (int t = 0; t < steps; ++t) {
    const double beta = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (steps - 1);
    prod *= 1.0 - beta;
    s.alphas_bar.push_back(prod);
  }
  s.validate();
  return s;
}

NoiseSchedule NoiseSchedule::unit(int steps) {
  if (steps < 1) throw RangeError("schedule needs at least one step");
  NoiseSchedule s;
  s.steps = steps;
  s.alphas_bar.assign(steps, 1.0);
  return s;
}

void NoiseSchedule::validate() const {
  if (steps < 1 || static_cast<int>(alphas_bar.size()) != steps) {
    throw DimensionError("schedule length differs from its step count");
  }
  for (int t = 0; t < steps; ++t) {
    const double a = alphas_bar[t];
    if (!(a > 0.0 && a <= 1.0)) throw RangeError("alphas_bar outside (0, 1] at step " + std::to_string(t));
    // Non-increasing rather than strictly decreasing so the unit schedule
    // used by identity fixtures is admissible.
    if (t > 0 && a > alphas_bar[t - 1]) throw RangeError("alphas_bar increases at step " + std::to_string(t));
  }
}

namespace {
void check_t(int t, const NoiseSchedule& sched) {
  if (t < 0 || t >= sched.steps) {
    throw RangeError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(sched.steps) + ")");
  }
}
}  // namespace

LatentGrid noise_to(const LatentGrid& z0, int t, const LatentGrid& eps, const NoiseSchedule& sched) {
  check_t(t, sched);
  if (!z0.data.same_shape(eps.data)) throw DimensionError("noise_to: eps shape differs from z0");
  const double a = std::sqrt(sched.alphas_bar[t]);
  const double b = std::sqrt(1.0 - sched.alphas_bar[t]);
  LatentGrid out = z0;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * z0.data[i] + b * eps.data[i];
  return out;
}

ad::Var noise_to(const ad::Var& z0, int t, const ad::Var& eps, const NoiseSchedule& sched) {
  check_t(t, sched);
  return ad::add(ad::scale(z0, std::sqrt(sched.alphas_bar[t])),
                 ad::scale(eps, std::sqrt(1.0 - sched.alphas_bar[t])));
}

std::vector<int> sampler_timesteps(int t_start, int n_steps) {
  if (n_steps <= 0) throw RangeError("sampler needs n_steps >= 1");
  std::vector<int> ts;
  for (int i = 0; i < n_steps; ++i) {
    ts.push_back(static_cast<int>((static_cast<long>(t_start) * (n_steps - i) + n_steps / 2) / n_steps));
  }
  return ts;
}

// ---------------------------------------------------------------- text

std::vector<std::string> tokenize(const std::string& text) {
  static const std::regex kToken(R"(R_\*<[^>]+>|[A-Za-z0-9_']+)");
  std::vector<std::string> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), kToken); it != std::sregex_iterator(); ++it) {
    std::string tok = it->str();
    if (placeholder_action(tok).empty()) {
      std::transform(tok.begin(), tok.end(), tok.begin(), [](unsigned char c) { return std::tolower(c); });
    }
    out.push_back(std::move(tok));
  }
  return out;
}

std::string placeholder_action(const std::string& token) {
  if (token.size() > 5 && token.compare(0, 4, "R_*<") == 0 && token.back() == '>') {
    return token.substr(4, token.size() - 5);
  }
  return "";
}

std::string make_placeholder(const std::string& action) { return "R_*<" + action + ">"; }

PromptEmbedding Backbone::encode_text(const std::string& text, const RelationTable& table) const {
  const std::vector<std::string> tokens = tokenize(text);
  if (tokens.empty()) throw InputError("cannot encode empty text");
  PromptEmbedding out;
  out.source_text = text;
  out.tokens = Matrix(static_cast<int>(tokens.size()), text_dim());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string action = placeholder_action(tokens[i]);
    Matrix row = action.empty() ? embed_token(tokens[i]) : table.row(action);
    if (row.cols() != text_dim()) throw DimensionError("relation vector width differs from text encoder");
    std::copy(row.values().begin(), row.values().end(), out.tokens.row(static_cast<int>(i)).begin());
  }
  return out;
}

PromptEmbedding Backbone::encode_text(const std::string& text) const {
  return encode_text(text, RelationTable());
}

// ---------------------------------------------------------------- sampling

DenoiserOutput Backbone::denoise_once(const LatentGrid& z, int t, const PromptEmbedding& cond) const {
  if (z.stride != 8) throw DimensionError("denoiser expects a stride-8 latent");
  if (cond.tokens.rows() == 0) throw InputError("empty conditioning");
  ad::Tape tape(false);
  DenoiseTrace tr = denoise_tape(tape, tape.constant(z.data), z.height, z.width, t, tape.constant(cond.tokens));
  DenoiserOutput out;
  for (std::size_t l = 0; l < tr.features.size(); ++l) {
    const LevelShape& s = tr.levels[l];
    out.features.emplace_back(s.height, s.width, s.stride, tr.features[l].value());
    out.attention.push_back(tr.attention[l].value());
  }
  out.noise_pred = LatentGrid(z.height, z.width, 8, tr.noise_pred.value());
  return out;
}

ad::Var Backbone::denoise_iterative(ad::Tape& tape, const ad::Var& zT, int height, int width,
                                    const ad::Var& cond, int n_steps, const NoiseSchedule& sched,
                                    int t_start, DenoiseTrace* last_step) const {
  if (n_steps <= 0) throw RangeError("denoise_iterative needs n_steps >= 1");
  if (t_start < 0) t_start = sched.steps - 1;
  check_t(t_start, sched);
  const std::vector<int> ts = sampler_timesteps(t_start, n_steps);
  ad::Var z = zT;
  for (int i = 0; i < n_steps; ++i) {
    const double ab = sched.alphas_bar[ts[i]];
    const double ab_prev = i + 1 < n_steps ? sched.alphas_bar[ts[i + 1]] : 1.0;
    DenoiseTrace tr = denoise_tape(tape, z, height, width, ts[i], cond);
    const ad::Var& eps = tr.noise_pred;
    ad::Var x0 = ad::scale(ad::sub(z, ad::scale(eps, std::sqrt(1.0 - ab))), 1.0 / std::sqrt(ab));
    z = ad::add(ad::scale(x0, std::sqrt(ab_prev)), ad::scale(eps, std::sqrt(1.0 - ab_prev)));
    if (last_step && i + 1 == n_steps) *last_step = std::move(tr);
  }
  return z;
}

LatentGrid Backbone::denoise_iterative(const LatentGrid& zT, const PromptEmbedding& cond, int n_steps,
                                       const NoiseSchedule& sched, int t_start,
                                       DenoiserOutput* last_step) const {
  if (zT.stride != 8) throw DimensionError("denoiser expects a stride-8 latent");
  if (cond.tokens.rows() == 0) throw InputError("empty conditioning");
  ad::Tape tape(false);
  DenoiseTrace tr;
  ad::Var z = denoise_iterative(tape, tape.constant(zT.data), zT.height, zT.width,
                                tape.constant(cond.tokens), n_steps, sched, t_start, &tr);
  if (last_step) {
    *last_step = DenoiserOutput{};
    for (std::size_t l = 0; l < tr.features.size(); ++l) {
      const LevelShape& s = tr.levels[l];
      last_step->features.emplace_back(s.height, s.width, s.stride, tr.features[l].value());
      last_step->attention.push_back(tr.attention[l].value());
    }
    last_step->noise_pred = LatentGrid(zT.height, zT.width, 8, tr.noise_pred.value());
  }
  return LatentGrid(zT.height, zT.width, 8, z.value());
}

// ---------------------------------------------------------------- mock

namespace {

std::string lvl(const char* base, int l) { return std::string(base) + std::to_string(l); }

Matrix time_embedding(int t, int dim) {
  Matrix e(1, dim);
  const int half = dim / 2;
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / std::max(1, half));
    e(0, 2 * k) = std::sin(t * freq);
    e(0, 2 * k + 1) = std::cos(t * freq);
  }
  return e;
}

}  // namespace

MockBackbone::MockBackbone(const MockConfig& config) : MockBackbone(config, true) {}

MockBackbone MockBackbone::zeros(const MockConfig& config) { return MockBackbone(config, false); }

MockBackbone::MockBackbone(const MockConfig& config, bool random) : config_(config) {
  if (config.text_dim < 1 || config.latent_channels < 1 || config.encoder_hidden < 1) {
    throw RangeError("mock backbone dimensions must be positive");
  }
  for (int w : config.widths)
    if (w < 1) throw RangeError("mock denoiser widths must be positive");
  std::mt19937_64 rng(derive_seed(config.seed, {0x6d6f636b}));
  auto init = [&](const std::string& name, int rows, int cols, double stddev) {
    Matrix m = random ? gaussian_matrix(rows, cols, rng, stddev) : Matrix(rows, cols);
    round_to_float(m);
    weights_.add(name, std::move(m));
  };
  const int hid = config.encoder_hidden, lc = config.latent_channels;
  init("enc.conv1", 4 * 4 * 3, hid, std::sqrt(1.0 / 48));
  init("enc.bias1", 1, hid, 0.0);
  init("enc.conv2", 2 * 2 * hid, lc, std::sqrt(1.0 / (4 * hid)));
  init("enc.bias2", 1, lc, 0.0);
  init("dec.proj1", lc, 2 * 2 * hid, std::sqrt(1.0 / lc));
  init("dec.bias1", 1, hid, 0.0);
  init("dec.proj2", hid, 4 * 4 * 3, std::sqrt(1.0 / hid));
  init("dec.bias2", 1, 3, 0.0);
  int prev = lc;
  for (int l = 0; l < 4; ++l) {
    const int c = config.widths[l];
    init(lvl("den.conv", l), 9 * prev, c, std::sqrt(2.0 / (9 * prev)));
    init(lvl("den.bias", l), 1, c, 0.0);
    init(lvl("den.key", l), config.text_dim, c, 1.0);
    init(lvl("den.value", l), config.text_dim, c, 1.0);
    init(lvl("den.out", l), c, lc, 0.5 / std::sqrt(static_cast<double>(c)));
    prev = c;
  }
  init("den.time", config.widths[0], config.widths[0], std::sqrt(1.0 / config.widths[0]));
  // Noise prediction starts near the identity so pure noise maps to itself.
  Matrix in = random ? gaussian_matrix(lc, lc, rng, 0.1) : Matrix(lc, lc);
  if (random)
    for (int i = 0; i < lc; ++i) in(i, i) += 1.0;
  round_to_float(in);
  weights_.add("den.in", std::move(in));
}

std::vector<LevelShape> MockBackbone::level_shapes(int latent_height, int latent_width) const {
  std::vector<LevelShape> out;
  int h = latent_height, w = latent_width, stride = 8;
  for (int l = 0; l < 4; ++l) {
    h = (h + 1) / 2;
    w = (w + 1) / 2;
    stride *= 2;
    out.push_back({h, w, stride, config_.widths[l]});
  }
  return out;
}

ad::Var MockBackbone::encode_tape(ParamBinding& w, const ad::Var& pixels, int height, int width) const {
  const int hid = config_.encoder_hidden;
  ad::Var x = ad::im2col(pixels, height, width, 3, 4, 4, 0);
  x = ad::silu(ad::add_row(ad::matmul(x, w("enc.conv1")), w("enc.bias1")));
  x = ad::im2col(x, height / 4, width / 4, hid, 2, 2, 0);
  return ad::add_row(ad::matmul(x, w("enc.conv2")), w("enc.bias2"));
}

ad::Var MockBackbone::decode_tape(ParamBinding& w, const ad::Var& z, int height, int width) const {
  const int hid = config_.encoder_hidden;
  ad::Var x = ad::depth_to_space(ad::matmul(z, w("dec.proj1")), height, width, 2, hid);
  x = ad::silu(ad::add_row(x, w("dec.bias1")));
  x = ad::depth_to_space(ad::matmul(x, w("dec.proj2")), 2 * height, 2 * width, 4, 3);
  return ad::add_row(x, w("dec.bias2"));
}

LatentGrid MockBackbone::encode_image(const Image& image) const {
  if (image.height % 8 != 0 || image.width % 8 != 0 || image.height == 0 || image.width == 0) {
    throw DimensionError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         " is not a positive multiple of 8");
  }
  for (double v : image.pixels.values()) {
    if (!std::isfinite(v)) throw InputError("image holds non-finite pixels");
    if (v < 0.0 || v > 1.0) throw InputError("pixel values must lie in [0, 1]");
  }
  ad::Tape tape(false);
  ParamBinding w(tape, weights_, false);
  ad::Var z = encode_tape(w, tape.constant(image.pixels), image.height, image.width);
  return LatentGrid(image.height / 8, image.width / 8, 8, z.value());
}

Image MockBackbone::decode_latent(const LatentGrid& z) const {
  if (z.stride != 8) throw DimensionError("decoder expects a stride-8 latent");
  if (z.channels() != config_.latent_channels) throw DimensionError("latent channel count mismatch");
  ad::Tape tape(false);
  ParamBinding w(tape, weights_, false);
  ad::Var x = ad::clamp(decode_tape(w, tape.constant(z.data), z.height, z.width), 0.0, 1.0);
  Image out;
  out.height = 8 * z.height;
  out.width = 8 * z.width;
  out.pixels = x.value();
  return out;
}

Matrix MockBackbone::embed_token(const std::string& token) const {
  Matrix v = gaussian_matrix(1, config_.text_dim, derive_seed(config_.seed, {fnv1a(token)}));
  const double n = frobenius_norm(v);
  for (double& x : v.values()) x /= n;
  round_to_float(v);
  return v;
}

ad::Var MockBackbone::project_keys(ad::Tape& tape, int level, const ad::Var& tokens) const {
  if (level < 0 || level > 3) throw RangeError("denoiser level out of range");
  return ad::matmul(tokens, tape.constant(weights_.get(lvl("den.key", level))));
}

ad::Var MockBackbone::project_values(ad::Tape& tape, int level, const ad::Var& tokens) const {
  if (level < 0 || level > 3) throw RangeError("denoiser level out of range");
  return ad::matmul(tokens, tape.constant(weights_.get(lvl("den.value", level))));
}

DenoiseTrace MockBackbone::denoise_tape(ad::Tape& tape, const ad::Var& z, int height, int width, int t,
                                        const ad::Var& cond) const {
  if (z.rows() != height * width || z.cols() != config_.latent_channels) {
    throw DimensionError("denoiser input does not match the latent geometry");
  }
  if (cond.rows() == 0) throw InputError("empty conditioning");
  if (cond.cols() != config_.text_dim) throw DimensionError("conditioning width differs from text_dim");
  ParamBinding w(tape, weights_, false);
  DenoiseTrace tr;
  tr.levels = level_shapes(height, width);
  ad::Var x = z;
  int ph = height, pw = width, pc = config_.latent_channels;
  for (int l = 0; l < 4; ++l) {
    const LevelShape& s = tr.levels[l];
    ad::Var y = ad::im2col(x, ph, pw, pc, 3, 2, 1);
    y = ad::silu(ad::add_row(ad::matmul(y, w(lvl("den.conv", l))), w(lvl("den.bias", l))));
    if (l == 0) {
      y = ad::add_row(y, ad::matmul(tape.constant(time_embedding(t, s.channels)), w("den.time")));
    }
    ad::Var k = project_keys(tape, l, cond);
    ad::Var v = project_values(tape, l, cond);
    ad::Var attn = ad::softmax_rows(ad::scale(ad::matmul_nt(y, k), 1.0 / std::sqrt(s.channels)));
    y = ad::add(y, ad::matmul(attn, v));
    tr.features.push_back(y);
    tr.attention.push_back(attn);
    x = y;
    ph = s.height;
    pw = s.width;
    pc = s.channels;
  }
  ad::Var eps = ad::matmul(z, w("den.in"));
  for (int l = 0; l < 4; ++l) {
    const LevelShape& s = tr.levels[l];
    const std::vector<int> idx = nearest_index(s.height, s.width, height, width, 2 << l);
    eps = ad::add(eps, ad::gather_rows(ad::matmul(tr.features[l], w(lvl("den.out", l))), idx));
  }
  tr.noise_pred = eps;
  return tr;
}

std::vector<double> MockBackbone::train_autoencoder(const std::vector<Image>& images, int steps, double lr) {
  if (images.empty()) throw InputError("autoencoder training needs images");
  Adam opt(lr);
  std::vector<double> losses;
  const std::vector<std::string> trainable = {"enc.conv1", "enc.bias1", "enc.conv2", "enc.bias2",
                                              "dec.proj1", "dec.bias1", "dec.proj2", "dec.bias2"};
  for (int step = 0; step < steps; ++step) {
    Gradients total;
    double loss = 0.0;
    for (const Image& img : images) {
      ad::Tape tape;
      ParamBinding w(tape, weights_);
      ad::Var x = tape.constant(img.pixels);
      ad::Var rec = decode_tape(w, encode_tape(w, x, img.height, img.width), img.height / 8, img.width / 8);
      ad::Var l = ad::scale(ad::mean_all(ad::square(ad::sub(rec, x))), 1.0 / images.size());
      tape.backward(l);
      w.accumulate_into(total);
      loss += l.value()(0, 0);
    }
    Gradients g;
    for (const std::string& n : trainable) g[n] = std::move(total[n]);
    opt.step(weights_, g);
    losses.push_back(loss);
  }
  for (const std::string& n : trainable) round_to_float(weights_.get(n));
  return losses;
}

std::string MockBackbone::serialize() const {
  std::vector<NamedArray> arrays;
  Matrix cfg = Matrix::row_vector({static_cast<double>(config_.text_dim),
                                   static_cast<double>(config_.latent_channels),
                                   static_cast<double>(config_.encoder_hidden),
                                   static_cast<double>(config_.widths[0]), static_cast<double>(config_.widths[1]),
                                   static_cast<double>(config_.widths[2]), static_cast<double>(config_.widths[3])});
  arrays.push_back(array_from_matrix("config", cfg));
  arrays.push_back(array_from_blob("text_seed", std::to_string(config_.seed)));
  for (NamedArray& a : arrays_from_store(weights_)) arrays.push_back(std::move(a));
  return encode_dhb1(arrays);
}

MockBackbone MockBackbone::deserialize(const std::string& bytes) {
  const std::vector<NamedArray> arrays = decode_dhb1(bytes);
  const Matrix cfg = matrix_from_array(find_array(arrays, "config"));
  if (cfg.size() != 7) throw IoError("mock backbone config has the wrong length");
  MockConfig c;
  c.text_dim = static_cast<int>(cfg[0]);
  c.latent_channels = static_cast<int>(cfg[1]);
  c.encoder_hidden = static_cast<int>(cfg[2]);
  for (int l = 0; l < 4; ++l) c.widths[l] = static_cast<int>(cfg[3 + l]);
  c.seed = std::stoull(blob_from_array(find_array(arrays, "text_seed")));
  MockBackbone m = zeros(c);
  load_store(m.weights_, arrays);
  return m;
}

MockBackbone load_or_create_mock(const MockConfig& config, const std::string& path) {
  if (!path.empty() && std::filesystem::exists(path)) {
    MockBackbone m = MockBackbone::deserialize(read_file(path));
    const MockConfig& c = m.config();
    if (c.text_dim != config.text_dim || c.latent_channels != config.latent_channels ||
        c.encoder_hidden != config.encoder_hidden || c.widths != config.widths || c.seed != config.seed) {
      throw ContractError("cached backbone at " + path + " was built with a different configuration");
    }
    return m;
  }
  MockBackbone m(config);
  if (!path.empty()) write_file_atomic(path, m.serialize());
  return m;
}

// ---------------------------------------------------------------- resampling

Matrix bilinear_matrix(int in_h, int in_w, int out_h, int out_w) {
  Matrix r(out_h * out_w, in_h * in_w);
  auto taps = [](int o, int in, int out, int& i0, int& i1, double& f) {
    double s = (o + 0.5) * static_cast<double>(in) / out - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    i0 = static_cast<int>(s);
    i1 = std::min(i0 + 1, in - 1);
    f = s - i0;
  };
  for (int oy = 0; oy < out_h; ++oy) {
    int y0, y1;
    double fy;
    taps(oy, in_h, out_h, y0, y1, fy);
    for (int ox = 0; ox < out_w; ++ox) {
      int x0, x1;
      double fx;
      taps(ox, in_w, out_w, x0, x1, fx);
      const int row = oy * out_w + ox;
      r(row, y0 * in_w + x0) += (1 - fy) * (1 - fx);
      r(row, y0 * in_w + x1) += (1 - fy) * fx;
      r(row, y1 * in_w + x0) += fy * (1 - fx);
      r(row, y1 * in_w + x1) += fy * fx;
    }
  }
  return r;
}

std::vector<int> nearest_index(int coarse_h, int coarse_w, int fine_h, int fine_w, int factor) {
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(fine_h) * fine_w);
  for (int y = 0; y < fine_h; ++y)
    for (int x = 0; x < fine_w; ++x) {
      const int cy = std::min(y / factor, coarse_h - 1);
      const int cx = std::min(x / factor, coarse_w - 1);
      idx.push_back(cy * coarse_w + cx);
    }
  return idx;
}

ad::Var fpn_aggregate(ad::Tape& tape, const std::vector<ad::Var>& features,
                      const std::vector<LevelShape>& levels, const std::vector<ad::Var>& laterals) {
  static constexpr int kStrides[] = {16, 32, 64, 128};
  if (features.size() != 4 || levels.size() != 4 || laterals.size() != 4) {
    throw DimensionError("feature pyramid needs exactly four levels");
  }
  for (int l = 0; l < 4; ++l) {
    if (levels[l].stride != kStrides[l]) throw DimensionError("feature pyramid expects strides 16/32/64/128");
    if (features[l].rows() != levels[l].cells()) throw DimensionError("feature level geometry mismatch");
  }
  ad::Var p = ad::matmul(features[3], laterals[3]);
  for (int l = 2; l >= 0; --l) {
    const std::vector<int> up = nearest_index(levels[l + 1].height, levels[l + 1].width, levels[l].height,
                                              levels[l].width, 2);
    p = ad::add(ad::matmul(features[l], laterals[l]), ad::gather_rows(p, up));
  }
  Matrix down = bilinear_matrix(levels[0].height, levels[0].width, levels[1].height, levels[1].width);
  return ad::matmul(tape.constant(std::move(down)), p);
}

LatentGrid fpn_aggregate(const std::vector<LatentGrid>& features, const std::vector<Matrix>& laterals) {
  if (features.size() != 4 || laterals.size() != 4) throw DimensionError("feature pyramid needs exactly four levels");
  ad::Tape tape(false);
  std::vector<ad::Var> f, lat;
  std::vector<LevelShape> levels;
  for (int l = 0; l < 4; ++l) {
    f.push_back(tape.constant(features[l].data));
    lat.push_back(tape.constant(laterals[l]));
    levels.push_back({features[l].height, features[l].width, features[l].stride, features[l].channels()});
  }
  ad::Var out = fpn_aggregate(tape, f, levels, lat);
  return LatentGrid(levels[1].height, levels[1].width, 32, out.value());
}

}  // namespace dhoi
