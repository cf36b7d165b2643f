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

#include "dhoi/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dhoi/container.hpp"
#include "dhoi/errors.hpp"
#include "dhoi/kernels.hpp"
#include "dhoi/rng.hpp"
#include "json.hpp"

namespace dhoi {
namespace {

using json = nlohmann::ordered_json;

Matrix mean_rows(const Matrix& m) {
  Matrix out(1, m.cols());
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) out(0, c) += m(r, c) / m.rows();
  return out;
}

Matrix stack_rows(const std::vector<Matrix>& rows, int cols) {
  Matrix out(static_cast<int>(rows.size()), cols);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int c = 0; c < cols; ++c) out(static_cast<int>(r), c) = rows[r](0, c);
  return out;
}

std::string spaced(const std::string& name) {
  std::string s = name;
  std::replace(s.begin(), s.end(), '_', ' ');
  return s;
}

double cosine(const double* a, const double* b, int n) {
  double ab = 0, aa = 0, bb = 0;
  for (int i = 0; i < n; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

std::array<double, 4> row4(const Matrix& m, int r) { return {m(r, 0), m(r, 1), m(r, 2), m(r, 3)}; }

// Generalized IoU of rows of two n x 4 cxcywh matrices (n x 1).
ad::Var giou_rows(const ad::Var& a, const ad::Var& b) {
  auto corners = [](const ad::Var& x, ad::Var& x1, ad::Var& y1, ad::Var& x2, ad::Var& y2) {
    ad::Var cx = ad::slice_cols(x, 0, 1), cy = ad::slice_cols(x, 1, 1);
    ad::Var hw = ad::scale(ad::slice_cols(x, 2, 1), 0.5), hh = ad::scale(ad::slice_cols(x, 3, 1), 0.5);
    x1 = ad::sub(cx, hw);
    x2 = ad::add(cx, hw);
    y1 = ad::sub(cy, hh);
    y2 = ad::add(cy, hh);
  };
  ad::Var ax1, ay1, ax2, ay2, bx1, by1, bx2, by2;
  corners(a, ax1, ay1, ax2, ay2);
  corners(b, bx1, by1, bx2, by2);
  constexpr double kBig = 1e300;
  ad::Var iw = ad::clamp(ad::sub(ad::minimum(ax2, bx2), ad::maximum(ax1, bx1)), 0.0, kBig);
  ad::Var ih = ad::clamp(ad::sub(ad::minimum(ay2, by2), ad::maximum(ay1, by1)), 0.0, kBig);
  ad::Var inter = ad::mul(iw, ih);
  ad::Var area_a = ad::mul(ad::sub(ax2, ax1), ad::sub(ay2, ay1));
  ad::Var area_b = ad::mul(ad::sub(bx2, bx1), ad::sub(by2, by1));
  ad::Var uni = ad::sub(ad::add(area_a, area_b), inter);
  ad::Var cw = ad::sub(ad::maximum(ax2, bx2), ad::minimum(ax1, bx1));
  ad::Var ch = ad::sub(ad::maximum(ay2, by2), ad::minimum(ay1, by1));
  ad::Var encl = ad::mul(cw, ch);
  return ad::sub(ad::div(inter, uni), ad::div(ad::sub(encl, uni), encl));
}

// Removes each channel's mean over the grid and scales the level to unit
// variance. The frozen features carry large image-independent offsets that
// would otherwise drown the image content.
Matrix standardize_level(const Matrix& m) {
  Matrix out = m;
  for (int c = 0; c < m.cols(); ++c) {
    double mu = 0.0;
    for (int r = 0; r < m.rows(); ++r) mu += m(r, c);
    mu /= m.rows();
    for (int r = 0; r < m.rows(); ++r) out(r, c) -= mu;
  }
  double var = 0.0;
  for (double v : out.values()) var += v * v;
  var /= std::max<std::size_t>(1, out.size());
  const double inv = 1.0 / std::sqrt(var + 1e-6);
  for (double& v : out.values()) v *= inv;
  return out;
}

Matrix random_init(std::mt19937_64& rng, int rows, int cols, double std) {
  Matrix m = gaussian_matrix(rows, cols, rng, std);
  round_to_float(m);
  return m;
}

json config_json(const DetectorConfig& c) {
  json j;
  j["d_model"] = c.d_model;
  j["ffn_dim"] = c.ffn_dim;
  j["layers"] = c.layers;
  j["n_queries"] = c.n_queries;
  j["mask_grid"] = c.mask_grid;
  j["tau_init"] = c.tau_init;
  j["lambda_rel"] = c.lambda_rel;
  j["w_l1"] = c.w_l1;
  j["w_giou"] = c.w_giou;
  j["short_side"] = c.short_side;
  j["long_max"] = c.long_max;
  j["feature_timestep"] = c.feature_timestep;
  j["neutral_prompt"] = c.neutral_prompt;
  j["seed"] = c.seed;
  return j;
}

DetectorConfig config_from_json(const json& j) {
  DetectorConfig c;
  c.d_model = j.at("d_model");
  c.ffn_dim = j.at("ffn_dim");
  c.layers = j.at("layers");
  c.n_queries = j.at("n_queries");
  c.mask_grid = j.at("mask_grid");
  c.tau_init = j.at("tau_init");
  c.lambda_rel = j.at("lambda_rel");
  c.w_l1 = j.at("w_l1");
  c.w_giou = j.at("w_giou");
  c.short_side = j.at("short_side");
  c.long_max = j.at("long_max");
  c.feature_timestep = j.at("feature_timestep");
  c.neutral_prompt = j.at("neutral_prompt");
  c.seed = j.at("seed");
  return c;
}

}  // namespace

// ---------------------------------------------------------------- prompt bank

int HOIPromptBank::object_index(const std::string& name) const {
  const auto it = std::find(object_names.begin(), object_names.end(), name);
  return it == object_names.end() ? -1 : static_cast<int>(it - object_names.begin());
}

int HOIPromptBank::action_index(const std::string& name) const {
  const auto it = std::find(actions.begin(), actions.end(), name);
  return it == actions.end() ? -1 : static_cast<int>(it - actions.begin());
}

HOIPromptBank build_prompt_bank(const Backbone& backbone, const RelationTable& table,
                                const std::vector<std::string>& objects, const std::vector<HoiClass>& triplets) {
  HOIPromptBank bank;
  const int d = backbone.text_dim();
  if (table.size() > 0 && table.dim() != d) throw DimensionError("relation table width differs from text encoder");
  bank.object_names = objects;
  bank.actions = table.actions();
  bank.relations = table.vectors();
  std::vector<Matrix> hoi_rows, obj_rows;
  for (const auto& o : objects) obj_rows.push_back(mean_rows(backbone.encode_text(spaced(o)).tokens));
  for (const HoiClass& h : triplets) {
    table.index_of(h.action);
    if (std::find(objects.begin(), objects.end(), h.object) == objects.end()) {
      throw LookupError("unknown object '" + h.object + "'");
    }
    if (std::find(bank.hoi_classes.begin(), bank.hoi_classes.end(), h) != bank.hoi_classes.end()) {
      bank.warnings.push_back("duplicate triplet (" + h.action + ", " + h.object + ") ignored");
      continue;
    }
    bank.hoi_classes.push_back(h);
    const std::string text = make_placeholder(h.action) + " " + spaced(h.object);
    hoi_rows.push_back(mean_rows(backbone.encode_text(text, table).tokens));
  }
  bank.hoi = stack_rows(hoi_rows, d);
  bank.objects = stack_rows(obj_rows, d);
  bank.human = mean_rows(backbone.encode_text("person").tokens);
  return bank;
}

// ---------------------------------------------------------------- features

void DetectorConfig::validate() const {
  if (d_model <= 0 || ffn_dim <= 0 || layers < 0 || n_queries <= 0 || mask_grid <= 0) {
    throw RangeError("detector sizes must be positive");
  }
  if (!(tau_init >= 0.01 && tau_init <= 1.0)) throw RangeError("tau_init must lie in [0.01, 1]");
  if (lambda_rel < 0 || w_l1 < 0 || w_giou < 0) throw RangeError("loss weights must be >= 0");
  if (short_side < 8 || long_max < short_side) throw RangeError("resize sides out of range");
}

std::vector<LevelShape> ImageFeatures::shapes() const {
  std::vector<LevelShape> s;
  for (const auto& l : levels) s.push_back({l.height, l.width, l.stride, l.channels()});
  return s;
}

ImageFeatures extract_features(const Backbone& backbone, const Image& image, const DetectorConfig& config) {
  const ResizePlan plan = plan_resize(image.height, image.width, config.short_side, config.long_max);
  const Image resized = (plan.height == image.height && plan.width == image.width)
                            ? image
                            : resize_bilinear(image, plan.height, plan.width);
  const LatentGrid z = backbone.encode_image(resized);
  const DenoiserOutput out =
      backbone.denoise_once(z, config.feature_timestep, backbone.encode_text(config.neutral_prompt));
  ImageFeatures f;
  f.levels = out.features;
  f.image_height = resized.height;
  f.image_width = resized.width;
  return f;
}

ad::Var attention_average(ad::Tape& tape, const Backbone& backbone, const ImageFeatures& features,
                          const ad::Var& tokens) {
  const std::vector<LevelShape> shapes = features.shapes();
  if (shapes.size() != 4) throw DimensionError("expected four feature levels");
  const LevelShape& target = shapes[1];
  ad::Var acc;
  for (int l = 0; l < 4; ++l) {
    ad::Var k = backbone.project_keys(tape, l, tokens);
    ad::Var z = tape.constant(features.levels[l].data);
    ad::Var a = ad::softmax_rows(ad::scale(ad::matmul_nt(z, k), 1.0 / std::sqrt(double(shapes[l].channels))));
    ad::Var up = ad::matmul(
        tape.constant(bilinear_matrix(shapes[l].height, shapes[l].width, target.height, target.width)), a);
    up = ad::scale(up, 0.25);
    acc = acc.valid() ? ad::add(acc, up) : up;
  }
  return acc;
}

ConditionedFeatures condition_features(const Backbone& backbone, const ImageFeatures& features,
                                       const HOIPromptBank& bank) {
  if (bank.n_hoi() == 0) throw ContractError("prompt bank is empty");
  const std::vector<LevelShape> shapes = features.shapes();
  if (shapes.size() != 4) throw DimensionError("expected four feature levels");
  ad::Tape tape(false);
  ad::Var p_r = tape.constant(bank.hoi);
  ConditionedFeatures out;
  Matrix m_r(shapes[1].cells(), bank.n_hoi());
  for (int l = 0; l < 4; ++l) {
    const LatentGrid& z = features.levels[l];
    ad::Var k = backbone.project_keys(tape, l, p_r);
    ad::Var v = backbone.project_values(tape, l, p_r);
    ad::Var zv = tape.constant(z.data);
    ad::Var a = ad::softmax_rows(ad::scale(ad::matmul_nt(zv, k), 1.0 / std::sqrt(double(z.channels()))));
    out.levels.emplace_back(z.height, z.width, z.stride, ad::add(zv, ad::matmul(a, v)).value());
    out.m_r_levels.push_back(a.value());
    const Matrix up =
        kernels::matmul(bilinear_matrix(z.height, z.width, shapes[1].height, shapes[1].width), a.value());
    for (std::size_t i = 0; i < m_r.size(); ++i) m_r[i] += 0.25 * up[i];
  }
  out.m_r = std::move(m_r);

  // Human and object maps read the untouched features.
  const int nr = bank.n_hoi(), no = bank.n_objects();
  Matrix tokens(nr + 1 + no, bank.hoi.cols());
  for (int r = 0; r < nr; ++r)
    for (int c = 0; c < tokens.cols(); ++c) tokens(r, c) = bank.hoi(r, c);
  for (int c = 0; c < tokens.cols(); ++c) tokens(nr, c) = bank.human(0, c);
  for (int r = 0; r < no; ++r)
    for (int c = 0; c < tokens.cols(); ++c) tokens(nr + 1 + r, c) = bank.objects(r, c);
  const Matrix a = attention_average(tape, backbone, features, tape.constant(tokens)).value();
  out.m_h = Matrix(a.rows(), 1);
  out.m_o = Matrix(a.rows(), 1);
  for (int r = 0; r < a.rows(); ++r) {
    out.m_h(r, 0) = a(r, nr);
    for (int o = 0; o < no; ++o) out.m_o(r, 0) += a(r, nr + 1 + o);
  }
  return out;
}

Pairing pair_queries(const Matrix& q_r, const Matrix& q_h, const Matrix& q_o) {
  if (!q_h.same_shape(q_o)) throw DimensionError("human and object queries differ in shape");
  if (q_r.cols() != q_h.cols()) throw DimensionError("query widths differ");
  const int d = q_h.cols();
  Matrix cost(q_r.rows(), q_h.rows());
  std::vector<double> pair(d);
  for (int i = 0; i < q_h.rows(); ++i) {
    for (int e = 0; e < d; ++e) pair[e] = q_h(i, e) + q_o(i, e);
    for (int k = 0; k < q_r.rows(); ++k) cost(k, i) = -cosine(q_r.data() + std::size_t(k) * d, pair.data(), d);
  }
  const Assignment a = solve_assignment(cost);
  Pairing p;
  p.slot_to_hoi.assign(q_h.rows(), -1);
  for (int k = 0; k < q_r.rows(); ++k)
    if (a.row_to_col[k] >= 0) p.slot_to_hoi[a.row_to_col[k]] = k;
  p.cost = a.cost;
  return p;
}

Matrix sine_position(int height, int width, int d) {
  Matrix pe(height * width, d);
  const int half = d / 2;
  const int pairs = half / 2;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double ny = (y + 0.5) / height * 2.0 * M_PI, nx = (x + 0.5) / width * 2.0 * M_PI;
      for (int k = 0; k < pairs; ++k) {
        const double f = std::pow(10000.0, -static_cast<double>(k) / std::max(1, pairs));
        const int row = y * width + x;
        pe(row, 2 * k) = std::sin(ny * f);
        pe(row, 2 * k + 1) = std::cos(ny * f);
        pe(row, half + 2 * k) = std::sin(nx * f);
        pe(row, half + 2 * k + 1) = std::cos(nx * f);
      }
    }
  return pe;
}

// ---------------------------------------------------------------- boxes

Box cxcywh_to_box(const std::array<double, 4>& b) {
  return Box{b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2};
}

std::array<double, 4> box_to_cxcywh(const Box& b, double width, double height) {
  return {(b.x1 + b.x2) / 2 / width, (b.y1 + b.y2) / 2 / height, b.width() / width, b.height() / height};
}

double giou_safe(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  const double encl = (std::max(a.x2, b.x2) - std::min(a.x1, b.x1)) * (std::max(a.y2, b.y2) - std::min(a.y1, b.y1));
  if (!(uni > 0.0) || !(encl > 0.0)) return -1.0;
  return inter / uni - (encl - uni) / encl;
}

double total_loss(const LossParts& p, double lambda_rel) {
  const std::pair<const char*, double> parts[] = {{"L_HOI", p.hoi}, {"L_Ins", p.ins}, {"L_Det", p.det}, {"L_Rel", p.rel}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite ") + name);
  return p.hoi + p.ins + p.det + lambda_rel * p.rel;
}

// ---------------------------------------------------------------- detector

Detector::Detector(const DetectorConfig& config, const Backbone& backbone, const HOIPromptBank& bank)
    : config_(config), n_hoi_(bank.n_hoi()), n_objects_(bank.n_objects()), text_dim_(backbone.text_dim()) {
  config_.validate();
  if (n_hoi_ == 0 || n_objects_ == 0) throw ContractError("detector needs at least one HOI class and object");
  for (const LevelShape& s : backbone.level_shapes(8, 8)) level_channels_.push_back(s.channels);
  std::mt19937_64 rng(derive_seed(config.seed, {0x646574}));
  const int d = config.d_model, f = config.ffn_dim, g2 = config.mask_grid * config.mask_grid;
  const double sd = 1.0 / std::sqrt(double(d));
  for (int l = 0; l < 4; ++l) {
    params_.add("fpn.lat" + std::to_string(l),
                random_init(rng, level_channels_[l], d, 1.0 / std::sqrt(double(level_channels_[l]))));
  }
  params_.add("qmask.h", random_init(rng, config.n_queries, g2, 1.0));
  params_.add("qmask.o", random_init(rng, config.n_queries, g2, 1.0));
  for (const char* dec : {"ins", "hoi"}) {
    for (int i = 0; i < config.layers; ++i) {
      const std::string p = std::string(dec) + "." + std::to_string(i) + ".";
      for (const char* ln : {"ln1", "ln2", "ln3"}) {
        params_.add(p + ln + ".g", Matrix(1, d, 1.0));
        params_.add(p + ln + ".b", Matrix(1, d));
      }
      for (const char* m : {"sa.q", "sa.k", "sa.v", "sa.o", "ca.q", "ca.k", "ca.v", "ca.o"}) {
        params_.add(p + m, random_init(rng, d, d, sd));
      }
      params_.add(p + "ff.w1", random_init(rng, d, f, sd));
      params_.add(p + "ff.b1", Matrix(1, f));
      params_.add(p + "ff.w2", random_init(rng, f, d, 1.0 / std::sqrt(double(f))));
      params_.add(p + "ff.b2", Matrix(1, d));
    }
  }
  for (const auto& [name, classes] : {std::pair<std::string, int>{"head.hoi", n_hoi_}, {"head.obj", n_objects_}}) {
    params_.add(name + ".ln.g", Matrix(1, d, 1.0));
    params_.add(name + ".ln.b", Matrix(1, d));
    params_.add(name + ".proj", random_init(rng, text_dim_, d, 1.0 / std::sqrt(double(text_dim_))));
    params_.add(name + ".bg", random_init(rng, 1, text_dim_, 1.0 / std::sqrt(double(text_dim_))));
    Matrix tau(1, 1, std::log(config.tau_init));
    round_to_float(tau);
    params_.add(name + ".log_tau", tau);
    params_.add(name + ".cls", random_init(rng, d, classes + 1, sd));
    params_.add(name + ".cls_b", Matrix(1, classes + 1));
  }
  for (const char* b : {"box.h", "box.o"}) {
    const std::string p = b;
    params_.add(p + ".w1", random_init(rng, d, d, sd));
    params_.add(p + ".b1", Matrix(1, d));
    params_.add(p + ".w2", random_init(rng, d, 4, 0.1 * sd));
    params_.add(p + ".b2", Matrix(1, 4));
  }
}

ad::Var Detector::decoder(ParamBinding& w, const std::string& prefix, ad::Var x, const ad::Var& memory,
                          const ad::Var& keys, ad::Var* cross_attention) const {
  const double inv = 1.0 / std::sqrt(double(config_.d_model));
  ad::Var last;
  auto attend = [&](const ad::Var& q, const ad::Var& k, const ad::Var& v) {
    last = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), inv));
    return ad::matmul(last, v);
  };
  for (int i = 0; i < config_.layers; ++i) {
    const std::string p = prefix + "." + std::to_string(i) + ".";
    ad::Var h = ad::layer_norm_rows(x, w(p + "ln1.g"), w(p + "ln1.b"));
    x = ad::add(x, ad::matmul(attend(ad::matmul(h, w(p + "sa.q")), ad::matmul(h, w(p + "sa.k")),
                                     ad::matmul(h, w(p + "sa.v"))),
                              w(p + "sa.o")));
    h = ad::layer_norm_rows(x, w(p + "ln2.g"), w(p + "ln2.b"));
    x = ad::add(x, ad::matmul(attend(ad::matmul(h, w(p + "ca.q")), ad::matmul(keys, w(p + "ca.k")),
                                     ad::matmul(memory, w(p + "ca.v"))),
                              w(p + "ca.o")));
    h = ad::layer_norm_rows(x, w(p + "ln3.g"), w(p + "ln3.b"));
    ad::Var ff = ad::gelu(ad::add_row(ad::matmul(h, w(p + "ff.w1")), w(p + "ff.b1")));
    x = ad::add(x, ad::add_row(ad::matmul(ff, w(p + "ff.w2")), w(p + "ff.b2")));
    if (cross_attention) *cross_attention = last;
  }
  return x;
}

void Detector::head(ParamBinding& w, const std::string& prefix, const ad::Var& q, const Matrix& prompts,
                    ad::Var& sim, ad::Var& lin) const {
  ad::Tape& tape = w.tape();
  ad::Var h = ad::layer_norm_rows(q, w(prefix + ".ln.g"), w(prefix + ".ln.b"));
  const ad::Var parts[] = {tape.constant(prompts), w(prefix + ".bg")};
  ad::Var e = ad::matmul(ad::concat_rows(parts), w(prefix + ".proj"));
  ad::Var cos = ad::matmul_nt(ad::l2_normalize_rows(h), ad::l2_normalize_rows(e));
  ad::Var tau = ad::clamp(ad::exp(w(prefix + ".log_tau")), 0.01, 1.0);
  sim = ad::div_scalar(cos, tau);
  lin = ad::add_row(ad::matmul(h, w(prefix + ".cls")), w(prefix + ".cls_b"));
}

ForwardOutput Detector::forward(ParamBinding& w, const ImageFeatures& features, const ConditionedFeatures& cond,
                                const HOIPromptBank& bank) const {
  if (!ready()) throw StateError("detector has no weights");
  if (bank.n_hoi() != n_hoi_ || bank.n_objects() != n_objects_) {
    throw ContractError("prompt bank does not match the detector's class counts");
  }
  ad::Tape& tape = w.tape();
  const std::vector<LevelShape> shapes = features.shapes();
  const LevelShape& s32 = shapes.at(1);
  const int nq = config_.n_queries, d = config_.d_model, g = config_.mask_grid;

  ForwardOutput out;
  std::vector<ad::Var> lv, lat;
  for (int l = 0; l < 4; ++l) {
    lv.push_back(tape.constant(standardize_level(cond.levels.at(l).data)));
    lat.push_back(w("fpn.lat" + std::to_string(l)));
  }
  out.z32 = fpn_aggregate(tape, lv, shapes, lat);

  int fb = 0;
  out.q_hat_r = ad::mask_pool(out.z32, tape.constant(cond.m_r), &fb);
  out.pool_fallbacks += fb;
  ad::Var up = tape.constant(bilinear_matrix(g, g, s32.height, s32.width));
  ad::Var wh = ad::mul_col(ad::matmul_nt(up, ad::sigmoid(w("qmask.h"))), tape.constant(cond.m_h));
  ad::Var wo = ad::mul_col(ad::matmul_nt(up, ad::sigmoid(w("qmask.o"))), tape.constant(cond.m_o));
  out.q_hat_h = ad::mask_pool(out.z32, wh, &fb);
  out.pool_fallbacks += fb;
  out.q_hat_o = ad::mask_pool(out.z32, wo, &fb);
  out.pool_fallbacks += fb;

  out.pairing = pair_queries(out.q_hat_r.value(), out.q_hat_h.value(), out.q_hat_o.value());
  std::vector<int> idx(nq);
  for (int i = 0; i < nq; ++i) idx[i] = out.pairing.slot_to_hoi[i] >= 0 ? out.pairing.slot_to_hoi[i] : n_hoi_;
  const ad::Var padded_parts[] = {out.q_hat_r, tape.constant(Matrix(1, d))};
  ad::Var hoi_in = ad::add(ad::scale(ad::add(out.q_hat_h, out.q_hat_o), 0.5),
                           ad::gather_rows(ad::concat_rows(padded_parts), idx));

  ad::Var keys = ad::add(out.z32, tape.constant(sine_position(s32.height, s32.width, d)));
  const ad::Var ins_parts[] = {out.q_hat_h, out.q_hat_o};
  ad::Var ins_attn;
  ad::Var ins = decoder(w, "ins", ad::concat_rows(ins_parts), out.z32, keys, &ins_attn);
  out.q_tilde_h = ad::slice_rows(ins, 0, nq);
  out.q_tilde_o = ad::slice_rows(ins, nq, nq);
  out.q_tilde_r = decoder(w, "hoi", hoi_in, out.z32, keys, nullptr);

  // Box centres are offsets from the centroid of each instance query's last
  // cross-attention, in logit space; without decoder layers the reference is
  // the image centre.
  ad::Var ref_h, ref_o;
  if (ins_attn.valid()) {
    Matrix centers(s32.cells(), 4);
    for (int y = 0; y < s32.height; ++y)
      for (int x = 0; x < s32.width; ++x) {
        centers(y * s32.width + x, 0) = (x + 0.5) / s32.width;
        centers(y * s32.width + x, 1) = (y + 0.5) / s32.height;
      }
    ad::Var c = ad::clamp(ad::matmul(ins_attn, tape.constant(centers)), 1e-4, 1.0 - 1e-4);
    ad::Var logit = ad::sub(ad::log(c), ad::log(ad::add_scalar(ad::neg(c), 1.0)));
    std::vector<ad::Var> cols{ad::slice_cols(logit, 0, 2), tape.constant(Matrix(2 * nq, 2))};
    ad::Var ref = ad::concat_cols(cols);
    ref_h = ad::slice_rows(ref, 0, nq);
    ref_o = ad::slice_rows(ref, nq, nq);
  }

  head(w, "head.hoi", out.q_tilde_r, bank.hoi, out.hoi_sim, out.hoi_lin);
  head(w, "head.obj", out.q_tilde_o, bank.objects, out.obj_sim, out.obj_lin);
  auto box = [&](const std::string& p, const ad::Var& q, const ad::Var& ref) {
    ad::Var h = ad::gelu(ad::add_row(ad::matmul(q, w(p + ".w1")), w(p + ".b1")));
    ad::Var raw = ad::add_row(ad::matmul(h, w(p + ".w2")), w(p + ".b2"));
    return ad::sigmoid(ref.valid() ? ad::add(raw, ref) : raw);
  };
  out.human_boxes = box("box.h", out.q_tilde_h, ref_h);
  out.object_boxes = box("box.o", out.q_tilde_o, ref_o);
  return out;
}

Matrix Detector::match_cost(const ForwardOutput& out, const std::vector<TargetPair>& targets) const {
  Matrix pr, po;
  kernels::softmax_rows(out.hoi_sim.value(), pr);
  kernels::softmax_rows(out.obj_sim.value(), po);
  const Matrix& hb = out.human_boxes.value();
  const Matrix& ob = out.object_boxes.value();
  const int nq = hb.rows();
  Matrix cost(nq, static_cast<int>(targets.size()));
  for (int i = 0; i < nq; ++i) {
    const auto ph = row4(hb, i), pobj = row4(ob, i);
    for (std::size_t g = 0; g < targets.size(); ++g) {
      const TargetPair& t = targets[g];
      double l1 = 0.0;
      for (int k = 0; k < 4; ++k) l1 += std::abs(ph[k] - t.human[k]) + std::abs(pobj[k] - t.object[k]);
      const double gi = giou_safe(cxcywh_to_box(ph), cxcywh_to_box(t.human)) +
                        giou_safe(cxcywh_to_box(pobj), cxcywh_to_box(t.object));
      cost(i, static_cast<int>(g)) =
          -pr(i, t.hoi) - po(i, t.object_class) + config_.w_l1 * l1 + config_.w_giou * (2.0 - gi);
    }
  }
  return cost;
}

std::vector<int> Detector::match(const ForwardOutput& out, const std::vector<TargetPair>& targets) const {
  return solve_assignment(match_cost(out, targets)).row_to_col;
}

ad::Var Detector::hoi_loss(const ForwardOutput& out, const std::vector<TargetPair>& targets,
                           const std::vector<int>& slot_to_gt) const {
  std::vector<int> y(slot_to_gt.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = slot_to_gt[i] >= 0 ? targets[slot_to_gt[i]].hoi : n_hoi_;
  return ad::add(ad::cross_entropy(out.hoi_sim, y), ad::cross_entropy(out.hoi_lin, y));
}

ad::Var Detector::instance_loss(const ForwardOutput& out, const std::vector<TargetPair>& targets,
                                const std::vector<int>& slot_to_gt) const {
  std::vector<int> y(slot_to_gt.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = slot_to_gt[i] >= 0 ? targets[slot_to_gt[i]].object_class : n_objects_;
  }
  return ad::add(ad::cross_entropy(out.obj_sim, y), ad::cross_entropy(out.obj_lin, y));
}

ad::Var Detector::detection_loss(const ForwardOutput& out, const std::vector<TargetPair>& targets,
                                 const std::vector<int>& slot_to_gt) const {
  ad::Tape& tape = *out.human_boxes.tape();
  std::vector<int> slots;
  Matrix gh(0, 4), go(0, 4);
  std::vector<double> vh, vo;
  for (std::size_t i = 0; i < slot_to_gt.size(); ++i) {
    if (slot_to_gt[i] < 0) continue;
    slots.push_back(static_cast<int>(i));
    const TargetPair& t = targets[slot_to_gt[i]];
    vh.insert(vh.end(), t.human.begin(), t.human.end());
    vo.insert(vo.end(), t.object.begin(), t.object.end());
  }
  if (slots.empty()) return tape.constant(Matrix(1, 1));
  const int n = static_cast<int>(slots.size());
  ad::Var th = tape.constant(Matrix(n, 4, vh)), to = tape.constant(Matrix(n, 4, vo));
  ad::Var ph = ad::gather_rows(out.human_boxes, slots), po = ad::gather_rows(out.object_boxes, slots);
  ad::Var l1 = ad::add(ad::sum_all(ad::abs(ad::sub(ph, th))), ad::sum_all(ad::abs(ad::sub(po, to))));
  ad::Var gi = ad::add(ad::sum_all(giou_rows(ph, th)), ad::sum_all(giou_rows(po, to)));
  ad::Var loss = ad::add(ad::scale(l1, config_.w_l1), ad::scale(ad::add_scalar(ad::neg(gi), 2.0 * n), config_.w_giou));
  return ad::scale(loss, 1.0 / std::max<std::size_t>(1, targets.size()));
}

ad::Var Detector::relation_loss(ad::Tape& tape, const Backbone& backbone, const ImageFeatures& features,
                                const ForwardOutput& out, const ad::Var& table,
                                const std::vector<TargetPair>& targets, const std::vector<int>& slot_to_gt) const {
  const Matrix& qr = out.q_tilde_r.value();
  const Matrix& qo = out.q_tilde_o.value();
  const int d = qr.cols();
  std::map<int, std::pair<Matrix, int>> per_action;
  for (std::size_t i = 0; i < slot_to_gt.size(); ++i) {
    if (slot_to_gt[i] < 0) continue;
    auto& [sum, count] = per_action.try_emplace(targets[slot_to_gt[i]].action, Matrix(1, d), 0).first->second;
    for (int e = 0; e < d; ++e) sum(0, e) += qr(static_cast<int>(i), e) - qo(static_cast<int>(i), e);
    ++count;
  }
  if (per_action.empty()) return tape.constant(Matrix(1, 1));
  ad::Var m_a = attention_average(tape, backbone, features, table);
  ad::Var q_hat_a = ad::mask_pool(tape.constant(out.z32.value()), m_a);
  ad::Var loss;
  for (auto& [action, entry] : per_action) {
    Matrix target = entry.first;
    for (double& v : target.values()) v /= entry.second;
    const double norm = frobenius_norm(target);
    if (!(norm > 0.0)) throw NormalizationError("decoded relation query has zero norm");
    for (double& v : target.values()) v /= norm;
    const int row[] = {action};
    ad::Var diff = ad::sub(ad::l2_normalize_rows(ad::gather_rows(q_hat_a, row)), tape.constant(target));
    ad::Var term = ad::sum_all(ad::square(diff));
    loss = loss.valid() ? ad::add(loss, term) : term;
  }
  return loss;
}

std::string Detector::serialize(const RelationTable& table, const Vocab& vocab) const {
  if (!ready()) throw StateError("detector has no weights");
  std::vector<NamedArray> arrays = arrays_from_store(params_, "w.");
  Matrix meta(1, 7);
  meta(0, 0) = n_hoi_;
  meta(0, 1) = n_objects_;
  meta(0, 2) = text_dim_;
  for (int l = 0; l < 4; ++l) meta(0, 3 + l) = level_channels_[l];
  arrays.push_back(array_from_matrix("meta", meta));
  arrays.push_back(array_from_blob("config", config_json(config_).dump()));
  arrays.push_back(array_from_blob("relations", table.encode()));
  json v;
  v["actions"] = vocab.actions;
  v["objects"] = vocab.objects;
  v["hois"] = json::array();
  for (const auto& h : vocab.hois) v["hois"].push_back({h.action, h.object});
  arrays.push_back(array_from_blob("vocab", v.dump()));
  return encode_dhb1(arrays);
}

Detector::Loaded Detector::deserialize(const std::string& bytes) {
  const std::vector<NamedArray> arrays = decode_dhb1(bytes);
  Loaded out;
  Detector& det = out.detector;
  try {
    det.config_ = config_from_json(json::parse(blob_from_array(find_array(arrays, "config"))));
    const json v = json::parse(blob_from_array(find_array(arrays, "vocab")));
    out.vocab.actions = v.at("actions").get<std::vector<std::string>>();
    out.vocab.objects = v.at("objects").get<std::vector<std::string>>();
    for (const auto& h : v.at("hois")) out.vocab.hois.push_back({h.at(0).get<std::string>(), h.at(1).get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("detector checkpoint metadata: ") + e.what());
  }
  const Matrix meta = matrix_from_array(find_array(arrays, "meta"));
  det.n_hoi_ = static_cast<int>(meta(0, 0));
  det.n_objects_ = static_cast<int>(meta(0, 1));
  det.text_dim_ = static_cast<int>(meta(0, 2));
  for (int l = 0; l < 4; ++l) det.level_channels_.push_back(static_cast<int>(meta(0, 3 + l)));
  out.table = RelationTable::decode(blob_from_array(find_array(arrays, "relations")));
  for (const NamedArray& a : arrays) {
    if (a.name.rfind("w.", 0) == 0) det.params_.add(a.name.substr(2), matrix_from_array(a));
  }
  return out;
}

// ---------------------------------------------------------------- prediction

std::vector<Detection> predict_features(const Detector& detector, const Backbone& backbone,
                                        const HOIPromptBank& bank, const ImageFeatures& features,
                                        double orig_width, double orig_height, const PredictOptions& options) {
  if (!detector.ready()) throw StateError("detector has no weights; train or load a checkpoint first");
  if (options.top_k <= 0) return {};
  const ConditionedFeatures cond = condition_features(backbone, features, bank);
  ad::Tape tape(false);
  ParamBinding w(tape, detector.params(), false);
  const ForwardOutput out = detector.forward(w, features, cond, bank);
  Matrix pr, po;
  kernels::softmax_rows(out.hoi_sim.value(), pr);
  kernels::softmax_rows(out.obj_sim.value(), po);
  const Matrix& hb = out.human_boxes.value();
  const Matrix& ob = out.object_boxes.value();
  for (const Matrix* m : std::initializer_list<const Matrix*>{&pr, &po, &hb, &ob})
    for (double v : m->values())
      if (!std::isfinite(v)) throw NumericalError("detector produced non-finite scores or boxes");

  struct Candidate {
    double score;
    int slot, cls;
  };
  std::vector<Candidate> cand;
  for (int i = 0; i < pr.rows(); ++i)
    for (int c = 0; c < bank.n_hoi(); ++c)
      if (pr(i, c) > options.score_threshold) cand.push_back({pr(i, c), i, c});
  std::stable_sort(cand.begin(), cand.end(), [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
  if (static_cast<int>(cand.size()) > options.top_k) cand.resize(options.top_k);

  auto to_pixels = [&](const std::array<double, 4>& b) {
    Box x = cxcywh_to_box(b);
    x.x1 = std::clamp(x.x1, 0.0, 1.0) * orig_width;
    x.x2 = std::clamp(x.x2, 0.0, 1.0) * orig_width;
    x.y1 = std::clamp(x.y1, 0.0, 1.0) * orig_height;
    x.y2 = std::clamp(x.y2, 0.0, 1.0) * orig_height;
    return x;
  };
  std::vector<Detection> dets;
  for (const Candidate& c : cand) {
    Detection d;
    d.human_box = to_pixels(row4(hb, c.slot));
    d.object_box = to_pixels(row4(ob, c.slot));
    d.hoi_class = c.cls;
    d.hoi_score = c.score;
    d.object_class = bank.hoi_classes[c.cls].object;
    d.object_score = po(c.slot, bank.object_index(d.object_class));
    dets.push_back(std::move(d));
  }
  return dets;
}

std::vector<Detection> predict(const Detector& detector, const Backbone& backbone, const HOIPromptBank& bank,
                               const Image& image, const PredictOptions& options) {
  if (!detector.ready()) throw StateError("detector has no weights; train or load a checkpoint first");
  if (options.top_k <= 0) return {};
  const ImageFeatures f = extract_features(backbone, image, detector.config());
  return predict_features(detector, backbone, bank, f, image.width, image.height, options);
}

// ---------------------------------------------------------------- training

std::vector<TargetPair> targets_from_annotation(const Annotation& ann, const ImageEntry& image,
                                                const HOIPromptBank& bank) {
  std::vector<TargetPair> out;
  for (const HoiAnn& h : ann.hois) {
    const ObjectAnn& obj = ann.objects.at(h.object_idx);
    const HoiClass cls{h.action, obj.category};
    const auto it = std::find(bank.hoi_classes.begin(), bank.hoi_classes.end(), cls);
    if (it == bank.hoi_classes.end()) continue;
    TargetPair t;
    t.human = box_to_cxcywh(ann.humans.at(h.human_idx), image.width, image.height);
    t.object = box_to_cxcywh(obj.box, image.width, image.height);
    t.hoi = static_cast<int>(it - bank.hoi_classes.begin());
    t.object_class = bank.object_index(obj.category);
    t.action = bank.action_index(h.action);
    if (t.object_class < 0 || t.action < 0) continue;
    out.push_back(t);
  }
  return out;
}

double cosine_lr(double base, long step, long total_steps) {
  if (total_steps <= 0) return base;
  const double f = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
  return base * 0.5 * (1.0 + std::cos(M_PI * f));
}

DetectorTrainer::DetectorTrainer(Detector& detector, const Backbone& backbone, RelationTable& table,
                                 const std::vector<std::string>& objects, const std::vector<HoiClass>& hois,
                                 TrainConfig config)
    : detector_(detector),
      backbone_(backbone),
      table_(table),
      objects_(objects),
      hois_(hois),
      config_(config),
      bank_(build_prompt_bank(backbone, table, objects, hois)),
      opt_(config.lr),
      rel_opt_(config.rel_lr),
      rng_(derive_seed(config.seed, {0x747261696e})) {
  if (!detector.ready()) throw StateError("detector has no weights");
  if (config.batch <= 0) throw RangeError("batch must be >= 1");
  rel_store_.add("relations", table.vectors());
}

LossParts DetectorTrainer::evaluate_loss(const TrainSample& s) const {
  const ConditionedFeatures cond = condition_features(backbone_, s.features, bank_);
  ad::Tape tape;
  ParamBinding w(tape, detector_.params(), false);
  const ForwardOutput out = detector_.forward(w, s.features, cond, bank_);
  const std::vector<int> m = detector_.match(out, s.targets);
  LossParts p;
  p.hoi = detector_.hoi_loss(out, s.targets, m).value()(0, 0);
  p.ins = detector_.instance_loss(out, s.targets, m).value()(0, 0);
  p.det = detector_.detection_loss(out, s.targets, m).value()(0, 0);
  p.rel = detector_.relation_loss(tape, backbone_, s.features, out, tape.constant(table_.vectors()), s.targets, m)
              .value()(0, 0);
  p.total = total_loss(p, detector_.config().lambda_rel);
  return p;
}

TrainStepResult DetectorTrainer::step(const std::vector<const TrainSample*>& batch) {
  if (batch.empty()) throw InputError("empty training batch");
  Gradients total;
  Matrix rel_grad(table_.vectors().rows(), table_.vectors().cols());
  TrainStepResult res;
  const double inv = 1.0 / batch.size();
  for (const TrainSample* s : batch) {
    const ConditionedFeatures cond = condition_features(backbone_, s->features, bank_);
    ad::Tape tape;
    ParamBinding w(tape, detector_.params());
    const ForwardOutput out = detector_.forward(w, s->features, cond, bank_);
    const std::vector<int> m = detector_.match(out, s->targets);
    ad::Var table = tape.variable(table_.vectors());
    ad::Var l_hoi = detector_.hoi_loss(out, s->targets, m);
    ad::Var l_ins = detector_.instance_loss(out, s->targets, m);
    ad::Var l_det = detector_.detection_loss(out, s->targets, m);
    ad::Var l_rel = detector_.relation_loss(tape, backbone_, s->features, out, table, s->targets, m);
    LossParts p{l_hoi.value()(0, 0), l_ins.value()(0, 0), l_det.value()(0, 0), l_rel.value()(0, 0), 0.0};
    try {
      p.total = total_loss(p, detector_.config().lambda_rel);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " at step " + std::to_string(steps_));
    }
    ad::Var loss = ad::add(ad::add(l_hoi, l_ins), ad::add(l_det, ad::scale(l_rel, detector_.config().lambda_rel)));
    tape.backward(ad::scale(loss, inv));
    w.accumulate_into(total);
    if (!table.grad().empty())
      for (std::size_t i = 0; i < rel_grad.size(); ++i) rel_grad[i] += table.grad()[i];
    res.loss.hoi += p.hoi * inv;
    res.loss.ins += p.ins * inv;
    res.loss.det += p.det * inv;
    res.loss.rel += p.rel * inv;
    res.loss.total += p.total * inv;
  }
  opt_.step(detector_.params(), total);
  if (config_.rel_lr > 0.0) {
    rel_opt_.step(rel_store_, Gradients{{"relations", rel_grad}});
    table_.vectors() = rel_store_.get("relations");
    bank_ = build_prompt_bank(backbone_, table_, objects_, hois_);
  }
  res.step = ++steps_;
  return res;
}

std::vector<TrainStepResult> DetectorTrainer::epoch(const std::vector<TrainSample>& pool) {
  std::vector<int> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(config_.seed, {0x65706f6368, static_cast<std::uint64_t>(epochs_++)}));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<TrainStepResult> out;
  for (std::size_t b = 0; b < order.size(); b += config_.batch) {
    std::vector<const TrainSample*> batch;
    for (std::size_t k = b; k < std::min(order.size(), b + config_.batch); ++k) batch.push_back(&pool[order[k]]);
    out.push_back(step(batch));
  }
  return out;
}

}  // namespace dhoi
