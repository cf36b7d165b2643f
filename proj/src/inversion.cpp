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

#include "dhoi/inversion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "dhoi/errors.hpp"
#include "dhoi/rng.hpp"

namespace dhoi {

LatentGrid object_latent(const Backbone& backbone, const Image& image, const Box& box) {
  if (!box.inside(image.width, image.height)) throw RangeError("object box lies outside the image");
  const int x1 = static_cast<int>(std::lround(box.x1 / 8.0));
  const int y1 = static_cast<int>(std::lround(box.y1 / 8.0));
  const int x2 = static_cast<int>(std::lround(box.x2 / 8.0));
  const int y2 = static_cast<int>(std::lround(box.y2 / 8.0));
  if (x2 <= x1 || y2 <= y1) throw InputError("object box has zero area at latent scale");
  const int h = image.height / 8, w = image.width / 8;
  Image crop(8 * (y2 - y1), 8 * (x2 - x1));
  for (int y = 0; y < crop.height; ++y)
    for (int x = 0; x < crop.width; ++x)
      for (int c = 0; c < 3; ++c) crop.at(y, x, c) = image.at(8 * y1 + y, 8 * x1 + x, c);
  const LatentGrid enc = backbone.encode_image(crop);
  Matrix grid(h * w, enc.channels());
  for (int y = 0; y < enc.height; ++y)
    for (int x = 0; x < enc.width; ++x)
      for (int c = 0; c < enc.channels(); ++c) grid((y1 + y) * w + x1 + x, c) = enc.data(y * enc.width + x, c);
  return LatentGrid(h, w, 8, std::move(grid));
}

HOITripletLatents make_triplet(const Backbone& backbone, const Image& image, int sample_id, const Box& object_box,
                               const std::string& action, const std::string& object_class) {
  HOITripletLatents t;
  t.sample_id = sample_id;
  t.z_hoi = backbone.encode_image(image);
  t.z_obj = object_latent(backbone, image, object_box);
  t.action = action;
  t.object_class = object_class;
  t.object_box = object_box;
  return t;
}

std::uint64_t cycle_noise_seed(std::uint64_t base, int sample_id, int epoch, int stage) {
  return derive_seed(base, {static_cast<std::uint64_t>(sample_id), static_cast<std::uint64_t>(epoch),
                            static_cast<std::uint64_t>(stage)});
}

PromptEmbedding object_prompt(const Backbone& backbone, const std::string& object_class) {
  std::string words = object_class;
  std::replace(words.begin(), words.end(), '_', ' ');
  return backbone.encode_text(words);
}

namespace {

void check_pair(const HOITripletLatents& lat) {
  if (!lat.z_hoi.data.same_shape(lat.z_obj.data) || lat.z_hoi.height != lat.z_obj.height ||
      lat.z_hoi.stride != lat.z_obj.stride) {
    throw DimensionError("z_hoi and z_obj differ in shape");
  }
}

}  // namespace

ad::Var relation_reconstruct(ad::Tape& tape, const Backbone& backbone, const HOITripletLatents& lat,
                             const ad::Var& relation, const NoiseSchedule& sched, const CycleSettings& cycle,
                             std::uint64_t noise_seed) {
  check_pair(lat);
  const LatentGrid& z = lat.z_hoi;
  Matrix diff = z.data;
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= lat.z_obj.data[i];
  ad::Var eps = tape.constant(gaussian_matrix(diff.rows(), diff.cols(), noise_seed));
  ad::Var zT = noise_to(tape.constant(std::move(diff)), cycle.timestep, eps, sched);
  return backbone.denoise_iterative(tape, zT, z.height, z.width, relation, cycle.n_steps, sched, cycle.timestep);
}

ad::Var hoi_reconstruct(ad::Tape& tape, const Backbone& backbone, const ad::Var& z_rel0,
                        const HOITripletLatents& lat, const ad::Var& relation, const PromptEmbedding& object_tokens,
                        const NoiseSchedule& sched, const CycleSettings& cycle, std::uint64_t noise_seed) {
  check_pair(lat);
  if (!z_rel0.value().same_shape(lat.z_obj.data)) throw DimensionError("z_rel0 and z_obj differ in shape");
  ad::Var x = ad::add(z_rel0, tape.constant(lat.z_obj.data));
  ad::Var eps = tape.constant(gaussian_matrix(x.rows(), x.cols(), noise_seed));
  ad::Var zT = noise_to(x, cycle.timestep, eps, sched);
  const ad::Var parts[] = {relation, tape.constant(object_tokens.tokens)};
  ad::Var cond = ad::concat_rows(parts);
  return backbone.denoise_iterative(tape, zT, lat.z_hoi.height, lat.z_hoi.width, cond, cycle.n_steps, sched,
                                    cycle.timestep);
}

LatentGrid relation_reconstruct(const Backbone& backbone, const HOITripletLatents& lat, const RelationTable& table,
                                const NoiseSchedule& sched, const CycleSettings& cycle, std::uint64_t noise_seed) {
  ad::Tape tape(false);
  ad::Var v = tape.constant(table.row(lat.action));
  ad::Var out = relation_reconstruct(tape, backbone, lat, v, sched, cycle, noise_seed);
  return LatentGrid(lat.z_hoi.height, lat.z_hoi.width, 8, out.value());
}

LatentGrid hoi_reconstruct(const Backbone& backbone, const LatentGrid& z_rel0, const HOITripletLatents& lat,
                           const RelationTable& table, const NoiseSchedule& sched, const CycleSettings& cycle,
                           std::uint64_t noise_seed) {
  ad::Tape tape(false);
  ad::Var v = tape.constant(table.row(lat.action));
  ad::Var out = hoi_reconstruct(tape, backbone, tape.constant(z_rel0.data), lat, v,
                                object_prompt(backbone, lat.object_class), sched, cycle, noise_seed);
  return LatentGrid(lat.z_hoi.height, lat.z_hoi.width, 8, out.value());
}

ad::Var consistency_loss(const ad::Var& z_hoi, const ad::Var& z_hoi0) {
  ad::Var d = ad::sub(ad::l2_normalize_all(z_hoi), ad::l2_normalize_all(z_hoi0));
  return ad::sum_all(ad::square(d));
}

double consistency_loss(const LatentGrid& z_hoi, const LatentGrid& z_hoi0) {
  if (!z_hoi.data.same_shape(z_hoi0.data)) throw DimensionError("consistency_loss: shape mismatch");
  ad::Tape tape(false);
  return consistency_loss(tape.constant(z_hoi.data), tape.constant(z_hoi0.data)).value()(0, 0);
}

ContrastivePlan plan_contrastive(const std::vector<HOITripletLatents>& pool, int anchor, int k_obj, int n_rel,
                                 std::mt19937_64& rng) {
  if (anchor < 0 || anchor >= static_cast<int>(pool.size())) throw RangeError("anchor outside the pool");
  if (k_obj < 0 || n_rel < 0) throw RangeError("negative counts requested");
  const HOITripletLatents& a = pool[anchor];
  std::vector<int> same, other_class, other_rel, everyone;
  for (int i = 0; i < static_cast<int>(pool.size()); ++i) {
    everyone.push_back(i);
    if (i == anchor) continue;
    if (pool[i].object_class == a.object_class) {
      same.push_back(i);
    } else {
      other_class.push_back(i);
    }
    if (pool[i].action != a.action) other_rel.push_back(i);
  }
  std::vector<std::string> missing;
  if (same.empty()) missing.push_back("same-class object (" + a.object_class + ")");
  if (k_obj > 0 && other_class.empty()) missing.push_back("different-class object");
  if (n_rel > 0 && other_rel.empty()) missing.push_back("other relation (than " + a.action + ")");
  if (k_obj + n_rel == 0) missing.push_back("negative of any kind");
  if (!missing.empty()) {
    std::string msg = "contrastive pool lacks: ";
    for (std::size_t i = 0; i < missing.size(); ++i) msg += (i ? ", " : "") + missing[i];
    throw SamplingError(msg);
  }
  auto pick = [&rng](const std::vector<int>& from) {
    return from[static_cast<std::size_t>(rng() % from.size())];
  };
  ContrastivePlan plan;
  plan.anchor = anchor;
  plan.positive_object = pick(same);
  for (int k = 0; k < k_obj; ++k) plan.object_negatives.push_back(pick(other_class));
  for (int k = 0; k < n_rel; ++k) {
    const int rel = pick(other_rel);
    plan.relation_negatives.emplace_back(rel, pick(everyone));
  }
  return plan;
}

ContrastiveBatch build_contrastive_batch(const std::vector<HOITripletLatents>& pool,
                                         const std::vector<LatentGrid>& z_rel0, int anchor, int k_obj, int n_rel,
                                         std::mt19937_64& rng, double tau) {
  if (z_rel0.size() != pool.size()) throw DimensionError("one relation latent per pool member expected");
  const ContrastivePlan plan = plan_contrastive(pool, anchor, k_obj, n_rel, rng);
  auto sum = [](const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw DimensionError("contrastive members differ in shape");
    Matrix s = a;
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += b[i];
    return s;
  };
  const Matrix& rel = z_rel0[anchor].data;
  ContrastiveBatch b;
  b.tau = tau;
  b.anchor = sum(rel, pool[anchor].z_obj.data);
  b.positive = sum(rel, pool[plan.positive_object].z_obj.data);
  for (int k : plan.object_negatives) b.object_negatives.push_back(sum(rel, pool[k].z_obj.data));
  for (auto [r, o] : plan.relation_negatives) b.relation_negatives.push_back(sum(z_rel0[r].data, pool[o].z_obj.data));
  return b;
}

ad::Var contrastive_loss(const ad::Var& anchor, const ad::Var& positive, const std::vector<ad::Var>& negatives,
                         double tau) {
  if (!(tau > 0.0)) throw RangeError("temperature must be positive");
  ad::Var a = ad::l2_normalize_all(anchor);
  std::vector<ad::Var> logits;
  logits.push_back(ad::scale(ad::dot_all(a, ad::l2_normalize_all(positive)), 1.0 / tau));
  for (const ad::Var& n : negatives) logits.push_back(ad::scale(ad::dot_all(a, ad::l2_normalize_all(n)), 1.0 / tau));
  ad::Var all = ad::concat_cols(logits);
  return ad::sub(ad::logsumexp_all(all), logits.front());
}

double contrastive_loss(const ContrastiveBatch& batch) {
  if (!(batch.tau > 0.0)) throw RangeError("temperature must be positive");
  ad::Tape tape(false);
  std::vector<ad::Var> neg;
  for (const Matrix& m : batch.object_negatives) neg.push_back(tape.constant(m));
  for (const Matrix& m : batch.relation_negatives) neg.push_back(tape.constant(m));
  return contrastive_loss(tape.constant(batch.anchor), tape.constant(batch.positive), neg, batch.tau).value()(0, 0);
}

double lambda1(long step, long total_steps) {
  if (total_steps <= 0 || step < 0 || step > total_steps) {
    throw RangeError("lambda1: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  constexpr double kPi = 3.14159265358979323846;
  return 0.1 * (1.0 - std::cos(kPi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

RelationTable initial_table(const Backbone& backbone, const std::vector<std::string>& actions) {
  Matrix v(static_cast<int>(actions.size()), backbone.text_dim());
  for (std::size_t i = 0; i < actions.size(); ++i) {
    std::string word = actions[i];
    std::replace(word.begin(), word.end(), '_', ' ');
    const PromptEmbedding e = backbone.encode_text(word);
    // Multi-word actions start from the mean of their words.
    for (int r = 0; r < e.rows(); ++r)
      for (int c = 0; c < v.cols(); ++c) v(static_cast<int>(i), c) += e.tokens(r, c) / e.rows();
  }
  return RelationTable(actions, std::move(v));
}

// ---------------------------------------------------------------- inverter

RelationInverter::RelationInverter(const Backbone& backbone, std::vector<HOITripletLatents> pool,
                                   RelationTable table, InversionConfig config, NoiseSchedule sched)
    : backbone_(backbone),
      pool_(std::move(pool)),
      table_(std::move(table)),
      config_(config),
      sched_(std::move(sched)),
      opt_(config.lr) {
  if (pool_.empty()) throw InputError("inversion needs at least one triplet");
  if (!(config_.lr >= 0.0)) throw RangeError("learning rate must be non-negative");
  if (config_.batch < 1) throw RangeError("batch size must be positive");
  sched_.validate();
  if (config_.cycle.timestep < 0 || config_.cycle.timestep >= sched_.steps) throw RangeError("inversion timestep");
  for (const HOITripletLatents& t : pool_) {
    table_.index_of(t.action);
    object_prompts_.push_back(object_prompt(backbone_, t.object_class));
  }
  store_.add("relations", table_.vectors());
}

void RelationInverter::refresh_cache() {
  rel_cache_.clear();
  for (const HOITripletLatents& t : pool_) {
    rel_cache_.push_back(relation_reconstruct(backbone_, t, table_, sched_, config_.cycle,
                                              cycle_noise_seed(config_.seed, t.sample_id, epoch_, 0)));
  }
}

InversionStepResult RelationInverter::step() {
  const long total = std::max(config_.total_steps, step_ + 1);
  std::vector<int> batch;
  const int n = static_cast<int>(pool_.size());
  const int want = std::min(config_.batch, n);
  while (static_cast<int>(batch.size()) < want) {
    if (epoch_ < 0 || cursor_ >= order_.size()) {
      ++epoch_;
      order_.resize(n);
      std::iota(order_.begin(), order_.end(), 0);
      std::mt19937_64 rng(derive_seed(config_.seed, {0x73687566, static_cast<std::uint64_t>(epoch_)}));
      std::shuffle(order_.begin(), order_.end(), rng);
      cursor_ = 0;
      rel_cache_.clear();
    }
    batch.push_back(order_[cursor_++]);
  }
  return step(batch, lambda1(std::min(step_, total), total));
}

InversionStepResult RelationInverter::step(const std::vector<int>& batch, double lam) {
  if (batch.empty()) throw InputError("empty inversion batch");
  if (epoch_ < 0) epoch_ = 0;
  if (lam > 0.0 && rel_cache_.empty()) refresh_cache();
  std::mt19937_64 rng(derive_seed(config_.seed, {0x6e6567, static_cast<std::uint64_t>(step_)}));

  ad::Tape tape;
  ad::Var table = tape.variable(store_.get("relations"));
  ad::Var loss_sum;
  InversionStepResult out;
  out.lambda1 = lam;
  for (int id : batch) {
    const HOITripletLatents& t = pool_.at(static_cast<std::size_t>(id));
    const int row = table_.index_of(t.action);
    const int idx[] = {row};
    ad::Var v = ad::gather_rows(table, idx);
    ad::Var rel0 = relation_reconstruct(tape, backbone_, t, v, sched_, config_.cycle,
                                        cycle_noise_seed(config_.seed, t.sample_id, epoch_, 0));
    ad::Var hoi0 = hoi_reconstruct(tape, backbone_, rel0, t, v, object_prompts_[id], sched_, config_.cycle,
                                   cycle_noise_seed(config_.seed, t.sample_id, epoch_, 1));
    if (!all_finite(hoi0.value())) {
      throw NumericalError("non-finite reconstruction for sample " + std::to_string(t.sample_id));
    }
    ad::Var lc = consistency_loss(tape.constant(t.z_hoi.data), hoi0);
    ad::Var sample = lc;
    double lcon = 0.0;
    if (lam > 0.0) {
      const ContrastivePlan plan = plan_contrastive(pool_, id, config_.k_obj, config_.n_rel, rng);
      ad::Var anchor = ad::add(rel0, tape.constant(t.z_obj.data));
      ad::Var positive = ad::add(rel0, tape.constant(pool_[plan.positive_object].z_obj.data));
      std::vector<ad::Var> neg;
      for (int k : plan.object_negatives) neg.push_back(ad::add(rel0, tape.constant(pool_[k].z_obj.data)));
      for (auto [r, o] : plan.relation_negatives) {
        Matrix m = rel_cache_[r].data;
        for (std::size_t i = 0; i < m.size(); ++i) m[i] += pool_[o].z_obj.data[i];
        neg.push_back(tape.constant(std::move(m)));
      }
      ad::Var lk = contrastive_loss(anchor, positive, neg, config_.tau);
      lcon = lk.value()(0, 0);
      sample = ad::add(lc, ad::scale(lk, lam));
    }
    const double c = lc.value()(0, 0);
    if (!std::isfinite(c) || !std::isfinite(lcon)) {
      throw NumericalError("non-finite inversion loss for sample " + std::to_string(t.sample_id));
    }
    out.consistency += c / batch.size();
    out.contrastive += lcon / batch.size();
    ad::Var scaled = ad::scale(sample, 1.0 / batch.size());
    loss_sum = loss_sum.valid() ? ad::add(loss_sum, scaled) : scaled;
  }
  out.total = out.consistency + lam * out.contrastive;
  tape.backward(loss_sum);
  Gradients g;
  g["relations"] = table.grad().empty() ? Matrix(table.rows(), table.cols()) : table.grad();
  opt_.step(store_, g);
  table_.vectors() = store_.get("relations");
  ++step_;
  return out;
}

double RelationInverter::mean_consistency() const {
  double total = 0.0;
  for (const HOITripletLatents& t : pool_) {
    const LatentGrid rel0 = relation_reconstruct(backbone_, t, table_, sched_, config_.cycle,
                                                 cycle_noise_seed(config_.seed, t.sample_id, 0, 0));
    const LatentGrid hoi0 = hoi_reconstruct(backbone_, rel0, t, table_, sched_, config_.cycle,
                                            cycle_noise_seed(config_.seed, t.sample_id, 0, 1));
    total += consistency_loss(t.z_hoi, hoi0);
  }
  return total / pool_.size();
}

}  // namespace dhoi
