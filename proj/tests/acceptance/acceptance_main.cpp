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

// Acceptance run: one PASS/FAIL line per criterion, tolerances and time
// limits pinned below. Exit status is the number of failures.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dhoi/cli.hpp"
#include "dhoi/container.hpp"
#include "dhoi/detector.hpp"
#include "dhoi/errors.hpp"
#include "dhoi/evaluation.hpp"
#include "dhoi/inversion.hpp"
#include "dhoi/kernels.hpp"
#include "dhoi/synthesis.hpp"
#include "dhoi/toyset.hpp"
#include "fixtures.hpp"

using namespace dhoi;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

MockConfig tiny_mock() {
  MockConfig c;
  c.text_dim = 4;
  c.widths = {4, 4, 6, 6};
  c.encoder_hidden = 6;
  c.seed = 9;
  return c;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- 1

constexpr double kFdStep = 1e-3;
constexpr double kGradTol = 1e-4;

// Worst block-relative error of tape gradients against central differences
// for a loss over a parameter store.
double store_gradient_error(ParameterStore& store, const std::function<ad::Var(ParamBinding&)>& loss) {
  Gradients analytic;
  {
    ad::Tape tape;
    ParamBinding w(tape, store);
    tape.backward(loss(w));
    analytic = w.gradients();
  }
  auto value = [&]() {
    ad::Tape tape(false);
    ParamBinding w(tape, store, false);
    return loss(w).value()(0, 0);
  };
  double worst = 0;
  for (const std::string& n : store.names()) {
    Matrix& p = store.get(n);
    Matrix numeric(p.rows(), p.cols());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = p[i];
      p[i] = keep + kFdStep;
      const double up = value();
      p[i] = keep - kFdStep;
      const double down = value();
      p[i] = keep;
      numeric[i] = (up - down) / (2 * kFdStep);
    }
    const Matrix& a = analytic.at(n);
    const double denom = std::max(frobenius_norm(a), frobenius_norm(numeric));
    if (denom < 1e-12) continue;
    Matrix diff = a;
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= numeric[i];
    worst = std::max(worst, frobenius_norm(diff) / denom);
  }
  return worst;
}

Outcome gradient_suite() {
  std::mt19937_64 rng(13);
  std::vector<std::pair<std::string, double>> errors;

  // Inversion losses against the relation table.
  {
    const MockBackbone mock(tiny_mock());
    const char* actions[] = {"ride", "hold", "kick"};
    const char* objects[] = {"horse", "cup"};
    std::vector<HOITripletLatents> pool;
    for (int i = 0; i < 6; ++i) {
      pool.push_back(make_triplet(mock, testing::random_image(16, 16, rng), i, Box{0, 0, 8, 8}, actions[i % 3],
                                  objects[i % 2]));
    }
    const RelationTable tab = initial_table(mock, {"ride", "hold", "kick"});
    const NoiseSchedule sched = NoiseSchedule::linear();
    const CycleSettings cyc{200, 2};
    const HOITripletLatents& t = pool[0];
    const PromptEmbedding po = object_prompt(mock, t.object_class);
    std::vector<LatentGrid> cache;
    for (const auto& p : pool) cache.push_back(relation_reconstruct(mock, p, tab, sched, cyc, 5));
    std::mt19937_64 r(3);
    const ContrastivePlan plan = plan_contrastive(pool, 0, 2, 2, r);
    const int idx[] = {tab.index_of(t.action)};

    errors.emplace_back("L_Consistency", testing::gradient_rel_error(
                                             [&](ad::Tape& tape, const std::vector<ad::Var>& p) {
                                               ad::Var v = ad::gather_rows(p[0], idx);
                                               ad::Var rel0 = relation_reconstruct(tape, mock, t, v, sched, cyc, 11);
                                               ad::Var hoi0 = hoi_reconstruct(tape, mock, rel0, t, v, po, sched, cyc, 12);
                                               return consistency_loss(tape.constant(t.z_hoi.data), hoi0);
                                             },
                                             {tab.vectors()}, kFdStep));
    errors.emplace_back(
        "L_Contrastive",
        testing::gradient_rel_error(
            [&](ad::Tape& tape, const std::vector<ad::Var>& p) {
              ad::Var rel0 = relation_reconstruct(tape, mock, t, ad::gather_rows(p[0], idx), sched, cyc, 11);
              std::vector<ad::Var> neg;
              for (int k : plan.object_negatives) neg.push_back(ad::add(rel0, tape.constant(pool[k].z_obj.data)));
              for (auto [rel, obj] : plan.relation_negatives) {
                neg.push_back(ad::add(tape.constant(cache[rel].data), tape.constant(pool[obj].z_obj.data)));
              }
              return contrastive_loss(ad::add(rel0, tape.constant(t.z_obj.data)),
                                      ad::add(rel0, tape.constant(pool[plan.positive_object].z_obj.data)), neg, 0.07);
            },
            {tab.vectors()}, kFdStep));
  }

  // Detector losses against every detector parameter (relation loss
  // against the table, its only differentiable input).
  {
    const MockBackbone mock(tiny_mock());
    const std::vector<std::string> objects{"horse", "cup"};
    const std::vector<HoiClass> hois{{"ride", "horse"}, {"hold", "cup"}};
    const RelationTable tab = initial_table(mock, {"ride", "hold"});
    const HOIPromptBank bank = build_prompt_bank(mock, tab, objects, hois);
    DetectorConfig dc;
    dc.d_model = 4;
    dc.ffn_dim = 6;
    dc.layers = 1;
    dc.n_queries = 2;
    dc.mask_grid = 2;
    dc.short_side = dc.long_max = 64;
    dc.seed = 5;
    Detector det(dc, mock, bank);
    for (const std::string& n : det.params().names()) {
      Matrix& m = det.params().get(n);
      const Matrix noise = testing::random_matrix(m.rows(), m.cols(), rng, 0.3);
      for (std::size_t i = 0; i < m.size(); ++i) m[i] += noise[i];
    }
    const std::size_t n_params = det.params().scalar_count();
    const ImageFeatures f = extract_features(mock, testing::random_image(64, 64, rng), dc);
    const ConditionedFeatures cond = condition_features(mock, f, bank);
    const std::vector<TargetPair> targets{{{0.3, 0.4, 0.2, 0.5}, {0.5, 0.6, 0.3, 0.2}, 0, 0, 0}};
    std::vector<int> matching;
    {
      ad::Tape tape(false);
      ParamBinding w(tape, det.params(), false);
      matching = det.match(det.forward(w, f, cond, bank), targets);
    }
    auto fwd = [&](ParamBinding& w) { return det.forward(w, f, cond, bank); };
    errors.emplace_back("L_HOI", store_gradient_error(det.params(), [&](ParamBinding& w) {
                          return det.hoi_loss(fwd(w), targets, matching);
                        }));
    errors.emplace_back("L_Ins", store_gradient_error(det.params(), [&](ParamBinding& w) {
                          return det.instance_loss(fwd(w), targets, matching);
                        }));
    errors.emplace_back("L_Det", store_gradient_error(det.params(), [&](ParamBinding& w) {
                          return det.detection_loss(fwd(w), targets, matching);
                        }));
    ForwardOutput frozen;
    {
      ad::Tape tape(false);
      ParamBinding w(tape, det.params(), false);
      frozen = fwd(w);
    }
    const Matrix qr = frozen.q_tilde_r.value(), qo = frozen.q_tilde_o.value(), z32 = frozen.z32.value();
    errors.emplace_back("L_Rel", testing::gradient_rel_error(
                                     [&](ad::Tape& tape, const std::vector<ad::Var>& p) {
                                       ForwardOutput out;
                                       out.q_tilde_r = tape.constant(qr);
                                       out.q_tilde_o = tape.constant(qo);
                                       out.z32 = tape.constant(z32);
                                       return det.relation_loss(tape, mock, f, out, p[0], targets, matching);
                                     },
                                     {tab.vectors()}, kFdStep));
    if (n_params > 1000) return {false, "detector fixture has " + std::to_string(n_params) + " parameters"};
  }

  bool ok = true;
  std::string detail;
  for (const auto& [name, e] : errors) {
    ok = ok && e <= kGradTol;
    detail += name + fmt("=%.1e ", e);
  }
  return {ok, detail + "(tol 1e-4, step 1e-3)"};
}

// ---------------------------------------------------------------- 2

// Cost of an assignment summed in row order.
double row_order_sum(const Matrix& cost, const std::vector<int>& row_to_col) {
  double s = 0;
  for (int r = 0; r < cost.rows(); ++r) s += cost(r, row_to_col[r]);
  return s;
}

// Minimum over injective row -> column maps, summed in row order.
double exhaustive_min(const Matrix& cost) {
  std::vector<int> cols(cost.cols());
  std::iota(cols.begin(), cols.end(), 0);
  double best = INFINITY;
  do {
    best = std::min(best, row_order_sum(cost, cols));
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

Outcome assignment_oracle() {
  std::mt19937_64 rng(2024);
  const MockBackbone mock(tiny_mock());
  const RelationTable tab = initial_table(mock, {"ride", "hold"});
  const HOIPromptBank bank = build_prompt_bank(mock, tab, {"horse", "cup"}, {{"ride", "horse"}, {"hold", "cup"}});
  DetectorConfig dc;
  dc.d_model = 4;
  dc.ffn_dim = 4;
  dc.layers = 0;
  dc.n_queries = 1;
  dc.mask_grid = 1;
  dc.short_side = dc.long_max = 64;
  const Detector det(dc, mock, bank);

  std::uniform_int_distribution<int> n_dist(1, 7);
  std::uniform_real_distribution<double> c(0.2, 0.8), s(0.05, 0.4);
  std::uniform_int_distribution<int> cls(0, 1);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    // pair_queries: HOI queries onto slots.
    {
      const int nq = n_dist(rng), nr = std::uniform_int_distribution<int>(1, nq)(rng), d = 4;
      const Matrix qr = testing::random_matrix(nr, d, rng), qh = testing::random_matrix(nq, d, rng),
                   qo = testing::random_matrix(nq, d, rng);
      Matrix cost(nr, nq);
      for (int k = 0; k < nr; ++k)
        for (int i = 0; i < nq; ++i) {
          double ab = 0, aa = 0, bb = 0;
          for (int e = 0; e < d; ++e) {
            const double p = qh(i, e) + qo(i, e);
            ab += qr(k, e) * p;
            aa += qr(k, e) * qr(k, e);
            bb += p * p;
          }
          cost(k, i) = -ab / std::sqrt(aa * bb);
        }
      const Pairing p = pair_queries(qr, qh, qo);
      std::vector<int> hoi_to_slot(nr, -1);
      for (int i = 0; i < nq; ++i)
        if (p.slot_to_hoi[i] >= 0) hoi_to_slot[p.slot_to_hoi[i]] = i;
      if (std::count(hoi_to_slot.begin(), hoi_to_slot.end(), -1) > 0 ||
          row_order_sum(cost, hoi_to_slot) != exhaustive_min(cost)) {
        ++mismatches;
      }
    }
    // Ground-truth matching: targets onto prediction slots.
    {
      const int nq = n_dist(rng), ng = std::uniform_int_distribution<int>(1, nq)(rng);
      Matrix hb(nq, 4), ob(nq, 4);
      for (Matrix* m : {&hb, &ob})
        for (int r = 0; r < nq; ++r) {
          (*m)(r, 0) = c(rng);
          (*m)(r, 1) = c(rng);
          (*m)(r, 2) = s(rng);
          (*m)(r, 3) = s(rng);
        }
      std::vector<TargetPair> gts(ng);
      for (TargetPair& g : gts) {
        g.human = {c(rng), c(rng), s(rng), s(rng)};
        g.object = {c(rng), c(rng), s(rng), s(rng)};
        g.hoi = g.object_class = g.action = cls(rng);
      }
      ad::Tape t(false);
      ForwardOutput out;
      out.hoi_sim = t.constant(testing::random_matrix(nq, 3, rng));
      out.obj_sim = t.constant(testing::random_matrix(nq, 3, rng));
      out.human_boxes = t.constant(hb);
      out.object_boxes = t.constant(ob);
      const Matrix cost = det.match_cost(out, gts);  // slots x targets
      const std::vector<int> m = det.match(out, gts);
      std::vector<int> gt_to_slot(ng, -1);
      for (int i = 0; i < nq; ++i)
        if (m[i] >= 0) gt_to_slot[m[i]] = i;
      Matrix by_gt(ng, nq);
      for (int g = 0; g < ng; ++g)
        for (int i = 0; i < nq; ++i) by_gt(g, i) = cost(i, g);
      if (std::count(gt_to_slot.begin(), gt_to_slot.end(), -1) > 0 ||
          row_order_sum(by_gt, gt_to_slot) != exhaustive_min(by_gt)) {
        ++mismatches;
      }
    }
  }
  return {mismatches == 0, std::to_string(mismatches) + " of 2000 instances differ from exhaustive search"};
}

// ---------------------------------------------------------------- 3

struct OracleGt {
  int image, cls;
  Box h, o;
};

// Independent construction: explicit PR points, then the area under the
// precision envelope summed over distinct recall levels.
double brute_force_ap(const std::vector<Detection>& dets, const std::vector<OracleGt>& gts, int cls, double thr,
                      bool* evaluated) {
  std::vector<const Detection*> ds;
  for (const Detection& d : dets)
    if (d.hoi_class == cls) ds.push_back(&d);
  std::stable_sort(ds.begin(), ds.end(), [](const Detection* a, const Detection* b) { return a->hoi_score > b->hoi_score; });
  std::vector<OracleGt> g;
  for (const OracleGt& x : gts)
    if (x.cls == cls) g.push_back(x);
  *evaluated = !ds.empty() || !g.empty();
  if (g.empty()) return 0.0;
  std::vector<bool> used(g.size(), false);
  std::vector<std::pair<double, double>> pr;  // (recall, precision)
  int tp = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    int best = -1;
    double best_ov = -1;
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (used[k] || g[k].image != ds[i]->image_id) continue;
      const double ov = std::min(iou(ds[i]->human_box, g[k].h), iou(ds[i]->object_box, g[k].o));
      if (ov > best_ov) best_ov = ov, best = static_cast<int>(k);
    }
    if (best >= 0 && best_ov >= thr) {
      used[best] = true;
      ++tp;
    }
    pr.emplace_back(double(tp) / g.size(), double(tp) / (i + 1));
  }
  std::set<double> levels;
  for (const auto& [r, p] : pr) levels.insert(r);
  double ap = 0, prev = 0;
  for (double r : levels) {
    if (r == 0) continue;
    double best = 0;
    for (const auto& [rr, p] : pr)
      if (rr >= r) best = std::max(best, p);
    ap += (r - prev) * best;
    prev = r;
  }
  return ap;
}

Outcome ap_oracle() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> pos(0, 60), side(10, 35), u(0, 1), jit(-4, 4);
  auto box = [&]() {
    const double x = pos(rng), y = pos(rng);
    return Box{x, y, x + side(rng), y + side(rng)};
  };
  auto jitter = [&](const Box& b) {
    Box r{b.x1 + jit(rng), b.y1 + jit(rng), b.x2 + jit(rng), b.y2 + jit(rng)};
    return r.valid() ? r : b;
  };
  double worst = 0;
  int failures = 0;
  for (int scene = 0; scene < 200; ++scene) {
    const int n_img = std::uniform_int_distribution<int>(1, 3)(rng);
    const int n_cls = std::uniform_int_distribution<int>(1, 3)(rng);
    const int n_gt = std::uniform_int_distribution<int>(0, 5)(rng);
    const int n_det = std::uniform_int_distribution<int>(0, 20)(rng);
    DatasetFile ds;
    const std::vector<HoiClass> all{{"ride", "horse"}, {"hold", "cup"}, {"kick", "ball"}};
    ds.vocab.actions = {"ride", "hold", "kick"};
    ds.vocab.objects = {"horse", "cup", "ball"};
    ds.vocab.hois.assign(all.begin(), all.begin() + n_cls);
    std::vector<Annotation> anns(n_img);
    for (int i = 0; i < n_img; ++i) {
      ds.images.push_back({i, "x.png", 100, 100});
      anns[i].image_id = i;
    }
    std::vector<OracleGt> gts;
    for (int k = 0; k < n_gt; ++k) {
      const OracleGt g{std::uniform_int_distribution<int>(0, n_img - 1)(rng),
                       std::uniform_int_distribution<int>(0, n_cls - 1)(rng), box(), box()};
      gts.push_back(g);
      Annotation& a = anns[g.image];
      a.humans.push_back(g.h);
      a.objects.push_back({g.o, all[g.cls].object});
      a.hois.push_back({static_cast<int>(a.humans.size()) - 1, static_cast<int>(a.objects.size()) - 1, all[g.cls].action});
    }
    ds.annotations = anns;
    std::vector<Detection> dets;
    for (int k = 0; k < n_det; ++k) {
      Detection d;
      if (!gts.empty() && u(rng) < 0.6) {
        const OracleGt& g = gts[std::uniform_int_distribution<int>(0, n_gt - 1)(rng)];
        d.image_id = g.image;
        d.hoi_class = u(rng) < 0.8 ? g.cls : std::uniform_int_distribution<int>(0, n_cls - 1)(rng);
        d.human_box = jitter(g.h);
        d.object_box = jitter(g.o);
      } else {
        d.image_id = std::uniform_int_distribution<int>(0, n_img - 1)(rng);
        d.hoi_class = std::uniform_int_distribution<int>(0, n_cls - 1)(rng);
        d.human_box = box();
        d.object_box = box();
      }
      d.hoi_score = u(rng);
      dets.push_back(d);
    }
    const EvalReport r = evaluate(dets, ds, EvalProtocol{});
    double sum = 0;
    int n = 0;
    for (int c = 0; c < n_cls; ++c) {
      bool evaluated = false;
      const double want = brute_force_ap(dets, gts, c, 0.5, &evaluated);
      if (evaluated != r.per_class[c].evaluated) {
        ++failures;
        continue;
      }
      if (!evaluated) continue;
      worst = std::max(worst, std::abs(want - r.per_class[c].ap));
      sum += want;
      ++n;
    }
    if (n > 0) worst = std::max(worst, std::abs(sum / n - r.aggregates.at("full")));
  }
  return {failures == 0 && worst <= 1e-9, fmt("max |AP - oracle| = %.2e over 200 scenes (tol 1e-9)", worst)};
}

// ---------------------------------------------------------------- 4

double worst_row_sum_error(const Matrix& m) {
  double worst = 0;
  for (int r = 0; r < m.rows(); ++r) {
    double s = 0;
    for (int c = 0; c < m.cols(); ++c) s += m(r, c);
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

Outcome attention_invariants() {
  std::mt19937_64 rng(5);
  const MockBackbone mock{MockConfig{}};
  const std::vector<std::string> objects{"horse", "cup", "ball"};
  const std::vector<HoiClass> hois{{"ride", "horse"}, {"hold", "cup"}, {"kick", "ball"}};
  const RelationTable tab = initial_table(mock, {"ride", "hold", "kick"});
  const HOIPromptBank bank = build_prompt_bank(mock, tab, objects, hois);
  DetectorConfig dc;
  dc.short_side = dc.long_max = 128;
  double stochastic = 0;
  bool ones = true, untouched = true;

  for (int trial = 0; trial < 5; ++trial) {
    const ImageFeatures f = extract_features(mock, testing::random_image(96, 128, rng), dc);
    std::vector<std::string> before;
    for (const LatentGrid& l : f.levels) {
      before.emplace_back(reinterpret_cast<const char*>(l.data.values().data()), l.data.size() * sizeof(double));
    }
    const std::string weights_before = mock.serialize();
    const ConditionedFeatures c = condition_features(mock, f, bank);
    for (const Matrix& a : c.m_r_levels) stochastic = std::max(stochastic, worst_row_sum_error(a));
    stochastic = std::max(stochastic, worst_row_sum_error(c.m_r));
    {
      ad::Tape tape(false);
      const Matrix tokens = [&] {
        Matrix t(bank.n_hoi() + 1 + bank.n_objects(), bank.hoi.cols());
        int r = 0;
        for (const Matrix* m : {&bank.hoi, &bank.human, &bank.objects})
          for (int i = 0; i < m->rows(); ++i, ++r)
            for (int k = 0; k < m->cols(); ++k) t(r, k) = (*m)(i, k);
        return t;
      }();
      stochastic = std::max(stochastic, worst_row_sum_error(attention_average(tape, mock, f, tape.constant(tokens)).value()));
    }
    for (std::size_t l = 0; l < f.levels.size(); ++l) {
      const Matrix& d = f.levels[l].data;
      untouched = untouched && std::memcmp(before[l].data(), d.values().data(), before[l].size()) == 0;
    }
    untouched = untouched && mock.serialize() == weights_before;

    // Denoiser cross-attention used for synthesis maps.
    const DenoiserOutput dn = mock.denoise_once(mock.encode_image(testing::random_image(64, 64, rng)), 500,
                                                mock.encode_text("a person rides a horse"));
    for (const Matrix& a : dn.attention) stochastic = std::max(stochastic, worst_row_sum_error(a));

    // Single-token conditioning.
    const HOIPromptBank one = build_prompt_bank(mock, tab, objects, {hois[trial % 3]});
    const ConditionedFeatures c1 = condition_features(mock, f, one);
    for (const Matrix& a : c1.m_r_levels)
      for (double v : a.values()) ones = ones && v == 1.0;
    for (double v : c1.m_r.values()) ones = ones && std::abs(v - 1.0) <= 1e-12;
    const DenoiserOutput d1 = mock.denoise_once(mock.encode_image(testing::random_image(64, 64, rng)), 100,
                                                mock.encode_text("horse"));
    for (const Matrix& a : d1.attention)
      for (double v : a.values()) ones = ones && v == 1.0;
  }
  const bool ok = stochastic <= 1e-6 && ones && untouched;
  return {ok, fmt("max |row sum - 1| = %.1e", stochastic) + (ones ? ", single-token maps all 1" : ", single-token maps NOT 1") +
                  (untouched ? ", features and weights unchanged" : ", features MODIFIED")};
}

// ---------------------------------------------------------------- 5

Outcome cycle_identity() {
  std::mt19937_64 rng(8);
  const testing::ZeroNoiseBackbone stub{MockConfig{}};
  const NoiseSchedule unit = NoiseSchedule::unit(1000);
  const RelationTable tab = initial_table(stub, {"ride", "hold"});
  int exact = 0, total = 0;
  double worst_loss = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const Image img = testing::random_image(64, 64, rng);
    const Box b{8.0 * (trial % 3), 8.0 * (trial % 4), 8.0 * (trial % 3) + 24, 8.0 * (trial % 4) + 32};
    const HOITripletLatents t = make_triplet(stub, img, trial, b, trial % 2 ? "ride" : "hold", "horse");
    for (const CycleSettings cyc : {CycleSettings{300, 4}, CycleSettings{999, 1}}) {
      const LatentGrid rel0 = relation_reconstruct(stub, t, tab, unit, cyc, 1);
      const LatentGrid hoi0 = hoi_reconstruct(stub, rel0, t, tab, unit, cyc, 2);
      ++total;
      exact += hoi0.data.values() == t.z_hoi.data.values();
      worst_loss = std::max(worst_loss, consistency_loss(t.z_hoi, hoi0));
    }
  }
  return {exact == total && worst_loss == 0.0,
          std::to_string(exact) + "/" + std::to_string(total) + " cycles bit-exact, max L_Consistency = " +
              fmt("%g", worst_loss)};
}

// ---------------------------------------------------------------- 6

Outcome inversion_progress() {
  const MockBackbone mock{MockConfig{}};
  ToyOptions opt;
  opt.size = 64;
  opt.seed = 6;
  const ToySet toys = make_toyset(opt, 30);
  std::vector<HOITripletLatents> pool;
  for (std::size_t i = 0; i < toys.scenes.size(); ++i) {
    const ToyScene& s = toys.scenes[i];
    pool.push_back(make_triplet(mock, s.image, static_cast<int>(i), s.object, s.action, s.object_class));
  }
  InversionConfig cfg;
  cfg.batch = 8;
  cfg.total_steps = 500;
  cfg.seed = 6;
  RelationInverter inv(mock, pool, initial_table(mock, opt.actions), cfg);
  const double before = inv.mean_consistency();
  for (long s = 0; s < cfg.total_steps; ++s) inv.step();
  const double after = inv.mean_consistency();
  return {after <= 0.5 * before, fmt("mean L_Consistency %.4f", before) + fmt(" -> %.4f", after) +
                                     fmt(" (ratio %.3f, need <= 0.5)", after / before)};
}

// ---------------------------------------------------------------- 7

Outcome overfit_smoke() {
  const MockBackbone mock{MockConfig{}};
  ToyOptions opt;
  opt.size = 128;
  opt.seed = 1;
  const ToySet toys = make_toyset(opt, 16);
  RelationTable table = initial_table(mock, opt.actions);
  const HOIPromptBank bank = build_prompt_bank(mock, table, opt.objects, opt.hois);
  DetectorConfig dc;
  dc.d_model = 64;
  dc.ffn_dim = 128;
  dc.layers = 2;
  dc.n_queries = 8;
  dc.mask_grid = 4;
  dc.short_side = dc.long_max = 128;
  dc.seed = 1;
  Detector det(dc, mock, bank);
  std::vector<TrainSample> pool;
  for (std::size_t i = 0; i < toys.scenes.size(); ++i) {
    TrainSample s;
    s.features = extract_features(mock, toys.scenes[i].image, dc);
    s.targets = targets_from_annotation(toys.dataset.annotations[i], toys.dataset.images[i], bank);
    s.width = s.height = opt.size;
    s.image_id = toys.dataset.images[i].id;
    pool.push_back(std::move(s));
  }
  TrainConfig tc;
  tc.lr = 2e-3;
  tc.rel_lr = 0;
  tc.batch = 8;
  tc.seed = 2;
  DetectorTrainer trainer(det, mock, table, opt.objects, opt.hois, tc);
  const long steps = 500;
  while (trainer.steps() < steps) {
    trainer.set_lr(cosine_lr(tc.lr, trainer.steps(), steps));
    trainer.epoch(pool);
  }
  std::vector<Detection> dets;
  for (const TrainSample& s : pool)
    for (Detection d : predict_features(det, mock, trainer.bank(), s.features, s.width, s.height, {})) {
      d.image_id = s.image_id;
      dets.push_back(d);
    }
  const double map = evaluate(dets, toys.dataset, EvalProtocol{}).aggregates.at("full");
  return {map >= 0.95, fmt("training mAP %.4f", map) + " after " + std::to_string(trainer.steps()) +
                           " steps (need >= 0.95, Default, IoU 0.5)"};
}

// ---------------------------------------------------------------- 8

Matrix gaussian_blob(int h, int w, double cx, double cy, double sx, double sy) {
  Matrix m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dx = (x + 0.5 - cx) / sx, dy = (y + 0.5 - cy) / sy;
      m(y, x) = std::exp(-0.5 * (dx * dx + dy * dy));
    }
  return m;
}

Outcome pseudo_box_extraction() {
  std::mt19937_64 rng(31);
  int rect_ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> p(0, 47);
    int x0 = p(rng), x1 = p(rng), y0 = p(rng), y1 = p(rng);
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    Matrix m(48, 48);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) m(y, x) = 1.0;
    rect_ok += extract_box(m, 0.5) == CellBox{x0, y0, x1, y1};
  }
  double worst_iou = 1.0;
  for (double sigma : {4.0, 8.0, 16.0}) {
    const double r = sigma * std::sqrt(2.0 * std::log(2.0));
    // Centered on the middle of pixel (64, 64).
    const Matrix m = gaussian_blob(128, 128, 64.5, 64.5, sigma, sigma);
    worst_iou = std::min(worst_iou, iou(extract_box(m, 0.5).pixels(), Box{64.5 - r, 64.5 - r, 64.5 + r, 64.5 + r}));
  }
  int nested = 0;
  std::uniform_real_distribution<double> pos(0.0, 64.0), sig(2.0, 16.0), ratio(0.05, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix m = gaussian_blob(64, 64, pos(rng), pos(rng), sig(rng), sig(rng));
    double r1 = ratio(rng), r2 = ratio(rng);
    if (r1 > r2) std::swap(r1, r2);
    const CellBox lo = extract_box(m, r1), hi = extract_box(m, r2);
    nested += lo.x_min <= hi.x_min && lo.y_min <= hi.y_min && lo.x_max >= hi.x_max && lo.y_max >= hi.y_max;
  }
  return {rect_ok == 100 && worst_iou >= 0.9 && nested == 100,
          std::to_string(rect_ok) + "/100 rectangles exact, min Gaussian IoU " + fmt("%.3f", worst_iou) +
              " (need >= 0.9), " + std::to_string(nested) + "/100 nested"};
}

// ---------------------------------------------------------------- 9

Outcome split_correctness() {
  // HICO-DET-shaped vocabulary: 117 verbs x 80 objects, 600 triplet classes.
  DatasetFile ds;
  for (int v = 0; v < 117; ++v) ds.vocab.actions.push_back("verb" + std::to_string(v));
  for (int o = 0; o < 80; ++o) ds.vocab.objects.push_back("object" + std::to_string(o));
  std::mt19937_64 rng(600);
  std::set<std::pair<int, int>> used;
  while (ds.vocab.hois.size() < 600) {
    const int v = std::uniform_int_distribution<int>(0, 116)(rng), o = std::uniform_int_distribution<int>(0, 79)(rng);
    if (used.insert({v, o}).second) ds.vocab.hois.push_back({ds.vocab.actions[v], ds.vocab.objects[o]});
  }
  // Long-tailed counts with many ties.
  std::vector<int> counts(600);
  for (int c = 0; c < 600; ++c) counts[c] = static_cast<int>(std::floor(400.0 / (1 + c % 97) + (c % 5)));
  std::shuffle(counts.begin(), counts.end(), rng);
  for (int img = 0; img < 60; ++img) {
    ds.images.push_back({img, "x.png", 100, 100});
    Annotation a;
    a.image_id = img;
    a.humans = {Box{0, 0, 10, 10}};
    ds.annotations.push_back(a);
  }
  for (int c = 0; c < 600; ++c) {
    Annotation& a = ds.annotations[c % 60];
    a.objects.push_back({Box{20, 20, 30, 30}, ds.vocab.hois[c].object});
    for (int k = 0; k < counts[c]; ++k) {
      a.hois.push_back({0, static_cast<int>(a.objects.size()) - 1, ds.vocab.hois[c].action});
    }
  }

  bool ok = true;
  std::string detail;
  for (int count : {120, 37}) {
    SplitOptions so;
    so.count = count;
    const Split s = make_splits(ds, SplitMode::kRfUc, so);
    // Expected: the `count` smallest (count, id) pairs.
    std::vector<int> order(600);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return std::pair{counts[a], a} < std::pair{counts[b], b}; });
    std::vector<int> want(order.begin(), order.begin() + count);
    std::sort(want.begin(), want.end());
    ok = ok && s.unseen == want && static_cast<int>(s.seen.size()) == 600 - count;
    const std::set<int> unseen(s.unseen.begin(), s.unseen.end());
    int leaked = 0;
    for (const Annotation& a : s.train.annotations)
      for (const HoiAnn& h : a.hois) leaked += unseen.count(s.train.hoi_index(h.action, a.objects[h.object_idx].category));
    const std::vector<int> tc = class_counts(s.train);
    for (int c : s.seen) ok = ok && tc[c] == counts[c];
    ok = ok && leaked == 0;
    detail += "count " + std::to_string(count) + ": " + std::to_string(s.unseen.size()) + " unseen, " +
              std::to_string(leaked) + " leaked; ";
  }
  return {ok, detail + "600-class vocab"};
}

// ---------------------------------------------------------------- 10

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / ("dhoi_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  ToyOptions opt;
  opt.seed = 10;
  const std::string dataset = write_toyset(make_toyset(opt, 9), (root / "toy").string());
  RunConfig config = parse_config(
      "seed = 7\n[inversion]\nsteps = 20\nbatch = 4\n[train]\nepochs = 3\nfinetune_epochs = 2\nlr = 1e-3\n"
      "finetune_lr = 1e-4\nbatch = 4\n[detector]\nd_model = 16\nffn_dim = 32\nlayers = 1\nn_queries = 4\n"
      "mask_grid = 2\nshort_side = 64\nlong_max = 64\n");
  auto run = [&](const std::string& tag) {
    const std::string d = (root / tag).string();
    fs::create_directories(d);
    cmd_invert(config, dataset, d + "/rel.relv");
    cmd_train(config, {dataset, {}, d + "/rel.relv"}, d + "/det.dhb");
    cmd_eval(config, {d + "/det.dhb", dataset, "", ""}, d + "/eval");
    std::vector<std::string> files;
    for (const char* f : {"/rel.relv", "/rel.relv.log.json", "/det.dhb", "/det.dhb.loss.json", "/eval/report.json",
                          "/eval/report.txt", "/eval/predictions.jsonl"}) {
      files.push_back(read_file(d + f));
    }
    return files;
  };
  const auto a = run("a"), b = run("b");
  fs::remove_all(root);
  int same = 0;
  std::size_t bytes = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same += a[i] == b[i];
    bytes += a[i].size();
  }
  return {same == static_cast<int>(a.size()),
          std::to_string(same) + "/" + std::to_string(a.size()) + " output files identical (" + std::to_string(bytes) +
              " bytes)"};
}

struct Criterion {
  const char* name;
  double limit_s;  // 0: no time limit
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {"gradient suite", 60, gradient_suite},       {"assignment oracle", 30, assignment_oracle},
      {"AP oracle", 30, ap_oracle},                 {"attention invariants", 0, attention_invariants},
      {"cycle identity", 0, cycle_identity},        {"inversion progress", 300, inversion_progress},
      {"overfit smoke", 600, overfit_smoke},        {"pseudo-box extraction", 0, pseudo_box_extraction},
      {"split correctness", 0, split_correctness},  {"determinism", 0, determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const Criterion& c = criteria[i];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0 && secs > c.limit_s) {
      o.pass = false;
      o.detail += fmt(" [over the %.0f s limit]", c.limit_s);
    }
    failures += !o.pass;
    std::printf("%s [%d] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures;
}
