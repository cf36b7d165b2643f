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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "dhoi/errors.hpp"
#include "dhoi/evaluation.hpp"

using namespace dhoi;

namespace {

Detection det(int image, Box h, Box o, int cls, double score) {
  Detection d;
  d.image_id = image;
  d.human_box = h;
  d.object_box = o;
  d.hoi_class = cls;
  d.hoi_score = score;
  return d;
}

// Two classes over two objects; one image per element of `scenes`, each a
// list of (class, human box, object box) ground truths.
struct Scene {
  int cls;
  Box h, o;
};

DatasetFile make_gt(const std::vector<std::vector<Scene>>& scenes) {
  DatasetFile ds;
  ds.vocab = {{"ride", "hold"}, {"horse", "cup"}, {{"ride", "horse"}, {"hold", "cup"}, {"ride", "cup"}}};
  for (int i = 0; i < static_cast<int>(scenes.size()); ++i) {
    ds.images.push_back({i, "img" + std::to_string(i) + ".png", 100, 100});
    Annotation a;
    a.image_id = i;
    for (const Scene& s : scenes[i]) {
      const HoiClass& c = ds.vocab.hois[s.cls];
      a.humans.push_back(s.h);
      a.objects.push_back({s.o, c.object});
      a.hois.push_back({static_cast<int>(a.humans.size()) - 1, static_cast<int>(a.objects.size()) - 1, c.action});
    }
    ds.annotations.push_back(a);
  }
  return ds;
}

// AP as the mean over ground truths of the best precision reachable at or
// after the rank where each one is recalled.
double ap_oracle(const std::vector<bool>& flags, int n_gt) {
  if (n_gt == 0) return 0.0;
  double total = 0;
  int tp = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (!flags[i]) continue;
    ++tp;
    double best = 0;
    int tp_j = tp;
    for (std::size_t j = i; j < flags.size(); ++j) {
      if (j > i && flags[j]) ++tp_j;
      best = std::max(best, double(tp_j) / double(j + 1));
    }
    total += best;
  }
  return total / n_gt;
}

TEST(Iou, WorkedExamples) {
  EXPECT_DOUBLE_EQ(iou(Box{0, 0, 2, 1}, Box{1, 0, 3, 1}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(iou(Box{0, 0, 1, 1}, Box{0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(iou(Box{0, 0, 1, 1}, Box{2, 2, 3, 3}), 0.0);
  EXPECT_THROW(iou(Box{0, 0, 0, 1}, Box{0, 0, 1, 1}), ContractError);
}

TEST(AveragePrecision, WorkedExamples) {
  EXPECT_DOUBLE_EQ(average_precision({true}, 1), 1.0);
  EXPECT_DOUBLE_EQ(average_precision({false, true}, 1), 0.5);
  EXPECT_DOUBLE_EQ(average_precision({true, true}, 4), 0.5);
  EXPECT_DOUBLE_EQ(average_precision({true, false, true}, 2), (1.0 + 2.0 / 3.0) / 2.0);
  EXPECT_DOUBLE_EQ(average_precision({}, 3), 0.0);
  EXPECT_DOUBLE_EQ(average_precision({true}, 0), 0.0);
  EXPECT_THROW(average_precision({true}, -1), RangeError);
}

TEST(AveragePrecision, MatchesRankOracle) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = std::uniform_int_distribution<int>(0, 12)(rng);
    std::vector<bool> flags(n);
    int tp = 0;
    for (int i = 0; i < n; ++i) tp += (flags[i] = rng() % 2);
    const int n_gt = tp + std::uniform_int_distribution<int>(0, 3)(rng);
    ASSERT_NEAR(average_precision(flags, n_gt), ap_oracle(flags, n_gt), 1e-12) << trial;
  }
}

TEST(MatchDetections, GreedyByScoreAndMinimumOverlap) {
  const Box a{0, 0, 10, 10}, b{20, 20, 30, 30};
  const std::vector<GtPair> gts{{a, b}};
  // Human overlap 1, object overlap 1/3: the pair overlap is the minimum.
  Detection half = det(0, a, Box{20, 20, 30, 30}, 0, 0.9);
  half.object_box = Box{25, 20, 35, 30};
  EXPECT_EQ(match_detections({&half}, gts, 0.3), std::vector<bool>{true});
  EXPECT_EQ(match_detections({&half}, gts, 0.5), std::vector<bool>{false});
  // Duplicates: only the first claims the pair.
  const Detection d1 = det(0, a, b, 0, 0.9), d2 = det(0, a, b, 0, 0.8);
  EXPECT_EQ(match_detections({&d1, &d2}, gts, 0.5), (std::vector<bool>{true, false}));
  // Degenerate predictions never match.
  const Detection bad = det(0, Box{0, 0, 0, 10}, b, 0, 0.9);
  EXPECT_EQ(match_detections({&bad}, gts, 0.5), std::vector<bool>{false});
  EXPECT_EQ(match_detections({&d1}, {}, 0.5), std::vector<bool>{false});
}

TEST(MatchDetections, TakesTheBestUnusedPair) {
  const Box h{0, 0, 10, 10};
  const std::vector<GtPair> gts{{h, Box{0, 0, 10, 10}}, {h, Box{2, 0, 12, 10}}};
  const Detection d1 = det(0, h, Box{2, 0, 12, 10}, 0, 0.9), d2 = det(0, h, Box{0, 0, 10, 10}, 0, 0.8);
  EXPECT_EQ(match_detections({&d1, &d2}, gts, 0.6), (std::vector<bool>{true, true}));
}

Box jitter(const Box& b, std::mt19937_64& rng, double amount) {
  std::uniform_real_distribution<double> u(-amount, amount);
  Box r{b.x1 + u(rng), b.y1 + u(rng), b.x2 + u(rng), b.y2 + u(rng)};
  if (!r.valid()) return b;
  return r;
}

Box random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> p(0, 70), s(8, 30);
  const double x = p(rng), y = p(rng);
  return {x, y, x + s(rng), y + s(rng)};
}

struct MicroScene {
  DatasetFile gt;
  std::vector<Detection> dets;
};

MicroScene random_scene(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> cls(0, 2), count(0, 3);
  std::vector<std::vector<Scene>> scenes(3);
  for (auto& s : scenes) {
    const int n = count(rng);
    for (int i = 0; i < n; ++i) s.push_back({cls(rng), random_box(rng), random_box(rng)});
  }
  MicroScene m{make_gt(scenes), {}};
  std::uniform_real_distribution<double> score(0, 1);
  for (int img = 0; img < 3; ++img) {
    for (const Scene& s : scenes[img])
      for (int k = 0; k < 2; ++k)
        if (rng() % 3) m.dets.push_back(det(img, jitter(s.h, rng, 4), jitter(s.o, rng, 4), s.cls, score(rng)));
    for (int k = count(rng); k > 0; --k) m.dets.push_back(det(img, random_box(rng), random_box(rng), cls(rng), score(rng)));
  }
  return m;
}

// Independent evaluation: exhaustive per-class pass with a plain greedy
// matcher over (image, gt) slots.
std::vector<double> oracle_aps(const MicroScene& m, double thr, bool known_object) {
  const DatasetFile& gt = m.gt;
  std::vector<double> aps;
  for (int c = 0; c < 3; ++c) {
    struct G {
      int image;
      Box h, o;
      bool used = false;
    };
    std::vector<G> gs;
    std::set<std::pair<int, std::string>> present;
    for (const Annotation& a : gt.annotations) {
      for (const ObjectAnn& o : a.objects) present.insert({a.image_id, o.category});
      for (const HoiAnn& h : a.hois)
        if (gt.hoi_index(h.action, a.objects[h.object_idx].category) == c)
          gs.push_back({a.image_id, a.humans[h.human_idx], a.objects[h.object_idx].box});
    }
    std::vector<Detection> ds;
    for (const Detection& d : m.dets)
      if (d.hoi_class == c && (!known_object || present.count({d.image_id, gt.vocab.hois[c].object}))) ds.push_back(d);
    std::stable_sort(ds.begin(), ds.end(), [](const Detection& a, const Detection& b) { return a.hoi_score > b.hoi_score; });
    std::vector<bool> flags;
    for (const Detection& d : ds) {
      int best = -1;
      double bo = -1;
      for (int g = 0; g < static_cast<int>(gs.size()); ++g) {
        if (gs[g].used || gs[g].image != d.image_id) continue;
        const double ov = std::min(iou(d.human_box, gs[g].h), iou(d.object_box, gs[g].o));
        if (ov > bo) bo = ov, best = g;
      }
      const bool tp = best >= 0 && bo >= thr;
      if (tp) gs[best].used = true;
      flags.push_back(tp);
    }
    aps.push_back(ds.empty() && gs.empty() ? -1.0 : ap_oracle(flags, static_cast<int>(gs.size())));
  }
  return aps;
}

TEST(Evaluate, MatchesIndependentOracleOnMicroScenes) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const MicroScene m = random_scene(rng);
    for (bool ko : {false, true}) {
      EvalProtocol p;
      p.setup = ko ? Setup::kKnownObject : Setup::kDefault;
      const EvalReport r = evaluate(m.dets, m.gt, p);
      const std::vector<double> want = oracle_aps(m, 0.5, ko);
      double sum = 0;
      int n = 0;
      for (int c = 0; c < 3; ++c) {
        ASSERT_EQ(r.per_class[c].evaluated, want[c] >= 0) << trial;
        if (want[c] < 0) continue;
        ASSERT_NEAR(r.per_class[c].ap, want[c], 1e-12) << trial << " class " << c;
        sum += want[c];
        ++n;
      }
      if (n) ASSERT_NEAR(r.aggregates.at("full"), sum / n, 1e-12);
    }
  }
}

TEST(Evaluate, Properties) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    MicroScene m = random_scene(rng);
    EvalProtocol def, ko;
    ko.setup = Setup::kKnownObject;
    const EvalReport a = evaluate(m.dets, m.gt, def), b = evaluate(m.dets, m.gt, ko);
    for (int c = 0; c < 3; ++c) {
      // Known-object only removes false positives.
      if (a.per_class[c].evaluated && b.per_class[c].evaluated) ASSERT_GE(b.per_class[c].ap, a.per_class[c].ap - 1e-12);
      ASSERT_GE(a.per_class[c].ap, 0.0);
      ASSERT_LE(a.per_class[c].ap, 1.0);
    }
    // Input order does not matter when scores are distinct.
    std::vector<Detection> shuffled = m.dets;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const EvalReport s = evaluate(shuffled, m.gt, def);
    for (int c = 0; c < 3; ++c) ASSERT_NEAR(s.per_class[c].ap, a.per_class[c].ap, 1e-12);
    // A lower threshold never loses true positives.
    EvalProtocol loose;
    loose.iou_threshold = 0.3;
    const EvalReport l = evaluate(m.dets, m.gt, loose);
    for (int c = 0; c < 3; ++c) ASSERT_GE(l.per_class[c].ap, a.per_class[c].ap - 1e-12);
  }
}

TEST(Evaluate, PerfectAndEmpty) {
  const Box h{0, 0, 10, 10}, o{20, 20, 30, 30};
  const DatasetFile gt = make_gt({{{0, h, o}}, {{1, h, o}}});
  const EvalReport r = evaluate({det(0, h, o, 0, 0.9), det(1, h, o, 1, 0.4)}, gt, {});
  EXPECT_DOUBLE_EQ(r.aggregates.at("full"), 1.0);
  EXPECT_FALSE(r.per_class[2].evaluated);
  EXPECT_EQ(to_json(r)["per_class"].size(), 2u);
  const EvalReport e = evaluate({}, gt, {});
  EXPECT_DOUBLE_EQ(e.aggregates.at("full"), 0.0);
  EXPECT_NE(format_report(r, gt.vocab).find("ride horse"), std::string::npos);
}

TEST(Evaluate, PartitionsAndContracts) {
  const Box h{0, 0, 10, 10}, o{20, 20, 30, 30};
  const DatasetFile gt = make_gt({{{0, h, o}, {1, h, o}}});
  EvalProtocol p;
  p.partitions = seen_partitions(3, {1, 2});
  const EvalReport r = evaluate({det(0, h, o, 0, 0.9)}, gt, p);
  EXPECT_DOUBLE_EQ(r.aggregates.at("seen"), 1.0);
  EXPECT_DOUBLE_EQ(r.aggregates.at("unseen"), 0.0);
  EXPECT_DOUBLE_EQ(r.aggregates.at("full"), 0.5);

  p.partitions = {{"rare", {0}}};
  const EvalReport only_rare = evaluate({}, gt, p);
  EXPECT_TRUE(only_rare.aggregates.count("full"));
  p.partitions = {{"rare", {0}}, {"non_rare", {2}}};
  const EvalReport missing = evaluate({}, make_gt({{{0, h, o}}}), EvalProtocol{});
  EXPECT_EQ(missing.aggregates.size(), 1u);

  EXPECT_THROW(evaluate({}, gt, p), ContractError);  // does not cover class 1
  p.partitions = {{"seen", {0, 1}}, {"unseen", {1, 2}}};
  EXPECT_THROW(evaluate({}, gt, p), ContractError);
  p.partitions = {{"full", {7}}};
  EXPECT_THROW(evaluate({}, gt, p), ContractError);
  EvalProtocol bad;
  bad.iou_threshold = 1.0;
  EXPECT_THROW(evaluate({}, gt, bad), RangeError);
  EXPECT_THROW(evaluate({det(0, h, o, 3, 0.5)}, gt, {}), ContractError);
  EXPECT_THROW(evaluate({det(9, h, o, 0, 0.5)}, gt, {}), ContractError);
}

TEST(Partitions, RareThreshold) {
  const auto p = rare_partitions({10, 9, 0, 25});
  EXPECT_EQ(p.at("rare"), (std::vector<int>{1, 2}));
  EXPECT_EQ(p.at("non_rare"), (std::vector<int>{0, 3}));
  EXPECT_EQ(p.at("full").size(), 4u);
}

// ------------------------------------------------------------ splits

DatasetFile counted_dataset(const std::vector<int>& counts) {
  // Class c is (action c % 2, object c), repeated counts[c] times.
  DatasetFile ds;
  ds.vocab.actions = {"ride", "hold"};
  for (std::size_t c = 0; c < counts.size(); ++c) {
    ds.vocab.objects.push_back("obj" + std::to_string(c));
    ds.vocab.hois.push_back({ds.vocab.actions[c % 2], ds.vocab.objects[c]});
  }
  ds.images.push_back({0, "a.png", 50, 50});
  Annotation a;
  a.humans = {Box{0, 0, 5, 5}};
  for (std::size_t c = 0; c < counts.size(); ++c) {
    a.objects.push_back({Box{5, 5, 9, 9}, ds.vocab.objects[c]});
    for (int k = 0; k < counts[c]; ++k) a.hois.push_back({0, static_cast<int>(c), ds.vocab.hois[c].action});
  }
  ds.annotations.push_back(a);
  return ds;
}

TEST(Splits, RareAndNonRareFirst) {
  const DatasetFile ds = counted_dataset({10, 8, 3, 2, 1});
  SplitOptions o;
  o.count = 2;
  const Split rf = make_splits(ds, SplitMode::kRfUc, o);
  EXPECT_EQ(rf.unseen, (std::vector<int>{3, 4}));
  EXPECT_EQ(rf.seen, (std::vector<int>{0, 1, 2}));
  const Split nf = make_splits(ds, SplitMode::kNfUc, o);
  EXPECT_EQ(nf.unseen, (std::vector<int>{0, 1}));
  // Training copy keeps images and boxes but drops every unseen instance.
  EXPECT_EQ(rf.train.images.size(), ds.images.size());
  EXPECT_EQ(rf.train.annotations[0].objects.size(), 5u);
  const std::vector<int> c = class_counts(rf.train);
  EXPECT_EQ(c, (std::vector<int>{10, 8, 3, 0, 0}));
  o.count = 6;
  EXPECT_THROW(make_splits(ds, SplitMode::kRfUc, o), RangeError);
}

TEST(Splits, RareFirstTiesKeepIdOrder) {
  SplitOptions o;
  o.count = 2;
  EXPECT_EQ(make_splits(counted_dataset({1, 4, 1, 1}), SplitMode::kRfUc, o).unseen, (std::vector<int>{0, 2}));
}

TEST(Splits, UnseenVerbAndObject) {
  const DatasetFile ds = counted_dataset({4, 1, 5, 2});
  SplitOptions o;
  o.verbs = {"hold"};
  const Split uv = make_splits(ds, SplitMode::kUv, o);
  EXPECT_EQ(uv.unseen, (std::vector<int>{1, 3}));
  for (const Annotation& a : uv.train.annotations)
    for (const HoiAnn& h : a.hois) EXPECT_NE(h.action, "hold");
  o.objects = {"obj2"};
  EXPECT_EQ(make_splits(ds, SplitMode::kUo, o).unseen, std::vector<int>{2});
  // Without names the least frequent are taken: hold has 3, ride 9.
  SplitOptions fallback;
  fallback.verb_count = 1;
  EXPECT_EQ(make_splits(ds, SplitMode::kUv, fallback).unseen, (std::vector<int>{1, 3}));
  fallback.object_count = 2;
  EXPECT_EQ(make_splits(ds, SplitMode::kUo, fallback).unseen, (std::vector<int>{1, 3}));
  o.verbs = {"fly"};
  EXPECT_THROW(make_splits(ds, SplitMode::kUv, o), LookupError);
  fallback.verb_count = 3;
  EXPECT_THROW(make_splits(ds, SplitMode::kUv, fallback), RangeError);
}

TEST(Splits, SeenAndUnseenPartitionTheClasses) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> counts(7);
    for (int& c : counts) c = std::uniform_int_distribution<int>(0, 6)(rng);
    const DatasetFile ds = counted_dataset(counts);
    SplitOptions o;
    o.count = std::uniform_int_distribution<int>(0, 7)(rng);
    o.verb_count = 1;
    o.object_count = std::uniform_int_distribution<int>(0, 7)(rng);
    for (SplitMode mode : {SplitMode::kRfUc, SplitMode::kNfUc, SplitMode::kUv, SplitMode::kUo}) {
      const Split s = make_splits(ds, mode, o);
      std::set<int> all(s.seen.begin(), s.seen.end());
      for (int u : s.unseen) ASSERT_TRUE(all.insert(u).second);
      ASSERT_EQ(all.size(), 7u);
      const std::vector<int> tc = class_counts(s.train);
      for (int u : s.unseen) ASSERT_EQ(tc[u], 0);
      for (int c : s.seen) ASSERT_EQ(tc[c], counts[c]);
      EvalProtocol p;
      p.partitions = seen_partitions(7, s.unseen);
      p.validate(7);
    }
  }
}

TEST(Splits, ModeNames) {
  for (const char* n : {"rf_uc", "nf_uc", "uv", "uo"}) EXPECT_EQ(split_mode_name(parse_split_mode(n)), n);
  EXPECT_THROW(parse_split_mode("zero_shot"), UsageError);
}

}  // namespace
