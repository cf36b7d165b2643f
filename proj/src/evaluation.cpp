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

#include "dhoi/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "dhoi/errors.hpp"

namespace dhoi {
namespace {

double overlap(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) return 0.0;
  return iou(a, b);
}

std::vector<int> sorted_ids(std::vector<int> ids) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

}  // namespace

void EvalProtocol::validate(int n_classes) const {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) throw RangeError("iou_threshold must lie in (0, 1)");
  for (const auto& [name, ids] : partitions)
    for (int id : ids)
      if (id < 0 || id >= n_classes) throw ContractError("partition '" + name + "' names unknown class " + std::to_string(id));
  auto disjoint_cover = [&](const char* a, const char* b) {
    const auto ia = partitions.find(a), ib = partitions.find(b);
    if (ia == partitions.end() || ib == partitions.end()) return;
    std::set<int> sa(ia->second.begin(), ia->second.end());
    for (int id : ib->second)
      if (sa.count(id)) throw ContractError(std::string("partitions ") + a + " and " + b + " overlap");
    if (sa.size() + std::set<int>(ib->second.begin(), ib->second.end()).size() != static_cast<std::size_t>(n_classes)) {
      throw ContractError(std::string("partitions ") + a + " and " + b + " do not cover every class");
    }
  };
  disjoint_cover("rare", "non_rare");
  disjoint_cover("seen", "unseen");
}

std::map<std::string, std::vector<int>> rare_partitions(const std::vector<int>& counts, int rare_below) {
  std::map<std::string, std::vector<int>> p{{"full", {}}, {"rare", {}}, {"non_rare", {}}};
  for (int c = 0; c < static_cast<int>(counts.size()); ++c) {
    p["full"].push_back(c);
    p[counts[c] < rare_below ? "rare" : "non_rare"].push_back(c);
  }
  return p;
}

std::map<std::string, std::vector<int>> seen_partitions(int n_classes, const std::vector<int>& unseen) {
  const std::set<int> u(unseen.begin(), unseen.end());
  std::map<std::string, std::vector<int>> p{{"full", {}}, {"seen", {}}, {"unseen", {}}};
  for (int c = 0; c < n_classes; ++c) {
    p["full"].push_back(c);
    p[u.count(c) ? "unseen" : "seen"].push_back(c);
  }
  return p;
}

std::vector<int> class_counts(const DatasetFile& ds) {
  std::vector<int> counts(ds.vocab.hois.size(), 0);
  for (const Annotation& a : ds.annotations)
    for (const HoiAnn& h : a.hois) {
      const int c = ds.hoi_index(h.action, a.objects.at(h.object_idx).category);
      if (c >= 0) ++counts[c];
    }
  return counts;
}

std::vector<bool> match_detections(const std::vector<const Detection*>& dets, const std::vector<GtPair>& gts,
                                   double iou_threshold) {
  std::vector<bool> used(gts.size(), false), flags;
  for (const Detection* d : dets) {
    int best = -1;
    double best_ov = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double ov = std::min(overlap(d->human_box, gts[g].human), overlap(d->object_box, gts[g].object));
      if (ov > best_ov) {
        best_ov = ov;
        best = static_cast<int>(g);
      }
    }
    const bool tp = best >= 0 && best_ov >= iou_threshold;
    if (tp) used[best] = true;
    flags.push_back(tp);
  }
  return flags;
}

double average_precision(const std::vector<bool>& flags, int n_gt) {
  if (n_gt < 0) throw RangeError("n_gt must be >= 0");
  if (n_gt == 0 || flags.empty()) return 0.0;
  std::vector<double> rec, prec;
  int tp = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    tp += flags[i];
    rec.push_back(double(tp) / n_gt);
    prec.push_back(double(tp) / double(i + 1));
  }
  for (int i = static_cast<int>(prec.size()) - 2; i >= 0; --i) prec[i] = std::max(prec[i], prec[i + 1]);
  double ap = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    ap += (rec[i] - prev) * prec[i];
    prev = rec[i];
  }
  return ap;
}

EvalReport evaluate(const std::vector<Detection>& dets, const DatasetFile& gt, const EvalProtocol& protocol) {
  const int n_classes = static_cast<int>(gt.vocab.hois.size());
  protocol.validate(n_classes);
  std::map<int, std::size_t> image_pos;
  for (std::size_t i = 0; i < gt.images.size(); ++i) image_pos[gt.images[i].id] = i;

  // gts[class][image] and the object categories present per image.
  std::vector<std::map<int, std::vector<GtPair>>> gts(n_classes);
  std::map<int, std::set<std::string>> objects_in;
  for (const Annotation& a : gt.annotations) {
    for (const ObjectAnn& o : a.objects) objects_in[a.image_id].insert(o.category);
    for (const HoiAnn& h : a.hois) {
      const ObjectAnn& o = a.objects.at(h.object_idx);
      const int c = gt.hoi_index(h.action, o.category);
      if (c < 0) throw ContractError("ground truth uses unknown class (" + h.action + ", " + o.category + ")");
      gts[c][a.image_id].push_back({a.humans.at(h.human_idx), o.box});
    }
  }

  std::vector<std::vector<const Detection*>> by_class(n_classes);
  for (const Detection& d : dets) {
    if (d.hoi_class < 0 || d.hoi_class >= n_classes) {
      throw ContractError("detection has unknown class id " + std::to_string(d.hoi_class));
    }
    if (!image_pos.count(d.image_id)) throw ContractError("detection on unknown image " + std::to_string(d.image_id));
    by_class[d.hoi_class].push_back(&d);
  }

  EvalReport report;
  report.protocol = protocol.setup == Setup::kDefault ? "default" : "known_object";
  for (int c = 0; c < n_classes; ++c) {
    std::vector<const Detection*> cand;
    for (const Detection* d : by_class[c]) {
      if (protocol.setup == Setup::kKnownObject) {
        const auto it = objects_in.find(d->image_id);
        if (it == objects_in.end() || !it->second.count(gt.vocab.hois[c].object)) continue;
      }
      cand.push_back(d);
    }
    std::stable_sort(cand.begin(), cand.end(),
                     [](const Detection* a, const Detection* b) { return a->hoi_score > b->hoi_score; });
    // Greedy matching is per image, so split by image and reassemble in order.
    std::map<int, std::vector<std::size_t>> per_image;
    for (std::size_t i = 0; i < cand.size(); ++i) per_image[cand[i]->image_id].push_back(i);
    std::vector<bool> flags(cand.size(), false);
    for (const auto& [img, idx] : per_image) {
      std::vector<const Detection*> ds;
      for (std::size_t i : idx) ds.push_back(cand[i]);
      const auto it = gts[c].find(img);
      const std::vector<bool> f =
          match_detections(ds, it == gts[c].end() ? std::vector<GtPair>{} : it->second, protocol.iou_threshold);
      for (std::size_t k = 0; k < idx.size(); ++k) flags[idx[k]] = f[k];
    }
    ClassResult r;
    r.hoi_id = c;
    for (const auto& [img, pairs] : gts[c]) r.n_gt += static_cast<int>(pairs.size());
    r.n_det = static_cast<int>(cand.size());
    r.evaluated = r.n_gt > 0 || r.n_det > 0;
    r.ap = average_precision(flags, r.n_gt);
    report.per_class.push_back(r);
  }

  std::map<std::string, std::vector<int>> parts = protocol.partitions;
  if (!parts.count("full")) {
    std::vector<int> all(n_classes);
    std::iota(all.begin(), all.end(), 0);
    parts["full"] = all;
  }
  for (const auto& [name, ids] : parts) {
    double total = 0.0;
    int n = 0;
    for (int id : sorted_ids(ids)) {
      if (!report.per_class[id].evaluated) continue;
      total += report.per_class[id].ap;
      ++n;
    }
    if (n > 0) report.aggregates[name] = total / n;
  }
  return report;
}

nlohmann::ordered_json to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["protocol"] = report.protocol;
  j["per_class"] = nlohmann::ordered_json::array();
  for (const ClassResult& r : report.per_class) {
    if (!r.evaluated) continue;
    j["per_class"].push_back({{"hoi_id", r.hoi_id}, {"ap", r.ap}, {"n_gt", r.n_gt}});
  }
  j["aggregates"] = nlohmann::ordered_json::object();
  for (const auto& [name, v] : report.aggregates) j["aggregates"][name] = v;
  return j;
}

std::string format_report(const EvalReport& report, const Vocab& vocab) {
  std::ostringstream out;
  char line[160];
  out << "protocol: " << report.protocol << "\n";
  std::snprintf(line, sizeof line, "%-5s %-28s %6s %8s\n", "id", "class", "n_gt", "AP");
  out << line;
  for (const ClassResult& r : report.per_class) {
    if (!r.evaluated) continue;
    const HoiClass& h = vocab.hois.at(r.hoi_id);
    std::snprintf(line, sizeof line, "%-5d %-28s %6d %8.4f\n", r.hoi_id, (h.action + " " + h.object).c_str(), r.n_gt,
                  r.ap);
    out << line;
  }
  for (const auto& [name, v] : report.aggregates) {
    std::snprintf(line, sizeof line, "mAP %-10s %8.4f\n", name.c_str(), v);
    out << line;
  }
  return out.str();
}

SplitMode parse_split_mode(const std::string& name) {
  if (name == "rf_uc") return SplitMode::kRfUc;
  if (name == "nf_uc") return SplitMode::kNfUc;
  if (name == "uv") return SplitMode::kUv;
  if (name == "uo") return SplitMode::kUo;
  throw UsageError("unknown split mode '" + name + "' (rf_uc, nf_uc, uv, uo)");
}

std::string split_mode_name(SplitMode mode) {
  switch (mode) {
    case SplitMode::kRfUc: return "rf_uc";
    case SplitMode::kNfUc: return "nf_uc";
    case SplitMode::kUv: return "uv";
    case SplitMode::kUo: return "uo";
  }
  return "";
}

Split make_splits(const DatasetFile& ds, SplitMode mode, const SplitOptions& options) {
  const Vocab& v = ds.vocab;
  const int n = static_cast<int>(v.hois.size());
  const std::vector<int> counts = class_counts(ds);
  std::set<int> unseen;

  if (mode == SplitMode::kRfUc || mode == SplitMode::kNfUc) {
    if (options.count < 0 || options.count > n) {
      throw RangeError("unseen count " + std::to_string(options.count) + " exceeds the " + std::to_string(n) +
                       " triplet classes");
    }
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    const bool rare_first = mode == SplitMode::kRfUc;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return rare_first ? counts[a] < counts[b] : counts[a] > counts[b];
    });
    unseen.insert(order.begin(), order.begin() + options.count);
  } else {
    const bool verbs = mode == SplitMode::kUv;
    const std::vector<std::string>& names = verbs ? v.actions : v.objects;
    std::vector<std::string> chosen = verbs ? options.verbs : options.objects;
    for (const std::string& c : chosen)
      if (std::find(names.begin(), names.end(), c) == names.end()) {
        throw LookupError(std::string("unknown ") + (verbs ? "verb" : "object") + " '" + c + "'");
      }
    if (chosen.empty()) {
      // No names given: take the least frequent ones, ties by vocabulary order.
      const int k = verbs ? options.verb_count : options.object_count;
      if (k < 0 || k > static_cast<int>(names.size())) {
        throw RangeError("requested " + std::to_string(k) + " of " + std::to_string(names.size()) +
                         (verbs ? " verbs" : " objects"));
      }
      std::vector<int> freq(names.size(), 0);
      for (int c = 0; c < n; ++c) {
        const std::string& key = verbs ? v.hois[c].action : v.hois[c].object;
        freq[std::find(names.begin(), names.end(), key) - names.begin()] += counts[c];
      }
      std::vector<int> order(names.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return freq[a] < freq[b]; });
      for (int i = 0; i < k; ++i) chosen.push_back(names[order[i]]);
    }
    const std::set<std::string> pick(chosen.begin(), chosen.end());
    for (int c = 0; c < n; ++c)
      if (pick.count(verbs ? v.hois[c].action : v.hois[c].object)) unseen.insert(c);
  }

  Split s;
  for (int c = 0; c < n; ++c) (unseen.count(c) ? s.unseen : s.seen).push_back(c);
  s.train = ds;
  for (Annotation& a : s.train.annotations) {
    std::vector<HoiAnn> kept;
    for (const HoiAnn& h : a.hois)
      if (!unseen.count(ds.hoi_index(h.action, a.objects.at(h.object_idx).category))) kept.push_back(h);
    a.hois = std::move(kept);
  }
  return s;
}

}  // namespace dhoi
