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

#include "dhoi/cli.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "dhoi/container.hpp"
#include "dhoi/errors.hpp"
#include "dhoi/image.hpp"
#include "dhoi/inversion.hpp"
#include "dhoi/rng.hpp"
#include "dhoi/synthesis.hpp"
#include "json.hpp"

namespace dhoi {
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// Non-finite values become null so the logs stay valid JSON.
ojson number(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

void write_json(const std::string& path, const ojson& j) { write_file_atomic(path, j.dump(1) + "\n"); }

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

Image load_image(const std::string& dataset_path, const ImageEntry& e) {
  const Image img = read_png(resolve_image_path(dataset_path, e));
  if (img.width != e.width || img.height != e.height) {
    throw SchemaError(dataset_path + ": image " + std::to_string(e.id) + " is " + std::to_string(img.width) + "x" +
                      std::to_string(img.height) + " on disk but " + std::to_string(e.width) + "x" +
                      std::to_string(e.height) + " in the dataset");
  }
  return img;
}

Box scale_box(const Box& b, double sx, double sy) { return {b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy}; }

void add_samples(const Backbone& bb, const RunConfig& config, const std::string& path, const HOIPromptBank& bank,
                 std::vector<TrainSample>& out) {
  const DatasetFile ds = load_dataset(path);
  std::map<int, const Annotation*> by_image;
  for (const Annotation& a : ds.annotations) by_image[a.image_id] = &a;
  for (const ImageEntry& e : ds.images) {
    TrainSample s;
    s.features = extract_features(bb, load_image(path, e), config.detector);
    s.width = e.width;
    s.height = e.height;
    s.image_id = e.id;
    const auto it = by_image.find(e.id);
    if (it != by_image.end()) s.targets = targets_from_annotation(*it->second, e, bank);
    out.push_back(std::move(s));
  }
}

std::string relative_to(const std::string& target, const std::string& dir) {
  return fs::relative(fs::absolute(target), fs::absolute(dir)).generic_string();
}

// Copy of ds whose image paths resolve from out_dir.
DatasetFile relocate(DatasetFile ds, const std::string& from_path, const std::string& out_dir) {
  for (ImageEntry& e : ds.images) e.path = relative_to(resolve_image_path(from_path, e), out_dir);
  return ds;
}

}  // namespace

MockBackbone make_backbone(const RunConfig& config) {
  MockConfig mc = config.mock;
  mc.seed = config.seed;
  const char* cache = std::getenv("DHOI_CACHE");
  if (!cache || !*cache) return MockBackbone(mc);
  ensure_dir(cache);
  char name[96];
  std::snprintf(name, sizeof name, "mock-%d-%d-%d-%d-%d-%d-%d-%016llx.dhb", mc.text_dim, mc.latent_channels,
                mc.encoder_hidden, mc.widths[0], mc.widths[1], mc.widths[2], mc.widths[3],
                static_cast<unsigned long long>(mc.seed));
  return load_or_create_mock(mc, (fs::path(cache) / name).string());
}

void cmd_invert(const RunConfig& config, const std::string& dataset, const std::string& out) {
  const DatasetFile ds = load_dataset(dataset);
  const MockBackbone bb = make_backbone(config);
  std::map<int, const ImageEntry*> images;
  for (const ImageEntry& e : ds.images) images[e.id] = &e;

  std::vector<HOITripletLatents> pool;
  int skipped = 0;
  const int size = config.inversion_image_size;
  for (const Annotation& a : ds.annotations) {
    if (a.hois.empty()) continue;
    const ImageEntry& e = *images.at(a.image_id);
    const ResizePlan plan = plan_resize(e.height, e.width, size, size);
    const Image img = resize_bilinear(load_image(dataset, e), plan.height, plan.width);
    for (const HoiAnn& h : a.hois) {
      const ObjectAnn& o = a.objects.at(h.object_idx);
      Box b = scale_box(o.box, plan.scale_x, plan.scale_y);
      b.x2 = std::min(b.x2, double(plan.width));
      b.y2 = std::min(b.y2, double(plan.height));
      try {
        pool.push_back(make_triplet(bb, img, static_cast<int>(pool.size()), b, h.action, o.category));
      } catch (const InputError&) {
        ++skipped;  // object vanishes at latent resolution
      }
    }
  }
  if (pool.empty()) throw InputError(dataset + ": no HOI instance survives resizing for inversion");

  InversionConfig ic = config.inversion;
  ic.seed = config.seed;
  RelationInverter inv(bb, std::move(pool), initial_table(bb, ds.vocab.actions), ic);
  ojson log;
  log["instances"] = inv.pool().size();
  log["skipped"] = skipped;
  log["steps"] = ojson::array();
  for (long s = 0; s < ic.total_steps; ++s) {
    const InversionStepResult r = inv.step();
    log["steps"].push_back({{"step", s},
                            {"consistency", number(r.consistency)},
                            {"contrastive", number(r.contrastive)},
                            {"lambda1", r.lambda1},
                            {"total", number(r.total)}});
  }
  inv.table().save(out);
  write_json(out + ".log.json", log);
}

void cmd_synthesize(const RunConfig& config, const std::string& table, const std::string& vocab_dataset,
                    const std::string& out_dir) {
  const RelationTable rt = RelationTable::load(table);
  const DatasetFile ds = load_dataset(vocab_dataset);
  const MockBackbone bb = make_backbone(config);
  std::vector<PromptRecord> corpus;
  if (!config.synth.captions.empty()) {
    std::vector<std::string> texts;
    for (const Caption& c : read_captions(config.synth.captions)) texts.push_back(c.caption);
    corpus = filter_captions(texts, Lexicons::with_defaults(ds.vocab.actions, ds.vocab.objects));
    // Captions may pair known words into triplets outside the vocabulary.
    std::erase_if(corpus, [&](const PromptRecord& r) { return ds.hoi_index(r.action, r.object_class) < 0; });
  } else {
    corpus = template_prompts(ds.vocab.hois, default_human_words(), default_scenes());
  }
  ensure_dir((fs::path(out_dir) / "images").string());
  SynthesisOptions opt;
  opt.generation.image_size = config.synth.image_size;
  opt.generation.n_steps = config.synth.n_steps;
  opt.threshold_ratio = config.synth.threshold;
  opt.vocab = ds.vocab;
  const SynthesisResult r = build_dataset(corpus, rt, bb, out_dir, config.synth.samples, config.seed, opt);
  std::cout << "synthesized " << r.dataset.images.size() << " images, skipped " << r.dataset.skipped
            << " without a box, from " << corpus.size() << " prompts\n";
}

void cmd_train(const RunConfig& config, const TrainInputs& inputs, const std::string& out) {
  const DatasetFile target = load_dataset(inputs.target);
  const MockBackbone bb = make_backbone(config);
  RelationTable table = inputs.table.empty() ? initial_table(bb, target.vocab.actions) : RelationTable::load(inputs.table);
  const HOIPromptBank bank = build_prompt_bank(bb, table, target.vocab.objects, target.vocab.hois);
  for (const std::string& w : bank.warnings) std::cerr << "warning: " << w << "\n";

  DetectorConfig dc = config.detector;
  dc.seed = config.seed;
  Detector det(dc, bb, bank);

  std::vector<TrainSample> target_pool, joint_pool;
  add_samples(bb, config, inputs.target, bank, target_pool);
  joint_pool = target_pool;
  for (const std::string& p : inputs.synthetic) add_samples(bb, config, p, bank, joint_pool);

  TrainConfig tc;
  tc.lr = config.train.lr;
  tc.rel_lr = config.train.rel_lr;
  tc.batch = config.train.batch;
  tc.seed = config.seed;
  DetectorTrainer trainer(det, bb, table, target.vocab.objects, target.vocab.hois, tc);

  ojson curve = ojson::array();
  auto run_phase = [&](const char* name, const std::vector<TrainSample>& pool, int epochs, double lr) {
    const long per_epoch = (static_cast<long>(pool.size()) + tc.batch - 1) / tc.batch;
    const long total = per_epoch * epochs;
    long done = 0;
    for (int e = 0; e < epochs; ++e) {
      if (config.train.schedule == "cosine") {
        // The lr is held per epoch: epoch() runs every batch at one rate.
        trainer.set_lr(cosine_lr(lr, done, total));
      } else {
        trainer.set_lr(lr);
      }
      for (const TrainStepResult& r : trainer.epoch(pool)) {
        curve.push_back({{"phase", name},
                         {"step", r.step},
                         {"epoch", e},
                         {"hoi", r.loss.hoi},
                         {"ins", r.loss.ins},
                         {"det", r.loss.det},
                         {"rel", r.loss.rel},
                         {"total", r.loss.total}});
        ++done;
      }
    }
  };
  run_phase("joint", joint_pool, config.train.epochs, config.train.lr);
  run_phase("target", target_pool, config.train.finetune_epochs, config.train.finetune_lr);

  write_file_atomic(out, det.serialize(table, target.vocab));
  write_json(out + ".loss.json", curve);
}

EvalReport cmd_eval(const RunConfig& config, const EvalInputs& inputs, const std::string& out_dir) {
  const Detector::Loaded ck = Detector::deserialize(read_file(inputs.checkpoint));
  const DatasetFile ds = load_dataset(inputs.dataset);
  if (ck.vocab.hois != ds.vocab.hois || ck.vocab.objects != ds.vocab.objects) {
    throw ContractError("checkpoint vocabulary (" + std::to_string(ck.vocab.hois.size()) + " triplets) does not match " +
                        inputs.dataset + " (" + std::to_string(ds.vocab.hois.size()) + " triplets)");
  }
  const MockBackbone bb = make_backbone(config);
  const HOIPromptBank bank = build_prompt_bank(bb, ck.table, ck.vocab.objects, ck.vocab.hois);

  PredictOptions po;
  po.score_threshold = config.eval.score_threshold;
  po.top_k = config.eval.top_k;
  std::vector<Detection> dets;
  std::ostringstream jsonl;
  for (const ImageEntry& e : ds.images) {
    for (Detection d : predict(ck.detector, bb, bank, load_image(inputs.dataset, e), po)) {
      d.image_id = e.id;
      const ojson row = {{"image_id", d.image_id},
                         {"hoi_id", d.hoi_class},
                         {"score", d.hoi_score},
                         {"human_box", {d.human_box.x1, d.human_box.y1, d.human_box.x2, d.human_box.y2}},
                         {"object_box", {d.object_box.x1, d.object_box.y1, d.object_box.x2, d.object_box.y2}},
                         {"object_class", d.object_class},
                         {"object_score", d.object_score}};
      jsonl << row.dump() << "\n";
      dets.push_back(std::move(d));
    }
  }

  EvalProtocol protocol;
  protocol.setup = config.eval.setup;
  protocol.iou_threshold = config.eval.iou_threshold;
  const int n = static_cast<int>(ds.vocab.hois.size());
  if (!inputs.split.empty()) {
    std::vector<int> unseen;
    try {
      unseen = nlohmann::json::parse(read_file(inputs.split)).at("unseen").get<std::vector<int>>();
    } catch (const nlohmann::json::exception& ex) {
      throw SchemaError(inputs.split + ": " + ex.what());
    }
    protocol.partitions = seen_partitions(n, unseen);
  } else {
    const std::vector<int> counts = class_counts(inputs.train.empty() ? ds : load_dataset(inputs.train));
    if (static_cast<int>(counts.size()) != n) throw ContractError(inputs.train + ": vocabulary differs from the evaluated dataset");
    protocol.partitions = rare_partitions(counts, config.eval.rare_below);
  }
  const EvalReport report = evaluate(dets, ds, protocol);

  ensure_dir(out_dir);
  const std::string text = format_report(report, ds.vocab);
  write_json((fs::path(out_dir) / "report.json").string(), to_json(report));
  write_file_atomic((fs::path(out_dir) / "report.txt").string(), text);
  write_file_atomic((fs::path(out_dir) / "predictions.jsonl").string(), jsonl.str());
  std::cout << text;
  return report;
}

Split cmd_splits(const RunConfig& config, const std::string& dataset, const std::string& out_dir) {
  const DatasetFile ds = load_dataset(dataset);
  const SplitMode mode = parse_split_mode(config.split_mode);
  Split s = make_splits(ds, mode, config.splits);
  ensure_dir(out_dir);
  save_dataset((fs::path(out_dir) / "train.json").string(), relocate(s.train, dataset, out_dir));
  save_dataset((fs::path(out_dir) / "eval.json").string(), relocate(ds, dataset, out_dir));
  ojson m;
  m["mode"] = split_mode_name(mode);
  m["seen"] = s.seen;
  m["unseen"] = s.unseen;
  m["unseen_names"] = ojson::array();
  for (int c : s.unseen) m["unseen_names"].push_back(ds.vocab.hois[c].action + " " + ds.vocab.hois[c].object);
  write_json((fs::path(out_dir) / "split.json").string(), m);
  return s;
}

}  // namespace dhoi
