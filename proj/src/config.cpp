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

#include "dhoi/config.hpp"

#include <cctype>
#include <charconv>
#include <functional>
#include <sstream>

#include "dhoi/container.hpp"
#include "dhoi/errors.hpp"

namespace dhoi {
namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Drops a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

struct Value {
  std::string raw;
  std::string where;

  [[noreturn]] void bad(const std::string& what) const {
    throw UsageError(where + ": expected " + what + ", got '" + raw + "'");
  }

  long long integer() const {
    long long v = 0;
    const auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
    if (ec != std::errc() || p != raw.data() + raw.size()) bad("an integer");
    return v;
  }
  double real() const {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(raw, &used);
    } catch (const std::exception&) {
      bad("a number");
    }
    if (used != raw.size()) bad("a number");
    return v;
  }
  std::string string() const {
    if (raw.size() < 2 || raw.front() != '"' || raw.back() != '"') bad("a quoted string");
    std::string out;
    for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
      if (raw[i] == '\\' && i + 2 < raw.size()) ++i;
      out += raw[i];
    }
    return out;
  }
  std::vector<std::string> strings() const {
    if (raw.size() < 2 || raw.front() != '[' || raw.back() != ']') bad("an array of strings");
    std::vector<std::string> out;
    std::stringstream in(raw.substr(1, raw.size() - 2));
    std::string item;
    while (std::getline(in, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      out.push_back(Value{item, where}.string());
    }
    return out;
  }
  int int32() const {
    const long long v = integer();
    if (v < INT32_MIN || v > INT32_MAX) bad("a 32-bit integer");
    return static_cast<int>(v);
  }
};

using Setter = std::function<void(RunConfig&, const Value&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](RunConfig& c, const Value& v) { c.seed = static_cast<std::uint64_t>(v.integer()); }},
      {"backbone", [](RunConfig& c, const Value& v) { c.backbone = v.string(); }},
      {"mock.text_dim", [](RunConfig& c, const Value& v) { c.mock.text_dim = v.int32(); }},
      {"mock.latent_channels", [](RunConfig& c, const Value& v) { c.mock.latent_channels = v.int32(); }},
      {"mock.encoder_hidden", [](RunConfig& c, const Value& v) { c.mock.encoder_hidden = v.int32(); }},
      {"inversion.steps", [](RunConfig& c, const Value& v) { c.inversion.total_steps = v.integer(); }},
      {"inversion.lr", [](RunConfig& c, const Value& v) { c.inversion.lr = v.real(); }},
      {"inversion.batch", [](RunConfig& c, const Value& v) { c.inversion.batch = v.int32(); }},
      {"inversion.timestep", [](RunConfig& c, const Value& v) { c.inversion.cycle.timestep = v.int32(); }},
      {"inversion.sampler_steps", [](RunConfig& c, const Value& v) { c.inversion.cycle.n_steps = v.int32(); }},
      {"inversion.k_obj", [](RunConfig& c, const Value& v) { c.inversion.k_obj = v.int32(); }},
      {"inversion.n_rel", [](RunConfig& c, const Value& v) { c.inversion.n_rel = v.int32(); }},
      {"inversion.tau", [](RunConfig& c, const Value& v) { c.inversion.tau = v.real(); }},
      {"inversion.image_size", [](RunConfig& c, const Value& v) { c.inversion_image_size = v.int32(); }},
      {"train.epochs", [](RunConfig& c, const Value& v) { c.train.epochs = v.int32(); }},
      {"train.lr", [](RunConfig& c, const Value& v) { c.train.lr = v.real(); }},
      {"train.finetune_epochs", [](RunConfig& c, const Value& v) { c.train.finetune_epochs = v.int32(); }},
      {"train.finetune_lr", [](RunConfig& c, const Value& v) { c.train.finetune_lr = v.real(); }},
      {"train.rel_lr", [](RunConfig& c, const Value& v) { c.train.rel_lr = v.real(); }},
      {"train.batch", [](RunConfig& c, const Value& v) { c.train.batch = v.int32(); }},
      {"train.schedule", [](RunConfig& c, const Value& v) { c.train.schedule = v.string(); }},
      {"detector.d_model", [](RunConfig& c, const Value& v) { c.detector.d_model = v.int32(); }},
      {"detector.ffn_dim", [](RunConfig& c, const Value& v) { c.detector.ffn_dim = v.int32(); }},
      {"detector.layers", [](RunConfig& c, const Value& v) { c.detector.layers = v.int32(); }},
      {"detector.n_queries", [](RunConfig& c, const Value& v) { c.detector.n_queries = v.int32(); }},
      {"detector.mask_grid", [](RunConfig& c, const Value& v) { c.detector.mask_grid = v.int32(); }},
      {"detector.tau_init", [](RunConfig& c, const Value& v) { c.detector.tau_init = v.real(); }},
      {"detector.lambda_rel", [](RunConfig& c, const Value& v) { c.detector.lambda_rel = v.real(); }},
      {"detector.w_l1", [](RunConfig& c, const Value& v) { c.detector.w_l1 = v.real(); }},
      {"detector.w_giou", [](RunConfig& c, const Value& v) { c.detector.w_giou = v.real(); }},
      {"detector.short_side", [](RunConfig& c, const Value& v) { c.detector.short_side = v.int32(); }},
      {"detector.long_max", [](RunConfig& c, const Value& v) { c.detector.long_max = v.int32(); }},
      {"detector.feature_timestep", [](RunConfig& c, const Value& v) { c.detector.feature_timestep = v.int32(); }},
      {"detector.neutral_prompt", [](RunConfig& c, const Value& v) { c.detector.neutral_prompt = v.string(); }},
      {"eval.setup",
       [](RunConfig& c, const Value& v) {
         const std::string s = v.string();
         if (s == "default") {
           c.eval.setup = Setup::kDefault;
         } else if (s == "known_object") {
           c.eval.setup = Setup::kKnownObject;
         } else {
           v.bad("\"default\" or \"known_object\"");
         }
       }},
      {"eval.iou_threshold", [](RunConfig& c, const Value& v) { c.eval.iou_threshold = v.real(); }},
      {"eval.rare_below", [](RunConfig& c, const Value& v) { c.eval.rare_below = v.int32(); }},
      {"eval.score_threshold", [](RunConfig& c, const Value& v) { c.eval.score_threshold = v.real(); }},
      {"eval.top_k", [](RunConfig& c, const Value& v) { c.eval.top_k = v.int32(); }},
      {"synth.samples", [](RunConfig& c, const Value& v) { c.synth.samples = v.int32(); }},
      {"synth.image_size", [](RunConfig& c, const Value& v) { c.synth.image_size = v.int32(); }},
      {"synth.steps", [](RunConfig& c, const Value& v) { c.synth.n_steps = v.int32(); }},
      {"synth.threshold", [](RunConfig& c, const Value& v) { c.synth.threshold = v.real(); }},
      {"synth.captions", [](RunConfig& c, const Value& v) { c.synth.captions = v.string(); }},
      {"splits.mode", [](RunConfig& c, const Value& v) { c.split_mode = v.string(); }},
      {"splits.count", [](RunConfig& c, const Value& v) { c.splits.count = v.int32(); }},
      {"splits.verbs", [](RunConfig& c, const Value& v) { c.splits.verbs = v.strings(); }},
      {"splits.objects", [](RunConfig& c, const Value& v) { c.splits.objects = v.strings(); }},
      {"splits.verb_count", [](RunConfig& c, const Value& v) { c.splits.verb_count = v.int32(); }},
      {"splits.object_count", [](RunConfig& c, const Value& v) { c.splits.object_count = v.int32(); }},
  };
  return table;
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw RangeError("config key '" + key + "' " + what);
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::stringstream in(text);
  std::string line, section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string where = origin + ":" + std::to_string(number);
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw UsageError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw UsageError(where + ": expected 'key = value'");
    const std::string full = section.empty() ? key : section + "." + key;
    if (!out.emplace(full, value).second) throw UsageError(where + ": duplicate key '" + full + "'");
  }
  return out;
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
  RunConfig c;
  const auto kv = parse_key_values(text, origin);
  for (const auto& [key, raw] : kv) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw UsageError(origin + ": unknown key '" + key + "'");
    it->second(c, Value{raw, origin + ": " + key});
  }
  c.detector.seed = c.seed;
  c.inversion.seed = c.seed;
  c.mock.seed = c.seed;
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) { return parse_config(read_file(path), path); }

void RunConfig::validate() const {
  require(backbone == "mock", "backbone", "must be \"mock\" (no external adapter is built in)");
  require(inversion.total_steps >= 0, "inversion.steps", "must be >= 0");
  require(inversion.lr > 0, "inversion.lr", "must be > 0");
  require(inversion.batch > 0, "inversion.batch", "must be > 0");
  require(inversion.tau > 0, "inversion.tau", "must be > 0");
  require(inversion_image_size >= 8 && inversion_image_size % 8 == 0, "inversion.image_size",
          "must be a positive multiple of 8");
  require(train.epochs >= 0, "train.epochs", "must be >= 0");
  require(train.finetune_epochs >= 0, "train.finetune_epochs", "must be >= 0");
  require(train.lr > 0, "train.lr", "must be > 0");
  require(train.finetune_lr > 0, "train.finetune_lr", "must be > 0");
  require(train.rel_lr >= 0, "train.rel_lr", "must be >= 0");
  require(train.batch > 0, "train.batch", "must be > 0");
  require(train.schedule == "constant" || train.schedule == "cosine", "train.schedule",
          "must be \"constant\" or \"cosine\"");
  detector.validate();
  require(eval.iou_threshold > 0 && eval.iou_threshold < 1, "eval.iou_threshold", "must lie in (0, 1)");
  require(eval.rare_below >= 0, "eval.rare_below", "must be >= 0");
  require(eval.top_k >= 0, "eval.top_k", "must be >= 0");
  require(synth.samples >= 0, "synth.samples", "must be >= 0");
  require(synth.image_size >= 8 && synth.image_size % 8 == 0, "synth.image_size", "must be a positive multiple of 8");
  require(synth.n_steps > 0, "synth.steps", "must be > 0");
  require(synth.threshold > 0 && synth.threshold <= 1, "synth.threshold", "must lie in (0, 1]");
  parse_split_mode(split_mode);
}

}  // namespace dhoi
