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

#include "dhoi/synthesis.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>

#include "dhoi/errors.hpp"
#include "dhoi/kernels.hpp"
#include "dhoi/rng.hpp"
#include "json.hpp"

namespace dhoi {
namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// First position where the bare words match seq, or -1.
int find_sequence(const std::vector<std::string>& bare, const std::vector<std::vector<std::string>>& alternatives,
                  int& length) {
  for (int i = 0; i < static_cast<int>(bare.size()); ++i) {
    for (const auto& seq : alternatives) {
      const int n = static_cast<int>(seq.size());
      if (i + n > static_cast<int>(bare.size())) continue;
      if (std::equal(seq.begin(), seq.end(), bare.begin() + i)) {
        length = n;
        return i;
      }
    }
  }
  return -1;
}

std::vector<std::vector<std::string>> action_patterns(const std::string& action, const Lexicons& lex) {
  const std::vector<std::string> parts = split(action, '_');
  std::vector<std::vector<std::string>> out;
  if (parts.empty()) return out;
  for (const std::string& form : verb_forms(parts[0], lex)) {
    std::vector<std::string> seq = parts;
    seq[0] = form;
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<std::vector<std::string>> object_patterns(const std::string& object) {
  std::vector<std::string> parts = split(object, '_');
  if (parts.empty()) return {};
  std::vector<std::vector<std::string>> out = {parts};
  const std::string last = parts.back();
  for (const std::string& plural : {last + "s", last + "es"}) {
    parts.back() = plural;
    out.push_back(parts);
  }
  return out;
}

const std::map<std::string, std::vector<std::string>>& irregular_verbs() {
  static const std::map<std::string, std::vector<std::string>> table = {
      {"ride", {"rode", "ridden"}},   {"hold", {"held"}},           {"sit", {"sat"}},
      {"eat", {"ate", "eaten"}},      {"throw", {"threw", "thrown"}}, {"catch", {"caught"}},
      {"fly", {"flew", "flown"}},     {"drive", {"drove", "driven"}}, {"swing", {"swung"}},
      {"wear", {"wore", "worn"}},     {"run", {"ran"}},             {"feed", {"fed"}},
      {"buy", {"bought"}},            {"make", {"made"}},           {"lie", {"lay", "lying"}},
      {"hit", {"hit"}},               {"cut", {"cut"}},             {"stand", {"stood"}},
      {"blow", {"blew", "blown"}},    {"hang", {"hung"}},           {"break", {"broke", "broken"}},
      {"teach", {"taught"}},          {"sell", {"sold"}},           {"sleep", {"slept"}},
      {"drink", {"drank", "drunk"}},  {"sign", {"signed"}},         {"swim", {"swam", "swum"}}};
  return table;
}

double max_inside(const Matrix& map, const CellBox& b) {
  double m = 0.0;
  for (int y = b.y_min; y <= b.y_max; ++y)
    for (int x = b.x_min; x <= b.x_max; ++x) m = std::max(m, map(y, x));
  return m;
}

std::string object_words(const std::string& object) {
  std::string s = object;
  std::replace(s.begin(), s.end(), '_', ' ');
  return s;
}

}  // namespace

std::string PromptRecord::text() const {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) s += ' ';
    s += words[i];
  }
  return s;
}

void PromptRecord::validate() const {
  const int n = static_cast<int>(words.size());
  if (action.empty()) throw ContractError("prompt record without action");
  if (object_class.empty()) throw ContractError("prompt record without object class");
  auto ok = [n](const WordSpan& s) { return s.begin >= 0 && s.begin < s.end && s.end <= n; };
  if (!ok(placeholder_span)) throw ContractError("placeholder span outside the prompt");
  if (!ok(object_span)) throw ContractError("object span outside the prompt");
  if (placeholder_span.begin < object_span.end && object_span.begin < placeholder_span.end) {
    throw ContractError("object and action spans overlap");
  }
}

std::vector<std::string> default_human_words() {
  return {"man", "woman", "boy", "girl", "person", "people", "child", "men", "women"};
}

Lexicons Lexicons::with_defaults(std::vector<std::string> actions, std::vector<std::string> objects) {
  Lexicons lex;
  lex.humans = default_human_words();
  lex.actions = std::move(actions);
  lex.objects = std::move(objects);
  lex.inflections = irregular_verbs();
  return lex;
}

std::string bare_word(const std::string& word) {
  std::size_t b = 0, e = word.size();
  while (b < e && !std::isalnum(static_cast<unsigned char>(word[b]))) ++b;
  while (e > b && !std::isalnum(static_cast<unsigned char>(word[e - 1]))) --e;
  std::string s = word.substr(b, e - b);
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> verb_forms(const std::string& verb, const Lexicons& lex) {
  std::vector<std::string> forms = {verb};
  if (verb.empty()) return forms;
  const char last = verb.back();
  const bool sibilant = last == 's' || last == 'x' || last == 'o' || ends_with(verb, "ch") || ends_with(verb, "sh");
  const bool cons_y = last == 'y' && verb.size() > 1 && !is_vowel(verb[verb.size() - 2]);
  forms.push_back(cons_y ? verb.substr(0, verb.size() - 1) + "ies" : verb + (sibilant ? "es" : "s"));
  if (ends_with(verb, "ie")) {
    forms.push_back(verb.substr(0, verb.size() - 2) + "ying");
  } else if (last == 'e' && !ends_with(verb, "ee")) {
    forms.push_back(verb.substr(0, verb.size() - 1) + "ing");
  } else {
    forms.push_back(verb + "ing");
  }
  if (last == 'e') {
    forms.push_back(verb + "d");
  } else if (cons_y) {
    forms.push_back(verb.substr(0, verb.size() - 1) + "ied");
  } else {
    forms.push_back(verb + "ed");
  }
  // Consonant doubling (sit -> sitting); the extra form is harmless when the
  // verb does not double.
  if (verb.size() >= 3 && !is_vowel(last) && last != 'w' && last != 'x' && last != 'y' &&
      is_vowel(verb[verb.size() - 2]) && !is_vowel(verb[verb.size() - 3])) {
    forms.push_back(verb + last + "ing");
    forms.push_back(verb + last + "ed");
  }
  if (auto it = lex.inflections.find(verb); it != lex.inflections.end()) {
    forms.insert(forms.end(), it->second.begin(), it->second.end());
  }
  return forms;
}

std::vector<PromptRecord> filter_captions(const std::vector<std::string>& captions, const Lexicons& lex) {
  if (lex.humans.empty() || lex.actions.empty()) throw ContractError("filter_captions needs non-empty lexicons");
  const std::set<std::string> humans(lex.humans.begin(), lex.humans.end());
  std::vector<std::vector<std::vector<std::string>>> action_pats, object_pats;
  for (const auto& a : lex.actions) action_pats.push_back(action_patterns(a, lex));
  for (const auto& o : lex.objects) object_pats.push_back(object_patterns(o));

  std::vector<PromptRecord> out;
  for (const std::string& caption : captions) {
    const std::vector<std::string> words = split_ws(caption);
    std::vector<std::string> bare;
    for (const auto& w : words) bare.push_back(bare_word(w));
    auto human = std::find_if(bare.begin(), bare.end(), [&](const std::string& w) { return humans.count(w) != 0; });
    if (human == bare.end()) continue;
    for (std::size_t a = 0; a < lex.actions.size(); ++a) {
      int alen = 0;
      const int apos = find_sequence(bare, action_pats[a], alen);
      if (apos < 0) continue;
      for (std::size_t o = 0; o < lex.objects.size(); ++o) {
        int olen = 0;
        const int opos = find_sequence(bare, object_pats[o], olen);
        if (opos < 0) continue;
        if (opos < apos + alen && apos < opos + olen) continue;
        PromptRecord rec;
        rec.words = words;
        rec.action = lex.actions[a];
        rec.object_class = lex.objects[o];
        rec.human_word = *human;
        rec.placeholder_span = {apos, apos + alen};
        rec.object_span = {opos, opos + olen};
        out.push_back(std::move(rec));
      }
    }
  }
  return out;
}

std::pair<PromptRecord, PromptRecord> swap_clauses(const PromptRecord& a, const PromptRecord& b) {
  if (a.action != b.action) {
    throw ContractError("swap_clauses needs a shared action, got '" + a.action + "' and '" + b.action + "'");
  }
  auto splice = [](const PromptRecord& head, const PromptRecord& tail) {
    PromptRecord r = head;
    const int cut_h = head.placeholder_span.end;
    const int cut_t = tail.placeholder_span.end;
    r.words.assign(head.words.begin(), head.words.begin() + cut_h);
    r.words.insert(r.words.end(), tail.words.begin() + cut_t, tail.words.end());
    if (tail.object_span.begin >= cut_t) {
      r.object_class = tail.object_class;
      r.object_span = {tail.object_span.begin - cut_t + cut_h, tail.object_span.end - cut_t + cut_h};
    } else if (head.object_span.end > cut_h) {
      throw ContractError("clause swap would drop the object from '" + head.text() + "'");
    }
    return r;
  };
  return {splice(a, b), splice(b, a)};
}

std::string substitute_placeholder(const PromptRecord& rec) {
  rec.validate();
  const auto& first = rec.words[rec.placeholder_span.begin];
  const auto& last = rec.words[rec.placeholder_span.end - 1];
  std::size_t lead = 0;
  while (lead < first.size() && !std::isalnum(static_cast<unsigned char>(first[lead]))) ++lead;
  std::size_t trail = last.size();
  while (trail > 0 && !std::isalnum(static_cast<unsigned char>(last[trail - 1]))) --trail;
  std::vector<std::string> words(rec.words.begin(), rec.words.begin() + rec.placeholder_span.begin);
  words.push_back(first.substr(0, lead) + make_placeholder(rec.action) + last.substr(trail));
  words.insert(words.end(), rec.words.begin() + rec.placeholder_span.end, rec.words.end());
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) s += (i ? " " : "") + words[i];
  return s;
}

std::vector<std::string> default_scenes() { return {"in a park", "on a street", "in a room", "on a field"}; }

std::vector<PromptRecord> template_prompts(const std::vector<HoiClass>& hois, const std::vector<std::string>& humans,
                                           const std::vector<std::string>& scenes) {
  std::vector<PromptRecord> out;
  const std::vector<std::string> scene_list = scenes.empty() ? std::vector<std::string>{""} : scenes;
  for (const HoiClass& h : hois)
    for (const std::string& human : humans)
      for (const std::string& scene : scene_list) {
        PromptRecord r;
        r.words = {"A", human};
        const auto verb = split(h.action, '_');
        r.placeholder_span = {2, 2 + static_cast<int>(verb.size())};
        r.words.insert(r.words.end(), verb.begin(), verb.end());
        r.words.push_back("a");
        const auto obj = split(h.object, '_');
        r.object_span = {static_cast<int>(r.words.size()), static_cast<int>(r.words.size() + obj.size())};
        r.words.insert(r.words.end(), obj.begin(), obj.end());
        for (const auto& w : split_ws(scene)) r.words.push_back(w);
        r.words.back() += ".";
        r.action = h.action;
        r.object_class = h.object;
        r.human_word = human;
        out.push_back(std::move(r));
      }
  return out;
}

std::vector<Caption> read_captions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open captions file " + path);
  std::vector<Caption> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("caption") || !j["caption"].is_string()) {
      throw SchemaError(where + ": expected {\"id\": string, \"caption\": string}");
    }
    Caption c;
    c.caption = j["caption"].get<std::string>();
    if (j.contains("id")) c.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    out.push_back(std::move(c));
  }
  return out;
}

Matrix token_attention_map(const std::vector<Matrix>& attention, const std::vector<LevelShape>& levels, int column,
                           int height, int width) {
  if (attention.size() != levels.size() || attention.empty()) throw DimensionError("attention and level count differ");
  Matrix acc(height * width, 1);
  for (std::size_t l = 0; l < attention.size(); ++l) {
    const Matrix& a = attention[l];
    if (a.rows() != levels[l].cells() || column < 0 || column >= a.cols()) {
      throw DimensionError("attention map does not match level " + std::to_string(l));
    }
    Matrix col(a.rows(), 1);
    for (int r = 0; r < a.rows(); ++r) col(r, 0) = a(r, column);
    const Matrix up = kernels::matmul(bilinear_matrix(levels[l].height, levels[l].width, height, width), col);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += up[i] / attention.size();
  }
  const auto [lo, hi] = std::minmax_element(acc.values().begin(), acc.values().end());
  const double mn = *lo, range = *hi - *lo;
  Matrix map(height, width);
  if (range > 0.0) {
    for (std::size_t i = 0; i < acc.size(); ++i) map[i] = (acc[i] - mn) / range;
  }
  return map;
}

GeneratedSample generate_sample(const PromptRecord& rec, const RelationTable& table, const Backbone& backbone,
                                std::uint64_t seed, const std::string& human_word, const std::string& object_word,
                                const GenerationSettings& settings) {
  table.index_of(rec.action);
  const int size = settings.image_size;
  if (size <= 0 || size % 8 != 0) throw InputError("image size must be a positive multiple of 8");
  const PromptEmbedding p = backbone.encode_text(substitute_placeholder(rec), table);
  const Matrix human = backbone.encode_text(human_word).tokens;
  const Matrix object = backbone.encode_text(object_words(object_word)).tokens;

  GeneratedSample out;
  out.prompt.source_text = p.source_text + " + [" + human_word + "; " + object_word + "]";
  out.prompt.tokens = Matrix(p.rows() + 2, backbone.text_dim());
  for (int r = 0; r < p.rows(); ++r)
    for (int c = 0; c < p.tokens.cols(); ++c) out.prompt.tokens(r, c) = p.tokens(r, c);
  auto mean_into = [&](const Matrix& rows, int dst) {
    for (int r = 0; r < rows.rows(); ++r)
      for (int c = 0; c < rows.cols(); ++c) out.prompt.tokens(dst, c) += rows(r, c) / rows.rows();
  };
  mean_into(human, p.rows());
  mean_into(object, p.rows() + 1);

  const int lh = size / 8;
  const LatentGrid zT(lh, lh, 8, gaussian_matrix(lh * lh, backbone.latent_channels(), seed));
  DenoiserOutput last;
  const LatentGrid z0 = backbone.denoise_iterative(zT, out.prompt, settings.n_steps, settings.schedule, -1, &last);
  out.image = backbone.decode_latent(z0);
  out.attention = last.attention;
  const std::vector<LevelShape> levels = backbone.level_shapes(lh, lh);
  out.human_map = token_attention_map(out.attention, levels, p.rows(), out.image.height, out.image.width);
  out.object_map = token_attention_map(out.attention, levels, p.rows() + 1, out.image.height, out.image.width);
  return out;
}

CellBox extract_box(const Matrix& map, double threshold_ratio) {
  if (!(threshold_ratio > 0.0 && threshold_ratio <= 1.0)) throw RangeError("threshold ratio must be in (0, 1]");
  if (map.size() == 0) throw ExtractionError("empty probability map");
  if (!all_finite(map)) throw ExtractionError("probability map has non-finite values");
  const double mx = *std::max_element(map.values().begin(), map.values().end());
  if (!(mx > 0.0)) throw ExtractionError("probability map has no positive value");
  const double thr = threshold_ratio * mx;
  const int h = map.rows(), w = map.cols();
  std::vector<int> label(map.size(), -1);
  std::vector<int> stack;
  CellBox best;
  long best_size = 0;
  int next = 0;
  for (int start = 0; start < h * w; ++start) {
    if (label[start] >= 0 || map[start] < thr) continue;
    CellBox b{start % w, start / w, start % w, start / w};
    long count = 0;
    label[start] = next;
    stack.assign(1, start);
    while (!stack.empty()) {
      const int cell = stack.back();
      stack.pop_back();
      ++count;
      const int y = cell / w, x = cell % w;
      b.x_min = std::min(b.x_min, x);
      b.x_max = std::max(b.x_max, x);
      b.y_min = std::min(b.y_min, y);
      b.y_max = std::max(b.y_max, y);
      const int nbr[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& n : nbr) {
        if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
        const int c = n[0] * w + n[1];
        if (label[c] < 0 && map[c] >= thr) {
          label[c] = next;
          stack.push_back(c);
        }
      }
    }
    if (count > best_size) {
      best_size = count;
      best = b;
    }
    ++next;
  }
  return best;
}

SynthesisResult build_dataset(const std::vector<PromptRecord>& corpus, const RelationTable& table,
                              const Backbone& backbone, const std::string& out_dir, int n_samples,
                              std::uint64_t seed, const SynthesisOptions& options) {
  if (n_samples < 0) throw RangeError("n_samples must be >= 0");
  if (n_samples > 0 && corpus.empty()) throw InputError("cannot synthesize from an empty prompt corpus");
  for (const auto& rec : corpus) rec.validate();

  SynthesisResult result;
  DatasetFile& ds = result.dataset;
  ds.source = "synthetic";
  if (!options.vocab.actions.empty()) {
    ds.vocab = options.vocab;
  } else {
    ds.vocab.actions = table.actions();
    for (const auto& rec : corpus) {
      if (std::find(ds.vocab.objects.begin(), ds.vocab.objects.end(), rec.object_class) == ds.vocab.objects.end()) {
        ds.vocab.objects.push_back(rec.object_class);
      }
      const HoiClass h{rec.action, rec.object_class};
      if (std::find(ds.vocab.hois.begin(), ds.vocab.hois.end(), h) == ds.vocab.hois.end()) ds.vocab.hois.push_back(h);
    }
  }
  for (const auto& rec : corpus) {
    if (ds.hoi_index(rec.action, rec.object_class) < 0) {
      throw ContractError("prompt class (" + rec.action + ", " + rec.object_class + ") is not in the vocabulary");
    }
  }

  std::mt19937_64 rng(seed);
  std::vector<int> picks(static_cast<std::size_t>(n_samples));
  if (n_samples > 0) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(corpus.size()) - 1);
    for (int& p : picks) p = pick(rng);
  }

  struct Slot {
    std::optional<GeneratedSample> sample;
    PseudoAnnotation ann;
  };
  std::vector<Slot> slots(picks.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n_samples; ++i) {
    try {
      const PromptRecord& rec = corpus[picks[i]];
      const std::string human = rec.human_word.empty() ? "person" : rec.human_word;
      GeneratedSample s = generate_sample(rec, table, backbone, derive_seed(seed, {static_cast<std::uint64_t>(i)}),
                                          human, rec.object_class, options.generation);
      try {
        const CellBox hb = extract_box(s.human_map, options.threshold_ratio);
        const CellBox ob = extract_box(s.object_map, options.threshold_ratio);
        Slot& slot = slots[i];
        slot.ann = {hb.pixels(), ob.pixels(), rec.object_class, rec.action, max_inside(s.human_map, hb),
                    max_inside(s.object_map, ob), picks[i]};
        slot.sample = std::move(s);
      } catch (const ExtractionError&) {
      }
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  namespace fs = std::filesystem;
  int id = 0;
  for (int i = 0; i < n_samples; ++i) {
    Slot& slot = slots[i];
    if (!slot.sample) {
      ++ds.skipped;
      continue;
    }
    char name[32];
    std::snprintf(name, sizeof(name), "images/syn_%04d.png", i);
    write_png((fs::path(out_dir) / name).string(), slot.sample->image);
    ds.images.push_back({id, name, slot.sample->image.width, slot.sample->image.height});
    Annotation a;
    a.image_id = id;
    a.humans = {slot.ann.human_box};
    a.objects = {{slot.ann.object_box, slot.ann.object_class}};
    a.hois = {{0, 0, slot.ann.action}};
    ds.annotations.push_back(std::move(a));
    result.annotations.push_back(slot.ann);
    ++id;
  }
  result.dataset_path = (fs::path(out_dir) / "dataset.json").string();
  save_dataset(result.dataset_path, ds);
  return result;
}

}  // namespace dhoi
