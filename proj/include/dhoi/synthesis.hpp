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

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dhoi/backbone.hpp"
#include "dhoi/boxes.hpp"
#include "dhoi/dataset.hpp"
#include "dhoi/relation_table.hpp"

namespace dhoi {

// Half-open range of word positions.
struct WordSpan {
  int begin = 0;
  int end = 0;
  bool operator==(const WordSpan&) const = default;
};

// A caption broken into whitespace-separated words with the action verb and
// the object located.
struct PromptRecord {
  std::vector<std::string> words;
  std::string action;
  std::string object_class;
  std::string human_word;
  WordSpan placeholder_span;
  WordSpan object_span;

  std::string text() const;
  void validate() const;
};

struct Lexicons {
  std::vector<std::string> humans;
  // Action names; underscores separate words ("hop_on").
  std::vector<std::string> actions;
  std::vector<std::string> objects;
  // Extra surface forms per action head verb (irregular past tenses etc.).
  std::map<std::string, std::vector<std::string>> inflections;

  static Lexicons with_defaults(std::vector<std::string> actions, std::vector<std::string> objects);
};

std::vector<std::string> default_human_words();
// Surface forms of a head verb: regular -s/-ing/-ed forms plus irregulars.
std::vector<std::string> verb_forms(const std::string& verb, const Lexicons& lex);
// Lower-cased word with surrounding punctuation removed.
std::string bare_word(const std::string& word);

std::vector<PromptRecord> filter_captions(const std::vector<std::string>& captions, const Lexicons& lex);

// Exchanges the words after the action between two records sharing it.
std::pair<PromptRecord, PromptRecord> swap_clauses(const PromptRecord& a, const PromptRecord& b);

// Text with the action words replaced by its R_*<action> marker; punctuation
// attached to the verb is kept.
std::string substitute_placeholder(const PromptRecord& rec);

// "A {human} {action} a {object} {scene}." for every combination.
std::vector<PromptRecord> template_prompts(const std::vector<HoiClass>& hois, const std::vector<std::string>& humans,
                                           const std::vector<std::string>& scenes);
std::vector<std::string> default_scenes();

struct Caption {
  std::string id;
  std::string caption;
};
// JSON Lines, one {"id", "caption"} object per line; blank lines skipped.
std::vector<Caption> read_captions(const std::string& path);

struct GenerationSettings {
  int image_size = 64;
  int n_steps = 8;
  NoiseSchedule schedule = NoiseSchedule::linear();
};

struct GeneratedSample {
  Image image;
  PromptEmbedding prompt;  // P with the human and object rows appended
  // Last-step attention per denoiser level (cells x tokens).
  std::vector<Matrix> attention;
  Matrix human_map;   // H x W in [0, 1]
  Matrix object_map;  // H x W in [0, 1]
};

GeneratedSample generate_sample(const PromptRecord& rec, const RelationTable& table, const Backbone& backbone,
                                std::uint64_t seed, const std::string& human_word, const std::string& object_word,
                                const GenerationSettings& settings = {});

// Layer-averaged attention of one token column, bilinearly upsampled to
// height x width and min-max rescaled to [0, 1].
Matrix token_attention_map(const std::vector<Matrix>& attention, const std::vector<LevelShape>& levels, int column,
                           int height, int width);

// Inclusive cell-index bounds of a component.
struct CellBox {
  int x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  bool operator==(const CellBox&) const = default;
  Box pixels() const { return Box{double(x_min), double(y_min), double(x_max + 1), double(y_max + 1)}; }
};

// Largest 4-connected component of map >= ratio * max(map); ties go to the
// component reached first in raster order.
CellBox extract_box(const Matrix& map, double threshold_ratio = 0.5);

struct PseudoAnnotation {
  Box human_box;
  Box object_box;
  std::string object_class;
  std::string action;
  double human_confidence = 0.0;
  double object_confidence = 0.0;
  int record = -1;  // corpus index of the source prompt
};

struct SynthesisOptions {
  GenerationSettings generation;
  double threshold_ratio = 0.5;
  // Vocabulary of the emitted dataset; derived from the corpus when empty.
  Vocab vocab;
};

struct SynthesisResult {
  DatasetFile dataset;
  std::vector<PseudoAnnotation> annotations;  // parallel to dataset.annotations
  std::string dataset_path;
};

// Generates n_samples images from prompts drawn with the seed, writes
// out_dir/images/syn_NNNN.png and out_dir/dataset.json. Samples whose maps
// give no box are skipped and counted.
SynthesisResult build_dataset(const std::vector<PromptRecord>& corpus, const RelationTable& table,
                              const Backbone& backbone, const std::string& out_dir, int n_samples,
                              std::uint64_t seed, const SynthesisOptions& options = {});

}  // namespace dhoi
