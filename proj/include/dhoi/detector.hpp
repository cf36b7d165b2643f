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

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dhoi/assignment.hpp"
#include "dhoi/backbone.hpp"
#include "dhoi/boxes.hpp"
#include "dhoi/dataset.hpp"
#include "dhoi/params.hpp"
#include "dhoi/relation_table.hpp"

namespace dhoi {

struct HOIPromptBank {
  Matrix hoi;  // P_r, one mean-pooled row per triplet class
  std::vector<HoiClass> hoi_classes;
  Matrix objects;  // P_o
  std::vector<std::string> object_names;
  Matrix relations;  // P_a, raw table rows
  std::vector<std::string> actions;
  Matrix human;  // mean-pooled "person"
  std::vector<std::string> warnings;

  int n_hoi() const { return hoi.rows(); }
  int n_objects() const { return objects.rows(); }
  int n_actions() const { return relations.rows(); }
  int object_index(const std::string& name) const;
  int action_index(const std::string& name) const;
};

// Duplicate triplets are dropped with a warning; unknown actions or objects
// raise LookupError.
HOIPromptBank build_prompt_bank(const Backbone& backbone, const RelationTable& table,
                                const std::vector<std::string>& objects, const std::vector<HoiClass>& triplets);

struct DetectorConfig {
  int d_model = 256;
  int ffn_dim = 768;
  int layers = 6;
  int n_queries = 64;
  int mask_grid = 8;  // learned query masks live on a mask_grid^2 grid
  double tau_init = 0.07;
  double lambda_rel = 0.5;
  double w_l1 = 5.0;
  double w_giou = 2.0;
  int short_side = 800;
  int long_max = 1333;
  int feature_timestep = 0;
  std::string neutral_prompt = "a photo";
  std::uint64_t seed = 0;

  void validate() const;
};

// Frozen backbone features of one preprocessed image.
struct ImageFeatures {
  std::vector<LatentGrid> levels;  // strides 16, 32, 64, 128
  int image_height = 0;            // preprocessed size
  int image_width = 0;
  std::vector<LevelShape> shapes() const;
};

ImageFeatures extract_features(const Backbone& backbone, const Image& image, const DetectorConfig& config);

struct ConditionedFeatures {
  std::vector<LatentGrid> levels;  // after the additive value injection
  Matrix m_r;                      // cells32 x N_r
  Matrix m_h;                      // cells32 x 1
  Matrix m_o;                      // cells32 x 1
  std::vector<Matrix> m_r_levels;  // per level, before resampling
};

ConditionedFeatures condition_features(const Backbone& backbone, const ImageFeatures& features,
                                       const HOIPromptBank& bank);

// Cross-attention of every level against tokens, averaged after resampling
// each level onto the stride-32 grid (cells32 x tokens).
ad::Var attention_average(ad::Tape& tape, const Backbone& backbone, const ImageFeatures& features,
                          const ad::Var& tokens);

// Per-slot HOI queries after pairing: slot_to_hoi[i] is the matched HOI
// query index or -1.
struct Pairing {
  std::vector<int> slot_to_hoi;
  double cost = 0.0;
};
Pairing pair_queries(const Matrix& q_r, const Matrix& q_h, const Matrix& q_o);

// Ground truth of one image in normalized cxcywh coordinates.
struct TargetPair {
  std::array<double, 4> human{};
  std::array<double, 4> object{};
  int hoi = 0;
  int object_class = 0;
  int action = 0;
};

struct ForwardOutput {
  ad::Var q_hat_r, q_hat_h, q_hat_o;          // N_r x d, N_q x d, N_q x d
  ad::Var q_tilde_r, q_tilde_h, q_tilde_o;    // N_q x d each
  ad::Var hoi_sim, hoi_lin;                   // N_q x (N_r + 1)
  ad::Var obj_sim, obj_lin;                   // N_q x (N_o + 1)
  ad::Var human_boxes, object_boxes;          // N_q x 4, sigmoid cxcywh
  ad::Var z32;                                // cells32 x d
  Pairing pairing;
  int pool_fallbacks = 0;
};

struct LossParts {
  double hoi = 0, ins = 0, det = 0, rel = 0, total = 0;
};

// Fixed components combine as L_HOI + L_Ins + L_Det + lambda * L_Rel;
// NumericalError names any non-finite component.
double total_loss(const LossParts& parts, double lambda_rel);

// Normalized cxcywh helpers.
Box cxcywh_to_box(const std::array<double, 4>& b);
std::array<double, 4> box_to_cxcywh(const Box& b, double width, double height);
double giou_safe(const Box& a, const Box& b);

class Detector {
 public:
  Detector() = default;
  Detector(const DetectorConfig& config, const Backbone& backbone, const HOIPromptBank& bank);

  const DetectorConfig& config() const { return config_; }
  const ParameterStore& params() const { return params_; }
  ParameterStore& params() { return params_; }
  bool ready() const { return !params_.names().empty(); }
  int n_hoi() const { return n_hoi_; }
  int n_objects() const { return n_objects_; }

  // Differentiable forward on a tape. The bank and conditioned features are
  // constants; parameters come from the binding.
  ForwardOutput forward(ParamBinding& w, const ImageFeatures& features, const ConditionedFeatures& cond,
                        const HOIPromptBank& bank) const;

  // Hungarian assignment of slots to ground-truth pairs (slot -> gt or -1).
  std::vector<int> match(const ForwardOutput& out, const std::vector<TargetPair>& targets) const;
  // Matching cost matrix (slots x targets).
  Matrix match_cost(const ForwardOutput& out, const std::vector<TargetPair>& targets) const;

  ad::Var hoi_loss(const ForwardOutput& out, const std::vector<TargetPair>& targets,
                   const std::vector<int>& slot_to_gt) const;
  ad::Var instance_loss(const ForwardOutput& out, const std::vector<TargetPair>& targets,
                        const std::vector<int>& slot_to_gt) const;
  ad::Var detection_loss(const ForwardOutput& out, const std::vector<TargetPair>& targets,
                         const std::vector<int>& slot_to_gt) const;
  // Aligns relation-pooled features with decoded (relation - object) queries;
  // the only differentiable input is the relation table variable.
  ad::Var relation_loss(ad::Tape& tape, const Backbone& backbone, const ImageFeatures& features,
                        const ForwardOutput& out, const ad::Var& table, const std::vector<TargetPair>& targets,
                        const std::vector<int>& slot_to_gt) const;

  std::string serialize(const RelationTable& table, const Vocab& vocab) const;
  struct Loaded;
  static Loaded deserialize(const std::string& bytes);

 private:
  // cross_attention, when given, receives the last layer's attention weights.
  ad::Var decoder(ParamBinding& w, const std::string& prefix, ad::Var x, const ad::Var& memory,
                  const ad::Var& keys, ad::Var* cross_attention) const;
  void head(ParamBinding& w, const std::string& prefix, const ad::Var& q, const Matrix& prompts, ad::Var& sim,
            ad::Var& lin) const;

  DetectorConfig config_;
  ParameterStore params_;
  int n_hoi_ = 0;
  int n_objects_ = 0;
  std::vector<int> level_channels_;
  int text_dim_ = 0;
};

struct Detector::Loaded {
  Detector detector;
  RelationTable table;
  Vocab vocab;
};

// Fixed 2-D sine encoding of an h x w grid (cells x d).
Matrix sine_position(int height, int width, int d);

struct Detection {
  int image_id = 0;
  Box human_box;
  Box object_box;
  std::string object_class;
  double object_score = 0.0;
  int hoi_class = 0;
  double hoi_score = 0.0;
};

struct PredictOptions {
  double score_threshold = 0.0;
  int top_k = 100;
};

// Boxes are mapped back to the original image size.
std::vector<Detection> predict(const Detector& detector, const Backbone& backbone, const HOIPromptBank& bank,
                               const Image& image, const PredictOptions& options = {});
std::vector<Detection> predict_features(const Detector& detector, const Backbone& backbone,
                                        const HOIPromptBank& bank, const ImageFeatures& features,
                                        double orig_width, double orig_height, const PredictOptions& options);

// ---------------------------------------------------------------- training

struct TrainSample {
  ImageFeatures features;
  std::vector<TargetPair> targets;
  double width = 0;  // original size
  double height = 0;
  int image_id = 0;
};

// Ground truth pairs of an annotation against a bank; pairs whose class is
// not in the bank are dropped.
std::vector<TargetPair> targets_from_annotation(const Annotation& ann, const ImageEntry& image,
                                                const HOIPromptBank& bank);

struct TrainConfig {
  double lr = 1e-4;
  double rel_lr = 1e-4;
  int batch = 2;
  std::uint64_t seed = 0;
};

// Half-cosine decay from base at step 0 to 0 at total_steps.
double cosine_lr(double base, long step, long total_steps);

struct TrainStepResult {
  LossParts loss;
  long step = 0;
};

class DetectorTrainer {
 public:
  DetectorTrainer(Detector& detector, const Backbone& backbone, RelationTable& table,
                  const std::vector<std::string>& objects, const std::vector<HoiClass>& hois, TrainConfig config);

  // One optimizer step on the given samples.
  TrainStepResult step(const std::vector<const TrainSample*>& batch);
  // Epoch over the pool in a seeded order; returns per-step results.
  std::vector<TrainStepResult> epoch(const std::vector<TrainSample>& pool);
  void set_lr(double lr) { opt_.set_lr(lr); }
  const HOIPromptBank& bank() const { return bank_; }
  long steps() const { return steps_; }

  // Loss of one sample without updating anything.
  LossParts evaluate_loss(const TrainSample& sample) const;

 private:
  Detector& detector_;
  const Backbone& backbone_;
  RelationTable& table_;
  std::vector<std::string> objects_;
  std::vector<HoiClass> hois_;
  TrainConfig config_;
  HOIPromptBank bank_;
  Adam opt_;
  Adam rel_opt_;
  ParameterStore rel_store_;
  std::mt19937_64 rng_;
  long steps_ = 0;
  int epochs_ = 0;
};

}  // namespace dhoi
