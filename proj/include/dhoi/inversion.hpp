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
#include <random>
#include <string>
#include <vector>

#include "dhoi/autograd.hpp"
#include "dhoi/backbone.hpp"
#include "dhoi/boxes.hpp"
#include "dhoi/params.hpp"
#include "dhoi/relation_table.hpp"

namespace dhoi {

struct HOITripletLatents {
  int sample_id = 0;
  LatentGrid z_hoi;
  LatentGrid z_obj;
  std::string action;
  std::string object_class;
  Box object_box;
};

// Encodes the stride-aligned crop of the box and places it into an otherwise
// zero grid of the full-image latent shape.
LatentGrid object_latent(const Backbone& backbone, const Image& image, const Box& box);

HOITripletLatents make_triplet(const Backbone& backbone, const Image& image, int sample_id, const Box& object_box,
                               const std::string& action, const std::string& object_class);

// Seed of the Gaussian noise used for one reconstruction stage of a sample.
std::uint64_t cycle_noise_seed(std::uint64_t base, int sample_id, int epoch, int stage);

// Object-class prompt P_o (underscores read as spaces).
PromptEmbedding object_prompt(const Backbone& backbone, const std::string& object_class);

struct CycleSettings {
  int timestep = 300;
  int n_steps = 4;
};

LatentGrid relation_reconstruct(const Backbone& backbone, const HOITripletLatents& lat, const RelationTable& table,
                                const NoiseSchedule& sched, const CycleSettings& cycle, std::uint64_t noise_seed);
LatentGrid hoi_reconstruct(const Backbone& backbone, const LatentGrid& z_rel0, const HOITripletLatents& lat,
                           const RelationTable& table, const NoiseSchedule& sched, const CycleSettings& cycle,
                           std::uint64_t noise_seed);

// Tape forms; relation is the 1 x d relation embedding row.
ad::Var relation_reconstruct(ad::Tape& tape, const Backbone& backbone, const HOITripletLatents& lat,
                             const ad::Var& relation, const NoiseSchedule& sched, const CycleSettings& cycle,
                             std::uint64_t noise_seed);
ad::Var hoi_reconstruct(ad::Tape& tape, const Backbone& backbone, const ad::Var& z_rel0,
                        const HOITripletLatents& lat, const ad::Var& relation, const PromptEmbedding& object_tokens,
                        const NoiseSchedule& sched, const CycleSettings& cycle, std::uint64_t noise_seed);

double consistency_loss(const LatentGrid& z_hoi, const LatentGrid& z_hoi0);
ad::Var consistency_loss(const ad::Var& z_hoi, const ad::Var& z_hoi0);

struct ContrastiveBatch {
  Matrix anchor;
  Matrix positive;
  std::vector<Matrix> object_negatives;
  std::vector<Matrix> relation_negatives;
  double tau = 0.07;
};

// Which pool members build one contrastive batch around an anchor.
struct ContrastivePlan {
  int anchor = 0;
  int positive_object = 0;
  std::vector<int> object_negatives;
  // (index whose cached relation latent is used, index whose object latent is used)
  std::vector<std::pair<int, int>> relation_negatives;
};

// Raises SamplingError naming the missing category when the pool cannot
// supply a same-class object, a different-class object, or another relation.
ContrastivePlan plan_contrastive(const std::vector<HOITripletLatents>& pool, int anchor, int k_obj, int n_rel,
                                 std::mt19937_64& rng);

ContrastiveBatch build_contrastive_batch(const std::vector<HOITripletLatents>& pool,
                                         const std::vector<LatentGrid>& z_rel0, int anchor, int k_obj, int n_rel,
                                         std::mt19937_64& rng, double tau = 0.07);

double contrastive_loss(const ContrastiveBatch& batch);
// Cosine similarities against the anchor, InfoNCE with the positive first.
ad::Var contrastive_loss(const ad::Var& anchor, const ad::Var& positive, const std::vector<ad::Var>& negatives,
                         double tau);

// Ramp 0 -> 0.2 over the run.
double lambda1(long step, long total_steps);

struct InversionConfig {
  CycleSettings cycle;
  double lr = 8e-2;
  int batch = 32;
  int k_obj = 2;
  int n_rel = 3;
  double tau = 0.07;
  long total_steps = 40000;
  std::uint64_t seed = 0;
};

struct InversionStepResult {
  double consistency = 0.0;
  double contrastive = 0.0;
  double lambda1 = 0.0;
  double total = 0.0;
};

// Table initialized from each action word's text embedding.
RelationTable initial_table(const Backbone& backbone, const std::vector<std::string>& actions);

// Learns the relation table against a frozen backbone.
class RelationInverter {
 public:
  RelationInverter(const Backbone& backbone, std::vector<HOITripletLatents> pool, RelationTable table,
                   InversionConfig config, NoiseSchedule sched = NoiseSchedule::linear());

  // Next batch from a seeded per-epoch shuffle of the pool.
  InversionStepResult step();
  // One optimizer step on the given pool indices with an explicit lambda1.
  InversionStepResult step(const std::vector<int>& batch, double lambda1);

  // Mean L_Consistency over the whole pool with epoch-0 noise, no update.
  double mean_consistency() const;

  const RelationTable& table() const { return table_; }
  long steps_taken() const { return step_; }
  int epoch() const { return epoch_; }
  const std::vector<HOITripletLatents>& pool() const { return pool_; }
  void set_lr(double lr) { opt_.set_lr(lr); }

 private:
  void refresh_cache();
  bool contrastive_possible(int anchor) const;

  const Backbone& backbone_;
  std::vector<HOITripletLatents> pool_;
  RelationTable table_;
  InversionConfig config_;
  NoiseSchedule sched_;
  ParameterStore store_;
  Adam opt_;
  std::vector<PromptEmbedding> object_prompts_;
  std::vector<LatentGrid> rel_cache_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
  int epoch_ = -1;
  long step_ = 0;
};

}  // namespace dhoi
