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
#include <memory>
#include <string>
#include <vector>

#include "dhoi/autograd.hpp"
#include "dhoi/image.hpp"
#include "dhoi/matrix.hpp"
#include "dhoi/params.hpp"
#include "dhoi/relation_table.hpp"

namespace dhoi {

// Spatial grid in latent space: one row per cell, one column per channel.
struct LatentGrid {
  int height = 0;
  int width = 0;
  int stride = 8;
  Matrix data;

  LatentGrid() = default;
  LatentGrid(int h, int w, int s, Matrix d);
  int channels() const { return data.cols(); }
  int cells() const { return height * width; }
  void validate() const;
};

struct PromptEmbedding {
  Matrix tokens;
  std::string source_text;
  int rows() const { return tokens.rows(); }
};

struct NoiseSchedule {
  int steps = 0;
  std::vector<double> alphas_bar;

  static NoiseSchedule linear(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02);
  // alphas_bar identically 1: every noising and sampler step is the identity.
  static NoiseSchedule unit(int steps);
  void validate() const;
};

LatentGrid noise_to(const LatentGrid& z0, int t, const LatentGrid& eps, const NoiseSchedule& sched);
ad::Var noise_to(const ad::Var& z0, int t, const ad::Var& eps, const NoiseSchedule& sched);

// Timesteps visited by the deterministic sampler starting at t_start.
std::vector<int> sampler_timesteps(int t_start, int n_steps);

struct LevelShape {
  int height = 0;
  int width = 0;
  int stride = 0;
  int channels = 0;
  int cells() const { return height * width; }
};

struct DenoiserOutput {
  std::vector<LatentGrid> features;  // strides 16, 32, 64, 128
  std::vector<Matrix> attention;     // per level: cells x tokens
  LatentGrid noise_pred;
};

// Tape-level record of one denoiser application.
struct DenoiseTrace {
  std::vector<ad::Var> features;
  std::vector<ad::Var> attention;
  ad::Var noise_pred;
  std::vector<LevelShape> levels;
};

// Latent-diffusion backbone seen by the rest of the pipeline. Implementations
// supply the primitive hooks; sampling and text handling are shared.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual int text_dim() const = 0;
  virtual int latent_channels() const = 0;
  virtual std::vector<LevelShape> level_shapes(int latent_height, int latent_width) const = 0;

  virtual LatentGrid encode_image(const Image& image) const = 0;
  virtual Image decode_latent(const LatentGrid& z) const = 0;
  // Text-encoder row (1 x text_dim) for one plain token.
  virtual Matrix embed_token(const std::string& token) const = 0;

  virtual DenoiseTrace denoise_tape(ad::Tape& tape, const ad::Var& z, int height, int width, int t,
                                    const ad::Var& cond) const = 0;
  // Cross-attention projections of conditioning tokens at one level.
  virtual ad::Var project_keys(ad::Tape& tape, int level, const ad::Var& tokens) const = 0;
  virtual ad::Var project_values(ad::Tape& tape, int level, const ad::Var& tokens) const = 0;

  // Placeholders R_*<action> copy the table row; other tokens are embedded.
  PromptEmbedding encode_text(const std::string& text, const RelationTable& table) const;
  PromptEmbedding encode_text(const std::string& text) const;

  DenoiserOutput denoise_once(const LatentGrid& z, int t, const PromptEmbedding& cond) const;

  // Deterministic sampler from t_start (default: last schedule step) down to 0.
  LatentGrid denoise_iterative(const LatentGrid& zT, const PromptEmbedding& cond, int n_steps,
                               const NoiseSchedule& sched, int t_start = -1,
                               DenoiserOutput* last_step = nullptr) const;
  ad::Var denoise_iterative(ad::Tape& tape, const ad::Var& zT, int height, int width,
                            const ad::Var& cond, int n_steps, const NoiseSchedule& sched,
                            int t_start = -1, DenoiseTrace* last_step = nullptr) const;
};

// Lower-cased word tokens; placeholder markers are kept verbatim.
std::vector<std::string> tokenize(const std::string& text);
// Action named by a placeholder token, or "" when the token is a plain word.
std::string placeholder_action(const std::string& token);
std::string make_placeholder(const std::string& action);

struct MockConfig {
  int text_dim = 32;
  int latent_channels = 4;
  int encoder_hidden = 16;
  std::array<int, 4> widths{16, 32, 64, 128};
  std::uint64_t seed = 0;
};

// Small deterministic stand-in for a latent-diffusion model: two strided
// convolutions each way for the autoencoder, four stride-2 blocks with one
// single-head cross-attention each for the denoiser, hashed word vectors for
// the text encoder.
class MockBackbone : public Backbone {
 public:
  explicit MockBackbone(const MockConfig& config);
  static MockBackbone zeros(const MockConfig& config);

  const MockConfig& config() const { return config_; }
  const ParameterStore& weights() const { return weights_; }
  ParameterStore& weights() { return weights_; }

  int text_dim() const override { return config_.text_dim; }
  int latent_channels() const override { return config_.latent_channels; }
  std::vector<LevelShape> level_shapes(int latent_height, int latent_width) const override;

  LatentGrid encode_image(const Image& image) const override;
  Image decode_latent(const LatentGrid& z) const override;
  Matrix embed_token(const std::string& token) const override;

  DenoiseTrace denoise_tape(ad::Tape& tape, const ad::Var& z, int height, int width, int t,
                            const ad::Var& cond) const override;
  ad::Var project_keys(ad::Tape& tape, int level, const ad::Var& tokens) const override;
  ad::Var project_values(ad::Tape& tape, int level, const ad::Var& tokens) const override;

  // Tape-level autoencoder, used by encode/decode and by training.
  ad::Var encode_tape(ParamBinding& w, const ad::Var& pixels, int height, int width) const;
  ad::Var decode_tape(ParamBinding& w, const ad::Var& z, int height, int width) const;

  // Fits encoder and decoder to reconstruct the images (mean squared error,
  // full batch, Adam). Returns the per-step loss.
  std::vector<double> train_autoencoder(const std::vector<Image>& images, int steps, double lr);

  std::string serialize() const;
  static MockBackbone deserialize(const std::string& bytes);

 private:
  MockBackbone(const MockConfig& config, bool random);
  MockConfig config_;
  ParameterStore weights_;
};

// Loads the mock from path when it exists, otherwise creates it from the
// config and writes it there. An empty path just creates it.
MockBackbone load_or_create_mock(const MockConfig& config, const std::string& path);

// --- resampling as constant matrices (out cells x in cells) ---
Matrix bilinear_matrix(int in_h, int in_w, int out_h, int out_w);
// Row index into the coarse grid for every cell of a fine grid, nearest
// neighbour with integer factor.
std::vector<int> nearest_index(int coarse_h, int coarse_w, int fine_h, int fine_w, int factor);

// Top-down pyramid over the four denoiser levels. laterals[l] is c_l x d_out
// (bias-free). Output is at stride 32 on the level-1 grid.
LatentGrid fpn_aggregate(const std::vector<LatentGrid>& features, const std::vector<Matrix>& laterals);
ad::Var fpn_aggregate(ad::Tape& tape, const std::vector<ad::Var>& features,
                      const std::vector<LevelShape>& levels, const std::vector<ad::Var>& laterals);

}  // namespace dhoi
