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

// dhoi: inversion, synthesis, detector training, evaluation and splits.
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "dhoi/cli.hpp"
#include "dhoi/errors.hpp"

namespace {

dhoi::RunConfig resolve_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
  dhoi::RunConfig c = path.empty() ? dhoi::RunConfig{} : dhoi::load_config(path);
  if (seed) c.seed = *seed;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-backed HOI detection pipeline"};
  app.require_subcommand(1);
  std::string config_path, out;
  std::optional<std::uint64_t> seed;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Run config (key = value)")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Overrides the config seed");
    sub->add_option("--out", out, "Output path")->required();
  };

  std::string dataset, table;
  auto* invert = app.add_subcommand("invert", "Learn relation embeddings from a dataset");
  common(invert);
  invert->add_option("--dataset", dataset)->required()->check(CLI::ExistingFile);

  auto* synth = app.add_subcommand("synthesize", "Generate a pseudo-labelled dataset");
  common(synth);
  synth->add_option("--table", table)->required()->check(CLI::ExistingFile);
  synth->add_option("--dataset", dataset, "Dataset providing the vocabulary")->required()->check(CLI::ExistingFile);

  dhoi::TrainInputs train_in;
  auto* train = app.add_subcommand("train", "Train the detector");
  common(train);
  train->add_option("--dataset", train_in.target, "Target dataset")->required()->check(CLI::ExistingFile);
  train->add_option("--synthetic", train_in.synthetic, "Synthetic datasets for the joint phase")
      ->check(CLI::ExistingFile);
  train->add_option("--table", train_in.table)->check(CLI::ExistingFile);

  dhoi::EvalInputs eval_in;
  auto* eval = app.add_subcommand("eval", "Evaluate a detector checkpoint");
  common(eval);
  eval->add_option("--checkpoint", eval_in.checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", eval_in.dataset)->required()->check(CLI::ExistingFile);
  eval->add_option("--split", eval_in.split, "split.json for seen/unseen aggregates")->check(CLI::ExistingFile);
  eval->add_option("--train", eval_in.train, "Training dataset for rare/non-rare counts")->check(CLI::ExistingFile);

  std::string mode;
  std::optional<int> count;
  auto* splits = app.add_subcommand("splits", "Write zero-shot train/eval splits");
  common(splits);
  splits->add_option("--dataset", dataset)->required()->check(CLI::ExistingFile);
  splits->add_option("--mode", mode, "rf_uc, nf_uc, uv or uo");
  splits->add_option("--count", count, "Unseen triplets for rf_uc / nf_uc");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    dhoi::RunConfig config = resolve_config(config_path, seed);
    if (invert->parsed()) {
      dhoi::cmd_invert(config, dataset, out);
    } else if (synth->parsed()) {
      dhoi::cmd_synthesize(config, table, dataset, out);
    } else if (train->parsed()) {
      dhoi::cmd_train(config, train_in, out);
    } else if (eval->parsed()) {
      dhoi::cmd_eval(config, eval_in, out);
    } else if (splits->parsed()) {
      if (!mode.empty()) config.split_mode = mode;
      if (count) config.splits.count = *count;
      config.validate();
      dhoi::cmd_splits(config, dataset, out);
    }
  } catch (const dhoi::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
