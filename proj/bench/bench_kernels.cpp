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

// Serial reference vs OpenMP kernels, plus one detector forward pass.
#include <benchmark/benchmark.h>

#include <random>

#include "dhoi/detector.hpp"
#include "dhoi/inversion.hpp"
#include "dhoi/kernels.hpp"

namespace k = dhoi::kernels;

namespace {

dhoi::Matrix filled(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  dhoi::Matrix m(r, c);
  for (double& v : m.values()) v = u(rng);
  return m;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const dhoi::Matrix a = filled(n, n, 1), b = filled(n, n, 2);
  dhoi::Matrix c(n, n);
  for (auto _ : state) {
    if (Parallel) {
      k::parallel::gemm(a, k::Trans::kNo, b, k::Trans::kNo, c, false);
    } else {
      k::serial::gemm(a, k::Trans::kNo, b, k::Trans::kNo, c, false);
    }
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}
BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256);

template <bool Parallel>
void BM_Softmax(benchmark::State& state) {
  const dhoi::Matrix in = filled(static_cast<int>(state.range(0)), 77, 3);
  dhoi::Matrix out;
  for (auto _ : state) {
    if (Parallel) {
      k::parallel::softmax_rows(in, out);
    } else {
      k::serial::softmax_rows(in, out);
    }
    benchmark::DoNotOptimize(out.values().data());
  }
}
BENCHMARK(BM_Softmax<false>)->Name("softmax_rows/serial")->Arg(4096);
BENCHMARK(BM_Softmax<true>)->Name("softmax_rows/parallel")->Arg(4096);

template <bool Parallel>
void BM_Im2col(benchmark::State& state) {
  const k::ConvGeometry g{64, 64, 16, 3, 1, 1};
  const dhoi::Matrix grid = filled(g.height * g.width, g.channels, 4);
  dhoi::Matrix cols;
  for (auto _ : state) {
    if (Parallel) {
      k::parallel::im2col(grid, g, cols);
    } else {
      k::serial::im2col(grid, g, cols);
    }
    benchmark::DoNotOptimize(cols.values().data());
  }
}
BENCHMARK(BM_Im2col<false>)->Name("im2col/serial");
BENCHMARK(BM_Im2col<true>)->Name("im2col/parallel");

void BM_DetectorForward(benchmark::State& state) {
  const dhoi::MockBackbone bb{dhoi::MockConfig{}};
  const std::vector<std::string> actions{"ride", "hold"}, objects{"horse", "cup"};
  const dhoi::RelationTable table = dhoi::initial_table(bb, actions);
  const dhoi::HOIPromptBank bank = dhoi::build_prompt_bank(bb, table, objects, {{"ride", "horse"}, {"hold", "cup"}});
  dhoi::DetectorConfig dc;
  dc.d_model = 64;
  dc.ffn_dim = 128;
  dc.layers = 2;
  dc.n_queries = 8;
  dc.short_side = dc.long_max = 128;
  const dhoi::Detector det(dc, bb, bank);
  dhoi::Image img(128, 128, 0.5);
  const dhoi::ImageFeatures f = dhoi::extract_features(bb, img, dc);
  for (auto _ : state) {
    auto dets = dhoi::predict_features(det, bb, bank, f, 128, 128, {});
    benchmark::DoNotOptimize(dets.data());
  }
}
BENCHMARK(BM_DetectorForward)->Name("detector/predict_128px")->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
