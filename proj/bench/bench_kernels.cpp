#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "afp/kernels.hpp"

namespace {

using afp::kernels::ConvShape;

std::vector<float> noise(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> v(n);
  for (float& x : v) x = g(rng);
  return v;
}

// Toy-width ResBlock1 geometry: 4 channels on the 64x96 map.
ConvShape toy_shape(int stride) { return {4, 4, 64, 96, 3, stride}; }

void BM_ConvForwardReference(benchmark::State& state) {
  const auto s = toy_shape(static_cast<int>(state.range(0)));
  const int batch = 8;
  const auto in = noise(s.in_size() * batch, 1), w = noise(s.weight_size(), 2), b = noise(s.out_channels, 3);
  std::vector<float> out(s.out_size() * batch);
  for (auto _ : state)
    for (int n = 0; n < batch; ++n)
      afp::kernels::conv2d_forward_reference<float>(
          s, std::span<const float>(in).subspan(n * s.in_size(), s.in_size()), w, b,
          std::span<float>(out).subspan(n * s.out_size(), s.out_size()));
  state.SetItemsProcessed(state.iterations() * batch);
}

void BM_ConvForward(benchmark::State& state) {
  const auto s = toy_shape(static_cast<int>(state.range(0)));
  const int batch = 8;
  const auto in = noise(s.in_size() * batch, 1), w = noise(s.weight_size(), 2), b = noise(s.out_channels, 3);
  std::vector<float> out(s.out_size() * batch);
  for (auto _ : state) afp::kernels::conv2d_forward<float>(s, batch, in, w, b, out);
  state.SetItemsProcessed(state.iterations() * batch);
}

void BM_ConvBackwardWeightReference(benchmark::State& state) {
  const auto s = toy_shape(1);
  const int batch = 8;
  const auto in = noise(s.in_size() * batch, 1), g = noise(s.out_size() * batch, 2);
  std::vector<float> dw(s.weight_size()), db(s.out_channels);
  for (auto _ : state)
    for (int n = 0; n < batch; ++n)
      afp::kernels::conv2d_backward_weight_reference<float>(
          s, std::span<const float>(in).subspan(n * s.in_size(), s.in_size()),
          std::span<const float>(g).subspan(n * s.out_size(), s.out_size()), dw, db);
  state.SetItemsProcessed(state.iterations() * batch);
}

void BM_ConvBackwardWeight(benchmark::State& state) {
  const auto s = toy_shape(1);
  const int batch = 8;
  const auto in = noise(s.in_size() * batch, 1), g = noise(s.out_size() * batch, 2);
  std::vector<float> dw(s.weight_size()), db(s.out_channels);
  for (auto _ : state) afp::kernels::conv2d_backward_weight<float>(s, batch, in, g, dw, db);
  state.SetItemsProcessed(state.iterations() * batch);
}

void BM_DotRowsReference(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto m = noise(rows * 128, 4), q = noise(128, 5);
  std::vector<float> scores(rows);
  for (auto _ : state) afp::kernels::dot_rows_reference(m, 128, q, scores);
  state.SetItemsProcessed(state.iterations() * static_cast<long>(rows));
}

void BM_DotRows(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto m = noise(rows * 128, 4), q = noise(128, 5);
  std::vector<float> scores(rows);
  for (auto _ : state) afp::kernels::dot_rows(m, 128, q, scores);
  state.SetItemsProcessed(state.iterations() * static_cast<long>(rows));
}

}  // namespace

BENCHMARK(BM_ConvForwardReference)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardWeightReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardWeight)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DotRowsReference)->Arg(58200)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_DotRows)->Arg(58200)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
