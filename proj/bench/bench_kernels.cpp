// Reference (serial) kernels against the OpenMP kernels on CNN-sized inputs.
#include <benchmark/benchmark.h>

#include "pseudolab/kernels.hpp"
#include "pseudolab/reference.hpp"
#include "pseudolab/rng.hpp"

namespace {

using namespace pseudolab;

Tensor random_tensor(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(shape);
  for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

kernels::ConvParams conv_params(std::size_t in_c, std::size_t out_c) {
  return {random_tensor({out_c, in_c, 3, 3}, 2), random_tensor({out_c}, 3), 1, 1};
}

void BM_conv_forward_reference(benchmark::State& state) {
  const Tensor x = random_tensor({32, 16, 16, 16}, 1);
  const auto p = conv_params(16, 32);
  for (auto _ : state) benchmark::DoNotOptimize(reference::conv2d_forward(x, p));
}

void BM_conv_forward_omp(benchmark::State& state) {
  const Tensor x = random_tensor({32, 16, 16, 16}, 1);
  const auto p = conv_params(16, 32);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::conv2d_forward(x, p));
}

void BM_conv_backward_reference(benchmark::State& state) {
  const Tensor x = random_tensor({32, 16, 16, 16}, 1);
  const auto p = conv_params(16, 32);
  const Tensor g = random_tensor({32, 32, 16, 16}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(reference::conv2d_backward(x, p, g));
}

void BM_conv_backward_omp(benchmark::State& state) {
  const Tensor x = random_tensor({32, 16, 16, 16}, 1);
  const auto p = conv_params(16, 32);
  const Tensor g = random_tensor({32, 32, 16, 16}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::conv2d_backward(x, p, g));
}

void BM_dense_forward_reference(benchmark::State& state) {
  const Tensor x = random_tensor({64, 2048}, 1);
  const Tensor w = random_tensor({128, 2048}, 2);
  const Tensor b = random_tensor({128}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(reference::dense_forward(x, w, b));
}

void BM_dense_forward_omp(benchmark::State& state) {
  const Tensor x = random_tensor({64, 2048}, 1);
  const Tensor w = random_tensor({128, 2048}, 2);
  const Tensor b = random_tensor({128}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::dense_forward(x, w, b));
}

void BM_maxpool_reference(benchmark::State& state) {
  const Tensor x = random_tensor({32, 32, 16, 16}, 1);
  for (auto _ : state) benchmark::DoNotOptimize(reference::maxpool2_forward(x));
}

void BM_maxpool_omp(benchmark::State& state) {
  const Tensor x = random_tensor({32, 32, 16, 16}, 1);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::maxpool2_forward(x));
}

}  // namespace

BENCHMARK(BM_conv_forward_reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_forward_omp)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_backward_reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_backward_omp)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_dense_forward_reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_dense_forward_omp)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_maxpool_reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_maxpool_omp)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
