#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "stainkit/gemm.hpp"
#include "stainkit/ops.hpp"
#include "stainkit/tensor.hpp"

using namespace stainkit;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return Tensor::from(shape, std::move(v));
}

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    detail::gemm(false, false, n, n, n, a.data().data(), b.data().data(), c.data(), 0.0f);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
  state.SetLabel("items = flops");
}
BENCHMARK(BM_Gemm)->RangeMultiplier(2)->Range(32, 256);

// Encoder-shaped convolutions: (1, c, s, s) input, c -> 2c channels, stride 2.
void BM_Conv2dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), s = static_cast<std::size_t>(state.range(1));
  const Tensor x = random_tensor({1, c, s, s}, 3), k = random_tensor({2 * c, c, 3, 3}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, k, 2, 1));
}
BENCHMARK(BM_Conv2dForward)->Args({3, 64})->Args({16, 32})->Args({32, 16});

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0)), s = static_cast<std::size_t>(state.range(1));
  Tensor x = random_tensor({1, c, s, s}, 3), k = random_tensor({2 * c, c, 3, 3}, 4);
  x.set_requires_grad(true);
  k.set_requires_grad(true);
  for (auto _ : state) {
    Tape tape;
    Tape::Scope scope(tape);
    backward(ops::sum(ops::conv2d(x, k, 2, 1)));
    x.clear_grad();
    k.clear_grad();
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({3, 64})->Args({16, 32})->Args({32, 16});

void BM_Softmax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({n, n}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(ops::softmax(x, 1));
}
BENCHMARK(BM_Softmax)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
