#include <benchmark/benchmark.h>

#include "stainkit/metrics.hpp"
#include "stainkit/synthetic.hpp"

using namespace stainkit;

namespace {

struct Pair {
  RgbImage a, b;
  explicit Pair(std::size_t size)
      : a(synthetic::he_tile(size, 1)), b(synthetic::remap_domain_b(synthetic::he_tile(size, 1))) {}
};

void BM_Ssim(benchmark::State& state) {
  const Pair p(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ssim(p.a, p.b));
}
BENCHMARK(BM_Ssim)->Arg(64)->Arg(256);

void BM_MsSsim(benchmark::State& state) {
  const Pair p(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ms_ssim(p.a, p.b));
}
BENCHMARK(BM_MsSsim)->Arg(64)->Arg(256);

void BM_Uqi(benchmark::State& state) {
  const Pair p(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(uqi(p.a, p.b));
}
BENCHMARK(BM_Uqi)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
