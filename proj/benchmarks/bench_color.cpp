#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "stainkit/classical.hpp"
#include "stainkit/color_stats.hpp"
#include "stainkit/synthetic.hpp"

using namespace stainkit;

namespace {

std::vector<double> random_histogram(std::size_t bins, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> h(bins);
  double total = 0.0;
  for (auto& x : h) total += (x = u(rng));
  for (auto& x : h) x /= total;
  return h;
}

void BM_Wasserstein1d(benchmark::State& state) {
  const auto bins = static_cast<std::size_t>(state.range(0));
  const auto p = random_histogram(bins, 1), q = random_histogram(bins, 2);
  for (auto _ : state) benchmark::DoNotOptimize(wasserstein_1d(p, q));
}
BENCHMARK(BM_Wasserstein1d)->Arg(16)->Arg(256);

void BM_ComputeHistogram(benchmark::State& state) {
  const RgbImage img = synthetic::he_tile(static_cast<std::size_t>(state.range(0)), 3);
  for (auto _ : state) benchmark::DoNotOptimize(compute_histogram(img));
}
BENCHMARK(BM_ComputeHistogram)->Arg(64)->Arg(256);

void BM_SelectTemplate(benchmark::State& state) {
  std::vector<ColorHistogram> hists;
  for (std::int64_t i = 0; i < state.range(0); ++i) hists.push_back(compute_histogram(synthetic::he_tile(64, i)));
  for (auto _ : state) benchmark::DoNotOptimize(select_template(hists));
}
BENCHMARK(BM_SelectTemplate)->Arg(20)->Arg(200);

void BM_ClassicalNormalize(benchmark::State& state) {
  const auto method = static_cast<ClassicalMethod>(state.range(0));
  const RgbImage src = synthetic::remap_domain_b(synthetic::he_tile(128, 1));
  const ClassicalTarget target = fit_classical_target(method, synthetic::he_tile(128, 2));
  for (auto _ : state) benchmark::DoNotOptimize(apply_classical(target, src));
  state.SetLabel(std::string(method_name(method)));
}
BENCHMARK(BM_ClassicalNormalize)
    ->Arg(static_cast<int>(ClassicalMethod::kReinhard))
    ->Arg(static_cast<int>(ClassicalMethod::kMacenko))
    ->Arg(static_cast<int>(ClassicalMethod::kVahadane));

void BM_VahadaneFit(benchmark::State& state) {
  const OdImage od = rgb_to_od(synthetic::he_tile(64, 4));
  for (auto _ : state) benchmark::DoNotOptimize(vahadane_estimate_stains(od));
}
BENCHMARK(BM_VahadaneFit)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
