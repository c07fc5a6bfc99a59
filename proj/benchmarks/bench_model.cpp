#include <benchmark/benchmark.h>

#include "stainkit/image.hpp"
#include "stainkit/pidr.hpp"
#include "stainkit/synthetic.hpp"

using namespace stainkit;

namespace {

// Default model size: d = 64, K = 256, six stain blocks, 64x64 tiles.
const ModelConfig& default_config() {
  static const ModelConfig config;
  return config;
}

void BM_StainModule(benchmark::State& state) {
  const PidrModel model(default_config());
  const Tensor image = image_to_tensor(synthetic::he_tile(64, 1));
  const FeatureMap structure = model.encode_structure(image);
  const FeatureMap quantized = model.quantize_const(model.encode_color(image));
  for (auto _ : state) benchmark::DoNotOptimize(model.stain(structure, quantized));
}
BENCHMARK(BM_StainModule)->Unit(benchmark::kMillisecond);

void BM_NormalizeImage(benchmark::State& state) {
  const PidrModel model(default_config());
  const RgbImage src = synthetic::remap_domain_b(synthetic::he_tile(64, 1)), tpl = synthetic::he_tile(64, 2);
  for (auto _ : state) benchmark::DoNotOptimize(normalize_image(src, tpl, model));
}
BENCHMARK(BM_NormalizeImage)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  PidrModel model(default_config());
  AdamW optimizer;
  const TrainingBatch batch =
      make_training_batch(synthetic::he_tile(64, 1), synthetic::remap_domain_b(synthetic::he_tile(64, 2)), 7);
  for (auto _ : state) benchmark::DoNotOptimize(train_step(model, optimizer, batch));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
