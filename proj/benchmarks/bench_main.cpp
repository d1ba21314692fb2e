#include <benchmark/benchmark.h>

#include <vector>

#include "sepipe/attacks.hpp"
#include "sepipe/enhance.hpp"
#include "sepipe/models.hpp"
#include "sepipe/rng.hpp"
#include "sepipe/segment.hpp"

namespace {

using namespace sepipe;

Image random_image(int size, std::uint64_t seed) {
  Rng rng(seed);
  Image im(size, size, 0);
  for (auto& p : im.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return im;
}

Model desk_model(ModelKind kind) {
  ModelConfig cfg = kind == ModelKind::SimpleCnn ? ModelConfig::simple_cnn(64, 1)
                                                 : ModelConfig::toy_vit(64, 1);
  Model m = build_model(cfg);
  m.trained = true;
  return m;
}

void bm_cnn_forward(benchmark::State& state) {
  const Model m = desk_model(ModelKind::SimpleCnn);
  const Image img = random_image(64, 7);
  const Tensor batch = image_batch(img, 64);
  for (auto _ : state) benchmark::DoNotOptimize(forward(m, batch));
}
BENCHMARK(bm_cnn_forward);

void bm_vit_forward(benchmark::State& state) {
  const Model m = desk_model(ModelKind::ToyVit);
  const Image img = random_image(64, 7);
  const Tensor batch = image_batch(img, 64);
  for (auto _ : state) benchmark::DoNotOptimize(forward(m, batch));
}
BENCHMARK(bm_vit_forward);

void bm_input_gradient(benchmark::State& state) {
  const Model m = desk_model(ModelKind::SimpleCnn);
  const std::vector<std::vector<double>> pts = {random_image(64, 7).to_real()};
  for (auto _ : state) benchmark::DoNotOptimize(input_gradients(m, pts, {0}));
}
BENCHMARK(bm_input_gradient);

void bm_fgsm(benchmark::State& state) {
  const Model m = desk_model(ModelKind::SimpleCnn);
  const Image img = random_image(64, 7);
  AttackConfig cfg;
  cfg.epsilon = 0.05;
  cfg.threat = ThreatMode::Direct;
  for (auto _ : state) benchmark::DoNotOptimize(craft_attack(m, cfg, img, 0));
}
BENCHMARK(bm_fgsm);

void bm_clahe(benchmark::State& state) {
  const Image img = random_image(static_cast<int>(state.range(0)), 11);
  for (auto _ : state) benchmark::DoNotOptimize(clahe(img));
}
BENCHMARK(bm_clahe)->Arg(64)->Arg(256);

void bm_unsharp_gaussian(benchmark::State& state) {
  const Image img = random_image(static_cast<int>(state.range(0)), 13);
  for (auto _ : state) benchmark::DoNotOptimize(unsharp_mask(img, BlurKind::Gaussian, 5, 2.0));
}
BENCHMARK(bm_unsharp_gaussian)->Arg(64)->Arg(256);

void bm_unsharp_median(benchmark::State& state) {
  const Image img = random_image(static_cast<int>(state.range(0)), 13);
  for (auto _ : state) benchmark::DoNotOptimize(unsharp_mask(img, BlurKind::Median, 2, 2.0));
}
BENCHMARK(bm_unsharp_median)->Arg(64)->Arg(256);

void bm_hfe(benchmark::State& state) {
  const Image img = random_image(static_cast<int>(state.range(0)), 17);
  for (auto _ : state) benchmark::DoNotOptimize(hfe(img, 30.0));
}
BENCHMARK(bm_hfe)->Arg(64)->Arg(256);

void bm_heuristic_segment(benchmark::State& state) {
  const Image img = random_image(static_cast<int>(state.range(0)), 19);
  for (auto _ : state) benchmark::DoNotOptimize(heuristic_segment(img));
}
BENCHMARK(bm_heuristic_segment)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
