#include <benchmark/benchmark.h>

#include "mipslice/inference.hpp"
#include "mipslice/mip.hpp"
#include "mipslice/models.hpp"
#include "mipslice/nn/layers.hpp"
#include "mipslice/phantom.hpp"
#include "mipslice/random.hpp"

using namespace mipslice;

namespace {

// Both detectors at base width 8 so a full sweep finishes in minutes on one core.
constexpr int kBench = 8;

MipImage timing_image(int height) {
  PhantomConfig pc;
  pc.fov_height_min = pc.fov_height_max = height;
  Rng rng = make_rng(440);
  return generate_phantom(pc, rng, "bench").frontal;
}

void BM_Conv3x3(benchmark::State& state) {
  const int ch = static_cast<int>(state.range(0));
  Rng rng = make_rng(1);
  nn::Conv2d conv(ch, ch, 3, 3, rng, "conv");
  nn::Tensor x({1, ch, 128, 128});
  for (float& v : x.values()) v = static_cast<float>(uniform(rng, -1, 1));
  for (auto _ : state) benchmark::DoNotOptimize(conv.infer(x));
  state.SetItemsProcessed(state.iterations() * 128 * 128);
}
BENCHMARK(BM_Conv3x3)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_UNetInference(benchmark::State& state) {
  const Variant v = state.range(0) == 1 ? Variant::l3unet1d : Variant::l3unet2d;
  ModelConfig c = ModelConfig::defaults(v);
  c.base_channels = kBench;
  const auto model = build_model(c);
  const MipImage img = timing_image(static_cast<int>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(predict(*model, img));
  state.SetLabel(to_string(v));
}
BENCHMARK(BM_UNetInference)->Args({1, 440})->Args({2, 440})->Args({1, 880})->Unit(benchmark::kMillisecond);

void BM_SlidingWindow(benchmark::State& state) {
  ModelConfig c = ModelConfig::defaults(Variant::baseline_regression);
  c.base_channels = kBench;
  const auto model = build_model(c);
  const MipImage img = timing_image(440);
  const int stride = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(sliding_window_predict(*model, img, stride));
}
BENCHMARK(BM_SlidingWindow)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond)->Iterations(3);

void BM_Projection(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng = make_rng(3);
  Volume3D vol({n, 256, 256}, {2.5, 1, 1}, "bench");
  for (float& v : vol.data()) v = static_cast<float>(uniform(rng, -1000, 2000));
  for (auto _ : state) benchmark::DoNotOptimize(preprocess_volume(vol));
  state.SetBytesProcessed(state.iterations() * static_cast<int64_t>(vol.data().size() * sizeof(float)));
}
BENCHMARK(BM_Projection)->Arg(64)->Arg(160)->Unit(benchmark::kMillisecond);

}  // namespace
