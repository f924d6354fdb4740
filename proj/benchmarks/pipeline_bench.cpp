#include <benchmark/benchmark.h>

#include "trajtok/pipeline.hpp"
#include "trajtok/synthetic.hpp"
#include "trajtok/training.hpp"

using namespace trajtok;

namespace {

// the default desk-scale recipe: 64x64 videos, 8 frames, d = 64, 16 queries
Config desk_config() {
  Config cfg;
  cfg.train.batch_size = 2;
  cfg.train.steps = 4;
  cfg.train.warmup_steps = 1;
  return cfg;
}

synthetic::LabeledVideo desk_video(std::uint64_t seed) {
  synthetic::SceneSpec spec;
  spec.width = 64;
  spec.height = 64;
  spec.frames = 8;
  spec.shape_count = 4;
  spec.seed = seed;
  return synthetic::generate(spec);
}

void bm_generate_video(benchmark::State& state) {
  std::uint64_t seed = 1;
  for (auto _ : state) benchmark::DoNotOptimize(desk_video(seed++).labels.data());
}
BENCHMARK(bm_generate_video);

void bm_encode_frames(benchmark::State& state) {
  const Config cfg = desk_config();
  const TrajTokModel model = init_model(cfg);
  const synthetic::LabeledVideo video = desk_video(2);
  for (auto _ : state)
    benchmark::DoNotOptimize(encode_frames(video.pixels, cfg.encoder, model.encoder).values.data());
}
BENCHMARK(bm_encode_frames);

void bm_segment_chunk(benchmark::State& state) {
  const Config cfg = desk_config();
  const TrajTokModel model = init_model(cfg);
  const synthetic::LabeledVideo video = desk_video(3);
  const FeatureMap fm = encode_frames(video.pixels, cfg.encoder, model.encoder);
  for (auto _ : state)
    benchmark::DoNotOptimize(segment_chunk(fm, cfg.segmenter, model.segmenter).soft.data());
}
BENCHMARK(bm_segment_chunk);

void bm_tokenize(benchmark::State& state) {
  const long long n = state.range(0);
  const Config cfg = desk_config();
  const TrajTokModel model = init_model(cfg);
  const synthetic::LabeledVideo video = desk_video(4);
  for (auto _ : state) benchmark::DoNotOptimize(tokenize(video.pixels, cfg, model, n).chunks.data());
}
BENCHMARK(bm_tokenize)->Arg(1)->Arg(4);

void bm_train_step(benchmark::State& state) {
  Config cfg = desk_config();
  cfg.train.threads = state.range(0);
  TrainState s = init_train_state(cfg);
  const synthetic::LabeledVideo a = desk_video(5), b = desk_video(6);
  const std::vector<const synthetic::LabeledVideo*> batch = {&a, &b};
  for (auto _ : state) {
    benchmark::DoNotOptimize(train_step(s, batch, 1, 1e-4).total);
    s.step = 0;  // keep the schedule position fixed across iterations
  }
}
BENCHMARK(bm_train_step)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
