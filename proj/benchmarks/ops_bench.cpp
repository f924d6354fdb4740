#include <benchmark/benchmark.h>

#include <cstdint>

#include "trajtok/params.hpp"
#include "trajtok/rng.hpp"
#include "trajtok/tensor.hpp"

using namespace trajtok;

namespace {

Tensor rand_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  RngSequence rng{CounterRng(seed)};
  Tensor t = Tensor::zeros(std::move(shape));
  fill_uniform(t, lo, hi, rng);
  return t;
}

void bm_matmul(benchmark::State& state) {
  const long long n = state.range(0);
  const Tensor a = rand_tensor({n, n}, 1);
  const Tensor b = rand_tensor({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(bm_matmul)->Arg(32)->Arg(64)->Arg(128);

void bm_softmax_rows(benchmark::State& state) {
  const Tensor x = rand_tensor({16, 512}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(softmax(x, 1));
}
BENCHMARK(bm_softmax_rows);

void bm_attention(benchmark::State& state) {
  const long long kv = state.range(0), d = 64;
  const Tensor q = rand_tensor({16, d}, 4);
  const Tensor k = rand_tensor({kv, d}, 5);
  const Tensor v = rand_tensor({kv, d}, 6);
  const Tensor wo = rand_tensor({d, d}, 7);
  for (auto _ : state) benchmark::DoNotOptimize(multihead_attention(q, k, v, 8, {}, wo));
}
BENCHMARK(bm_attention)->Arg(256)->Arg(2048);

void bm_depthwise_conv(benchmark::State& state) {
  const Tensor x = rand_tensor({16, 16, 16}, 8);
  const Tensor kern = rand_tensor({7, 7, 16}, 9);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d_depthwise(x, kern, 1, 3));
}
BENCHMARK(bm_depthwise_conv);

void bm_rope(benchmark::State& state) {
  const Tensor x = rand_tensor({1024, 64}, 10);
  for (auto _ : state) benchmark::DoNotOptimize(rope_rotate(x, 10000.0));
}
BENCHMARK(bm_rope);

void bm_matmul_backward(benchmark::State& state) {
  const long long n = 64;
  const Tensor a = rand_tensor({n, n}, 11);
  const Tensor b = rand_tensor({n, n}, 12);
  for (auto _ : state) {
    Tape tape;
    const Tensor wa = tape.watch(a), wb = tape.watch(b);
    const Tensor loss = sum_all(matmul(wa, wb));
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(wa).data());
  }
}
BENCHMARK(bm_matmul_backward);

}  // namespace

BENCHMARK_MAIN();
