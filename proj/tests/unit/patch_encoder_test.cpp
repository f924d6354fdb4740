#include <string>
#include <vector>

#include "doctest.h"
#include "trajtok/patch_encoder.hpp"
#include "trajtok/rng.hpp"

using namespace trajtok;

namespace {

Tensor rand_video(long long T, long long H, long long W, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<double> v(static_cast<size_t>(T * H * W * 3));
  for (size_t i = 0; i < v.size(); ++i) v[i] = rng.unit(i);
  return Tensor::from({T, H, W, 3}, std::move(v));
}

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.stage_depths = {1, 1, 1};
  c.stage_widths = {4, 6, 8};
  c.d = 8;
  c.fuse_stem = true;
  return c;
}

bool bits_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (long long i = 0; i < a.size(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

// reassemble a params struct from the flat tensor list used by grad_check
EncoderParams params_from_vector(const EncoderConfig& cfg, const std::vector<Tensor>& v, size_t offset) {
  EncoderParams p = init_encoder_params(cfg, CounterRng(0));
  size_t i = offset;
  p.visit([&](const std::string&, Tensor& t) { t = v.at(i++); });
  return p;
}

}  // namespace

TEST_SUITE("patch-encoder") {

TEST_CASE("resolution contract and input rejection") {
  const EncoderConfig cfg = tiny_config();
  EncoderParams p = init_encoder_params(cfg, CounterRng(1));
  FeatureMap f = encode_frames(rand_video(2, 32, 48, 3), cfg, p);
  CHECK(f.h == 8);
  CHECK(f.w == 12);
  CHECK(f.frames == 2);
  CHECK(f.values.shape() == Shape{2 * 8 * 12, 8});
  CHECK_THROWS_AS(encode_frames(rand_video(1, 20, 32, 3), cfg, p), std::invalid_argument);
  CHECK_THROWS_AS(encode_frames(Tensor::zeros({16, 16, 3}), cfg, p), std::invalid_argument);
}

TEST_CASE("initialization is deterministic in the seed") {
  const EncoderConfig cfg = tiny_config();
  EncoderParams a = init_encoder_params(cfg, CounterRng(5));
  EncoderParams b = init_encoder_params(cfg, CounterRng(5));
  EncoderParams c = init_encoder_params(cfg, CounterRng(6));
  auto na = named_tensors(a), nb = named_tensors(b), nc = named_tensors(c);
  REQUIRE(na.size() == nb.size());
  bool any_diff = false;
  for (size_t i = 0; i < na.size(); ++i) {
    CHECK(na[i].first == nb[i].first);
    CHECK(bits_equal(na[i].second, nb[i].second));
    if (!bits_equal(na[i].second, nc[i].second)) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("permuting input frames permutes feature rows identically") {
  const EncoderConfig cfg = tiny_config();
  EncoderParams p = init_encoder_params(cfg, CounterRng(2));
  Tensor video = rand_video(3, 16, 16, 4);
  const long long perm[3] = {2, 0, 1};
  Tensor permuted = take_rows(video.reshaped({3, 16 * 16 * 3}), {2, 0, 1}).reshaped({3, 16, 16, 3});
  FeatureMap a = encode_frames(video, cfg, p);
  FeatureMap b = encode_frames(permuted, cfg, p);
  const long long rows = a.h * a.w;
  for (long long t = 0; t < 3; ++t)
    for (long long r = 0; r < rows; ++r)
      for (long long c = 0; c < cfg.d; ++c)
        REQUIRE(b.values.data()[(t * rows + r) * cfg.d + c] ==
                a.values.data()[(perm[t] * rows + r) * cfg.d + c]);
}

TEST_CASE("a frame encodes identically alone or inside a longer video") {
  const EncoderConfig cfg = tiny_config();
  EncoderParams p = init_encoder_params(cfg, CounterRng(3));
  Tensor video = rand_video(8, 16, 16, 5);
  FeatureMap whole = encode_frames(video, cfg, p);
  Tensor frame5 = take_rows(video.reshaped({8, 16 * 16 * 3}), {5}).reshaped({1, 16, 16, 3});
  FeatureMap solo = encode_frames(frame5, cfg, p);
  const long long rows = whole.h * whole.w;
  for (long long i = 0; i < rows * cfg.d; ++i)
    REQUIRE(solo.values.data()[i] == whole.values.data()[5 * rows * cfg.d + i]);
}

TEST_CASE("zero input with freshly initialized (zero) biases yields zero features") {
  const EncoderConfig cfg = tiny_config();
  EncoderParams p = init_encoder_params(cfg, CounterRng(4));
  FeatureMap f = encode_frames(Tensor::zeros({1, 16, 16, 3}), cfg, p);
  for (long long i = 0; i < f.values.size(); ++i) CHECK(f.values.data()[i] == 0.0);
}

TEST_CASE("without stem fusion only the final stage feeds the output") {
  EncoderConfig cfg = tiny_config();
  EncoderParams p = init_encoder_params(cfg, CounterRng(6));
  Tensor video = rand_video(1, 16, 16, 7);
  FeatureMap with_stem = encode_frames(video, cfg, p);
  cfg.fuse_stem = false;
  FeatureMap without = encode_frames(video, cfg, p);
  CHECK_FALSE(bits_equal(with_stem.values, without.values));

  // the unused fusion projections are never read: perturbing them is invisible
  EncoderParams q = init_encoder_params(tiny_config(), CounterRng(6));
  q.fuse_stem_w.mutable_data()[0] += 100.0;
  q.fuse_stage_w[0].mutable_data()[0] -= 7.0;
  q.fuse_stage_w[1].mutable_data()[1] += 3.0;
  CHECK(bits_equal(encode_frames(video, cfg, q).values, without.values));
}

TEST_CASE("full-encoder gradients agree with finite differences") {
  const EncoderConfig cfg = tiny_config();
  EncoderParams p = init_encoder_params(cfg, CounterRng(8));
  Tensor video = rand_video(1, 16, 16, 9);

  std::vector<Tensor> inputs = {video};
  p.visit([&](const std::string&, Tensor& t) { inputs.push_back(t); });

  CounterRng wrng(11);
  std::vector<double> wv(static_cast<size_t>(16 * 8));
  for (size_t i = 0; i < wv.size(); ++i) wv[i] = wrng.uniform(i, -1, 1);
  Tensor weights = Tensor::from({16, 8}, std::move(wv));

  auto f = [&](const std::vector<Tensor>& v) {
    EncoderParams q = params_from_vector(cfg, v, 1);
    FeatureMap fm = encode_frames(v[0].reshaped({1, 16, 16, 3}), cfg, q);
    return sum_all(mul(fm.values, weights));
  };

  std::vector<std::vector<long long>> coords;
  for (const Tensor& t : inputs) {
    std::vector<long long> c;
    const long long n = std::min<long long>(t.size(), 10);
    for (long long i = 0; i < n; ++i) c.push_back(i * t.size() / n);
    coords.push_back(std::move(c));
  }
  const GradCheckResult r = grad_check_multi(f, inputs, 1e-5, &coords);
  CHECK(r.max_rel_err < 1e-4);
  CHECK(r.coords_checked > 100);
}

}  // TEST_SUITE
