#include <algorithm>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "trajtok/pipeline.hpp"
#include "trajtok/rng.hpp"

using namespace trajtok;
namespace fs = std::filesystem;

namespace {

Config tiny_config(std::uint64_t seed) {
  Config c;
  c.encoder.stage_depths = {1, 1, 1};
  c.encoder.stage_widths = {4, 6, 8};
  c.encoder.d = 8;
  c.segmenter.n_queries = 3;
  c.segmenter.perceiver_layers = 1;
  c.segmenter.heads = 2;
  c.segmenter.chunk_len = 4;
  c.traj.refine_layers = 1;
  c.traj.refine_heads = 2;
  c.dataset.width = 16;
  c.dataset.height = 16;
  c.dataset.frames = 6;
  c.train.seed = seed;
  return c;
}

Tensor rand_video(long long t, long long hw, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<double> v(static_cast<size_t>(t * hw * hw * 3));
  for (size_t i = 0; i < v.size(); ++i) v[i] = rng.unit(static_cast<std::uint64_t>(i));
  return Tensor::from({t, hw, hw, 3}, std::move(v));
}

bool bits_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (long long i = 0; i < a.size(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("initialization is seed-deterministic and seed-sensitive") {
  Config cfg = tiny_config(5);
  TrajTokModel a = init_model(cfg);
  TrajTokModel b = init_model(cfg);
  bool all_equal = true;
  a.visit([&](const std::string& name, Tensor& t) {
    b.visit([&](const std::string& name2, Tensor& t2) {
      if (name == name2 && !bits_equal(t, t2)) all_equal = false;
    });
  });
  CHECK(all_equal);

  Config other = tiny_config(6);
  TrajTokModel c = init_model(other);
  bool any_diff = false;
  a.visit([&](const std::string& name, Tensor& t) {
    c.visit([&](const std::string& name2, Tensor& t2) {
      if (name == name2 && !bits_equal(t, t2)) any_diff = true;
    });
  });
  CHECK(any_diff);
}

TEST_CASE("the model exposes every module under unique prefixed names") {
  Config cfg = tiny_config(1);
  TrajTokModel m = init_model(cfg);
  std::set<std::string> names;
  long long count = 0;
  m.visit([&](const std::string& name, Tensor&) {
    names.insert(name);
    ++count;
  });
  CHECK(count == static_cast<long long>(names.size()));  // no duplicates
  CHECK(names.count("encoder.stem.w") == 1);
  CHECK(names.count("segmenter.queries") == 1);
  CHECK(names.count("traj.bank.residuals") == 1);
  CHECK(names.count("contrast.label_embeddings") == 1);
  for (const std::string& n : names)
    CHECK((n.rfind("encoder.", 0) == 0 || n.rfind("segmenter.", 0) == 0 || n.rfind("traj.", 0) == 0 ||
           n.rfind("contrast.", 0) == 0));
}

TEST_CASE("tokenization composes chunking, segmentation, and refinement") {
  Config cfg = tiny_config(2);
  TrajTokModel m = init_model(cfg);
  Tensor video = rand_video(6, 16, 7);  // chunk_len 4 -> chunks of 4 and 2

  TokenizeResult r = tokenize(video, cfg, m, 2);
  REQUIRE(r.chunks.size() == 2);
  CHECK(r.chunks[0].features.frames == 4);
  CHECK(r.chunks[1].features.frames == 2);
  for (size_t c = 0; c < 2; ++c) {
    const ChunkResult& ch = r.chunks[c];
    CHECK(ch.tokens.n_active <= cfg.segmenter.n_queries);
    CHECK(ch.tokens.n_active >= 1);
    CHECK(ch.tokens.tokens.dim(0) == ch.tokens.n_active * 2);
    CHECK(ch.tokens.tokens.dim(1) == cfg.encoder.d);
    for (const TokenOrigin& o : ch.tokens.origin) CHECK(o.chunk == static_cast<long long>(c));
  }

  SUBCASE("repeated runs are bit-identical") {
    TokenizeResult r2 = tokenize(video, cfg, m, 2);
    for (size_t c = 0; c < 2; ++c) {
      CHECK(bits_equal(r.chunks[c].seg.soft, r2.chunks[c].seg.soft));
      CHECK(bits_equal(r.chunks[c].tokens.tokens, r2.chunks[c].tokens.tokens));
    }
  }

  SUBCASE("the first sub-token survives raising n") {
    TokenizeResult r1 = tokenize(video, cfg, m, 1);
    TokenizeResult r4 = tokenize(video, cfg, m, 4);
    for (size_t c = 0; c < 2; ++c) {
      const Tensor& t1 = r1.chunks[c].tokens.tokens;
      const Tensor& t4 = r4.chunks[c].tokens.tokens;
      REQUIRE(t4.dim(0) == 4 * t1.dim(0));
      for (long long k = 0; k < t1.dim(0); ++k)
        for (long long col = 0; col < t1.dim(1); ++col)
          CHECK(t1.data()[k * t1.dim(1) + col] == t4.data()[(4 * k) * t4.dim(1) + col]);
    }
  }
}

TEST_CASE("checkpoints restore a model exactly and reject drift") {
  Config cfg = tiny_config(3);
  TrajTokModel m = init_model(cfg);
  const fs::path dir = fs::temp_directory_path() / "trajtok_pipeline_ckpt";
  fs::remove_all(dir);

  io::Checkpoint c = model_checkpoint(m, cfg, "step=7");
  io::save_checkpoint(dir.string(), c);
  io::Checkpoint back = io::load_checkpoint(dir.string());
  CHECK(back.meta == "step=7");
  CHECK(parse_config(back.config_text) == cfg);

  TrajTokModel fresh = init_model(tiny_config(99));  // different weights
  load_model_params(fresh, back);
  bool equal = true;
  long long seen = 0;
  m.visit([&](const std::string& name, Tensor& t) {
    fresh.visit([&](const std::string& name2, Tensor& t2) {
      if (name != name2) return;
      ++seen;
      if (!bits_equal(t, t2)) equal = false;
    });
  });
  CHECK(equal);
  CHECK(seen > 20);

  Tensor video = rand_video(4, 16, 11);
  TokenizeResult ra = tokenize(video, cfg, m, 1);
  TokenizeResult rb = tokenize(video, cfg, fresh, 1);
  CHECK(bits_equal(ra.chunks[0].tokens.tokens, rb.chunks[0].tokens.tokens));

  SUBCASE("unknown, repeated, missing, and misshapen entries are rejected") {
    io::Checkpoint bad = back;
    bad.params.emplace_back("nonsense.w", Tensor::zeros({2, 2}));
    CHECK_THROWS_AS(load_model_params(fresh, bad), std::invalid_argument);

    io::Checkpoint dup = back;
    dup.params.push_back(dup.params.front());
    CHECK_THROWS_AS(load_model_params(fresh, dup), std::invalid_argument);

    io::Checkpoint missing = back;
    missing.params.pop_back();
    CHECK_THROWS_AS(load_model_params(fresh, missing), std::invalid_argument);

    io::Checkpoint shaped = back;
    shaped.params.front().second = Tensor::zeros({1, 1});
    CHECK_THROWS_AS(load_model_params(fresh, shaped), std::invalid_argument);
  }

  fs::remove_all(dir);
}

}  // TEST_SUITE
