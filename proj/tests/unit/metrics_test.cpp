#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "trajtok/metrics.hpp"
#include "trajtok/rng.hpp"

using namespace trajtok;
using namespace trajtok::metrics;

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

// Labels on a 1x(h*w) grid: one frame, explicit per-cell values.
std::vector<std::int32_t> cells_of(std::initializer_list<int> v) {
  std::vector<std::int32_t> out;
  for (int x : v) out.push_back(static_cast<std::int32_t>(x));
  return out;
}

std::vector<long long> range_cells(long long lo, long long hi) {
  std::vector<long long> out;
  for (long long s = lo; s < hi; ++s) out.push_back(s);
  return out;
}

// Exhaustive max-sum assignment of ground-truth trajectories to predictions.
double best_assignment(const std::vector<std::vector<double>>& overlap, size_t g,
                       std::vector<char>& used) {
  const size_t n_gt = overlap.empty() ? 0 : overlap[0].size();
  if (g == n_gt) return 0.0;
  double best = best_assignment(overlap, g + 1, used);  // leave gt g unmatched
  for (size_t p = 0; p < overlap.size(); ++p) {
    if (used[p]) continue;
    used[p] = 1;
    best = std::max(best, overlap[p][g] + best_assignment(overlap, g + 1, used));
    used[p] = 0;
  }
  return best;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("majority vote downsampling picks the most frequent label, smallest on ties") {
  // one 8x8 frame -> 2x2 cells of 4x4 pixel blocks
  std::vector<std::int32_t> labels(64, 0);
  auto put = [&](long long y, long long x, std::int32_t v) { labels[static_cast<size_t>(y * 8 + x)] = v; };
  for (long long y = 0; y < 4; ++y)
    for (long long x = 0; x < 4; ++x) put(y, x, 5);  // block (0,0): all 5
  for (long long y = 0; y < 4; ++y)
    for (long long x = 4; x < 8; ++x) put(y, x, (y < 2) ? 2 : 3);  // block (0,1): 8 vs 8 tie
  // block (1,0) stays all background
  for (long long y = 4; y < 8; ++y)
    for (long long x = 4; x < 8; ++x) put(y, x, 1);
  put(4, 4, 0);  // block (1,1): 15 ones vs 1 zero

  std::vector<std::int32_t> cells = majority_downsample(labels, 1, 8, 8, 2, 2);
  REQUIRE(cells.size() == 4);
  CHECK(cells[0] == 5);
  CHECK(cells[1] == 2);  // tie between 2 and 3 resolved downward
  CHECK(cells[2] == 0);
  CHECK(cells[3] == 1);

  SUBCASE("background wins ties against shapes") {
    std::vector<std::int32_t> half(16, 0);
    for (size_t i = 0; i < 8; ++i) half[i] = 4;  // 8 background vs 8 label-4
    std::vector<std::int32_t> one = majority_downsample(half, 1, 4, 4, 1, 1);
    CHECK(one[0] == 0);
  }

  SUBCASE("bad extents are rejected") {
    CHECK_THROWS_AS(majority_downsample(labels, 1, 8, 8, 3, 2), std::invalid_argument);
    CHECK_THROWS_AS(majority_downsample(labels, 2, 8, 8, 2, 2), std::invalid_argument);
    CHECK_THROWS_AS(majority_downsample(labels, 1, 8, 8, 0, 2), std::invalid_argument);
  }
}

TEST_CASE("cell-set IoU") {
  CHECK(iou(range_cells(0, 8), range_cells(0, 8)) == 1.0);
  CHECK(iou(range_cells(0, 4), range_cells(4, 8)) == 0.0);
  CHECK(iou(range_cells(0, 4), range_cells(0, 8)) == 0.5);
  CHECK(iou({1, 5, 9}, {5}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(iou({}, {}) == 0.0);
}

TEST_CASE("matched trajectory mIoU anchors") {
  // 1x16 grid, two gt trajectories: cells 0..7 -> label 1, cells 8..11 -> label 2
  std::vector<std::int32_t> gt = cells_of({1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 0, 0, 0, 0});

  SUBCASE("identical prediction scores 1") {
    std::vector<std::vector<long long>> pred = {range_cells(0, 8), range_cells(8, 12)};
    CHECK(trajectory_miou(pred, gt) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("disjoint prediction scores 0") {
    std::vector<std::vector<long long>> pred = {range_cells(12, 16)};
    CHECK(trajectory_miou(pred, gt) == 0.0);
  }
  SUBCASE("half of the only region scores one half") {
    std::vector<std::int32_t> single = cells_of({1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0});
    std::vector<std::vector<long long>> pred = {range_cells(0, 4)};
    CHECK(trajectory_miou(pred, single) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("an extra disjoint prediction does not dilute the mean") {
    std::vector<std::vector<long long>> pred = {range_cells(0, 8), range_cells(8, 12),
                                                range_cells(12, 16)};
    CHECK(trajectory_miou(pred, gt) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("unmatched ground truth scores zero") {
    std::vector<std::vector<long long>> pred = {range_cells(0, 8)};
    CHECK(trajectory_miou(pred, gt) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("no predictions scores zero") {
    CHECK(trajectory_miou(std::vector<std::vector<long long>>{}, gt) == 0.0);
  }
  SUBCASE("unlabeled ground truth is rejected") {
    std::vector<std::int32_t> empty(16, 0);
    std::vector<std::vector<long long>> pred = {range_cells(0, 4)};
    CHECK_THROWS_AS(trajectory_miou(pred, empty), std::invalid_argument);
  }
}

TEST_CASE("matched mIoU equals exhaustive assignment on small instances") {
  const long long cells = 32;
  CounterRng rng(41);
  for (std::uint64_t trial = 0; trial < 300; ++trial) {
    const CounterRng t = rng.stream(trial);
    const long long n_gt = 1 + static_cast<long long>(t.below(0, 6));
    const long long n_pred = 1 + static_cast<long long>(t.below(1, 6));

    std::vector<std::int32_t> gt(static_cast<size_t>(cells), 0);
    for (long long s = 0; s < cells; ++s)
      gt[static_cast<size_t>(s)] = static_cast<std::int32_t>(t.stream(2).below(static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(n_gt + 1)));
    for (long long l = 1; l <= n_gt; ++l) gt[static_cast<size_t>(l - 1)] = static_cast<std::int32_t>(l);

    std::vector<std::vector<long long>> pred(static_cast<size_t>(n_pred));
    for (long long p = 0; p < n_pred; ++p) {
      for (long long s = 0; s < cells; ++s)
        if (s == p || t.stream(3 + static_cast<std::uint64_t>(p)).below(static_cast<std::uint64_t>(s), 10) < 3)
          pred[static_cast<size_t>(p)].push_back(s);
    }

    std::vector<std::vector<long long>> gt_sets(static_cast<size_t>(n_gt));
    for (long long s = 0; s < cells; ++s)
      if (gt[static_cast<size_t>(s)] != 0) gt_sets[static_cast<size_t>(gt[static_cast<size_t>(s)] - 1)].push_back(s);
    std::vector<std::vector<double>> overlap(static_cast<size_t>(n_pred),
                                             std::vector<double>(static_cast<size_t>(n_gt)));
    for (long long p = 0; p < n_pred; ++p)
      for (long long g = 0; g < n_gt; ++g)
        overlap[static_cast<size_t>(p)][static_cast<size_t>(g)] =
            iou(pred[static_cast<size_t>(p)], gt_sets[static_cast<size_t>(g)]);
    std::vector<char> used(static_cast<size_t>(n_pred), 0);
    const double want = best_assignment(overlap, 0, used) / static_cast<double>(n_gt);

    const double got = trajectory_miou(pred, gt);
    REQUIRE(got == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("predicted regions partition each chunk at the right frame offsets") {
  Config cfg = tiny_config(2);
  TrajTokModel m = init_model(cfg);
  CounterRng prng(77);
  std::vector<double> px(static_cast<size_t>(6 * 16 * 16 * 3));
  for (size_t i = 0; i < px.size(); ++i) px[i] = prng.unit(static_cast<std::uint64_t>(i));
  Tensor video = Tensor::from({6, 16, 16, 3}, std::move(px));
  TokenizeResult r = tokenize(video, cfg, m, 1);
  REQUIRE(r.chunks.size() == 2);

  std::vector<std::vector<long long>> regions = predicted_regions(r);
  long long expect = 0;
  for (const ChunkResult& ch : r.chunks) expect += ch.tokens.n_active;
  CHECK(static_cast<long long>(regions.size()) == expect);

  const long long hw = r.chunks[0].features.h * r.chunks[0].features.w;
  const long long chunk0_cells = r.chunks[0].features.frames * hw;
  const long long total_cells = chunk0_cells + r.chunks[1].features.frames * hw;
  std::vector<int> seen(static_cast<size_t>(total_cells), 0);
  for (const std::vector<long long>& reg : regions) {
    CHECK(!reg.empty());
    CHECK(std::is_sorted(reg.begin(), reg.end()));
    for (long long s : reg) ++seen[static_cast<size_t>(s)];
  }
  // hard assignment covers every cell exactly once
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));

  SUBCASE("whole-video overload stays in range on a labeled scene") {
    synthetic::SceneSpec spec;
    spec.width = 16;
    spec.height = 16;
    spec.frames = 6;
    spec.shape_count = 2;
    spec.seed = 5;
    synthetic::LabeledVideo v = synthetic::generate(spec);
    TokenizeResult tr = tokenize(v.pixels, cfg, m, 1);
    const double miou = trajectory_miou(tr, v);
    CHECK(miou >= 0.0);
    CHECK(miou <= 1.0);
  }
}

TEST_CASE("coverage, object count, and quality filters") {
  std::vector<std::int32_t> labels(100, 0);
  for (size_t i = 0; i < 80; ++i) labels[i] = static_cast<std::int32_t>(1 + i % 10);

  CHECK(coverage(labels) == 0.8);
  CHECK(object_count(labels) == 10);
  CHECK(object_count(std::vector<std::int32_t>(5, 0)) == 0);
  CHECK_THROWS_AS(coverage({}), std::invalid_argument);

  synthetic::LabeledVideo v;
  v.frames = 1;
  v.height = 10;
  v.width = 10;
  v.labels = labels;
  CHECK(metrics::passes_filters(v));  // both boundaries are inclusive

  v.labels[79] = 0;  // coverage 0.79
  CHECK_FALSE(metrics::passes_filters(v));
  CHECK(metrics::passes_filters(v, 0.79, 10));

  for (size_t i = 0; i < 100; ++i) v.labels[i] = (i < 80) ? static_cast<std::int32_t>(1 + i % 9) : 0;
  CHECK(object_count(v.labels) == 9);
  CHECK_FALSE(metrics::passes_filters(v));  // one object short of the default threshold
  CHECK(metrics::passes_filters(v, 0.8, 9));
}

TEST_CASE("flop formula anchors") {
  CHECK(matmul_flops(2, 3, 4) == 48.0);
  CHECK(attention_flops(5, 3) == 4 * 5 * 9 + 4 * 25 * 3);
  CHECK(cross_attention_flops(7, 7, 3) == attention_flops(7, 3));
  CHECK(depthwise_flops(7, 2, 10) == 2 * 49 * 2 * 10);
  // one layer, width 2: 20*L*w^2 + 4*L^2*w
  DownstreamSpec ds{1, 2};
  CHECK(transformer_flops(1, 2, 1) == 88.0);
  CHECK(vit3d_flops(2, 16, 16, ds) == 88.0);    // (2/2)*(16/16)*(16/16) = 1 token
  CHECK(vit3d_flops(4, 16, 16, ds) == 192.0);   // 2 tokens
  CHECK(vit3d_flops(4, 16, 16, ds) > 2 * vit3d_flops(2, 16, 16, ds));  // superlinear in frames
}

TEST_CASE("flop model scaling properties") {
  Config cfg = tiny_config(1);
  cfg.dataset.height = 64;
  cfg.dataset.width = 64;
  DownstreamSpec ds;  // default downstream transformer
  const double traj = 12.0, n_sub = 2.0;
  auto tt = [&](double t, double h, double w) { return trajtok_flops(cfg, t, h, w, traj, n_sub, ds); };

  SUBCASE("trajectory model grows linearly in frames; downstream term is constant") {
    FlopsBreakdown b8 = tt(8, 64, 64), b16 = tt(16, 64, 64), b32 = tt(32, 64, 64);
    CHECK(b8.downstream == b16.downstream);
    CHECK(b8.downstream == b32.downstream);
    const double d1 = b16.total - b8.total;
    const double d2 = b32.total - b16.total;
    CHECK(d2 == doctest::Approx(2.0 * d1).epsilon(1e-9));
    // the slope is exactly the tokenizer-side terms
    const double tokenizer16 = b16.encoder + b16.segmenter + b16.aggregation + b16.refinement;
    const double tokenizer8 = b8.encoder + b8.segmenter + b8.aggregation + b8.refinement;
    CHECK(d1 == doctest::Approx(tokenizer16 - tokenizer8).epsilon(1e-12));
  }

  SUBCASE("both models strictly increase in every extent") {
    const double base = tt(8, 64, 64).total;
    CHECK(tt(9, 64, 64).total > base);
    CHECK(tt(8, 68, 64).total > base);
    CHECK(tt(8, 64, 68).total > base);
    Config wider = cfg;
    wider.encoder.d = cfg.encoder.d + 1;
    CHECK(trajtok_flops(wider, 8, 64, 64, traj, n_sub, ds).total > base);

    const double vb = vit3d_flops(8, 64, 64, ds);
    CHECK(vit3d_flops(9, 64, 64, ds) > vb);
    CHECK(vit3d_flops(8, 68, 64, ds) > vb);
    CHECK(vit3d_flops(8, 64, 68, ds) > vb);
    DownstreamSpec widest{12, 769};
    CHECK(vit3d_flops(8, 64, 64, widest) > vb);
  }

  SUBCASE("the cost ratio strictly decreases with duration") {
    double prev = 1e300;
    for (double t : {8.0, 16.0, 32.0, 64.0, 128.0}) {
      const double ratio = tt(t, 64, 64).total / vit3d_flops(t, 64, 64, ds);
      CHECK(ratio < prev);
      prev = ratio;
    }
  }

  SUBCASE("csv table has one monotone row per frame count") {
    const std::string csv = flops_csv(cfg, {16, 32, 64, 128}, traj, n_sub, ds);
    std::istringstream in(csv);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "frames,trajtok,vit3d");
    double prev_tt = 0.0, prev_v = 0.0;
    int rows = 0;
    while (std::getline(in, line)) {
      const size_t c1 = line.find(','), c2 = line.rfind(',');
      REQUIRE(c1 != std::string::npos);
      REQUIRE(c2 > c1);
      const double ttv = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
      const double vv = std::stod(line.substr(c2 + 1));
      CHECK(ttv > prev_tt);
      CHECK(vv > prev_v);
      prev_tt = ttv;
      prev_v = vv;
      ++rows;
    }
    CHECK(rows == 4);
  }
}

TEST_CASE("evaluation report aggregates a small labeled dataset") {
  Config cfg = tiny_config(3);
  TrajTokModel m = init_model(cfg);
  std::vector<synthetic::LabeledVideo> videos;
  for (std::uint64_t s = 0; s < 3; ++s) {
    synthetic::SceneSpec spec;
    spec.width = 16;
    spec.height = 16;
    spec.frames = 6;
    spec.shape_count = 2;
    spec.seed = 100 + s;
    videos.push_back(synthetic::generate(spec));
  }

  EvalReport rep = evaluate(videos, cfg, m, 2);
  CHECK(rep.videos + rep.skipped == 3);
  CHECK(rep.trajectory_miou >= 0.0);
  CHECK(rep.trajectory_miou <= 1.0);
  CHECK(rep.coverage >= 0.0);
  CHECK(rep.coverage <= 1.0);
  CHECK(rep.object_count >= 0.0);
  CHECK(rep.tokens_per_chunk.size() == 2);  // 6 frames / chunk_len 4
  CHECK(rep.trajtok_flops > 0.0);
  CHECK(rep.vit3d_flops > 0.0);

  const std::string text = rep.text();
  CHECK(text.find("trajectory_miou=") != std::string::npos);
  CHECK(text.find("coverage=") != std::string::npos);
  CHECK(text.find("tokens_per_chunk=") != std::string::npos);
  CHECK(rep.csv_header().find("trajectory_miou,") == 0);
  const std::string row = rep.csv_row();
  CHECK(std::count(row.begin(), row.end(), ',') == 6);

  CHECK_THROWS_AS(evaluate({}, cfg, m, 1), std::invalid_argument);

  SUBCASE("results are repeatable") {
    EvalReport rep2 = evaluate(videos, cfg, m, 2);
    CHECK(rep2.text() == rep.text());
  }
}

}  // TEST_SUITE
