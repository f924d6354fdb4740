#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "doctest.h"
#include "trajtok/losses.hpp"
#include "trajtok/patch_encoder.hpp"
#include "trajtok/rng.hpp"
#include "trajtok/segmenter.hpp"
#include "trajtok/traj_encoder.hpp"

using namespace trajtok;

namespace {

Tensor rand_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  long long n = 1;
  for (long long d : s) n *= d;
  CounterRng rng(seed);
  std::vector<double> v(static_cast<size_t>(n));
  for (long long i = 0; i < n; ++i) v[static_cast<size_t>(i)] = rng.uniform(static_cast<std::uint64_t>(i), lo, hi);
  return Tensor::from(std::move(s), std::move(v));
}

using Pairs = std::vector<std::pair<long long, long long>>;

// Exhaustive reference: enumerate every assignment of min(R, C) pairs,
// track the cheapest cost, and return the lexicographically smallest
// row-sorted pair list among the optima.
struct BruteResult {
  double cost = 0.0;
  Pairs pairs;
};

BruteResult brute_force_match(const Tensor& cost) {
  const long long R = cost.dim(0), C = cost.dim(1);
  const long long need = std::min(R, C);
  const double* a = cost.data();
  BruteResult best;
  bool found = false;
  Pairs cur;
  std::vector<char> used(static_cast<size_t>(C), 0);
  std::function<void(long long, double)> walk = [&](long long row, double sum) {
    if (static_cast<long long>(cur.size()) == need) {
      if (!found || sum < best.cost - 1e-15 ||
          (std::fabs(sum - best.cost) <= 1e-15 && cur < best.pairs)) {
        best.cost = sum;
        best.pairs = cur;
        found = true;
      }
      return;
    }
    if (row == R) return;
    const long long rows_left = R - row - 1;
    // skip this row if enough rows remain to fill the quota
    if (static_cast<long long>(cur.size()) + rows_left >= need) walk(row + 1, sum);
    for (long long j = 0; j < C; ++j) {
      if (used[static_cast<size_t>(j)]) continue;
      used[static_cast<size_t>(j)] = 1;
      cur.emplace_back(row, j);
      walk(row + 1, sum + a[row * C + j]);
      cur.pop_back();
      used[static_cast<size_t>(j)] = 0;
    }
  };
  walk(0, 0.0);
  return best;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("dice loss hits its anchors and stays in range") {
  Tensor t = Tensor::from({6}, {1, 1, 0, 0, 1, 0});
  CHECK(dice_loss(t, t, 1e-6).data()[0] == doctest::Approx(0.0).epsilon(1e-6));

  Tensor disjoint = Tensor::from({6}, {0, 0, 1, 1, 0, 1});
  CHECK(dice_loss(disjoint, t, 1e-6).data()[0] == doctest::Approx(1.0).epsilon(1e-5));

  Tensor pred = Tensor::from({2}, {0.5, 0.5});
  Tensor half = Tensor::from({2}, {1, 0});
  CHECK(dice_loss(pred, half, 1e-6).data()[0] == doctest::Approx(0.5).epsilon(1e-5));

  for (int s = 0; s < 20; ++s) {
    Tensor p = rand_tensor({12}, 100 + s, 0.0, 1.0);
    Tensor tt = Tensor::zeros({12});
    CounterRng rng(200 + s);
    for (long long i = 0; i < 12; ++i) tt.mutable_data()[i] = rng.bits(static_cast<std::uint64_t>(i)) & 1 ? 1.0 : 0.0;
    const double v = dice_loss(p, tt, 1e-6).data()[0];
    CHECK(v >= 0.0);
    CHECK(v <= 1.0 + 1e-6);
  }

  CHECK_THROWS_AS(dice_loss(t, Tensor::zeros({3}), 1e-6), std::invalid_argument);
}

TEST_CASE("focal loss anchors: perfect prediction, bce reduction, gamma damping") {
  Tensor ones = Tensor::full({4}, 1.0);
  CHECK(focal_loss(ones, ones, 0.25, 2.0).data()[0] == doctest::Approx(0.0).epsilon(1e-12));

  Tensor half = Tensor::from({1}, {0.5});
  Tensor on = Tensor::from({1}, {1.0});
  CHECK(focal_loss(half, on, 1.0, 0.0).data()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-9));

  Tensor p = Tensor::from({1}, {0.3});
  const double g0 = focal_loss(p, on, 0.25, 0.0).data()[0];
  const double g1 = focal_loss(p, on, 0.25, 1.0).data()[0];
  const double g2 = focal_loss(p, on, 0.25, 2.0).data()[0];
  CHECK(g0 > g1);
  CHECK(g1 > g2);
  CHECK(g2 > 0.0);

  CHECK_THROWS_AS(focal_loss(p, on, 0.0, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(focal_loss(p, on, 0.25, -1.0), std::invalid_argument);
}

TEST_CASE("dice and focal gradients agree with finite differences") {
  Tensor target = Tensor::from({8}, {1, 0, 1, 1, 0, 0, 1, 0});
  Tensor pred0 = rand_tensor({8}, 7, 0.05, 0.95);
  auto fd = grad_check_multi([&](const std::vector<Tensor>& v) { return dice_loss(v[0], target, 1e-6); },
                             {pred0}, 1e-6);
  CHECK(fd.max_rel_err < 1e-4);
  auto ff = grad_check_multi(
      [&](const std::vector<Tensor>& v) { return focal_loss(v[0], target, 0.25, 2.0); }, {pred0}, 1e-6);
  CHECK(ff.max_rel_err < 1e-4);
}

TEST_CASE("matching: pinned small cases and documented tie-breaks") {
  CHECK(hungarian_match(Tensor::from({1, 1}, {3.5})).pairs == Pairs{{0, 0}});

  Matching m = hungarian_match(Tensor::from({2, 2}, {1, 2, 3, 0}));
  CHECK(m.pairs == Pairs{{0, 0}, {1, 1}});
  CHECK(m.cost == doctest::Approx(1.0));

  Matching id3 = hungarian_match(Tensor::from({3, 3}, {0, 1, 1, 1, 0, 1, 1, 1, 0}));
  CHECK(id3.pairs == Pairs{{0, 0}, {1, 1}, {2, 2}});

  // all ties -> lexicographically smallest assignment
  CHECK(hungarian_match(Tensor::zeros({3, 3})).pairs == Pairs{{0, 0}, {1, 1}, {2, 2}});
  CHECK(hungarian_match(Tensor::full({2, 2}, 1.0)).pairs == Pairs{{0, 0}, {1, 1}});
  // more rows than columns: earlier rows win the scarce columns
  CHECK(hungarian_match(Tensor::zeros({3, 1})).pairs == Pairs{{0, 0}});
  CHECK(hungarian_match(Tensor::zeros({3, 2})).pairs == Pairs{{0, 0}, {1, 1}});
  // unless a later row is strictly cheaper
  CHECK(hungarian_match(Tensor::from({3, 1}, {5, 5, 1})).pairs == Pairs{{2, 0}});

  CHECK_THROWS_AS(hungarian_match(Tensor::from({1}, {1.0})), std::invalid_argument);
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(hungarian_match(Tensor::from({1, 1}, {inf})), std::invalid_argument);
}

TEST_CASE("matching equals exhaustive search on random rectangles") {
  CounterRng rng(42);
  long long checked = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const std::uint64_t base = static_cast<std::uint64_t>(trial) * 8;
    const long long R = 1 + static_cast<long long>(rng.below(base, 6));
    const long long C = 1 + static_cast<long long>(rng.below(base + 1, 6));
    Tensor cost = Tensor::zeros({R, C});
    CounterRng cr(900 + static_cast<std::uint64_t>(trial));
    for (long long i = 0; i < R * C; ++i)
      cost.mutable_data()[i] = cr.uniform(static_cast<std::uint64_t>(i), -5.0, 5.0);
    // quantized costs force frequent exact ties
    if (trial % 3 == 0)
      for (long long i = 0; i < R * C; ++i)
        cost.mutable_data()[i] = std::floor(cost.mutable_data()[i]);

    const BruteResult want = brute_force_match(cost);
    const Matching got = hungarian_match(cost);
    REQUIRE(got.cost == doctest::Approx(want.cost).epsilon(1e-9));
    REQUIRE(got.pairs == want.pairs);
    ++checked;
  }
  CHECK(checked == 400);
}

TEST_CASE("segmentation loss: recovery, ablations, permutation invariance") {
  const long long P = 12;
  Tensor gt = Tensor::zeros({3, P});
  for (long long p = 0; p < P; ++p) gt.mutable_data()[(p % 3) * P + p] = 1.0;

  // soft = one-hot permutation (query 0 -> region 2, 1 -> 0, 2 -> 1)
  const long long perm[3] = {2, 0, 1};
  Tensor soft = Tensor::zeros({3, P});
  for (long long p = 0; p < P; ++p)
    for (long long k = 0; k < 3; ++k)
      if (perm[k] == p % 3) soft.mutable_data()[k * P + p] = 1.0;

  LossConfig cfg;
  SegLossResult r = segmentation_loss(soft, gt, cfg);
  CHECK(r.assignment == Pairs{{0, 2}, {1, 0}, {2, 1}});
  CHECK(r.total.data()[0] == doctest::Approx(0.0).epsilon(1e-5));

  SUBCASE("gt order is absorbed by the matching") {
    Tensor gt_rev = Tensor::zeros({3, P});
    for (long long j = 0; j < 3; ++j)
      for (long long p = 0; p < P; ++p) gt_rev.mutable_data()[(2 - j) * P + p] = gt.data()[j * P + p];
    Tensor blurry = rand_tensor({3, P}, 11, 0.05, 0.95);
    const double a = segmentation_loss(blurry, gt, cfg).total.data()[0];
    const double b = segmentation_loss(blurry, gt_rev, cfg).total.data()[0];
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }

  SUBCASE("matched combination never loses to the swapped one") {
    for (int s = 0; s < 25; ++s) {
      Tensor g2 = Tensor::zeros({2, 6});
      for (long long p = 0; p < 6; ++p) g2.mutable_data()[(p < 3 ? 0 : 1) * 6 + p] = 1.0;
      Tensor s2 = rand_tensor({2, 6}, 300 + s, 0.02, 0.98);
      SegLossResult rr = segmentation_loss(s2, g2, cfg);
      REQUIRE(rr.assignment.size() == 2);
      // evaluate the swapped pairing with the same ingredients
      const long long j0 = rr.assignment[0].second, j1 = rr.assignment[1].second;
      auto pair_cost = [&](long long k, long long j) {
        Tensor pk = take_rows(s2, {k});
        Tensor tj = take_rows(g2, {j});
        return cfg.lambda_dice * dice_loss(pk, tj, cfg.dice_eps).data()[0] +
               cfg.lambda_focal * focal_loss(pk, tj, cfg.focal_alpha, cfg.focal_gamma).data()[0];
      };
      const double matched = pair_cost(0, j0) + pair_cost(1, j1);
      const double swapped = pair_cost(0, j1) + pair_cost(1, j0);
      CHECK(matched <= swapped + 1e-12);
    }
  }

  SUBCASE("lambda flags drop components") {
    Tensor blurry = rand_tensor({3, P}, 12, 0.05, 0.95);
    LossConfig no_dice = cfg;
    no_dice.lambda_dice = 0.0;
    SegLossResult nd = segmentation_loss(blurry, gt, no_dice);
    CHECK(nd.total.data()[0] == doctest::Approx(nd.focal.data()[0]).epsilon(1e-12));
    LossConfig with_ce = cfg;
    with_ce.lambda_ce = 1.0;
    SegLossResult wc = segmentation_loss(blurry, gt, with_ce);
    CHECK(wc.ce.data()[0] > 0.0);
    CHECK(wc.total.data()[0] ==
          doctest::Approx(wc.dice.data()[0] + wc.focal.data()[0] + wc.ce.data()[0]).epsilon(1e-12));
  }

  SUBCASE("cross-entropy closed form on a matched partition") {
    Tensor s1 = Tensor::from({2, 2}, {0.5, 0.25, 0.5, 0.75});
    Tensor g1 = Tensor::from({2, 2}, {1, 0, 0, 1});  // region 0 owns pixel 0, region 1 pixel 1
    LossConfig c1;
    c1.lambda_ce = 1.0;
    SegLossResult rc = segmentation_loss(s1, g1, c1);
    REQUIRE(rc.assignment == Pairs{{0, 0}, {1, 1}});
    const double want = -(std::log(0.5) + std::log(0.75)) / 2.0;
    CHECK(rc.ce.data()[0] == doctest::Approx(want).epsilon(1e-9));
  }

  CHECK_THROWS_AS(segmentation_loss(soft, Tensor::zeros({0, P}), cfg), std::invalid_argument);
}

TEST_CASE("segmentation loss gradients agree with finite differences") {
  const long long P = 8;
  Tensor gt = Tensor::zeros({2, P});
  for (long long p = 0; p < P; ++p) gt.mutable_data()[(p < 5 ? 0 : 1) * P + p] = 1.0;
  Tensor soft0 = rand_tensor({3, P}, 21, 0.1, 0.9);
  LossConfig cfg;
  cfg.lambda_ce = 0.5;
  auto r = grad_check_multi(
      [&](const std::vector<Tensor>& v) { return segmentation_loss(v[0], gt, cfg).total; }, {soft0},
      1e-6);
  CHECK(r.max_rel_err < 1e-4);
  CHECK(r.coords_checked == 3 * P);
}

TEST_CASE("contrastive loss: closed forms, symmetry, degenerate batch") {
  const double tau = 0.07;
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const double want = std::log1p(std::exp(-1.0 / tau));
  CHECK(contrastive_loss(eye, eye, tau).data()[0] == doctest::Approx(want).epsilon(1e-9));

  Tensor v = rand_tensor({3, 5}, 31);
  Tensor l = rand_tensor({3, 5}, 32);
  const double base = contrastive_loss(v, l, tau).data()[0];
  Tensor vp = take_rows(v, {2, 0, 1});
  Tensor lp = take_rows(l, {2, 0, 1});
  CHECK(contrastive_loss(vp, lp, tau).data()[0] == doctest::Approx(base).epsilon(1e-12));

  Tensor same = Tensor::zeros({3, 4});
  for (long long i = 0; i < 3; ++i)
    for (long long c = 0; c < 4; ++c) same.mutable_data()[i * 4 + c] = 0.5 + 0.25 * c;
  CHECK(contrastive_loss(same, same, tau).data()[0] == doctest::Approx(std::log(3.0)).epsilon(1e-9));

  CHECK_THROWS_AS(contrastive_loss(Tensor::from({1, 2}, {1, 0}), Tensor::from({1, 2}, {1, 0}), tau),
                  std::invalid_argument);
  CHECK_THROWS_AS(contrastive_loss(eye, eye, 0.0), std::invalid_argument);
}

TEST_CASE("contrastive gradients agree with finite differences") {
  Tensor v = rand_tensor({3, 4}, 41);
  Tensor l = rand_tensor({3, 4}, 42);
  auto r = grad_check_multi(
      [&](const std::vector<Tensor>& in) { return contrastive_loss(in[0], in[1], 0.1); }, {v, l}, 1e-6);
  CHECK(r.max_rel_err < 1e-4);
  CHECK(r.coords_checked == 24);
}

TEST_CASE("the pretraining objective reaches the query bank through tokenization") {
  EncoderConfig ecfg;
  ecfg.stage_depths = {1, 1, 1};
  ecfg.stage_widths = {4, 6, 8};
  ecfg.d = 8;
  SegmenterConfig scfg;
  scfg.n_queries = 2;
  scfg.perceiver_layers = 1;
  scfg.heads = 2;
  scfg.rope_base = 100.0;
  TrajConfig tcfg;
  tcfg.refine_layers = 1;
  tcfg.refine_heads = 2;

  EncoderParams ep = init_encoder_params(ecfg, CounterRng(51));
  SegmenterParams sp = init_segmenter_params(scfg, ecfg.d, CounterRng(52));
  TrajParams tp = init_traj_params(tcfg, ecfg.d, CounterRng(53));
  ContrastiveParams cp = init_contrastive_params(24, ecfg.d, CounterRng(54));

  Tape tape;
  EncoderParams epw = watched(ep, tape);
  SegmenterParams spw = watched(sp, tape);
  TrajParams tpw = watched(tp, tape);
  ContrastiveParams cpw = watched(cp, tape);

  std::vector<Tensor> pooled;
  for (int item = 0; item < 2; ++item) {
    Tensor video = rand_tensor({1, 16, 16, 3}, 60 + static_cast<std::uint64_t>(item), 0.0, 1.0);
    FeatureMap f = encode_frames(video, ecfg, epw);
    Tensor qhat = run_perceiver(f, scfg, spw);
    Tensor soft = soft_masks(qhat, f, scfg.detach_in_logits);
    HardMasks hard = harden(soft);
    std::vector<long long> act;
    for (long long k = 0; k < hard.n_q; ++k)
      if (hard.active[static_cast<size_t>(k)]) act.push_back(k);
    Tensor z = take_rows(aggregate_soft(soft, f, true), act);
    TrajectoryTokenSet tok = refine(z, f, hard, 2, tcfg, tpw, scfg.rope_base, 0);
    const long long rows = tok.tokens.dim(0);
    Tensor mean_row = mul_scalar(matmul(Tensor::full({1, rows}, 1.0), tok.tokens),
                                 1.0 / static_cast<double>(rows));
    pooled.push_back(mean_row);
  }
  Tensor visual = concat_rows(pooled);
  Tensor labels = take_rows(cpw.embeddings, {3, 17});
  Tensor loss = contrastive_loss(visual, labels, 0.07);
  tape.backward(loss);

  auto norm_of = [&](const Tensor& t) {
    double s = 0;
    for (double g : tape.grad(t)) s += g * g;
    return s;
  };
  CHECK(norm_of(spw.queries) > 0.0);
  CHECK(norm_of(cpw.embeddings) > 0.0);
  double enc = 0;
  epw.visit([&](const std::string&, Tensor& t) { enc += norm_of(t); });
  CHECK(enc > 0.0);
}

}  // TEST_SUITE
