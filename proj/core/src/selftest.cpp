#include "trajtok/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "trajtok/config.hpp"
#include "trajtok/detmath.hpp"
#include "trajtok/io.hpp"
#include "trajtok/losses.hpp"
#include "trajtok/pipeline.hpp"
#include "trajtok/rng.hpp"
#include "trajtok/synthetic.hpp"
#include "trajtok/tensor.hpp"
#include "trajtok/training.hpp"

namespace trajtok::selftest {
namespace {

constexpr double kPi = 3.14159265358979323846;

struct Reporter {
  std::ostream& out;
  int failures = 0;

  void check(const std::string& name, bool ok, const std::string& detail = "") {
    out << (ok ? "[ok]   " : "[FAIL] ") << name;
    if (!detail.empty()) out << " (" << detail << ")";
    out << "\n";
    if (!ok) ++failures;
  }

  void grad(const std::string& name, double err, double tol = 1e-4) {
    check(name, err < tol, "max relative error " + io::format_double(err));
  }
};

Tensor rand_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  RngSequence rng{CounterRng(seed).stream(97)};
  Tensor t = Tensor::zeros(std::move(shape));
  fill_uniform(t, lo, hi, rng);
  return t;
}

bool bits_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (long long i = 0; i < a.size(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

// scalar-valued wrappers: weight every output element so nothing cancels
Tensor weigh(const Tensor& y, std::uint64_t seed) {
  return sum_all(mul(y, rand_tensor(y.shape(), seed, 0.2, 1.0)));
}

double check_unary(const std::function<Tensor(const Tensor&)>& op, const Tensor& x) {
  return grad_check([&](const Tensor& t) { return weigh(op(t), 11); }, x, 1e-5);
}

double check_binary(const std::function<Tensor(const Tensor&, const Tensor&)>& op, const Tensor& a,
                    const Tensor& b) {
  return grad_check_multi(
             [&](const std::vector<Tensor>& v) { return weigh(op(v[0], v[1]), 12); }, {a, b}, 1e-5)
      .max_rel_err;
}

void gradient_checks(Reporter& rep) {
  const Tensor a = rand_tensor({3, 4}, 1);
  const Tensor b = rand_tensor({3, 4}, 2);
  const Tensor pos = rand_tensor({3, 4}, 3, 0.5, 2.0);

  double e = 0;
  e = std::max(e, check_binary([](const Tensor& x, const Tensor& y) { return add(x, y); }, a, b));
  e = std::max(e, check_binary([](const Tensor& x, const Tensor& y) { return sub(x, y); }, a, b));
  e = std::max(e, check_binary([](const Tensor& x, const Tensor& y) { return mul(x, y); }, a, b));
  e = std::max(e, check_binary([](const Tensor& x, const Tensor& y) { return div(x, y); }, a, pos));
  rep.grad("gradient: binary elementwise ops", e);

  e = 0;
  e = std::max(e, check_unary([](const Tensor& x) { return add_scalar(x, 1.7); }, a));
  e = std::max(e, check_unary([](const Tensor& x) { return mul_scalar(x, -0.6); }, a));
  e = std::max(e, check_unary([](const Tensor& x) { return neg(x); }, a));
  e = std::max(e, check_unary([](const Tensor& x) { return exp_t(x); }, a));
  e = std::max(e, check_unary([](const Tensor& x) { return tanh_t(x); }, a));
  e = std::max(e, check_unary([](const Tensor& x) { return gelu(x); }, a));
  e = std::max(e, check_unary([](const Tensor& x) { return log_t(x); }, pos));
  e = std::max(e, check_unary([](const Tensor& x) { return sqrt_t(x); }, pos));
  e = std::max(e, check_unary([](const Tensor& x) { return pow_scalar(x, 1.7); }, pos));
  // fixed values keep every entry well away from the clamp kinks at +-0.75
  const Tensor c = Tensor::from({3, 4}, {-0.9, -0.5, -0.2, 0.1, 0.4, 0.8, 1.1, -1.3, 0.6, 0.0, 0.3, -0.65});
  e = std::max(e, check_unary([](const Tensor& x) { return clamp(x, -0.75, 0.75); }, c));
  rep.grad("gradient: unary elementwise ops", e);

  e = 0;
  e = std::max(e, check_unary([](const Tensor& x) { return sum_all(x); }, a));
  e = std::max(e, check_unary([](const Tensor& x) { return mean_all(x); }, a));
  e = std::max(e, check_unary([](const Tensor& x) { return rowsum(x); }, a));
  rep.grad("gradient: reductions", e);

  const Tensor m23 = rand_tensor({2, 3}, 4);
  const Tensor m34 = rand_tensor({3, 4}, 5);
  const Tensor m43 = rand_tensor({4, 3}, 6);
  const Tensor m32 = rand_tensor({3, 2}, 7);
  e = 0;
  e = std::max(e, check_binary([](const Tensor& x, const Tensor& y) { return matmul(x, y); }, m23, m34));
  e = std::max(e, check_binary([](const Tensor& x, const Tensor& y) { return matmul_tb(x, y); }, m23, m43));
  e = std::max(e, check_binary([](const Tensor& x, const Tensor& y) { return matmul_ta(x, y); }, m32, m34));
  e = std::max(e, check_unary([](const Tensor& x) { return transpose2d(x); }, m23));
  rep.grad("gradient: matmul family", e);

  const Tensor bias = rand_tensor({4}, 8);
  const Tensor denom = rand_tensor({3}, 9, 0.5, 2.0);
  e = 0;
  e = std::max(e, check_binary([](const Tensor& x, const Tensor& y) { return add_rows(x, y); }, a, bias));
  e = std::max(e, check_unary([](const Tensor& x) { return take_rows(x, {2, 0, 2}); }, a));
  e = std::max(e, check_binary(
                      [](const Tensor& x, const Tensor& y) { return concat_rows({x, y}); }, a, b));
  e = std::max(e, check_unary([](const Tensor& x) { return l2_normalize_rows(x); }, a));
  e = std::max(e, check_binary(
                      [](const Tensor& x, const Tensor& y) { return divide_rows(x, y); }, a, denom));
  rep.grad("gradient: row operations", e);

  e = 0;
  e = std::max(e, check_unary([](const Tensor& x) { return softmax(x, 0); }, a));
  e = std::max(e, check_unary([](const Tensor& x) { return softmax(x, 1); }, a));
  {
    const Tensor g = rand_tensor({4}, 10, 0.5, 1.5);
    const Tensor lb = rand_tensor({4}, 13);
    e = std::max(e, grad_check_multi(
                        [&](const std::vector<Tensor>& v) {
                          return weigh(layer_norm(v[0], v[1], v[2], kLayerNormEps), 14);
                        },
                        {a, g, lb}, 1e-5)
                        .max_rel_err);
  }
  rep.grad("gradient: softmax and layer norm", e);

  {
    const Tensor q = rand_tensor({3, 4}, 15);
    const Tensor k = rand_tensor({5, 4}, 16);
    const Tensor v = rand_tensor({5, 4}, 17);
    const Tensor wo = rand_tensor({4, 4}, 18);
    const std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0,   //
                                            0, 1, 1, 0, 1,   //
                                            1, 1, 0, 1, 1};
    auto att = [&](const std::vector<Tensor>& in, std::span<const std::uint8_t> msk) {
      return weigh(multihead_attention(in[0], in[1], in[2], 2, msk, in[3]), 19);
    };
    e = grad_check_multi([&](const std::vector<Tensor>& in) { return att(in, {}); },
                         {q, k, v, wo}, 1e-5)
            .max_rel_err;
    e = std::max(e, grad_check_multi([&](const std::vector<Tensor>& in) { return att(in, mask); },
                                     {q, k, v, wo}, 1e-5)
                        .max_rel_err);
    rep.grad("gradient: multi-head attention", e);
  }

  {
    const Tensor x = rand_tensor({5, 6, 2}, 20);
    const Tensor kern = rand_tensor({3, 3, 2}, 21);
    e = grad_check_multi(
            [&](const std::vector<Tensor>& v) { return weigh(conv2d_depthwise(v[0], v[1], 1, 1), 22); },
            {x, kern}, 1e-5)
            .max_rel_err;
    e = std::max(e, grad_check_multi(
                        [&](const std::vector<Tensor>& v) {
                          return weigh(conv2d_depthwise(v[0], v[1], 2, 1), 23);
                        },
                        {x, kern}, 1e-5)
                        .max_rel_err);
    const Tensor x46 = rand_tensor({4, 6, 2}, 24);
    e = std::max(e, check_unary([](const Tensor& t) { return space_to_patches(t, 2); }, x46));
    e = std::max(e, check_unary([](const Tensor& t) { return bilinear_resize(t, 5, 7); },
                                rand_tensor({3, 4, 2}, 25)));
    e = std::max(e, check_unary([](const Tensor& t) { return bilinear_resize(t, 2, 3); }, x46));
    rep.grad("gradient: convolution, patching, resize", e);
  }

  e = check_unary([](const Tensor& x) { return rope_rotate(x, 100.0); }, rand_tensor({5, 4}, 26));
  e = std::max(e, check_unary([](const Tensor& x) { return ce_diagonal(x); }, rand_tensor({3, 3}, 27)));
  rep.grad("gradient: rotary embedding and diagonal cross-entropy", e);

  {
    const Tensor pred = rand_tensor({2, 6}, 28, 0.1, 0.9);
    const Tensor target = Tensor::from({2, 6}, {1, 1, 0, 0, 1, 0, 0, 0, 1, 1, 0, 1});
    e = grad_check([&](const Tensor& p) { return dice_loss(p, target, 1e-6); }, pred, 1e-6);
    e = std::max(e, grad_check([&](const Tensor& p) { return focal_loss(p, target, 0.25, 2.0); },
                               pred, 1e-6));
    const Tensor vis = rand_tensor({3, 4}, 29);
    const Tensor lab = rand_tensor({3, 4}, 30);
    e = std::max(e, check_binary(
                        [](const Tensor& x, const Tensor& y) { return contrastive_loss(x, y, 0.07); },
                        vis, lab));
    LossConfig lc;
    const Tensor soft = rand_tensor({3, 8}, 31, 0.05, 0.95);
    const Tensor gt = Tensor::from({2, 8}, {1, 1, 1, 0, 0, 0, 1, 0, 0, 0, 0, 1, 1, 1, 0, 1});
    e = std::max(e, grad_check([&](const Tensor& p) { return segmentation_loss(p, gt, lc).total; },
                               soft, 1e-6));
    rep.grad("gradient: losses", e);
  }
}

Config tiny_config() {
  Config cfg;
  cfg.dataset.videos = 2;
  cfg.dataset.width = 16;
  cfg.dataset.height = 16;
  cfg.dataset.frames = 2;
  cfg.dataset.shape_count_min = 2;
  cfg.dataset.shape_count_max = 2;
  cfg.encoder.stage_depths = {1, 1, 1};
  cfg.encoder.stage_widths = {4, 6, 8};
  cfg.encoder.d = 8;
  cfg.segmenter.n_queries = 3;
  cfg.segmenter.perceiver_layers = 1;
  cfg.segmenter.heads = 2;
  cfg.segmenter.chunk_len = 2;
  cfg.traj.refine_layers = 1;
  cfg.traj.refine_heads = 2;
  cfg.train.seed = 5;
  return cfg;
}

void composite_gradient_check(Reporter& rep) {
  Config cfg = tiny_config();
  cfg.segmenter.detach_features = false;  // keep every parameter on a live path
  cfg.segmenter.detach_in_logits = false;

  synthetic::SceneSpec spec;
  spec.width = 16;
  spec.height = 16;
  spec.frames = 2;
  spec.shape_count = 2;
  spec.seed = 33;
  const synthetic::LabeledVideo video = synthetic::generate(spec);
  const Tensor gt = chunk_gt_masks(video, 0, 2, 4, 4);

  TrajTokModel model = init_model(cfg);
  std::vector<Tensor> inputs;
  model.visit([&](const std::string&, Tensor& t) { inputs.push_back(t); });
  inputs.push_back(video.pixels);

  auto f = [&](const std::vector<Tensor>& v) {
    TrajTokModel m = model;  // structure only; every tensor handle is replaced
    size_t i = 0;
    m.visit([&](const std::string&, Tensor& t) { t = v.at(i++); });
    const Tensor& px = v.at(i);

    const TokenizeResult ra = tokenize(px, cfg, m, 2);
    const SegLossResult sl = segmentation_loss(ra.chunks[0].seg.soft, gt, cfg.loss);
    const TokenizeResult rb = tokenize(mul_scalar(px, 0.85), cfg, m, 2);
    auto pool = [](const Tensor& rows) {
      return matmul(Tensor::full({1, rows.dim(0)}, 1.0 / static_cast<double>(rows.dim(0))), rows);
    };
    const Tensor visual =
        concat_rows({pool(ra.chunks[0].tokens.tokens), pool(rb.chunks[0].tokens.tokens)});
    const Tensor labels = take_rows(m.contrast.embeddings, {0, 1});
    return add(sl.total, contrastive_loss(visual, labels, cfg.loss.temperature));
  };

  // two probe coordinates per tensor keep the check a few seconds long
  std::vector<std::vector<long long>> coords;
  for (const Tensor& t : inputs)
    coords.push_back(t.size() > 1 ? std::vector<long long>{0, t.size() / 2}
                                  : std::vector<long long>{0});
  // The final perceiver layer's feed-forward bias shifts every query row
  // equally, a direction the per-pixel query softmax cannot observe: its true
  // gradient is exactly zero and central differences return pure roundoff, so
  // the comparison floor must sit above that noise.
  const GradCheckResult r = grad_check_multi(f, inputs, 1e-5, &coords, 1e-6);
  rep.grad("gradient: full pipeline composite over " + std::to_string(r.coords_checked) +
               " probed coordinates",
           r.max_rel_err);
}

void mask_invariants(Reporter& rep) {
  Config cfg = tiny_config();
  const TrajTokModel model = init_model(cfg);
  synthetic::SceneSpec spec;
  spec.width = 16;
  spec.height = 16;
  spec.frames = 2;
  spec.shape_count = 2;
  spec.seed = 41;
  const synthetic::LabeledVideo video = synthetic::generate(spec);
  const FeatureMap fm = encode_frames(video.pixels, cfg.encoder, model.encoder);
  const Segmentation seg = segment_chunk(fm, cfg.segmenter, model.segmenter);

  const long long nq = seg.soft.dim(0), p = seg.soft.dim(1);
  double worst = 0;
  for (long long s = 0; s < p; ++s) {
    double col = 0;
    for (long long k = 0; k < nq; ++k) col += seg.soft.data()[k * p + s];
    worst = std::max(worst, std::fabs(col - 1.0));
  }
  rep.check("invariant: soft masks are a per-pixel distribution", worst < 1e-9,
            "worst column sum error " + io::format_double(worst));

  bool one_hot = true;
  for (long long s = 0; s < p; ++s) {
    int winners = 0;
    for (long long k = 0; k < nq; ++k) winners += seg.hard.one_hot[static_cast<size_t>(k * p + s)];
    one_hot = one_hot && winners == 1;
  }
  // exact ties must fall to the lowest query index
  const Tensor tied = Tensor::from({3, 2}, {0.4, 0.2, 0.4, 0.6, 0.2, 0.2});
  const HardMasks h = harden(tied);
  const bool ties_low = h.one_hot[0] == 1 && h.one_hot[1] == 0 && h.one_hot[3] == 1;
  rep.check("invariant: hard masks one-hot with lowest-index ties", one_hot && ties_low);
}

void rope_invariants(Reporter& rep) {
  const long long d = 8;
  const Tensor x = rand_tensor({40, d}, 43);
  const Tensor r = rope_rotate(x, 100.0);
  double norm_err = 0;
  for (long long p = 0; p < 40; ++p) {
    double nx = 0, nr = 0;
    for (long long c = 0; c < d; ++c) {
      nx += x.data()[p * d + c] * x.data()[p * d + c];
      nr += r.data()[p * d + c] * r.data()[p * d + c];
    }
    norm_err = std::max(norm_err, std::fabs(std::sqrt(nx) - std::sqrt(nr)));
  }

  const Tensor q = rand_tensor({1, d}, 44), k = rand_tensor({1, d}, 45);
  const long long m = 3, n = 11, shift = 19;
  Tensor placed = Tensor::zeros({40, d});
  for (long long c = 0; c < d; ++c) {
    placed.mutable_data()[m * d + c] = q.data()[c];
    placed.mutable_data()[n * d + c] = k.data()[c];
    placed.mutable_data()[(m + shift) * d + c] = q.data()[c];
    placed.mutable_data()[(n + shift) * d + c] = k.data()[c];
  }
  const Tensor rp = rope_rotate(placed, 100.0);
  auto dot_rows = [&](long long i, long long j) {
    double s = 0;
    for (long long c = 0; c < d; ++c) s += rp.data()[i * d + c] * rp.data()[j * d + c];
    return s;
  };
  const double shift_err = std::fabs(dot_rows(m, n) - dot_rows(m + shift, n + shift));
  rep.check("invariant: rotary norms and relative shifts",
            norm_err < 1e-12 && shift_err < 1e-9,
            "norm error " + io::format_double(norm_err) + ", shift error " +
                io::format_double(shift_err));
}

// exhaustive optimum for rows <= cols (every row matched to a distinct column)
double best_assignment(const Tensor& cost, long long row, std::vector<bool>& used) {
  const long long rows = cost.dim(0), cols = cost.dim(1);
  if (row == rows) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (long long c = 0; c < cols; ++c) {
    if (used[static_cast<size_t>(c)]) continue;
    used[static_cast<size_t>(c)] = true;
    best = std::min(best, cost.data()[row * cols + c] + best_assignment(cost, row + 1, used));
    used[static_cast<size_t>(c)] = false;
  }
  return best;
}

void matcher_oracle(Reporter& rep) {
  const CounterRng rng(51);
  double worst = 0;
  bool shape_ok = true;
  for (std::uint64_t t = 0; t < 300; ++t) {
    const CounterRng inst = rng.stream(t);
    const long long rows = 1 + static_cast<long long>(inst.below(0, 5));
    const long long cols = 1 + static_cast<long long>(inst.below(1, 5));
    std::vector<double> c(static_cast<size_t>(rows * cols));
    for (size_t i = 0; i < c.size(); ++i) c[i] = inst.uniform(2 + i, -2.0, 2.0);
    const Tensor cost = Tensor::from({rows, cols}, c);
    const Matching m = hungarian_match(cost);
    shape_ok = shape_ok && static_cast<long long>(m.pairs.size()) == std::min(rows, cols);
    // matching is symmetric under transposition, so orient the brute force
    const Tensor oriented = rows <= cols ? cost : transpose2d(cost);
    std::vector<bool> used(static_cast<size_t>(oriented.dim(1)), false);
    const double oracle = best_assignment(oriented, 0, used);
    worst = std::max(worst, std::fabs(m.cost - oracle));
  }
  rep.check("invariant: assignment matches exhaustive search over 300 instances",
            shape_ok && worst < 1e-12, "worst cost gap " + io::format_double(worst));
}

void loss_closed_forms(Reporter& rep) {
  const Tensor pred = Tensor::from({1, 2}, {0.5, 0.5});
  const Tensor target = Tensor::from({1, 2}, {1.0, 0.0});
  const double dice = dice_loss(pred, target, 1e-6).data()[0];

  const Tensor p = rand_tensor({2, 5}, 53, 0.1, 0.9);
  const Tensor ones = Tensor::full({2, 5}, 1.0);
  const double plain = focal_loss(p, ones, 1.0, 0.0).data()[0];
  double bce = 0;
  for (long long i = 0; i < p.size(); ++i) bce -= detmath::dlog(p.data()[i]);
  bce /= static_cast<double>(p.size());

  const double saturated = focal_loss(ones, ones, 1.0, 2.0).data()[0];

  rep.check("invariant: loss closed forms",
            std::fabs(dice - 0.5) < 1e-6 && std::fabs(plain - bce) < 1e-9 &&
                std::fabs(saturated) < 1e-9,
            "dice " + io::format_double(dice) + ", focal-vs-bce gap " +
                io::format_double(std::fabs(plain - bce)) + ", saturated focal " +
                io::format_double(saturated));
}

void matryoshka_invariants(Reporter& rep) {
  const Config cfg = tiny_config();
  const TrajTokModel model = init_model(cfg);
  synthetic::SceneSpec spec;
  spec.width = 16;
  spec.height = 16;
  spec.frames = 2;
  spec.shape_count = 2;
  spec.seed = 57;
  const synthetic::LabeledVideo video = synthetic::generate(spec);

  const TokenizeResult one = tokenize(video.pixels, cfg, model, 1);
  const TokenizeResult four = tokenize(video.pixels, cfg, model, 4);
  bool prefix = one.chunks.size() == four.chunks.size();
  for (size_t c = 0; prefix && c < one.chunks.size(); ++c) {
    const Tensor& t1 = one.chunks[c].tokens.tokens;
    const Tensor& t4 = four.chunks[c].tokens.tokens;
    prefix = t1.dim(0) * 4 == t4.dim(0);
    const long long d = t1.dim(1);
    for (long long k = 0; prefix && k < t1.dim(0); ++k)
      for (long long j = 0; j < d; ++j)
        if (t1.data()[k * d + j] != t4.data()[4 * k * d + j]) prefix = false;
  }

  // the two n=2 offsets are {0, pi}: a componentwise-negated sinusoid
  const Tensor f0 = fourier_embedding(0.0, 8);
  const Tensor f1 = fourier_embedding(kPi, 8);
  double neg_err = 0;
  for (long long i = 0; i < 8; ++i) neg_err = std::max(neg_err, std::fabs(f1.data()[i] + f0.data()[i]));

  rep.check("invariant: sub-token prefix nesting and angular offsets", prefix && neg_err < 1e-9,
            "negation error " + io::format_double(neg_err));
}

void roundtrip_invariants(Reporter& rep) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "trajtok_selftest";
  fs::remove_all(dir);
  fs::create_directories(dir);

  const Tensor t = rand_tensor({3, 5}, 61);
  io::write_tensor_f64((dir / "t.ttk").string(), t);
  const bool f64_ok = bits_equal(io::read_tensor_f64((dir / "t.ttk").string()), t);

  // once rounded to float32, the narrow format must round-trip bit-exactly too
  io::write_tensor_f32((dir / "f.ttk").string(), t);
  const Tensor narrowed = io::read_tensor_f32((dir / "f.ttk").string());
  io::write_tensor_f32((dir / "f2.ttk").string(), narrowed);
  const bool f32_ok = bits_equal(io::read_tensor_f32((dir / "f2.ttk").string()), narrowed);

  std::vector<std::int32_t> ints = {-7, 0, 5, 2147483647, -2147483648LL + 1};
  io::write_tensor_i32((dir / "i.ttk").string(), {5}, ints);
  Shape ishape;
  const bool i32_ok = io::read_tensor_i32((dir / "i.ttk").string(), ishape) == ints && ishape == Shape{5};

  const Config cfg = tiny_config();
  const bool cfg_ok = parse_config(serialize_config(cfg)) == cfg;

  TrajTokModel model = init_model(cfg);
  io::save_checkpoint((dir / "ckpt").string(), model_checkpoint(model, cfg, "step = 0\n"));
  const io::Checkpoint back = io::load_checkpoint((dir / "ckpt").string());
  TrajTokModel other = init_model(cfg);
  bool ck_ok = true;
  load_model_params(other, back);
  model.visit([&](const std::string& name, Tensor& mine) {
    other.visit([&](const std::string& name2, Tensor& theirs) {
      if (name == name2 && !bits_equal(mine, theirs)) ck_ok = false;
    });
  });
  fs::remove_all(dir);
  rep.check("invariant: tensor file, config, and checkpoint round-trips",
            f64_ok && f32_ok && i32_ok && cfg_ok && ck_ok);
}

void chunking_and_determinism(Reporter& rep) {
  const Tensor video = rand_tensor({5, 4, 4, 3}, 63, 0.0, 1.0);
  const std::vector<Tensor> chunks = chunk_video(video, 2);
  bool ok = chunks.size() == 3 && chunks[0].dim(0) == 2 && chunks[2].dim(0) == 1;
  long long off = 0;
  for (const Tensor& c : chunks) {
    for (long long i = 0; ok && i < c.size(); ++i)
      if (c.data()[i] != video.data()[off + i]) ok = false;
    off += c.size();
  }
  rep.check("invariant: chunking reassembles the video", ok && off == video.size());

  const Config cfg = tiny_config();
  const TrajTokModel m1 = init_model(cfg);
  const TrajTokModel m2 = init_model(cfg);
  bool det = true;
  TrajTokModel a = m1, b = m2;
  a.visit([&](const std::string& name, Tensor& mine) {
    b.visit([&](const std::string& name2, Tensor& theirs) {
      if (name == name2 && !bits_equal(mine, theirs)) det = false;
    });
  });
  synthetic::SceneSpec spec;
  spec.width = 16;
  spec.height = 16;
  spec.frames = 2;
  spec.shape_count = 2;
  spec.seed = 65;
  const synthetic::LabeledVideo video2 = synthetic::generate(spec);
  const TokenizeResult r1 = tokenize(video2.pixels, cfg, m1, 2);
  const TokenizeResult r2 = tokenize(video2.pixels, cfg, m1, 2);
  for (size_t c = 0; c < r1.chunks.size(); ++c)
    det = det && bits_equal(r1.chunks[c].tokens.tokens, r2.chunks[c].tokens.tokens);
  rep.check("invariant: deterministic initialization and tokenization", det);
}

}  // namespace

int run(std::ostream& out) {
  Reporter rep{out};
  gradient_checks(rep);
  composite_gradient_check(rep);
  mask_invariants(rep);
  rope_invariants(rep);
  matcher_oracle(rep);
  loss_closed_forms(rep);
  matryoshka_invariants(rep);
  roundtrip_invariants(rep);
  chunking_and_determinism(rep);
  out << (rep.failures == 0 ? "all checks passed\n"
                            : std::to_string(rep.failures) + " check(s) failed\n");
  return rep.failures;
}

}  // namespace trajtok::selftest
