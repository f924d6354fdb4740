#include "trajtok/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "trajtok/detmath.hpp"

namespace trajtok {
namespace {

constexpr double kProbFloor = 1e-7;

double plain_dice(const double* p, const double* t, long long n, double eps) {
  double inter = 0, sp = 0, st = 0;
  for (long long i = 0; i < n; ++i) {
    inter += p[i] * t[i];
    sp += p[i];
    st += t[i];
  }
  return 1.0 - (2.0 * inter + eps) / (sp + st + eps);
}

// cost = total / (sum of assignment matrix); here: per-element focal terms
// for target 1 and target 0, so pair costs reduce to selected sums.
void focal_terms(const double* p, long long n, double alpha, double gamma, std::vector<double>& on,
                 std::vector<double>& off) {
  on.resize(static_cast<size_t>(n));
  off.resize(static_cast<size_t>(n));
  for (long long i = 0; i < n; ++i) {
    const double p1 = std::clamp(p[i], kProbFloor, 1.0 - kProbFloor);
    const double p0 = std::clamp(1.0 - p[i], kProbFloor, 1.0 - kProbFloor);
    on[static_cast<size_t>(i)] = -alpha * detmath::dpow(1.0 - p1, gamma) * detmath::dlog(p1);
    off[static_cast<size_t>(i)] = -(1.0 - alpha) * detmath::dpow(1.0 - p0, gamma) * detmath::dlog(p0);
  }
}

// Shortest-augmenting-path assignment; requires rows <= cols. Returns the
// minimal total cost; col_of_row receives the matched column per row.
double assign_min_cost(const std::vector<double>& a, long long R, long long C,
                       std::vector<long long>* col_of_row) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(R + 1), 0.0), v(static_cast<size_t>(C + 1), 0.0);
  std::vector<long long> p(static_cast<size_t>(C + 1), 0), way(static_cast<size_t>(C + 1), 0);
  for (long long i = 1; i <= R; ++i) {
    p[0] = i;
    long long j0 = 0;
    std::vector<double> minv(static_cast<size_t>(C + 1), inf);
    std::vector<char> used(static_cast<size_t>(C + 1), 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const long long i0 = p[static_cast<size_t>(j0)];
      long long j1 = -1;
      double delta = inf;
      for (long long j = 1; j <= C; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = a[static_cast<size_t>((i0 - 1) * C + (j - 1))] - u[static_cast<size_t>(i0)] -
                           v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (long long j = 0; j <= C; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const long long j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  if (col_of_row) col_of_row->assign(static_cast<size_t>(R), -1);
  double total = 0.0;
  for (long long j = 1; j <= C; ++j) {
    const long long i = p[static_cast<size_t>(j)];
    if (i == 0) continue;
    if (col_of_row) (*col_of_row)[static_cast<size_t>(i - 1)] = j - 1;
    total += a[static_cast<size_t>((i - 1) * C + (j - 1))];
  }
  return total;
}

// Orientation wrapper: min-cost assignment of min(R, C) pairs on an
// arbitrary rectangle given as a row-major submatrix selection.
double solve_submatrix(const double* cost, long long C_full, const std::vector<long long>& rows,
                       const std::vector<long long>& cols) {
  const long long R = static_cast<long long>(rows.size()), C = static_cast<long long>(cols.size());
  if (R == 0 || C == 0) return 0.0;
  const bool flip = R > C;
  const long long Rm = flip ? C : R, Cm = flip ? R : C;
  std::vector<double> m(static_cast<size_t>(Rm * Cm));
  for (long long i = 0; i < Rm; ++i)
    for (long long j = 0; j < Cm; ++j) {
      const long long r = flip ? rows[static_cast<size_t>(j)] : rows[static_cast<size_t>(i)];
      const long long c = flip ? cols[static_cast<size_t>(i)] : cols[static_cast<size_t>(j)];
      m[static_cast<size_t>(i * Cm + j)] = cost[r * C_full + c];
    }
  return assign_min_cost(m, Rm, Cm, nullptr);
}

bool close_to(double x, double target) { return std::fabs(x - target) <= 1e-9 * std::max(1.0, std::fabs(target)); }

}  // namespace

Tensor dice_loss(const Tensor& pred, const Tensor& target, double eps) {
  if (pred.shape() != target.shape()) throw std::invalid_argument("dice_loss: shape mismatch");
  if (eps <= 0.0) throw std::invalid_argument("dice_loss: eps must be positive");
  Tensor inter = sum_all(mul(pred, target));
  Tensor denom = add_scalar(add(sum_all(pred), sum_all(target)), eps);
  return add_scalar(neg(div(add_scalar(mul_scalar(inter, 2.0), eps), denom)), 1.0);
}

Tensor focal_loss(const Tensor& pred, const Tensor& target, double alpha, double gamma) {
  if (pred.shape() != target.shape()) throw std::invalid_argument("focal_loss: shape mismatch");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("focal_loss: alpha must be in (0, 1]");
  if (gamma < 0.0) throw std::invalid_argument("focal_loss: gamma must be >= 0");
  // p_t = (2t - 1) * pred + (1 - t); alpha_t = (2a - 1) * t + (1 - a)
  Tensor t2m1 = add_scalar(mul_scalar(target, 2.0), -1.0);
  Tensor one_minus_t = add_scalar(neg(target), 1.0);
  Tensor pt = clamp(add(mul(pred, t2m1), one_minus_t), kProbFloor, 1.0 - kProbFloor);
  Tensor at = add_scalar(mul_scalar(target, 2.0 * alpha - 1.0), 1.0 - alpha);
  Tensor focus = pow_scalar(add_scalar(neg(pt), 1.0), gamma);
  return neg(mean_all(mul(at, mul(focus, log_t(pt)))));
}

Matching hungarian_match(const Tensor& cost) {
  if (cost.rank() != 2) throw std::invalid_argument("hungarian_match: cost must be a matrix");
  const long long R = cost.dim(0), C = cost.dim(1);
  if (R < 1 || C < 1) throw std::invalid_argument("hungarian_match: empty cost matrix");
  const double* a = cost.data();
  for (long long i = 0; i < R * C; ++i)
    if (!std::isfinite(a[i])) throw std::invalid_argument("hungarian_match: costs must be finite");

  std::vector<long long> all_rows(static_cast<size_t>(R)), all_cols(static_cast<size_t>(C));
  for (long long i = 0; i < R; ++i) all_rows[static_cast<size_t>(i)] = i;
  for (long long j = 0; j < C; ++j) all_cols[static_cast<size_t>(j)] = j;
  Matching m;
  m.cost = solve_submatrix(a, C, all_rows, all_cols);

  // Lexicographic selection among optima: walk rows in order, match each to
  // the smallest column that still admits an optimal completion; a row is
  // left out only when no column does.
  std::vector<long long> cols_left = all_cols;
  double fixed = 0.0;
  const long long need = std::min(R, C);
  for (long long i = 0; i < R && static_cast<long long>(m.pairs.size()) < need; ++i) {
    std::vector<long long> rows_below;
    for (long long r = i + 1; r < R; ++r) rows_below.push_back(r);
    bool placed = false;
    for (size_t jx = 0; jx < cols_left.size() && !placed; ++jx) {
      const long long j = cols_left[jx];
      std::vector<long long> rest = cols_left;
      rest.erase(rest.begin() + static_cast<long long>(jx));
      const double completed = fixed + a[i * C + j] + solve_submatrix(a, C, rows_below, rest);
      const bool complete_enough =
          static_cast<long long>(m.pairs.size()) + 1 +
              std::min<long long>(static_cast<long long>(rows_below.size()),
                                  static_cast<long long>(rest.size())) >= need;
      if (complete_enough && close_to(completed, m.cost)) {
        m.pairs.emplace_back(i, j);
        fixed += a[i * C + j];
        cols_left = std::move(rest);
        placed = true;
      }
    }
    // if no column admits an optimal completion, every optimum skips row i
  }
  return m;
}

SegLossResult segmentation_loss(const Tensor& soft, const Tensor& gt, const LossConfig& cfg) {
  if (soft.rank() != 2 || gt.rank() != 2 || soft.dim(1) != gt.dim(1))
    throw std::invalid_argument("segmentation_loss: soft [N_q, P] and gt [K, P] must share P");
  const long long n_q = soft.dim(0), K = gt.dim(0), P = soft.dim(1);
  if (K < 1) throw std::invalid_argument("segmentation_loss: at least one ground-truth region required");
  if (cfg.lambda_dice < 0 || cfg.lambda_focal < 0 || cfg.lambda_ce < 0)
    throw std::invalid_argument("segmentation_loss: loss weights must be >= 0");

  // plain cost matrix; matching is not differentiated through
  const double* sp = soft.data();
  const double* gp = gt.data();
  Tensor cost = Tensor::zeros({n_q, K});
  std::vector<double> f_on, f_off;
  for (long long k = 0; k < n_q; ++k) {
    focal_terms(sp + k * P, P, cfg.focal_alpha, cfg.focal_gamma, f_on, f_off);
    for (long long j = 0; j < K; ++j) {
      const double* t = gp + j * P;
      double c = 0.0;
      if (cfg.lambda_dice > 0) c += cfg.lambda_dice * plain_dice(sp + k * P, t, P, cfg.dice_eps);
      if (cfg.lambda_focal > 0) {
        double f = 0.0;
        for (long long p = 0; p < P; ++p)
          f += t[p] != 0.0 ? f_on[static_cast<size_t>(p)] : f_off[static_cast<size_t>(p)];
        c += cfg.lambda_focal * f / static_cast<double>(P);
      }
      cost.mutable_data()[k * K + j] = c;
    }
  }
  Matching match = hungarian_match(cost);

  SegLossResult out;
  out.assignment = match.pairs;
  Tensor dice_acc = Tensor::zeros({1});
  Tensor focal_acc = Tensor::zeros({1});
  for (const auto& [k, j] : match.pairs) {
    Tensor pk = take_rows(soft, {k});
    Tensor tj = take_rows(gt, {j});
    dice_acc = add(dice_acc, dice_loss(pk, tj, cfg.dice_eps));
    focal_acc = add(focal_acc, focal_loss(pk, tj, cfg.focal_alpha, cfg.focal_gamma));
  }
  const double inv_m = 1.0 / static_cast<double>(match.pairs.size());
  out.dice = mul_scalar(dice_acc, inv_m);
  out.focal = mul_scalar(focal_acc, inv_m);

  out.ce = Tensor::zeros({1});
  if (cfg.lambda_ce > 0) {
    Tensor pick = Tensor::zeros({n_q, P});
    long long covered = 0;
    for (const auto& [k, j] : match.pairs)
      for (long long p = 0; p < P; ++p)
        if (gp[j * P + p] != 0.0) {
          pick.mutable_data()[k * P + p] = 1.0;
          ++covered;
        }
    if (covered > 0) {
      Tensor logp = log_t(clamp(soft, kProbFloor, 1.0));
      out.ce = mul_scalar(sum_all(mul(logp, pick)), -1.0 / static_cast<double>(covered));
    }
  }

  out.total = add(add(mul_scalar(out.dice, cfg.lambda_dice), mul_scalar(out.focal, cfg.lambda_focal)),
                  mul_scalar(out.ce, cfg.lambda_ce));
  return out;
}

Tensor contrastive_loss(const Tensor& visual, const Tensor& labels, double temperature) {
  if (visual.rank() != 2 || visual.shape() != labels.shape())
    throw std::invalid_argument("contrastive_loss: visual and label banks must be [B, d] alike");
  if (visual.dim(0) < 2) throw std::invalid_argument("contrastive_loss: batch of one has no negatives");
  if (temperature <= 0.0) throw std::invalid_argument("contrastive_loss: temperature must be positive");
  auto unit = [](const Tensor& x) {
    return divide_rows(x, sqrt_t(add_scalar(rowsum(mul(x, x)), 1e-12)));
  };
  Tensor vn = unit(visual), ln = unit(labels);
  const double inv_t = 1.0 / temperature;
  Tensor forward = mul_scalar(matmul_tb(vn, ln), inv_t);
  Tensor backward = mul_scalar(matmul_tb(ln, vn), inv_t);
  return mul_scalar(add(ce_diagonal(forward), ce_diagonal(backward)), 0.5);
}

ContrastiveParams init_contrastive_params(long long n_classes, long long d, const CounterRng& rng) {
  if (n_classes < 1 || d < 1) throw std::invalid_argument("init_contrastive_params: bad sizes");
  ContrastiveParams p;
  p.embeddings = Tensor::zeros({n_classes, d});
  RngSequence seq(rng);
  const double lim = 1.0 / std::sqrt(static_cast<double>(d));
  fill_uniform(p.embeddings, -lim, lim, seq);
  return p;
}

}  // namespace trajtok
