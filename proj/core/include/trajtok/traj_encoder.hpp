#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trajtok/config.hpp"
#include "trajtok/segmenter.hpp"

// Trajectory token construction: soft aggregation of features into initial
// proposals, Matryoshka-style sub-query expansion with fourier angular
// offsets, and hard-mask-constrained cross-attention refinement. Sub-queries
// never attend to each other, so each refined row is a function of its own
// sub-query and its region only.
namespace trajtok {

inline constexpr long long kMaxSubTokens = 4;

// Row j of `residuals` is the learnable residual for sub-query j. `noise` is
// a fixed draw standing in for the fourier term when fourier initialization
// is ablated away; it is reconstructed from the init seed, never trained.
struct SubQueryBank {
  Tensor residuals;  // [4, d], zero-initialized
  Tensor noise;      // [4, d], fixed

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".residuals", residuals);
  }
};

// Pre-norm cross-attention plus pre-norm 4x GELU feed-forward, both
// residual. Deliberately no self-attention between sub-queries.
struct RefineLayerParams {
  Tensor ln_q_g, ln_q_b, ln_kv_g, ln_kv_b;
  AttentionParams cross;
  Tensor ln_f_g, ln_f_b;
  Tensor ff1, ff1_b, ff2, ff2_b;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".ln_q_g", ln_q_g);
    f(prefix + ".ln_q_b", ln_q_b);
    f(prefix + ".ln_kv_g", ln_kv_g);
    f(prefix + ".ln_kv_b", ln_kv_b);
    cross.visit(prefix + ".cross", f);
    f(prefix + ".ln_f_g", ln_f_g);
    f(prefix + ".ln_f_b", ln_f_b);
    f(prefix + ".ff1", ff1);
    f(prefix + ".ff1_b", ff1_b);
    f(prefix + ".ff2", ff2);
    f(prefix + ".ff2_b", ff2_b);
  }
};

struct TrajParams {
  SubQueryBank bank;
  std::vector<RefineLayerParams> layers;

  template <class F>
  void visit(F&& f) {
    bank.visit("bank", f);
    for (size_t i = 0; i < layers.size(); ++i) layers[i].visit("refine" + std::to_string(i), f);
  }
};

TrajParams init_traj_params(const TrajConfig& cfg, long long d, const CounterRng& rng);

// Initial proposal per query: z[k] = sum_s soft[k, s] * F[s]. With
// normalize, row k is divided by (sum_s soft[k, s] + 1e-6). Features enter
// live; this is the gradient path from downstream losses into the segmenter.
Tensor aggregate_soft(const Tensor& soft, const FeatureMap& features, bool normalize);

// Row of d entries (sin(w_m + theta), cos(w_m + theta)) over the ladder
// w_m = 2*pi*m/d, m = 0 .. d/2-1. Plain data, never taped.
Tensor fourier_embedding(double theta, long long d);

// Sub-queries for one trajectory: row j = z_init_k + fourier(theta_j) +
// residual_j, theta_j = 2*pi*j/n, n in {1, 2, 4}. With fourier_init off the
// fourier term is replaced by the bank's fixed noise rows. Row 0 is
// identical across n, which is what makes prefix inference exact.
Tensor build_subqueries(const Tensor& z_init_k, long long n, const SubQueryBank& bank, bool fourier_init);

struct TokenOrigin {
  long long query = 0;  // segmenter query index
  long long chunk = 0;  // chunk index within the video
  long long sub = 0;    // sub-token index j
  bool empty = false;   // region was empty; row forced to zero
};

struct TrajectoryTokenSet {
  Tensor tokens;  // [n_active * n, d]; trajectory-major, sub-index fastest
  long long n = 1;
  long long n_active = 0;
  std::vector<TokenOrigin> origin;  // one entry per token row
};

// Refines the active trajectories of one chunk. z_init rows correspond to
// active queries in ascending query order. Sub-queries of trajectory k
// attend only to rope-embedded feature rows inside its hard region
// (everywhere when cfg.use_mask is off); rope_base matches the segmenter. A
// trajectory whose region is empty yields zero rows flagged in origin.
TrajectoryTokenSet refine(const Tensor& z_init, const FeatureMap& features, const HardMasks& hard,
                          long long n, const TrajConfig& cfg, const TrajParams& params,
                          double rope_base, long long chunk_index);

}  // namespace trajtok
