#include "trajtok/traj_encoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "trajtok/detmath.hpp"

namespace trajtok {
namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void check_subtoken_count(long long n, const char* who) {
  if (n != 1 && n != 2 && n != 4)
    throw std::invalid_argument(std::string(who) + ": sub-token count must be 1, 2, or 4, got " +
                                std::to_string(n));
}

std::vector<long long> leading(long long n) {
  std::vector<long long> idx(static_cast<size_t>(n));
  for (long long j = 0; j < n; ++j) idx[static_cast<size_t>(j)] = j;
  return idx;
}

}  // namespace

TrajParams init_traj_params(const TrajConfig& cfg, long long d, const CounterRng& rng) {
  TrajParams p;
  p.bank.residuals = Tensor::zeros({kMaxSubTokens, d});
  p.bank.noise = Tensor::zeros({kMaxSubTokens, d});
  RngSequence noise_seq(rng.stream(rngstream::kFourierNoise));
  fill_uniform(p.bank.noise, -1.0, 1.0, noise_seq);
  RngSequence seq(rng);
  for (long long i = 0; i < cfg.refine_layers; ++i) {
    RefineLayerParams l;
    auto norm = [&](Tensor& g, Tensor& b) {
      g = Tensor::full({d}, 1.0);
      b = Tensor::zeros({d});
    };
    norm(l.ln_q_g, l.ln_q_b);
    norm(l.ln_kv_g, l.ln_kv_b);
    l.cross = init_attention(d, seq);
    norm(l.ln_f_g, l.ln_f_b);
    l.ff1 = Tensor::zeros({d, 4 * d});
    fill_xavier(l.ff1, d, 4 * d, seq);
    l.ff1_b = Tensor::zeros({4 * d});
    l.ff2 = Tensor::zeros({4 * d, d});
    fill_xavier(l.ff2, 4 * d, d, seq);
    l.ff2_b = Tensor::zeros({d});
    p.layers.push_back(std::move(l));
  }
  return p;
}

Tensor aggregate_soft(const Tensor& soft, const FeatureMap& features, bool normalize) {
  if (soft.rank() != 2) throw std::invalid_argument("aggregate_soft: soft masks must be [N_q, P]");
  const long long P = features.frames * features.h * features.w;
  if (soft.dim(1) != P || features.values.dim(0) != P)
    throw std::invalid_argument("aggregate_soft: mask positions do not match the feature map");
  Tensor z = matmul(soft, features.values);
  if (!normalize) return z;
  Tensor ones = Tensor::full({P, 1}, 1.0);
  Tensor mass = matmul(soft, ones).reshaped({soft.dim(0)});
  return divide_rows(z, add_scalar(mass, 1e-6));
}

Tensor fourier_embedding(double theta, long long d) {
  if (d < 2 || d % 2 != 0) throw std::invalid_argument("fourier_embedding: width must be even");
  Tensor e = Tensor::zeros({d});
  double* p = e.mutable_data();
  for (long long m = 0; m < d / 2; ++m) {
    const double w = kTwoPi * static_cast<double>(m) / static_cast<double>(d);
    p[2 * m] = detmath::dsin(w + theta);
    p[2 * m + 1] = detmath::dcos(w + theta);
  }
  return e;
}

Tensor build_subqueries(const Tensor& z_init_k, long long n, const SubQueryBank& bank, bool fourier_init) {
  check_subtoken_count(n, "build_subqueries");
  const long long d = bank.residuals.dim(1);
  if (z_init_k.rank() != 1 || z_init_k.dim(0) != d)
    throw std::invalid_argument("build_subqueries: proposal must be a width-d vector");
  Tensor base = add_rows(take_rows(bank.residuals, leading(n)), z_init_k);
  Tensor offsets;
  if (fourier_init) {
    offsets = Tensor::zeros({n, d});
    for (long long j = 0; j < n; ++j) {
      Tensor row = fourier_embedding(kTwoPi * static_cast<double>(j) / static_cast<double>(n), d);
      for (long long c = 0; c < d; ++c) offsets.mutable_data()[j * d + c] = row.data()[c];
    }
  } else {
    offsets = take_rows(bank.noise, leading(n));
  }
  return add(base, offsets);
}

TrajectoryTokenSet refine(const Tensor& z_init, const FeatureMap& features, const HardMasks& hard,
                          long long n, const TrajConfig& cfg, const TrajParams& params,
                          double rope_base, long long chunk_index) {
  check_subtoken_count(n, "refine");
  const long long P = features.frames * features.h * features.w;
  if (hard.positions != P || features.values.dim(0) != P)
    throw std::invalid_argument("refine: hard masks do not match the feature map");
  long long n_active = 0;
  for (std::uint8_t a : hard.active) n_active += a;
  if (z_init.rank() != 2 || z_init.dim(0) != n_active || z_init.dim(1) != features.d)
    throw std::invalid_argument("refine: proposals must be [N_active, d] over the active queries");

  Tensor fr = rope_rotate(features.values, rope_base);
  TrajectoryTokenSet out;
  out.n = n;
  out.n_active = n_active;
  std::vector<Tensor> blocks;
  long long row = 0;
  for (long long k = 0; k < hard.n_q; ++k) {
    if (!hard.active[static_cast<size_t>(k)]) continue;
    std::vector<long long> region;
    for (long long p = 0; p < P; ++p)
      if (!cfg.use_mask || hard.one_hot[static_cast<size_t>(k * P + p)]) region.push_back(p);
    const bool emptied = region.empty();
    if (emptied) {
      blocks.push_back(Tensor::zeros({n, features.d}));
    } else {
      Tensor zk = take_rows(z_init, {row}).reshaped({features.d});
      Tensor x = build_subqueries(zk, n, params.bank, cfg.fourier_init);
      Tensor keys = take_rows(fr, std::move(region));
      for (const RefineLayerParams& l : params.layers) {
        Tensor kvn = layer_norm(keys, l.ln_kv_g, l.ln_kv_b, kLayerNormEps);
        x = add(x, attention_block(layer_norm(x, l.ln_q_g, l.ln_q_b, kLayerNormEps), kvn, l.cross,
                                   cfg.refine_heads));
        Tensor fn = layer_norm(x, l.ln_f_g, l.ln_f_b, kLayerNormEps);
        x = add(x, add_rows(matmul(gelu(add_rows(matmul(fn, l.ff1), l.ff1_b)), l.ff2), l.ff2_b));
      }
      blocks.push_back(x);
    }
    for (long long j = 0; j < n; ++j) out.origin.push_back({k, chunk_index, j, emptied});
    ++row;
  }
  if (blocks.empty()) throw std::invalid_argument("refine: no active trajectories");
  out.tokens = blocks.size() == 1 ? blocks[0] : concat_rows(blocks);
  return out;
}

}  // namespace trajtok
