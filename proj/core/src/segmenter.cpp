#include "trajtok/segmenter.hpp"

#include <cmath>
#include <stdexcept>

namespace trajtok {

AttentionParams init_attention(long long d, RngSequence& rng) {
  AttentionParams a;
  for (Tensor* t : {&a.wq, &a.wk, &a.wv, &a.wo}) {
    *t = Tensor::zeros({d, d});
    fill_xavier(*t, d, d, rng);
  }
  return a;
}

Tensor attention_block(const Tensor& x_norm, const Tensor& kv_norm, const AttentionParams& a, long long heads) {
  return multihead_attention(matmul(x_norm, a.wq), matmul(kv_norm, a.wk), matmul(kv_norm, a.wv),
                             static_cast<int>(heads), {}, a.wo);
}

PerceiverLayerParams init_perceiver_layer(long long d, RngSequence& rng) {
  PerceiverLayerParams l;
  auto norm = [&](Tensor& g, Tensor& b) {
    g = Tensor::full({d}, 1.0);
    b = Tensor::zeros({d});
  };
  norm(l.ln_q_g, l.ln_q_b);
  norm(l.ln_kv_g, l.ln_kv_b);
  l.cross = init_attention(d, rng);
  norm(l.ln_s_g, l.ln_s_b);
  l.self_att = init_attention(d, rng);
  norm(l.ln_f_g, l.ln_f_b);
  l.ff1 = Tensor::zeros({d, 4 * d});
  fill_xavier(l.ff1, d, 4 * d, rng);
  l.ff1_b = Tensor::zeros({4 * d});
  l.ff2 = Tensor::zeros({4 * d, d});
  fill_xavier(l.ff2, 4 * d, d, rng);
  l.ff2_b = Tensor::zeros({d});
  return l;
}

SegmenterParams init_segmenter_params(const SegmenterConfig& cfg, long long d, const CounterRng& rng) {
  RngSequence seq(rng);
  SegmenterParams p;
  p.queries = Tensor::zeros({cfg.n_queries, d});
  const double lim = 1.0 / std::sqrt(static_cast<double>(d));
  fill_uniform(p.queries, -lim, lim, seq);
  for (long long i = 0; i < cfg.perceiver_layers; ++i) p.layers.push_back(init_perceiver_layer(d, seq));
  return p;
}

Tensor run_perceiver(const FeatureMap& features, const SegmenterConfig& cfg, const SegmenterParams& params) {
  if (features.d != params.queries.dim(1))
    throw std::invalid_argument("segmenter: feature width does not match query width");
  Tensor kv = rope_rotate(features.values, cfg.rope_base);
  if (cfg.detach_features) kv = detach(kv);
  Tensor x = params.queries;
  for (const PerceiverLayerParams& l : params.layers) {
    Tensor kv_norm = layer_norm(kv, l.ln_kv_g, l.ln_kv_b, kLayerNormEps);
    x = add(x, attention_block(layer_norm(x, l.ln_q_g, l.ln_q_b, kLayerNormEps), kv_norm, l.cross, cfg.heads));
    Tensor sn = layer_norm(x, l.ln_s_g, l.ln_s_b, kLayerNormEps);
    x = add(x, attention_block(sn, sn, l.self_att, cfg.heads));
    Tensor fn = layer_norm(x, l.ln_f_g, l.ln_f_b, kLayerNormEps);
    x = add(x, add_rows(matmul(gelu(add_rows(matmul(fn, l.ff1), l.ff1_b)), l.ff2), l.ff2_b));
  }
  return x;
}

Tensor soft_masks(const Tensor& qhat, const FeatureMap& features, bool detach_logits) {
  Tensor f = detach_logits ? detach(features.values) : features.values;
  return softmax(matmul_tb(qhat, f), 0);
}

HardMasks harden(const Tensor& soft) {
  if (soft.shape().size() != 2) throw std::invalid_argument("harden: soft masks must be [N_q, P]");
  const long long n_q = soft.dim(0), P = soft.dim(1);
  HardMasks h;
  h.n_q = n_q;
  h.positions = P;
  h.one_hot.assign(static_cast<size_t>(n_q * P), 0);
  h.active.assign(static_cast<size_t>(n_q), 0);
  const double* s = soft.data();
  for (long long p = 0; p < P; ++p) {
    long long best = 0;
    double best_v = s[p];
    for (long long k = 1; k < n_q; ++k)
      if (s[k * P + p] > best_v) {  // strict: ties stay with the lowest index
        best_v = s[k * P + p];
        best = k;
      }
    h.one_hot[static_cast<size_t>(best * P + p)] = 1;
    h.active[static_cast<size_t>(best)] = 1;
  }
  return h;
}

Segmentation segment_chunk(const FeatureMap& features, const SegmenterConfig& cfg, const SegmenterParams& params) {
  Segmentation s;
  s.qhat = run_perceiver(features, cfg, params);
  s.soft = soft_masks(s.qhat, features, cfg.detach_in_logits);
  s.hard = harden(s.soft);
  return s;
}

std::vector<Tensor> chunk_video(const Tensor& video, long long chunk_len) {
  if (chunk_len < 1) throw std::invalid_argument("chunk_video: chunk_len must be >= 1");
  if (video.shape().size() != 4) throw std::invalid_argument("chunk_video: video must be [T, H, W, 3]");
  const long long T = video.dim(0), H = video.dim(1), W = video.dim(2), C = video.dim(3);
  Tensor flat = video.reshaped({T, H * W * C});
  std::vector<Tensor> chunks;
  for (long long start = 0; start < T; start += chunk_len) {
    const long long len = std::min(chunk_len, T - start);
    std::vector<long long> rows(static_cast<size_t>(len));
    for (long long i = 0; i < len; ++i) rows[static_cast<size_t>(i)] = start + i;
    chunks.push_back(take_rows(flat, rows).reshaped({len, H, W, C}));
  }
  return chunks;
}

}  // namespace trajtok
