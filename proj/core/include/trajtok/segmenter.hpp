#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trajtok/config.hpp"
#include "trajtok/params.hpp"
#include "trajtok/patch_encoder.hpp"

// Learnable-query Perceiver producing soft and hard trajectory masks for one
// video chunk. Features are rotary-embedded in flattened raster order
// s = t*(h*w) + i*w + j before the layers; each layer is pre-norm
// cross-attention, pre-norm query self-attention, and a pre-norm 4x GELU
// feed-forward, all residual. Attention projections are bias-free.
namespace trajtok {

struct AttentionParams {
  Tensor wq, wk, wv, wo;  // [d, d]

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".wq", wq);
    f(prefix + ".wk", wk);
    f(prefix + ".wv", wv);
    f(prefix + ".wo", wo);
  }
};

struct PerceiverLayerParams {
  Tensor ln_q_g, ln_q_b, ln_kv_g, ln_kv_b;  // cross-attention pre-norms
  AttentionParams cross;
  Tensor ln_s_g, ln_s_b;  // self-attention pre-norm
  AttentionParams self_att;
  Tensor ln_f_g, ln_f_b;  // feed-forward pre-norm
  Tensor ff1, ff1_b, ff2, ff2_b;  // [d,4d],[4d],[4d,d],[d]

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".ln_q_g", ln_q_g);
    f(prefix + ".ln_q_b", ln_q_b);
    f(prefix + ".ln_kv_g", ln_kv_g);
    f(prefix + ".ln_kv_b", ln_kv_b);
    cross.visit(prefix + ".cross", f);
    f(prefix + ".ln_s_g", ln_s_g);
    f(prefix + ".ln_s_b", ln_s_b);
    self_att.visit(prefix + ".self", f);
    f(prefix + ".ln_f_g", ln_f_g);
    f(prefix + ".ln_f_b", ln_f_b);
    f(prefix + ".ff1", ff1);
    f(prefix + ".ff1_b", ff1_b);
    f(prefix + ".ff2", ff2);
    f(prefix + ".ff2_b", ff2_b);
  }
};

struct SegmenterParams {
  Tensor queries;  // [N_q, d]
  std::vector<PerceiverLayerParams> layers;

  template <class F>
  void visit(F&& f) {
    f("queries", queries);
    for (size_t i = 0; i < layers.size(); ++i) layers[i].visit("layer" + std::to_string(i), f);
  }
};

AttentionParams init_attention(long long d, RngSequence& rng);
PerceiverLayerParams init_perceiver_layer(long long d, RngSequence& rng);
SegmenterParams init_segmenter_params(const SegmenterConfig& cfg, long long d, const CounterRng& rng);

// Multi-head attention over pre-normed inputs with this module's projection
// layout: queries from x_norm, keys and values from kv_norm, bias-free.
Tensor attention_block(const Tensor& x_norm, const Tensor& kv_norm, const AttentionParams& a, long long heads);

// Processed queries [N_q, d]. Features are rope-embedded and, when
// cfg.detach_features, severed from the tape before entering the layers.
Tensor run_perceiver(const FeatureMap& features, const SegmenterConfig& cfg, const SegmenterParams& params);

// Eq-style per-pixel assignment: logits[k, s] = qhat_k . F_s over the RAW
// (un-rotated) features, softmax over the query axis. detach_logits severs
// F in this path only.
Tensor soft_masks(const Tensor& qhat, const FeatureMap& features, bool detach_logits);

struct HardMasks {
  std::vector<std::uint8_t> one_hot;  // [N_q * P], per-pixel argmax winner
  std::vector<std::uint8_t> active;   // [N_q], mask non-empty
  long long n_q = 0, positions = 0;
};

// Per-pixel argmax with ties broken toward the lowest query index.
HardMasks harden(const Tensor& soft);

struct Segmentation {
  Tensor qhat;  // [N_q, d]
  Tensor soft;  // [N_q, P]
  HardMasks hard;
};

Segmentation segment_chunk(const FeatureMap& features, const SegmenterConfig& cfg, const SegmenterParams& params);

// Consecutive chunks of chunk_len frames; the final chunk may be shorter.
// Concatenation reproduces the input exactly.
std::vector<Tensor> chunk_video(const Tensor& video, long long chunk_len);

}  // namespace trajtok
