#pragma once

#include <array>
#include <string>
#include <vector>

#include "trajtok/config.hpp"
#include "trajtok/params.hpp"
#include "trajtok/tensor.hpp"

// Frame-wise multi-scale convolutional encoder. Each frame passes through a
// stride-4 patchify stem and three stages (depthwise 7x7, layer norm, 4x
// pointwise expansion with GELU, pointwise contraction, residual) at strides
// 4/8/16; scale outputs are projected to width d by bias-free 1x1
// convolutions, bilinearly resized to (H/4, W/4), and summed.
namespace trajtok {

struct ConvBlockParams {
  Tensor dw, dw_b;    // [7,7,c], [c]
  Tensor ln_g, ln_b;  // [c]
  Tensor pw1, pw1_b;  // [c,4c], [4c]
  Tensor pw2, pw2_b;  // [4c,c], [c]

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".dw", dw);
    f(prefix + ".dw_b", dw_b);
    f(prefix + ".ln_g", ln_g);
    f(prefix + ".ln_b", ln_b);
    f(prefix + ".pw1", pw1);
    f(prefix + ".pw1_b", pw1_b);
    f(prefix + ".pw2", pw2);
    f(prefix + ".pw2_b", pw2_b);
  }
};

struct DownsampleParams {
  Tensor ln_g, ln_b;  // [c_in]
  Tensor w, b;        // [4*c_in, c_out], [c_out]

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".ln_g", ln_g);
    f(prefix + ".ln_b", ln_b);
    f(prefix + ".w", w);
    f(prefix + ".b", b);
  }
};

struct EncoderParams {
  Tensor stem_w, stem_b;        // [48, c1], [c1]
  Tensor stem_ln_g, stem_ln_b;  // [c1]
  std::array<std::vector<ConvBlockParams>, 3> stages;
  DownsampleParams down1, down2;
  Tensor fuse_stem_w;                    // [c1, d]
  std::array<Tensor, 3> fuse_stage_w;  // [c_k, d]

  template <class F>
  void visit(F&& f) {
    f("stem.w", stem_w);
    f("stem.b", stem_b);
    f("stem.ln_g", stem_ln_g);
    f("stem.ln_b", stem_ln_b);
    for (size_t k = 0; k < 3; ++k)
      for (size_t b = 0; b < stages[k].size(); ++b)
        stages[k][b].visit("stage" + std::to_string(k + 1) + ".block" + std::to_string(b), f);
    down1.visit("down1", f);
    down2.visit("down2", f);
    f("fuse.stem", fuse_stem_w);
    for (size_t k = 0; k < 3; ++k) f("fuse.stage" + std::to_string(k + 1), fuse_stage_w[k]);
  }
};

struct FeatureMap {
  Tensor values;  // [T*h*w, d], rows in (t, y, x) raster order
  long long frames = 0, h = 0, w = 0, d = 0;
};

EncoderParams init_encoder_params(const EncoderConfig& cfg, const CounterRng& rng);

// video: [T, H, W, 3] with H, W divisible by 16. Frames are processed
// independently; with fuse_stem off only the final (stride-16) stage feeds
// the fusion sum.
FeatureMap encode_frames(const Tensor& video, const EncoderConfig& cfg, const EncoderParams& params);

}  // namespace trajtok
