#include "trajtok/patch_encoder.hpp"

#include <stdexcept>

namespace trajtok {
namespace {

ConvBlockParams init_block(long long c, RngSequence& rng) {
  ConvBlockParams b;
  b.dw = Tensor::zeros({7, 7, c});
  fill_xavier(b.dw, 49, 49, rng);
  b.dw_b = Tensor::zeros({c});
  b.ln_g = Tensor::full({c}, 1.0);
  b.ln_b = Tensor::zeros({c});
  b.pw1 = Tensor::zeros({c, 4 * c});
  fill_xavier(b.pw1, c, 4 * c, rng);
  b.pw1_b = Tensor::zeros({4 * c});
  b.pw2 = Tensor::zeros({4 * c, c});
  fill_xavier(b.pw2, 4 * c, c, rng);
  b.pw2_b = Tensor::zeros({c});
  return b;
}

DownsampleParams init_down(long long c_in, long long c_out, RngSequence& rng) {
  DownsampleParams d;
  d.ln_g = Tensor::full({c_in}, 1.0);
  d.ln_b = Tensor::zeros({c_in});
  d.w = Tensor::zeros({4 * c_in, c_out});
  fill_xavier(d.w, 4 * c_in, c_out, rng);
  d.b = Tensor::zeros({c_out});
  return d;
}

Tensor block_forward(const Tensor& x2d, long long hh, long long ww, long long c, const ConvBlockParams& blk) {
  Tensor y = conv2d_depthwise(x2d.reshaped({hh, ww, c}), blk.dw, 1, 3).reshaped({hh * ww, c});
  y = add_rows(y, blk.dw_b);
  y = layer_norm(y, blk.ln_g, blk.ln_b, kLayerNormEps);
  y = gelu(add_rows(matmul(y, blk.pw1), blk.pw1_b));
  y = add_rows(matmul(y, blk.pw2), blk.pw2_b);
  return add(x2d, y);
}

Tensor downsample(const Tensor& x2d, long long hh, long long ww, long long c, const DownsampleParams& ds) {
  Tensor y = layer_norm(x2d, ds.ln_g, ds.ln_b, kLayerNormEps);
  y = space_to_patches(y.reshaped({hh, ww, c}), 2);  // [hh/2*ww/2, 4c]
  return add_rows(matmul(y, ds.w), ds.b);
}

}  // namespace

EncoderParams init_encoder_params(const EncoderConfig& cfg, const CounterRng& rng) {
  if (cfg.stage_depths.size() != 3 || cfg.stage_widths.size() != 3)
    throw std::invalid_argument("encoder: exactly three stages required");
  RngSequence seq(rng);
  const long long c1 = cfg.stage_widths[0], c2 = cfg.stage_widths[1], c3 = cfg.stage_widths[2];
  EncoderParams p;
  p.stem_w = Tensor::zeros({48, c1});
  fill_xavier(p.stem_w, 48, c1, seq);
  p.stem_b = Tensor::zeros({c1});
  p.stem_ln_g = Tensor::full({c1}, 1.0);
  p.stem_ln_b = Tensor::zeros({c1});
  const std::array<long long, 3> widths = {c1, c2, c3};
  for (size_t k = 0; k < 3; ++k)
    for (long long b = 0; b < cfg.stage_depths[k]; ++b) p.stages[k].push_back(init_block(widths[k], seq));
  p.down1 = init_down(c1, c2, seq);
  p.down2 = init_down(c2, c3, seq);
  p.fuse_stem_w = Tensor::zeros({c1, cfg.d});
  fill_xavier(p.fuse_stem_w, c1, cfg.d, seq);
  for (size_t k = 0; k < 3; ++k) {
    p.fuse_stage_w[k] = Tensor::zeros({widths[k], cfg.d});
    fill_xavier(p.fuse_stage_w[k], widths[k], cfg.d, seq);
  }
  return p;
}

FeatureMap encode_frames(const Tensor& video, const EncoderConfig& cfg, const EncoderParams& params) {
  if (video.shape().size() != 4 || video.dim(3) != 3)
    throw std::invalid_argument("encoder: video must be [T, H, W, 3], got " + shape_str(video.shape()));
  const long long T = video.dim(0), H = video.dim(1), W = video.dim(2);
  if (H % 16 != 0 || W % 16 != 0)
    throw std::invalid_argument("encoder: H and W must be divisible by 16, got " + shape_str(video.shape()));
  const long long c1 = cfg.stage_widths[0], c2 = cfg.stage_widths[1], c3 = cfg.stage_widths[2];
  const long long h = H / 4, w = W / 4;

  struct ScaleMap {
    Tensor values2d;
    long long hh, ww;
    const Tensor* proj;
  };

  Tensor video2d = video.reshaped({T, H * W * 3});
  std::vector<Tensor> frame_features;
  frame_features.reserve(static_cast<size_t>(T));
  for (long long t = 0; t < T; ++t) {
    Tensor frame = take_rows(video2d, {t}).reshaped({H, W, 3});
    Tensor stem = space_to_patches(frame, 4);  // [h*w, 48]
    stem = layer_norm(add_rows(matmul(stem, params.stem_w), params.stem_b), params.stem_ln_g, params.stem_ln_b,
                      kLayerNormEps);

    std::vector<ScaleMap> scales;
    Tensor x = stem;
    long long hh = h, ww = w;
    const std::array<long long, 3> widths = {c1, c2, c3};
    for (size_t k = 0; k < 3; ++k) {
      if (k == 1) {
        x = downsample(x, hh, ww, c1, params.down1);
        hh /= 2;
        ww /= 2;
      } else if (k == 2) {
        x = downsample(x, hh, ww, c2, params.down2);
        hh /= 2;
        ww /= 2;
      }
      for (const ConvBlockParams& blk : params.stages[k]) x = block_forward(x, hh, ww, widths[k], blk);
      scales.push_back({x, hh, ww, &params.fuse_stage_w[k]});
    }

    std::vector<ScaleMap> fused;
    if (cfg.fuse_stem) {
      fused.push_back({stem, h, w, &params.fuse_stem_w});
      fused.insert(fused.end(), scales.begin(), scales.end());
    } else {
      fused.push_back(scales.back());
    }

    Tensor acc;
    for (size_t i = 0; i < fused.size(); ++i) {
      Tensor proj = matmul(fused[i].values2d, *fused[i].proj);  // [hh*ww, d]
      if (fused[i].hh != h || fused[i].ww != w)
        proj = bilinear_resize(proj.reshaped({fused[i].hh, fused[i].ww, cfg.d}), h, w).reshaped({h * w, cfg.d});
      acc = i == 0 ? proj : add(acc, proj);
    }
    frame_features.push_back(acc);
  }

  FeatureMap out;
  out.values = T > 1 ? concat_rows(frame_features) : frame_features[0];
  out.frames = T;
  out.h = h;
  out.w = w;
  out.d = cfg.d;
  return out;
}

}  // namespace trajtok
