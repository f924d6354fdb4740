#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trajtok/config.hpp"
#include "trajtok/pipeline.hpp"
#include "trajtok/synthetic.hpp"

// Trajectory-level evaluation, data-quality filters, and the analytical FLOP
// model comparing trajectory tokens against a space-time-patch baseline.
namespace trajtok::metrics {

// Majority label per cell of an h x w grid from full-resolution labels
// (t, y, x row-major, 0 = background); ties take the smallest label.
// full_h and full_w must be divisible by h and w.
std::vector<std::int32_t> majority_downsample(const std::vector<std::int32_t>& labels,
                                              long long frames, long long full_h, long long full_w,
                                              long long h, long long w);

// 3D intersection-over-union of two cell index sets (sorted, duplicate-free).
double iou(const std::vector<long long>& a, const std::vector<long long>& b);

// Mean IoU over ground-truth trajectories under an optimal one-to-one
// matching against predicted regions; unmatched ground truth scores zero.
// pred: cell index sets on the same grid as gt_cells (sorted, non-empty).
// Throws if gt_cells contains no labeled cell.
double trajectory_miou(const std::vector<std::vector<long long>>& pred,
                       const std::vector<std::int32_t>& gt_cells);

// Convenience overload: extracts active predicted regions and downsamples the
// video's labels to the prediction grid.
double trajectory_miou(const TokenizeResult& pred, const synthetic::LabeledVideo& gt);

// One sorted whole-video cell index set per active trajectory, in (chunk,
// query) order. Cells are indexed (t_global * h + i) * w + j on the mask grid.
std::vector<std::vector<long long>> predicted_regions(const TokenizeResult& r);

// Fraction of cells with a nonzero label, and the number of distinct nonzero
// labels.
double coverage(const std::vector<std::int32_t>& labels);
long long object_count(const std::vector<std::int32_t>& labels);

// Annotation-quality gate: at least min_coverage of pixels labeled (inclusive)
// and at least min_objects distinct objects (inclusive).
bool passes_filters(const synthetic::LabeledVideo& v, double min_coverage = 0.8,
                    long long min_objects = 10);

// ---- analytical FLOP model -------------------------------------------------
// Counts matmul, convolution, and attention arithmetic only (normalisation,
// activations, and interpolation are ignored). Extents are real-valued so the
// model is smooth; callers pass integer sizes.

struct DownstreamSpec {
  double layers = 12;
  double width = 768;
};

double matmul_flops(double m, double k, double n);              // 2*m*k*n
double attention_flops(double tokens, double d);                // 4*L*d^2 + 4*L^2*d
double cross_attention_flops(double q, double kv, double d);    // 2*(q+kv)*d^2 + 4*q*kv*d
double depthwise_flops(double kernel, double c, double out_elems);  // 2*k^2*c*out
double transformer_flops(double tokens, double width, double layers);

struct FlopsBreakdown {
  double encoder = 0.0;      // per-frame convolutional stack, all frames
  double segmenter = 0.0;    // perceiver layers plus assignment logits
  double aggregation = 0.0;  // soft mask-weighted feature pooling
  double refinement = 0.0;   // masked cross-attention over region features
  double downstream = 0.0;   // transformer over trajectories*n tokens (T-independent)
  double total = 0.0;
};

// trajectories: scene token count (trajectories per chunk); n_sub: tokens per
// trajectory. The downstream term does not depend on frames.
FlopsBreakdown trajtok_flops(const Config& cfg, double frames, double height, double width,
                             double trajectories, double n_sub, const DownstreamSpec& ds);

// Space-time-patch baseline: the same downstream transformer over
// (T/2)*(H/16)*(W/16) patch tokens.
double vit3d_flops(double frames, double height, double width, const DownstreamSpec& ds);

// "frames,trajtok,vit3d" header plus one row per entry of frame_list.
std::string flops_csv(const Config& cfg, const std::vector<long long>& frame_list,
                      double trajectories, double n_sub, const DownstreamSpec& ds);

// ---- evaluation report -----------------------------------------------------

struct EvalReport {
  double trajectory_miou = 0.0;
  double coverage = 0.0;
  double object_count = 0.0;             // mean over videos
  std::vector<double> tokens_per_chunk;  // mean active trajectories per chunk index
  double trajtok_flops = 0.0;
  double vit3d_flops = 0.0;
  long long videos = 0;
  long long skipped = 0;  // videos whose downsampled ground truth was empty

  std::string text() const;      // one key=value pair per line
  std::string csv_header() const;
  std::string csv_row() const;
};

// Tokenizes every video with the model and aggregates matched mIoU, label
// coverage, object counts, and per-chunk token counts. Videos whose
// downsampled ground truth has no labeled cell are skipped and counted.
// FLOP scalars use cfg extents with n_queries trajectories.
EvalReport evaluate(const std::vector<synthetic::LabeledVideo>& videos, const Config& cfg,
                    const TrajTokModel& model, long long n_sub, const DownstreamSpec& ds = {});

}  // namespace trajtok::metrics
