#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "trajtok/config.hpp"
#include "trajtok/tensor.hpp"

// Deterministic generator of labeled videos: moving hard-edged shapes over
// procedural backgrounds, with exact panoptic trajectory ground truth.
namespace trajtok::synthetic {

enum class ShapeKind : int { disc = 0, rectangle = 1, triangle = 2 };
enum class MotionKind : int { linear = 0, sinusoidal = 1, fixed = 2 };
enum class BackgroundKind : int { flat = 0, gradient = 1, checker = 2 };

struct SceneSpec {
  long long width = 64;
  long long height = 64;
  long long frames = 8;
  long long shape_count = 3;
  BackgroundKind background = BackgroundKind::flat;
  std::uint64_t seed = 0;
};

struct ShapeTrack {
  ShapeKind kind;
  MotionKind motion;
  // disc: {radius}; rectangle: {half_w, half_h}; triangle: {half_base, half_height}
  std::array<double, 3> geom{};
  std::array<double, 3> color{};
  std::vector<std::array<double, 2>> centers;  // per-frame (cx, cy)
};

struct LabeledVideo {
  Tensor pixels;                     // [T, H, W, 3], values in [0,1], float32-rounded
  std::vector<std::int32_t> labels;  // T*H*W row-major; 0 = background, 1..K topmost shape
  long long frames = 0, height = 0, width = 0;
  long long num_shapes = 0;
  BackgroundKind background = BackgroundKind::flat;
  std::vector<ShapeTrack> tracks;  // populated by generate(); empty after disk load
};

// Pixel-center membership test used by the rasterizer; exposed so tests can
// re-rasterize shapes independently of the generator's paint loop.
bool shape_contains(const ShapeTrack& track, long long frame, double px, double py);

// Deterministic in spec.seed. Shapes are drawn back-to-front by descending
// area; the label of a pixel is the front-most (last-drawn) shape covering
// it. shape_count = 0 renders background only. Throws if the frame is too
// small to hold the sampled shapes.
LabeledVideo generate(const SceneSpec& spec);

// Applies the dataset-level quality filters: every shape keeps at least
// min_visible visible pixels in every frame and its visible masks in
// consecutive frames overlap.
bool passes_filters(const LabeledVideo& v, long long min_visible = 4);

// Generates cfg.videos scenes; per-video background/shape-count rolls and
// filter-failure resampling are all derived from cfg.seed.
std::vector<LabeledVideo> generate_dataset(const DatasetConfig& cfg);

// Seed-deterministic disjoint exhaustive partition of 0..count-1 into
// (train, holdout); requires 0 < fraction < 1 and count >= 1.
struct SplitIndices {
  std::vector<long long> train;
  std::vector<long long> holdout;
};
SplitIndices split_indices(long long count, double fraction, std::uint64_t seed);

// Scene class for the contrastive head: background kind crossed with the
// (capped) shape count, 3 * 8 = 24 classes.
inline constexpr long long kSceneClasses = 24;
long long scene_class_id(BackgroundKind bg, long long num_shapes);

// Dataset directory layout: manifest.txt plus per-video pixel (float32) and
// label (int32) tensor files.
void save_dataset(const std::string& dir, const std::vector<LabeledVideo>& videos);
std::vector<LabeledVideo> load_dataset(const std::string& dir);

}  // namespace trajtok::synthetic
