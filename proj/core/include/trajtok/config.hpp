#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace trajtok {

struct DatasetConfig {
  long long videos = 200;
  long long width = 64;
  long long height = 64;
  long long frames = 8;
  long long shape_count_min = 3;
  long long shape_count_max = 5;
  std::string background = "mixed";  // flat | gradient | checker | mixed
  std::uint64_t seed = 7;
  double holdout_fraction = 0.2;
  long long min_objects = 1;
  bool operator==(const DatasetConfig&) const = default;
};

struct EncoderConfig {
  std::vector<long long> stage_depths{1, 1, 1};
  std::vector<long long> stage_widths{16, 32, 64};
  long long d = 64;
  bool fuse_stem = true;
  bool operator==(const EncoderConfig&) const = default;
};

struct SegmenterConfig {
  long long n_queries = 16;
  long long perceiver_layers = 2;
  long long heads = 8;
  bool detach_features = true;
  bool detach_in_logits = true;
  double rope_base = 10000.0;
  long long chunk_len = 8;
  bool operator==(const SegmenterConfig&) const = default;
};

struct TrajConfig {
  long long refine_layers = 2;
  long long refine_heads = 8;
  bool normalize_aggregation = true;
  bool use_mask = true;
  bool fourier_init = true;
  bool operator==(const TrajConfig&) const = default;
};

struct LossConfig {
  double lambda_dice = 1.0;
  double lambda_focal = 1.0;
  double lambda_ce = 0.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double dice_eps = 1e-6;
  double temperature = 0.07;
  bool operator==(const LossConfig&) const = default;
};

struct TrainConfig {
  long long steps = 500;
  long long batch_size = 8;
  double learning_rate = 3e-4;
  double weight_decay = 0.01;
  long long warmup_steps = 50;
  std::uint64_t seed = 1;
  std::vector<long long> n_choices{1, 2, 4};
  bool joint = false;
  long long eval_interval = 100;
  long long threads = 1;
  // Ablation switches; unset means "leave the module sections alone".
  // detach_features toggles both stop-gradient points of the segmenter.
  std::optional<bool> detach_features;
  std::optional<bool> fuse_stem;
  std::optional<bool> use_dice;
  std::optional<bool> use_focal;
  std::optional<bool> use_ce;
  std::optional<bool> use_mask;
  std::optional<bool> fourier_init;
  std::optional<long long> perceiver_depth;
  bool operator==(const TrainConfig&) const = default;
};

struct Config {
  DatasetConfig dataset;
  EncoderConfig encoder;
  SegmenterConfig segmenter;
  TrajConfig traj;
  LossConfig loss;
  TrainConfig train;
  bool operator==(const Config&) const = default;
};

// Strict line-based `key = value` format with `[section]` headers and `#`
// comments. Unknown sections, unknown keys, and malformed values are
// rejected with the offending name; parse(serialize(c)) == c.
Config parse_config(const std::string& text);
std::string serialize_config(const Config& c);
Config load_config_file(const std::string& path);
void save_config_file(const std::string& path, const Config& c);

// Folds the [train] ablation switches into the module sections: bool flags
// overwrite the corresponding module fields, use_dice/use_focal/use_ce gate
// the loss weights (false zeroes the weight; use_ce = true promotes a zero
// lambda_ce to 1), perceiver_depth overrides segmenter.perceiver_layers.
Config apply_overrides(Config c);

// Structural sanity checks shared by every entry point (positive sizes,
// divisibility, nonempty n_choices ⊆ {1,2,4}, known background kind, ...).
void validate_config(const Config& c);

}  // namespace trajtok
