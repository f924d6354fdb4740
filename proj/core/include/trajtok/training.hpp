#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trajtok/config.hpp"
#include "trajtok/io.hpp"
#include "trajtok/pipeline.hpp"
#include "trajtok/rng.hpp"
#include "trajtok/synthetic.hpp"

// Deterministic training for the segmentation and joint objectives: adaptive
// moments with decoupled weight decay, linear warmup then cosine decay, batch
// sampling with replacement, and per-batch sub-token counts — all randomness
// addressed by (seed, stream, step), so a resumed run replays the original
// step-for-step.
namespace trajtok {

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// beta^t by repeated multiplication: bit-identical whether accumulated across
// a run or recomputed after a resume.
double beta_power(double beta, long long t);

// Linear ramp over warmup_steps, then cosine decay to zero at total_steps.
// step is 1-based (the first executed step is 1).
double lr_at(long long step, long long total_steps, long long warmup_steps, double base_lr);

// Uniform draw from choices for the given step, on the sub-token stream.
long long sample_n(const CounterRng& subtoken_stream, std::uint64_t step,
                   const std::vector<long long>& choices);

// Binary ground-truth region masks for frames [frame_off, frame_off + frames)
// of a labeled video, majority-downsampled to the h x w cell grid: one row per
// label present in the window (background included), ascending label order.
Tensor chunk_gt_masks(const synthetic::LabeledVideo& v, long long frame_off, long long frames,
                      long long h, long long w);

struct TrainState {
  Config cfg;  // effective config (ablation overrides folded in)
  TrajTokModel model;
  std::vector<Tensor> opt_m, opt_v;  // canonical parameter order
  long long step = 0;                // completed optimizer steps
};

// Folds overrides, validates, seeds the model, zeroes the moments.
TrainState init_train_state(const Config& cfg);

struct StepStats {
  double total = 0.0, dice = 0.0, focal = 0.0, ce = 0.0, contrastive = 0.0;
  double active = 0.0;  // mean active trajectories per chunk
  long long n = 1;
  double lr = 0.0;
};

// One optimizer step on an explicit batch: per-item gradients on independent
// tapes (parallel over cfg.train.threads workers), summed in item order, then
// an AdamW update. Joint mode adds the batch contrastive term with unit
// weight. Throws on a non-finite loss, naming the step.
StepStats train_step(TrainState& s, const std::vector<const synthetic::LabeledVideo*>& batch,
                     long long n_sub, double lr);

struct TrainRun {
  double first_total = 0.0;  // logged loss of the first executed step
  double last_total = 0.0;
};

// Runs steps s.step+1 .. cfg.train.steps, appending one metric line per step
// (and val_miou every eval_interval when a validation set is given).
// until_step > 0 stops early after that step (schedule still spans
// cfg.train.steps), for mid-run checkpoints.
TrainRun train_loop(TrainState& s, const std::vector<synthetic::LabeledVideo>& train_set,
                    const std::vector<synthetic::LabeledVideo>& val_set, std::string& log,
                    long long until_step = 0);

// Checkpoint carrying parameters, optimizer moments, the completed-step
// counter (meta "step = N"), and the effective config snapshot.
io::Checkpoint train_checkpoint(TrainState& s);
TrainState resume_train_state(const io::Checkpoint& c);

}  // namespace trajtok
