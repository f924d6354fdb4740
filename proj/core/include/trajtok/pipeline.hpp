#pragma once

#include <string>
#include <vector>

#include "trajtok/config.hpp"
#include "trajtok/io.hpp"
#include "trajtok/losses.hpp"
#include "trajtok/traj_encoder.hpp"

// Whole-model assembly: one parameter struct, one init, the full
// video-to-tokens composition, and the checkpoint bridge.
namespace trajtok {

struct TrajTokModel {
  EncoderParams encoder;
  SegmenterParams segmenter;
  TrajParams traj;
  ContrastiveParams contrast;

  template <class F>
  void visit(F&& f) {
    encoder.visit([&f](const std::string& n, Tensor& t) { f("encoder." + n, t); });
    segmenter.visit([&f](const std::string& n, Tensor& t) { f("segmenter." + n, t); });
    traj.visit([&f](const std::string& n, Tensor& t) { f("traj." + n, t); });
    contrast.visit([&f](const std::string& n, Tensor& t) { f("contrast." + n, t); });
  }
};

// Deterministic in (config, train.seed). Each module draws from its own
// substream, so one module's internals never shift another's init.
TrajTokModel init_model(const Config& cfg);

struct ChunkResult {
  FeatureMap features;
  Segmentation seg;
  TrajectoryTokenSet tokens;
};

struct TokenizeResult {
  std::vector<ChunkResult> chunks;
  long long n = 1;
};

// Per chunk: encode frames, segment, aggregate the active queries'
// proposals, refine into n sub-tokens per trajectory.
TokenizeResult tokenize(const Tensor& video, const Config& cfg, const TrajTokModel& m, long long n);

// Parameters in visit order under the model-level names, plus the serialized
// config; optimizer state is the caller's business.
io::Checkpoint model_checkpoint(TrajTokModel& m, const Config& cfg, const std::string& meta);

// Strict by-name restore: every checkpoint entry must name a known parameter
// of matching shape, and every parameter must be covered exactly once.
void load_model_params(TrajTokModel& m, const io::Checkpoint& c);

}  // namespace trajtok
