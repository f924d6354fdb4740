#include "trajtok/pipeline.hpp"

#include <map>
#include <stdexcept>

#include "trajtok/synthetic.hpp"

namespace trajtok {

TrajTokModel init_model(const Config& cfg) {
  validate_config(cfg);
  const CounterRng init(CounterRng(cfg.train.seed).stream(rngstream::kInit));
  TrajTokModel m;
  m.encoder = init_encoder_params(cfg.encoder, init.stream(1));
  m.segmenter = init_segmenter_params(cfg.segmenter, cfg.encoder.d, init.stream(2));
  m.traj = init_traj_params(cfg.traj, cfg.encoder.d, init.stream(3));
  m.contrast = init_contrastive_params(synthetic::kSceneClasses, cfg.encoder.d, init.stream(4));
  return m;
}

TokenizeResult tokenize(const Tensor& video, const Config& cfg, const TrajTokModel& m, long long n) {
  TokenizeResult out;
  out.n = n;
  const std::vector<Tensor> chunks = chunk_video(video, cfg.segmenter.chunk_len);
  for (size_t c = 0; c < chunks.size(); ++c) {
    ChunkResult r;
    r.features = encode_frames(chunks[c], cfg.encoder, m.encoder);
    r.seg = segment_chunk(r.features, cfg.segmenter, m.segmenter);
    std::vector<long long> act;
    for (long long k = 0; k < r.seg.hard.n_q; ++k)
      if (r.seg.hard.active[static_cast<size_t>(k)]) act.push_back(k);
    Tensor z = take_rows(aggregate_soft(r.seg.soft, r.features, cfg.traj.normalize_aggregation), act);
    r.tokens = refine(z, r.features, r.seg.hard, n, cfg.traj, m.traj, cfg.segmenter.rope_base,
                      static_cast<long long>(c));
    out.chunks.push_back(std::move(r));
  }
  return out;
}

io::Checkpoint model_checkpoint(TrajTokModel& m, const Config& cfg, const std::string& meta) {
  io::Checkpoint c;
  m.visit([&](const std::string& name, Tensor& t) { c.params.emplace_back(name, t); });
  c.config_text = serialize_config(cfg);
  c.meta = meta;
  return c;
}

void load_model_params(TrajTokModel& m, const io::Checkpoint& c) {
  std::map<std::string, Tensor*> slots;
  m.visit([&](const std::string& name, Tensor& t) { slots[name] = &t; });
  std::map<std::string, bool> seen;
  for (const auto& [name, tensor] : c.params) {
    auto it = slots.find(name);
    if (it == slots.end()) throw std::invalid_argument("checkpoint names unknown parameter: " + name);
    if (seen[name]) throw std::invalid_argument("checkpoint repeats parameter: " + name);
    if (tensor.shape() != it->second->shape())
      throw std::invalid_argument("checkpoint shape mismatch for " + name);
    // own copy: the optimizer updates parameters in place
    *it->second = Tensor::from(tensor.shape(), tensor.values());
    seen[name] = true;
  }
  if (seen.size() != slots.size())
    throw std::invalid_argument("checkpoint is missing parameters: has " + std::to_string(seen.size()) +
                                " of " + std::to_string(slots.size()));
}

}  // namespace trajtok
