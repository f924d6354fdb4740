#include "trajtok/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "trajtok/detmath.hpp"
#include "trajtok/losses.hpp"
#include "trajtok/metrics.hpp"
#include "trajtok/params.hpp"
#include "trajtok/segmenter.hpp"
#include "trajtok/traj_encoder.hpp"

namespace trajtok {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Per-item state for one batch member: an independent tape so items can run
// on worker threads, with gradients pulled out in canonical parameter order.
struct ItemWork {
  Tape tape;
  TrajTokModel taped;
  Tensor seg_total;  // [1], chunk-mean segmentation loss
  double dice = 0.0, focal = 0.0, ce = 0.0;
  double active = 0.0;
  long long chunks = 0;
  Tensor pooled;  // [1, d] mean trajectory token (joint mode)
  long long class_id = 0;
  std::vector<std::vector<double>> grads;
};

void forward_item(ItemWork& w, const synthetic::LabeledVideo& v, const Config& cfg,
                  const TrajTokModel& model, long long n_sub, bool want_tokens) {
  w.taped = watched(model, w.tape);
  const std::vector<Tensor> chunks = chunk_video(v.pixels, cfg.segmenter.chunk_len);
  Tensor loss_acc;
  std::vector<Tensor> token_blocks;
  long long frame_off = 0;
  for (size_t c = 0; c < chunks.size(); ++c) {
    const FeatureMap fm = encode_frames(chunks[c], cfg.encoder, w.taped.encoder);
    const Segmentation seg = segment_chunk(fm, cfg.segmenter, w.taped.segmenter);
    const Tensor gt = chunk_gt_masks(v, frame_off, fm.frames, fm.h, fm.w);
    const SegLossResult sl = segmentation_loss(seg.soft, gt, cfg.loss);
    loss_acc = (c == 0) ? sl.total : add(loss_acc, sl.total);
    w.dice += sl.dice.data()[0];
    w.focal += sl.focal.data()[0];
    w.ce += sl.ce.data()[0];
    for (std::uint8_t a : seg.hard.active) w.active += a ? 1.0 : 0.0;
    if (want_tokens) {
      std::vector<long long> act_rows;
      for (long long k = 0; k < seg.hard.n_q; ++k)
        if (seg.hard.active[static_cast<size_t>(k)]) act_rows.push_back(k);
      const Tensor z =
          take_rows(aggregate_soft(seg.soft, fm, cfg.traj.normalize_aggregation), act_rows);
      const TrajectoryTokenSet tok = refine(z, fm, seg.hard, n_sub, cfg.traj, w.taped.traj,
                                            cfg.segmenter.rope_base, static_cast<long long>(c));
      token_blocks.push_back(tok.tokens);
    }
    frame_off += fm.frames;
  }
  w.chunks = static_cast<long long>(chunks.size());
  const double inv = 1.0 / static_cast<double>(w.chunks);
  w.seg_total = mul_scalar(loss_acc, inv);
  w.dice *= inv;
  w.focal *= inv;
  w.ce *= inv;
  if (want_tokens) {
    const Tensor all = concat_rows(token_blocks);
    const long long rows = all.dim(0);
    w.pooled = matmul(Tensor::full({1, rows}, 1.0 / static_cast<double>(rows)), all);
    w.class_id = synthetic::scene_class_id(v.background, v.num_shapes);
  }
}

// With a pooled gradient g the item loss gains dot(pooled, g): seeding the
// item tape with exactly the batch contrastive loss's gradient through this
// item's pooled embedding.
void backward_item(ItemWork& w, double seg_weight, const Tensor* pooled_grad) {
  Tensor loss = mul_scalar(w.seg_total, seg_weight);
  if (pooled_grad != nullptr) loss = add(loss, sum_all(mul(w.pooled, *pooled_grad)));
  w.tape.backward(loss);
  w.taped.visit([&](const std::string&, Tensor& t) { w.grads.push_back(w.tape.grad(t)); });
}

struct ContrastiveStage {
  double loss_value = 0.0;
  std::vector<Tensor> pooled_grads;  // per item, [1, d]
  std::vector<double> embed_grad;
};

// Batch InfoNCE on its own tape, taking each item's pooled embedding as a
// fresh leaf; its per-leaf gradients re-enter the item tapes in backward_item.
ContrastiveStage contrastive_stage(const std::vector<ItemWork>& items, const Config& cfg,
                                   const TrajTokModel& model) {
  ContrastiveStage st;
  Tape ct;
  ContrastiveParams cw = watched(model.contrast, ct);
  std::vector<Tensor> leaves;
  std::vector<long long> ids;
  for (const ItemWork& w : items) {
    leaves.push_back(ct.watch(Tensor::from(w.pooled.shape(), w.pooled.values())));
    ids.push_back(w.class_id);
  }
  const Tensor visual = concat_rows(leaves);
  const Tensor labels = take_rows(cw.embeddings, ids);
  const Tensor closs = contrastive_loss(visual, labels, cfg.loss.temperature);
  st.loss_value = closs.data()[0];
  ct.backward(closs);
  for (const Tensor& leaf : leaves)
    st.pooled_grads.push_back(Tensor::from(leaf.shape(), ct.grad(leaf)));
  st.embed_grad = ct.grad(cw.embeddings);
  return st;
}

// Items i, i+T, i+2T, ... per worker; exceptions rethrown in item order.
void run_parallel(long long threads, size_t count, const std::function<void(size_t)>& fn) {
  const size_t workers =
      static_cast<size_t>(std::clamp<long long>(threads, 1, static_cast<long long>(std::max<size_t>(count, 1))));
  if (workers <= 1) {
    for (size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (size_t t = 0; t < workers; ++t)
    pool.emplace_back([&, t]() {
      for (size_t i = t; i < count; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (std::thread& th : pool) th.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

void adamw_update(TrainState& s, const std::vector<std::vector<double>>& grads, double lr) {
  const long long t = s.step + 1;
  const double c1 = 1.0 - beta_power(kAdamBeta1, t);
  const double c2 = 1.0 - beta_power(kAdamBeta2, t);
  const double wd = s.cfg.train.weight_decay;
  size_t p = 0;
  s.model.visit([&](const std::string&, Tensor& param) {
    double* w = param.mutable_data();
    double* m = s.opt_m[p].mutable_data();
    double* v = s.opt_v[p].mutable_data();
    const std::vector<double>& g = grads[p];
    for (long long k = 0; k < param.size(); ++k) {
      const size_t i = static_cast<size_t>(k);
      m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g[i];
      v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * (g[i] * g[i]);
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      w[i] -= lr * (mh / (std::sqrt(vh) + kAdamEps) + wd * w[i]);
    }
    ++p;
  });
}

std::string trimmed(const std::string& s) {
  size_t b = s.find_first_not_of(" \t");
  size_t e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

long long parse_step(const std::string& meta) {
  std::istringstream in(meta);
  std::string line;
  while (std::getline(in, line)) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    if (trimmed(line.substr(0, eq)) == "step") return std::stoll(line.substr(eq + 1));
  }
  throw std::invalid_argument("resume: checkpoint meta lacks a step entry");
}

}  // namespace

double beta_power(double beta, long long t) {
  double p = 1.0;
  for (long long i = 0; i < t; ++i) p *= beta;
  return p;
}

double lr_at(long long step, long long total_steps, long long warmup_steps, double base_lr) {
  if (step < 1 || total_steps < 1 || step > total_steps)
    throw std::invalid_argument("lr_at: step must lie in [1, total_steps]");
  if (warmup_steps > 0 && step <= warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const long long span = std::max<long long>(1, total_steps - warmup_steps);
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(span);
  return base_lr * 0.5 * (1.0 + detmath::dcos(kPi * progress));
}

long long sample_n(const CounterRng& subtoken_stream, std::uint64_t step,
                   const std::vector<long long>& choices) {
  if (choices.empty()) throw std::invalid_argument("sample_n: empty choice list");
  return choices[static_cast<size_t>(subtoken_stream.below(step, choices.size()))];
}

Tensor chunk_gt_masks(const synthetic::LabeledVideo& v, long long frame_off, long long frames,
                      long long h, long long w) {
  if (frame_off < 0 || frames < 1 || frame_off + frames > v.frames)
    throw std::invalid_argument("chunk_gt_masks: frame window out of range");
  const size_t begin = static_cast<size_t>(frame_off * v.height * v.width);
  const size_t count = static_cast<size_t>(frames * v.height * v.width);
  const std::vector<std::int32_t> window(v.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                                         v.labels.begin() + static_cast<std::ptrdiff_t>(begin + count));
  const std::vector<std::int32_t> cells =
      metrics::majority_downsample(window, frames, v.height, v.width, h, w);
  std::map<std::int32_t, long long> row_of;  // ascending label order
  for (std::int32_t c : cells) row_of.emplace(c, 0);
  long long next = 0;
  for (auto& [label, row] : row_of) row = next++;
  const long long k = next;
  const long long p = static_cast<long long>(cells.size());
  Tensor gt = Tensor::zeros({k, p});
  for (long long s = 0; s < p; ++s)
    gt.mutable_data()[row_of.at(cells[static_cast<size_t>(s)]) * p + s] = 1.0;
  return gt;
}

TrainState init_train_state(const Config& cfg) {
  TrainState s;
  s.cfg = apply_overrides(cfg);
  validate_config(s.cfg);
  s.model = init_model(s.cfg);
  s.model.visit([&](const std::string&, Tensor& t) {
    s.opt_m.push_back(Tensor::zeros(t.shape()));
    s.opt_v.push_back(Tensor::zeros(t.shape()));
  });
  return s;
}

StepStats train_step(TrainState& s, const std::vector<const synthetic::LabeledVideo*>& batch,
                     long long n_sub, double lr) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const Config& cfg = s.cfg;
  const bool joint = cfg.train.joint;
  if (joint && batch.size() < 2)
    throw std::invalid_argument("train_step: the joint objective needs batch size >= 2");
  const double b = static_cast<double>(batch.size());

  try {
    std::vector<ItemWork> items(batch.size());
    run_parallel(cfg.train.threads, batch.size(),
                 [&](size_t i) { forward_item(items[i], *batch[i], cfg, s.model, n_sub, joint); });

    ContrastiveStage st;
    if (joint) st = contrastive_stage(items, cfg, s.model);

    run_parallel(cfg.train.threads, batch.size(), [&](size_t i) {
      backward_item(items[i], 1.0 / b, joint ? &st.pooled_grads[i] : nullptr);
    });

    // fixed reduction order: items 0..B-1, then the contrastive stage
    const size_t n_params = items.front().grads.size();
    std::vector<std::vector<double>> acc(n_params);
    for (size_t p = 0; p < n_params; ++p) acc[p].assign(items.front().grads[p].size(), 0.0);
    for (const ItemWork& w : items)
      for (size_t p = 0; p < n_params; ++p)
        for (size_t i = 0; i < acc[p].size(); ++i) acc[p][i] += w.grads[p][i];
    if (joint) {
      size_t slot = 0, idx = 0;
      s.model.visit([&](const std::string& name, Tensor&) {
        if (name == "contrast.label_embeddings") slot = idx;
        ++idx;
      });
      for (size_t i = 0; i < st.embed_grad.size(); ++i) acc[slot][i] += st.embed_grad[i];
    }

    StepStats out;
    out.n = n_sub;
    out.lr = lr;
    double seg_sum = 0.0;
    long long chunk_total = 0;
    for (const ItemWork& w : items) {
      seg_sum += w.seg_total.data()[0];
      out.dice += w.dice;
      out.focal += w.focal;
      out.ce += w.ce;
      out.active += w.active;
      chunk_total += w.chunks;
    }
    out.dice /= b;
    out.focal /= b;
    out.ce /= b;
    out.contrastive = joint ? st.loss_value : 0.0;
    out.active /= static_cast<double>(chunk_total);
    out.total = seg_sum / b + out.contrastive;
    if (!std::isfinite(out.total)) throw std::runtime_error("non-finite loss");

    items.clear();  // release tapes before touching parameter buffers
    adamw_update(s, acc, lr);
    ++s.step;
    return out;
  } catch (const std::exception& e) {
    throw std::runtime_error("training aborted at step " + std::to_string(s.step + 1) + ": " +
                             e.what());
  }
}

TrainRun train_loop(TrainState& s, const std::vector<synthetic::LabeledVideo>& train_set,
                    const std::vector<synthetic::LabeledVideo>& val_set, std::string& log,
                    long long until_step) {
  if (train_set.empty()) throw std::invalid_argument("train_loop: empty training set");
  const Config& cfg = s.cfg;
  const long long last =
      until_step > 0 ? std::min(until_step, cfg.train.steps) : cfg.train.steps;
  const CounterRng batch_rng = CounterRng(cfg.train.seed).stream(rngstream::kBatch);
  const CounterRng sub_rng = CounterRng(cfg.train.seed).stream(rngstream::kSubtokens);
  TrainRun run;
  bool started = false;
  for (long long step = s.step + 1; step <= last; ++step) {
    const long long n = sample_n(sub_rng, static_cast<std::uint64_t>(step), cfg.train.n_choices);
    const CounterRng draw = batch_rng.stream(static_cast<std::uint64_t>(step));
    std::vector<const synthetic::LabeledVideo*> batch;
    for (long long i = 0; i < cfg.train.batch_size; ++i)
      batch.push_back(&train_set[static_cast<size_t>(
          draw.below(static_cast<std::uint64_t>(i), train_set.size()))]);
    const double lr = lr_at(step, cfg.train.steps, cfg.train.warmup_steps, cfg.train.learning_rate);
    const StepStats st = train_step(s, batch, n, lr);

    std::vector<std::pair<std::string, double>> kv = {
        {"n", static_cast<double>(st.n)}, {"lr", st.lr},   {"loss", st.total},
        {"dice", st.dice},                {"focal", st.focal}, {"ce", st.ce},
        {"contrastive", st.contrastive},  {"active", st.active}};
    if (cfg.train.eval_interval > 0 && step % cfg.train.eval_interval == 0 && !val_set.empty()) {
      const metrics::EvalReport rep = metrics::evaluate(val_set, cfg, s.model, 1);
      kv.emplace_back("val_miou", rep.trajectory_miou);
    }
    log += io::format_metric_line(static_cast<std::uint64_t>(step), kv);
    if (!started) {
      run.first_total = st.total;
      started = true;
    }
    run.last_total = st.total;
  }
  return run;
}

io::Checkpoint train_checkpoint(TrainState& s) {
  io::Checkpoint c;
  s.model.visit([&](const std::string& name, Tensor& t) { c.params.emplace_back(name, t); });
  for (size_t p = 0; p < c.params.size(); ++p) {
    c.opt_m.emplace_back(c.params[p].first, s.opt_m[p]);
    c.opt_v.emplace_back(c.params[p].first, s.opt_v[p]);
  }
  c.meta = "step = " + std::to_string(s.step) + "\n";
  c.config_text = serialize_config(s.cfg);
  return c;
}

TrainState resume_train_state(const io::Checkpoint& c) {
  TrainState s;
  s.cfg = apply_overrides(parse_config(c.config_text));
  validate_config(s.cfg);
  s.model = init_model(s.cfg);
  load_model_params(s.model, c);
  std::vector<std::string> names;
  s.model.visit([&](const std::string& n, Tensor& t) {
    names.push_back(n);
    s.opt_m.push_back(Tensor::zeros(t.shape()));
    s.opt_v.push_back(Tensor::zeros(t.shape()));
  });
  if (!c.opt_m.empty() || !c.opt_v.empty()) {
    std::map<std::string, size_t> index;
    for (size_t i = 0; i < names.size(); ++i) index.emplace(names[i], i);
    auto fill = [&](const std::vector<std::pair<std::string, Tensor>>& src,
                    std::vector<Tensor>& dst, const char* kind) {
      std::vector<char> seen(names.size(), 0);
      for (const auto& [name, t] : src) {
        const auto it = index.find(name);
        if (it == index.end())
          throw std::invalid_argument(std::string("resume: unknown ") + kind + " entry: " + name);
        if (seen[it->second])
          throw std::invalid_argument(std::string("resume: repeated ") + kind + " entry: " + name);
        if (t.shape() != dst[it->second].shape())
          throw std::invalid_argument(std::string("resume: ") + kind + " shape mismatch: " + name);
        seen[it->second] = 1;
        dst[it->second] = Tensor::from(t.shape(), t.values());
      }
      if (src.size() != names.size())
        throw std::invalid_argument(std::string("resume: ") + kind + " list does not cover the parameters");
    };
    fill(c.opt_m, s.opt_m, "m-moment");
    fill(c.opt_v, s.opt_v, "v-moment");
  }
  s.step = parse_step(c.meta);
  return s;
}

}  // namespace trajtok
