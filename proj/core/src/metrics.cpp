#include "trajtok/metrics.hpp"

#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "trajtok/io.hpp"
#include "trajtok/losses.hpp"

namespace trajtok::metrics {

std::vector<std::int32_t> majority_downsample(const std::vector<std::int32_t>& labels,
                                              long long frames, long long full_h, long long full_w,
                                              long long h, long long w) {
  if (frames < 1 || h < 1 || w < 1) throw std::invalid_argument("majority_downsample: empty grid");
  if (full_h % h != 0 || full_w % w != 0)
    throw std::invalid_argument("majority_downsample: cell grid must divide the label grid");
  if (static_cast<long long>(labels.size()) != frames * full_h * full_w)
    throw std::invalid_argument("majority_downsample: label count does not match the extents");
  const long long by = full_h / h, bx = full_w / w;
  std::vector<std::int32_t> out(static_cast<size_t>(frames * h * w));
  for (long long t = 0; t < frames; ++t)
    for (long long ci = 0; ci < h; ++ci)
      for (long long cj = 0; cj < w; ++cj) {
        std::map<std::int32_t, long long> counts;  // ascending keys: ties pick the smallest
        for (long long yy = ci * by; yy < (ci + 1) * by; ++yy)
          for (long long xx = cj * bx; xx < (cj + 1) * bx; ++xx)
            ++counts[labels[static_cast<size_t>((t * full_h + yy) * full_w + xx)]];
        std::int32_t best = 0;
        long long best_count = -1;
        for (const auto& [label, count] : counts)
          if (count > best_count) {
            best = label;
            best_count = count;
          }
        out[static_cast<size_t>((t * h + ci) * w + cj)] = best;
      }
  return out;
}

double iou(const std::vector<long long>& a, const std::vector<long long>& b) {
  size_t i = 0, j = 0;
  long long inter = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const long long uni = static_cast<long long>(a.size()) + static_cast<long long>(b.size()) - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double trajectory_miou(const std::vector<std::vector<long long>>& pred,
                       const std::vector<std::int32_t>& gt_cells) {
  std::map<std::int32_t, std::vector<long long>> by_label;
  for (size_t s = 0; s < gt_cells.size(); ++s)
    if (gt_cells[s] != 0) by_label[gt_cells[s]].push_back(static_cast<long long>(s));
  if (by_label.empty()) throw std::invalid_argument("trajectory_miou: ground truth has no labeled cells");
  std::vector<const std::vector<long long>*> gt;
  gt.reserve(by_label.size());
  for (const auto& [label, cells] : by_label) gt.push_back(&cells);

  const long long rows = static_cast<long long>(pred.size());
  const long long cols = static_cast<long long>(gt.size());
  if (rows == 0) return 0.0;

  std::vector<double> overlap(static_cast<size_t>(rows * cols));
  std::vector<double> cost(static_cast<size_t>(rows * cols));
  for (long long r = 0; r < rows; ++r)
    for (long long c = 0; c < cols; ++c) {
      const double v = iou(pred[static_cast<size_t>(r)], *gt[static_cast<size_t>(c)]);
      overlap[static_cast<size_t>(r * cols + c)] = v;
      cost[static_cast<size_t>(r * cols + c)] = -v;  // max-matching via min-cost
    }
  const Matching m = hungarian_match(Tensor::from({rows, cols}, std::move(cost)));
  double sum = 0.0;
  for (const auto& [r, c] : m.pairs) sum += overlap[static_cast<size_t>(r * cols + c)];
  return sum / static_cast<double>(cols);
}

std::vector<std::vector<long long>> predicted_regions(const TokenizeResult& r) {
  std::vector<std::vector<long long>> out;
  long long frame_off = 0;
  for (const ChunkResult& ch : r.chunks) {
    const HardMasks& hm = ch.seg.hard;
    const long long base = frame_off * ch.features.h * ch.features.w;
    for (long long k = 0; k < hm.n_q; ++k) {
      if (!hm.active[static_cast<size_t>(k)]) continue;
      std::vector<long long> cells;
      for (long long s = 0; s < hm.positions; ++s)
        if (hm.one_hot[static_cast<size_t>(k * hm.positions + s)]) cells.push_back(base + s);
      out.push_back(std::move(cells));
    }
    frame_off += ch.features.frames;
  }
  return out;
}

double trajectory_miou(const TokenizeResult& pred, const synthetic::LabeledVideo& gt) {
  if (pred.chunks.empty()) throw std::invalid_argument("trajectory_miou: no chunks");
  const long long h = pred.chunks.front().features.h;
  const long long w = pred.chunks.front().features.w;
  long long frames = 0;
  for (const ChunkResult& ch : pred.chunks) frames += ch.features.frames;
  if (frames != gt.frames)
    throw std::invalid_argument("trajectory_miou: prediction and ground truth frame counts differ");
  const std::vector<std::int32_t> cells =
      majority_downsample(gt.labels, gt.frames, gt.height, gt.width, h, w);
  return trajectory_miou(predicted_regions(pred), cells);
}

double coverage(const std::vector<std::int32_t>& labels) {
  if (labels.empty()) throw std::invalid_argument("coverage: no cells");
  long long covered = 0;
  for (std::int32_t l : labels)
    if (l != 0) ++covered;
  return static_cast<double>(covered) / static_cast<double>(labels.size());
}

long long object_count(const std::vector<std::int32_t>& labels) {
  std::set<std::int32_t> distinct;
  for (std::int32_t l : labels)
    if (l != 0) distinct.insert(l);
  return static_cast<long long>(distinct.size());
}

bool passes_filters(const synthetic::LabeledVideo& v, double min_coverage, long long min_objects) {
  return coverage(v.labels) >= min_coverage && object_count(v.labels) >= min_objects;
}

double matmul_flops(double m, double k, double n) { return 2.0 * m * k * n; }

double attention_flops(double tokens, double d) {
  return 4.0 * tokens * d * d + 4.0 * tokens * tokens * d;
}

double cross_attention_flops(double q, double kv, double d) {
  return 2.0 * (q + kv) * d * d + 4.0 * q * kv * d;
}

double depthwise_flops(double kernel, double c, double out_elems) {
  return 2.0 * kernel * kernel * c * out_elems;
}

double transformer_flops(double tokens, double width, double layers) {
  return layers * (attention_flops(tokens, width) + matmul_flops(tokens, width, 4.0 * width) +
                   matmul_flops(tokens, 4.0 * width, width));
}

FlopsBreakdown trajtok_flops(const Config& cfg, double frames, double height, double width,
                             double trajectories, double n_sub, const DownstreamSpec& ds) {
  const double d = static_cast<double>(cfg.encoder.d);
  const double w1 = static_cast<double>(cfg.encoder.stage_widths[0]);
  const double w2 = static_cast<double>(cfg.encoder.stage_widths[1]);
  const double w3 = static_cast<double>(cfg.encoder.stage_widths[2]);
  const double widths[3] = {w1, w2, w3};
  const double elems[3] = {(height / 4.0) * (width / 4.0), (height / 8.0) * (width / 8.0),
                           (height / 16.0) * (width / 16.0)};

  FlopsBreakdown b;
  double per_frame = matmul_flops(elems[0], 48.0, w1);  // stride-4 patchify stem
  for (int k = 0; k < 3; ++k) {
    const double c = widths[k];
    const double block = depthwise_flops(7.0, c, elems[k]) + matmul_flops(elems[k], c, 4.0 * c) +
                         matmul_flops(elems[k], 4.0 * c, c);
    per_frame += static_cast<double>(cfg.encoder.stage_depths[static_cast<size_t>(k)]) * block;
  }
  per_frame += matmul_flops(elems[1], 4.0 * w1, w2);  // 2x2 space-to-depth downsamples
  per_frame += matmul_flops(elems[2], 4.0 * w2, w3);
  if (cfg.encoder.fuse_stem) per_frame += matmul_flops(elems[0], w1, d);
  for (int k = 0; k < 3; ++k) per_frame += matmul_flops(elems[k], widths[k], d);
  b.encoder = frames * per_frame;

  const double chunks = frames / static_cast<double>(cfg.segmenter.chunk_len);
  const double kv = static_cast<double>(cfg.segmenter.chunk_len) * elems[0];
  const double nq = static_cast<double>(cfg.segmenter.n_queries);
  double per_chunk = static_cast<double>(cfg.segmenter.perceiver_layers) *
                     (cross_attention_flops(nq, kv, d) + attention_flops(nq, d) +
                      matmul_flops(nq, d, 4.0 * d) + matmul_flops(nq, 4.0 * d, d));
  per_chunk += matmul_flops(nq, d, kv);  // per-cell assignment logits
  b.segmenter = chunks * per_chunk;

  b.aggregation = chunks * matmul_flops(nq, kv, d);

  // Masked cross-attention: regions partition the kv cells, so scores and
  // value products touch each cell n_sub times rather than trajectories*n_sub.
  const double refine_per_chunk =
      static_cast<double>(cfg.traj.refine_layers) *
      (2.0 * (trajectories * n_sub + kv) * d * d + 4.0 * n_sub * kv * d +
       trajectories * (matmul_flops(n_sub, d, 4.0 * d) + matmul_flops(n_sub, 4.0 * d, d)));
  b.refinement = chunks * refine_per_chunk;

  b.downstream = transformer_flops(trajectories * n_sub, ds.width, ds.layers);
  b.total = b.encoder + b.segmenter + b.aggregation + b.refinement + b.downstream;
  return b;
}

double vit3d_flops(double frames, double height, double width, const DownstreamSpec& ds) {
  return transformer_flops((frames / 2.0) * (height / 16.0) * (width / 16.0), ds.width, ds.layers);
}

std::string flops_csv(const Config& cfg, const std::vector<long long>& frame_list,
                      double trajectories, double n_sub, const DownstreamSpec& ds) {
  std::string out = "frames,trajtok,vit3d\n";
  for (long long f : frame_list) {
    const double t = static_cast<double>(f);
    const double h = static_cast<double>(cfg.dataset.height);
    const double w = static_cast<double>(cfg.dataset.width);
    out += std::to_string(f) + "," +
           io::format_double(trajtok_flops(cfg, t, h, w, trajectories, n_sub, ds).total) + "," +
           io::format_double(vit3d_flops(t, h, w, ds)) + "\n";
  }
  return out;
}

namespace {

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += io::format_double(v[i]);
  }
  return out;
}

}  // namespace

std::string EvalReport::text() const {
  std::string out;
  out += "trajectory_miou=" + io::format_double(trajectory_miou) + "\n";
  out += "coverage=" + io::format_double(coverage) + "\n";
  out += "object_count=" + io::format_double(object_count) + "\n";
  out += "tokens_per_chunk=" + join_doubles(tokens_per_chunk) + "\n";
  out += "trajtok_flops=" + io::format_double(trajtok_flops) + "\n";
  out += "vit3d_flops=" + io::format_double(vit3d_flops) + "\n";
  out += "videos=" + std::to_string(videos) + "\n";
  out += "skipped=" + std::to_string(skipped) + "\n";
  return out;
}

std::string EvalReport::csv_header() const {
  return "trajectory_miou,coverage,object_count,trajtok_flops,vit3d_flops,videos,skipped\n";
}

std::string EvalReport::csv_row() const {
  return io::format_double(trajectory_miou) + "," + io::format_double(coverage) + "," +
         io::format_double(object_count) + "," + io::format_double(trajtok_flops) + "," +
         io::format_double(vit3d_flops) + "," + std::to_string(videos) + "," +
         std::to_string(skipped) + "\n";
}

EvalReport evaluate(const std::vector<synthetic::LabeledVideo>& videos, const Config& cfg,
                    const TrajTokModel& model, long long n_sub, const DownstreamSpec& ds) {
  if (videos.empty()) throw std::invalid_argument("evaluate: no videos");
  EvalReport rep;
  double miou_sum = 0.0, cov_sum = 0.0, obj_sum = 0.0;
  std::vector<double> token_sum;
  std::vector<long long> token_n;
  for (const synthetic::LabeledVideo& v : videos) {
    const TokenizeResult r = tokenize(v.pixels, cfg, model, n_sub);
    const long long h = r.chunks.front().features.h;
    const long long w = r.chunks.front().features.w;
    const std::vector<std::int32_t> cells =
        majority_downsample(v.labels, v.frames, v.height, v.width, h, w);
    bool any = false;
    for (std::int32_t c : cells)
      if (c != 0) any = true;
    if (!any) {
      ++rep.skipped;
      continue;
    }
    miou_sum += trajectory_miou(predicted_regions(r), cells);
    cov_sum += coverage(v.labels);
    obj_sum += static_cast<double>(object_count(v.labels));
    if (token_sum.size() < r.chunks.size()) {
      token_sum.resize(r.chunks.size(), 0.0);
      token_n.resize(r.chunks.size(), 0);
    }
    for (size_t c = 0; c < r.chunks.size(); ++c) {
      token_sum[c] += static_cast<double>(r.chunks[c].tokens.n_active);
      ++token_n[c];
    }
    ++rep.videos;
  }
  if (rep.videos > 0) {
    rep.trajectory_miou = miou_sum / static_cast<double>(rep.videos);
    rep.coverage = cov_sum / static_cast<double>(rep.videos);
    rep.object_count = obj_sum / static_cast<double>(rep.videos);
    rep.tokens_per_chunk.resize(token_sum.size());
    for (size_t c = 0; c < token_sum.size(); ++c)
      rep.tokens_per_chunk[c] = token_sum[c] / static_cast<double>(token_n[c]);
  }
  rep.trajtok_flops = trajtok_flops(cfg, static_cast<double>(cfg.dataset.frames),
                                    static_cast<double>(cfg.dataset.height),
                                    static_cast<double>(cfg.dataset.width),
                                    static_cast<double>(cfg.segmenter.n_queries),
                                    static_cast<double>(n_sub), ds)
                          .total;
  rep.vit3d_flops = vit3d_flops(static_cast<double>(cfg.dataset.frames),
                                static_cast<double>(cfg.dataset.height),
                                static_cast<double>(cfg.dataset.width), ds);
  return rep;
}

}  // namespace trajtok::metrics
