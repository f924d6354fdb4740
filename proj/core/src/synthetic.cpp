#include "trajtok/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "trajtok/detmath.hpp"
#include "trajtok/io.hpp"
#include "trajtok/rng.hpp"

namespace fs = std::filesystem;

namespace trajtok::synthetic {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr long long kCheckerCell = 8;
constexpr long long kMaxSceneAttempts = 1000;

double color_dist(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::array<double, 3> draw_color(RngSequence& rng) {
  return {rng.unit(), rng.unit(), rng.unit()};
}

// Rejection-sample a color far from the background representatives (>= 0.25)
// and from earlier shapes (>= 0.15); after 100 tries keep the best candidate.
std::array<double, 3> pick_shape_color(RngSequence& rng, const std::vector<std::array<double, 3>>& bg_reps,
                                       const std::vector<std::array<double, 3>>& taken) {
  std::array<double, 3> best{};
  double best_score = -1.0;
  for (int attempt = 0; attempt < 100; ++attempt) {
    const std::array<double, 3> c = draw_color(rng);
    double score = 1e9;
    for (const auto& r : bg_reps) score = std::min(score, color_dist(c, r) / 0.25);
    for (const auto& r : taken) score = std::min(score, color_dist(c, r) / 0.15);
    if (score > best_score) {
      best_score = score;
      best = c;
    }
    if (score >= 1.0) break;
  }
  return best;
}

struct Extents {
  double x, y;
};

Extents extents_of(const ShapeTrack& t) {
  switch (t.kind) {
    case ShapeKind::disc: return {t.geom[0], t.geom[0]};
    case ShapeKind::rectangle: return {t.geom[0], t.geom[1]};
    case ShapeKind::triangle: return {t.geom[0], t.geom[1]};
  }
  throw std::logic_error("unreachable shape kind");
}

double area_of(const ShapeTrack& t) {
  switch (t.kind) {
    case ShapeKind::disc: return std::numbers::pi * t.geom[0] * t.geom[0];
    case ShapeKind::rectangle: return 4.0 * t.geom[0] * t.geom[1];
    case ShapeKind::triangle: return 2.0 * t.geom[0] * t.geom[1];
  }
  throw std::logic_error("unreachable shape kind");
}

struct BackgroundPaint {
  BackgroundKind kind;
  std::array<double, 3> c0{}, c1{};
  int orientation = 0;  // gradient: 0 = along x, 1 = along y

  std::array<double, 3> at(long long x, long long y, long long w, long long h) const {
    switch (kind) {
      case BackgroundKind::flat: return c0;
      case BackgroundKind::gradient: {
        const double f = orientation == 0 ? (x + 0.5) / static_cast<double>(w) : (y + 0.5) / static_cast<double>(h);
        return {c0[0] + (c1[0] - c0[0]) * f, c0[1] + (c1[1] - c0[1]) * f, c0[2] + (c1[2] - c0[2]) * f};
      }
      case BackgroundKind::checker:
        return ((x / kCheckerCell + y / kCheckerCell) & 1) == 0 ? c0 : c1;
    }
    throw std::logic_error("unreachable background kind");
  }
};

}  // namespace

bool shape_contains(const ShapeTrack& track, long long frame, double px, double py) {
  const double cx = track.centers[static_cast<size_t>(frame)][0];
  const double cy = track.centers[static_cast<size_t>(frame)][1];
  switch (track.kind) {
    case ShapeKind::disc: {
      const double dx = px - cx, dy = py - cy;
      return dx * dx + dy * dy <= track.geom[0] * track.geom[0];
    }
    case ShapeKind::rectangle:
      return std::fabs(px - cx) <= track.geom[0] && std::fabs(py - cy) <= track.geom[1];
    case ShapeKind::triangle: {
      // apex up: (cx, cy-a), base corners (cx-b, cy+a), (cx+b, cy+a)
      const double b = track.geom[0], a = track.geom[1];
      const double x0 = cx, y0 = cy - a;
      const double x1 = cx - b, y1 = cy + a;
      const double x2 = cx + b, y2 = cy + a;
      const double e01 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0);
      const double e12 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
      const double e20 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2);
      return (e01 >= 0 && e12 >= 0 && e20 >= 0) || (e01 <= 0 && e12 <= 0 && e20 <= 0);
    }
  }
  throw std::logic_error("unreachable shape kind");
}

LabeledVideo generate(const SceneSpec& spec) {
  if (spec.width < 1 || spec.height < 1 || spec.frames < 1 || spec.shape_count < 0)
    throw std::invalid_argument("scene: width/height/frames must be positive, shape_count nonnegative");

  const long long W = spec.width, H = spec.height, T = spec.frames;
  const CounterRng root(spec.seed);
  RngSequence bg_rng(root.stream(1));
  RngSequence shape_rng(root.stream(2));
  RngSequence color_rng(root.stream(3));

  BackgroundPaint bg;
  bg.kind = spec.background;
  bg.c0 = draw_color(bg_rng);
  if (bg.kind != BackgroundKind::flat) bg.c1 = draw_color(bg_rng);
  if (bg.kind == BackgroundKind::gradient) bg.orientation = static_cast<int>(bg_rng.below(2));
  std::vector<std::array<double, 3>> bg_reps = {bg.c0};
  if (bg.kind != BackgroundKind::flat) bg_reps.push_back(bg.c1);

  // Size law: 4..10 px at a 64-px frame, scaled with the short side, floored
  // so shapes stay rasterizable on small frames.
  const double scale = static_cast<double>(std::min(W, H)) / 64.0;
  auto sample_extent = [&]() { return std::max(2.0, shape_rng.uniform(4.0, 10.0) * scale); };

  std::vector<ShapeTrack> tracks;
  std::vector<std::array<double, 3>> taken_colors;
  for (long long s = 0; s < spec.shape_count; ++s) {
    ShapeTrack t;
    t.kind = static_cast<ShapeKind>(shape_rng.below(3));
    switch (t.kind) {
      case ShapeKind::disc: t.geom = {sample_extent(), 0, 0}; break;
      case ShapeKind::rectangle: t.geom = {sample_extent(), sample_extent(), 0}; break;
      case ShapeKind::triangle: t.geom = {sample_extent(), sample_extent(), 0}; break;
    }
    const Extents ext = extents_of(t);
    const double lo_x = ext.x + 1.0, hi_x = W - ext.x - 1.0;
    const double lo_y = ext.y + 1.0, hi_y = H - ext.y - 1.0;
    if (lo_x > hi_x || lo_y > hi_y) throw std::invalid_argument("scene: shape larger than frame");

    t.motion = static_cast<MotionKind>(shape_rng.below(3));
    t.centers.resize(static_cast<size_t>(T));
    switch (t.motion) {
      case MotionKind::linear: {
        double x = shape_rng.uniform(lo_x, hi_x), y = shape_rng.uniform(lo_y, hi_y);
        double vx = shape_rng.uniform(-1.8, 1.8), vy = shape_rng.uniform(-1.8, 1.8);
        for (long long f = 0; f < T; ++f) {
          t.centers[static_cast<size_t>(f)] = {x, y};
          x += vx;
          y += vy;
          while (x < lo_x || x > hi_x) {
            if (x < lo_x) x = 2 * lo_x - x;
            if (x > hi_x) x = 2 * hi_x - x;
            vx = -vx;
          }
          while (y < lo_y || y > hi_y) {
            if (y < lo_y) y = 2 * lo_y - y;
            if (y > hi_y) y = 2 * hi_y - y;
            vy = -vy;
          }
        }
        break;
      }
      case MotionKind::sinusoidal: {
        const double freq = shape_rng.uniform(0.05, 0.15);
        const double speed_cap = 2.5 / (kTwoPi * freq);
        auto axis = [&](double lo, double hi, double& c0, double& amp, double& phase) {
          amp = std::min({shape_rng.uniform(1.0, 6.0), speed_cap, (hi - lo) / 2.0});
          amp = std::max(amp, 0.0);
          c0 = shape_rng.uniform(lo + amp, hi - amp);
          phase = shape_rng.uniform(0.0, kTwoPi);
        };
        double cx0, ax, px, cy0, ay, py;
        axis(lo_x, hi_x, cx0, ax, px);
        axis(lo_y, hi_y, cy0, ay, py);
        for (long long f = 0; f < T; ++f)
          t.centers[static_cast<size_t>(f)] = {cx0 + ax * detmath::dsin(kTwoPi * freq * f + px),
                                               cy0 + ay * detmath::dsin(kTwoPi * freq * f + py)};
        break;
      }
      case MotionKind::fixed: {
        const double x = shape_rng.uniform(lo_x, hi_x), y = shape_rng.uniform(lo_y, hi_y);
        for (long long f = 0; f < T; ++f) t.centers[static_cast<size_t>(f)] = {x, y};
        break;
      }
    }
    t.color = pick_shape_color(color_rng, bg_reps, taken_colors);
    taken_colors.push_back(t.color);
    tracks.push_back(std::move(t));
  }

  // back-to-front: larger shapes behind, so front-most (highest label) wins
  std::stable_sort(tracks.begin(), tracks.end(),
                   [](const ShapeTrack& a, const ShapeTrack& b) { return area_of(a) > area_of(b); });

  LabeledVideo out;
  out.frames = T;
  out.height = H;
  out.width = W;
  out.num_shapes = spec.shape_count;
  out.background = spec.background;
  std::vector<double> pix(static_cast<size_t>(T * H * W * 3));
  out.labels.assign(static_cast<size_t>(T * H * W), 0);

  for (long long f = 0; f < T; ++f) {
    for (long long y = 0; y < H; ++y)
      for (long long x = 0; x < W; ++x) {
        const std::array<double, 3> c = bg.at(x, y, W, H);
        const size_t base = static_cast<size_t>(((f * H + y) * W + x) * 3);
        pix[base] = c[0];
        pix[base + 1] = c[1];
        pix[base + 2] = c[2];
      }
    for (size_t s = 0; s < tracks.size(); ++s) {
      const ShapeTrack& t = tracks[s];
      const Extents ext = extents_of(t);
      const auto& c = t.centers[static_cast<size_t>(f)];
      const long long x0 = std::max(0LL, static_cast<long long>(std::floor(c[0] - ext.x - 1)));
      const long long x1 = std::min(W - 1, static_cast<long long>(std::ceil(c[0] + ext.x + 1)));
      const long long y0 = std::max(0LL, static_cast<long long>(std::floor(c[1] - ext.y - 1)));
      const long long y1 = std::min(H - 1, static_cast<long long>(std::ceil(c[1] + ext.y + 1)));
      for (long long y = y0; y <= y1; ++y)
        for (long long x = x0; x <= x1; ++x)
          if (shape_contains(t, f, x + 0.5, y + 0.5)) {
            const size_t base = static_cast<size_t>(((f * H + y) * W + x) * 3);
            pix[base] = t.color[0];
            pix[base + 1] = t.color[1];
            pix[base + 2] = t.color[2];
            out.labels[static_cast<size_t>((f * H + y) * W + x)] = static_cast<std::int32_t>(s + 1);
          }
    }
  }

  // Pixels are exported as float32; round now so the in-memory dataset and a
  // disk round-trip feed training identical values.
  for (double& v : pix) v = static_cast<double>(static_cast<float>(v));
  out.pixels = Tensor::from({T, H, W, 3}, std::move(pix));
  out.tracks = std::move(tracks);
  return out;
}

bool passes_filters(const LabeledVideo& v, long long min_visible) {
  const long long T = v.frames, HW = v.height * v.width, K = v.num_shapes;
  if (K == 0) return true;
  std::vector<long long> visible(static_cast<size_t>(T * (K + 1)), 0);
  for (long long f = 0; f < T; ++f)
    for (long long p = 0; p < HW; ++p) ++visible[static_cast<size_t>(f * (K + 1) + v.labels[static_cast<size_t>(f * HW + p)])];
  for (long long f = 0; f < T; ++f)
    for (long long s = 1; s <= K; ++s)
      if (visible[static_cast<size_t>(f * (K + 1) + s)] < min_visible) return false;
  for (long long f = 0; f + 1 < T; ++f)
    for (long long s = 1; s <= K; ++s) {
      bool overlap = false;
      for (long long p = 0; p < HW && !overlap; ++p)
        overlap = v.labels[static_cast<size_t>(f * HW + p)] == s && v.labels[static_cast<size_t>((f + 1) * HW + p)] == s;
      if (!overlap) return false;
    }
  return true;
}

std::vector<LabeledVideo> generate_dataset(const DatasetConfig& cfg) {
  const CounterRng ds = CounterRng(cfg.seed).stream(rngstream::kDataset);
  std::vector<LabeledVideo> out;
  out.reserve(static_cast<size_t>(cfg.videos));
  for (long long v = 0; v < cfg.videos; ++v) {
    const CounterRng vid = ds.stream(static_cast<std::uint64_t>(v));
    SceneSpec spec;
    spec.width = cfg.width;
    spec.height = cfg.height;
    spec.frames = cfg.frames;
    if (cfg.background == "flat") spec.background = BackgroundKind::flat;
    else if (cfg.background == "gradient") spec.background = BackgroundKind::gradient;
    else if (cfg.background == "checker") spec.background = BackgroundKind::checker;
    else spec.background = static_cast<BackgroundKind>(vid.below(0, 3));
    const long long span = cfg.shape_count_max - cfg.shape_count_min + 1;
    spec.shape_count = cfg.shape_count_min + static_cast<long long>(vid.below(1, static_cast<std::uint64_t>(span)));

    bool accepted = false;
    for (long long attempt = 0; attempt < kMaxSceneAttempts; ++attempt) {
      spec.seed = vid.bits(static_cast<std::uint64_t>(2 + attempt));
      LabeledVideo lv = generate(spec);
      if (lv.num_shapes >= cfg.min_objects && passes_filters(lv)) {
        out.push_back(std::move(lv));
        accepted = true;
        break;
      }
    }
    if (!accepted)
      throw std::runtime_error("dataset: no filter-passing scene found for video " + std::to_string(v));
  }
  return out;
}

SplitIndices split_indices(long long count, double fraction, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("split: empty dataset");
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("split: fraction must lie in (0, 1)");
  std::vector<long long> perm(static_cast<size_t>(count));
  for (long long i = 0; i < count; ++i) perm[static_cast<size_t>(i)] = i;
  RngSequence rng(CounterRng(seed).stream(rngstream::kSplit));
  for (long long i = count - 1; i > 0; --i)
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);
  long long holdout = std::llround(fraction * static_cast<double>(count));
  holdout = std::min(holdout, count - 1);
  SplitIndices s;
  s.holdout.assign(perm.begin(), perm.begin() + holdout);
  s.train.assign(perm.begin() + holdout, perm.end());
  std::sort(s.holdout.begin(), s.holdout.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

long long scene_class_id(BackgroundKind bg, long long num_shapes) {
  const long long capped = std::min(std::max(num_shapes, 1LL), 8LL);
  return static_cast<long long>(bg) * 8 + capped - 1;
}

namespace {
std::string video_name(long long i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "video_%04lld", i);
  return buf;
}
}  // namespace

void save_dataset(const std::string& dir, const std::vector<LabeledVideo>& videos) {
  fs::create_directories(dir);
  std::string manifest = "count = " + std::to_string(videos.size()) + "\n";
  for (size_t i = 0; i < videos.size(); ++i) {
    const LabeledVideo& v = videos[i];
    const std::string name = video_name(static_cast<long long>(i));
    manifest += name + " shapes=" + std::to_string(v.num_shapes) +
                " background=" + std::to_string(static_cast<int>(v.background)) + "\n";
    io::write_tensor_f32((fs::path(dir) / (name + ".ttk")).string(), v.pixels);
    io::write_tensor_i32((fs::path(dir) / (name + "_labels.ttk")).string(), {v.frames, v.height, v.width}, v.labels);
  }
  io::write_text((fs::path(dir) / "manifest.txt").string(), manifest);
}

std::vector<LabeledVideo> load_dataset(const std::string& dir) {
  const std::string manifest = io::read_text((fs::path(dir) / "manifest.txt").string());
  std::istringstream lines(manifest);
  std::string header;
  std::getline(lines, header);
  long long count = 0;
  if (std::sscanf(header.c_str(), "count = %lld", &count) != 1 || count < 0)
    throw std::runtime_error(dir + "/manifest.txt: malformed count line");
  std::vector<LabeledVideo> out;
  out.reserve(static_cast<size_t>(count));
  for (long long i = 0; i < count; ++i) {
    std::string line;
    if (!std::getline(lines, line)) throw std::runtime_error(dir + "/manifest.txt: truncated manifest");
    char name[64];
    long long shapes = 0;
    int bg = 0;
    if (std::sscanf(line.c_str(), "%63s shapes=%lld background=%d", name, &shapes, &bg) != 3)
      throw std::runtime_error(dir + "/manifest.txt: malformed entry '" + line + "'");
    LabeledVideo v;
    v.pixels = io::read_tensor_f32((fs::path(dir) / (std::string(name) + ".ttk")).string());
    if (v.pixels.shape().size() != 4 || v.pixels.shape()[3] != 3)
      throw std::runtime_error(std::string(name) + ": pixel tensor must be rank 4 with 3 channels");
    Shape lshape;
    v.labels = io::read_tensor_i32((fs::path(dir) / (std::string(name) + "_labels.ttk")).string(), lshape);
    v.frames = v.pixels.dim(0);
    v.height = v.pixels.dim(1);
    v.width = v.pixels.dim(2);
    if (lshape != Shape{v.frames, v.height, v.width})
      throw std::runtime_error(std::string(name) + ": label tensor shape does not match pixels");
    v.num_shapes = shapes;
    v.background = static_cast<BackgroundKind>(bg);
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace trajtok::synthetic
