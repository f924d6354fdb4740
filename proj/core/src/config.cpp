#include "trajtok/config.hpp"

#include <charconv>
#include <stdexcept>

#include "trajtok/io.hpp"

namespace trajtok {
namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw std::invalid_argument("config: bad value '" + value + "' for key '" + key + "'");
}

long long parse_ll(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) bad_value(key, v);
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) bad_value(key, v);
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) bad_value(key, v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, v);
}

std::vector<long long> parse_ll_list(const std::string& key, const std::string& v) {
  std::vector<long long> out;
  size_t pos = 0;
  while (pos <= v.size()) {
    const size_t comma = v.find(',', pos);
    const std::string item = trim(v.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
    if (item.empty()) bad_value(key, v);
    out.push_back(parse_ll(key, item));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::string join_ll(const std::vector<long long>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

[[noreturn]] void unknown_key(const std::string& section, const std::string& key) {
  throw std::invalid_argument("config: unknown key '" + key + "' in section [" + section + "]");
}

void apply_dataset(DatasetConfig& c, const std::string& key, const std::string& v) {
  if (key == "videos") c.videos = parse_ll(key, v);
  else if (key == "width") c.width = parse_ll(key, v);
  else if (key == "height") c.height = parse_ll(key, v);
  else if (key == "frames") c.frames = parse_ll(key, v);
  else if (key == "shape_count_min") c.shape_count_min = parse_ll(key, v);
  else if (key == "shape_count_max") c.shape_count_max = parse_ll(key, v);
  else if (key == "background") c.background = v;
  else if (key == "seed") c.seed = parse_u64(key, v);
  else if (key == "holdout_fraction") c.holdout_fraction = parse_double(key, v);
  else if (key == "min_objects") c.min_objects = parse_ll(key, v);
  else unknown_key("dataset", key);
}

void apply_encoder(EncoderConfig& c, const std::string& key, const std::string& v) {
  if (key == "stage_depths") c.stage_depths = parse_ll_list(key, v);
  else if (key == "stage_widths") c.stage_widths = parse_ll_list(key, v);
  else if (key == "d") c.d = parse_ll(key, v);
  else if (key == "fuse_stem") c.fuse_stem = parse_bool(key, v);
  else unknown_key("encoder", key);
}

void apply_segmenter(SegmenterConfig& c, const std::string& key, const std::string& v) {
  if (key == "n_queries") c.n_queries = parse_ll(key, v);
  else if (key == "perceiver_layers") c.perceiver_layers = parse_ll(key, v);
  else if (key == "heads") c.heads = parse_ll(key, v);
  else if (key == "detach_features") c.detach_features = parse_bool(key, v);
  else if (key == "detach_in_logits") c.detach_in_logits = parse_bool(key, v);
  else if (key == "rope_base") c.rope_base = parse_double(key, v);
  else if (key == "chunk_len") c.chunk_len = parse_ll(key, v);
  else unknown_key("segmenter", key);
}

void apply_traj(TrajConfig& c, const std::string& key, const std::string& v) {
  if (key == "refine_layers") c.refine_layers = parse_ll(key, v);
  else if (key == "refine_heads") c.refine_heads = parse_ll(key, v);
  else if (key == "normalize_aggregation") c.normalize_aggregation = parse_bool(key, v);
  else if (key == "use_mask") c.use_mask = parse_bool(key, v);
  else if (key == "fourier_init") c.fourier_init = parse_bool(key, v);
  else unknown_key("traj", key);
}

void apply_loss(LossConfig& c, const std::string& key, const std::string& v) {
  if (key == "lambda_dice") c.lambda_dice = parse_double(key, v);
  else if (key == "lambda_focal") c.lambda_focal = parse_double(key, v);
  else if (key == "lambda_ce") c.lambda_ce = parse_double(key, v);
  else if (key == "focal_alpha") c.focal_alpha = parse_double(key, v);
  else if (key == "focal_gamma") c.focal_gamma = parse_double(key, v);
  else if (key == "dice_eps") c.dice_eps = parse_double(key, v);
  else if (key == "temperature") c.temperature = parse_double(key, v);
  else unknown_key("loss", key);
}

void apply_train(TrainConfig& c, const std::string& key, const std::string& v) {
  if (key == "steps") c.steps = parse_ll(key, v);
  else if (key == "batch_size") c.batch_size = parse_ll(key, v);
  else if (key == "learning_rate") c.learning_rate = parse_double(key, v);
  else if (key == "weight_decay") c.weight_decay = parse_double(key, v);
  else if (key == "warmup_steps") c.warmup_steps = parse_ll(key, v);
  else if (key == "seed") c.seed = parse_u64(key, v);
  else if (key == "n_choices") c.n_choices = parse_ll_list(key, v);
  else if (key == "joint") c.joint = parse_bool(key, v);
  else if (key == "eval_interval") c.eval_interval = parse_ll(key, v);
  else if (key == "threads") c.threads = parse_ll(key, v);
  else if (key == "detach_features") c.detach_features = parse_bool(key, v);
  else if (key == "fuse_stem") c.fuse_stem = parse_bool(key, v);
  else if (key == "use_dice") c.use_dice = parse_bool(key, v);
  else if (key == "use_focal") c.use_focal = parse_bool(key, v);
  else if (key == "use_ce") c.use_ce = parse_bool(key, v);
  else if (key == "use_mask") c.use_mask = parse_bool(key, v);
  else if (key == "fourier_init") c.fourier_init = parse_bool(key, v);
  else if (key == "perceiver_depth") c.perceiver_depth = parse_ll(key, v);
  else unknown_key("train", key);
}

}  // namespace

Config parse_config(const std::string& text) {
  Config c;
  std::string section;
  size_t pos = 0;
  long long lineno = 0;
  while (pos <= text.size()) {
    const size_t nl = text.find('\n', pos);
    const std::string raw = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw std::invalid_argument("config: malformed section header on line " + std::to_string(lineno));
      section = line.substr(1, line.size() - 2);
      if (section != "dataset" && section != "encoder" && section != "segmenter" && section != "traj" &&
          section != "loss" && section != "train")
        throw std::invalid_argument("config: unknown section [" + section + "]");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected 'key = value' on line " + std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("config: empty key on line " + std::to_string(lineno));
    if (section.empty()) throw std::invalid_argument("config: key '" + key + "' appears before any section header");
    if (section == "dataset") apply_dataset(c.dataset, key, value);
    else if (section == "encoder") apply_encoder(c.encoder, key, value);
    else if (section == "segmenter") apply_segmenter(c.segmenter, key, value);
    else if (section == "traj") apply_traj(c.traj, key, value);
    else if (section == "loss") apply_loss(c.loss, key, value);
    else apply_train(c.train, key, value);
  }
  return c;
}

std::string serialize_config(const Config& c) {
  using io::format_double;
  auto b = [](bool v) { return v ? std::string("true") : std::string("false"); };
  std::string out;
  out += "[dataset]\n";
  out += "videos = " + std::to_string(c.dataset.videos) + "\n";
  out += "width = " + std::to_string(c.dataset.width) + "\n";
  out += "height = " + std::to_string(c.dataset.height) + "\n";
  out += "frames = " + std::to_string(c.dataset.frames) + "\n";
  out += "shape_count_min = " + std::to_string(c.dataset.shape_count_min) + "\n";
  out += "shape_count_max = " + std::to_string(c.dataset.shape_count_max) + "\n";
  out += "background = " + c.dataset.background + "\n";
  out += "seed = " + std::to_string(c.dataset.seed) + "\n";
  out += "holdout_fraction = " + format_double(c.dataset.holdout_fraction) + "\n";
  out += "min_objects = " + std::to_string(c.dataset.min_objects) + "\n";
  out += "\n[encoder]\n";
  out += "stage_depths = " + join_ll(c.encoder.stage_depths) + "\n";
  out += "stage_widths = " + join_ll(c.encoder.stage_widths) + "\n";
  out += "d = " + std::to_string(c.encoder.d) + "\n";
  out += "fuse_stem = " + b(c.encoder.fuse_stem) + "\n";
  out += "\n[segmenter]\n";
  out += "n_queries = " + std::to_string(c.segmenter.n_queries) + "\n";
  out += "perceiver_layers = " + std::to_string(c.segmenter.perceiver_layers) + "\n";
  out += "heads = " + std::to_string(c.segmenter.heads) + "\n";
  out += "detach_features = " + b(c.segmenter.detach_features) + "\n";
  out += "detach_in_logits = " + b(c.segmenter.detach_in_logits) + "\n";
  out += "rope_base = " + format_double(c.segmenter.rope_base) + "\n";
  out += "chunk_len = " + std::to_string(c.segmenter.chunk_len) + "\n";
  out += "\n[traj]\n";
  out += "refine_layers = " + std::to_string(c.traj.refine_layers) + "\n";
  out += "refine_heads = " + std::to_string(c.traj.refine_heads) + "\n";
  out += "normalize_aggregation = " + b(c.traj.normalize_aggregation) + "\n";
  out += "use_mask = " + b(c.traj.use_mask) + "\n";
  out += "fourier_init = " + b(c.traj.fourier_init) + "\n";
  out += "\n[loss]\n";
  out += "lambda_dice = " + format_double(c.loss.lambda_dice) + "\n";
  out += "lambda_focal = " + format_double(c.loss.lambda_focal) + "\n";
  out += "lambda_ce = " + format_double(c.loss.lambda_ce) + "\n";
  out += "focal_alpha = " + format_double(c.loss.focal_alpha) + "\n";
  out += "focal_gamma = " + format_double(c.loss.focal_gamma) + "\n";
  out += "dice_eps = " + format_double(c.loss.dice_eps) + "\n";
  out += "temperature = " + format_double(c.loss.temperature) + "\n";
  out += "\n[train]\n";
  out += "steps = " + std::to_string(c.train.steps) + "\n";
  out += "batch_size = " + std::to_string(c.train.batch_size) + "\n";
  out += "learning_rate = " + format_double(c.train.learning_rate) + "\n";
  out += "weight_decay = " + format_double(c.train.weight_decay) + "\n";
  out += "warmup_steps = " + std::to_string(c.train.warmup_steps) + "\n";
  out += "seed = " + std::to_string(c.train.seed) + "\n";
  out += "n_choices = " + join_ll(c.train.n_choices) + "\n";
  out += "joint = " + b(c.train.joint) + "\n";
  out += "eval_interval = " + std::to_string(c.train.eval_interval) + "\n";
  out += "threads = " + std::to_string(c.train.threads) + "\n";
  if (c.train.detach_features) out += "detach_features = " + b(*c.train.detach_features) + "\n";
  if (c.train.fuse_stem) out += "fuse_stem = " + b(*c.train.fuse_stem) + "\n";
  if (c.train.use_dice) out += "use_dice = " + b(*c.train.use_dice) + "\n";
  if (c.train.use_focal) out += "use_focal = " + b(*c.train.use_focal) + "\n";
  if (c.train.use_ce) out += "use_ce = " + b(*c.train.use_ce) + "\n";
  if (c.train.use_mask) out += "use_mask = " + b(*c.train.use_mask) + "\n";
  if (c.train.fourier_init) out += "fourier_init = " + b(*c.train.fourier_init) + "\n";
  if (c.train.perceiver_depth) out += "perceiver_depth = " + std::to_string(*c.train.perceiver_depth) + "\n";
  return out;
}

Config load_config_file(const std::string& path) { return parse_config(io::read_text(path)); }

void save_config_file(const std::string& path, const Config& c) { io::write_text(path, serialize_config(c)); }

Config apply_overrides(Config c) {
  const TrainConfig& t = c.train;
  if (t.detach_features) {
    c.segmenter.detach_features = *t.detach_features;
    c.segmenter.detach_in_logits = *t.detach_features;
  }
  if (t.fuse_stem) c.encoder.fuse_stem = *t.fuse_stem;
  if (t.use_dice && !*t.use_dice) c.loss.lambda_dice = 0.0;
  if (t.use_focal && !*t.use_focal) c.loss.lambda_focal = 0.0;
  if (t.use_ce) {
    if (!*t.use_ce) c.loss.lambda_ce = 0.0;
    else if (c.loss.lambda_ce == 0.0) c.loss.lambda_ce = 1.0;
  }
  if (t.use_mask) c.traj.use_mask = *t.use_mask;
  if (t.fourier_init) c.traj.fourier_init = *t.fourier_init;
  if (t.perceiver_depth) c.segmenter.perceiver_layers = *t.perceiver_depth;
  return c;
}

void validate_config(const Config& c) {
  auto req = [](bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument("config: " + msg);
  };
  req(c.dataset.videos >= 1, "dataset.videos must be >= 1");
  req(c.dataset.width >= 16 && c.dataset.width % 16 == 0, "dataset.width must be a positive multiple of 16");
  req(c.dataset.height >= 16 && c.dataset.height % 16 == 0, "dataset.height must be a positive multiple of 16");
  req(c.dataset.frames >= 1, "dataset.frames must be >= 1");
  req(c.dataset.shape_count_min >= 1 && c.dataset.shape_count_min <= c.dataset.shape_count_max &&
          c.dataset.shape_count_max <= 8,
      "dataset shape counts must satisfy 1 <= min <= max <= 8");
  req(c.dataset.background == "flat" || c.dataset.background == "gradient" || c.dataset.background == "checker" ||
          c.dataset.background == "mixed",
      "dataset.background must be flat|gradient|checker|mixed");
  req(c.dataset.holdout_fraction >= 0.0 && c.dataset.holdout_fraction < 1.0,
      "dataset.holdout_fraction must be in [0, 1)");
  req(c.dataset.min_objects >= 0, "dataset.min_objects must be >= 0");

  req(c.encoder.stage_depths.size() == 3 && c.encoder.stage_widths.size() == 3,
      "encoder stages are fixed at three: stage_depths and stage_widths need three entries");
  for (long long v : c.encoder.stage_depths) req(v >= 1, "encoder.stage_depths entries must be >= 1");
  for (long long v : c.encoder.stage_widths) req(v >= 1, "encoder.stage_widths entries must be >= 1");
  req(c.encoder.d >= 2 && c.encoder.d % 2 == 0, "encoder.d must be even and >= 2");

  req(c.segmenter.n_queries >= 1, "segmenter.n_queries must be >= 1");
  req(c.segmenter.perceiver_layers >= 1, "segmenter.perceiver_layers must be >= 1");
  req(c.segmenter.heads >= 1 && c.encoder.d % c.segmenter.heads == 0,
      "segmenter.heads must divide encoder.d");
  req(c.segmenter.rope_base > 1.0, "segmenter.rope_base must exceed 1");
  req(c.segmenter.chunk_len >= 1, "segmenter.chunk_len must be >= 1");

  req(c.traj.refine_layers >= 1, "traj.refine_layers must be >= 1");
  req(c.traj.refine_heads >= 1 && c.encoder.d % c.traj.refine_heads == 0,
      "traj.refine_heads must divide encoder.d");

  req(c.loss.lambda_dice >= 0 && c.loss.lambda_focal >= 0 && c.loss.lambda_ce >= 0,
      "loss weights must be nonnegative");
  req(c.loss.focal_alpha >= 0 && c.loss.focal_alpha <= 1, "loss.focal_alpha must be in [0, 1]");
  req(c.loss.focal_gamma >= 0, "loss.focal_gamma must be >= 0");
  req(c.loss.dice_eps > 0, "loss.dice_eps must be positive");
  req(c.loss.temperature > 0, "loss.temperature must be positive");

  req(c.train.steps >= 1, "train.steps must be >= 1");
  req(c.train.batch_size >= 1, "train.batch_size must be >= 1");
  req(c.train.learning_rate > 0, "train.learning_rate must be positive");
  req(c.train.weight_decay >= 0, "train.weight_decay must be >= 0");
  req(c.train.warmup_steps >= 0, "train.warmup_steps must be >= 0");
  req(!c.train.n_choices.empty(), "train.n_choices must be nonempty");
  for (size_t i = 0; i < c.train.n_choices.size(); ++i) {
    const long long n = c.train.n_choices[i];
    req(n == 1 || n == 2 || n == 4, "train.n_choices entries must come from {1, 2, 4}");
    for (size_t j = 0; j < i; ++j) req(c.train.n_choices[j] != n, "train.n_choices entries must be distinct");
  }
  req(c.train.eval_interval >= 1, "train.eval_interval must be >= 1");
  req(c.train.threads >= 1, "train.threads must be >= 1");
  if (c.train.perceiver_depth) req(*c.train.perceiver_depth >= 1, "train.perceiver_depth must be >= 1");
}

}  // namespace trajtok
