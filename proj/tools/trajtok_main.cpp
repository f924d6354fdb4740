#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trajtok/config.hpp"
#include "trajtok/io.hpp"
#include "trajtok/metrics.hpp"
#include "trajtok/pipeline.hpp"
#include "trajtok/selftest.hpp"
#include "trajtok/synthetic.hpp"
#include "trajtok/training.hpp"

namespace fs = std::filesystem;
using namespace trajtok;

namespace {

Config config_for_run(const std::string& path) {
  Config cfg = apply_overrides(load_config_file(path));
  validate_config(cfg);
  return cfg;
}

struct LoadedModel {
  Config cfg;
  TrajTokModel model;
};

LoadedModel model_from_checkpoint(const std::string& ckpt) {
  const io::Checkpoint c = io::load_checkpoint(ckpt);
  LoadedModel out{apply_overrides(parse_config(c.config_text)), {}};
  validate_config(out.cfg);
  out.model = init_model(out.cfg);
  load_model_params(out.model, c);
  return out;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
  const Config cfg = config_for_run(config_path);
  const std::vector<synthetic::LabeledVideo> videos = synthetic::generate_dataset(cfg.dataset);
  synthetic::save_dataset(out_dir, videos);
  std::cout << "wrote " << videos.size() << " videos (" << cfg.dataset.width << "x"
            << cfg.dataset.height << ", " << cfg.dataset.frames << " frames) to " << out_dir
            << "\n";
  return 0;
}

// the split is a pure function of (count, fraction, dataset seed), so
// training and evaluation recover the same holdout without a split file
std::vector<synthetic::LabeledVideo> pick(const std::vector<synthetic::LabeledVideo>& all,
                                          const std::vector<long long>& idx) {
  std::vector<synthetic::LabeledVideo> out;
  out.reserve(idx.size());
  for (long long i : idx) out.push_back(all[static_cast<size_t>(i)]);
  return out;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& ckpt_dir, bool joint) {
  Config cfg = apply_overrides(load_config_file(config_path));
  cfg.train.joint = joint;
  validate_config(cfg);

  const std::vector<synthetic::LabeledVideo> all = synthetic::load_dataset(data_dir);
  const synthetic::SplitIndices split = synthetic::split_indices(
      static_cast<long long>(all.size()), cfg.dataset.holdout_fraction, cfg.dataset.seed);
  const std::vector<synthetic::LabeledVideo> train_set = pick(all, split.train);
  const std::vector<synthetic::LabeledVideo> val_set = pick(all, split.holdout);

  TrainState state = init_train_state(cfg);
  std::string log;
  TrainRun run{};
  double first_loss = 0.0;
  // segmented loop so long runs report progress; the log bytes are identical
  // to one uninterrupted run because every draw is addressed by step
  const long long report = 50;
  for (long long stop = report; state.step < state.cfg.train.steps; stop += report) {
    const bool first = state.step == 0;
    run = train_loop(state, train_set, val_set, log, stop);
    if (first) first_loss = run.first_total;
    std::cerr << "step=" << state.step << "/" << state.cfg.train.steps
              << " loss=" << io::format_double(run.last_total) << "\n";
  }

  io::save_checkpoint(ckpt_dir, train_checkpoint(state));
  io::write_text((fs::path(ckpt_dir) / "metrics.log").string(), log);
  std::cout << "trained " << state.step << " steps on " << train_set.size() << " videos; loss "
            << io::format_double(first_loss) << " -> " << io::format_double(run.last_total)
            << "\ncheckpoint: " << ckpt_dir << "\n";
  return 0;
}

int cmd_tokenize(const std::string& ckpt, const std::string& video_path,
                 const std::string& out_dir, long long n, long long chunk) {
  LoadedModel lm = model_from_checkpoint(ckpt);
  if (chunk > 0) lm.cfg.segmenter.chunk_len = chunk;
  const Tensor video = io::read_tensor_f32(video_path);
  if (video.rank() != 4 || video.dim(3) != 3)
    throw std::runtime_error("tokenize: video tensor must be [frames, height, width, 3], got " +
                             shape_str(video.shape()));

  const TokenizeResult res = tokenize(video, lm.cfg, lm.model, n);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);

  std::string origin = "# token rows: chunk, segmenter query, sub-token, empty-region flag\n";
  long long frame_off = 0, row = 0;
  for (size_t c = 0; c < res.chunks.size(); ++c) {
    const ChunkResult& ch = res.chunks[c];
    io::write_tensor_f64((dir / ("chunk_" + std::to_string(c) + "_tokens.ttk")).string(),
                         ch.tokens.tokens);
    for (const TokenOrigin& o : ch.tokens.origin) {
      origin += "row=" + std::to_string(row++) + " chunk=" + std::to_string(o.chunk) +
                " query=" + std::to_string(o.query) + " sub=" + std::to_string(o.sub) +
                " empty=" + std::to_string(o.empty ? 1 : 0) + "\n";
    }
    // one PGM per frame: pixel value = winning query, spread over the gray range
    const HardMasks& hard = ch.seg.hard;
    const long long h = ch.features.h, w = ch.features.w, p = hard.positions;
    const long long span = hard.n_q > 1 ? hard.n_q - 1 : 1;
    for (long long t = 0; t < ch.features.frames; ++t) {
      std::vector<std::uint8_t> img(static_cast<size_t>(h * w), 0);
      for (long long s = 0; s < h * w; ++s) {
        for (long long k = 0; k < hard.n_q; ++k) {
          if (hard.one_hot[static_cast<size_t>(k * p + t * h * w + s)]) {
            img[static_cast<size_t>(s)] = static_cast<std::uint8_t>((k * 255) / span);
            break;
          }
        }
      }
      io::write_pgm((dir / ("mask_f" + std::to_string(frame_off + t) + ".pgm")).string(), h, w, img);
    }
    frame_off += ch.features.frames;
  }
  io::write_text((dir / "origin.txt").string(), origin);
  std::cout << "wrote " << res.chunks.size() << " chunk(s), " << row << " token rows, "
            << frame_off << " mask frames to " << out_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& subset) {
  const LoadedModel lm = model_from_checkpoint(ckpt);
  const std::vector<synthetic::LabeledVideo> all = synthetic::load_dataset(data_dir);
  std::vector<synthetic::LabeledVideo> chosen;
  if (subset == "all") {
    chosen = all;
  } else {
    const synthetic::SplitIndices split = synthetic::split_indices(
        static_cast<long long>(all.size()), lm.cfg.dataset.holdout_fraction, lm.cfg.dataset.seed);
    chosen = pick(all, subset == "train" ? split.train : split.holdout);
  }
  const metrics::EvalReport rep = metrics::evaluate(chosen, lm.cfg, lm.model, 1);
  std::cout << rep.text() << rep.csv_header() << rep.csv_row();
  return 0;
}

bool parse_frames(const std::string& arg, std::vector<long long>& out) {
  size_t pos = 0;
  while (pos <= arg.size()) {
    const size_t comma = std::min(arg.find(',', pos), arg.size());
    const std::string item = arg.substr(pos, comma - pos);
    size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
      return false;
    }
    if (used != item.size() || v < 1) return false;
    out.push_back(v);
    pos = comma + 1;
  }
  return true;
}

int cmd_flops(const std::string& config_path, const std::vector<long long>& frames) {
  const Config cfg = config_for_run(config_path);
  std::cout << metrics::flops_csv(cfg, frames, static_cast<double>(cfg.segmenter.n_queries), 4.0,
                                  {});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trajectory tokenizer for videos: turns a clip into per-object trajectory tokens"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_path, ckpt_path, video_path;
  std::string subset = "holdout";
  std::string frames_arg = "8,16,32,64";
  long long n = 1, chunk = 0;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a labeled synthetic video dataset");
  gen->add_option("--config", config_path, "config file")->required();
  gen->add_option("--out", out_path, "output dataset directory")->required();

  CLI::App* seg = app.add_subcommand("train-seg", "train with the segmentation objective");
  CLI::App* joint = app.add_subcommand("train-joint", "train segmentation plus the contrastive objective");
  for (CLI::App* t : {seg, joint}) {
    t->add_option("--config", config_path, "config file")->required();
    t->add_option("--data", data_dir, "dataset directory from gen-data")->required();
    t->add_option("--out", out_path, "checkpoint directory to write")->required();
  }

  CLI::App* tok = app.add_subcommand("tokenize", "tokenize one video with a trained checkpoint");
  tok->add_option("--ckpt", ckpt_path, "checkpoint directory")->required();
  tok->add_option("--video", video_path, "pixel tensor file [frames, height, width, 3]")->required();
  tok->add_option("--out", out_path, "output directory")->required();
  tok->add_option("--n", n, "sub-tokens per trajectory (1, 2, or 4)");
  tok->add_option("--chunk", chunk, "override chunk length");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("--ckpt", ckpt_path, "checkpoint directory")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--split", subset, "holdout | train | all")
      ->check(CLI::IsMember({"holdout", "train", "all"}));

  CLI::App* fl = app.add_subcommand("flops", "print the frames-vs-FLOPs comparison CSV");
  fl->add_option("--config", config_path, "config file")->required();
  fl->add_option("--frames", frames_arg, "comma-separated frame counts");

  CLI::App* self = app.add_subcommand("selftest", "gradient checks and invariant suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the usage error
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_path);
    if (seg->parsed()) return cmd_train(config_path, data_dir, out_path, false);
    if (joint->parsed()) return cmd_train(config_path, data_dir, out_path, true);
    if (tok->parsed()) {
      if (n != 1 && n != 2 && n != 4) {
        std::cerr << "tokenize: --n must be 1, 2, or 4\n";
        return 2;
      }
      return cmd_tokenize(ckpt_path, video_path, out_path, n, chunk);
    }
    if (ev->parsed()) return cmd_eval(ckpt_path, data_dir, subset);
    if (fl->parsed()) {
      std::vector<long long> frames;
      if (!parse_frames(frames_arg, frames)) {
        std::cerr << "flops: --frames must be comma-separated positive integers, got '"
                  << frames_arg << "'\n";
        return 2;
      }
      return cmd_flops(config_path, frames);
    }
    if (self->parsed()) return selftest::run(std::cout) == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
