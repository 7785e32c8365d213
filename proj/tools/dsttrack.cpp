// dsttrack: simulate, train, track, eval and ablate from the command line.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dst/dst.hpp"

namespace {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

Level log_level() {
  const char* env = std::getenv("DST_LOG_LEVEL");
  const std::string v = env ? env : "info";
  if (v == "error") return Level::error;
  if (v == "warn") return Level::warn;
  if (v == "debug") return Level::debug;
  return Level::info;
}

void log(Level level, const std::string& msg) {
  static const Level threshold = log_level();
  if (level > threshold) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << "\n";
}

dst::RunConfig config_or_default(const std::string& path) {
  return path.empty() ? dst::RunConfig{} : dst::load_run_config(path);
}

const dst::Video& pick(const std::vector<dst::Video>& videos, std::size_t index, const std::string& path) {
  if (index >= videos.size())
    throw dst::DataError("video index " + std::to_string(index) + " out of range: '" + path + "' holds " +
                         std::to_string(videos.size()) + " video(s)");
  return videos[index];
}

int cmd_simulate(const std::string& config_path, const std::string& out, std::size_t count) {
  const dst::RunConfig cfg = dst::load_run_config(config_path);
  if (count < 1) throw dst::ConfigError("count", "must be >= 1");
  const auto videos = dst::generate_videos(cfg.scenario, cfg.scenario.seed, count);
  dst::io::write_file(out, dst::serialize_videos(videos));
  dst::io::write_file(out + ".manifest.json", dst::video_manifest(videos).dump(2) + "\n");
  log(Level::info, "wrote " + std::to_string(count) + " video(s) to " + out);
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out,
              const std::string& resume, std::string loss_path) {
  const dst::RunConfig cfg = dst::load_run_config(config_path);
  auto videos = dst::deserialize_videos(dst::io::read_file(data));
  dst::Checkpoint ck;
  if (!resume.empty()) {
    ck = dst::deserialize_checkpoint(dst::io::read_file(resume));
    if (!(ck.stack.config == cfg.model)) throw dst::ConfigError("model", "differs from the resumed checkpoint's model");
    log(Level::info, "resuming after iteration " + std::to_string(ck.iterations_done));
  } else {
    ck.stack = dst::EmbeddingStack::initialize(cfg.model, cfg.seed);
    ck.seed = cfg.seed;
  }
  for (const auto& v : videos)
    if (v.config.channels != cfg.model.channels || v.config.roi.width != cfg.model.roi.width ||
        v.config.roi.height != cfg.model.roi.height)
      throw dst::DataError("video features do not match the model's channel count / RoI grid");
  const dst::ClipStream stream(std::move(videos), cfg.train.clip_length, ck.seed);
  if (loss_path.empty()) loss_path = out + ".loss.csv";
  std::vector<dst::LossRecord> trace;
  try {
    trace = dst::train(ck.stack, stream, cfg.train, ck.iterations_done, [&](const dst::LossRecord& r) {
      if (r.iteration % 100 == 0) log(Level::debug, "iteration " + std::to_string(r.iteration) + " l_asso " + std::to_string(r.l_asso));
    });
  } catch (const dst::TrainingAborted& e) {
    log(Level::error, e.what());
    ck.iterations_done = e.completed_iterations;
    dst::io::write_file(out + ".last-finite", dst::serialize_checkpoint(ck));
    throw;
  }
  ck.iterations_done += trace.size();
  dst::io::write_file(out, dst::serialize_checkpoint(ck));
  dst::io::write_file(loss_path, dst::loss_csv(trace));
  log(Level::info, "trained " + std::to_string(trace.size()) + " iteration(s); checkpoint " + out);
  return 0;
}

int cmd_track(const std::string& config_path, const std::string& checkpoint, const std::string& video_path,
              std::size_t index, const std::string& out) {
  const dst::RunConfig cfg = config_or_default(config_path);
  const dst::Checkpoint ck = dst::deserialize_checkpoint(dst::io::read_file(checkpoint));
  const auto videos = dst::deserialize_videos(dst::io::read_file(video_path));
  const dst::Video& v = pick(videos, index, video_path);
  dst::Tracker tracker(ck.stack, cfg.tracker, v.geometry());
  const dst::TrackOutput result = tracker.run(dst::tracker_input(v));
  dst::io::write_file(out + ".txt", dst::to_mot_text(result));
  dst::io::write_file(out + ".json", dst::to_track_json(result).dump(2) + "\n");
  log(Level::info, "tracked " + std::to_string(v.length()) + " frame(s) into " + std::to_string(tracker.tracks().size()) +
                       " track(s)");
  return 0;
}

int cmd_eval(const std::string& pred, const std::string& gt_path, std::size_t index, const std::string& out) {
  const dst::TrackOutput tracks = dst::from_mot_text(dst::io::read_file(pred));
  const auto videos = dst::deserialize_videos(dst::io::read_file(gt_path));
  const dst::Video& v = pick(videos, index, gt_path);
  const dst::EvalReport report = dst::evaluate(tracks, dst::ground_truth(v), dst::to_string(v.config.kind));
  if (report.no_pairs) log(Level::warn, "ground truth has no consecutive pairs; association accuracy reported as 1");
  dst::io::write_file(out + ".json", dst::to_json(report).dump(2) + "\n");
  dst::io::write_file(out + ".csv", std::string(dst::EvalReport::csv_header) + "\n" + report.csv_row() + "\n");
  std::cout << dst::EvalReport::csv_header << "\n" << report.csv_row() << "\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir) {
  const dst::RunConfig cfg = dst::load_run_config(config_path);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw dst::IoError("cannot create '" + out_dir + "': " + ec.message());
  const auto result = dst::run_ablation(cfg, [](const std::string& m) { log(Level::info, m); });
  const std::filesystem::path dir(out_dir);
  dst::io::write_file((dir / "config.json").string(), dst::dump_run_config(cfg));
  dst::io::write_file((dir / "ablation.csv").string(), dst::ablation_csv(result, cfg));
  dst::io::write_file((dir / "per_video.csv").string(), dst::per_video_csv(result));
  dst::io::write_file((dir / "comparisons.csv").string(), dst::comparison_csv(result));
  dst::io::write_file((dir / "ablation.svg").string(), dst::ablation_svg(result));
  std::cout << dst::ablation_csv(result, cfg) << dst::comparison_csv(result);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense spatio-temporal position encoding tracker: synthetic data, training, tracking, evaluation."};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 success, 2 invalid config or data, 3 numeric failure, 4 I/O error.\n"
             "Set DST_LOG_LEVEL to error, warn, info (default) or debug.");

  std::string config, out, data, resume, loss, checkpoint, video, pred, gt;
  std::size_t count = 1, index = 0;

  auto* sim = app.add_subcommand("simulate", "Generate labelled synthetic videos from the scenario section.");
  sim->add_option("--config", config, "Run config (JSON)")->required();
  sim->add_option("--out", out, "Output video file; a .manifest.json companion is written next to it")->required();
  sim->add_option("--count", count, "Number of videos, seeded scenario.seed + i")->capture_default_str();

  auto* tr = app.add_subcommand("train", "Train the association model on a video file.");
  tr->add_option("--config", config, "Run config (JSON)")->required();
  tr->add_option("--data", data, "Video file from `simulate`")->required();
  tr->add_option("--out", out, "Output checkpoint")->required();
  tr->add_option("--resume", resume, "Checkpoint to continue from");
  tr->add_option("--loss-csv", loss, "Loss trace (default: <out>.loss.csv)");

  auto* tk = app.add_subcommand("track", "Run the online tracker on one video.");
  tk->add_option("--config", config, "Run config (JSON); only the tracker section is used");
  tk->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  tk->add_option("--video", video, "Video file from `simulate`")->required();
  tk->add_option("--index", index, "Video index within the file")->capture_default_str();
  tk->add_option("--out", out, "Output prefix; writes <out>.txt (MOT text) and <out>.json")->required();

  auto* ev = app.add_subcommand("eval", "Score a track file against simulator ground truth.");
  ev->add_option("--pred", pred, "Track file (MOT text) from `track`")->required();
  ev->add_option("--gt", gt, "Video file holding the ground truth")->required();
  ev->add_option("--index", index, "Video index within the file")->capture_default_str();
  ev->add_option("--out", out, "Output prefix; writes <out>.json and <out>.csv")->required();

  auto* ab = app.add_subcommand("ablate", "Run the encoding and mask ablations and write tables and a chart.");
  ab->add_option("--config", config, "Run config (JSON); uses the ablation, model, train and tracker sections")
      ->required();
  ab->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*sim) return cmd_simulate(config, out, count);
    if (*tr) return cmd_train(config, data, out, resume, loss);
    if (*tk) return cmd_track(config, checkpoint, video, index, out);
    if (*ev) return cmd_eval(pred, gt, index, out);
    if (*ab) return cmd_ablate(config, out);
  } catch (const dst::ConfigError& e) {
    log(Level::error, std::string("invalid config: ") + e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    log(Level::error, std::string("invalid input: ") + e.what());
    return 2;
  } catch (const dst::NumericError& e) {
    log(Level::error, std::string("numeric failure: ") + e.what());
    return 3;
  } catch (const dst::IoError& e) {
    log(Level::error, std::string("I/O error: ") + e.what());
    return 4;
  }
  return 0;
}
