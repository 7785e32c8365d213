// Acceptance suite: one PASS/FAIL line per criterion, optional report file.
//
//   dst_acceptance [--config configs/reference.json] [--smoke-config configs/smoke.json]
//                  [--cli path/to/dsttrack] [--work dir] [--report file] [--only 1,2,...]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "support/oracles.hpp"
#include "support/test_util.hpp"

using namespace dst;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  Outcome() = default;
  Outcome(bool p, std::string d, std::vector<std::string> i = {}) : pass(p), detail(std::move(d)), info(std::move(i)) {}
  bool pass = false;
  std::string detail;
  std::vector<std::string> info;
};

struct Options {
  std::string config = DST_SOURCE_DIR "/configs/reference.json";
  std::string smoke_config = DST_SOURCE_DIR "/configs/smoke.json";
  std::string cli = DST_CLI_PATH;
  std::string work = "acceptance_work";
  std::string report;
  std::vector<int> only;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) { return io::fmt(f, v); }

void progress(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

BBox random_box(std::mt19937_64& rng, double W, double H) {
  std::uniform_real_distribution<double> u(-0.2 * W, W), v(-0.2 * H, H), w(1.0, 0.5 * W), h(1.0, 0.5 * H);
  return {u(rng), v(rng), w(rng), h(rng)};
}

// 1 ---------------------------------------------------------------------------

Outcome encoding_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> side(4, 48), roi(1, 9), half(1, 32);
  double worst_image = 0.0, worst_roi = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const ImageGeometry geom{static_cast<std::size_t>(side(rng)), static_cast<std::size_t>(side(rng)),
                             static_cast<std::size_t>(2 * half(rng))};
    const int C = static_cast<int>(geom.channels);
    const auto g = encode_image(geom);
    for (std::size_t i = 0; i < geom.channels; ++i)
      for (std::size_t y = 0; y < geom.height; ++y)
        for (std::size_t x = 0; x < geom.width; ++x)
          worst_image = std::max(worst_image, std::abs(g.at(i, y, x) - oracle::image_value(x, y, static_cast<int>(i),
                                                                                           geom.width, geom.height, C)));
    const RoISpec spec{static_cast<std::size_t>(roi(rng)), static_cast<std::size_t>(roi(rng))};
    const BBox b = random_box(rng, geom.width, geom.height);
    const auto p = encode_roi(b, geom, spec);
    for (std::size_t i = 0; i < geom.channels; ++i)
      for (std::size_t y = 0; y < spec.height; ++y)
        for (std::size_t x = 0; x < spec.width; ++x)
          worst_roi = std::max(worst_roi, std::abs(p.at(i, y, x) - oracle::roi_value(b.u, b.v, b.w, b.h, x, y,
                                                                                     static_cast<int>(i), geom.width,
                                                                                     geom.height, spec.width,
                                                                                     spec.height, C)));
  }
  const double secs = seconds_since(t0);
  return {worst_image <= 1e-12 && worst_roi <= 1e-12 && secs < 1.0,
          "max |image - oracle| " + fmt("%.2e", worst_image) + ", max |roi - oracle| " + fmt("%.2e", worst_roi) +
              " over 10 geometries, " + fmt("%.3f", secs) + " s (limit 1 s)"};
}

// 2 ---------------------------------------------------------------------------

Outcome injectivity() {
  const auto t0 = std::chrono::steady_clock::now();
  const ImageGeometry geom{32, 32, 64};
  const auto g = encode_image(geom);
  const std::size_t P = geom.width * geom.height;
  // Pixel-major copy so each pair comparison reads contiguous memory.
  std::vector<double> rows(P * geom.channels);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t i = 0; i < geom.channels; ++i) rows[p * geom.channels + i] = g[i * P + p];
  double min_gap = INFINITY;
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t q = p + 1; q < P; ++q) {
      double gap = 0.0;
      for (std::size_t i = 0; i < geom.channels; ++i)
        gap = std::max(gap, std::abs(rows[p * geom.channels + i] - rows[q * geom.channels + i]));
      min_gap = std::min(min_gap, gap);
    }
  const double secs = seconds_since(t0);
  return {min_gap > 1e-6 && secs < 5.0,
          "min pairwise L-inf gap " + fmt("%.4e", min_gap) + " over " + std::to_string(P * (P - 1) / 2) +
              " pairs, " + fmt("%.3f", secs) + " s (limit 5 s)"};
}

// 3 ---------------------------------------------------------------------------

Outcome identity_roi_reduction() {
  double worst = 0.0;
  std::mt19937_64 rng(103);
  std::uniform_int_distribution<int> side(1, 40), half(1, 16);
  for (int trial = 0; trial < 10; ++trial) {
    const ImageGeometry geom{static_cast<std::size_t>(side(rng)), static_cast<std::size_t>(side(rng)),
                             static_cast<std::size_t>(2 * half(rng))};
    const auto roi =
        encode_roi({0.0, 0.0, double(geom.width), double(geom.height)}, geom, {geom.width, geom.height});
    worst = std::max(worst, max_abs_diff(roi, encode_image(geom)));
  }
  return {worst <= 1e-12, "max |roi(full image) - image| " + fmt("%.2e", worst) + " over 10 geometries"};
}

// 4 ---------------------------------------------------------------------------

double linearity_residual(const EmbeddingStack& s, const ImageGeometry& geom, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(1, 16);
  double worst = 0.0;
  for (int seq = 0; seq < 100; ++seq) {
    const int T = len(rng);
    std::vector<RoIPatch> patches;
    for (int t = 0; t <= T; ++t) patches.push_back(encode_roi(random_box(rng, geom.width, geom.height), geom, s.config.roi));
    const auto head = accumulate_trajectory({patches.begin(), patches.end() - 1}, std::vector<double>(T, 1.0));
    const auto full = extend_trajectory(head, patches.back(), 1.0);
    const Tensor r = linear_map_L(s, full.tensor) - linear_map_L(s, head.tensor) - linear_map_L(s, patches.back());
    for (double v : r.data()) worst = std::max(worst, std::abs(v));
  }
  return worst;
}

Outcome linearity(const RunConfig& cfg, const EmbeddingStack* trained) {
  std::mt19937_64 rng(104);
  const ImageGeometry geom{cfg.scenario.width, cfg.scenario.height, cfg.model.channels};
  const double r_random = linearity_residual(EmbeddingStack::initialize(cfg.model, 104), geom, rng);
  if (!trained) return {false, "no trained stack available (run criterion 8)"};
  const double r_trained = linearity_residual(*trained, geom, rng);
  const double moved = max_abs_diff(trained->l_map.value, EmbeddingStack::initialize(cfg.model, cfg.seed).l_map.value);
  return {r_random < 1e-9 && r_trained < 1e-9,
          "max residual " + fmt("%.2e", r_random) + " (random L), " + fmt("%.2e", r_trained) +
              " (trained L, moved " + fmt("%.3g", moved) + " from init) over 100 sequences each, T <= 16"};
}

// 5 ---------------------------------------------------------------------------

Outcome gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(105);
  // Three detections on two frames: identity 0 on both, identity 1 born on frame 1.
  ClipSample clip{2, {64, 64, 4}, {}};
  for (auto [frame, identity] : {std::pair{0, 0}, std::pair{1, 0}, std::pair{1, 1}}) {
    SyntheticDetection d;
    d.frame = frame;
    d.identity = identity;
    d.box = {10.0 + 3.0 * frame + 20.0 * identity, 10.0, 8.0, 12.0};
    d.appearance = dst::testing::random_tensor({4, 2, 3}, rng);
    d.mask = AttentionMask{dst::testing::random_tensor({2, 3}, rng, 0.0, 1.0)};
    clip.detections.push_back(std::move(d));
  }
  double worst = 0.0;
  std::string per_mode;
  for (auto mode : {EncodingMode::dst, EncodingMode::classic, EncodingMode::none}) {
    auto stack = EmbeddingStack::initialize(dst::testing::small_model(mode), 105);
    const double err = dst::testing::stack_gradient_error(
        stack, [&](Tape& tape) { return forward_clip(tape, stack, clip, {}).l_asso; }, 1e-5);
    worst = std::max(worst, err);
    per_mode += std::string(per_mode.empty() ? "" : ", ") + to_string(mode) + " " + fmt("%.2e", err);
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 30.0,
          "max relative error " + fmt("%.2e", worst) + " (" + per_mode + "), eps 1e-5, " + fmt("%.2f", secs) +
              " s (limit 30 s)"};
}

// 6 ---------------------------------------------------------------------------

Outcome hungarian_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(106);
  std::uniform_real_distribution<double> d(0.0, 10.0);
  auto random_cost = [&](std::size_t r, std::size_t c) {
    Tensor t({r, c});
    for (double& v : t.data()) v = d(rng);
    return t;
  };
  std::size_t mismatches = 0;
  double worst = 0.0;
  auto check = [&](const Tensor& c) {
    const auto a = hungarian(c);
    const double gap = std::abs(a.total_cost - oracle::brute_force_min_cost(c));
    worst = std::max(worst, gap);
    if (gap > 1e-9 || a.assigned() != std::min(c.dim(0), c.dim(1))) ++mismatches;
  };
  for (int trial = 0; trial < 1000; ++trial) check(random_cost(5, 5));
  for (int trial = 0; trial < 200; ++trial) check(random_cost(4, 6));
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 10.0,
          std::to_string(mismatches) + " mismatches in 1000 5x5 + 200 4x6, max cost gap " + fmt("%.1e", worst) + ", " +
              fmt("%.2f", secs) + " s (limit 10 s)"};
}

// 7 ---------------------------------------------------------------------------

Outcome softmax_validity(const RunConfig& cfg, const EmbeddingStack* trained) {
  std::vector<const EmbeddingStack*> stacks;
  const EmbeddingStack fresh = EmbeddingStack::initialize(cfg.model, 107);
  stacks.push_back(&fresh);
  if (trained) stacks.push_back(trained);
  double worst = 0.0;
  std::size_t matrices = 0;
  for (const EmbeddingStack* s : stacks)
    for (ScenarioKind kind : {ScenarioKind::crossing, ScenarioKind::occlusion, ScenarioKind::random_walk}) {
      ScenarioConfig sc = cfg.scenario;
      sc.kind = kind;
      sc.targets = kind == ScenarioKind::random_walk ? 5 : 2;
      sc.seed = 7000 + static_cast<std::uint64_t>(kind);
      const Video v = generate(sc);
      for (std::size_t start : {std::size_t{0}, v.length() / 2}) {
        const ClipSample clip = make_clip(v, start, std::min(cfg.train.clip_length, v.length() - start));
        Tape tape(false);
        const ClipForward fw = forward_clip(tape, *s, clip, cfg.train.alpha);
        const auto cg = clip_column_groups(clip);
        worst = std::max(worst, dst::testing::worst_group_sum_error(fw.clip_scores.value(), cg.group, cg.allowed));
        ++matrices;
        for (const auto* list : {&fw.by_trajectory, &fw.by_detection})
          for (const Var& m : *list) {
            worst = std::max(worst, dst::testing::worst_group_sum_error(m.value(), std::vector<int>(m.value().dim(1), 0)));
            ++matrices;
          }
      }
    }
  return {worst <= 1e-6, "max |row-group sum - 1| " + fmt("%.2e", worst) + " over " + std::to_string(matrices) +
                             " association matrices (fresh and trained stacks); unit suite checks the rest"};
}

// 8, 9 -----------------------------------------------------------------------------

const ArmComparison* find_comparison(const AblationResult& r, const std::string& better, const std::string& worse) {
  for (const auto& c : r.comparisons)
    if (c.better == better && c.worse == worse) return &c;
  return nullptr;
}

Outcome encoding_ablation(const RunConfig& cfg, const AblationResult& r) {
  const ArmResult* dst_arm = find_arm(r, "encoding", "dst");
  const ArmResult* none = find_arm(r, "encoding", "none");
  const ArmResult* classic = find_arm(r, "encoding", "classic");
  const ArmComparison* vs_none = find_comparison(r, "dst", "none");
  const ArmComparison* vs_classic = find_comparison(r, "dst", "classic");
  if (!dst_arm || !none || !classic || !vs_none || !vs_classic) return {false, "encoding arms missing"};
  const double m_dst = stats::mean(dst_arm->accuracies()), m_none = stats::mean(none->accuracies()),
               m_classic = stats::mean(classic->accuracies());
  double slowest = 0.0;
  for (const ArmResult* a : {dst_arm, none, classic}) slowest = std::max(slowest, a->train_seconds);
  const bool direction = m_dst > m_none && m_dst > m_classic && vs_none->test.p < 0.01 && vs_classic->test.p < 0.01;
  const bool magnitude = m_dst >= 0.95 && m_none <= 0.60;
  Outcome o{direction && magnitude && slowest <= 1200.0 && cfg.ablation.eval_videos >= 100,
            "accuracy dst " + fmt("%.4f", m_dst) + " none " + fmt("%.4f", m_none) + " classic " +
                fmt("%.4f", m_classic) + "; p(dst>none) " + fmt("%.3g", vs_none->test.p) + ", p(dst>classic) " +
                fmt("%.3g", vs_classic->test.p) + "; bounds dst>=0.95 none<=0.60; slowest arm " +
                fmt("%.0f", slowest) + " s (limit 1200 s); " + std::to_string(cfg.ablation.eval_videos) + " videos",
            {}};
  for (const ArmResult* a : {dst_arm, none, classic})
    o.info.push_back("arm " + a->spec.arm + ": final loss " + fmt("%.4f", a->final_loss) + ", id switches/video " +
                     fmt("%.3f", [&] {
                       double s = 0.0;
                       for (const auto& e : a->reports) s += static_cast<double>(e.id_switches);
                       return s / static_cast<double>(a->reports.size());
                     }()) +
                     ", train " + fmt("%.0f", a->train_seconds) + " s");
  return o;
}

Outcome mask_ablation(const RunConfig& cfg, const AblationResult& r) {
  const ArmResult* with = find_arm(r, "mask", "with_mask");
  const ArmResult* without = find_arm(r, "mask", "without_mask");
  const ArmComparison* c = find_comparison(r, "with_mask", "without_mask");
  if (!with || !without || !c) return {false, "mask arms missing"};
  const double mw = stats::mean(with->accuracies()), mo = stats::mean(without->accuracies());
  return {mw >= mo && c->test.p < 0.05 && cfg.ablation.eval_videos >= 100,
          "accuracy with mask " + fmt("%.4f", mw) + ", without " + fmt("%.4f", mo) + "; p " + fmt("%.3g", c->test.p) +
              " (limit 0.05); scenario " + to_string(cfg.ablation.mask_scenario.kind) + ", " +
              std::to_string(cfg.ablation.mask_scenario.targets) + " targets, distinctness " +
              fmt("%.2f", cfg.ablation.mask_scenario.distinctness),
          {}};
}

// 10 ---------------------------------------------------------------------------

Outcome end_to_end_determinism(const Options& opt) {
  const fs::path root = fs::absolute(opt.work) / "determinism";
  fs::remove_all(root);
  const std::vector<std::string> outputs{"videos.bin",         "videos.bin.manifest.json", "model.ckpt",
                                         "model.ckpt.loss.csv", "tracks.txt",               "tracks.json",
                                         "eval.json",           "eval.csv"};
  for (const char* run : {"a", "b"}) {
    const fs::path dir = root / run;
    fs::create_directories(dir);
    const std::string q = "\"" + opt.cli + "\"", cfg = " --config \"" + opt.smoke_config + "\"";
    const std::string d = dir.string() + "/";
    const std::vector<std::string> cmds{
        q + " simulate" + cfg + " --out " + d + "videos.bin",
        q + " train" + cfg + " --data " + d + "videos.bin --out " + d + "model.ckpt",
        q + " track" + cfg + " --checkpoint " + d + "model.ckpt --video " + d + "videos.bin --out " + d + "tracks",
        q + " eval --pred " + d + "tracks.txt --gt " + d + "videos.bin --out " + d + "eval"};
    for (const auto& c : cmds) {
      const int rc = std::system((c + " > " + d + "stdout.txt 2>&1").c_str());
      if (rc != 0) return {false, "command failed (" + std::to_string(rc) + "): " + c};
    }
  }
  std::size_t identical = 0;
  std::string differing;
  for (const auto& f : outputs) {
    const std::string a = io::read_file((root / "a" / f).string()), b = io::read_file((root / "b" / f).string());
    if (a == b && !a.empty())
      ++identical;
    else
      differing += " " + f;
  }
  return {identical == outputs.size(),
          std::to_string(identical) + "/" + std::to_string(outputs.size()) +
              " stage outputs byte-identical across two simulate -> train -> track -> eval runs" +
              (differing.empty() ? "" : "; differing:" + differing)};
}

// 11 ---------------------------------------------------------------------------

Outcome unified_representation(const RunConfig& cfg) {
  std::mt19937_64 rng(111);
  std::size_t identical = 0;
  for (int draw = 0; draw < 100; ++draw) {
    const auto s = EmbeddingStack::initialize(cfg.model, 1000 + static_cast<std::uint64_t>(draw));
    const Shape shape{cfg.model.channels, cfg.model.roi.height, cfg.model.roi.width};
    const Tensor appearance = dst::testing::random_tensor(shape, rng);
    const RoIPatch enc = encode_roi(random_box(rng, cfg.scenario.width, cfg.scenario.height),
                                    {cfg.scenario.width, cfg.scenario.height, cfg.model.channels}, cfg.model.roi);
    const AttentionMask mask{dst::testing::random_tensor({cfg.model.roi.height, cfg.model.roi.width}, rng, 0.0, 1.0)};
    const auto a = embed_trajectory(accumulate_trajectory({enc}, {1.0}), appearance, mask, s);
    const auto b = embed_detection(appearance, enc, mask, s);
    if (a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0) ++identical;
  }
  return {identical == 100, std::to_string(identical) + "/100 parameter draws bitwise identical"};
}

// Informational: the long crossing video from the tracker examples.
std::string long_crossing_info(const RunConfig& cfg, const EmbeddingStack& stack) {
  std::size_t exact = 0;
  const std::size_t n = 10;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ScenarioConfig sc = cfg.ablation.encoding_scenario;
    sc.frames = 100;
    sc.seed = 900000 + i;
    const Video v = generate(sc);
    Tracker tracker(stack, cfg.tracker, v.geometry());
    const auto report = evaluate(tracker.run(tracker_input(v)), ground_truth(v));
    acc += report.association_accuracy;
    if (report.idf1 == 1.0) ++exact;
  }
  return "100-frame crossing videos with exact identity recovery: " + std::to_string(exact) + "/" + std::to_string(n) +
         ", mean association accuracy " + fmt("%.4f", acc / static_cast<double>(n));
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  CLI::App app{"Acceptance criteria for the DST tracker."};
  app.add_option("--config", opt.config, "Reference run config for the ablation criteria")->capture_default_str();
  app.add_option("--smoke-config", opt.smoke_config, "Small run config for the end-to-end determinism criterion")
      ->capture_default_str();
  app.add_option("--cli", opt.cli, "dsttrack executable")->capture_default_str();
  app.add_option("--work", opt.work, "Scratch directory")->capture_default_str();
  app.add_option("--report", opt.report, "Also write the result lines to this file");
  app.add_option("--only", opt.only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::set<int> only(opt.only.begin(), opt.only.end());
  auto wanted = [&](int k) { return only.empty() || only.count(k) > 0; };

  const RunConfig cfg = load_run_config(opt.config);
  const auto t_start = std::chrono::steady_clock::now();

  std::map<int, std::pair<std::string, Outcome>> results;
  auto run = [&](int k, const std::string& name, const std::function<Outcome()>& f) {
    if (!wanted(k)) return;
    progress("criterion " + std::to_string(k) + ": " + name);
    results[k] = {name, f()};
  };

  // The ablation runs first: criteria 4 and 7 reuse its trained DST stack.
  AblationResult ablation;
  const EmbeddingStack* trained = nullptr;
  if (wanted(8) || wanted(9) || wanted(4) || wanted(7)) {
    RunConfig ab = cfg;
    ab.ablation.run_encoding = wanted(8) || wanted(4) || wanted(7);
    ab.ablation.run_mask = wanted(9);
    ablation = run_ablation(ab, progress);
    if (const ArmResult* a = find_arm(ablation, "encoding", "dst")) trained = &a->stack;
  }

  run(1, "encoding exactness", encoding_exactness);
  run(2, "injectivity", injectivity);
  run(3, "identity-RoI reduction", identity_roi_reduction);
  run(4, "linearity of L", [&] { return linearity(cfg, trained); });
  run(5, "gradient oracle", gradient_oracle);
  run(6, "Hungarian correctness", hungarian_correctness);
  run(7, "softmax validity", [&] { return softmax_validity(cfg, trained); });
  run(8, "encoding ablation direction", [&] { return encoding_ablation(cfg, ablation); });
  run(9, "mask ablation direction", [&] { return mask_ablation(cfg, ablation); });
  run(10, "end-to-end determinism", [&] { return end_to_end_determinism(opt); });
  run(11, "unified representation", [&] { return unified_representation(cfg); });

  std::ostringstream out;
  std::size_t failed = 0;
  for (const auto& [k, entry] : results) {
    const auto& [name, o] = entry;
    if (!o.pass) ++failed;
    out << (o.pass ? "PASS" : "FAIL") << " " << k << " " << name << ": " << o.detail << "\n";
    for (const auto& line : o.info) out << "     " << k << " " << line << "\n";
  }
  if (trained) out << "INFO " << long_crossing_info(cfg, *trained) << "\n";
  out << (failed ? "FAILED " : "ALL PASSED ") << results.size() - failed << "/" << results.size() << " criteria in "
      << fmt("%.0f", seconds_since(t_start)) << " s\n";
  std::cout << out.str();
  if (!opt.report.empty()) io::write_file(opt.report, "config " + opt.config + "\n" + out.str());
  return failed ? 1 : 0;
}
