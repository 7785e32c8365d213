#pragma once

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "dst/config.hpp"
#include "dst/io.hpp"
#include "dst/metrics.hpp"
#include "dst/stats.hpp"
#include "dst/tracker.hpp"
#include "dst/training.hpp"

namespace dst {

struct ArmSpec {
  std::string experiment;  // "encoding" or "mask"
  std::string arm;
  ModelConfig model;
  ScenarioConfig scenario;
};

struct ArmResult {
  ArmSpec spec;
  double final_loss = 0.0;  // mean l_asso over the last 10% of iterations
  double train_seconds = 0.0;
  std::vector<std::uint64_t> video_seeds;
  std::vector<EvalReport> reports;
  EmbeddingStack stack;  // trained weights

  std::vector<double> accuracies() const {
    std::vector<double> a;
    for (const auto& r : reports) a.push_back(r.association_accuracy);
    return a;
  }
};

struct ArmComparison {
  std::string experiment, better, worse;
  stats::TestResult test;
};

struct AblationResult {
  std::vector<ArmResult> arms;
  std::vector<ArmComparison> comparisons;
};

inline std::vector<Video> generate_videos(ScenarioConfig base, std::uint64_t first_seed, std::size_t count) {
  std::vector<Video> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    base.seed = first_seed + i;
    out.push_back(generate(base));
  }
  return out;
}

inline std::vector<ArmSpec> ablation_arms(const RunConfig& cfg) {
  std::vector<ArmSpec> arms;
  if (cfg.ablation.run_encoding)
    for (EncodingMode m : {EncodingMode::none, EncodingMode::classic, EncodingMode::dst}) {
      ModelConfig mc = cfg.model;
      mc.encoding = m;
      arms.push_back({"encoding", to_string(m), mc, cfg.ablation.encoding_scenario});
    }
  if (cfg.ablation.run_mask)
    for (bool use : {true, false}) {
      ModelConfig mc = cfg.model;
      mc.encoding = EncodingMode::dst;
      mc.use_mask = use;
      arms.push_back({"mask", use ? "with_mask" : "without_mask", mc, cfg.ablation.mask_scenario});
    }
  return arms;
}

/// Trains one arm from the shared seed and evaluates it on the shared
/// evaluation videos.
inline ArmResult run_arm(const ArmSpec& spec, const RunConfig& cfg,
                         const std::function<void(const std::string&)>& log = {}) {
  ArmResult res{spec, 0.0, 0.0, {}, {}, {}};
  const AblationConfig& ab = cfg.ablation;
  EmbeddingStack stack = EmbeddingStack::initialize(spec.model, cfg.seed);
  ClipStream stream(generate_videos(spec.scenario, ab.train_seed, ab.train_videos), cfg.train.clip_length, cfg.seed);
  const auto t0 = std::chrono::steady_clock::now();
  const auto trace = train(stack, stream, cfg.train);
  res.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!trace.empty()) {
    const std::size_t tail = std::max<std::size_t>(1, trace.size() / 10);
    double s = 0.0;
    for (std::size_t i = trace.size() - tail; i < trace.size(); ++i) s += trace[i].l_asso;
    res.final_loss = s / static_cast<double>(tail);
  }
  if (log) log(spec.experiment + "/" + spec.arm + ": trained in " + io::fmt("%.1f", res.train_seconds) + " s");
  ScenarioConfig sc = spec.scenario;
  for (std::size_t i = 0; i < ab.eval_videos; ++i) {
    sc.seed = ab.eval_seed + i;
    const Video v = generate(sc);
    Tracker tracker(stack, cfg.tracker, v.geometry());
    res.reports.push_back(evaluate(tracker.run(tracker_input(v)), ground_truth(v), to_string(sc.kind)));
    res.video_seeds.push_back(sc.seed);
  }
  if (log) log(spec.experiment + "/" + spec.arm + ": mean association accuracy " +
               io::fmt("%.4f", stats::mean(res.accuracies())));
  res.stack = std::move(stack);
  return res;
}

inline const ArmResult* find_arm(const AblationResult& r, const std::string& experiment, const std::string& arm) {
  for (const auto& a : r.arms)
    if (a.spec.experiment == experiment && a.spec.arm == arm) return &a;
  return nullptr;
}

inline AblationResult run_ablation(const RunConfig& cfg, const std::function<void(const std::string&)>& log = {}) {
  cfg.validate();
  AblationResult out;
  for (const auto& spec : ablation_arms(cfg)) out.arms.push_back(run_arm(spec, cfg, log));
  auto compare = [&](const char* exp, const char* better, const char* worse) {
    const ArmResult* a = find_arm(out, exp, better);
    const ArmResult* b = find_arm(out, exp, worse);
    if (a && b) out.comparisons.push_back({exp, better, worse, stats::paired_t_greater(a->accuracies(), b->accuracies())});
  };
  compare("encoding", "dst", "none");
  compare("encoding", "dst", "classic");
  compare("mask", "with_mask", "without_mask");
  return out;
}

// --- reporting --------------------------------------------------------------------

inline constexpr const char* kAblationCsvHeader =
    "experiment,arm,encoding,use_mask,scenario,iterations,final_loss,eval_videos,association_accuracy_mean,"
    "association_accuracy_sd,id_switches_mean,idf1_mean";

inline std::string ablation_csv(const AblationResult& r, const RunConfig& cfg) {
  std::string s = std::string(kAblationCsvHeader) + "\n";
  char line[512];
  for (const auto& a : r.arms) {
    const auto acc = a.accuracies();
    double sw = 0.0, f1 = 0.0;
    for (const auto& e : a.reports) {
      sw += static_cast<double>(e.id_switches);
      f1 += e.idf1;
    }
    const double n = static_cast<double>(a.reports.size());
    std::snprintf(line, sizeof line, "%s,%s,%s,%d,%s,%zu,%.6f,%zu,%.6f,%.6f,%.4f,%.6f\n", a.spec.experiment.c_str(),
                  a.spec.arm.c_str(), to_string(a.spec.model.encoding), a.spec.model.use_mask ? 1 : 0,
                  to_string(a.spec.scenario.kind), cfg.train.iterations, a.final_loss, a.reports.size(),
                  stats::mean(acc), acc.size() > 1 ? std::sqrt(stats::variance(acc)) : 0.0, sw / n, f1 / n);
    s += line;
  }
  return s;
}

inline constexpr const char* kPerVideoCsvHeader = "experiment,arm,video_seed,association_accuracy,id_switches,idf1";

inline std::string per_video_csv(const AblationResult& r) {
  std::string s = std::string(kPerVideoCsvHeader) + "\n";
  char line[256];
  for (const auto& a : r.arms)
    for (std::size_t i = 0; i < a.reports.size(); ++i) {
      std::snprintf(line, sizeof line, "%s,%s,%llu,%.6f,%zu,%.6f\n", a.spec.experiment.c_str(), a.spec.arm.c_str(),
                    static_cast<unsigned long long>(a.video_seeds[i]), a.reports[i].association_accuracy,
                    a.reports[i].id_switches, a.reports[i].idf1);
      s += line;
    }
  return s;
}

inline constexpr const char* kComparisonCsvHeader = "experiment,better,worse,mean_difference,t,dof,p_one_sided";

inline std::string comparison_csv(const AblationResult& r) {
  std::string s = std::string(kComparisonCsvHeader) + "\n";
  char line[256];
  for (const auto& c : r.comparisons) {
    std::snprintf(line, sizeof line, "%s,%s,%s,%.6f,%.6f,%.0f,%.6g\n", c.experiment.c_str(), c.better.c_str(),
                  c.worse.c_str(), c.test.mean_difference, c.test.t, c.test.dof, c.test.p);
    s += line;
  }
  return s;
}

/// Bar chart of mean association accuracy per arm with a one-sd whisker.
inline std::string ablation_svg(const AblationResult& r) {
  const double bar = 60.0, gap = 30.0, left = 60.0, top = 30.0, plot_h = 240.0;
  const double width = left + static_cast<double>(r.arms.size()) * (bar + gap) + gap;
  const double height = top + plot_h + 70.0;
  std::string s;
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" font-family=\"sans-serif\" "
                "font-size=\"11\">\n",
                width, height);
  s += buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%.0f\" y=\"18\" font-size=\"13\">association accuracy by arm</text>\n", left);
  s += buf;
  for (int k = 0; k <= 4; ++k) {
    const double v = 0.25 * k, y = top + plot_h * (1.0 - v);
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.0f\" y1=\"%.1f\" x2=\"%.0f\" y2=\"%.1f\" stroke=\"#ccc\"/>"
                  "<text x=\"%.0f\" y=\"%.1f\" text-anchor=\"end\">%.2f</text>\n",
                  left, y, width - gap / 2, y, left - 6, y + 4, v);
    s += buf;
  }
  double x = left + gap;
  for (const auto& a : r.arms) {
    const auto acc = a.accuracies();
    const double m = stats::mean(acc), sd = acc.size() > 1 ? std::sqrt(stats::variance(acc)) : 0.0;
    const double y = top + plot_h * (1.0 - m);
    const char* colour = a.spec.experiment == "encoding" ? "#4a78b5" : "#c2703d";
    std::snprintf(buf, sizeof buf, "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.0f\" height=\"%.1f\" fill=\"%s\"/>\n", x, y, bar,
                  top + plot_h - y, colour);
    s += buf;
    const double lo = top + plot_h * (1.0 - std::max(0.0, m - sd)), hi = top + plot_h * (1.0 - std::min(1.0, m + sd));
    std::snprintf(buf, sizeof buf, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#222\"/>\n",
                  x + bar / 2, lo, x + bar / 2, hi);
    s += buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%.3f</text>"
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%s</text>"
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" fill=\"#666\">%s</text>\n",
                  x + bar / 2, y - 4, m, x + bar / 2, top + plot_h + 16, a.spec.arm.c_str(), x + bar / 2,
                  top + plot_h + 30, a.spec.experiment.c_str());
    s += buf;
    x += bar + gap;
  }
  s += "</svg>\n";
  return s;
}

}  // namespace dst
