#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "dst/association.hpp"
#include "dst/simulator.hpp"
#include "dst/tracker.hpp"
#include "dst/training.hpp"

namespace dst {

using Json = nlohmann::ordered_json;

/// Settings for `ablate`: the encoding arms (none | classic | dst) run on
/// `encoding_scenario`, the mask arms (with | without) on `mask_scenario`.
/// Training videos use seeds train_seed + i, evaluation videos eval_seed + i.
struct AblationConfig {
  ScenarioConfig encoding_scenario{};
  ScenarioConfig mask_scenario = [] {
    ScenarioConfig s;
    s.kind = ScenarioKind::random_walk;
    s.targets = 6;
    s.distinctness = 0.5;
    return s;
  }();
  std::size_t train_videos = 64;
  std::uint64_t train_seed = 100000;
  std::size_t eval_videos = 100;
  std::uint64_t eval_seed = 0;
  bool run_encoding = true;
  bool run_mask = true;

  void validate() const {
    encoding_scenario.validate();
    mask_scenario.validate();
    if (train_videos < 1) throw ConfigError("ablation.train_videos", "must be >= 1");
    if (eval_videos < 2) throw ConfigError("ablation.eval_videos", "must be >= 2");
    const auto overlap = [](std::uint64_t a, std::size_t na, std::uint64_t b, std::size_t nb) {
      return a < b + nb && b < a + na;
    };
    if (overlap(train_seed, train_videos, eval_seed, eval_videos))
      throw ConfigError("ablation.eval_seed", "evaluation seeds overlap the training seeds");
  }
};

/// Everything a CLI run needs. `seed` drives model initialisation and the
/// training clip stream; `scenario.seed` drives video generation.
struct RunConfig {
  std::uint64_t seed = 0;
  ScenarioConfig scenario{};
  ModelConfig model{};
  TrainConfig train{};
  TrackerConfig tracker{};
  AblationConfig ablation{};

  void validate() const {
    scenario.validate();
    model.validate();
    train.validate();
    tracker.validate();
    ablation.validate();
    if (model.channels != scenario.channels)
      throw ConfigError("model.channels", "must equal scenario.channels");
    if (model.roi.width != scenario.roi.width || model.roi.height != scenario.roi.height)
      throw ConfigError("model.roi", "must equal scenario.roi");
  }
};

namespace detail {

// Reads `key` into `out` if present; records the key as consumed.
template <class T>
void read_field(const Json& j, const std::string& section, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(section + "." + key, "has the wrong type");
  }
}

inline void reject_unknown(const Json& j, const std::string& section, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw ConfigError(section, "must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* name : known) ok = ok || k == name;
    if (!ok) throw ConfigError(section + "." + k, "unknown key");
  }
}

}  // namespace detail

inline Json to_json(const RoISpec& r) { return {{"width", r.width}, {"height", r.height}}; }

inline RoISpec roi_from_json(const Json& j, const std::string& section) {
  detail::reject_unknown(j, section, {"width", "height"});
  RoISpec r;
  detail::read_field(j, section, "width", r.width);
  detail::read_field(j, section, "height", r.height);
  return r;
}

inline Json to_json(const ScenarioConfig& s) {
  return {{"kind", to_string(s.kind)},
          {"width", s.width},
          {"height", s.height},
          {"targets", s.targets},
          {"speed_min", s.speed_min},
          {"speed_max", s.speed_max},
          {"noise_sigma", s.noise_sigma},
          {"distinctness", s.distinctness},
          {"frames", s.frames},
          {"seed", s.seed},
          {"box_w", s.box_w},
          {"box_h", s.box_h},
          {"size_jitter", s.size_jitter},
          {"lateral_offset", s.lateral_offset},
          {"background_sigma", s.background_sigma},
          {"bleed", s.bleed},
          {"channels", s.channels},
          {"roi", to_json(s.roi)}};
}

inline ScenarioConfig scenario_from_json(const Json& j, const std::string& section = "scenario") {
  detail::reject_unknown(j, section,
                         {"kind", "width", "height", "targets", "speed_min", "speed_max", "noise_sigma", "distinctness",
                          "frames", "seed", "box_w", "box_h", "size_jitter", "lateral_offset", "background_sigma",
                          "bleed", "channels", "roi"});
  ScenarioConfig s;
  std::string kind = to_string(s.kind);
  detail::read_field(j, section, "kind", kind);
  try {
    s.kind = scenario_kind_from_string(kind);
  } catch (const ConfigError& e) {
    throw ConfigError(section + ".kind", e.what());
  }
  // Counts are read as signed so that negative values are reported, not wrapped.
  auto count = [&](const char* key, std::size_t& out) {
    if (!j.contains(key)) return;
    long long v = 0;
    detail::read_field(j, section, key, v);
    if (v < 0) throw ConfigError(section + "." + key, "must be >= 0");
    out = static_cast<std::size_t>(v);
  };
  count("width", s.width);
  count("height", s.height);
  count("targets", s.targets);
  count("frames", s.frames);
  count("channels", s.channels);
  detail::read_field(j, section, "speed_min", s.speed_min);
  detail::read_field(j, section, "speed_max", s.speed_max);
  detail::read_field(j, section, "noise_sigma", s.noise_sigma);
  detail::read_field(j, section, "distinctness", s.distinctness);
  detail::read_field(j, section, "seed", s.seed);
  detail::read_field(j, section, "box_w", s.box_w);
  detail::read_field(j, section, "box_h", s.box_h);
  detail::read_field(j, section, "size_jitter", s.size_jitter);
  detail::read_field(j, section, "lateral_offset", s.lateral_offset);
  detail::read_field(j, section, "background_sigma", s.background_sigma);
  detail::read_field(j, section, "bleed", s.bleed);
  if (j.contains("roi")) s.roi = roi_from_json(j.at("roi"), section + ".roi");
  try {
    s.validate();
  } catch (const ConfigError& e) {
    // Re-root the field name under this section.
    const std::string f = e.field();
    const std::string leaf = f.rfind("scenario.", 0) == 0 ? f.substr(9) : f;
    throw ConfigError(section + "." + leaf, std::string(e.what()).substr(f.size() + 2));
  }
  return s;
}

inline Json to_json(const ModelConfig& m) {
  return {{"channels", m.channels},   {"roi", to_json(m.roi)},         {"embed_dim", m.embed_dim},
          {"encoding", to_string(m.encoding)}, {"use_mask", m.use_mask}, {"l_init_noise", m.l_init_noise}};
}

inline ModelConfig model_from_json(const Json& j) {
  detail::reject_unknown(j, "model", {"channels", "roi", "embed_dim", "encoding", "use_mask", "l_init_noise"});
  ModelConfig m;
  detail::read_field(j, "model", "channels", m.channels);
  if (j.contains("roi")) m.roi = roi_from_json(j.at("roi"), "model.roi");
  detail::read_field(j, "model", "embed_dim", m.embed_dim);
  std::string enc = to_string(m.encoding);
  detail::read_field(j, "model", "encoding", enc);
  m.encoding = encoding_mode_from_string(enc);
  detail::read_field(j, "model", "use_mask", m.use_mask);
  detail::read_field(j, "model", "l_init_noise", m.l_init_noise);
  m.validate();
  return m;
}

inline Json to_json(const OptimizerConfig& o) {
  return {{"learning_rate", o.learning_rate},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"epsilon", o.epsilon},
          {"weight_decay", o.weight_decay}};
}

inline OptimizerConfig optimizer_from_json(const Json& j) {
  detail::reject_unknown(j, "optimizer", {"learning_rate", "beta1", "beta2", "epsilon", "weight_decay"});
  OptimizerConfig o;
  detail::read_field(j, "optimizer", "learning_rate", o.learning_rate);
  detail::read_field(j, "optimizer", "beta1", o.beta1);
  detail::read_field(j, "optimizer", "beta2", o.beta2);
  detail::read_field(j, "optimizer", "epsilon", o.epsilon);
  detail::read_field(j, "optimizer", "weight_decay", o.weight_decay);
  return o;
}

inline Json to_json(const AlphaPolicy& a) { return {{"decay", a.decay}}; }

inline AlphaPolicy alpha_from_json(const Json& j, const std::string& section) {
  detail::reject_unknown(j, section, {"decay"});
  AlphaPolicy a;
  detail::read_field(j, section, "decay", a.decay);
  return a;
}

inline Json to_json(const TrainConfig& t) {
  return {{"iterations", t.iterations},
          {"clip_length", t.clip_length},
          {"optimizer", to_json(t.optimizer)},
          {"alpha", to_json(t.alpha)}};
}

inline TrainConfig train_from_json(const Json& j) {
  detail::reject_unknown(j, "train", {"iterations", "clip_length", "optimizer", "alpha"});
  TrainConfig t;
  detail::read_field(j, "train", "iterations", t.iterations);
  detail::read_field(j, "train", "clip_length", t.clip_length);
  if (j.contains("optimizer")) t.optimizer = optimizer_from_json(j.at("optimizer"));
  if (j.contains("alpha")) t.alpha = alpha_from_json(j.at("alpha"), "train.alpha");
  t.validate();
  return t;
}

inline Json to_json(const TrackerConfig& t) {
  return {{"window", t.window}, {"birth_threshold", t.birth_threshold}, {"alpha", to_json(t.alpha)}};
}

inline TrackerConfig tracker_from_json(const Json& j) {
  detail::reject_unknown(j, "tracker", {"window", "birth_threshold", "alpha"});
  TrackerConfig t;
  detail::read_field(j, "tracker", "window", t.window);
  detail::read_field(j, "tracker", "birth_threshold", t.birth_threshold);
  if (j.contains("alpha")) t.alpha = alpha_from_json(j.at("alpha"), "tracker.alpha");
  t.validate();
  return t;
}

inline Json to_json(const AblationConfig& a) {
  return {{"encoding_scenario", to_json(a.encoding_scenario)},
          {"mask_scenario", to_json(a.mask_scenario)},
          {"train_videos", a.train_videos},
          {"train_seed", a.train_seed},
          {"eval_videos", a.eval_videos},
          {"eval_seed", a.eval_seed},
          {"run_encoding", a.run_encoding},
          {"run_mask", a.run_mask}};
}

inline AblationConfig ablation_from_json(const Json& j) {
  detail::reject_unknown(j, "ablation",
                         {"encoding_scenario", "mask_scenario", "train_videos", "train_seed", "eval_videos",
                          "eval_seed", "run_encoding", "run_mask"});
  AblationConfig a;
  if (j.contains("encoding_scenario"))
    a.encoding_scenario = scenario_from_json(j.at("encoding_scenario"), "ablation.encoding_scenario");
  if (j.contains("mask_scenario")) a.mask_scenario = scenario_from_json(j.at("mask_scenario"), "ablation.mask_scenario");
  detail::read_field(j, "ablation", "train_videos", a.train_videos);
  detail::read_field(j, "ablation", "train_seed", a.train_seed);
  detail::read_field(j, "ablation", "eval_videos", a.eval_videos);
  detail::read_field(j, "ablation", "eval_seed", a.eval_seed);
  detail::read_field(j, "ablation", "run_encoding", a.run_encoding);
  detail::read_field(j, "ablation", "run_mask", a.run_mask);
  a.validate();
  return a;
}

inline Json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"scenario", to_json(c.scenario)},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"tracker", to_json(c.tracker)},
          {"ablation", to_json(c.ablation)}};
}

inline RunConfig run_config_from_json(const Json& j) {
  detail::reject_unknown(j, "config", {"seed", "scenario", "model", "train", "tracker", "ablation"});
  RunConfig c;
  detail::read_field(j, "config", "seed", c.seed);
  if (j.contains("scenario")) c.scenario = scenario_from_json(j.at("scenario"));
  if (j.contains("model")) c.model = model_from_json(j.at("model"));
  if (j.contains("train")) c.train = train_from_json(j.at("train"));
  if (j.contains("tracker")) c.tracker = tracker_from_json(j.at("tracker"));
  if (j.contains("ablation")) c.ablation = ablation_from_json(j.at("ablation"));
  c.validate();
  return c;
}

inline RunConfig parse_run_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config", std::string("not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

inline std::string dump_run_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

}  // namespace dst
