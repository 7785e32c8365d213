#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "dst/association.hpp"
#include "dst/encoding.hpp"

namespace dst {

enum class ScenarioKind { crossing, parallel, occlusion, random_walk };

inline const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::crossing: return "crossing";
    case ScenarioKind::parallel: return "parallel";
    case ScenarioKind::occlusion: return "occlusion";
    case ScenarioKind::random_walk: return "random-walk";
  }
  return "?";
}

inline ScenarioKind scenario_kind_from_string(const std::string& s) {
  if (s == "crossing") return ScenarioKind::crossing;
  if (s == "parallel") return ScenarioKind::parallel;
  if (s == "occlusion") return ScenarioKind::occlusion;
  if (s == "random-walk") return ScenarioKind::random_walk;
  throw ConfigError("scenario.kind", "unknown kind '" + s + "' (expected crossing|parallel|occlusion|random-walk)");
}

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::crossing;
  std::size_t width = 160;
  std::size_t height = 160;
  std::size_t targets = 2;
  double speed_min = 1.5;  // px / frame
  double speed_max = 3.0;
  double noise_sigma = 0.3;   // per-frame appearance noise
  double distinctness = 0.0;  // 0: one shared appearance, 1: fully distinct identities
  std::size_t frames = 48;
  std::uint64_t seed = 0;
  double box_w = 20.0;
  double box_h = 40.0;
  double size_jitter = 0.0;     // relative per-identity box size variation
  double lateral_offset = 8.0;  // crossing/occlusion: px between the two passing lanes
  double background_sigma = 0.5;
  double bleed = 1.0;  // weight of an overlapping neighbour's pattern in background cells
  std::size_t channels = 64;
  RoISpec roi{};

  void validate() const {
    if (width < 8) throw ConfigError("scenario.width", "must be >= 8");
    if (height < 8) throw ConfigError("scenario.height", "must be >= 8");
    if (targets < 1) throw ConfigError("scenario.targets", "must be >= 1");
    if (!(speed_min >= 0.0)) throw ConfigError("scenario.speed_min", "must be >= 0");
    if (!(speed_max >= speed_min)) throw ConfigError("scenario.speed_max", "must be >= speed_min");
    if (!(noise_sigma >= 0.0)) throw ConfigError("scenario.noise_sigma", "must be >= 0");
    if (!(distinctness >= 0.0 && distinctness <= 1.0)) throw ConfigError("scenario.distinctness", "must lie in [0, 1]");
    if (frames < 1) throw ConfigError("scenario.frames", "must be >= 1");
    if (!(box_w >= 1.0)) throw ConfigError("scenario.box_w", "must be >= 1");
    if (!(box_h >= 1.0)) throw ConfigError("scenario.box_h", "must be >= 1");
    if (!(size_jitter >= 0.0 && size_jitter < 1.0)) throw ConfigError("scenario.size_jitter", "must lie in [0, 1)");
    if (!(lateral_offset >= 0.0)) throw ConfigError("scenario.lateral_offset", "must be >= 0");
    if (!(background_sigma >= 0.0)) throw ConfigError("scenario.background_sigma", "must be >= 0");
    if (!(bleed >= 0.0)) throw ConfigError("scenario.bleed", "must be >= 0");
    if (channels < 2 || channels % 2 != 0) throw ConfigError("scenario.channels", "must be even and >= 2");
    roi.validate();
  }

  ImageGeometry geometry() const { return {width, height, channels}; }
};

/// One target state on one frame. Occluded targets keep their ground-truth box
/// but carry no features and are not handed to the tracker.
struct SyntheticDetection : Detection {
  int identity = 0;
  bool visible = true;
};

struct Video {
  ScenarioConfig config;
  std::vector<std::vector<SyntheticDetection>> frames;

  std::size_t length() const { return frames.size(); }
  ImageGeometry geometry() const { return config.geometry(); }

  std::vector<SyntheticDetection> visible(std::size_t f) const {
    std::vector<SyntheticDetection> out;
    for (const auto& d : frames[f])
      if (d.visible) out.push_back(d);
    return out;
  }
};

/// Inscribed-ellipse mask over the RoI grid: 1 for cells entirely inside the
/// ellipse, 0 for cells entirely outside, 0.5 for cells the boundary crosses.
/// Depends only on the RoI grid; the box argument is accepted for symmetry
/// with the other per-box operations.
inline AttentionMask elliptical_mask(const BBox& /*box*/, const RoISpec& roi) {
  roi.validate();
  const double a = 0.5 * static_cast<double>(roi.width), b = 0.5 * static_cast<double>(roi.height);
  auto r2 = [&](double x, double y) { return ((x - a) / a) * ((x - a) / a) + ((y - b) / b) * ((y - b) / b); };
  AttentionMask m{Tensor({roi.height, roi.width})};
  for (std::size_t y = 0; y < roi.height; ++y)
    for (std::size_t x = 0; x < roi.width; ++x) {
      const double x0 = static_cast<double>(x), y0 = static_cast<double>(y);
      const double nx = std::clamp(a, x0, x0 + 1.0), ny = std::clamp(b, y0, y0 + 1.0);
      const double near = r2(nx, ny);
      double far = 0.0;
      for (double cx : {x0, x0 + 1.0})
        for (double cy : {y0, y0 + 1.0}) far = std::max(far, r2(cx, cy));
      m.grid.at(y, x) = far <= 1.0 ? 1.0 : (near >= 1.0 ? 0.0 : 0.5);
    }
  return m;
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index);
}

inline double quantize(double x) { return std::round(x * 100.0) / 100.0; }

inline Tensor gaussian_patch(std::mt19937_64& rng, const ScenarioConfig& cfg, double sigma) {
  Tensor t({cfg.channels, cfg.roi.height, cfg.roi.width});
  if (sigma == 0.0) return t;
  std::normal_distribution<double> n(0.0, sigma);
  for (double& v : t.data()) v = n(rng);
  return t;
}

// Box centre per frame plus the identity's box size.
struct Kinematics {
  std::vector<double> cx, cy;
  double w = 0.0, h = 0.0;
};

inline std::vector<Kinematics> plan_motion(const ScenarioConfig& cfg, std::mt19937_64& rng) {
  const double W = static_cast<double>(cfg.width), H = static_cast<double>(cfg.height);
  const std::size_t K = cfg.targets, F = cfg.frames;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::vector<Kinematics> ks(K);
  for (auto& k : ks) {
    const double s = 1.0 + uni(-cfg.size_jitter, cfg.size_jitter);
    k.w = cfg.box_w * s;
    k.h = cfg.box_h * s;
    k.cx.resize(F);
    k.cy.resize(F);
  }
  const double mid = 0.5 * static_cast<double>(F - 1);
  switch (cfg.kind) {
    case ScenarioKind::crossing:
    case ScenarioKind::occlusion: {
      // Every target passes the common point at (fractional) frame tc, each on
      // its own lane shifted sideways by half the lateral offset.
      const double px = 0.5 * W + uni(-W / 8.0, W / 8.0);
      const double py = 0.5 * H + uni(-H / 8.0, H / 8.0);
      const double tc = mid + uni(-2.0, 2.0) + 0.5;
      const double theta0 = uni(0.0, 2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < K; ++i) {
        const double th = theta0 + 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(K) +
                          (K > 1 ? uni(-0.15, 0.15) : 0.0);
        const double dx = std::cos(th), dy = std::sin(th);
        const double ox = px - dy * 0.5 * cfg.lateral_offset, oy = py + dx * 0.5 * cfg.lateral_offset;
        const double v = uni(cfg.speed_min, cfg.speed_max);
        for (std::size_t f = 0; f < F; ++f) {
          const double t = static_cast<double>(f) - tc;
          ks[i].cx[f] = ox + v * t * dx;
          ks[i].cy[f] = oy + v * t * dy;
        }
      }
      break;
    }
    case ScenarioKind::parallel: {
      const double th = uni(0.0, 2.0 * std::numbers::pi);
      const double dx = std::cos(th), dy = std::sin(th);
      const double v = uni(cfg.speed_min, cfg.speed_max);
      const double gap = 1.2 * std::hypot(cfg.box_w, cfg.box_h);
      const double px = 0.5 * W, py = 0.5 * H;
      for (std::size_t i = 0; i < K; ++i) {
        const double lane = (static_cast<double>(i) - 0.5 * static_cast<double>(K - 1)) * gap;
        for (std::size_t f = 0; f < F; ++f) {
          const double t = static_cast<double>(f) - mid;
          ks[i].cx[f] = px - dy * lane + v * t * dx;
          ks[i].cy[f] = py + dx * lane + v * t * dy;
        }
      }
      break;
    }
    case ScenarioKind::random_walk: {
      std::normal_distribution<double> accel(0.0, 0.3);
      for (auto& k : ks) {
        const double mx = 0.5 * k.w, my = 0.5 * k.h;
        double x = uni(mx, std::max(mx, W - mx)), y = uni(my, std::max(my, H - my));
        const double th = uni(0.0, 2.0 * std::numbers::pi), v0 = uni(cfg.speed_min, cfg.speed_max);
        double vx = v0 * std::cos(th), vy = v0 * std::sin(th);
        for (std::size_t f = 0; f < F; ++f) {
          k.cx[f] = x;
          k.cy[f] = y;
          vx += accel(rng);
          vy += accel(rng);
          const double sp = std::hypot(vx, vy);
          if (sp > cfg.speed_max && sp > 0.0) {
            vx *= cfg.speed_max / sp;
            vy *= cfg.speed_max / sp;
          }
          x += vx;
          y += vy;
          if (x < mx || x > W - mx) {
            vx = -vx;
            x = std::clamp(x, mx, std::max(mx, W - mx));
          }
          if (y < my || y > H - my) {
            vy = -vy;
            y = std::clamp(y, my, std::max(my, H - my));
          }
        }
      }
      break;
    }
  }
  return ks;
}

}  // namespace detail

/// Deterministic labelled video. Appearance of identity k is
///   delta * own_pattern_k + (1 - delta) * shared_pattern + noise_sigma * N(0, 1)
/// inside the inscribed ellipse; cells outside it hold background noise plus
/// the pattern of the most-overlapping other target, weighted by `bleed`.
inline Video generate(const ScenarioConfig& cfg) {
  cfg.validate();
  Video video;
  video.config = cfg;
  std::mt19937_64 motion_rng(detail::derive_seed(cfg.seed, 1));
  const auto kin = detail::plan_motion(cfg, motion_rng);

  std::mt19937_64 shared_rng(detail::derive_seed(cfg.seed, 2));
  const Tensor shared = detail::gaussian_patch(shared_rng, cfg, 1.0);
  std::vector<Tensor> base;
  for (std::size_t k = 0; k < cfg.targets; ++k) {
    std::mt19937_64 id_rng(detail::derive_seed(cfg.seed, 3, k));
    base.push_back(detail::gaussian_patch(id_rng, cfg, 1.0) * cfg.distinctness + shared * (1.0 - cfg.distinctness));
  }

  const double W = static_cast<double>(cfg.width), H = static_cast<double>(cfg.height);
  const AttentionMask mask = elliptical_mask(BBox{}, cfg.roi);
  const std::size_t cells = cfg.roi.cells();
  video.frames.resize(cfg.frames);
  for (std::size_t f = 0; f < cfg.frames; ++f) {
    std::mt19937_64 frame_rng(detail::derive_seed(cfg.seed, 4, f));
    auto& out = video.frames[f];
    std::vector<std::size_t> ids;
    for (std::size_t k = 0; k < cfg.targets; ++k) {
      BBox b{detail::quantize(kin[k].cx[f] - 0.5 * kin[k].w), detail::quantize(kin[k].cy[f] - 0.5 * kin[k].h),
             detail::quantize(kin[k].w), detail::quantize(kin[k].h)};
      if (b.right() <= 0.0 || b.u >= W || b.bottom() <= 0.0 || b.v >= H) continue;  // out of view
      // Boxes within a frame are kept pairwise distinct so that detections can be
      // matched back to ground truth by (frame, box).
      for (bool clash = true; clash;) {
        clash = false;
        for (const auto& o : out)
          if (o.box == b) {
            b.u = detail::quantize(b.u + 0.01);
            clash = true;
          }
      }
      SyntheticDetection d;
      d.frame = static_cast<int>(f);
      d.identity = static_cast<int>(k);
      d.box = b;
      out.push_back(std::move(d));
      ids.push_back(k);
    }
    if (cfg.kind == ScenarioKind::occlusion) {
      // Lower identity = closer to the camera.
      for (auto& d : out)
        for (const auto& o : out)
          if (o.identity < d.identity && o.visible && iou(o.box, d.box) > 0.5) {
            d.visible = false;
            break;
          }
    }
    for (auto& d : out) {
      if (!d.visible) continue;
      const Tensor noise = detail::gaussian_patch(frame_rng, cfg, cfg.noise_sigma);
      const Tensor bg_noise = detail::gaussian_patch(frame_rng, cfg, cfg.background_sigma);
      const SyntheticDetection* neighbour = nullptr;
      double best = 0.0;
      for (const auto& o : out)
        if (&o != &d && iou(o.box, d.box) > best) {
          best = iou(o.box, d.box);
          neighbour = &o;
        }
      Tensor fg = base[static_cast<std::size_t>(d.identity)] + noise;
      Tensor bg = bg_noise;
      if (neighbour) bg += base[static_cast<std::size_t>(neighbour->identity)] * cfg.bleed;
      d.appearance = Tensor(fg.shape());
      for (std::size_t c = 0; c < cfg.channels; ++c)
        for (std::size_t p = 0; p < cells; ++p) {
          const double m = mask.grid[p];
          d.appearance[c * cells + p] = m * fg[c * cells + p] + (1.0 - m) * bg[c * cells + p];
        }
      d.mask = mask;
    }
    std::shuffle(out.begin(), out.end(), frame_rng);
  }
  return video;
}

}  // namespace dst
