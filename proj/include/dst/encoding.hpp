#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "dst/tensor.hpp"

namespace dst {

struct ImageGeometry {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 64;

  void validate() const {
    if (width < 1) throw ConfigError("geometry.width", "must be >= 1");
    if (height < 1) throw ConfigError("geometry.height", "must be >= 1");
    if (channels < 2 || channels % 2 != 0) throw ConfigError("geometry.channels", "must be even and >= 2");
  }
};

/// Axis-aligned box: top-left corner (u, v), size (w, h), in pixels.
struct BBox {
  double u = 0.0;
  double v = 0.0;
  double w = 0.0;
  double h = 0.0;

  double right() const { return u + w; }
  double bottom() const { return v + h; }
  double cx() const { return u + 0.5 * w; }
  double cy() const { return v + 0.5 * h; }

  friend bool operator==(const BBox&, const BBox&) = default;
};

inline double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.u, b.u);
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.v, b.v);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

struct RoISpec {
  std::size_t width = 7;
  std::size_t height = 7;

  std::size_t cells() const { return width * height; }
  void validate() const {
    if (width < 1) throw ConfigError("roi.width", "must be >= 1");
    if (height < 1) throw ConfigError("roi.height", "must be >= 1");
  }
};

/// C x H x W encoding of a whole image plane.
using EncodingGrid = Tensor;
/// C x H_R x W_R tensor: an RoI-resized encoding or an appearance feature patch.
using RoIPatch = Tensor;

namespace detail {
// Value of channel i given the per-family phases (in units of pi) at a point.
inline double channel_value(std::size_t i, std::size_t channels, double odd_phase, double even_phase) {
  const double offset = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(channels);
  if (i % 2 == 1) return -std::cos(odd_phase * std::numbers::pi + offset);
  return std::cos(even_phase * std::numbers::pi + offset);
}
}  // namespace detail

/// Dense per-pixel encoding. Odd channels sweep mostly along x, even channels
/// mostly along y; each channel carries a fixed phase offset 2*pi*i/C so the
/// C values of a pixel sample a full period.
inline EncodingGrid encode_image(const ImageGeometry& geom) {
  geom.validate();
  const double W = static_cast<double>(geom.width);
  const double H = static_cast<double>(geom.height);
  EncodingGrid grid({geom.channels, geom.height, geom.width});
  for (std::size_t y = 0; y < geom.height; ++y)
    for (std::size_t x = 0; x < geom.width; ++x) {
      const double xd = static_cast<double>(x), yd = static_cast<double>(y);
      const double odd = xd / W + yd / (W * H);
      const double even = yd / H + xd / (W * H);
      for (std::size_t i = 0; i < geom.channels; ++i)
        grid.at(i, y, x) = detail::channel_value(i, geom.channels, odd, even);
    }
  return grid;
}

/// Encoding restricted to a box and resampled onto the RoI grid. Evaluated
/// analytically at integer RoI coordinates x' in [0, W_R), y' in [0, H_R).
/// The box offset enters as a phase and the box size as a frequency, so the
/// patch reflects both where the box is and how large it is.
inline RoIPatch encode_roi(const BBox& box, const ImageGeometry& geom, const RoISpec& roi) {
  geom.validate();
  roi.validate();
  if (!(box.w > 0.0) || !(box.h > 0.0)) throw ShapeError("encode_roi: box width and height must be positive");
  const double W = static_cast<double>(geom.width);
  const double H = static_cast<double>(geom.height);
  const double WR = static_cast<double>(roi.width);
  const double HR = static_cast<double>(roi.height);
  const double odd_fx = box.w / (W * WR), odd_fy = box.h / (W * H * HR);
  const double even_fy = box.h / (H * HR), even_fx = box.w / (W * H * WR);
  const double odd_base = box.u / W + box.v / (W * H);
  const double even_base = box.v / H + box.u / (W * H);
  RoIPatch patch({geom.channels, roi.height, roi.width});
  for (std::size_t y = 0; y < roi.height; ++y)
    for (std::size_t x = 0; x < roi.width; ++x) {
      const double xd = static_cast<double>(x), yd = static_cast<double>(y);
      const double odd = odd_fx * xd + odd_fy * yd + odd_base;
      const double even = even_fy * yd + even_fx * xd + even_base;
      for (std::size_t i = 0; i < geom.channels; ++i)
        patch.at(i, y, x) = detail::channel_value(i, geom.channels, odd, even);
    }
  return patch;
}

/// Weighted sum of per-frame RoI encodings along one trajectory.
struct TrajectoryEncoding {
  Tensor tensor;
  std::size_t frame_count = 0;
  std::vector<double> weights;

  double weight_l1() const {
    double s = 0.0;
    for (double a : weights) s += std::abs(a);
    return s;
  }
};

/// Frame weights. `decay == 1` gives the default all-ones weighting; otherwise
/// frame t of T gets decay^(T-1-t) so the newest box has weight 1.
struct AlphaPolicy {
  double decay = 1.0;

  bool uniform() const { return decay == 1.0; }
  std::vector<double> weights(std::size_t count) const {
    std::vector<double> w(count, 1.0);
    if (!uniform())
      for (std::size_t t = 0; t < count; ++t) w[t] = std::pow(decay, static_cast<double>(count - 1 - t));
    return w;
  }
  void validate() const {
    if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("alpha.decay", "must lie in (0, 1]");
  }
};

inline TrajectoryEncoding accumulate_trajectory(const std::vector<RoIPatch>& patches,
                                                const std::vector<double>& alphas) {
  if (patches.empty()) throw ShapeError("accumulate_trajectory: need at least one patch");
  if (patches.size() != alphas.size())
    throw ShapeError("accumulate_trajectory: " + std::to_string(patches.size()) + " patches but " +
                     std::to_string(alphas.size()) + " weights");
  TrajectoryEncoding out{Tensor(patches.front().shape()), 0, {}};
  for (std::size_t t = 0; t < patches.size(); ++t) {
    patches[t].require_same_shape(out.tensor, "accumulate_trajectory");
    const double a = alphas[t];
    for (std::size_t k = 0; k < out.tensor.size(); ++k) out.tensor[k] += a * patches[t][k];
    out.weights.push_back(a);
    ++out.frame_count;
  }
  return out;
}

inline TrajectoryEncoding extend_trajectory(TrajectoryEncoding traj, const RoIPatch& new_patch, double alpha) {
  traj.tensor.require_same_shape(new_patch, "extend_trajectory");
  for (std::size_t k = 0; k < traj.tensor.size(); ++k) traj.tensor[k] += alpha * new_patch[k];
  traj.weights.push_back(alpha);
  ++traj.frame_count;
  return traj;
}

/// Removes the oldest contribution (the inverse of one extend at the front).
/// Only meaningful for weights that do not change as the trajectory grows.
inline TrajectoryEncoding retract_trajectory(TrajectoryEncoding traj, const RoIPatch& oldest_patch) {
  if (traj.frame_count == 0) throw ShapeError("retract_trajectory: trajectory is empty");
  traj.tensor.require_same_shape(oldest_patch, "retract_trajectory");
  const double alpha = traj.weights.front();
  for (std::size_t k = 0; k < traj.tensor.size(); ++k) traj.tensor[k] -= alpha * oldest_patch[k];
  traj.weights.erase(traj.weights.begin());
  --traj.frame_count;
  return traj;
}

/// Token-style sinusoidal encoding: entry 2k = sin(pos / 10000^(2k/dim)),
/// entry 2k+1 = cos of the same argument.
inline std::vector<double> classic_encoding(std::size_t position, std::size_t dim) {
  if (dim % 2 != 0) throw ShapeError("classic_encoding: dim must be even");
  std::vector<double> e(dim);
  for (std::size_t k = 0; k < dim / 2; ++k) {
    const double freq = std::pow(10000.0, static_cast<double>(2 * k) / static_cast<double>(dim));
    const double arg = static_cast<double>(position) / freq;
    e[2 * k] = std::sin(arg);
    e[2 * k + 1] = std::cos(arg);
  }
  return e;
}

}  // namespace dst
