#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dst/association.hpp"
#include "dst/autograd.hpp"
#include "dst/encoding.hpp"
#include "dst/optim.hpp"
#include "dst/simulator.hpp"

namespace dst {

/// A window of consecutive frames with identity labels. Detections are stored
/// frame-major and `frame` is relative to the clip start.
struct ClipSample {
  std::size_t length = 0;
  ImageGeometry geometry{};
  std::vector<SyntheticDetection> detections;

  std::vector<std::size_t> on_frame(int f) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < detections.size(); ++i)
      if (detections[i].frame == f) idx.push_back(i);
    return idx;
  }
};

/// Visible detections of frames [start, start + length) as a clip.
inline ClipSample make_clip(const Video& video, std::size_t start, std::size_t length) {
  if (start + length > video.length()) throw DataError("make_clip: window exceeds the video");
  ClipSample clip{length, video.geometry(), {}};
  for (std::size_t f = start; f < start + length; ++f)
    for (const auto& d : video.frames[f]) {
      if (!d.visible) continue;
      SyntheticDetection c = d;
      c.frame = static_cast<int>(f - start);
      clip.detections.push_back(std::move(c));
    }
  return clip;
}

/// All stride-1 windows of length T. A video shorter than T yields one clip
/// covering the whole video.
inline std::vector<ClipSample> sample_clips(const Video& video, std::size_t T) {
  if (video.length() == 0) return {};
  if (T == 0) throw ConfigError("train.clip_length", "must be >= 1");
  if (video.length() <= T) return {make_clip(video, 0, video.length())};
  std::vector<ClipSample> clips;
  for (std::size_t s = 0; s + T <= video.length(); ++s) clips.push_back(make_clip(video, s, T));
  return clips;
}

inline void require_unique_identities(const ClipSample& clip) {
  std::set<std::pair<int, int>> seen;
  for (const auto& d : clip.detections)
    if (!seen.emplace(d.frame, d.identity).second)
      throw DataError("identity " + std::to_string(d.identity) + " appears twice on frame " +
                      std::to_string(d.frame));
}

/// Ground-truth clip association: N x (N + T). Columns 0..N-1 are detections,
/// column N + f is the sink of frame f. For every other frame, row i holds a
/// single 1: the detection sharing its identity, or that frame's sink.
inline Tensor build_gt_clip_matrix(const ClipSample& clip) {
  require_unique_identities(clip);
  const std::size_t N = clip.detections.size(), T = clip.length;
  Tensor S({N, N + T});
  for (std::size_t i = 0; i < N; ++i) {
    const auto& di = clip.detections[i];
    std::vector<char> matched(T, 0);
    for (std::size_t j = 0; j < N; ++j) {
      const auto& dj = clip.detections[j];
      if (dj.frame != di.frame && dj.identity == di.identity) {
        S.at(i, j) = 1.0;
        matched[static_cast<std::size_t>(dj.frame)] = 1;
      }
    }
    for (std::size_t f = 0; f < T; ++f)
      if (static_cast<int>(f) != di.frame && !matched[f]) S.at(i, N + f) = 1.0;
  }
  return S;
}

/// Column groups for the clip matrix: frame of every detection column and of
/// every sink column; a row never attends to its own frame.
inline ops::ColumnGroups clip_column_groups(const ClipSample& clip) {
  const std::size_t N = clip.detections.size();
  std::vector<int> groups(N + clip.length);
  for (std::size_t j = 0; j < N; ++j) groups[j] = clip.detections[j].frame;
  for (std::size_t f = 0; f < clip.length; ++f) groups[N + f] = static_cast<int>(f);
  std::vector<int> row_frame(N);
  for (std::size_t i = 0; i < N; ++i) row_frame[i] = clip.detections[i].frame;
  auto allowed = [groups, row_frame](std::size_t i, std::size_t j) { return groups[j] != row_frame[i]; };
  return {std::move(groups), std::move(allowed)};
}

/// One ground-truth trajectory restricted to frames before t.
struct TruncatedTrajectory {
  int identity = -1;                  // -1 for the empty trajectory
  std::vector<std::size_t> members;   // clip detection indices, frame order
};

/// Trajectory key set for frame t: index 0 is always the empty trajectory.
struct TrajectorySet {
  int frame = 0;
  std::vector<TruncatedTrajectory> trajectories;
  std::vector<std::size_t> detections;  // clip indices on frame t
  Tensor by_trajectory;                  // |D^t| x |T^t|, one-hot rows
  Tensor by_detection;                   // |T^t| x |D^t|, one-hot rows for present trajectories
};

inline TrajectorySet truncate_trajectories(const ClipSample& clip, int t) {
  if (t < 1 || static_cast<std::size_t>(t) >= clip.length)
    throw DataError("truncate_trajectories: frame " + std::to_string(t) + " outside [1, " +
                    std::to_string(clip.length) + ")");
  require_unique_identities(clip);
  TrajectorySet set;
  set.frame = t;
  set.trajectories.push_back({});
  std::map<int, std::size_t> slot;
  for (std::size_t i = 0; i < clip.detections.size(); ++i) {
    const auto& d = clip.detections[i];
    if (d.frame >= t) continue;
    auto [it, fresh] = slot.emplace(d.identity, set.trajectories.size());
    if (fresh) set.trajectories.push_back({d.identity, {}});
    set.trajectories[it->second].members.push_back(i);
  }
  for (auto& tr : set.trajectories)
    std::sort(tr.members.begin(), tr.members.end(),
              [&](std::size_t a, std::size_t b) { return clip.detections[a].frame < clip.detections[b].frame; });
  set.detections = clip.on_frame(t);
  const std::size_t m = set.detections.size(), k = set.trajectories.size();
  set.by_trajectory = Tensor({m, k});
  set.by_detection = Tensor({k, m});
  for (std::size_t j = 0; j < m; ++j) {
    const int id = clip.detections[set.detections[j]].identity;
    auto it = slot.find(id);
    if (it == slot.end()) {
      set.by_trajectory.at(j, 0) = 1.0;
    } else {
      set.by_trajectory.at(j, it->second) = 1.0;
      set.by_detection.at(it->second, j) = 1.0;
    }
  }
  return set;
}

/// (1/N^2) * sum (S - S_hat)^2 with N the row count.
inline double loss_clip(const Tensor& S, const Tensor& S_hat) {
  if (S.rank() != 2) throw ShapeError("loss_clip: expected matrices");
  Tape tape(false);
  return ops::mse_rows_squared(tape.constant(S_hat), S).value()[0];
}

/// -sum_t sum S^t log S_hat^t, probabilities floored at 1e-12.
inline double loss_det_traj(const std::vector<Tensor>& targets, const std::vector<Tensor>& predictions,
                            std::size_t* clamped = nullptr) {
  if (targets.size() != predictions.size()) throw ShapeError("loss_det_traj: frame count mismatch");
  Tape tape(false);
  double s = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t)
    s += ops::neg_log_likelihood(tape.constant(predictions[t]), targets[t], clamped).value()[0];
  return s;
}

/// RoI encoding of every clip detection (computed once per clip).
inline std::vector<RoIPatch> clip_encodings(const ClipSample& clip, const RoISpec& roi) {
  std::vector<RoIPatch> enc;
  enc.reserve(clip.detections.size());
  for (const auto& d : clip.detections) enc.push_back(encode_roi(d.box, clip.geometry, roi));
  return enc;
}

/// Forward pass of both association heads over one clip, recorded on `tape`.
struct ClipForward {
  Var clip_scores;  // N x (N + T)
  Var l_clip;
  Var l_det_traj;
  Var l_asso;
  std::vector<TrajectorySet> frames;
  std::vector<Var> by_trajectory;  // per entry of `frames`
  std::vector<Var> by_detection;
  std::size_t clamped = 0;
};

inline ClipForward forward_clip(Tape& tape, const EmbeddingStack& stack, const ClipSample& clip,
                                const AlphaPolicy& alpha) {
  const ModelConfig& cfg = stack.config;
  const std::size_t N = clip.detections.size(), T = clip.length, D = cfg.embed_dim;
  if (N == 0) throw DataError("forward_clip: clip has no detections");
  const bool dst = cfg.encoding == EncodingMode::dst;
  const std::vector<RoIPatch> enc = dst ? clip_encodings(clip, cfg.roi) : std::vector<RoIPatch>{};

  std::vector<EmbedItem> items(N);
  for (std::size_t i = 0; i < N; ++i)
    items[i] = {&clip.detections[i].appearance, dst ? &enc[i] : nullptr, &clip.detections[i].mask, i};
  Var emb = embed_batch(tape, stack, items);
  Var q = project_queries(tape, stack, emb);

  ClipForward out;
  std::vector<Var> key_parts{emb};
  for (std::size_t f = 0; f < T; ++f) key_parts.push_back(tape.param(stack.sink_token));
  Var k = project_keys(tape, stack, ops::concat_rows(key_parts));
  out.clip_scores = ops::grouped_softmax(attention_logits(q, k, D), clip_column_groups(clip));
  out.l_clip = ops::mse_rows_squared(out.clip_scores, build_gt_clip_matrix(clip));

  // Truncated trajectories for every frame, embedded in a single batch.
  std::vector<TrajectoryEncoding> traj_enc;
  std::vector<EmbedItem> traj_items;
  std::vector<std::vector<std::size_t>> traj_rows;  // per frame: batch row of each non-empty trajectory
  for (std::size_t t = 1; t < T; ++t) {
    TrajectorySet set = truncate_trajectories(clip, static_cast<int>(t));
    if (set.detections.empty()) continue;
    out.frames.push_back(std::move(set));
  }
  std::size_t total = 0;
  for (const auto& set : out.frames) total += set.trajectories.size() - 1;
  traj_enc.reserve(total);
  for (const auto& set : out.frames) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 1; r < set.trajectories.size(); ++r) {
      const auto& members = set.trajectories[r].members;
      const SyntheticDetection& last = clip.detections[members.back()];
      if (dst) {
        std::vector<RoIPatch> patches;
        for (std::size_t mi : members) patches.push_back(enc[mi]);
        traj_enc.push_back(accumulate_trajectory(patches, alpha.weights(patches.size())));
      } else {
        traj_enc.emplace_back();
      }
      rows.push_back(traj_items.size());
      traj_items.push_back({&last.appearance, dst ? &traj_enc.back().tensor : nullptr, &last.mask, r});
    }
    traj_rows.push_back(std::move(rows));
  }

  Var det_traj_total = tape.constant(Tensor({1}, {0.0}));
  if (!out.frames.empty()) {
    std::vector<Var> tk{tape.param(stack.null_token)};
    if (!traj_items.empty()) tk.push_back(embed_batch(tape, stack, traj_items));
    Var traj_keys = project_keys(tape, stack, ops::concat_rows(tk));
    std::vector<Var> terms;
    for (std::size_t fi = 0; fi < out.frames.size(); ++fi) {
      const auto& set = out.frames[fi];
      std::vector<std::size_t> key_rows{0};
      for (std::size_t r : traj_rows[fi]) key_rows.push_back(r + 1);
      Var keys = ops::select_rows(traj_keys, key_rows);
      Var queries = ops::select_rows(q, set.detections);
      Var logits = attention_logits(queries, keys, D);
      const std::size_t m = set.detections.size(), kt = key_rows.size();
      Var by_traj = ops::grouped_softmax(logits, {std::vector<int>(kt, 0), nullptr});
      Var by_det = ops::grouped_softmax(ops::transpose(logits), {std::vector<int>(m, 0), nullptr});
      out.by_trajectory.push_back(by_traj);
      out.by_detection.push_back(by_det);
      terms.push_back(ops::neg_log_likelihood(by_traj, set.by_trajectory, &out.clamped));
      terms.push_back(ops::neg_log_likelihood(by_det, set.by_detection, &out.clamped));
    }
    det_traj_total = ops::sum(ops::concat_rows([&] {
      std::vector<Var> rows;
      for (Var v : terms) rows.push_back(ops::reshape(v, {1, 1}));
      return rows;
    }()));
  }
  out.l_det_traj = det_traj_total;
  out.l_asso = ops::add(out.l_clip, out.l_det_traj);
  return out;
}

struct LossRecord {
  std::size_t iteration = 0;
  double l_clip = 0.0;
  double l_det_traj = 0.0;
  double l_asso = 0.0;
};

struct TrainConfig {
  std::size_t iterations = 2000;
  std::size_t clip_length = 16;
  OptimizerConfig optimizer{};
  AlphaPolicy alpha{};

  void validate() const {
    if (clip_length < 2) throw ConfigError("train.clip_length", "must be >= 2");
    optimizer.validate();
    alpha.validate();
  }
};

/// Deterministic clip stream over a fixed set of videos: the clip used at
/// iteration i depends only on (seed, i), so resumed runs see the same clips.
class ClipStream {
 public:
  ClipStream(std::vector<Video> videos, std::size_t clip_length, std::uint64_t seed)
      : videos_(std::move(videos)), length_(clip_length), seed_(seed) {
    if (videos_.empty()) throw DataError("clip stream needs at least one video");
  }

  ClipSample at(std::size_t iteration) const {
    std::mt19937_64 rng(detail::derive_seed(seed_, 7, iteration));
    for (int attempt = 0; attempt < 64; ++attempt) {
      const Video& v = videos_[rng() % videos_.size()];
      if (v.length() == 0) continue;
      const std::size_t T = std::min(length_, v.length());
      const std::size_t start = static_cast<std::size_t>(rng() % (v.length() - T + 1));
      ClipSample clip = make_clip(v, start, T);
      if (!clip.detections.empty()) return clip;
    }
    throw DataError("clip stream could not find a clip with detections");
  }

 private:
  std::vector<Video> videos_;
  std::size_t length_;
  std::uint64_t seed_;
};

/// Exception carrying how far training got; parameters hold the last finite state.
struct TrainingAborted : NumericError {
  TrainingAborted(const std::string& what, std::size_t completed)
      : NumericError(what), completed_iterations(completed) {}
  std::size_t completed_iterations;
};

/// Runs iterations [first_iteration, first_iteration + cfg.iterations) of
/// l_asso = l_clip + l_det_traj minimisation, one clip per step.
inline std::vector<LossRecord> train(EmbeddingStack& stack, const ClipStream& stream, const TrainConfig& cfg,
                                     std::size_t first_iteration = 0,
                                     const std::function<void(const LossRecord&)>& on_step = {}) {
  cfg.validate();
  std::vector<LossRecord> trace;
  trace.reserve(cfg.iterations);
  auto params = stack.parameters();
  for (Parameter* p : params) p->zero_grad();
  for (std::size_t it = first_iteration; it < first_iteration + cfg.iterations; ++it) {
    const ClipSample clip = stream.at(it);
    Tape tape;
    ClipForward fw = forward_clip(tape, stack, clip, cfg.alpha);
    LossRecord rec{it + 1, fw.l_clip.value()[0], fw.l_det_traj.value()[0], fw.l_asso.value()[0]};
    if (!std::isfinite(rec.l_asso))
      throw TrainingAborted("non-finite loss at iteration " + std::to_string(rec.iteration), it);
    tape.backward(fw.l_asso);
    try {
      adam_step(params, cfg.optimizer);
    } catch (const NumericError& e) {
      for (Parameter* p : params) p->zero_grad();
      throw TrainingAborted(e.what(), it);
    }
    trace.push_back(rec);
    if (on_step) on_step(rec);
  }
  return trace;
}

}  // namespace dst
