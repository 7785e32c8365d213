#pragma once

#include <algorithm>
#include <cstddef>
#include <deque>
#include <limits>
#include <tuple>
#include <vector>

#include "dst/association.hpp"
#include "dst/encoding.hpp"
#include "dst/hungarian.hpp"
#include "dst/simulator.hpp"

namespace dst {

struct TrackerConfig {
  std::size_t window = 16;
  double birth_threshold = 0.3;
  AlphaPolicy alpha{};

  void validate() const {
    if (window < 2) throw ConfigError("tracker.window", "must be >= 2");
    if (!(birth_threshold > 0.0 && birth_threshold < 1.0))
      throw ConfigError("tracker.birth_threshold", "must lie in (0, 1)");
    alpha.validate();
  }
};

struct TrackState {
  int id = 0;
  TrajectoryEncoding encoding;  // over the full box history
  RoIPatch snapshot;
  AttentionMask mask;
  std::vector<std::pair<int, BBox>> history;  // (frame, box), strictly increasing frame
  std::deque<RoIPatch> recent;                 // RoI encodings of the newest boxes, at most T - 1
  bool active = true;

  int last_frame() const { return history.back().first; }
};

struct TrackRecord {
  int frame = 0;
  int id = 0;
  BBox box{};
  double score = 1.0;  // association score that linked the box; 1 for the first box of a track
};

struct TrackOutput {
  std::vector<TrackRecord> records;  // sorted by (frame, id)
};

/// Online association over a stride-1 window of T frames.
///
/// Track encodings fed to the model sum only the newest T - 1 boxes, the
/// largest trajectory length the model meets during training.
class Tracker {
 public:
  Tracker(const EmbeddingStack& stack, TrackerConfig cfg, ImageGeometry geometry)
      : stack_(stack), cfg_(std::move(cfg)), geometry_(geometry) {
    cfg_.validate();
    stack_.config.validate();
    geometry_.validate();
    if (geometry_.channels != stack_.config.channels)
      throw ConfigError("tracker.geometry", "image channel count differs from the model's");
  }

  const std::vector<TrackState>& tracks() const { return tracks_; }
  const std::deque<std::vector<Detection>>& window() const { return window_; }

  /// Links the first clip (up to T frames) with detection-detection attention,
  /// greedily frame by frame.
  void init_from_first_clip(const std::vector<std::vector<Detection>>& clip) {
    if (clip.size() > cfg_.window) throw DataError("first clip is longer than the window");
    tracks_.clear();
    window_.clear();
    window_ids_.clear();
    records_.clear();
    next_id_ = 0;

    std::vector<const Detection*> dets;
    std::vector<int> frame_of;
    for (std::size_t f = 0; f < clip.size(); ++f)
      for (const auto& d : clip[f]) {
        dets.push_back(&d);
        frame_of.push_back(static_cast<int>(f));
      }
    const Tensor S = dets.empty() ? Tensor({0, 0}) : det_det_scores(dets, frame_of);

    std::vector<std::vector<std::size_t>> members;  // per track: indices into dets
    std::size_t offset = 0;
    for (std::size_t f = 0; f < clip.size(); ++f) {
      const std::size_t m = clip[f].size();
      std::vector<int> ids(m, -1);
      if (m > 0) {
        Tensor score({m, tracks_.size()});
        for (std::size_t j = 0; j < m; ++j)
          for (std::size_t k = 0; k < tracks_.size(); ++k) {
            double s = 0.0;
            for (std::size_t mi : members[k]) s += S.at(offset + j, mi);
            score.at(j, k) = s / static_cast<double>(members[k].size());
          }
        const auto match = assign(score);
        for (std::size_t j = 0; j < m; ++j) {
          const Detection& d = clip[f][j];
          if (match[j] >= 0) {
            const auto k = static_cast<std::size_t>(match[j]);
            extend(tracks_[k], d, static_cast<int>(f), score.at(j, k));
            members[k].push_back(offset + j);
            ids[j] = tracks_[k].id;
          } else {
            ids[j] = birth(d, static_cast<int>(f));
            members.push_back({offset + j});
          }
        }
      }
      window_.push_back(clip[f]);
      window_ids_.push_back(std::move(ids));
      offset += m;
    }
    frame_ = static_cast<int>(clip.size());
  }

  /// Associates the next frame's detections with the current tracks.
  void step(const std::vector<Detection>& detections) {
    const int f = frame_++;
    window_.push_back(detections);
    window_ids_.emplace_back(detections.size(), -1);
    while (window_.size() > cfg_.window) {
      window_.pop_front();
      window_ids_.pop_front();
    }
    retire(f);
    const std::size_t m = detections.size();
    if (m == 0) return;

    // Detection-detection scores over the whole window; rows of the new frame.
    std::vector<const Detection*> dets;
    std::vector<int> frame_of, owner;
    for (std::size_t w = 0; w < window_.size(); ++w)
      for (std::size_t j = 0; j < window_[w].size(); ++j) {
        dets.push_back(&window_[w][j]);
        frame_of.push_back(static_cast<int>(w));
        owner.push_back(window_ids_[w][j]);
      }
    const std::size_t first_new = dets.size() - m;
    const Tensor S = det_det_scores(dets, frame_of);

    std::vector<std::size_t> live;
    for (std::size_t k = 0; k < tracks_.size(); ++k)
      if (tracks_[k].active) live.push_back(k);
    const auto [by_traj, by_det] = det_traj_scores(dets, first_new, live);

    Tensor score({m, live.size()});
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t c = 0; c < live.size(); ++c) {
        const int id = tracks_[live[c]].id;
        double s = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < first_new; ++i)
          if (owner[i] == id) {
            s += S.at(first_new + j, i);
            ++n;
          }
        // Mean of both normalisations; key 0 is the null trajectory.
        const double dt = 0.5 * (by_traj.scores.at(j, c + 1) + by_det.scores.at(c + 1, j));
        score.at(j, c) = n ? 0.5 * (dt + s / static_cast<double>(n)) : dt;
      }
    const auto match = assign(score);
    auto& ids = window_ids_.back();
    for (std::size_t j = 0; j < m; ++j) {
      if (match[j] >= 0) {
        TrackState& t = tracks_[live[static_cast<std::size_t>(match[j])]];
        extend(t, detections[j], f, score.at(j, static_cast<std::size_t>(match[j])));
        ids[j] = t.id;
      } else {
        ids[j] = birth(detections[j], f);
      }
    }
  }

  TrackOutput output() const {
    TrackOutput out{records_};
    std::sort(out.records.begin(), out.records.end(),
              [](const TrackRecord& a, const TrackRecord& b) { return std::tie(a.frame, a.id) < std::tie(b.frame, b.id); });
    return out;
  }

  /// Tracks a whole video: the first T frames initialise, then one step per frame.
  TrackOutput run(const std::vector<std::vector<Detection>>& frames) {
    const std::size_t head = std::min(frames.size(), cfg_.window);
    init_from_first_clip({frames.begin(), frames.begin() + static_cast<std::ptrdiff_t>(head)});
    for (std::size_t f = head; f < frames.size(); ++f) step(frames[f]);
    return output();
  }

 private:
  TrajectoryEncoding window_encoding(const TrackState& t) const {
    const std::vector<RoIPatch> patches(t.recent.begin(), t.recent.end());
    return accumulate_trajectory(patches, cfg_.alpha.weights(patches.size()));
  }

  Tensor det_det_scores(const std::vector<const Detection*>& dets, const std::vector<int>& frame_of) const {
    std::vector<RoIPatch> enc;
    std::vector<EmbedItem> items;
    enc.reserve(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) {
      enc.push_back(encode_roi(dets[i]->box, geometry_, stack_.config.roi));
      items.push_back({&dets[i]->appearance, &enc.back(), &dets[i]->mask, i});
    }
    return detection_attention(embed_items(stack_, items), frame_of, stack_).scores;
  }

  // Both normalisations of detections [first, end) against null + live tracks.
  std::pair<AssociationMatrix, AssociationMatrix> det_traj_scores(const std::vector<const Detection*>& dets, std::size_t first,
                         const std::vector<std::size_t>& live) const {
    std::vector<RoIPatch> enc;
    std::vector<EmbedItem> items;
    enc.reserve(dets.size() - first);
    for (std::size_t i = first; i < dets.size(); ++i) {
      enc.push_back(encode_roi(dets[i]->box, geometry_, stack_.config.roi));
      items.push_back({&dets[i]->appearance, &enc.back(), &dets[i]->mask, i});
    }
    std::vector<TrajectoryEncoding> traj;
    std::vector<EmbedItem> traj_items;
    traj.reserve(live.size());
    for (std::size_t c = 0; c < live.size(); ++c) {
      const TrackState& t = tracks_[live[c]];
      traj.push_back(window_encoding(t));
      traj_items.push_back({&t.snapshot, &traj.back().tensor, &t.mask, c + 1});
    }
    std::vector<Embedding> keys{null_embedding(stack_)};
    for (auto& e : embed_items(stack_, traj_items)) keys.push_back(std::move(e));
    return det_traj_attention(embed_items(stack_, items), keys, stack_);
  }

  // Hungarian on 1 - score with pairs below the birth threshold forbidden.
  std::vector<int> assign(const Tensor& score) const {
    Tensor cost(score.shape());
    for (std::size_t i = 0; i < score.size(); ++i)
      cost[i] = score[i] < cfg_.birth_threshold ? kForbidden : 1.0 - score[i];
    return hungarian(cost).row_to_col;
  }

  void extend(TrackState& t, const Detection& d, int frame, double score) {
    const RoIPatch patch = encode_roi(d.box, geometry_, stack_.config.roi);
    t.encoding = extend_trajectory(std::move(t.encoding), patch, 1.0);
    t.recent.push_back(patch);
    while (t.recent.size() > cfg_.window - 1) t.recent.pop_front();
    t.snapshot = d.appearance;
    t.mask = d.mask;
    t.history.emplace_back(frame, d.box);
    records_.push_back({frame, t.id, d.box, score});
  }

  int birth(const Detection& d, int frame) {
    const RoIPatch patch = encode_roi(d.box, geometry_, stack_.config.roi);
    TrackState t;
    t.id = next_id_++;
    t.encoding = accumulate_trajectory({patch}, {1.0});
    t.recent.push_back(patch);
    t.snapshot = d.appearance;
    t.mask = d.mask;
    t.history.emplace_back(frame, d.box);
    records_.push_back({frame, t.id, d.box, 1.0});
    tracks_.push_back(std::move(t));
    return tracks_.back().id;
  }

  void retire(int frame) {
    for (auto& t : tracks_)
      if (t.active && frame - t.last_frame() > static_cast<int>(cfg_.window)) t.active = false;
  }

  const EmbeddingStack& stack_;
  TrackerConfig cfg_;
  ImageGeometry geometry_;
  std::vector<TrackState> tracks_;
  std::deque<std::vector<Detection>> window_;
  std::deque<std::vector<int>> window_ids_;  // track id of every window detection
  std::vector<TrackRecord> records_;
  int frame_ = 0;
  int next_id_ = 0;
};

/// Visible detections of a simulated video, frame by frame.
inline std::vector<std::vector<Detection>> tracker_input(const Video& video) {
  std::vector<std::vector<Detection>> frames(video.length());
  for (std::size_t f = 0; f < video.length(); ++f)
    for (const auto& d : video.frames[f])
      if (d.visible) frames[f].push_back(static_cast<const Detection&>(d));
  return frames;
}

}  // namespace dst
