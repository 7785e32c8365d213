#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "dst/hungarian.hpp"
#include "dst/simulator.hpp"
#include "dst/tracker.hpp"

namespace dst {

/// One ground-truth box: (frame, box) plus identity.
struct GtRecord {
  int frame = 0;
  int identity = 0;
  BBox box{};
};

inline std::vector<GtRecord> ground_truth(const Video& video) {
  std::vector<GtRecord> gt;
  for (const auto& frame : video.frames)
    for (const auto& d : frame)
      if (d.visible) gt.push_back({d.frame, d.identity, d.box});
  std::sort(gt.begin(), gt.end(),
            [](const GtRecord& a, const GtRecord& b) { return std::tie(a.frame, a.identity) < std::tie(b.frame, b.identity); });
  return gt;
}

namespace detail {

using BoxKey = std::tuple<int, double, double, double, double>;

inline BoxKey box_key(int frame, const BBox& b) { return {frame, b.u, b.v, b.w, b.h}; }

inline std::map<BoxKey, int> prediction_index(const TrackOutput& pred) {
  std::map<BoxKey, int> idx;
  for (const auto& r : pred.records) idx.emplace(box_key(r.frame, r.box), r.id);
  return idx;
}

// Predicted id for every GT record in time order, grouped by identity; -1 if unmatched.
inline std::map<int, std::vector<int>> matched_ids(const TrackOutput& pred, const std::vector<GtRecord>& gt) {
  const auto idx = prediction_index(pred);
  std::vector<GtRecord> sorted = gt;
  std::stable_sort(sorted.begin(), sorted.end(), [](const GtRecord& a, const GtRecord& b) { return a.frame < b.frame; });
  std::map<int, std::vector<int>> out;
  for (const auto& g : sorted) {
    auto it = idx.find(box_key(g.frame, g.box));
    out[g.identity].push_back(it == idx.end() ? -1 : it->second);
  }
  return out;
}

}  // namespace detail

struct AccuracyResult {
  double value = 1.0;
  std::size_t pairs = 0;
  bool no_pairs = false;  // nothing to measure; value reported as 1
};

/// Fraction of consecutive same-identity GT pairs that share one predicted track.
inline AccuracyResult association_accuracy(const TrackOutput& pred, const std::vector<GtRecord>& gt) {
  std::size_t kept = 0, pairs = 0;
  for (const auto& [identity, ids] : detail::matched_ids(pred, gt))
    for (std::size_t i = 1; i < ids.size(); ++i) {
      ++pairs;
      if (ids[i] >= 0 && ids[i] == ids[i - 1]) ++kept;
    }
  if (pairs == 0) return {1.0, 0, true};
  return {static_cast<double>(kept) / static_cast<double>(pairs), pairs, false};
}

/// Number of times a GT identity's predicted id differs from its previous one.
inline std::size_t id_switches(const TrackOutput& pred, const std::vector<GtRecord>& gt) {
  std::size_t n = 0;
  for (const auto& [identity, ids] : detail::matched_ids(pred, gt)) {
    int prev = -1;
    for (int id : ids) {
      if (id < 0) continue;
      if (prev >= 0 && id != prev) ++n;
      prev = id;
    }
  }
  return n;
}

struct Idf1Result {
  double value = 1.0;
  std::size_t idtp = 0, idfp = 0, idfn = 0;
};

inline Idf1Result idf1(const TrackOutput& pred, const std::vector<GtRecord>& gt) {
  std::map<int, std::size_t> gt_row, pred_col;
  for (const auto& g : gt) gt_row.emplace(g.identity, gt_row.size());
  for (const auto& r : pred.records) pred_col.emplace(r.id, pred_col.size());
  Idf1Result res;
  if (gt.empty() && pred.records.empty()) return res;
  std::vector<std::size_t> gt_len(gt_row.size()), pred_len(pred_col.size());
  for (const auto& g : gt) ++gt_len[gt_row[g.identity]];
  for (const auto& r : pred.records) ++pred_len[pred_col[r.id]];
  Tensor overlap({gt_row.size(), pred_col.size()});
  const auto idx = detail::prediction_index(pred);
  for (const auto& g : gt) {
    auto it = idx.find(detail::box_key(g.frame, g.box));
    if (it != idx.end()) overlap.at(gt_row[g.identity], pred_col[it->second]) += 1.0;
  }
  Tensor cost(overlap.shape());
  for (std::size_t i = 0; i < cost.size(); ++i) cost[i] = -overlap[i];
  const Assignment a = hungarian(cost);
  for (std::size_t i = 0; i < a.row_to_col.size(); ++i)
    if (a.row_to_col[i] >= 0) res.idtp += static_cast<std::size_t>(overlap.at(i, static_cast<std::size_t>(a.row_to_col[i])));
  std::size_t total_gt = 0, total_pred = 0;
  for (auto n : gt_len) total_gt += n;
  for (auto n : pred_len) total_pred += n;
  res.idfn = total_gt - res.idtp;
  res.idfp = total_pred - res.idtp;
  const double denom = 2.0 * static_cast<double>(res.idtp) + static_cast<double>(res.idfp + res.idfn);
  res.value = denom > 0.0 ? 2.0 * static_cast<double>(res.idtp) / denom : 1.0;
  return res;
}

struct EvalReport {
  std::string scenario;
  double association_accuracy = 1.0;
  bool no_pairs = false;
  std::size_t pairs = 0;
  std::size_t id_switches = 0;
  double idf1 = 1.0;
  std::size_t predicted_tracks = 0;
  std::size_t gt_identities = 0;

  static constexpr const char* csv_header =
      "scenario,association_accuracy,id_switches,idf1,pairs,predicted_tracks,gt_identities,no_pairs";

  std::string csv_row() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%.6f,%zu,%.6f,%zu,%zu,%zu,%d", scenario.c_str(), association_accuracy,
                  id_switches, idf1, pairs, predicted_tracks, gt_identities, no_pairs ? 1 : 0);
    return buf;
  }
};

inline EvalReport evaluate(const TrackOutput& pred, const std::vector<GtRecord>& gt, std::string scenario = {}) {
  EvalReport r;
  r.scenario = std::move(scenario);
  const auto acc = association_accuracy(pred, gt);
  r.association_accuracy = acc.value;
  r.no_pairs = acc.no_pairs;
  r.pairs = acc.pairs;
  r.id_switches = id_switches(pred, gt);
  r.idf1 = idf1(pred, gt).value;
  std::map<int, int> ids, gts;
  for (const auto& p : pred.records) ids[p.id] = 1;
  for (const auto& g : gt) gts[g.identity] = 1;
  r.predicted_tracks = ids.size();
  r.gt_identities = gts.size();
  return r;
}

}  // namespace dst
