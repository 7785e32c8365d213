#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dst/autograd.hpp"
#include "dst/encoding.hpp"

namespace dst {

/// Per-cell weight over the RoI grid (H_R x W_R), values in [0, 1].
struct AttentionMask {
  Tensor grid;

  static AttentionMask ones(const RoISpec& roi) { return {Tensor({roi.height, roi.width}, 1.0)}; }

  void validate() const {
    if (grid.rank() != 2) throw ShapeError("attention mask must be H_R x W_R");
    bool any = false;
    for (double v : grid.data()) {
      if (!(v >= 0.0 && v <= 1.0)) throw ShapeError("attention mask values must lie in [0, 1]");
      any = any || v > 0.0;
    }
    if (!any) throw ShapeError("attention mask is all zero");
  }
};

/// Broadcasts the mask over channels: out(c, y, x) = mask(y, x) * features(c, y, x).
inline RoIPatch apply_mask(const RoIPatch& features, const AttentionMask& mask) {
  if (features.rank() != 3 || mask.grid.rank() != 2 || features.dim(1) != mask.grid.dim(0) ||
      features.dim(2) != mask.grid.dim(1))
    throw ShapeError("apply_mask: feature " + shape_str(features.shape()) + " vs mask " +
                     shape_str(mask.grid.shape()));
  RoIPatch out = features;
  const std::size_t cells = mask.grid.size();
  for (std::size_t c = 0; c < features.dim(0); ++c)
    for (std::size_t p = 0; p < cells; ++p) out[c * cells + p] *= mask.grid[p];
  return out;
}

/// One detected object on one frame: box plus backbone-side features.
struct Detection {
  int frame = 0;
  BBox box{};
  RoIPatch appearance;
  AttentionMask mask;
};

enum class EncodingMode { none, classic, dst };

inline const char* to_string(EncodingMode m) {
  switch (m) {
    case EncodingMode::none: return "none";
    case EncodingMode::classic: return "classic";
    case EncodingMode::dst: return "dst";
  }
  return "?";
}

inline EncodingMode encoding_mode_from_string(const std::string& s) {
  if (s == "none") return EncodingMode::none;
  if (s == "classic") return EncodingMode::classic;
  if (s == "dst") return EncodingMode::dst;
  throw ConfigError("model.encoding", "unknown mode '" + s + "' (expected none|classic|dst)");
}

struct ModelConfig {
  std::size_t channels = 64;
  RoISpec roi{};
  std::size_t embed_dim = 128;
  EncodingMode encoding = EncodingMode::dst;
  bool use_mask = true;
  double l_init_noise = 0.01;

  std::size_t flat_width() const { return channels * roi.cells(); }

  void validate() const {
    if (channels < 2 || channels % 2 != 0) throw ConfigError("model.channels", "must be even and >= 2");
    roi.validate();
    if (embed_dim < 1) throw ConfigError("model.embed_dim", "must be >= 1");
    if (encoding == EncodingMode::classic && embed_dim % 2 != 0)
      throw ConfigError("model.embed_dim", "classic encoding needs an even embedding width");
    if (!(l_init_noise >= 0.0)) throw ConfigError("model.l_init_noise", "must be >= 0");
  }

  friend bool operator==(const ModelConfig& a, const ModelConfig& b) {
    return a.channels == b.channels && a.roi.width == b.roi.width && a.roi.height == b.roi.height &&
           a.embed_dim == b.embed_dim && a.encoding == b.encoding && a.use_mask == b.use_mask &&
           a.l_init_noise == b.l_init_noise;
  }
};

/// Learned pieces of the association model.
///   l_map      C x C, bias-free, applied per RoI cell to the position encoding
///   g1, g2     linear+ReLU pair flattening C*H_R*W_R -> D -> D
///   q, k       query/key projections D -> D
///   null_token key for "no existing trajectory"
///   sink_token key appended to every frame group for "no counterpart in this frame"
struct EmbeddingStack {
  ModelConfig config;
  Parameter l_map, g1_w, g1_b, g2_w, g2_b, q_w, q_b, k_w, k_b, null_token, sink_token;

  static EmbeddingStack initialize(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    auto uniform = [&](Shape shape, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      Tensor t(std::move(shape));
      for (double& v : t.data()) v = dist(rng);
      return t;
    };
    const std::size_t C = cfg.channels, D = cfg.embed_dim, F = cfg.flat_width();
    EmbeddingStack s;
    s.config = cfg;
    Tensor l({C, C});
    std::uniform_real_distribution<double> noise(-cfg.l_init_noise, cfg.l_init_noise);
    for (std::size_t i = 0; i < C; ++i)
      for (std::size_t j = 0; j < C; ++j) l.at(i, j) = (i == j ? 1.0 : 0.0) + noise(rng);
    s.l_map = Parameter("l_map", std::move(l));
    s.g1_w = Parameter("g1_w", uniform({F, D}, F));
    s.g1_b = Parameter("g1_b", Tensor({D}));
    s.g2_w = Parameter("g2_w", uniform({D, D}, D));
    s.g2_b = Parameter("g2_b", Tensor({D}));
    s.q_w = Parameter("q_w", uniform({D, D}, D));
    s.q_b = Parameter("q_b", Tensor({D}));
    s.k_w = Parameter("k_w", uniform({D, D}, D));
    s.k_b = Parameter("k_b", Tensor({D}));
    s.null_token = Parameter("null_token", uniform({1, D}, D));
    s.sink_token = Parameter("sink_token", uniform({1, D}, D));
    return s;
  }

  std::vector<Parameter*> parameters() {
    return {&l_map, &g1_w, &g1_b, &g2_w, &g2_b, &q_w, &q_b, &k_w, &k_b, &null_token, &sink_token};
  }
  std::vector<const Parameter*> parameters() const {
    return {&l_map, &g1_w, &g1_b, &g2_w, &g2_b, &q_w, &q_b, &k_w, &k_b, &null_token, &sink_token};
  }
};

/// One row of an embedding batch. `encoding` may be null (no position term,
/// e.g. for the none/classic arms). `token_position` only matters for the
/// classic arm.
struct EmbedItem {
  const RoIPatch* appearance = nullptr;
  const Tensor* encoding = nullptr;
  const AttentionMask* mask = nullptr;
  std::size_t token_position = 0;
};

namespace detail {

// C x H x W -> (H*W) x C, appended at row offset `cell0` of `out`.
inline void patch_to_cells(const Tensor& patch, Tensor& out, std::size_t cell0) {
  const std::size_t C = patch.dim(0), cells = patch.dim(1) * patch.dim(2);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t p = 0; p < cells; ++p) out[(cell0 + p) * C + c] = patch[c * cells + p];
}

inline Tensor cells_to_patch(const Tensor& cells, std::size_t C, const RoISpec& roi, std::size_t cell0 = 0) {
  const std::size_t n = roi.cells();
  Tensor out({C, roi.height, roi.width});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t p = 0; p < n; ++p) out[c * n + p] = cells[(cell0 + p) * C + c];
  return out;
}

inline void require_patch(const Tensor& t, const ModelConfig& cfg, const char* what) {
  if (t.rank() != 3 || t.dim(0) != cfg.channels || t.dim(1) != cfg.roi.height || t.dim(2) != cfg.roi.width)
    throw ShapeError(std::string(what) + ": expected " +
                     shape_str({cfg.channels, cfg.roi.height, cfg.roi.width}) + ", got " + shape_str(t.shape()));
}

}  // namespace detail

/// L applied cell-wise: a batch of encodings stacked as (N*H_R*W_R) x C rows.
inline Var linear_map_cells(Tape& tape, const EmbeddingStack& stack, Tensor encoding_cells) {
  return ops::matmul(tape.constant(std::move(encoding_cells)), tape.param(stack.l_map));
}

/// L applied to one C x H_R x W_R encoding; returns the same layout.
inline Tensor linear_map_L(const EmbeddingStack& stack, const Tensor& encoding) {
  detail::require_patch(encoding, stack.config, "linear_map_L");
  Tape tape(false);
  Tensor cells({stack.config.roi.cells(), stack.config.channels});
  detail::patch_to_cells(encoding, cells, 0);
  Var out = linear_map_cells(tape, stack, std::move(cells));
  return detail::cells_to_patch(out.value(), stack.config.channels, stack.config.roi);
}

/// Masked g-input for a batch, as N x (H_R*W_R*C): mask * (appearance + L(encoding)).
inline Var embedding_input(Tape& tape, const EmbeddingStack& stack, std::span<const EmbedItem> items) {
  const ModelConfig& cfg = stack.config;
  const std::size_t C = cfg.channels, cells = cfg.roi.cells(), n = items.size();
  if (n == 0) throw ShapeError("embedding batch is empty");
  Tensor appearance({n * cells, C});
  std::vector<double> mask(n * cells, 1.0);
  const bool with_encoding = cfg.encoding == EncodingMode::dst;
  Tensor encoding = with_encoding ? Tensor({n * cells, C}) : Tensor();
  for (std::size_t i = 0; i < n; ++i) {
    const EmbedItem& it = items[i];
    if (!it.appearance) throw ShapeError("embedding item without appearance features");
    detail::require_patch(*it.appearance, cfg, "appearance");
    detail::patch_to_cells(*it.appearance, appearance, i * cells);
    if (with_encoding) {
      if (!it.encoding) throw ShapeError("dst model requires a position encoding for every item");
      detail::require_patch(*it.encoding, cfg, "encoding");
      detail::patch_to_cells(*it.encoding, encoding, i * cells);
    }
    if (cfg.use_mask && it.mask) {
      const Tensor& g = it.mask->grid;
      if (g.rank() != 2 || g.dim(0) != cfg.roi.height || g.dim(1) != cfg.roi.width)
        throw ShapeError("attention mask shape " + shape_str(g.shape()) + " does not match the RoI grid");
      for (std::size_t p = 0; p < cells; ++p) mask[i * cells + p] = g[p];
    }
  }
  Var x = tape.constant(std::move(appearance));
  if (with_encoding) x = ops::add(x, linear_map_cells(tape, stack, std::move(encoding)));
  x = ops::mul_rows(x, std::move(mask));
  return ops::reshape(x, {n, cells * C});
}

/// g(mask * (appearance + L(encoding))) for a batch -> N x D.
inline Var embed_batch(Tape& tape, const EmbeddingStack& stack, std::span<const EmbedItem> items) {
  Var x = embedding_input(tape, stack, items);
  Var b1 = tape.param(stack.g1_b), b2 = tape.param(stack.g2_b);
  Var h = ops::relu(ops::linear(x, tape.param(stack.g1_w), &b1));
  Var e = ops::relu(ops::linear(h, tape.param(stack.g2_w), &b2));
  if (stack.config.encoding == EncodingMode::classic) {
    const std::size_t D = stack.config.embed_dim;
    Tensor pe({items.size(), D});
    for (std::size_t i = 0; i < items.size(); ++i) {
      auto row = classic_encoding(items[i].token_position, D);
      std::copy(row.begin(), row.end(), pe.data().begin() + static_cast<std::ptrdiff_t>(i * D));
    }
    e = ops::add_const(e, pe);
  }
  return e;
}

inline Var project_queries(Tape& tape, const EmbeddingStack& stack, Var emb) {
  Var b = tape.param(stack.q_b);
  return ops::linear(emb, tape.param(stack.q_w), &b);
}

inline Var project_keys(Tape& tape, const EmbeddingStack& stack, Var emb) {
  Var b = tape.param(stack.k_b);
  return ops::linear(emb, tape.param(stack.k_w), &b);
}

/// Q K^T / sqrt(D)
inline Var attention_logits(Var queries, Var keys, std::size_t embed_dim) {
  return ops::scale(ops::matmul_nt(queries, keys), 1.0 / std::sqrt(static_cast<double>(embed_dim)));
}

// --- frozen-parameter API -------------------------------------------------

using Embedding = std::vector<double>;

inline std::vector<Embedding> rows_of(const Tensor& m) {
  std::vector<Embedding> out(m.dim(0));
  for (std::size_t i = 0; i < m.dim(0); ++i)
    out[i].assign(m.data().begin() + static_cast<std::ptrdiff_t>(i * m.dim(1)),
                  m.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * m.dim(1)));
  return out;
}

inline Tensor stack_rows(const std::vector<Embedding>& rows, std::size_t width) {
  Tensor m({rows.size(), width});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != width) throw ShapeError("embedding width mismatch");
    std::copy(rows[i].begin(), rows[i].end(), m.data().begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  return m;
}

inline std::vector<Embedding> embed_items(const EmbeddingStack& stack, std::span<const EmbedItem> items) {
  if (items.empty()) return {};
  Tape tape(false);
  return rows_of(embed_batch(tape, stack, items).value());
}

inline Embedding embed_detection(const RoIPatch& appearance, const RoIPatch& encoding, const AttentionMask& mask,
                                 const EmbeddingStack& stack) {
  const EmbedItem item{&appearance, &encoding, &mask, 0};
  return embed_items(stack, std::span(&item, 1)).front();
}

/// Same pipeline as embed_detection with the accumulated trajectory encoding in
/// place of a single-frame encoding.
inline Embedding embed_trajectory(const TrajectoryEncoding& traj, const RoIPatch& last_snapshot,
                                  const AttentionMask& last_mask, const EmbeddingStack& stack) {
  return embed_detection(last_snapshot, traj.tensor, last_mask, stack);
}

/// Row-stochastic (per key group) score matrix.
struct AssociationMatrix {
  Tensor scores;
  std::vector<int> query_ids;
  std::vector<int> key_ids;     // detection / trajectory index; sinks are -1 - frame
  std::vector<int> key_groups;  // group label per key column
};

inline constexpr int sink_key_id(int frame) { return -1 - frame; }

/// Whether detection_attention appends a sink key to every frame group.
enum class SinkKeys { include, exclude };

/// Detection-detection attention. Each query is normalised separately over the
/// keys of every other frame; keys from the query's own frame get zero.
inline AssociationMatrix detection_attention(const std::vector<Embedding>& embeddings, const std::vector<int>& frame_of,
                                             const EmbeddingStack& stack, SinkKeys sinks = SinkKeys::include) {
  if (embeddings.size() != frame_of.size()) throw ShapeError("detection_attention: one frame label per detection");
  AssociationMatrix out;
  std::vector<int> frames;
  for (int f : frame_of)
    if (std::find(frames.begin(), frames.end(), f) == frames.end()) frames.push_back(f);
  std::sort(frames.begin(), frames.end());
  if (frames.size() < 2) {
    out.scores = Tensor({embeddings.size(), 0});
    for (std::size_t i = 0; i < embeddings.size(); ++i) out.query_ids.push_back(static_cast<int>(i));
    return out;
  }
  const std::size_t D = stack.config.embed_dim;
  Tape tape(false);
  Var emb = tape.constant(stack_rows(embeddings, D));
  std::vector<Var> key_parts{emb};
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    out.query_ids.push_back(static_cast<int>(i));
    out.key_ids.push_back(static_cast<int>(i));
    out.key_groups.push_back(frame_of[i]);
  }
  if (sinks == SinkKeys::include)
    for (int f : frames) {
      key_parts.push_back(tape.param(stack.sink_token));
      out.key_ids.push_back(sink_key_id(f));
      out.key_groups.push_back(f);
    }
  Var q = project_queries(tape, stack, emb);
  Var k = project_keys(tape, stack, ops::concat_rows(key_parts));
  Var logits = attention_logits(q, k, D);
  // Map frame labels onto dense group ids.
  std::vector<int> dense(out.key_groups.size());
  for (std::size_t j = 0; j < dense.size(); ++j)
    dense[j] = static_cast<int>(std::lower_bound(frames.begin(), frames.end(), out.key_groups[j]) - frames.begin());
  const auto& groups = out.key_groups;
  ops::ColumnGroups cg{dense, [&](std::size_t i, std::size_t j) { return groups[j] != frame_of[i]; }};
  out.scores = ops::grouped_softmax_values(logits.value(), cg);
  return out;
}

/// Both normalisations of one logit matrix (detections x trajectory keys):
/// first over trajectory keys for each detection, then over detections for
/// each trajectory (returned trajectories x detections).
inline std::pair<AssociationMatrix, AssociationMatrix> det_traj_from_logits(const Tensor& logits) {
  const std::size_t m = logits.dim(0), k = logits.dim(1);
  AssociationMatrix by_traj, by_det;
  by_traj.scores = ops::grouped_softmax_values(logits, {std::vector<int>(k, 0), nullptr});
  Tensor lt({k, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) lt.at(j, i) = logits.at(i, j);
  by_det.scores = ops::grouped_softmax_values(lt, {std::vector<int>(m, 0), nullptr});
  for (std::size_t i = 0; i < m; ++i) {
    by_traj.query_ids.push_back(static_cast<int>(i));
    by_det.key_ids.push_back(static_cast<int>(i));
    by_det.key_groups.push_back(0);
  }
  for (std::size_t j = 0; j < k; ++j) {
    by_traj.key_ids.push_back(static_cast<int>(j));
    by_traj.key_groups.push_back(0);
    by_det.query_ids.push_back(static_cast<int>(j));
  }
  return {std::move(by_traj), std::move(by_det)};
}

/// Detection-trajectory cross attention. `traj_embs` is the full key set and
/// must contain the null token (see null_embedding) as one of its entries.
inline std::pair<AssociationMatrix, AssociationMatrix> det_traj_attention(const std::vector<Embedding>& det_embs,
                                                                          const std::vector<Embedding>& traj_embs,
                                                                          const EmbeddingStack& stack) {
  if (traj_embs.empty()) throw ShapeError("det_traj_attention: the key set must contain the null trajectory");
  const std::size_t D = stack.config.embed_dim;
  if (det_embs.empty()) {
    auto [a, b] = det_traj_from_logits(Tensor({0, traj_embs.size()}));
    b.scores = Tensor({traj_embs.size(), 0});
    return {a, b};
  }
  Tape tape(false);
  Var q = project_queries(tape, stack, tape.constant(stack_rows(det_embs, D)));
  Var k = project_keys(tape, stack, tape.constant(stack_rows(traj_embs, D)));
  return det_traj_from_logits(attention_logits(q, k, D).value());
}

inline Embedding null_embedding(const EmbeddingStack& stack) { return stack.null_token.value.data(); }

}  // namespace dst
