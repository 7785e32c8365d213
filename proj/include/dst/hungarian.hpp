#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "dst/tensor.hpp"

namespace dst {

/// Cost entry marking a pair that must never be assigned.
inline constexpr double kForbidden = std::numeric_limits<double>::infinity();

struct Assignment {
  std::vector<int> row_to_col;  // -1 = unassigned
  double total_cost = 0.0;      // over assigned pairs only

  std::size_t assigned() const {
    return static_cast<std::size_t>(std::count_if(row_to_col.begin(), row_to_col.end(), [](int c) { return c >= 0; }));
  }
};

/// Minimum-cost one-to-one assignment for a rows x cols cost matrix.
///
/// Rectangular problems are padded with zero-cost dummies, so the smaller side
/// is fully matched. Forbidden (+inf) pairs are replaced by a penalty larger
/// than any achievable spread of finite costs; the solver therefore first
/// maximises the number of permitted pairs and then minimises their cost, and
/// penalised pairs are dropped from the result. A row whose entries are all
/// forbidden always ends up unassigned.
inline Assignment hungarian(const Tensor& cost) {
  if (cost.rank() != 2) throw ShapeError("hungarian: cost must be a matrix");
  const std::size_t rows = cost.dim(0), cols = cost.dim(1);
  Assignment out;
  out.row_to_col.assign(rows, -1);
  if (rows == 0 || cols == 0) return out;

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double c : cost.data()) {
    if (std::isnan(c) || c == -std::numeric_limits<double>::infinity())
      throw NumericError("hungarian: costs must be finite or +inf");
    if (std::isfinite(c)) {
      lo = std::min(lo, c);
      hi = std::max(hi, c);
    }
  }
  if (!std::isfinite(lo)) return out;  // everything forbidden

  const std::size_t n = std::max(rows, cols);
  const double spread = std::max(hi - lo, 1.0);
  const double penalty = hi + spread * static_cast<double>(n + 1);
  auto at = [&](std::size_t i, std::size_t j) -> double {
    if (i >= rows || j >= cols) return 0.0;
    const double c = cost.at(i, j);
    return std::isfinite(c) ? c : penalty;
  };

  // Shortest augmenting path formulation with row/column potentials, 1-based.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), std::numeric_limits<double>::infinity());
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = std::numeric_limits<double>::infinity();
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }

  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j];
    if (i == 0 || i > rows || j > cols) continue;
    const double c = cost.at(i - 1, j - 1);
    if (!std::isfinite(c)) continue;
    out.row_to_col[i - 1] = static_cast<int>(j - 1);
    out.total_cost += c;
  }
  return out;
}

}  // namespace dst
