#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "duogp/rng.hpp"
#include "duogp/types.hpp"

namespace duogp {

// Finite candidate/prediction lattice: per-dimension [low, high] with a fixed
// stride.  Points are enumerated row-major with the first dimension slowest,
// coordinate h of cell k being low_h + k_h * stride_h.
class DesignGrid {
 public:
  DesignGrid() = default;
  DesignGrid(Vector low, Vector high, Vector stride, std::vector<int> counts)
      : low_(std::move(low)), high_(std::move(high)), stride_(std::move(stride)),
        counts_(std::move(counts)) {
    total_ = 1;
    for (int c : counts_) total_ *= c;
    points_.resize(total_, low_.size());
    std::vector<int> k(counts_.size(), 0);
    for (int idx = 0; idx < total_; ++idx) {
      for (int h = 0; h < low_.size(); ++h) points_(idx, h) = low_(h) + k[h] * stride_(h);
      for (int h = static_cast<int>(counts_.size()) - 1; h >= 0; --h) {
        if (++k[h] < counts_[h]) break;
        k[h] = 0;
      }
    }
  }

  [[nodiscard]] int size() const { return total_; }
  [[nodiscard]] int dim() const { return static_cast<int>(low_.size()); }
  [[nodiscard]] const Matrix& points() const { return points_; }
  [[nodiscard]] DesignPoint point(int idx) const { return points_.row(idx).transpose(); }
  [[nodiscard]] const Vector& low() const { return low_; }
  [[nodiscard]] const Vector& high() const { return high_; }
  [[nodiscard]] const Vector& spacing() const { return stride_; }
  [[nodiscard]] const std::vector<int>& counts() const { return counts_; }

  // Index of a point that lies on the grid (within `tol` per coordinate);
  // -1 if it does not.
  [[nodiscard]] int index_of(const DesignPoint& x, double tol = 1e-9) const {
    if (x.size() != dim()) return -1;
    int idx = 0;
    for (int h = 0; h < dim(); ++h) {
      double steps = (x(h) - low_(h)) / stride_(h);
      int k = static_cast<int>(std::llround(steps));
      if (k < 0 || k >= counts_[h]) return -1;
      if (std::abs(x(h) - (low_(h) + k * stride_(h))) > tol) return -1;
      idx = idx * counts_[h] + k;
    }
    return idx;
  }

  // Nearest grid coordinate index along dimension h.
  [[nodiscard]] int snap_index(int h, double x) const {
    int k = static_cast<int>(std::llround((x - low_(h)) / stride_(h)));
    return std::clamp(k, 0, counts_[h] - 1);
  }

 private:
  Vector low_, high_, stride_;
  std::vector<int> counts_;
  Matrix points_;
  int total_ = 0;
};

// Builds the lattice over [low_h, high_h] with the given strides.  Each span
// must be an integer number of strides (to 1e-9 relative slack).
inline DesignGrid make_grid(const Vector& low, const Vector& high, const Vector& stride) {
  const int d = static_cast<int>(low.size());
  if (high.size() != d || stride.size() != d)
    throw DimensionError("make_grid: bounds/stride dimension mismatch");
  std::vector<int> counts(d);
  for (int h = 0; h < d; ++h) {
    if (!(high(h) > low(h))) throw ConfigError("make_grid: high must exceed low");
    if (!(stride(h) > 0.0)) throw ConfigError("make_grid: stride must be positive");
    double steps = (high(h) - low(h)) / stride(h);
    double rounded = std::round(steps);
    if (rounded < 1.0 || std::abs(steps - rounded) > 1e-9 * std::max(1.0, rounded))
      throw ConfigError("make_grid: span is not an integer number of strides");
    counts[h] = static_cast<int>(rounded) + 1;
  }
  return DesignGrid(low, high, stride, counts);
}

// Conventional initial-design size: ten points per input dimension.
inline int default_initial_size(int dim) { return 10 * dim; }

namespace detail {

inline double min_pairwise_sqdist(const Matrix& pts) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < pts.rows(); ++i)
    for (int j = i + 1; j < pts.rows(); ++j) {
      double d2 = (pts.row(i) - pts.row(j)).squaredNorm();
      if (d2 < best) best = d2;
    }
  return best;
}

}  // namespace detail

// Maximin Latin hypercube design of n points snapped onto the grid.  Draws
// `restarts` stratified designs, snaps each coordinate to the nearest grid
// cell, re-draws any point that collides with an earlier one (up to 100
// attempts, then falls back to the nearest unused grid point), and keeps the
// design with the largest minimum pairwise distance.  Fully deterministic
// given the stream; ties keep the earliest restart.
inline Matrix lhd_maximin(const DesignGrid& grid, int n, RngStream rng, int restarts = 1000) {
  const int d = grid.dim();
  if (n < 2) throw ConfigError("lhd_maximin: need at least two points");
  if (n > grid.size()) throw ConfigError("lhd_maximin: more points than grid cells");

  Matrix best;
  double best_score = -1.0;
  for (int rep = 0; rep < restarts; ++rep) {
    RngStream rs = rng.derive(rep);
    // One stratum permutation per dimension.
    std::vector<std::vector<int>> strata(d, std::vector<int>(n));
    for (int h = 0; h < d; ++h) {
      std::iota(strata[h].begin(), strata[h].end(), 0);
      for (int i = n - 1; i > 0; --i) {
        int j = static_cast<int>(rs.uniform_below(static_cast<std::uint64_t>(i) + 1));
        std::swap(strata[h][i], strata[h][j]);
      }
    }
    Matrix pts(n, d);
    std::vector<std::vector<int>> cell(n, std::vector<int>(d));
    auto draw_point = [&](int i) {
      for (int h = 0; h < d; ++h) {
        double u = (strata[h][i] + rs.uniform01()) / n;
        double x = grid.low()(h) + u * (grid.high()(h) - grid.low()(h));
        int k = grid.snap_index(h, x);
        cell[i][h] = k;
        pts(i, h) = grid.low()(h) + k * grid.spacing()(h);
      }
    };
    auto collides = [&](int i) {
      for (int j = 0; j < i; ++j)
        if (cell[j] == cell[i]) return true;
      return false;
    };
    for (int i = 0; i < n; ++i) {
      draw_point(i);
      int tries = 0;
      while (collides(i) && tries < 100) {
        draw_point(i);
        ++tries;
      }
      if (collides(i)) {
        // Nearest grid point not already used (lowest index on ties).
        int best_idx = -1;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (int g = 0; g < grid.size(); ++g) {
          bool used = false;
          for (int j = 0; j < i; ++j)
            if ((pts.row(j) - grid.points().row(g)).squaredNorm() == 0.0) used = true;
          if (used) continue;
          double d2 = (grid.points().row(g) - pts.row(i)).squaredNorm();
          if (d2 < best_d2) {
            best_d2 = d2;
            best_idx = g;
          }
        }
        pts.row(i) = grid.points().row(best_idx);
        for (int h = 0; h < d; ++h) cell[i][h] = grid.snap_index(h, pts(i, h));
      }
    }
    double score = detail::min_pairwise_sqdist(pts);
    if (score > best_score) {
      best_score = score;
      best = pts;
    }
  }
  return best;
}

// Evenly spaced 1-d seed design snapped onto the grid: n points spanning
// [low, high] inclusive with equal index gaps, no replicates.
inline Matrix uniform_1d_design(const DesignGrid& grid, int n) {
  if (grid.dim() != 1) throw ConfigError("uniform_1d_design: grid must be one-dimensional");
  if (n < 2 || n > grid.size()) throw ConfigError("uniform_1d_design: bad point count");
  Matrix pts(n, 1);
  int last = -1;
  for (int i = 0; i < n; ++i) {
    double x = grid.low()(0) +
               (grid.high()(0) - grid.low()(0)) * static_cast<double>(i) / (n - 1);
    int k = grid.snap_index(0, x);
    if (k <= last) throw ConfigError("uniform_1d_design: replicate after snapping");
    pts(i, 0) = grid.low()(0) + k * grid.spacing()(0);
    last = k;
  }
  return pts;
}

}  // namespace duogp
