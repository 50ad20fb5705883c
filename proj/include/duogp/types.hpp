#pragma once

#include <Eigen/Dense>

#include "duogp/errors.hpp"

namespace duogp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// A design point is a location in the input domain (one row of a design).
using DesignPoint = Eigen::VectorXd;

// Running record of everything observed so far: the n0 seed observations
// followed by the n sequentially chosen ones, in acquisition order.
struct ObservationSet {
  Matrix points;  // (n0 + n) x d
  Vector values;  // n0 + n
  int n0 = 0;     // initial-design observations
  int n = 0;      // sequential observations

  [[nodiscard]] int size() const { return n0 + n; }
  [[nodiscard]] int dim() const { return static_cast<int>(points.cols()); }

  static ObservationSet initial(const Matrix& pts, const Vector& vals) {
    if (pts.rows() != vals.size())
      throw DimensionError("observation points/values length mismatch");
    ObservationSet s;
    s.points = pts;
    s.values = vals;
    s.n0 = static_cast<int>(pts.rows());
    s.n = 0;
    return s;
  }

  void append(const DesignPoint& x, double y) {
    if (x.size() != points.cols())
      throw DimensionError("appended point has wrong dimension");
    points.conservativeResize(points.rows() + 1, Eigen::NoChange);
    points.row(points.rows() - 1) = x.transpose();
    values.conservativeResize(values.size() + 1);
    values(values.size() - 1) = y;
    ++n;
  }
};

}  // namespace duogp
