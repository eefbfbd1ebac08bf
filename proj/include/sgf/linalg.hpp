#pragma once

#include <Eigen/Dense>

#include "sgf/errors.hpp"

namespace sgf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline void require_dim(const Vector& v, Eigen::Index n, const char* name) {
  if (v.size() != n) {
    throw DimensionError(std::string(name) + ": expected length " +
                         std::to_string(n) + ", got " + std::to_string(v.size()));
  }
}

inline void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols,
                          const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw DimensionError(std::string(name) + ": expected " + std::to_string(rows) +
                         "x" + std::to_string(cols) + ", got " +
                         std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

}  // namespace sgf
