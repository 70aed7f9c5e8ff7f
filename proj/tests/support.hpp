#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "csdn/types.hpp"

namespace testing {

inline csdn::Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  csdn::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

// Central differences of a scalar function with respect to every entry of x.
inline csdn::Matrix numeric_gradient(const std::function<double()>& f, csdn::Matrix& x, double h = 1e-6) {
  csdn::Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + h;
    const double up = f();
    x.data()[i] = saved - h;
    const double down = f();
    x.data()[i] = saved;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// max |a - b| / max(1e-3, |a|, |b|) over entries; the floor keeps near-zero
// gradients from inflating the ratio.
inline double relative_error(const csdn::Matrix& a, const csdn::Matrix& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double denom = std::max({1e-3, std::abs(a.data()[i]), std::abs(b.data()[i])});
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]) / denom);
  }
  return worst;
}

}  // namespace testing
