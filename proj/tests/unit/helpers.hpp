#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "deepkkl/predictor.hpp"
#include "deepkkl/rng.hpp"

namespace testing {

using dkkl::Mat;
using dkkl::Vec;

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

inline Mat random_matrix(int rows, int cols, dkkl::Rng& rng, double scale = 1.0) {
  Mat m(rows, cols);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) m(r, c) = scale * rng.uniform(-1.0, 1.0);
  }
  return m;
}

inline Vec random_vector(int n, dkkl::Rng& rng, double scale = 1.0) {
  return random_matrix(n, 1, rng, scale).col(0);
}

// Worst relative error between an analytic gradient stored in `grad_views`
// and central differences of `loss` over every entry of `param_views`.
inline double worst_fd_error(const dkkl::ParamViews& params, const dkkl::ParamViews& grads,
                             const std::function<double()>& loss, double h = 1e-6) {
  double worst = 0.0;
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (Eigen::Index i = 0; i < params[b].size; ++i) {
      double& x = params[b].data[i];
      const double saved = x;
      x = saved + h;
      const double up = loss();
      x = saved - h;
      const double down = loss();
      x = saved;
      const double fd = (up - down) / (2.0 * h);
      const double an = grads[b].data[i];
      // entries whose gradient is tiny on both sides compare absolutely
      const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-4});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace testing
