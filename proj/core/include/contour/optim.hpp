#pragma once

#include <Eigen/Dense>
#include <functional>

namespace contour {

struct NelderMeadOptions {
  double initial_step = 0.1;
  double xtol = 1e-12;       // simplex spread tolerance
  double ftol = 1e-14;       // function spread tolerance
  int max_iter = 2000;
  int restarts = 1;          // re-expand the simplex around the best point
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Derivative-free simplex minimization (Nelder-Mead with standard
/// reflection/expansion/contraction coefficients). Deterministic.
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& x0,
                             const NelderMeadOptions& opts = {});

}  // namespace contour
