#include "contour/optim.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace contour {

NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& x0,
                             const NelderMeadOptions& opts) {
  const int n = static_cast<int>(x0.size());
  const double alpha = 1.0, gamma = 2.0, rho = 0.5, sigma = 0.5;

  struct Vertex {
    Eigen::VectorXd x;
    double fx;
  };
  std::vector<Vertex> simplex;

  const auto init_simplex = [&](const Eigen::VectorXd& base, double step) {
    simplex.clear();
    simplex.push_back({base, f(base)});
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd xi = base;
      xi(i) += step * std::max(1.0, std::abs(base(i)));
      simplex.push_back({xi, f(xi)});
    }
  };

  int evals = 0;
  NelderMeadResult result;
  result.converged = false;

  init_simplex(x0, opts.initial_step);
  for (int restart = 0; restart <= opts.restarts; ++restart) {
    if (restart > 0) {
      std::sort(simplex.begin(), simplex.end(),
                [](const Vertex& a, const Vertex& b) { return a.fx < b.fx; });
      init_simplex(simplex[0].x, opts.initial_step * std::pow(0.1, restart));
    }
    for (int iter = 0; iter < opts.max_iter; ++iter) {
      std::sort(simplex.begin(), simplex.end(),
                [](const Vertex& a, const Vertex& b) { return a.fx < b.fx; });
      ++evals;
      result.iterations = evals;

      double spread = 0.0;
      for (int i = 1; i <= n; ++i) {
        spread = std::max(spread, (simplex[i].x - simplex[0].x).lpNorm<Eigen::Infinity>());
      }
      const double fspread = std::abs(simplex[n].fx - simplex[0].fx);
      if (spread < opts.xtol && fspread < opts.ftol) {
        result.converged = true;
        break;
      }

      Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
      for (int i = 0; i < n; ++i) centroid += simplex[i].x;
      centroid /= static_cast<double>(n);

      const Eigen::VectorXd xr = centroid + alpha * (centroid - simplex[n].x);
      const double fr = f(xr);
      if (fr < simplex[0].fx) {
        const Eigen::VectorXd xe = centroid + gamma * (xr - centroid);
        const double fe = f(xe);
        simplex[n] = fe < fr ? Vertex{xe, fe} : Vertex{xr, fr};
      } else if (fr < simplex[n - 1].fx) {
        simplex[n] = {xr, fr};
      } else {
        const Eigen::VectorXd xc = centroid + rho * (simplex[n].x - centroid);
        const double fc = f(xc);
        if (fc < simplex[n].fx) {
          simplex[n] = {xc, fc};
        } else {
          for (int i = 1; i <= n; ++i) {
            simplex[i].x = simplex[0].x + sigma * (simplex[i].x - simplex[0].x);
            simplex[i].fx = f(simplex[i].x);
          }
        }
      }
    }
  }

  std::sort(simplex.begin(), simplex.end(),
            [](const Vertex& a, const Vertex& b) { return a.fx < b.fx; });
  result.x = simplex[0].x;
  result.value = simplex[0].fx;
  return result;
}

}  // namespace contour
