#include "contour/bo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "contour/log.hpp"
#include "contour/rng.hpp"

namespace contour {

TuningBounds TuningBounds::defaults() {
  TuningBounds b;
  b.dims[kGammaC] = {"gamma_c", 1e5, 1e10, true, false};
  b.dims[kGammaL] = {"gamma_l", 1e5, 1e10, true, false};
  b.dims[kGammaAx] = {"gamma_ax", 1e-6, 1e-1, true, false};
  b.dims[kGammaAy] = {"gamma_ay", 1e-6, 1e-1, true, false};
  b.dims[kGammaJx] = {"gamma_jx", 1e-5, 1.0, true, false};
  b.dims[kGammaJy] = {"gamma_jy", 1e-5, 1.0, true, false};
  b.dims[kGammaV] = {"gamma_v", 1e-3, 10.0, true, false};
  b.dims[kHorizon] = {"horizon", 10.0, 40.0, false, true};
  b.dims[kKp] = {"kp", 20.0, 300.0, false, false};
  b.dims[kKv] = {"kv", 200.0, 1800.0, false, false};
  return b;
}

namespace {

// Map between natural units and the unit cube used by the surrogates.
double to_unit(const DimSpec& d, double v) {
  if (d.log_scale) {
    return (std::log(v) - std::log(d.lower)) /
           (std::log(d.upper) - std::log(d.lower));
  }
  return (v - d.lower) / (d.upper - d.lower);
}

double from_unit(const DimSpec& d, double z) {
  z = std::clamp(z, 0.0, 1.0);
  double v = d.log_scale
                 ? std::exp(std::log(d.lower) +
                            z * (std::log(d.upper) - std::log(d.lower)))
                 : d.lower + z * (d.upper - d.lower);
  if (d.integer) v = std::round(v);
  return std::clamp(v, d.lower, d.upper);
}

}  // namespace

Eigen::MatrixXd latin_hypercube(const std::vector<DimSpec>& bounds, int m,
                                std::uint64_t seed) {
  if (m < 1) throw std::invalid_argument("latin_hypercube: m must be >= 1");
  const int d = static_cast<int>(bounds.size());
  Rng rng(seed);
  Eigen::MatrixXd points(m, d);
  std::vector<int> perm(m);
  for (int j = 0; j < d; ++j) {
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    for (int i = 0; i < m; ++i) {
      const double z =
          (static_cast<double>(perm[i]) + rng.uniform()) / static_cast<double>(m);
      points(i, j) = from_unit(bounds[j], z);
    }
  }
  return points;
}

double expected_improvement(double mean, double variance, double incumbent) {
  const double sigma = std::sqrt(std::max(variance, 0.0));
  if (sigma < 1e-12) return std::max(incumbent - mean, 0.0);
  const double z = (incumbent - mean) / sigma;
  return sigma * (z * normal_cdf(z) + normal_pdf(z));
}

namespace {

double feasibility_factor(const GpModel& gp, const Eigen::VectorXd& x,
                          double threshold) {
  if (std::isinf(threshold)) return 1.0;
  const GpModel::Posterior p = gp.posterior(x);
  if (p.variance < 1e-24) return p.mean <= threshold ? 1.0 : 0.0;
  return normal_cdf((threshold - p.mean) / std::sqrt(p.variance));
}

}  // namespace

double constrained_ei(const Eigen::VectorXd& x, const GpModel& cost_gp,
                      const GpModel& g1_gp, const GpModel& g2_gp,
                      double threshold1, double threshold2, double incumbent) {
  const GpModel::Posterior p0 = cost_gp.posterior(x);
  const double ei = expected_improvement(p0.mean, p0.variance, incumbent);
  return ei * feasibility_factor(g1_gp, x, threshold1) *
         feasibility_factor(g2_gp, x, threshold2);
}

Eigen::VectorXd pso_maximize(const std::function<double(const Eigen::VectorXd&)>& f,
                             const std::vector<DimSpec>& bounds,
                             const PsoSettings& st) {
  const int d = static_cast<int>(bounds.size());
  for (const auto& b : bounds) {
    if (!(b.lower < b.upper)) {
      throw std::invalid_argument("pso: lower must be < upper");
    }
  }
  Rng rng(st.seed);
  Eigen::MatrixXd pos(st.particles, d), vel(st.particles, d), pbest(st.particles, d);
  Eigen::VectorXd pbest_val(st.particles);
  Eigen::VectorXd gbest(d);
  double gbest_val = -std::numeric_limits<double>::infinity();

  for (int i = 0; i < st.particles; ++i) {
    for (int j = 0; j < d; ++j) {
      pos(i, j) = rng.uniform(bounds[j].lower, bounds[j].upper);
      vel(i, j) = 0.0;
    }
    const double v = f(pos.row(i));
    pbest.row(i) = pos.row(i);
    pbest_val(i) = v;
    if (v > gbest_val) {
      gbest_val = v;
      gbest = pos.row(i);
    }
  }

  for (int iter = 0; iter < st.iters; ++iter) {
    for (int i = 0; i < st.particles; ++i) {
      for (int j = 0; j < d; ++j) {
        const double r1 = rng.uniform(), r2 = rng.uniform();
        vel(i, j) = st.inertia * vel(i, j) +
                    st.c1 * r1 * (pbest(i, j) - pos(i, j)) +
                    st.c2 * r2 * (gbest(j) - pos(i, j));
        pos(i, j) = std::clamp(pos(i, j) + vel(i, j), bounds[j].lower,
                               bounds[j].upper);
      }
      const double v = f(pos.row(i));
      if (v > pbest_val(i)) {
        pbest_val(i) = v;
        pbest.row(i) = pos.row(i);
        if (v > gbest_val) {
          gbest_val = v;
          gbest = pos.row(i);
        }
      }
    }
  }
  for (int j = 0; j < d; ++j) {
    if (bounds[j].integer) {
      gbest(j) = std::clamp(std::round(gbest(j)), bounds[j].lower, bounds[j].upper);
    }
  }
  return gbest;
}

namespace {

struct Dataset {
  Eigen::MatrixXd z;           // unit-cube inputs, one row per experiment
  std::vector<Eigen::VectorXd> theta;
  std::vector<std::array<double, 3>> xi;
  std::vector<bool> penalized;

  int size() const { return static_cast<int>(xi.size()); }

  double worst_cost() const {
    double w = 1.0;
    for (const auto& row : xi) w = std::max(w, row[0]);
    return w;
  }
  double worst_metric(int j) const {
    double w = 0.0;
    for (const auto& row : xi) w = std::max(w, std::abs(row[j]));
    return w;
  }
};

bool is_feasible(const std::array<double, 3>& xi, const BoConfig& cfg) {
  return xi[1] <= cfg.threshold1 && xi[2] <= cfg.threshold2;
}

// Incumbent: minimal observed cost among feasible points; the overall
// minimum when nothing is feasible yet (the CEI feasibility factors carry
// the constraint pressure in that phase).
double incumbent_cost(const Dataset& data, const BoConfig& cfg) {
  double best_feasible = std::numeric_limits<double>::infinity();
  double best_any = std::numeric_limits<double>::infinity();
  for (const auto& row : data.xi) {
    best_any = std::min(best_any, row[0]);
    if (is_feasible(row, cfg)) best_feasible = std::min(best_feasible, row[0]);
  }
  return std::isfinite(best_feasible) ? best_feasible : best_any;
}

}  // namespace

BoResult tune(const BoOracle& oracle, const std::vector<DimSpec>& bounds,
              const BoConfig& cfg) {
  const int d = static_cast<int>(bounds.size());
  if (cfg.m_init < 2) throw std::invalid_argument("tune: m_init must be >= 2");
  if (cfg.max_iter < cfg.m_init) {
    throw std::invalid_argument("tune: max_iter must be >= m_init");
  }

  Rng noise_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Dataset data;
  data.z.resize(0, d);
  BoResult result;

  const auto theta_of_z = [&](const Eigen::VectorXd& z) {
    Eigen::VectorXd th(d);
    for (int j = 0; j < d; ++j) th(j) = from_unit(bounds[j], z(j));
    return th;
  };

  const auto evaluate = [&](const Eigen::VectorXd& z) {
    const Eigen::VectorXd th = theta_of_z(z);
    std::array<double, 3> xi{};
    bool penalized = false;
    try {
      xi = oracle(th);
      if (!std::isfinite(xi[0]) || !std::isfinite(xi[1]) || !std::isfinite(xi[2])) {
        penalized = true;
      }
    } catch (const std::exception& e) {
      log::info("oracle failure at proposal: %s", e.what());
      penalized = true;
    }
    if (penalized) {
      xi[0] = 1.5 * data.worst_cost();
      xi[1] = std::isfinite(cfg.threshold1) ? 2.0 * cfg.threshold1
                                            : 2.0 * std::max(1.0, data.worst_metric(1));
      xi[2] = std::isfinite(cfg.threshold2) ? 2.0 * cfg.threshold2
                                            : 2.0 * std::max(1.0, data.worst_metric(2));
    }
    for (int j = 0; j < 3; ++j) {
      if (cfg.noise_std[j] > 0.0) xi[j] += cfg.noise_std[j] * noise_rng.normal();
    }
    data.z.conservativeResize(data.size() + 1, Eigen::NoChange);
    data.z.row(data.size()) = z.transpose();
    data.theta.push_back(th);
    data.xi.push_back(xi);
    data.penalized.push_back(penalized);

    BoRecord rec;
    rec.m = data.size();
    rec.theta = th;
    rec.xi0 = xi[0];
    rec.xi1 = xi[1];
    rec.xi2 = xi[2];
    rec.feasible = is_feasible(xi, cfg);
    rec.incumbent = incumbent_cost(data, cfg);
    rec.penalized = penalized;
    result.history.push_back(rec);
  };

  // Latin hypercube initialization in the unit cube.
  {
    std::vector<DimSpec> unit(d);
    for (int j = 0; j < d; ++j) unit[j] = {bounds[j].name, 0.0, 1.0, false, false};
    const Eigen::MatrixXd Z0 = latin_hypercube(unit, cfg.m_init, cfg.seed);
    for (int i = 0; i < cfg.m_init; ++i) evaluate(Z0.row(i));
  }

  // One hyperparameter fit per surrogate on the initial design; kept fixed
  // afterwards unless refit_each_iteration is set.
  GpConfig gp_cfg;
  gp_cfg.noise_variance = cfg.gp_noise_variance;
  const auto obs_vector = [&](int j) {
    Eigen::VectorXd v(data.size());
    for (int i = 0; i < data.size(); ++i) v(i) = data.xi[i][j];
    return v;
  };
  std::array<GpHyperparameters, 3> hyper;
  for (int j = 0; j < 3; ++j) {
    GpFitOptions fo = cfg.fit;
    fo.seed = cfg.seed + 101 * (j + 1);
    hyper[j] = fit_hyperparameters(data.z, obs_vector(j), gp_cfg, fo);
  }

  std::vector<DimSpec> unit(d);
  for (int j = 0; j < d; ++j) unit[j] = {bounds[j].name, 0.0, 1.0, false, false};

  for (int m = cfg.m_init; m < cfg.max_iter; ++m) {
    if (cfg.refit_each_iteration && m > cfg.m_init) {
      for (int j = 0; j < 3; ++j) {
        GpFitOptions fo = cfg.fit;
        fo.seed = cfg.seed + 101 * (j + 1) + 7919ULL * m;
        hyper[j] = fit_hyperparameters(data.z, obs_vector(j), gp_cfg, fo);
      }
    }
    const GpModel gp0(data.z, obs_vector(0), hyper[0], gp_cfg);
    const GpModel gp1(data.z, obs_vector(1), hyper[1], gp_cfg);
    const GpModel gp2(data.z, obs_vector(2), hyper[2], gp_cfg);
    const double incumbent = incumbent_cost(data, cfg);

    PsoSettings pso = cfg.pso;
    pso.seed = cfg.seed + 31ULL * (m + 1);
    const auto acquisition = [&](const Eigen::VectorXd& z) {
      return constrained_ei(z, gp0, gp1, gp2, cfg.threshold1, cfg.threshold2,
                            incumbent);
    };
    const Eigen::VectorXd z_next = pso_maximize(acquisition, unit, pso);
    evaluate(z_next);
  }

  // Best observed feasible point, else best overall.
  int best = -1;
  for (int i = 0; i < data.size(); ++i) {
    const bool feas = is_feasible(data.xi[i], cfg);
    if (best < 0) {
      best = i;
      continue;
    }
    const bool best_feas = is_feasible(data.xi[best], cfg);
    if (feas && !best_feas) {
      best = i;
    } else if (feas == best_feas && data.xi[i][0] < data.xi[best][0]) {
      best = i;
    }
  }
  result.best_theta = data.theta[best];
  result.best_cost = data.xi[best][0];
  result.best_feasible = is_feasible(data.xi[best], cfg);
  return result;
}

}  // namespace contour
