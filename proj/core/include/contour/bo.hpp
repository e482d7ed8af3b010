#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "contour/gp.hpp"

namespace contour {

/// One search dimension: natural-unit bounds plus scaling flags. Log-scaled
/// dimensions are sampled and modeled in log space; integer dimensions are
/// relaxed during search and rounded at evaluation time.
struct DimSpec {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
  bool log_scale = false;
  bool integer = false;
};

/// Joint design vector layout:
/// (gamma_c, gamma_l, gamma_ax, gamma_ay, gamma_jx, gamma_jy, gamma_v, N, Kp, Kv).
struct TuningBounds {
  std::array<DimSpec, 10> dims;

  static constexpr int kGammaC = 0, kGammaL = 1, kGammaAx = 2, kGammaAy = 3,
                       kGammaJx = 4, kGammaJy = 5, kGammaV = 6, kHorizon = 7,
                       kKp = 8, kKv = 9;

  /// Default search ranges used by the experiment regimes.
  static TuningBounds defaults();
};

/// Latin hypercube design: m points in natural units, one sample per
/// equal-width stratum per dimension, deterministic per seed.
Eigen::MatrixXd latin_hypercube(const std::vector<DimSpec>& bounds, int m,
                                std::uint64_t seed);

/// Expected improvement for minimization, E[max(incumbent - F, 0)] under a
/// normal posterior.
double expected_improvement(double mean, double variance, double incumbent);

/// EI weighted by the posterior probability that each constraint surrogate
/// stays below its threshold. Infinite thresholds contribute factor 1.
double constrained_ei(const Eigen::VectorXd& x, const GpModel& cost_gp,
                      const GpModel& g1_gp, const GpModel& g2_gp,
                      double threshold1, double threshold2, double incumbent);

struct PsoSettings {
  int particles = 64;
  int iters = 200;
  double inertia = 0.729;
  double c1 = 1.494;
  double c2 = 1.494;
  std::uint64_t seed = 0;
};

/// Global maximization of f over a box by particle swarm. Positions are
/// clamped to the bounds; integer dimensions are rounded on return only.
Eigen::VectorXd pso_maximize(const std::function<double(const Eigen::VectorXd&)>& f,
                             const std::vector<DimSpec>& bounds,
                             const PsoSettings& settings = {});

constexpr double kNoThreshold = std::numeric_limits<double>::infinity();

struct BoConfig {
  int m_init = 20;
  int max_iter = 60;
  double threshold1 = 2000.0;  // max jerk [m/s^3]
  double threshold2 = 5e-6;    // max contour deviation [m]
  std::uint64_t seed = 0;
  std::array<double, 3> noise_std = {0.0, 0.0, 0.0};  // injected per metric
  double gp_noise_variance = 1e-6;
  GpFitOptions fit;
  PsoSettings pso;
  /// Off by default: refit kernel hyperparameters at every iteration.
  bool refit_each_iteration = false;
};

struct BoRecord {
  int m = 0;                // 1-based experiment index
  Eigen::VectorXd theta;    // natural units, integer dims rounded
  double xi0 = 0.0, xi1 = 0.0, xi2 = 0.0;
  bool feasible = false;
  double incumbent = 0.0;   // best cost after this evaluation
  bool penalized = false;   // oracle failure replaced by penalty values
};

struct BoResult {
  Eigen::VectorXd best_theta;
  double best_cost = 0.0;
  bool best_feasible = false;
  std::vector<BoRecord> history;
};

/// theta -> (xi0, xi1, xi2); may throw to signal a failed experiment.
using BoOracle = std::function<std::array<double, 3>(const Eigen::VectorXd&)>;

/// Constrained Bayesian optimization: LHS initialization, one NLML
/// hyperparameter fit on the initial set, then CEI proposals maximized by
/// particle swarm until max_iter evaluations in total.
BoResult tune(const BoOracle& oracle, const std::vector<DimSpec>& bounds,
              const BoConfig& config);

}  // namespace contour
