#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace contour {

/// Squared-exponential ARD kernel
///   k(x, x') = signal_variance * exp(-sum_i alpha_i (x_i - x'_i)^2),
/// with alpha_i the per-dimension inverse squared length scales.
struct GpHyperparameters {
  double signal_variance = 1.0;
  Eigen::VectorXd inverse_sq_length_scales;
};

double se_kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                 const GpHyperparameters& hyper);

struct GpConfig {
  /// Observation noise variance (floored at 1e-12). When observations are
  /// standardized this is expressed in standardized units.
  double noise_variance = 1e-6;
  /// Constant prior mean, applied in the (possibly standardized) space.
  double constant_mean = 0.0;
  /// Standardize observations to zero mean / unit variance internally;
  /// posterior outputs are mapped back to original units.
  bool standardize_observations = true;
};

/// Gaussian-process regressor over inputs expected to live in the unit
/// hypercube (callers normalize with their own bounds). Immutable: `updated`
/// returns a new model sharing hyperparameters and frozen standardization
/// constants.
class GpModel {
 public:
  GpModel(Eigen::MatrixXd inputs, Eigen::VectorXd observations,
          GpHyperparameters hyper, GpConfig config = {});

  int size() const { return static_cast<int>(observations_.size()); }
  int dim() const { return static_cast<int>(inputs_.cols()); }
  const GpHyperparameters& hyper() const { return hyper_; }
  const GpConfig& config() const { return config_; }
  const Eigen::MatrixXd& inputs() const { return inputs_; }
  const Eigen::VectorXd& observations() const { return observations_; }

  struct Posterior {
    double mean = 0.0;
    double variance = 0.0;
  };
  /// Posterior mean/variance at a query point, in original observation units.
  Posterior posterior(const Eigen::VectorXd& x) const;

  /// Log marginal likelihood of the internal (standardized) observations.
  double log_marginal_likelihood() const;

  /// Returns a model with one more data point; hyperparameters and
  /// standardization constants unchanged, factorization rebuilt.
  GpModel updated(const Eigen::VectorXd& x, double observation) const;

 private:
  void factorize();

  Eigen::MatrixXd inputs_;        // m x d
  Eigen::VectorXd observations_;  // raw units
  GpHyperparameters hyper_;
  GpConfig config_;
  double obs_shift_ = 0.0;
  double obs_scale_ = 1.0;
  Eigen::VectorXd internal_obs_;
  Eigen::LLT<Eigen::MatrixXd> chol_;
  Eigen::VectorXd alpha_;  // (K + sigma^2 I)^{-1} (y - mu)
  double jitter_ = 0.0;
};

struct GpFitOptions {
  int restarts = 8;
  std::uint64_t seed = 0;
  double log_signal_lo = -4.0;
  double log_signal_hi = 4.0;
  double length_scale_lo = 0.05;
  double length_scale_hi = 10.0;
};

/// Maximizes the log marginal likelihood over (signal variance, length
/// scales) by multi-start Nelder-Mead in log space. Deterministic per seed.
GpHyperparameters fit_hyperparameters(const Eigen::MatrixXd& inputs,
                                      const Eigen::VectorXd& observations,
                                      const GpConfig& config = {},
                                      const GpFitOptions& options = {});

}  // namespace contour
