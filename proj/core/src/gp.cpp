#include "contour/gp.hpp"

#include <cmath>
#include <stdexcept>

#include "contour/optim.hpp"
#include "contour/rng.hpp"

namespace contour {

double se_kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                 const GpHyperparameters& hyper) {
  double d2 = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    const double diff = a(i) - b(i);
    d2 += hyper.inverse_sq_length_scales(i) * diff * diff;
  }
  return hyper.signal_variance * std::exp(-d2);
}

GpModel::GpModel(Eigen::MatrixXd inputs, Eigen::VectorXd observations,
                 GpHyperparameters hyper, GpConfig config)
    : inputs_(std::move(inputs)),
      observations_(std::move(observations)),
      hyper_(std::move(hyper)),
      config_(config) {
  if (inputs_.rows() != observations_.size() || observations_.size() < 1) {
    throw std::invalid_argument("gp: inputs/observations size mismatch");
  }
  if (!(hyper_.signal_variance > 0.0) ||
      hyper_.inverse_sq_length_scales.size() != inputs_.cols() ||
      (hyper_.inverse_sq_length_scales.array() <= 0.0).any()) {
    throw std::invalid_argument("gp: invalid hyperparameters");
  }
  if (config_.standardize_observations) {
    obs_shift_ = observations_.mean();
    const double var =
        (observations_.array() - obs_shift_).square().sum() /
        std::max(1, static_cast<int>(observations_.size()));
    obs_scale_ = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  factorize();
}

void GpModel::factorize() {
  const int m = size();
  internal_obs_ = (observations_.array() - obs_shift_) / obs_scale_;
  Eigen::MatrixXd K(m, m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j <= i; ++j) {
      const double v = se_kernel(inputs_.row(i), inputs_.row(j), hyper_);
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  const double sigma2 = std::max(config_.noise_variance, 1e-12);
  // Jitter escalation 1e-12 -> 1e-6 on Cholesky failure.
  for (double jitter : {0.0, 1e-12, 1e-10, 1e-8, 1e-6}) {
    Eigen::MatrixXd Kn = K;
    Kn.diagonal().array() += sigma2 + jitter;
    chol_.compute(Kn);
    if (chol_.info() == Eigen::Success) {
      jitter_ = jitter;
      const Eigen::VectorXd r =
          (internal_obs_.array() - config_.constant_mean).matrix();
      alpha_ = chol_.solve(r);
      return;
    }
  }
  throw std::runtime_error("gp: Cholesky failed after jitter escalation");
}

GpModel::Posterior GpModel::posterior(const Eigen::VectorXd& x) const {
  const int m = size();
  Eigen::VectorXd kv(m);
  for (int i = 0; i < m; ++i) kv(i) = se_kernel(x, inputs_.row(i), hyper_);
  const double mean_internal = config_.constant_mean + kv.dot(alpha_);
  const Eigen::VectorXd w = chol_.solve(kv);
  double var_internal = hyper_.signal_variance - kv.dot(w);
  var_internal = std::max(var_internal, 0.0);
  Posterior p;
  p.mean = mean_internal * obs_scale_ + obs_shift_;
  p.variance = var_internal * obs_scale_ * obs_scale_;
  return p;
}

double GpModel::log_marginal_likelihood() const {
  const int m = size();
  const Eigen::VectorXd r =
      (internal_obs_.array() - config_.constant_mean).matrix();
  double logdet = 0.0;
  const auto& L = chol_.matrixLLT();
  for (int i = 0; i < m; ++i) logdet += 2.0 * std::log(L(i, i));
  return -0.5 * r.dot(alpha_) - 0.5 * logdet -
         0.5 * static_cast<double>(m) * std::log(2.0 * 3.14159265358979323846);
}

GpModel GpModel::updated(const Eigen::VectorXd& x, double observation) const {
  if (!x.allFinite() || !std::isfinite(observation)) {
    throw std::invalid_argument("gp update: non-finite data");
  }
  GpModel next = *this;
  next.inputs_.conservativeResize(size() + 1, Eigen::NoChange);
  next.inputs_.row(size()) = x.transpose();
  next.observations_.conservativeResize(size() + 1);
  next.observations_(size()) = observation;
  // standardization constants intentionally frozen
  next.factorize();
  return next;
}

GpHyperparameters fit_hyperparameters(const Eigen::MatrixXd& inputs,
                                      const Eigen::VectorXd& observations,
                                      const GpConfig& config,
                                      const GpFitOptions& options) {
  if (inputs.rows() < 2) {
    throw std::invalid_argument("gp fit: need at least two observations");
  }
  const int d = static_cast<int>(inputs.cols());
  const double log_ls_lo = std::log(options.length_scale_lo);
  const double log_ls_hi = std::log(options.length_scale_hi);

  const auto unpack = [&](const Eigen::VectorXd& v) {
    GpHyperparameters h;
    h.signal_variance =
        std::exp(std::clamp(v(0), options.log_signal_lo, options.log_signal_hi));
    h.inverse_sq_length_scales.resize(d);
    for (int i = 0; i < d; ++i) {
      const double ls = std::exp(std::clamp(v(1 + i), log_ls_lo, log_ls_hi));
      h.inverse_sq_length_scales(i) = 1.0 / (ls * ls);
    }
    return h;
  };

  const auto neg_lml = [&](const Eigen::VectorXd& v) {
    // soft barrier keeps the simplex near the box
    double penalty = 0.0;
    const auto bound = [&](double x, double lo, double hi) {
      if (x < lo) penalty += 1e3 * (lo - x) * (lo - x);
      if (x > hi) penalty += 1e3 * (x - hi) * (x - hi);
    };
    bound(v(0), options.log_signal_lo, options.log_signal_hi);
    for (int i = 0; i < d; ++i) bound(v(1 + i), log_ls_lo, log_ls_hi);
    try {
      GpModel model(inputs, observations, unpack(v), config);
      return -model.log_marginal_likelihood() + penalty;
    } catch (const std::runtime_error&) {
      return 1e12;
    }
  };

  Rng rng(options.seed);
  double best = 1e300;
  Eigen::VectorXd best_v;
  int failures = 0;
  for (int s = 0; s < std::max(1, options.restarts); ++s) {
    Eigen::VectorXd v0(1 + d);
    if (s == 0) {
      v0.setZero();  // unit signal variance, unit length scales
    } else {
      v0(0) = rng.uniform(options.log_signal_lo, options.log_signal_hi);
      for (int i = 0; i < d; ++i) v0(1 + i) = rng.uniform(log_ls_lo, log_ls_hi);
    }
    if (neg_lml(v0) >= 1e12) {
      ++failures;
      continue;
    }
    NelderMeadOptions nm;
    nm.initial_step = 0.5;
    nm.max_iter = 400;
    nm.xtol = 1e-8;
    nm.ftol = 1e-10;
    nm.restarts = 0;
    const NelderMeadResult r = nelder_mead(neg_lml, v0, nm);
    if (r.value < best) {
      best = r.value;
      best_v = r.x;
    }
  }
  if (best_v.size() == 0) {
    throw std::runtime_error("gp fit: all starts failed Cholesky");
  }
  return unpack(best_v);
}

}  // namespace contour
