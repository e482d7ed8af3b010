#include "contour/plant.hpp"

#include <cmath>
#include <stdexcept>

#include "contour/optim.hpp"

namespace contour {

void PlantParams::validate() const {
  if (!(m1 > 0.0) || !(m2 > 0.0)) {
    throw std::invalid_argument("plant masses must be positive");
  }
  if (b1 < 0.0 || b2 < 0.0 || c < 0.0 || k < 0.0) {
    throw std::invalid_argument("plant coefficients must be nonnegative");
  }
  if (b1 == 0.0 && b2 == 0.0 && c == 0.0 && k == 0.0) {
    throw std::invalid_argument("at least one of (b1,b2,c,k) must be nonzero");
  }
}

PlantState plant_dynamics(const PlantParams& p, const PlantState& x, double u) {
  const double z = x(0), zd = x(1), pp = x(2), pd = x(3);
  PlantState dx;
  dx(0) = zd;
  dx(1) = (-p.b1 * zd + p.k * (pp - z) + p.c * (pd - zd) + u) / p.m1;
  dx(2) = pd;
  dx(3) = (-p.b2 * pd + p.k * (z - pp) + p.c * (zd - pd)) / p.m2;
  return dx;
}

std::complex<double> TransferFunction::at(std::complex<double> s) const {
  std::complex<double> n = 0.0, d = 0.0, pw = 1.0;
  for (int i = 0; i < num.size() || i < den.size(); ++i) {
    if (i < num.size()) n += num(i) * pw;
    if (i < den.size()) d += den(i) * pw;
    pw *= s;
  }
  return n / d;
}

TransferFunction plant_transfer_function(const PlantParams& p) {
  p.validate();
  TransferFunction g;
  g.num.resize(2);
  g.num << p.k, p.c;
  g.den.resize(5);
  const double a1 = p.k * (p.b1 + p.b2);
  const double a2 = p.k * (p.m1 + p.m2) + p.c * (p.b1 + p.b2) + p.b1 * p.b2;
  // a3 = m1(b2+c) + m2(b1+c). Expanding the coupled equations gives the
  // m2 factor on the second term; a b2 factor would be dimensionally
  // inconsistent with a4 s^4.
  const double a3 = p.m1 * (p.b2 + p.c) + p.m2 * (p.b1 + p.c);
  const double a4 = p.m1 * p.m2;
  g.den << 0.0, a1, a2, a3, a4;
  return g;
}

namespace {

PlantState rk4_step(const PlantParams& p, const PlantState& x, double t,
                    double h, const std::function<double(double)>& u) {
  const PlantState k1 = plant_dynamics(p, x, u(t));
  const PlantState k2 = plant_dynamics(p, x + 0.5 * h * k1, u(t + 0.5 * h));
  const PlantState k3 = plant_dynamics(p, x + 0.5 * h * k2, u(t + 0.5 * h));
  const PlantState k4 = plant_dynamics(p, x + h * k3, u(t + h));
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

std::vector<PlantState> simulate_axis(const PlantParams& params,
                                      const std::function<double(double)>& u,
                                      double duration, double h,
                                      const PlantState& x0) {
  if (!(h > 0.0)) throw std::invalid_argument("simulate: step must be positive");
  params.validate();
  const int steps = static_cast<int>(std::llround(duration / h));
  std::vector<PlantState> out;
  out.reserve(steps + 1);
  PlantState x = x0;
  out.push_back(x);
  for (int i = 0; i < steps; ++i) {
    x = rk4_step(params, x, static_cast<double>(i) * h, h, u);
    out.push_back(x);
  }
  return out;
}

std::vector<double> simulate_sampled(const PlantParams& params,
                                     const std::vector<double>& u, double h,
                                     const PlantState& x0) {
  if (!(h > 0.0)) throw std::invalid_argument("simulate: step must be positive");
  for (double v : u) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("simulate: non-finite input sample");
    }
  }
  params.validate();
  const auto interp = [&](double t) {
    if (u.empty()) return 0.0;
    const double idx = t / h;
    const int i = std::clamp(static_cast<int>(idx), 0,
                             static_cast<int>(u.size()) - 1);
    const int j = std::min<int>(i + 1, static_cast<int>(u.size()) - 1);
    const double frac = std::clamp(idx - static_cast<double>(i), 0.0, 1.0);
    return u[i] + frac * (u[j] - u[i]);
  };
  std::vector<double> p;
  p.reserve(u.size());
  PlantState x = x0;
  p.push_back(x(2));
  for (size_t i = 0; i + 1 < u.size(); ++i) {
    x = rk4_step(params, x, static_cast<double>(i) * h, h, interp);
    p.push_back(x(2));
  }
  return p;
}

namespace {

double identification_cost(const PlantParams& candidate,
                           const Eigen::MatrixXd& measured,
                           const Eigen::MatrixXd& inputs, double h) {
  double inf_norm = 0.0, sq = 0.0;
  for (int axis = 0; axis < measured.cols(); ++axis) {
    std::vector<double> u(inputs.rows());
    for (int i = 0; i < inputs.rows(); ++i) u[i] = inputs(i, axis);
    const std::vector<double> pw = simulate_sampled(candidate, u, h);
    for (int i = 0; i < measured.rows(); ++i) {
      const double e = measured(i, axis) - pw[i];
      inf_norm = std::max(inf_norm, std::abs(e));
      sq += e * e;
    }
  }
  return inf_norm + std::sqrt(sq);
}

}  // namespace

IdentifyResult identify(const Eigen::MatrixXd& measured_positions,
                        const Eigen::MatrixXd& inputs, double h,
                        const PlantParams& w0) {
  if (measured_positions.rows() != inputs.rows() ||
      measured_positions.cols() != inputs.cols()) {
    throw std::invalid_argument("identify: measured/input size mismatch");
  }
  if (!(w0.b1 > 0.0 && w0.b2 > 0.0 && w0.c > 0.0 && w0.k > 0.0)) {
    throw std::invalid_argument("identify: initial guess must be positive");
  }

  const auto unpack = [&](const Eigen::VectorXd& lw) {
    PlantParams p = w0;
    p.b1 = std::exp(lw(0));
    p.b2 = std::exp(lw(1));
    p.c = std::exp(lw(2));
    p.k = std::exp(lw(3));
    return p;
  };
  const auto cost = [&](const Eigen::VectorXd& lw) {
    return identification_cost(unpack(lw), measured_positions, inputs, h);
  };

  Eigen::VectorXd x0(4);
  x0 << std::log(w0.b1), std::log(w0.b2), std::log(w0.c), std::log(w0.k);

  NelderMeadOptions opts;
  opts.initial_step = 0.25;
  opts.max_iter = 4000;
  opts.xtol = 1e-12;
  opts.ftol = 1e-14;
  opts.restarts = 2;
  const NelderMeadResult r = nelder_mead(cost, x0, opts);

  IdentifyResult out;
  out.params = unpack(r.x);
  out.cost = r.value;
  out.iterations = r.iterations;
  out.status = r.converged ? IdentifyStatus::Converged
                           : IdentifyStatus::SimplexCollapse;
  // Never report a point worse than the initial guess.
  const double j0 = cost(x0);
  if (j0 < out.cost) {
    out.params = w0;
    out.cost = j0;
  }
  return out;
}

}  // namespace contour
