#pragma once

#include <Eigen/Dense>
#include <complex>
#include <functional>
#include <vector>

namespace contour {

/// Two-mass plant: motor-side mass m1 driven by force u, load-side mass m2
/// coupled through spring k and damper c, with per-mass friction b1, b2.
/// Axes are modeled as two uncoupled copies with identical parameters.
struct PlantParams {
  double m1 = 10.0;
  double m2 = 8.0;
  double b1 = 50.0;
  double b2 = 50.0;
  double c = 400.0;
  double k = 4.0e6;

  void validate() const;
};

/// Per-axis state (z, zdot, p, pdot): motor position/velocity, load
/// position/velocity.
using PlantState = Eigen::Vector4d;

/// Continuous dynamics xdot = f(x, u) for one axis.
PlantState plant_dynamics(const PlantParams& params, const PlantState& state,
                          double u);

/// Rational function in s with ascending-power coefficient vectors.
struct TransferFunction {
  Eigen::VectorXd num;
  Eigen::VectorXd den;

  std::complex<double> at(std::complex<double> s) const;
  int relative_degree() const { return static_cast<int>(den.size() - num.size()); }
};

/// Force-to-load-position transfer function of the two-mass plant,
/// G(s) = (cs + k) / (a4 s^4 + a3 s^3 + a2 s^2 + a1 s).
TransferFunction plant_transfer_function(const PlantParams& params);

/// Fixed-step RK4 integration of one axis driven by a continuous force
/// u(t) over [0, duration]. Returns the state at every step boundary,
/// including the initial state (size = steps + 1).
std::vector<PlantState> simulate_axis(const PlantParams& params,
                                      const std::function<double(double)>& u,
                                      double duration, double h,
                                      const PlantState& x0 = PlantState::Zero());

/// Same integrator fed by force samples spaced h apart (linear interpolation
/// at RK4 substeps). Returns the load position p at each sample instant
/// (same length as `u`).
std::vector<double> simulate_sampled(const PlantParams& params,
                                     const std::vector<double>& u, double h,
                                     const PlantState& x0 = PlantState::Zero());

enum class IdentifyStatus { Converged, SimplexCollapse };

struct IdentifyResult {
  PlantParams params;
  double cost = 0.0;  // J at the returned parameters
  int iterations = 0;
  IdentifyStatus status = IdentifyStatus::Converged;
};

/// Fits w = (b1, b2, c, k) by Nelder-Mead over log-parameters, minimizing
/// J(w) = ||p - p_w||_inf + ||p - p_w||_2 across all provided axes. Masses
/// are taken from `w0` and treated as known.
IdentifyResult identify(const Eigen::MatrixXd& measured_positions,
                        const Eigen::MatrixXd& inputs, double h,
                        const PlantParams& w0);

}  // namespace contour
