#pragma once

#include <Eigen/Dense>

#include "contour/plant.hpp"

namespace contour {

/// Closed-loop transfer functions of the cascade law u = Kv(Kp e_p + e_v):
/// [p; v] = (1/H) [H1 H2; sH1 sH2] [p_ref; v_ref] with H1 = Kv Kp G,
/// H2 = Kv G, H = Kv s G + 1 + Kv Kp G. All three share den(G).
struct ClosedLoopTf {
  TransferFunction h1;
  TransferFunction h2;
  TransferFunction h;
  double kp = 0.0;
  double kv = 0.0;
};

ClosedLoopTf closed_loop_tf(const TransferFunction& g, double kp, double kv);

/// Continuous LTI realization xdot = A x + B u, y = C x.
struct StateSpace {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  Eigen::MatrixXd C;
};

/// State-space realization of the 2-input (p_ref, v_ref) / 2-output (p, v)
/// closed loop. Uses a single balanced companion chain when the two
/// reference channels are proportional (the cascade structure guarantees
/// H2 = H1 / Kp), otherwise stacks one chain per input.
StateSpace realize_closed_loop(const ClosedLoopTf& tf);

/// Zero-order-hold discretization of the closed loop at sampling time T.
struct ClosedLoopModel {
  Eigen::MatrixXd A;   // n x n
  Eigen::MatrixXd B;   // n x 2
  Eigen::MatrixXd C;   // 2 x n, rows (position, velocity)
  Eigen::MatrixXd Ac;  // continuous-time counterparts, kept for analysis
  Eigen::MatrixXd Bc;
  double kp = 0.0;
  double kv = 0.0;
  double T = 2.5e-3;
  double spectral_radius = 0.0;
  bool stable = false;

  int order() const { return static_cast<int>(A.rows()); }

  /// One sample step: returns the next state; `outputs` (optional) receives
  /// C * state of the *current* state.
  Eigen::VectorXd step(const Eigen::VectorXd& state,
                       const Eigen::Vector2d& refs) const;

  Eigen::Vector2d outputs(const Eigen::VectorXd& state) const { return C * state; }

  /// State whose outputs hold (position, 0) under constant refs (position, 0).
  Eigen::VectorXd steady_state(double position) const;
};

ClosedLoopModel discretize(const ClosedLoopTf& tf, double T);

/// Convenience: plant -> cascade -> ZOH model in one call.
ClosedLoopModel build_closed_loop(const PlantParams& plant, double kp, double kv,
                                  double T);

}  // namespace contour
