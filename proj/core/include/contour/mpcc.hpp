#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "contour/geometry.hpp"
#include "contour/lowlevel.hpp"
#include "contour/qp.hpp"

namespace contour {

/// Cost weights of the contouring program. Terminal weights default to their
/// stage counterparts; the terminal progress weight defaults to zero (the
/// stage progress reward gamma_v is the tuned knob).
struct MpccWeights {
  double gamma_c = 1e8;   // contour error weight [1/m^2]
  double gamma_l = 1e8;   // lag error weight [1/m^2]
  double gamma_ax = 1e-4;
  double gamma_ay = 1e-4;
  double gamma_jx = 1e-3;
  double gamma_jy = 1e-3;
  double gamma_v = 0.2;   // progress reward on v_s
  int horizon = 25;
  std::optional<double> gamma_c_terminal;
  std::optional<double> gamma_l_terminal;
  double gamma_s_terminal = 0.0;

  double terminal_c() const { return gamma_c_terminal.value_or(gamma_c); }
  double terminal_l() const { return gamma_l_terminal.value_or(gamma_l); }
  void validate() const;
};

struct MpccLimits {
  double velocity_max = 0.2;        // per-axis plant velocity [m/s]
  double accel_max = 20.0;          // per-axis commanded acceleration [m/s^2]
  double path_speed_max = 0.2;      // v_s in [0, path_speed_max] [m/s]
  double contour_tolerance = 20e-6;  // +- band on e_c_hat [m]
  double slack_penalty = 1e8;       // quadratic penalty on band slack
};

/// Affine one-step maps for the lag/contour error estimates at a fixed
/// linearization path parameter:
///   e_hat(k+1) = z_row * z_k + u_row * u_k + offset,
/// where z is the physical stacked state (zeta_x, r_x, rdot_x, zeta_y, r_y,
/// rdot_y, s) and u = (accel_x, accel_y, v_s).
struct ErrorRows {
  Eigen::RowVectorXd el_z, ec_z;
  Eigen::RowVector3d el_u, ec_u;
  double el_d = 0.0, ec_d = 0.0;
};

ErrorRows error_rows(const PathGeometry& geom, const ClosedLoopModel& model_x,
                     const ClosedLoopModel& model_y, double s_lin, double T);

/// Linear time-varying contouring model z(k+1) = A_k z_k + B_k u_k + d_k over
/// the full state (zeta_x, r_x, rdot_x, zeta_y, r_y, rdot_y, s, el_hat,
/// ec_hat). Only the two error rows vary with k.
struct LtvModel {
  std::vector<Eigen::MatrixXd> A;
  std::vector<Eigen::MatrixXd> B;
  std::vector<Eigen::VectorXd> d;
  Eigen::VectorXd s_lin;
  Eigen::MatrixXd Cx, Cy;  // per-axis output maps (position, velocity)
  int nx = 0, ny = 0;      // per-axis model orders
  double T = 0.0;

  int horizon() const { return static_cast<int>(A.size()); }
  int full_dim() const { return nx + ny + 7; }
  int physical_dim() const { return nx + ny + 5; }
  // index helpers into the full state
  int idx_rx() const { return nx; }
  int idx_vrx() const { return nx + 1; }
  int idx_zeta_y() const { return nx + 2; }
  int idx_ry() const { return nx + ny + 2; }
  int idx_vry() const { return nx + ny + 3; }
  int idx_s() const { return nx + ny + 4; }
  int idx_el() const { return nx + ny + 5; }
  int idx_ec() const { return nx + ny + 6; }
};

LtvModel assemble_ltv(const ClosedLoopModel& model_x, const ClosedLoopModel& model_y,
                      const PathGeometry& geom, const Eigen::VectorXd& s_seq,
                      double T);

struct HorizonSolution {
  Eigen::MatrixXd Z;  // horizon x full_dim, stages 1..N (errors propagated)
  Eigen::MatrixXd U;  // horizon x 3, stages 0..N-1
  QpStatus status = QpStatus::MaxIter;
  int iterations = 0;
  double objective = 0.0;  // including the constant cost term
};

/// QP settings tuned for the receding-horizon loop.
QpSettings mpcc_qp_settings();

/// Builds and solves the horizon QP from initial full state z0 (the two
/// trailing error entries of z0 are informational; the outputs are propagated
/// through the error rows). The QP runs over the physical states with the
/// error expressions substituted into cost and band constraints, which is an
/// exact elimination of the error states.
HorizonSolution build_and_solve_horizon(const LtvModel& ltv,
                                        const MpccWeights& weights,
                                        const MpccLimits& limits,
                                        const Eigen::VectorXd& z0,
                                        const Eigen::Vector3d& u_prev,
                                        const QpSettings& qp_settings = mpcc_qp_settings());

struct TrajectoryStep {
  double t = 0.0;
  double x = 0.0, y = 0.0;
  double xd = 0.0, yd = 0.0;
  double rx = 0.0, ry = 0.0;
  double s = 0.0;
  double el_hat = 0.0, ec_hat = 0.0;
  double ec_exact = 0.0;
  double ax = 0.0, ay = 0.0, vs = 0.0;
  double jerk_x = 0.0, jerk_y = 0.0;
};

struct SolverStats {
  long total_qp_iterations = 0;
  int max_qp_iterations = 0;
  int degraded_solves = 0;  // MaxIter results whose best iterate was applied
};

struct TrajectoryRecord {
  std::vector<TrajectoryStep> steps;
  int k_tot = 0;
  bool truncated = false;
  SolverStats stats;
};

struct RunOptions {
  int step_cap = 20000;
  /// Abort early when s advances less than stall_min_progress over
  /// stall_window steps (counts as truncated).
  int stall_window = 2000;
  double stall_min_progress = 1e-6;
  /// Abort when the position error explodes (model unstable).
  double divergence_limit = 1.0;  // [m]
  QpSettings qp;
  RunOptions() : qp(mpcc_qp_settings()) {}
};

/// Receding-horizon traversal: relinearizes along the shifted previous
/// solution, solves the horizon QP, applies the first input to the truth
/// model and advances s until s >= L (or the step cap / stall guard fires).
TrajectoryRecord run_receding_horizon(const ClosedLoopModel& model_x,
                                      const ClosedLoopModel& model_y,
                                      const PathGeometry& geom,
                                      const MpccWeights& weights,
                                      const MpccLimits& limits, double T,
                                      const RunOptions& options = {});

struct Metrics {
  double g0 = 0.0;       // traversal steps
  double g1 = 0.0;       // max |delta u| / T over both axes [m/s^3]
  double g2 = 0.0;       // max |exact contour error| [m]
  double ec_hat_inf = 0.0;
  double ec_hat_2 = 0.0;
  double time_s = 0.0;
  bool truncated = false;
};

Metrics compute_metrics(const TrajectoryRecord& record, double T);

}  // namespace contour
