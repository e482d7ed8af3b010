#pragma once

// Internal horizon-QP builders, exposed for tests and benchmarks.

#include "contour/mpcc.hpp"

namespace contour::detail {

struct SparseHorizonQp {
  QpProblem prob;  // variables [z_1..z_N | u_0..u_{N-1} | eps_1..eps_N]
  double cost_const = 0.0;
  int N = 0;
  int np = 0;
  int iz(int k) const { return (k - 1) * np; }
  int iu(int k) const { return N * np + 3 * k; }
  int ie(int k) const { return N * np + 3 * N + k - 1; }
};

SparseHorizonQp build_sparse_horizon_qp(const LtvModel& ltv,
                                        const MpccWeights& weights,
                                        const MpccLimits& limits,
                                        const Eigen::VectorXd& z0_full,
                                        const Eigen::Vector3d& u_prev);

struct CondensedHorizonQp {
  QpProblem prob;  // variables [u_0..u_{N-1} | eps_1..eps_N]
  double cost_const = 0.0;
  int N = 0;
};

CondensedHorizonQp build_condensed_horizon_qp(const LtvModel& ltv,
                                              const MpccWeights& weights,
                                              const MpccLimits& limits,
                                              const Eigen::VectorXd& z0_full,
                                              const Eigen::Vector3d& u_prev);

}  // namespace contour::detail
