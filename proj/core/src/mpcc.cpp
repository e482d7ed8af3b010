#include "contour/mpcc.hpp"

#include "contour/mpcc_detail.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "contour/log.hpp"

namespace contour {

void MpccWeights::validate() const {
  if (gamma_c < 0 || gamma_l < 0 || gamma_ax < 0 || gamma_ay < 0 ||
      gamma_jx < 0 || gamma_jy < 0 || gamma_v < 0 || terminal_c() < 0 ||
      terminal_l() < 0) {
    throw std::invalid_argument("mpcc weights must be nonnegative");
  }
  if (horizon < 2) throw std::invalid_argument("mpcc horizon must be >= 2");
}

QpSettings mpcc_qp_settings() {
  QpSettings s;
  s.eps_abs = 1e-6;
  s.eps_rel = 1e-6;
  s.max_iter = 60000;
  s.polish = true;
  return s;
}

ErrorRows error_rows(const PathGeometry& geom, const ClosedLoopModel& model_x,
                     const ClosedLoopModel& model_y, double s_lin, double T) {
  const PathSample ps = geom.eval(s_lin);
  const Eigen::Vector2d t = ps.tangent;  // unit by construction
  const Eigen::Vector2d n(-t.y(), t.x());
  const int nx = model_x.order();
  const int ny = model_y.order();
  const int np = nx + ny + 5;

  // coefficient of zeta in (position + T * velocity)
  const Eigen::RowVectorXd gx = model_x.C.row(0) + T * model_x.C.row(1);
  const Eigen::RowVectorXd gy = model_y.C.row(0) + T * model_y.C.row(1);

  ErrorRows er;
  er.el_z = Eigen::RowVectorXd::Zero(np);
  er.ec_z = Eigen::RowVectorXd::Zero(np);
  er.el_z.segment(0, nx) = -t.x() * gx;
  er.el_z.segment(nx + 2, ny) = -t.y() * gy;
  er.ec_z.segment(0, nx) = -n.x() * gx;
  er.ec_z.segment(nx + 2, ny) = -n.y() * gy;
  er.el_u << -0.5 * T * T * t.x(), -0.5 * T * T * t.y(), T;
  er.ec_u << -0.5 * T * T * n.x(), -0.5 * T * T * n.y(), 0.0;
  er.el_d = t.dot(ps.position);
  er.ec_d = n.dot(ps.position);
  return er;
}

LtvModel assemble_ltv(const ClosedLoopModel& model_x, const ClosedLoopModel& model_y,
                      const PathGeometry& geom, const Eigen::VectorXd& s_seq,
                      double T) {
  if (s_seq.size() < 1) {
    throw std::invalid_argument("assemble_ltv: empty linearization sequence");
  }
  if (model_x.B.cols() != 2 || model_y.B.cols() != 2 || model_x.C.rows() != 2 ||
      model_y.C.rows() != 2) {
    throw std::invalid_argument("assemble_ltv: model dimension mismatch");
  }
  LtvModel ltv;
  ltv.nx = model_x.order();
  ltv.ny = model_y.order();
  ltv.Cx = model_x.C;
  ltv.Cy = model_y.C;
  ltv.T = T;
  ltv.s_lin = s_seq;
  const int N = static_cast<int>(s_seq.size());
  const int nz = ltv.full_dim();
  const int nx = ltv.nx, ny = ltv.ny;

  Eigen::MatrixXd A0 = Eigen::MatrixXd::Zero(nz, nz);
  Eigen::MatrixXd B0 = Eigen::MatrixXd::Zero(nz, 3);
  // x axis: the closed loop consumes the current references
  A0.block(0, 0, nx, nx) = model_x.A;
  A0.block(0, ltv.idx_rx(), nx, 1) = model_x.B.col(0);
  A0.block(0, ltv.idx_vrx(), nx, 1) = model_x.B.col(1);
  // reference double integrator driven by the commanded acceleration
  A0(ltv.idx_rx(), ltv.idx_rx()) = 1.0;
  A0(ltv.idx_rx(), ltv.idx_vrx()) = T;
  B0(ltv.idx_rx(), 0) = 0.5 * T * T;
  A0(ltv.idx_vrx(), ltv.idx_vrx()) = 1.0;
  B0(ltv.idx_vrx(), 0) = T;
  // y axis
  A0.block(ltv.idx_zeta_y(), ltv.idx_zeta_y(), ny, ny) = model_y.A;
  A0.block(ltv.idx_zeta_y(), ltv.idx_ry(), ny, 1) = model_y.B.col(0);
  A0.block(ltv.idx_zeta_y(), ltv.idx_vry(), ny, 1) = model_y.B.col(1);
  A0(ltv.idx_ry(), ltv.idx_ry()) = 1.0;
  A0(ltv.idx_ry(), ltv.idx_vry()) = T;
  B0(ltv.idx_ry(), 1) = 0.5 * T * T;
  A0(ltv.idx_vry(), ltv.idx_vry()) = 1.0;
  B0(ltv.idx_vry(), 1) = T;
  // path parameter
  A0(ltv.idx_s(), ltv.idx_s()) = 1.0;
  B0(ltv.idx_s(), 2) = T;

  ltv.A.reserve(N);
  ltv.B.reserve(N);
  ltv.d.reserve(N);
  for (int k = 0; k < N; ++k) {
    Eigen::MatrixXd Ak = A0;
    Eigen::MatrixXd Bk = B0;
    Eigen::VectorXd dk = Eigen::VectorXd::Zero(nz);
    const ErrorRows er = error_rows(geom, model_x, model_y, s_seq(k), T);
    Ak.row(ltv.idx_el()).head(ltv.physical_dim()) = er.el_z;
    Ak.row(ltv.idx_ec()).head(ltv.physical_dim()) = er.ec_z;
    Bk.row(ltv.idx_el()) = er.el_u;
    Bk.row(ltv.idx_ec()) = er.ec_u;
    dk(ltv.idx_el()) = er.el_d;
    dk(ltv.idx_ec()) = er.ec_d;
    ltv.A.push_back(std::move(Ak));
    ltv.B.push_back(std::move(Bk));
    ltv.d.push_back(std::move(dk));
  }
  return ltv;
}

namespace detail {

// Horizon QP over the physical states with the error expressions substituted
// into cost and band rows (exact elimination of the two error states, which
// otherwise produce stiff equalities the operator-splitting solver crawls
// on). All structurally-possible entries are emplaced every build, so the
// sparsity pattern is identical across receding-horizon steps.
SparseHorizonQp build_sparse_horizon_qp(const LtvModel& ltv, const MpccWeights& w,
                                        const MpccLimits& lim,
                                        const Eigen::VectorXd& z0_full,
                                        const Eigen::Vector3d& u_prev) {
  const int N = ltv.horizon();
  const int np = ltv.physical_dim();
  const int nx = ltv.nx, ny = ltv.ny;
  SparseHorizonQp lay;
  lay.N = N;
  lay.np = np;
  const int nv = N * np + 4 * N;
  const Eigen::VectorXd z0 = z0_full.head(np);

  std::vector<Eigen::Triplet<double>> pt;
  Eigen::VectorXd q = Eigen::VectorXd::Zero(nv);
  double cconst = 0.0;
  std::vector<Eigen::Triplet<double>> at;
  std::vector<double> lo, up;
  const auto new_row = [&] { return static_cast<int>(lo.size()); };

  // ---- dynamics equalities over physical states ----
  const Eigen::MatrixXd& A0 = ltv.A[0];
  const Eigen::MatrixXd& B0 = ltv.B[0];
  for (int k = 0; k < N; ++k) {
    for (int i = 0; i < np; ++i) {
      const int r = new_row();
      at.emplace_back(r, lay.iz(k + 1) + i, 1.0);
      if (k > 0) {
        for (int j = 0; j < np; ++j) {
          const double v = A0(i, j);
          if (v != 0.0) at.emplace_back(r, lay.iz(k) + j, -v);
        }
      }
      for (int j = 0; j < 3; ++j) {
        const double v = B0(i, j);
        if (v != 0.0) at.emplace_back(r, lay.iu(k) + j, -v);
      }
      const double rhs = k == 0 ? A0.row(i).head(np).dot(z0) : 0.0;
      lo.push_back(rhs);
      up.push_back(rhs);
    }
  }

  // ---- per-axis plant velocity limits at stages 1..N ----
  for (int k = 1; k <= N; ++k) {
    int r = new_row();
    for (int j = 0; j < nx; ++j) at.emplace_back(r, lay.iz(k) + j, ltv.Cx(1, j));
    lo.push_back(-lim.velocity_max);
    up.push_back(lim.velocity_max);
    r = new_row();
    for (int j = 0; j < ny; ++j) {
      at.emplace_back(r, lay.iz(k) + ltv.idx_zeta_y() + j, ltv.Cy(1, j));
    }
    lo.push_back(-lim.velocity_max);
    up.push_back(lim.velocity_max);
  }

  // ---- error expressions per stage ----
  // e(k+1) = ez . z_k + eu . u_k + d ; for k = 0 the z-part folds into d.
  const auto add_error_quadratic = [&](int k, const Eigen::RowVectorXd& ez,
                                       const Eigen::Vector3d& eu, double d,
                                       double weight, bool include_vs) {
    double offset = d;
    std::vector<std::pair<int, double>> cols;
    cols.reserve(nx + ny + 3);
    if (k > 0) {
      for (int j = 0; j < nx; ++j) cols.emplace_back(lay.iz(k) + j, ez(j));
      for (int j = 0; j < ny; ++j) {
        cols.emplace_back(lay.iz(k) + ltv.idx_zeta_y() + j,
                          ez(ltv.idx_zeta_y() + j));
      }
    } else {
      offset += ez.head(np).dot(z0);
    }
    cols.emplace_back(lay.iu(k) + 0, eu(0));
    cols.emplace_back(lay.iu(k) + 1, eu(1));
    if (include_vs) cols.emplace_back(lay.iu(k) + 2, eu(2));
    for (const auto& [ia, va] : cols) {
      q(ia) += 2.0 * weight * va * offset;
      for (const auto& [ib, vb] : cols) {
        pt.emplace_back(ia, ib, 2.0 * weight * va * vb);
      }
    }
    cconst += weight * offset * offset;
  };

  for (int k = 0; k < N; ++k) {
    const int stage = k + 1;
    const Eigen::RowVectorXd el_z = ltv.A[k].row(ltv.idx_el()).head(np);
    const Eigen::RowVectorXd ec_z = ltv.A[k].row(ltv.idx_ec()).head(np);
    const Eigen::Vector3d el_u = ltv.B[k].row(ltv.idx_el());
    const Eigen::Vector3d ec_u = ltv.B[k].row(ltv.idx_ec());
    const double el_d = ltv.d[k](ltv.idx_el());
    const double ec_d = ltv.d[k](ltv.idx_ec());
    const double wl = stage < N ? w.gamma_l : w.terminal_l();
    const double wc = stage < N ? w.gamma_c : w.terminal_c();
    add_error_quadratic(k, el_z, el_u, el_d, wl, true);
    add_error_quadratic(k, ec_z, ec_u, ec_d, wc, false);

    // tolerance band on ec_hat with slack:
    //   ec_expr - eps <= tol  and  ec_expr + eps >= -tol, eps >= 0
    double offset = ec_d;
    std::vector<std::pair<int, double>> cols;
    if (k > 0) {
      for (int j = 0; j < nx; ++j) cols.emplace_back(lay.iz(k) + j, ec_z(j));
      for (int j = 0; j < ny; ++j) {
        cols.emplace_back(lay.iz(k) + ltv.idx_zeta_y() + j,
                          ec_z(ltv.idx_zeta_y() + j));
      }
    } else {
      offset += ec_z.head(np).dot(z0);
    }
    cols.emplace_back(lay.iu(k) + 0, ec_u(0));
    cols.emplace_back(lay.iu(k) + 1, ec_u(1));
    int r = new_row();
    for (const auto& [ia, va] : cols) at.emplace_back(r, ia, va);
    at.emplace_back(r, lay.ie(stage), -1.0);
    lo.push_back(-kQpInf);
    up.push_back(lim.contour_tolerance - offset);
    r = new_row();
    for (const auto& [ia, va] : cols) at.emplace_back(r, ia, va);
    at.emplace_back(r, lay.ie(stage), 1.0);
    lo.push_back(-lim.contour_tolerance - offset);
    up.push_back(kQpInf);
    r = new_row();
    at.emplace_back(r, lay.ie(stage), 1.0);
    lo.push_back(0.0);
    up.push_back(kQpInf);
  }

  // ---- input cost, progress reward, slack penalty, input bounds ----
  for (int k = 0; k < N; ++k) {
    pt.emplace_back(lay.iu(k) + 0, lay.iu(k) + 0, 2.0 * w.gamma_ax);
    pt.emplace_back(lay.iu(k) + 1, lay.iu(k) + 1, 2.0 * w.gamma_ay);
    q(lay.iu(k) + 2) -= w.gamma_v;
    pt.emplace_back(lay.ie(k + 1), lay.ie(k + 1), 2.0 * lim.slack_penalty);

    int r = new_row();
    at.emplace_back(r, lay.iu(k) + 0, 1.0);
    lo.push_back(-lim.accel_max);
    up.push_back(lim.accel_max);
    r = new_row();
    at.emplace_back(r, lay.iu(k) + 1, 1.0);
    lo.push_back(-lim.accel_max);
    up.push_back(lim.accel_max);
    r = new_row();
    at.emplace_back(r, lay.iu(k) + 2, 1.0);
    lo.push_back(0.0);
    up.push_back(lim.path_speed_max);
  }
  q(lay.iz(N) + ltv.idx_s()) -= w.gamma_s_terminal;

  // jerk chain sum_k gj * (u_k - u_{k-1})^2 with u_{-1} the applied input
  const double gj[2] = {w.gamma_jx, w.gamma_jy};
  for (int axis = 0; axis < 2; ++axis) {
    for (int k = 0; k < N; ++k) {
      pt.emplace_back(lay.iu(k) + axis, lay.iu(k) + axis, 2.0 * gj[axis]);
      if (k == 0) {
        q(lay.iu(k) + axis) -= 2.0 * gj[axis] * u_prev(axis);
        cconst += gj[axis] * u_prev(axis) * u_prev(axis);
      } else {
        pt.emplace_back(lay.iu(k - 1) + axis, lay.iu(k - 1) + axis,
                        2.0 * gj[axis]);
        pt.emplace_back(lay.iu(k) + axis, lay.iu(k - 1) + axis, -2.0 * gj[axis]);
        pt.emplace_back(lay.iu(k - 1) + axis, lay.iu(k) + axis, -2.0 * gj[axis]);
      }
    }
  }

  lay.cost_const = cconst;
  lay.prob.P.resize(nv, nv);
  lay.prob.P.setFromTriplets(pt.begin(), pt.end());
  lay.prob.P.makeCompressed();
  lay.prob.q = q;
  lay.prob.A.resize(static_cast<int>(lo.size()), nv);
  lay.prob.A.setFromTriplets(at.begin(), at.end());
  lay.prob.A.makeCompressed();
  lay.prob.l = Eigen::Map<Eigen::VectorXd>(lo.data(), lo.size());
  lay.prob.u = Eigen::Map<Eigen::VectorXd>(up.data(), up.size());
  return lay;
}

// Condensed horizon QP over inputs and band slacks only: states are
// substituted by their forced response, which removes every equality row.
// Used by the receding-horizon loop; algebraically equivalent to the sparse
// form above (covered by tests).
CondensedHorizonQp build_condensed_horizon_qp(const LtvModel& ltv,
                                              const MpccWeights& w,
                                              const MpccLimits& lim,
                                              const Eigen::VectorXd& z0_full,
                                              const Eigen::Vector3d& u_prev) {
  const int N = ltv.horizon();
  const int np = ltv.physical_dim();
  const int nx = ltv.nx, ny = ltv.ny;
  const int nu = 3 * N;
  const int nv = nu + N;  // inputs then slacks
  const Eigen::VectorXd z0 = z0_full.head(np);
  const Eigen::MatrixXd A0 = ltv.A[0].topLeftCorner(np, np);
  const Eigen::MatrixXd B0 = ltv.B[0].topLeftCorner(np, 3);

  // free response phi_k = A0^k z0 for k = 0..N
  std::vector<Eigen::VectorXd> free_resp(N + 1);
  free_resp[0] = z0;
  for (int k = 0; k < N; ++k) free_resp[k + 1] = A0 * free_resp[k];

  // expr(row r over z_k plus direct u_k terms) -> dense row over U + offset
  // coefficient of u_j (j < k) is r * A0^{k-1-j} * B0, built by backward
  // propagation of the row through A0.
  struct AffineRow {
    Eigen::RowVectorXd u;  // over all 3N inputs
    double c = 0.0;
  };
  const auto expand = [&](const Eigen::RowVectorXd& rz, int k,
                          const Eigen::RowVector3d& ru, double offset) {
    AffineRow row;
    row.u = Eigen::RowVectorXd::Zero(nu);
    row.c = offset + rz.dot(free_resp[k]);
    Eigen::RowVectorXd r = rz;
    for (int j = k - 1; j >= 0; --j) {
      row.u.segment(3 * j, 3) += r * B0;
      if (j > 0) r = r * A0;
    }
    if (k < N) row.u.segment(3 * k, 3) += ru;
    return row;
  };

  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(nv, nv);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(nv);
  double cconst = 0.0;
  std::vector<Eigen::Triplet<double>> at;
  std::vector<double> lo, up;
  const auto new_row = [&] { return static_cast<int>(lo.size()); };
  const auto add_dense_row = [&](const AffineRow& row, int slack_col,
                                 double slack_coef, double lo_v, double up_v) {
    const int r = new_row();
    for (int j = 0; j < nu; ++j) at.emplace_back(r, j, row.u(j));
    if (slack_col >= 0) at.emplace_back(r, slack_col, slack_coef);
    lo.push_back(lo_v);
    up.push_back(up_v);
  };

  Eigen::RowVector3d zero_u = Eigen::RowVector3d::Zero();
  for (int k = 0; k < N; ++k) {
    const int stage = k + 1;
    // error expressions at stage k+1 over (z_k, u_k)
    const Eigen::RowVectorXd el_z = ltv.A[k].row(ltv.idx_el()).head(np);
    const Eigen::RowVectorXd ec_z = ltv.A[k].row(ltv.idx_ec()).head(np);
    const Eigen::RowVector3d el_u = ltv.B[k].row(ltv.idx_el());
    const Eigen::RowVector3d ec_u = ltv.B[k].row(ltv.idx_ec());
    const AffineRow el = expand(el_z, k, el_u, ltv.d[k](ltv.idx_el()));
    const AffineRow ec = expand(ec_z, k, ec_u, ltv.d[k](ltv.idx_ec()));
    const double wl = stage < N ? w.gamma_l : w.terminal_l();
    const double wc = stage < N ? w.gamma_c : w.terminal_c();
    P.topLeftCorner(nu, nu) += 2.0 * wl * el.u.transpose() * el.u;
    q.head(nu) += 2.0 * wl * el.c * el.u.transpose();
    cconst += wl * el.c * el.c;
    P.topLeftCorner(nu, nu) += 2.0 * wc * ec.u.transpose() * ec.u;
    q.head(nu) += 2.0 * wc * ec.c * ec.u.transpose();
    cconst += wc * ec.c * ec.c;

    // band with slack
    add_dense_row(ec, nu + k, -1.0, -kQpInf, lim.contour_tolerance - ec.c);
    add_dense_row(ec, nu + k, 1.0, -lim.contour_tolerance - ec.c, kQpInf);
    {
      const int r = new_row();
      at.emplace_back(r, nu + k, 1.0);
      lo.push_back(0.0);
      up.push_back(kQpInf);
    }

    // velocity rows at stage k+1
    Eigen::RowVectorXd vx = Eigen::RowVectorXd::Zero(np);
    vx.segment(0, nx) = ltv.Cx.row(1);
    Eigen::RowVectorXd vy = Eigen::RowVectorXd::Zero(np);
    vy.segment(ltv.idx_zeta_y(), ny) = ltv.Cy.row(1);
    const AffineRow rvx = expand(vx, stage, zero_u, 0.0);
    const AffineRow rvy = expand(vy, stage, zero_u, 0.0);
    add_dense_row(rvx, -1, 0.0, -lim.velocity_max - rvx.c, lim.velocity_max - rvx.c);
    add_dense_row(rvy, -1, 0.0, -lim.velocity_max - rvy.c, lim.velocity_max - rvy.c);

    // slack penalty, input cost, progress reward, input bounds
    P(nu + k, nu + k) += 2.0 * lim.slack_penalty;
    P(3 * k + 0, 3 * k + 0) += 2.0 * w.gamma_ax;
    P(3 * k + 1, 3 * k + 1) += 2.0 * w.gamma_ay;
    q(3 * k + 2) -= w.gamma_v;
    int r = new_row();
    at.emplace_back(r, 3 * k + 0, 1.0);
    lo.push_back(-lim.accel_max);
    up.push_back(lim.accel_max);
    r = new_row();
    at.emplace_back(r, 3 * k + 1, 1.0);
    lo.push_back(-lim.accel_max);
    up.push_back(lim.accel_max);
    r = new_row();
    at.emplace_back(r, 3 * k + 2, 1.0);
    lo.push_back(0.0);
    up.push_back(lim.path_speed_max);
  }

  // terminal progress: s_N = s_0 + T * sum v_s
  if (w.gamma_s_terminal != 0.0) {
    for (int k = 0; k < N; ++k) q(3 * k + 2) -= w.gamma_s_terminal * ltv.T;
    cconst -= w.gamma_s_terminal * z0(ltv.idx_s());
  }

  // jerk chain
  const double gj[2] = {w.gamma_jx, w.gamma_jy};
  for (int axis = 0; axis < 2; ++axis) {
    for (int k = 0; k < N; ++k) {
      P(3 * k + axis, 3 * k + axis) += 2.0 * gj[axis];
      if (k == 0) {
        q(axis) -= 2.0 * gj[axis] * u_prev(axis);
        cconst += gj[axis] * u_prev(axis) * u_prev(axis);
      } else {
        P(3 * (k - 1) + axis, 3 * (k - 1) + axis) += 2.0 * gj[axis];
        P(3 * k + axis, 3 * (k - 1) + axis) -= 2.0 * gj[axis];
        P(3 * (k - 1) + axis, 3 * k + axis) -= 2.0 * gj[axis];
      }
    }
  }

  CondensedHorizonQp out;
  out.N = N;
  out.cost_const = cconst;
  // emplace the full input block so the sparsity pattern is step-invariant
  std::vector<Eigen::Triplet<double>> ptrip;
  ptrip.reserve(nu * nu + N);
  for (int i = 0; i < nu; ++i) {
    for (int j = 0; j < nu; ++j) ptrip.emplace_back(i, j, P(i, j));
  }
  for (int k = 0; k < N; ++k) {
    ptrip.emplace_back(nu + k, nu + k, P(nu + k, nu + k));
  }
  out.prob.P.resize(nv, nv);
  out.prob.P.setFromTriplets(ptrip.begin(), ptrip.end());
  out.prob.P.makeCompressed();
  out.prob.q = q;
  out.prob.A.resize(static_cast<int>(lo.size()), nv);
  out.prob.A.setFromTriplets(at.begin(), at.end());
  out.prob.A.makeCompressed();
  out.prob.l = Eigen::Map<Eigen::VectorXd>(lo.data(), lo.size());
  out.prob.u = Eigen::Map<Eigen::VectorXd>(up.data(), up.size());
  return out;
}

}  // namespace detail

namespace {

HorizonSolution extract_solution(const detail::SparseHorizonQp& built,
                                 const LtvModel& ltv,
                                 const Eigen::VectorXd& z0_full,
                                 const QpSolution& sol) {
  const int N = built.N;
  const int np = built.np;
  HorizonSolution hs;
  hs.status = sol.status;
  hs.iterations = sol.iterations;
  hs.objective = sol.objective + built.cost_const;
  hs.U.resize(N, 3);
  for (int k = 0; k < N; ++k) {
    hs.U.row(k) = sol.x.segment(built.iu(k), 3).transpose();
  }
  hs.Z.resize(N, ltv.full_dim());
  Eigen::VectorXd z = z0_full;
  for (int k = 0; k < N; ++k) {
    // physical part from the QP solution, error entries from the rows
    Eigen::VectorXd znext(ltv.full_dim());
    znext.head(np) = sol.x.segment(built.iz(k + 1), np);
    znext(ltv.idx_el()) = ltv.A[k].row(ltv.idx_el()).head(np).dot(z.head(np)) +
                          ltv.B[k].row(ltv.idx_el()).dot(hs.U.row(k)) +
                          ltv.d[k](ltv.idx_el());
    znext(ltv.idx_ec()) = ltv.A[k].row(ltv.idx_ec()).head(np).dot(z.head(np)) +
                          ltv.B[k].row(ltv.idx_ec()).dot(hs.U.row(k)) +
                          ltv.d[k](ltv.idx_ec());
    hs.Z.row(k) = znext.transpose();
    z = znext;
  }
  return hs;
}

}  // namespace

HorizonSolution build_and_solve_horizon(const LtvModel& ltv,
                                        const MpccWeights& weights,
                                        const MpccLimits& limits,
                                        const Eigen::VectorXd& z0,
                                        const Eigen::Vector3d& u_prev,
                                        const QpSettings& qp_settings) {
  weights.validate();
  if (!z0.allFinite() || z0.size() != ltv.full_dim()) {
    throw std::invalid_argument("horizon: bad initial state");
  }
  const detail::SparseHorizonQp built =
      detail::build_sparse_horizon_qp(ltv, weights, limits, z0, u_prev);
  const QpSolution sol = solve_qp(built.prob, qp_settings);
  return extract_solution(built, ltv, z0, sol);
}

TrajectoryRecord run_receding_horizon(const ClosedLoopModel& model_x,
                                      const ClosedLoopModel& model_y,
                                      const PathGeometry& geom,
                                      const MpccWeights& weights,
                                      const MpccLimits& limits, double T,
                                      const RunOptions& options) {
  weights.validate();
  const int N = weights.horizon;
  const int nx = model_x.order(), ny = model_y.order();
  const int np = nx + ny + 5;

  TrajectoryRecord rec;
  const Eigen::Vector2d p0 = geom.eval(0.0).position;
  Eigen::VectorXd zeta_x = model_x.steady_state(p0.x());
  Eigen::VectorXd zeta_y = model_y.steady_state(p0.y());
  double rx = p0.x(), vrx = 0.0, ry = p0.y(), vry = 0.0, s = 0.0;
  Eigen::Vector3d u_prev = Eigen::Vector3d::Zero();
  Eigen::VectorXd lin = Eigen::VectorXd::Zero(N);

  std::unique_ptr<QpSolver> solver;
  Eigen::VectorXd warm_x, warm_y;
  double stall_anchor_s = 0.0;
  int stall_anchor_step = 0;

  for (int step = 0; step < options.step_cap; ++step) {
    const LtvModel ltv = assemble_ltv(model_x, model_y, geom, lin, T);
    Eigen::VectorXd z0 = Eigen::VectorXd::Zero(np + 2);
    z0.head(nx) = zeta_x;
    z0(ltv.idx_rx()) = rx;
    z0(ltv.idx_vrx()) = vrx;
    z0.segment(ltv.idx_zeta_y(), ny) = zeta_y;
    z0(ltv.idx_ry()) = ry;
    z0(ltv.idx_vry()) = vry;
    z0(ltv.idx_s()) = s;

    const detail::CondensedHorizonQp built =
        detail::build_condensed_horizon_qp(ltv, weights, limits, z0, u_prev);
    if (!solver) {
      solver = std::make_unique<QpSolver>(built.prob, options.qp);
    } else {
      solver->update(built.prob);
      solver->warm_start(warm_x, warm_y);
    }
    const QpSolution sol = solver->solve();
    rec.stats.total_qp_iterations += sol.iterations;
    rec.stats.max_qp_iterations = std::max(rec.stats.max_qp_iterations, sol.iterations);
    if (sol.status != QpStatus::Solved) ++rec.stats.degraded_solves;
    log::debug("mpcc step %d: qp status=%d iters=%d s=%.6f", step,
               static_cast<int>(sol.status), sol.iterations, s);
    if (!sol.x.allFinite()) {
      rec.truncated = true;
      break;
    }
    warm_x = sol.x;
    warm_y = sol.y;

    Eigen::Vector3d u0 = sol.x.segment(0, 3);
    u0(0) = std::clamp(u0(0), -limits.accel_max, limits.accel_max);
    u0(1) = std::clamp(u0(1), -limits.accel_max, limits.accel_max);
    u0(2) = std::clamp(u0(2), 0.0, limits.path_speed_max);

    // model-predicted errors after this step (from the stage-0 rows)
    const double el_next =
        ltv.A[0].row(ltv.idx_el()).head(np).dot(z0.head(np)) +
        ltv.B[0].row(ltv.idx_el()).dot(u0) + ltv.d[0](ltv.idx_el());
    const double ec_next =
        ltv.A[0].row(ltv.idx_ec()).head(np).dot(z0.head(np)) +
        ltv.B[0].row(ltv.idx_ec()).dot(u0) + ltv.d[0](ltv.idx_ec());

    // advance the truth model (closed loop consumes current references)
    const double s_pre = s;
    zeta_x = model_x.step(zeta_x, {rx, vrx});
    zeta_y = model_y.step(zeta_y, {ry, vry});
    rx += T * vrx + 0.5 * T * T * u0(0);
    vrx += T * u0(0);
    ry += T * vry + 0.5 * T * T * u0(1);
    vry += T * u0(1);
    s += T * u0(2);

    const Eigen::Vector2d out_x = model_x.outputs(zeta_x);
    const Eigen::Vector2d out_y = model_y.outputs(zeta_y);
    TrajectoryStep row;
    row.t = (step + 1) * T;
    row.x = out_x(0);
    row.y = out_y(0);
    row.xd = out_x(1);
    row.yd = out_y(1);
    row.rx = rx;
    row.ry = ry;
    row.s = s;
    row.el_hat = el_next;
    row.ec_hat = ec_next;
    row.ec_exact = geom.signed_contour_error({row.x, row.y});
    row.ax = u0(0);
    row.ay = u0(1);
    row.vs = u0(2);
    row.jerk_x = (u0(0) - u_prev(0)) / T;
    row.jerk_y = (u0(1) - u_prev(1)) / T;
    rec.steps.push_back(row);
    u_prev = u0;

    if (!std::isfinite(row.x) || !std::isfinite(row.y) ||
        std::abs(row.x - rx) > options.divergence_limit ||
        std::abs(row.y - ry) > options.divergence_limit) {
      rec.truncated = true;
      break;
    }
    if (s >= geom.length()) break;

    // shift the planned s sequence by one stage and extrapolate the tail:
    // planned s_k = s_pre + T * sum_{j<k} vs_j
    Eigen::VectorXd s_plan(N + 1);
    s_plan(0) = s_pre;
    for (int k = 0; k < N; ++k) {
      const double vsk = std::clamp(sol.x(3 * k + 2), 0.0, limits.path_speed_max);
      s_plan(k + 1) = s_plan(k) + T * vsk;
    }
    for (int k = 0; k < N - 1; ++k) lin(k) = s_plan(k + 2);
    lin(N - 1) = s_plan(N) + std::max(s_plan(N) - s_plan(N - 1), 0.0);
    for (int k = 1; k < N; ++k) lin(k) = std::max(lin(k), lin(k - 1));

    // stall guard
    if (s - stall_anchor_s >= options.stall_min_progress) {
      stall_anchor_s = s;
      stall_anchor_step = step;
    } else if (step - stall_anchor_step >= options.stall_window) {
      rec.truncated = true;
      break;
    }
  }

  rec.k_tot = static_cast<int>(rec.steps.size());
  if (!rec.steps.empty() && rec.steps.back().s < geom.length() &&
      rec.k_tot >= options.step_cap) {
    rec.truncated = true;
  }
  return rec;
}

Metrics compute_metrics(const TrajectoryRecord& rec, double T) {
  if (rec.steps.empty()) {
    throw std::invalid_argument("compute_metrics: empty record");
  }
  Metrics m;
  m.g0 = static_cast<double>(rec.k_tot);
  m.time_s = rec.k_tot * T;
  m.truncated = rec.truncated;
  double sum_sq = 0.0;
  for (const auto& st : rec.steps) {
    m.g1 = std::max({m.g1, std::abs(st.jerk_x), std::abs(st.jerk_y)});
    m.g2 = std::max(m.g2, std::abs(st.ec_exact));
    m.ec_hat_inf = std::max(m.ec_hat_inf, std::abs(st.ec_hat));
    sum_sq += st.ec_hat * st.ec_hat;
  }
  m.ec_hat_2 = std::sqrt(sum_sq);
  return m;
}

}  // namespace contour
