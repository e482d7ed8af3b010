#include "contour/qp.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace contour {

namespace {

bool is_inf_lower(double v) { return v <= -kQpInf; }
bool is_inf_upper(double v) { return v >= kQpInf; }

double inf_norm(const Eigen::VectorXd& v) {
  return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>();
}

}  // namespace

void QpProblem::validate() const {
  const int n = num_vars();
  const int m = num_constraints();
  if (P.rows() != n || P.cols() != n || A.cols() != n || A.rows() != m ||
      u.size() != m) {
    throw std::invalid_argument("qp: inconsistent dimensions");
  }
  Eigen::SparseMatrix<double> Pt = P.transpose();
  Eigen::SparseMatrix<double> diff = P - Pt;
  double asym = 0.0, scale = 1.0;
  for (int k = 0; k < diff.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(diff, k); it; ++it) {
      asym = std::max(asym, std::abs(it.value()));
    }
  }
  for (int k = 0; k < P.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(P, k); it; ++it) {
      scale = std::max(scale, std::abs(it.value()));
    }
  }
  if (asym > 1e-12 * scale) {
    throw std::invalid_argument("qp: P is not symmetric");
  }
  for (int i = 0; i < m; ++i) {
    if (l(i) > u(i)) throw std::invalid_argument("qp: l > u");
  }
}

QpProblem QpProblem::from_dense(const Eigen::MatrixXd& P, const Eigen::VectorXd& q,
                                const Eigen::MatrixXd& A, const Eigen::VectorXd& l,
                                const Eigen::VectorXd& u) {
  QpProblem prob;
  prob.P = P.sparseView();
  prob.q = q;
  prob.A = A.sparseView();
  prob.l = l;
  prob.u = u;
  prob.P.makeCompressed();
  prob.A.makeCompressed();
  return prob;
}

struct QpSolver::Impl {
  QpProblem orig;
  QpSettings st;
  int n = 0, m = 0;

  // Ruiz equilibration: scaled = diag(D) * orig * diag(D) etc.
  Eigen::VectorXd D, E;
  double c_cost = 1.0;
  Eigen::SparseMatrix<double> Ps, As;
  Eigen::VectorXd qs, ls, us;

  Eigen::VectorXd rho_vec, rho_inv;
  double rho_bar = 0.1;

  Eigen::SparseMatrix<double> kkt;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower,
                        Eigen::AMDOrdering<int>>
      ldlt;
  bool pattern_ready = false;

  Eigen::VectorXd x, z, y;  // scaled iterates
  bool have_warm = false;

  void setup(QpProblem problem) {
    problem.validate();
    orig = std::move(problem);
    n = orig.num_vars();
    m = orig.num_constraints();
    rho_bar = st.rho;
    compute_scaling();
    set_rho(rho_bar);
    build_kkt(true);
    x = Eigen::VectorXd::Zero(n);
    z = Eigen::VectorXd::Zero(m);
    y = Eigen::VectorXd::Zero(m);
  }

  void compute_scaling() {
    D = Eigen::VectorXd::Ones(n);
    E = Eigen::VectorXd::Ones(m);
    c_cost = 1.0;
    Ps = orig.P;
    As = orig.A;
    qs = orig.q;
    ls = orig.l;
    us = orig.u;
    if (!st.scaling) return;

    for (int pass = 0; pass < st.scaling_iters; ++pass) {
      Eigen::VectorXd dcol = Eigen::VectorXd::Zero(n);
      Eigen::VectorXd erow = Eigen::VectorXd::Zero(m);
      for (int k = 0; k < Ps.outerSize(); ++k) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(Ps, k); it; ++it) {
          dcol(it.col()) = std::max(dcol(it.col()), std::abs(it.value()));
        }
      }
      for (int k = 0; k < As.outerSize(); ++k) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(As, k); it; ++it) {
          dcol(it.col()) = std::max(dcol(it.col()), std::abs(it.value()));
          erow(it.row()) = std::max(erow(it.row()), std::abs(it.value()));
        }
      }
      Eigen::VectorXd dd(n), ee(m);
      for (int i = 0; i < n; ++i) dd(i) = dcol(i) > 0 ? 1.0 / std::sqrt(dcol(i)) : 1.0;
      for (int i = 0; i < m; ++i) ee(i) = erow(i) > 0 ? 1.0 / std::sqrt(erow(i)) : 1.0;
      // apply
      Ps = dd.asDiagonal() * Ps * dd.asDiagonal();
      As = ee.asDiagonal() * As * dd.asDiagonal();
      qs = dd.asDiagonal() * qs;
      for (int i = 0; i < m; ++i) {
        if (!is_inf_lower(ls(i))) ls(i) *= ee(i);
        if (!is_inf_upper(us(i))) us(i) *= ee(i);
      }
      D = D.cwiseProduct(dd);
      E = E.cwiseProduct(ee);

      // cost normalization
      double pcol_mean = 0.0;
      Eigen::VectorXd pc = Eigen::VectorXd::Zero(n);
      for (int k = 0; k < Ps.outerSize(); ++k) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(Ps, k); it; ++it) {
          pc(it.col()) = std::max(pc(it.col()), std::abs(it.value()));
        }
      }
      pcol_mean = n > 0 ? pc.sum() / static_cast<double>(n) : 0.0;
      double gamma = std::max(pcol_mean, inf_norm(qs));
      gamma = gamma > 0 ? 1.0 / std::max(gamma, 1e-12) : 1.0;
      gamma = std::min(gamma, 1.0);
      if (gamma < 1.0) {
        Ps *= gamma;
        qs *= gamma;
        c_cost *= gamma;
      }
    }
    Ps.makeCompressed();
    As.makeCompressed();
  }

  void set_rho(double rb) {
    rho_bar = std::clamp(rb, 1e-6, 1e6);
    rho_vec.resize(m);
    for (int i = 0; i < m; ++i) {
      const bool eq = !is_inf_lower(ls(i)) && !is_inf_upper(us(i)) &&
                      (us(i) - ls(i)) < 1e-14 * std::max(1.0, std::abs(us(i)));
      rho_vec(i) = eq ? 1e3 * rho_bar : rho_bar;
    }
    rho_inv = rho_vec.cwiseInverse();
  }

  void build_kkt(bool analyze) {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(Ps.nonZeros() + 2 * As.nonZeros() + n + m);
    for (int k = 0; k < Ps.outerSize(); ++k) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(Ps, k); it; ++it) {
        trips.emplace_back(it.row(), it.col(), it.value());
      }
    }
    for (int i = 0; i < n; ++i) trips.emplace_back(i, i, st.sigma);
    for (int k = 0; k < As.outerSize(); ++k) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(As, k); it; ++it) {
        trips.emplace_back(n + it.row(), it.col(), it.value());
        trips.emplace_back(it.col(), n + it.row(), it.value());
      }
    }
    for (int i = 0; i < m; ++i) trips.emplace_back(n + i, n + i, -rho_inv(i));
    kkt.resize(n + m, n + m);
    kkt.setFromTriplets(trips.begin(), trips.end());
    kkt.makeCompressed();
    if (analyze || !pattern_ready) {
      ldlt.analyzePattern(kkt);
      pattern_ready = true;
    }
    ldlt.factorize(kkt);
    if (ldlt.info() != Eigen::Success) {
      throw std::runtime_error("qp: KKT factorization failed");
    }
  }

  // Unscaled residuals at the current (scaled) iterate.
  struct Residuals {
    double prim = 0.0, dual = 0.0;
    double prim_rel = 0.0, dual_rel = 0.0;
  };

  Residuals residuals(const Eigen::VectorXd& xu, const Eigen::VectorXd& zu,
                      const Eigen::VectorXd& yu) const {
    Residuals r;
    const Eigen::VectorXd Ax = orig.A * xu;
    const Eigen::VectorXd Px = orig.P * xu;
    const Eigen::VectorXd Aty = orig.A.transpose() * yu;
    r.prim = inf_norm(Ax - zu);
    r.dual = inf_norm(Px + orig.q + Aty);
    r.prim_rel = std::max(inf_norm(Ax), inf_norm(zu));
    r.dual_rel = std::max({inf_norm(Px), inf_norm(Aty), inf_norm(orig.q)});
    return r;
  }

  Eigen::VectorXd unscale_x(const Eigen::VectorXd& xs) const {
    return D.cwiseProduct(xs);
  }
  Eigen::VectorXd unscale_z(const Eigen::VectorXd& zs) const {
    return m > 0 ? zs.cwiseQuotient(E).eval() : zs;
  }
  Eigen::VectorXd unscale_y(const Eigen::VectorXd& ys) const {
    return m > 0 ? (E.cwiseProduct(ys) / c_cost).eval() : ys;
  }

  double objective(const Eigen::VectorXd& xu) const {
    return 0.5 * xu.dot(orig.P * xu) + orig.q.dot(xu);
  }

  // Active-set polish on the unscaled problem. Returns true on success and
  // overwrites (xu, yu, zu).
  bool polish(Eigen::VectorXd& xu, Eigen::VectorXd& yu, Eigen::VectorXd& zu) const {
    std::vector<int> act_low, act_up;
    for (int i = 0; i < m; ++i) {
      if (yu(i) < 0.0 && !is_inf_lower(orig.l(i))) act_low.push_back(i);
      else if (yu(i) > 0.0 && !is_inf_upper(orig.u(i))) act_up.push_back(i);
    }
    const int ma = static_cast<int>(act_low.size() + act_up.size());
    const int N = n + ma;
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(orig.P.nonZeros() + n + 3 * ma * 4);
    for (int k = 0; k < orig.P.outerSize(); ++k) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(orig.P, k); it; ++it) {
        trips.emplace_back(it.row(), it.col(), it.value());
      }
    }
    for (int i = 0; i < n; ++i) trips.emplace_back(i, i, st.polish_delta);
    Eigen::VectorXd rhs(N);
    rhs.head(n) = -orig.q;
    Eigen::SparseMatrix<double> At = orig.A.transpose();  // column access per row
    int row = n;
    for (int idx : act_low) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(At, idx); it; ++it) {
        trips.emplace_back(row, it.row(), it.value());
        trips.emplace_back(it.row(), row, it.value());
      }
      trips.emplace_back(row, row, -st.polish_delta);
      rhs(row) = orig.l(idx);
      ++row;
    }
    for (int idx : act_up) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(At, idx); it; ++it) {
        trips.emplace_back(row, it.row(), it.value());
        trips.emplace_back(it.row(), row, it.value());
      }
      trips.emplace_back(row, row, -st.polish_delta);
      rhs(row) = orig.u(idx);
      ++row;
    }
    Eigen::SparseMatrix<double> K(N, N);
    K.setFromTriplets(trips.begin(), trips.end());
    K.makeCompressed();
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower,
                          Eigen::AMDOrdering<int>>
        fact(K);
    if (fact.info() != Eigen::Success) return false;

    Eigen::VectorXd sol = fact.solve(rhs);
    // Iterative refinement against the unregularized KKT.
    for (int pass = 0; pass < 3; ++pass) {
      Eigen::VectorXd resid = rhs;
      resid.head(n) -= orig.P * sol.head(n);
      int r2 = n;
      for (int idx : act_low) {
        double aix = 0.0;
        for (Eigen::SparseMatrix<double>::InnerIterator it(At, idx); it; ++it) {
          aix += it.value() * sol(it.row());
          resid(it.row()) -= it.value() * sol(r2);
        }
        resid(r2) -= aix;
        ++r2;
      }
      for (int idx : act_up) {
        double aix = 0.0;
        for (Eigen::SparseMatrix<double>::InnerIterator it(At, idx); it; ++it) {
          aix += it.value() * sol(it.row());
          resid(it.row()) -= it.value() * sol(r2);
        }
        resid(r2) -= aix;
        ++r2;
      }
      sol += fact.solve(resid);
    }

    Eigen::VectorXd xp = sol.head(n);
    Eigen::VectorXd yp = Eigen::VectorXd::Zero(m);
    int r3 = n;
    for (int idx : act_low) yp(idx) = sol(r3++);
    for (int idx : act_up) yp(idx) = sol(r3++);
    Eigen::VectorXd zp = orig.A * xp;
    // clip within bounds to define z
    for (int i = 0; i < m; ++i) {
      zp(i) = std::min(std::max(zp(i), orig.l(i)), orig.u(i));
    }
    const Residuals rp = residuals(xp, zp, yp);
    const Residuals r0 = residuals(xu, zu, yu);
    if (std::max(rp.prim, rp.dual) < std::max(r0.prim, r0.dual)) {
      xu = xp;
      yu = yp;
      zu = zp;
      return true;
    }
    return false;
  }

  QpSolution run() {
    if (!have_warm) {
      x.setZero();
      z.setZero();
      y.setZero();
    }
    have_warm = false;

    QpSolution sol;
    Eigen::VectorXd rhs(n + m), xz(n + m);
    Eigen::VectorXd xt(n), zt(m), ydelta(m);
    const double loose = std::max(st.eps_abs, 1e-6);

    int it = 0;
    for (it = 1; it <= st.max_iter; ++it) {
      // (1) linear system
      rhs.head(n) = st.sigma * x - qs;
      if (m > 0) rhs.tail(m) = z - rho_inv.cwiseProduct(y);
      xz = ldlt.solve(rhs);
      xt = xz.head(n);
      if (m > 0) {
        const Eigen::VectorXd nu = xz.tail(m);
        zt = z + rho_inv.cwiseProduct(nu - y);
      }
      // (2) relaxed updates
      x = st.alpha * xt + (1.0 - st.alpha) * x;
      if (m > 0) {
        const Eigen::VectorXd zc = st.alpha * zt + (1.0 - st.alpha) * z;
        z = (zc + rho_inv.cwiseProduct(y)).cwiseMax(ls).cwiseMin(us);
        ydelta = rho_vec.cwiseProduct(zc - z);
        y += ydelta;
      }

      if (it % st.check_interval == 0 || it == st.max_iter) {
        const Eigen::VectorXd xu = unscale_x(x);
        const Eigen::VectorXd zu = unscale_z(z);
        const Eigen::VectorXd yu = unscale_y(y);
        const Residuals r = residuals(xu, zu, yu);
        const double eps_p = st.eps_abs + st.eps_rel * r.prim_rel;
        const double eps_d = st.eps_abs + st.eps_rel * r.dual_rel;

        if (r.prim <= eps_p && r.dual <= eps_d) {
          Eigen::VectorXd xf = xu, yf = yu, zf = zu;
          if (st.polish) polish(xf, yf, zf);
          const Residuals rf = residuals(xf, zf, yf);
          sol.x = xf;
          sol.y = yf;
          sol.status = QpStatus::Solved;
          sol.iterations = it;
          sol.primal_residual = rf.prim;
          sol.dual_residual = rf.dual;
          sol.objective = objective(xf);
          x = D.cwiseInverse().cwiseProduct(xf);  // keep iterate for warm start
          if (m > 0) {
            z = E.cwiseProduct(zf);
            y = c_cost * yf.cwiseQuotient(E);
          }
          return sol;
        }

        // Early exit through polish when the iterate is close.
        if (st.polish && r.prim <= loose + st.eps_rel * r.prim_rel &&
            r.dual <= loose + st.eps_rel * r.dual_rel) {
          Eigen::VectorXd xf = xu, yf = yu, zf = zu;
          if (polish(xf, yf, zf)) {
            const Residuals rf = residuals(xf, zf, yf);
            if (rf.prim <= st.eps_abs + st.eps_rel * rf.prim_rel &&
                rf.dual <= st.eps_abs + st.eps_rel * rf.dual_rel) {
              sol.x = xf;
              sol.y = yf;
              sol.status = QpStatus::Solved;
              sol.iterations = it;
              sol.primal_residual = rf.prim;
              sol.dual_residual = rf.dual;
              sol.objective = objective(xf);
              x = D.cwiseInverse().cwiseProduct(xf);
              if (m > 0) {
                z = E.cwiseProduct(zf);
                y = c_cost * yf.cwiseQuotient(E);
              }
              return sol;
            }
          }
        }

        // Primal infeasibility certificate.
        if (m > 0) {
          const Eigen::VectorXd dyu = unscale_y(ydelta);
          const double dn = inf_norm(dyu);
          if (dn > st.eps_infeasible) {
            const double t1 = inf_norm(orig.A.transpose() * dyu);
            double support = 0.0;
            bool valid = true;
            for (int i = 0; i < m; ++i) {
              const double dp = std::max(dyu(i), 0.0);
              const double dm2 = std::min(dyu(i), 0.0);
              if (dp > st.eps_infeasible * dn && is_inf_upper(orig.u(i))) valid = false;
              if (-dm2 > st.eps_infeasible * dn && is_inf_lower(orig.l(i))) valid = false;
              if (!is_inf_upper(orig.u(i))) support += orig.u(i) * dp;
              if (!is_inf_lower(orig.l(i))) support += orig.l(i) * dm2;
            }
            if (valid && t1 <= st.eps_infeasible * dn &&
                support <= -st.eps_infeasible * dn) {
              sol.x = unscale_x(x);
              sol.y = unscale_y(y);
              sol.status = QpStatus::PrimalInfeasible;
              sol.iterations = it;
              const Residuals r2 = residuals(sol.x, unscale_z(z), sol.y);
              sol.primal_residual = r2.prim;
              sol.dual_residual = r2.dual;
              sol.objective = objective(sol.x);
              return sol;
            }
          }
        }

        // Residual-balancing rho adaptation.
        if (it % st.rho_adapt_interval == 0 && m > 0) {
          const double pr = r.prim / std::max(r.prim_rel, 1e-12);
          const double dr = r.dual / std::max(r.dual_rel, 1e-12);
          const double ratio = std::sqrt(pr / std::max(dr, 1e-16));
          if (ratio > 5.0 || ratio < 0.2) {
            set_rho(rho_bar * ratio);
            build_kkt(false);
          }
        }
      }
    }

    // Max iterations: report the best (current) iterate.
    Eigen::VectorXd xu = unscale_x(x);
    Eigen::VectorXd zu = unscale_z(z);
    Eigen::VectorXd yu = unscale_y(y);
    if (st.polish) polish(xu, yu, zu);
    const Residuals r = residuals(xu, zu, yu);
    sol.x = xu;
    sol.y = yu;
    sol.status = (r.prim <= st.eps_abs + st.eps_rel * r.prim_rel &&
                  r.dual <= st.eps_abs + st.eps_rel * r.dual_rel)
                     ? QpStatus::Solved
                     : QpStatus::MaxIter;
    sol.iterations = st.max_iter;
    sol.primal_residual = r.prim;
    sol.dual_residual = r.dual;
    sol.objective = objective(xu);
    return sol;
  }
};

QpSolver::QpSolver(QpProblem problem, QpSettings settings)
    : impl_(std::make_unique<Impl>()) {
  impl_->st = settings;
  impl_->setup(std::move(problem));
}

QpSolver::~QpSolver() = default;
QpSolver::QpSolver(QpSolver&&) noexcept = default;
QpSolver& QpSolver::operator=(QpSolver&&) noexcept = default;

void QpSolver::update(const QpProblem& problem) {
  if (problem.num_vars() != impl_->n || problem.num_constraints() != impl_->m) {
    throw std::invalid_argument("qp update: dimension change not allowed");
  }
  impl_->orig = problem;
  impl_->compute_scaling();
  impl_->set_rho(impl_->st.rho);
  impl_->build_kkt(false);
}

void QpSolver::warm_start(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != impl_->n || y.size() != impl_->m) {
    throw std::invalid_argument("qp warm_start: bad dimensions");
  }
  impl_->x = impl_->D.cwiseInverse().cwiseProduct(x);
  if (impl_->m > 0) {
    impl_->z = impl_->E.cwiseProduct(impl_->orig.A * x);
    impl_->y = impl_->c_cost * y.cwiseQuotient(impl_->E);
  }
  impl_->have_warm = true;
}

void QpSolver::clear_warm_start() { impl_->have_warm = false; }

QpSolution QpSolver::solve() { return impl_->run(); }

QpSolution solve_qp(const QpProblem& problem, const QpSettings& settings) {
  QpSolver solver(problem, settings);
  return solver.solve();
}

void dump_problem(const QpProblem& p, std::ostream& out) {
  out << "qp n=" << p.num_vars() << " m=" << p.num_constraints() << "\n";
  out << "P\n";
  for (int k = 0; k < p.P.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(p.P, k); it; ++it) {
      out << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
    }
  }
  out << "q\n" << p.q.transpose() << "\n";
  out << "A\n";
  for (int k = 0; k < p.A.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(p.A, k); it; ++it) {
      out << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
    }
  }
  out << "l\n" << p.l.transpose() << "\n";
  out << "u\n" << p.u.transpose() << "\n";
}

}  // namespace contour
