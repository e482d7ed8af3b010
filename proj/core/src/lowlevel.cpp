#include "contour/lowlevel.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <stdexcept>

#include "contour/log.hpp"

namespace contour {
namespace {

Eigen::VectorXd poly_scale(const Eigen::VectorXd& p, double a) { return a * p; }

// Multiply by s: shift coefficients up one power.
Eigen::VectorXd poly_shift(const Eigen::VectorXd& p) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(p.size() + 1);
  out.tail(p.size()) = p;
  return out;
}

Eigen::VectorXd poly_add(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(std::max(a.size(), b.size()));
  out.head(a.size()) = a;
  out.head(b.size()) += b;
  return out;
}

int poly_degree(const Eigen::VectorXd& p) {
  for (int i = static_cast<int>(p.size()) - 1; i >= 0; --i) {
    if (p(i) != 0.0) return i;
  }
  return -1;  // zero polynomial
}

// Solves A X + X A' + Q = 0 by the Kronecker linear system; fine for the
// small orders produced here.
Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& A, const Eigen::MatrixXd& Q) {
  const int n = static_cast<int>(A.rows());
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n * n, n * n);
  // vec(AX + XA') = (I kron A + A kron I) vec(X), column-stacked vec
  for (int j = 0; j < n; ++j) {
    M.block(j * n, j * n, n, n) += A;
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      for (int kcol = 0; kcol < n; ++kcol) {
        M(j * n + i, kcol * n + i) += A(j, kcol);
      }
    }
  }
  Eigen::VectorXd rhs(n * n);
  for (int j = 0; j < n; ++j) rhs.segment(j * n, n) = -Q.col(j);
  const Eigen::VectorXd vx = M.partialPivLu().solve(rhs);
  Eigen::MatrixXd X(n, n);
  for (int j = 0; j < n; ++j) X.col(j) = vx.segment(j * n, n);
  return 0.5 * (X + X.transpose());
}

// Symmetric PSD square-root factor via eigendecomposition (robust to
// near-singular Gramians).
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& W) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(W);
  Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * lam.asDiagonal();
}

// Gramian-balanced realization with truncation of Hankel values below
// tol * sigma_max. Requires Hurwitz A; returns false otherwise.
bool balance_gramian(Eigen::MatrixXd& A, Eigen::MatrixXd& B, Eigen::MatrixXd& C,
                     double tol = 1e-10) {
  const Eigen::VectorXcd ev = A.eigenvalues();
  if ((ev.real().array() >= 0.0).any()) return false;
  const Eigen::MatrixXd Wc = solve_lyapunov(A, B * B.transpose());
  const Eigen::MatrixXd Wo = solve_lyapunov(A.transpose(), C.transpose() * C);
  const Eigen::MatrixXd Lc = psd_factor(Wc);
  const Eigen::MatrixXd Lo = psd_factor(Wo);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Lo.transpose() * Lc,
                                        Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd sig = svd.singularValues();
  if (sig(0) <= 0.0) return false;
  int r = 0;
  while (r < sig.size() && sig(r) > tol * sig(0)) ++r;
  if (r == 0) return false;
  const Eigen::VectorXd si = sig.head(r).cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd Tr = Lc * svd.matrixV().leftCols(r) * si.asDiagonal();
  const Eigen::MatrixXd Ti =
      si.asDiagonal() * svd.matrixU().leftCols(r).transpose() * Lo.transpose();
  A = Ti * A * Tr;
  B = Ti * B;
  C = C * Tr;
  return true;
}

// LAPACK-style diagonal balancing with powers of two; B rows and C columns
// participate so input/output scaling stays consistent.
void balance(Eigen::MatrixXd& A, Eigen::MatrixXd& B, Eigen::MatrixXd& C) {
  const int n = static_cast<int>(A.rows());
  bool changed = true;
  int guard = 0;
  while (changed && guard++ < 64) {
    changed = false;
    for (int i = 0; i < n; ++i) {
      double r = B.row(i).cwiseAbs().sum();
      double c = C.col(i).cwiseAbs().sum();
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        r += std::abs(A(i, j));
        c += std::abs(A(j, i));
      }
      if (r == 0.0 || c == 0.0) continue;
      const double total = c + r;
      double f = 1.0;
      while (c < r / 2.0) {
        c *= 2.0;
        r /= 2.0;
        f *= 2.0;
      }
      while (c >= r * 2.0) {
        c /= 2.0;
        r *= 2.0;
        f /= 2.0;
      }
      if (c + r < 0.95 * total) {
        changed = true;
        A.row(i) /= f;
        A.col(i) *= f;
        B.row(i) /= f;
        C.col(i) *= f;
      }
    }
  }
}

struct CompanionChain {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
};

CompanionChain companion(const Eigen::VectorXd& monic_den_low, int n) {
  CompanionChain ch;
  ch.A = Eigen::MatrixXd::Zero(n, n);
  ch.A.topRightCorner(n - 1, n - 1).setIdentity();
  for (int j = 0; j < n; ++j) ch.A(n - 1, j) = -monic_den_low(j);
  ch.b = Eigen::VectorXd::Zero(n);
  ch.b(n - 1) = 1.0;
  return ch;
}

Eigen::RowVectorXd output_row(const Eigen::VectorXd& num, int n) {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n);
  for (int i = 0; i < num.size() && i < n; ++i) row(i) = num(i);
  return row;
}

}  // namespace

ClosedLoopTf closed_loop_tf(const TransferFunction& g, double kp, double kv) {
  if (!std::isfinite(kp) || !std::isfinite(kv)) {
    throw std::invalid_argument("closed_loop_tf: gains must be finite");
  }
  ClosedLoopTf out;
  out.kp = kp;
  out.kv = kv;
  out.h1.num = poly_scale(g.num, kv * kp);
  out.h1.den = g.den;
  out.h2.num = poly_scale(g.num, kv);
  out.h2.den = g.den;
  // H = Kv s G + 1 + Kv Kp G over den(G)
  out.h.num = poly_add(poly_add(poly_scale(poly_shift(g.num), kv), g.den),
                       poly_scale(g.num, kv * kp));
  out.h.den = g.den;
  return out;
}

StateSpace realize_closed_loop(const ClosedLoopTf& tf) {
  if ((tf.h1.den - tf.h.den).lpNorm<Eigen::Infinity>() >
          1e-9 * tf.h.den.lpNorm<Eigen::Infinity>() ||
      (tf.h2.den - tf.h.den).lpNorm<Eigen::Infinity>() >
          1e-9 * tf.h.den.lpNorm<Eigen::Infinity>()) {
    throw std::invalid_argument("realize: H, H1, H2 must share a denominator");
  }
  // Closed-loop SISO denominators are all num(H); numerators num(H1), num(H2).
  const Eigen::VectorXd D = tf.h.num;
  const int n = poly_degree(D);
  if (n < 1) throw std::invalid_argument("realize: degenerate closed loop");
  const double lead = D(n);
  if (lead == 0.0) throw std::invalid_argument("realize: zero leading coefficient");

  Eigen::VectorXd dm = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) dm(i) = D(i) / lead;
  Eigen::VectorXd n1 = tf.h1.num / lead;
  Eigen::VectorXd n2 = tf.h2.num / lead;

  const int d1 = poly_degree(n1);
  const int d2 = poly_degree(n2);
  // Velocity outputs are s * Ni / D; both channels must stay strictly proper.
  if (d1 + 1 >= n || d2 + 1 >= n) {
    throw std::invalid_argument("realize: non-proper transfer function");
  }

  StateSpace ss;
  // Proportional channels collapse to one chain (H2 = H1 / Kp by structure).
  double lambda = 0.0;
  bool proportional = false;
  if (d1 >= 0) {
    lambda = (d1 < n2.size()) ? n2(d1) / n1(d1) : 0.0;
    proportional = true;
    for (int i = 0; i <= std::max(d1, d2); ++i) {
      const double v1 = i < n1.size() ? n1(i) : 0.0;
      const double v2 = i < n2.size() ? n2(i) : 0.0;
      if (std::abs(v2 - lambda * v1) >
          1e-9 * std::max(1.0, n2.cwiseAbs().maxCoeff())) {
        proportional = false;
        break;
      }
    }
  }

  if (d1 < 0 || proportional) {
    const auto [A, b] = companion(dm, n);
    ss.A = A;
    ss.B = Eigen::MatrixXd::Zero(n, 2);
    ss.C = Eigen::MatrixXd::Zero(2, n);
    if (d1 < 0 && d2 >= 0) {
      ss.B.col(1) = b;
      ss.C.row(0) = output_row(n2, n);
      ss.C.row(1) = output_row(poly_shift(n2), n);
    } else {
      ss.B.col(0) = b;
      if (d1 >= 0) ss.B.col(1) = lambda * b;
      ss.C.row(0) = output_row(n1, n);
      ss.C.row(1) = output_row(poly_shift(n1), n);
    }
  } else {
    // Independent chains per input.
    const auto [A, b] = companion(dm, n);
    ss.A = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    ss.A.topLeftCorner(n, n) = A;
    ss.A.bottomRightCorner(n, n) = A;
    ss.B = Eigen::MatrixXd::Zero(2 * n, 2);
    ss.B.col(0).head(n) = b;
    ss.B.col(1).tail(n) = b;
    ss.C = Eigen::MatrixXd::Zero(2, 2 * n);
    ss.C.row(0).head(n) = output_row(n1, n);
    ss.C.row(0).tail(n) = output_row(n2, n);
    ss.C.row(1).head(n) = output_row(poly_shift(n1), n);
    ss.C.row(1).tail(n) = output_row(poly_shift(n2), n);
  }
  // Gramian balancing (with 1e-10 truncation) when the loop is stable; plain
  // diagonal balancing otherwise.
  if (!balance_gramian(ss.A, ss.B, ss.C)) {
    balance(ss.A, ss.B, ss.C);
  }
  return ss;
}

ClosedLoopModel discretize(const ClosedLoopTf& tf, double T) {
  if (!(T > 0.0)) throw std::invalid_argument("discretize: T must be positive");
  const StateSpace ss = realize_closed_loop(tf);
  const int n = static_cast<int>(ss.A.rows());

  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n + 2, n + 2);
  M.topLeftCorner(n, n) = ss.A * T;
  M.topRightCorner(n, 2) = ss.B * T;
  const Eigen::MatrixXd E = M.exp();

  ClosedLoopModel m;
  m.A = E.topLeftCorner(n, n);
  m.B = E.topRightCorner(n, 2);
  m.C = ss.C;
  m.Ac = ss.A;
  m.Bc = ss.B;
  m.kp = tf.kp;
  m.kv = tf.kv;
  m.T = T;
  m.spectral_radius = m.A.eigenvalues().cwiseAbs().maxCoeff();
  m.stable = m.spectral_radius < 1.0;
  if (!m.stable) {
    log::warn("closed loop unstable at construction: spectral radius %.6f "
              "(Kp=%.3g, Kv=%.3g)",
              m.spectral_radius, tf.kp, tf.kv);
  }
  return m;
}

Eigen::VectorXd ClosedLoopModel::step(const Eigen::VectorXd& state,
                                      const Eigen::Vector2d& refs) const {
  return A * state + B * refs;
}

Eigen::VectorXd ClosedLoopModel::steady_state(double position) const {
  const int n = order();
  const Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n) - A;
  return M.fullPivLu().solve(B * Eigen::Vector2d(position, 0.0));
}

ClosedLoopModel build_closed_loop(const PlantParams& plant, double kp, double kv,
                                  double T) {
  return discretize(closed_loop_tf(plant_transfer_function(plant), kp, kv), T);
}

}  // namespace contour
