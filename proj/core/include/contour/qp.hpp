#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <iosfwd>
#include <memory>

namespace contour {

/// Bound magnitudes at or above this sentinel are treated as infinite.
constexpr double kQpInf = 1e30;

/// Convex quadratic program  min 1/2 x'Px + q'x  s.t.  l <= Ax <= u.
struct QpProblem {
  Eigen::SparseMatrix<double> P;  // n x n, symmetric positive semidefinite
  Eigen::VectorXd q;              // n
  Eigen::SparseMatrix<double> A;  // m x n
  Eigen::VectorXd l;              // m, -kQpInf allowed
  Eigen::VectorXd u;              // m, +kQpInf allowed

  int num_vars() const { return static_cast<int>(q.size()); }
  int num_constraints() const { return static_cast<int>(l.size()); }

  /// Throws std::invalid_argument on asymmetric P (beyond 1e-12 relative)
  /// or l > u.
  void validate() const;

  static QpProblem from_dense(const Eigen::MatrixXd& P, const Eigen::VectorXd& q,
                              const Eigen::MatrixXd& A, const Eigen::VectorXd& l,
                              const Eigen::VectorXd& u);
};

enum class QpStatus { Solved, MaxIter, PrimalInfeasible };

struct QpSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd y;  // duals for l <= Ax <= u
  QpStatus status = QpStatus::MaxIter;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double objective = 0.0;
};

struct QpSettings {
  double eps_abs = 1e-8;
  double eps_rel = 1e-8;
  int max_iter = 20000;
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;
  bool scaling = true;        // Ruiz equilibration
  int scaling_iters = 10;
  bool polish = true;
  double polish_delta = 1e-9;
  int check_interval = 25;
  int rho_adapt_interval = 50;
  double eps_infeasible = 1e-10;
};

/// Operator-splitting (ADMM) solver with a cached KKT factorization and an
/// active-set polish step. A solver instance is single-threaded and reusable:
/// repeated solves with unchanged sparsity reuse the symbolic analysis, and
/// warm starts carry the previous primal/dual iterate.
class QpSolver {
 public:
  explicit QpSolver(QpProblem problem, QpSettings settings = {});
  ~QpSolver();
  QpSolver(QpSolver&&) noexcept;
  QpSolver& operator=(QpSolver&&) noexcept;

  /// Replace numeric values; sparsity patterns of P and A must be unchanged.
  void update(const QpProblem& problem);

  void warm_start(const Eigen::VectorXd& x, const Eigen::VectorXd& y);
  void clear_warm_start();

  QpSolution solve();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// One-shot convenience wrapper around QpSolver.
QpSolution solve_qp(const QpProblem& problem, const QpSettings& settings = {});

/// Plain-text dump (dimensions, then triplets and vectors) for offline
/// debugging.
void dump_problem(const QpProblem& problem, std::ostream& out);

}  // namespace contour
