#include "contour/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace contour {
namespace {

constexpr double kPi = 3.14159265358979323846;

// 10-point Gauss-Legendre nodes/weights on [-1, 1].
constexpr int kGlOrder = 10;
constexpr double kGlNode[kGlOrder] = {
    -0.9739065285171717, -0.8650633666889845, -0.6794095682990244,
    -0.4333953941292472, -0.1488743389816312, 0.1488743389816312,
    0.4333953941292472,  0.6794095682990244,  0.8650633666889845,
    0.9739065285171717};
constexpr double kGlWeight[kGlOrder] = {
    0.0666713443086881, 0.1494513491505806, 0.2190863625159820,
    0.2692667193099963, 0.2955242247147529, 0.2955242247147529,
    0.2692667193099963, 0.2190863625159820, 0.1494513491505806,
    0.0666713443086881};

double wrap(double s, double L) {
  double r = std::fmod(s, L);
  if (r < 0.0) r += L;
  return r;
}

}  // namespace

PathGeometry PathGeometry::octagon(double circumradius,
                                   const Eigen::Vector2d& center) {
  if (!(circumradius > 0.0)) {
    throw std::invalid_argument("octagon circumradius must be positive");
  }
  PathGeometry g;
  g.kind_ = GeometryKind::Octagon;
  g.center_ = center;
  g.vertices_.resize(9);
  for (int i = 0; i <= 8; ++i) {
    const double a = 2.0 * kPi * static_cast<double>(i % 8) / 8.0;
    g.vertices_[i] = center + circumradius * Eigen::Vector2d(std::cos(a), std::sin(a));
  }
  g.side_ = (g.vertices_[1] - g.vertices_[0]).norm();
  g.length_ = 8.0 * g.side_;
  g.edge_dirs_.resize(8);
  for (int i = 0; i < 8; ++i) {
    g.edge_dirs_[i] = (g.vertices_[i + 1] - g.vertices_[i]) / g.side_;
  }
  g.build_scan_cache(8192);
  return g;
}

PathGeometry PathGeometry::infinity(double scale, const Eigen::Vector2d& center,
                                    int quad_intervals, int newton_refinements) {
  if (!(scale > 0.0)) {
    throw std::invalid_argument("infinity scale must be positive");
  }
  if (quad_intervals < 16) {
    throw std::invalid_argument("quad_intervals too small");
  }
  PathGeometry g;
  g.kind_ = GeometryKind::Infinity;
  g.center_ = center;
  g.scale_ = scale;
  g.newton_refinements_ = newton_refinements;

  const int n = quad_intervals;
  g.knot_t_.resize(n + 1);
  g.knot_s_.resize(n + 1);
  g.knot_s_[0] = 0.0;
  for (int i = 0; i <= n; ++i) {
    g.knot_t_[i] = 2.0 * kPi * static_cast<double>(i) / static_cast<double>(n);
  }
  for (int i = 0; i < n; ++i) {
    const double mid = 0.5 * (g.knot_t_[i] + g.knot_t_[i + 1]);
    const double half = 0.5 * (g.knot_t_[i + 1] - g.knot_t_[i]);
    double acc = 0.0;
    for (int q = 0; q < kGlOrder; ++q) {
      acc += kGlWeight[q] * g.infinity_speed(mid + half * kGlNode[q]);
    }
    g.knot_s_[i + 1] = g.knot_s_[i] + half * acc;
  }
  g.length_ = g.knot_s_[n];

  // Fritsch-Carlson monotone cubic slopes for t(s).
  g.knot_dtds_.assign(n + 1, 0.0);
  std::vector<double> h(n), delta(n);
  for (int i = 0; i < n; ++i) {
    h[i] = g.knot_s_[i + 1] - g.knot_s_[i];
    delta[i] = (g.knot_t_[i + 1] - g.knot_t_[i]) / h[i];
  }
  g.knot_dtds_[0] = delta[0];
  g.knot_dtds_[n] = delta[n - 1];
  for (int i = 1; i < n; ++i) {
    const double w1 = 2.0 * h[i] + h[i - 1];
    const double w2 = h[i] + 2.0 * h[i - 1];
    g.knot_dtds_[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
  }
  g.build_scan_cache(8192);
  return g;
}

Eigen::Vector2d PathGeometry::infinity_point(double t) const {
  return center_ + scale_ * Eigen::Vector2d(std::sin(t), std::sin(t) * std::cos(t));
}

Eigen::Vector2d PathGeometry::infinity_velocity(double t) const {
  return scale_ * Eigen::Vector2d(std::cos(t), std::cos(2.0 * t));
}

double PathGeometry::infinity_speed(double t) const {
  const double c1 = std::cos(t), c2 = std::cos(2.0 * t);
  return scale_ * std::sqrt(c1 * c1 + c2 * c2);
}

double PathGeometry::param_of_arclength(double s) const {
  const auto it = std::upper_bound(knot_s_.begin(), knot_s_.end(), s);
  int i = static_cast<int>(std::distance(knot_s_.begin(), it)) - 1;
  i = std::clamp(i, 0, static_cast<int>(knot_s_.size()) - 2);

  // Monotone cubic Hermite evaluation of t(s) on [s_i, s_{i+1}].
  const double hs = knot_s_[i + 1] - knot_s_[i];
  const double u = (s - knot_s_[i]) / hs;
  const double t0 = knot_t_[i], t1 = knot_t_[i + 1];
  const double d0 = knot_dtds_[i] * hs, d1 = knot_dtds_[i + 1] * hs;
  const double u2 = u * u, u3 = u2 * u;
  double t = (2 * u3 - 3 * u2 + 1) * t0 + (u3 - 2 * u2 + u) * d0 +
             (-2 * u3 + 3 * u2) * t1 + (u3 - u2) * d1;

  // Newton corrections on g(t) = arclen(knot_t_[i] -> t) - (s - s_i).
  for (int it_n = 0; it_n < newton_refinements_; ++it_n) {
    const double mid = 0.5 * (knot_t_[i] + t);
    const double half = 0.5 * (t - knot_t_[i]);
    double acc = 0.0;
    for (int q = 0; q < kGlOrder; ++q) {
      acc += kGlWeight[q] * infinity_speed(mid + half * kGlNode[q]);
    }
    const double resid = half * acc - (s - knot_s_[i]);
    t -= resid / infinity_speed(t);
  }
  return t;
}

PathSample PathGeometry::eval(double s) const {
  if (std::isnan(s)) {
    throw std::invalid_argument("eval: s is NaN");
  }
  s = wrap(s, length_);
  PathSample out;
  if (kind_ == GeometryKind::Octagon) {
    int i = static_cast<int>(s / side_);
    i = std::clamp(i, 0, 7);
    const double local = s - static_cast<double>(i) * side_;
    out.position = vertices_[i] + local * edge_dirs_[i];
    out.tangent = edge_dirs_[i];
  } else {
    const double t = param_of_arclength(s);
    out.position = infinity_point(t);
    out.tangent = infinity_velocity(t).normalized();
  }
  return out;
}

void PathGeometry::build_scan_cache(int samples) {
  scan_points_.resize(samples);
  scan_ds_ = length_ / static_cast<double>(samples);
  for (int i = 0; i < samples; ++i) {
    scan_points_[i] = eval(static_cast<double>(i) * scan_ds_).position;
  }
}

double PathGeometry::nearest_param(const Eigen::Vector2d& p) const {
  if (!p.allFinite()) {
    throw std::invalid_argument("nearest_param: p must be finite");
  }
  // Coarse scan over the cached polyline; strict improvement keeps the
  // smallest-s minimizer on ties.
  int best = 0;
  double best_d2 = (scan_points_[0] - p).squaredNorm();
  const int n = static_cast<int>(scan_points_.size());
  for (int i = 1; i < n; ++i) {
    const double d2 = (scan_points_[i] - p).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  // Golden-section refinement on [s(best-1), s(best+1)] (unwrapped; eval
  // wraps internally).
  double lo = (static_cast<double>(best) - 1.0) * scan_ds_;
  double hi = (static_cast<double>(best) + 1.0) * scan_ds_;
  const auto dist2 = [&](double s) { return (eval(s).position - p).squaredNorm(); };
  constexpr double kInvPhi = 0.6180339887498949;
  double a = lo, b = hi;
  double x1 = b - kInvPhi * (b - a);
  double x2 = a + kInvPhi * (b - a);
  double f1 = dist2(x1), f2 = dist2(x2);
  while (b - a > 1e-12 * std::max(1.0, length_)) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - kInvPhi * (b - a);
      f1 = dist2(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + kInvPhi * (b - a);
      f2 = dist2(x2);
    }
  }
  double s_star = 0.5 * (a + b);
  // Prefer the smaller wrapped representative when the two ends coincide.
  s_star = wrap(s_star, length_);
  if (length_ - s_star < 1e-12 * length_) s_star = 0.0;
  return s_star;
}

double PathGeometry::signed_contour_error(const Eigen::Vector2d& p) const {
  const double s = nearest_param(p);
  const PathSample ps = eval(s);
  const Eigen::Vector2d normal(-ps.tangent.y(), ps.tangent.x());
  // sign convention follows the error vector r_d(shat) - p
  return normal.dot(ps.position - p);
}

void PathGeometry::export_polyline_csv(std::ostream& out, int samples) const {
  out << "s,x,y,tx,ty\n";
  for (int i = 0; i < samples; ++i) {
    const double s = length_ * static_cast<double>(i) / static_cast<double>(samples);
    const PathSample ps = eval(s);
    out << s << ',' << ps.position.x() << ',' << ps.position.y() << ','
        << ps.tangent.x() << ',' << ps.tangent.y() << '\n';
  }
}

}  // namespace contour
