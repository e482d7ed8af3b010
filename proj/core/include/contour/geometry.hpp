#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <vector>

namespace contour {

enum class GeometryKind { Octagon, Infinity };

/// Position and unit tangent of the reference curve at a given arc length.
struct PathSample {
  Eigen::Vector2d position;
  Eigen::Vector2d tangent;
};

/// Closed 2D reference geometry parameterized by arc length s in [0, L].
///
/// Supported shapes: a regular octagon traversed counter-clockwise from the
/// vertex at angle 0, and a lemniscate of Gerono (infinity shape)
/// reparameterized to arc length by cumulative Gauss-Legendre quadrature.
/// Instances are immutable after construction and safe to share across
/// threads.
class PathGeometry {
 public:
  /// Regular octagon of straight segments. L = 8 * side exactly.
  static PathGeometry octagon(double circumradius,
                              const Eigen::Vector2d& center = {0.0, 0.0});

  /// Lemniscate of Gerono x = a sin t, y = a sin t cos t, t in [0, 2pi].
  /// `quad_intervals` controls the arc-length table resolution and
  /// `newton_refinements` the number of Newton corrections applied on top of
  /// the monotone-cubic inverse lookup.
  static PathGeometry infinity(double scale,
                               const Eigen::Vector2d& center = {0.0, 0.0},
                               int quad_intervals = 4096,
                               int newton_refinements = 2);

  GeometryKind kind() const { return kind_; }
  double length() const { return length_; }
  bool closed() const { return true; }

  /// r_d(s) and the unit tangent r'_d(s). Arguments outside [0, L] wrap
  /// modulo L. Tangent at an octagon vertex comes from the outgoing edge.
  PathSample eval(double s) const;

  /// Arc length of the point on the curve closest to p: coarse scan over a
  /// precomputed polyline followed by golden-section refinement. Ties break
  /// toward smaller s. Result lies in [0, L).
  double nearest_param(const Eigen::Vector2d& p) const;

  /// Signed contour error of p: distance to the curve with the sign taken
  /// from the left normal at the closest point.
  double signed_contour_error(const Eigen::Vector2d& p) const;

  /// Writes `samples` uniformly spaced rows with header s,x,y,tx,ty.
  void export_polyline_csv(std::ostream& out, int samples = 2048) const;

 private:
  PathGeometry() = default;

  Eigen::Vector2d infinity_point(double t) const;
  Eigen::Vector2d infinity_velocity(double t) const;  // dr/dt, not unit
  double infinity_speed(double t) const;
  double param_of_arclength(double s) const;  // native t for arc length s
  void build_scan_cache(int samples);

  GeometryKind kind_ = GeometryKind::Octagon;
  Eigen::Vector2d center_{0.0, 0.0};
  double length_ = 0.0;

  // octagon
  double side_ = 0.0;
  std::vector<Eigen::Vector2d> vertices_;  // 9 entries, last == first
  std::vector<Eigen::Vector2d> edge_dirs_;

  // infinity: arc-length table s_k -> t_k with monotone cubic slopes
  double scale_ = 0.0;
  int newton_refinements_ = 0;
  std::vector<double> knot_t_;
  std::vector<double> knot_s_;
  std::vector<double> knot_dtds_;

  // shared nearest-point scan cache
  std::vector<Eigen::Vector2d> scan_points_;
  double scan_ds_ = 0.0;
};

}  // namespace contour
