#include "gpat/geom3d.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace gpat::geom {

double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

double Mat3::determinant() const {
  const Mat3& a = *this;
  return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
         a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
}

Mat3 skew(const Vec3& v) { return Mat3{{0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0}}; }

double frobenius_norm(const Mat3& a) {
  double s = 0.0;
  for (double x : a.m) s += x * x;
  return std::sqrt(s);
}

Rotation Rotation::about_x(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return Rotation{Mat3{{1, 0, 0, 0, c, -s, 0, s, c}}};
}

Rotation Rotation::about_y(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return Rotation{Mat3{{c, 0, s, 0, 1, 0, -s, 0, c}}};
}

Rotation Rotation::about_z(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return Rotation{Mat3{{c, -s, 0, s, c, 0, 0, 0, 1}}};
}

bool Rotation::is_valid(double tol) const {
  const Mat3 g = m_ * m_.transposed();
  const Mat3 id = Mat3::identity();
  for (std::size_t i = 0; i < 9; ++i) {
    if (!std::isfinite(m_.m[i]) || std::abs(g.m[i] - id.m[i]) > tol) return false;
  }
  return std::abs(m_.determinant() - 1.0) <= tol;
}

Rotation quat2rot(const QuatImag& q) {
  const Vec3 v{q.b, q.c, q.d};
  const double n = norm(v);
  if (n == 0.0) return Rotation::identity();
  if (n < 1e-8) {
    // First-order Rodrigues: omega * axis ~= 2 * (b, c, d).
    return Rotation{Mat3::identity() + skew(2.0 * v)};
  }
  const double s = std::sqrt(1.0 + n * n);
  const double omega = 2.0 * std::atan2(n / s, 1.0 / s);
  const Mat3 k = skew((1.0 / n) * v);
  return Rotation{Mat3::identity() + std::sin(omega) * k + (1.0 - std::cos(omega)) * (k * k)};
}

namespace {

double wrap_pi(double a) {
  // atan2 may return -pi; the convention keeps angles in (-pi, pi].
  return a <= -std::numbers::pi ? a + 2.0 * std::numbers::pi : a;
}

}  // namespace

EulerAngles mat2axis(const Rotation& r) {
  const double r11 = r(0, 0), r21 = r(1, 0), r31 = r(2, 0);
  EulerAngles e;
  e.theta = std::atan2(-r31, std::sqrt(r11 * r11 + r21 * r21));
  if (std::abs(r31) >= 1.0 - 1e-9) {
    // Gimbal lock: roll and yaw are coupled; fold everything into yaw.
    e.phi = 0.0;
    e.psi = wrap_pi(std::atan2(-r(0, 1), r(1, 1)));
    return e;
  }
  e.phi = wrap_pi(std::atan2(r(2, 1), r(2, 2)));
  e.psi = wrap_pi(std::atan2(r21, r11));
  return e;
}

Rotation axis2mat(const EulerAngles& e) {
  return Rotation::about_z(e.psi) * Rotation::about_y(e.theta) * Rotation::about_x(e.phi);
}

RigidTransform compose(const RigidTransform& delta, const RigidTransform& base) {
  return {delta.r * base.r, Translation{delta.r * base.t.v + delta.t.v}};
}

Vec3 apply(const RigidTransform& t, const Vec3& p) { return t.r * p + t.t.v; }

std::vector<Vec3> apply(const RigidTransform& t, std::span<const Vec3> points) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const Vec3& p : points) out.push_back(apply(t, p));
  return out;
}

RigidTransform inverse(const RigidTransform& t) {
  const Rotation rt = t.r.transposed();
  return {rt, Translation{-(rt * t.t.v)}};
}

double rotation_angle(const Rotation& r1, const Rotation& r2) {
  const Mat3 rel = r1.matrix().transposed() * r2.matrix();
  const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  // sin(angle) from the skew part keeps precision near 0 and pi where acos is ill-conditioned.
  const Vec3 w{rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1)};
  const double s = 0.5 * norm(w);
  return std::atan2(s, c);
}

double geodesic_distance(const Rotation& r1, const Rotation& r2) {
  const double theta = rotation_angle(r1, r2);
  return 2.0 * theta * theta;
}

Rotation random_rotation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u1 = unit(rng), u2 = unit(rng), u3 = unit(rng);
  const double two_pi = 2.0 * std::numbers::pi;
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  const double x = a * std::sin(two_pi * u2), y = a * std::cos(two_pi * u2);
  const double z = b * std::sin(two_pi * u3), w = b * std::cos(two_pi * u3);
  return Rotation{Mat3{{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),  //
                        2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),  //
                        2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}}};
}

}  // namespace gpat::geom
