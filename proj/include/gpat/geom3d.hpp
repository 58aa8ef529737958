#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace gpat::geom {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }

  friend constexpr Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend constexpr Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
  friend constexpr Vec3 operator*(double s, const Vec3& a) { return {s * a.x, s * a.y, s * a.z}; }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
double norm(const Vec3& a);
constexpr double squared_norm(const Vec3& a) { return dot(a, a); }

// Row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> m{};

  static constexpr Mat3 identity() { return Mat3{{1, 0, 0, 0, 1, 0, 0, 0, 1}}; }
  static constexpr Mat3 zero() { return Mat3{}; }

  constexpr double operator()(int r, int c) const { return m[static_cast<std::size_t>(3 * r + c)]; }
  constexpr double& operator()(int r, int c) { return m[static_cast<std::size_t>(3 * r + c)]; }

  constexpr Mat3 transposed() const {
    Mat3 t;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
    return t;
  }
  constexpr double trace() const { return m[0] + m[4] + m[8]; }
  double determinant() const;

  friend constexpr Mat3 operator*(const Mat3& a, const Mat3& b) {
    Mat3 out;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        out(r, c) = a(r, 0) * b(0, c) + a(r, 1) * b(1, c) + a(r, 2) * b(2, c);
    return out;
  }
  friend constexpr Vec3 operator*(const Mat3& a, const Vec3& v) {
    return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z, a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
            a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
  }
  friend constexpr Mat3 operator+(const Mat3& a, const Mat3& b) {
    Mat3 out;
    for (std::size_t i = 0; i < 9; ++i) out.m[i] = a.m[i] + b.m[i];
    return out;
  }
  friend constexpr Mat3 operator-(const Mat3& a, const Mat3& b) {
    Mat3 out;
    for (std::size_t i = 0; i < 9; ++i) out.m[i] = a.m[i] - b.m[i];
    return out;
  }
  friend constexpr Mat3 operator*(double s, const Mat3& a) {
    Mat3 out;
    for (std::size_t i = 0; i < 9; ++i) out.m[i] = s * a.m[i];
    return out;
  }
  friend constexpr bool operator==(const Mat3&, const Mat3&) = default;
};

Mat3 skew(const Vec3& v);
double frobenius_norm(const Mat3& a);

/// Element of SO(3). Construction from an arbitrary matrix is unchecked; use
/// `is_valid` where the orthonormality invariant matters.
class Rotation {
 public:
  constexpr Rotation() : m_(Mat3::identity()) {}
  constexpr explicit Rotation(const Mat3& m) : m_(m) {}

  static constexpr Rotation identity() { return Rotation{}; }
  static Rotation about_x(double angle);
  static Rotation about_y(double angle);
  static Rotation about_z(double angle);

  constexpr const Mat3& matrix() const { return m_; }
  constexpr double operator()(int r, int c) const { return m_(r, c); }
  constexpr Rotation transposed() const { return Rotation{m_.transposed()}; }

  /// Orthonormal with det = +1, both within `tol`.
  bool is_valid(double tol = 1e-9) const;

  friend constexpr Rotation operator*(const Rotation& a, const Rotation& b) { return Rotation{a.m_ * b.m_}; }
  friend constexpr Vec3 operator*(const Rotation& a, const Vec3& v) { return a.m_ * v; }
  friend constexpr bool operator==(const Rotation&, const Rotation&) = default;

 private:
  Mat3 m_;
};

struct Translation {
  Vec3 v;
  friend constexpr bool operator==(const Translation&, const Translation&) = default;
};

/// Pose of one part: x -> r * x + t (column-vector convention).
struct RigidTransform {
  Rotation r;
  Translation t;

  static constexpr RigidTransform identity() { return {}; }
  friend constexpr bool operator==(const RigidTransform&, const RigidTransform&) = default;
};

/// Intrinsic ZYX angles: R = Rz(psi) * Ry(theta) * Rx(phi).
struct EulerAngles {
  double phi = 0.0;
  double theta = 0.0;
  double psi = 0.0;
};

/// Imaginary part of the unnormalized quaternion (1, b, c, d).
struct QuatImag {
  double b = 0.0;
  double c = 0.0;
  double d = 0.0;
};

Rotation quat2rot(const QuatImag& q);
EulerAngles mat2axis(const Rotation& r);
Rotation axis2mat(const EulerAngles& e);

/// Returns (dR * R, dR * t + dt).
RigidTransform compose(const RigidTransform& delta, const RigidTransform& base);
Vec3 apply(const RigidTransform& t, const Vec3& p);
std::vector<Vec3> apply(const RigidTransform& t, std::span<const Vec3> points);
RigidTransform inverse(const RigidTransform& t);

/// Relative rotation angle in [0, pi].
double rotation_angle(const Rotation& r1, const Rotation& r2);
/// Squared Frobenius norm of log(r1^T r2), i.e. 2 * angle^2.
double geodesic_distance(const Rotation& r1, const Rotation& r2);

/// Haar-uniform rotation (Shoemake's quaternion construction).
Rotation random_rotation(std::mt19937_64& rng);

}  // namespace gpat::geom
