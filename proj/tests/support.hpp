#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "gpat/geom3d.hpp"

namespace testsupport {

inline double max_gap(const gpat::geom::Mat3& a, const gpat::geom::Mat3& b) {
  double g = 0.0;
  for (std::size_t i = 0; i < 9; ++i) g = std::max(g, std::abs(a.m[i] - b.m[i]));
  return g;
}

inline double max_gap(const gpat::geom::Rotation& a, const gpat::geom::Rotation& b) {
  return max_gap(a.matrix(), b.matrix());
}

inline double max_gap(const gpat::geom::Vec3& a, const gpat::geom::Vec3& b) {
  return std::max({std::abs(a.x - b.x), std::abs(a.y - b.y), std::abs(a.z - b.z)});
}

inline gpat::geom::Vec3 random_vec(std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  const double x = u(rng), y = u(rng), z = u(rng);
  return {x, y, z};
}

inline gpat::geom::RigidTransform random_pose(std::mt19937_64& rng, double t_scale = 1.0) {
  const gpat::geom::Rotation r = gpat::geom::random_rotation(rng);
  return {r, {random_vec(rng, t_scale)}};
}

// Rodrigues rotation for a known axis-angle, built without any library rotation code.
inline gpat::geom::Rotation rodrigues(gpat::geom::Vec3 axis, double angle) {
  const double n = std::sqrt(gpat::geom::dot(axis, axis));
  axis = (1.0 / n) * axis;
  const double c = std::cos(angle), s = std::sin(angle), C = 1.0 - c;
  const double x = axis.x, y = axis.y, z = axis.z;
  return gpat::geom::Rotation{gpat::geom::Mat3{{c + x * x * C, x * y * C - z * s, x * z * C + y * s,  //
                                                y * x * C + z * s, c + y * y * C, y * z * C - x * s,  //
                                                z * x * C - y * s, z * y * C + x * s, c + z * z * C}}};
}

}  // namespace testsupport
