#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "gpat/gpat_core.hpp"
#include "gpat/params.hpp"

// Measured checks of the invariants that the model relies on. Each returns the
// worst deviation observed so callers can compare against their own tolerance.
namespace gpat::verify {

/// max |R^T R - I| entry and |det R - 1| over n random quat2rot inputs.
double quat2rot_orthonormality(std::size_t n, std::uint64_t seed);
/// max entry gap between quat2rot and the Hamilton-product rotation of the
/// normalized quaternion (q v q*, applied to the basis vectors).
double quat2rot_oracle_gap(std::size_t n, std::uint64_t seed);
/// max entry gap of axis2mat(mat2axis(axis2mat(e))) vs axis2mat(e), and of the
/// angles themselves, for |theta| < pi/2 - 0.1.
double euler_roundtrip_gap(std::size_t n, std::uint64_t seed);

struct InvarianceGap {
  double attention = 0.0;    // max |a - a'|
  double features = 0.0;     // max |h^ - h^'| after one layer
  double rotation = 0.0;     // max Frobenius gap of final rotations vs T_g o baseline
  double translation = 0.0;  // max L2 gap of final translations
};

/// Random weights (d = 32), 2 to 4 parts with random clouds and random
/// starting poses; compares a run against the same run with every pose and
/// center moved by one random rigid transform. `shape` supplies heads, layers
/// and test hooks; its d is overridden.
InvarianceGap invariance_trial(std::uint64_t seed, core::GpatConfig shape);

/// Full-model loss gradient (2 parts, 8 points, d = 16, 2 heads, 2 virtual
/// points, 1 layer, 1 round) vs central differences with step 1e-5.
ag::FdReport toy_gradient_error(std::uint64_t seed);

/// Max |g_network - g_injected| over all parameter gradients for a loss on
/// round `rounds`, where g_injected replaces rounds before the last by
/// their output poses as constants.
double stop_gradient_gap(std::uint64_t seed, std::size_t rounds);

/// Max |grid - brute force| chamfer distance over `pairs` random cloud pairs.
double chamfer_path_gap(std::size_t pairs, std::uint64_t seed);

struct PropertyResult {
  std::string name;
  double measured = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// "quick" or "full" (the latter sweeps 1000 invariance seeds).
/// Writes one line per property to `out` as it goes.
std::vector<PropertyResult> run_suite(const std::string& level, bool negate_point_term, std::ostream& out);

}  // namespace gpat::verify
