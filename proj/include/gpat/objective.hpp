#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gpat/autograd.hpp"
#include "gpat/encoder.hpp"
#include "gpat/geom3d.hpp"
#include "gpat/gpat_core.hpp"

namespace gpat::objective {

struct LossWeights {
  double lambda_rot = 1.0;
  double lambda_shape = 1.0;
  double lambda_chamfer = 1.0;
  double lambda_point = 1.0;

  void validate() const;
};

/// A ground-truth contact between parts i and j; each point is in its own
/// part's canonical frame.
struct Contact {
  std::size_t i = 0;
  std::size_t j = 0;
  geom::Vec3 c_ij;
  geom::Vec3 c_ji;
};

// ---- chamfer ------------------------------------------------------------------

enum class ChamferMethod { brute_force, grid, automatic };

/// For each point of `from`, the index of its nearest point in `to`.
/// Ties resolve to the lowest index on every path.
std::vector<std::size_t> nearest_indices(std::span<const geom::Vec3> from, std::span<const geom::Vec3> to,
                                         ChamferMethod method = ChamferMethod::automatic);

/// Sum over P of the squared distance to the nearest point of Q, plus the
/// same from Q to P. Throws on an empty cloud.
double chamfer_distance(std::span<const geom::Vec3> p, std::span<const geom::Vec3> q,
                        ChamferMethod method = ChamferMethod::automatic);

/// Differentiable chamfer between [M, 3] and [K, 3] tensors; the
/// nearest-neighbour assignment is taken from the current values.
ag::Tensor chamfer_tensor(const ag::Tensor& p, const ag::Tensor& q);

// ---- losses -------------------------------------------------------------------

/// sum_i |t_i - t^_i|^2 + lambda_rot |R_i^T R^_i - I|_F^2
ag::Tensor pose_loss(const core::PoseTensors& pred, const std::vector<geom::RigidTransform>& gt, double lambda_rot);

/// sum_i CD(R_i P_i, R^_i P_i) + lambda_shape CD(assembled gt, assembled prediction)
ag::Tensor chamfer_loss(const core::PoseTensors& pred, const std::vector<geom::RigidTransform>& gt,
                        const std::vector<encoder::PartCloud>& clouds, double lambda_shape);

/// sum_i sum_j |R_i p_ij - R^_i p_ij|^2
ag::Tensor point_loss(const core::PoseTensors& pred, const std::vector<geom::RigidTransform>& gt,
                      const std::vector<encoder::PartCloud>& clouds);

struct LossComponents {
  ag::Tensor pose;
  ag::Tensor chamfer;
  ag::Tensor point;
  ag::Tensor total;
};

ag::Tensor total_loss(const ag::Tensor& pose, const ag::Tensor& chamfer, const ag::Tensor& point,
                      const LossWeights& weights);
LossComponents compute_losses(const core::PoseTensors& pred, const std::vector<geom::RigidTransform>& gt,
                              const std::vector<encoder::PartCloud>& clouds, const LossWeights& weights);

// ---- metrics ------------------------------------------------------------------

/// Every part's cloud under its pose, concatenated.
std::vector<geom::Vec3> assemble(const std::vector<geom::RigidTransform>& poses,
                                 const std::vector<encoder::PartCloud>& clouds);

double shape_chamfer(const std::vector<geom::RigidTransform>& pred, const std::vector<geom::RigidTransform>& gt,
                     const std::vector<encoder::PartCloud>& clouds);

/// Percentage of parts with CD(T_i P_i, T^_i P_i) < tau.
double part_accuracy(const std::vector<geom::RigidTransform>& pred, const std::vector<geom::RigidTransform>& gt,
                     const std::vector<encoder::PartCloud>& clouds, double tau);

/// Percentage of contacts with |T^_i c_ij - T^_j c_ji|^2 < tau; nullopt when
/// there are no contacts.
std::optional<double> connectivity_accuracy(const std::vector<geom::RigidTransform>& pred,
                                            const std::vector<Contact>& contacts, double tau);

struct ErrorPair {
  double rmse = 0.0;
  double mae = 0.0;
};

/// Euler-angle errors in degrees, component differences wrapped to (-180, 180].
ErrorPair rotation_errors(const std::vector<geom::RigidTransform>& pred, const std::vector<geom::RigidTransform>& gt);
ErrorPair translation_errors(const std::vector<geom::RigidTransform>& pred,
                             const std::vector<geom::RigidTransform>& gt);
/// Mean over parts of geodesic_distance.
double mean_geodesic(const std::vector<geom::RigidTransform>& pred, const std::vector<geom::RigidTransform>& gt);

struct MetricReport {
  double shape_cd = 0.0;
  double part_accuracy = 0.0;
  std::optional<double> connectivity_accuracy;
  double rmse_r = 0.0;
  double mae_r = 0.0;
  double rmse_t = 0.0;
  double mae_t = 0.0;
  double gd = 0.0;
  std::size_t samples = 1;

  /// One `name=value` line per metric, 6 significant digits.
  std::string to_text() const;
  static std::string csv_header();
  std::string csv_row(const std::string& label) const;
};

MetricReport evaluate(const std::vector<geom::RigidTransform>& pred, const std::vector<geom::RigidTransform>& gt,
                      const std::vector<encoder::PartCloud>& clouds, const std::vector<Contact>& contacts,
                      double tau = 0.01);
/// Mean of per-sample reports; CA averages only the samples where it is defined.
MetricReport aggregate(const std::vector<MetricReport>& reports);

}  // namespace gpat::objective
