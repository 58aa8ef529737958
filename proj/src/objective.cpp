#include "gpat/objective.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace gpat::objective {

void LossWeights::validate() const {
  for (double w : {lambda_rot, lambda_shape, lambda_chamfer, lambda_point}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("loss weights must be finite and non-negative");
  }
}

// ---- chamfer ------------------------------------------------------------------

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

struct Nearest {
  std::size_t index = kNone;
  double d2 = std::numeric_limits<double>::infinity();

  void offer(std::size_t i, double d) {
    if (d < d2 || (d == d2 && i < index)) {
      index = i;
      d2 = d;
    }
  }
};

Nearest brute_nearest(const geom::Vec3& x, std::span<const geom::Vec3> to, std::size_t exclude = kNone) {
  Nearest best;
  for (std::size_t k = 0; k < to.size(); ++k) {
    if (k != exclude) best.offer(k, geom::squared_norm(x - to[k]));
  }
  return best;
}

// Dense uniform grid over the bounding box of a point set. Queries walk
// Chebyshev rings outward from their cell until no unvisited cell can hold a
// closer point, so results equal the brute-force answer.
class Grid {
 public:
  Grid(std::span<const geom::Vec3> pts, double cell) : pts_(pts), cell_(cell) {
    lo_ = hi_ = pts[0];
    for (const geom::Vec3& p : pts) {
      for (int a = 0; a < 3; ++a) {
        lo_[a] = std::min(lo_[a], p[a]);
        hi_[a] = std::max(hi_[a], p[a]);
      }
    }
    for (int a = 0; a < 3; ++a) dims_[a] = static_cast<long>(std::floor((hi_[a] - lo_[a]) / cell_)) + 1;
    start_.assign(static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]) + 1, 0);
    std::vector<std::size_t> cell_of(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto c = cell_coords(pts[i]);
      cell_of[i] = flat(c[0], c[1], c[2]);
      ++start_[cell_of[i] + 1];
    }
    for (std::size_t c = 1; c < start_.size(); ++c) start_[c] += start_[c - 1];
    order_.resize(pts.size());
    std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
    for (std::size_t i = 0; i < pts.size(); ++i) order_[fill[cell_of[i]]++] = i;
  }

  static std::size_t cell_count(std::span<const geom::Vec3> pts, double cell) {
    geom::Vec3 lo = pts[0], hi = pts[0];
    for (const geom::Vec3& p : pts) {
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], p[a]);
        hi[a] = std::max(hi[a], p[a]);
      }
    }
    double n = 1.0;
    for (int a = 0; a < 3; ++a) n *= std::floor((hi[a] - lo[a]) / cell) + 1.0;
    return n > 1e12 ? std::numeric_limits<std::size_t>::max() : static_cast<std::size_t>(n);
  }

  Nearest nearest(const geom::Vec3& x, std::size_t exclude = kNone) const {
    const auto c = raw_coords(x);
    // Rings closer than the grid box are empty.
    long r0 = 0, rmax = 0;
    for (int a = 0; a < 3; ++a) {
      const long below = -c[a], above = c[a] - (dims_[a] - 1);
      r0 = std::max({r0, below, above});
      rmax = std::max({rmax, c[a], dims_[a] - 1 - c[a]});
    }
    Nearest best;
    for (long r = r0; r <= rmax; ++r) {
      visit_ring(c, r, x, exclude, best);
      const double reach = static_cast<double>(r) * cell_ * (1.0 - 1e-9);
      if (best.index != kNone && best.d2 < reach * reach) break;
    }
    return best;
  }

 private:
  std::array<long, 3> raw_coords(const geom::Vec3& p) const {
    return {static_cast<long>(std::floor((p.x - lo_.x) / cell_)), static_cast<long>(std::floor((p.y - lo_.y) / cell_)),
            static_cast<long>(std::floor((p.z - lo_.z) / cell_))};
  }
  std::array<long, 3> cell_coords(const geom::Vec3& p) const {
    auto c = raw_coords(p);
    for (int a = 0; a < 3; ++a) c[a] = std::clamp(c[a], 0L, dims_[a] - 1);
    return c;
  }
  std::size_t flat(long x, long y, long z) const { return static_cast<std::size_t>((x * dims_[1] + y) * dims_[2] + z); }

  void visit_ring(const std::array<long, 3>& c, long r, const geom::Vec3& x, std::size_t exclude, Nearest& best) const {
    const long x0 = std::max(c[0] - r, 0L), x1 = std::min(c[0] + r, dims_[0] - 1);
    const long y0 = std::max(c[1] - r, 0L), y1 = std::min(c[1] + r, dims_[1] - 1);
    const long z0 = std::max(c[2] - r, 0L), z1 = std::min(c[2] + r, dims_[2] - 1);
    for (long i = x0; i <= x1; ++i) {
      for (long j = y0; j <= y1; ++j) {
        const bool inner = std::abs(i - c[0]) < r && std::abs(j - c[1]) < r;
        for (long k = z0; k <= z1; ++k) {
          // Inner cells of the cube belong to smaller rings: jump across.
          if (inner && std::abs(k - c[2]) < r) {
            k = std::max(k, c[2] + r - 1);
            continue;
          }
          const std::size_t f = flat(i, j, k);
          for (std::size_t s = start_[f]; s < start_[f + 1]; ++s) {
            const std::size_t idx = order_[s];
            if (idx != exclude) best.offer(idx, geom::squared_norm(x - pts_[idx]));
          }
        }
      }
    }
  }

  std::span<const geom::Vec3> pts_;
  double cell_;
  geom::Vec3 lo_, hi_;
  std::array<long, 3> dims_{};
  std::vector<std::size_t> start_;
  std::vector<std::size_t> order_;
};

// Median nearest-neighbour spacing of `pts`, bounded so that the grid stays
// within a small multiple of the point count.
double grid_cell(std::span<const geom::Vec3> pts) {
  geom::Vec3 lo = pts[0], hi = pts[0];
  for (const geom::Vec3& p : pts) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  const double extent = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z});
  if (!(extent > 0.0)) return 0.0;
  const std::size_t limit = 64 * pts.size() + 64;
  double coarse = extent / std::cbrt(static_cast<double>(pts.size()));
  while (Grid::cell_count(pts, coarse) > limit) coarse *= 2.0;
  const Grid probe(pts, coarse);
  std::vector<double> spacing(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) spacing[i] = std::sqrt(probe.nearest(pts[i], i).d2);
  auto mid = spacing.begin() + static_cast<std::ptrdiff_t>(spacing.size() / 2);
  std::nth_element(spacing.begin(), mid, spacing.end());
  double cell = *mid > 0.0 ? *mid : coarse;
  while (Grid::cell_count(pts, cell) > limit) cell *= 2.0;
  return cell;
}

void require_nonempty(std::span<const geom::Vec3> p, std::span<const geom::Vec3> q) {
  if (p.empty() || q.empty()) throw std::invalid_argument("chamfer: empty point cloud");
  // a NaN never wins a nearest-neighbour comparison
  for (auto cloud : {p, q}) {
    for (const geom::Vec3& x : cloud) {
      if (!std::isfinite(x.x) || !std::isfinite(x.y) || !std::isfinite(x.z)) {
        throw ag::NumericError("chamfer: non-finite point coordinate");
      }
    }
  }
}

}  // namespace

std::vector<std::size_t> nearest_indices(std::span<const geom::Vec3> from, std::span<const geom::Vec3> to,
                                         ChamferMethod method) {
  require_nonempty(from, to);
  if (method == ChamferMethod::automatic) {
    method = from.size() * to.size() > 4096 ? ChamferMethod::grid : ChamferMethod::brute_force;
  }
  std::vector<std::size_t> out(from.size());
  const double cell = method == ChamferMethod::grid && to.size() > 1 ? grid_cell(to) : 0.0;
  if (cell > 0.0) {
    const Grid grid(to, cell);
    for (std::size_t i = 0; i < from.size(); ++i) out[i] = grid.nearest(from[i]).index;
  } else {
    for (std::size_t i = 0; i < from.size(); ++i) out[i] = brute_nearest(from[i], to).index;
  }
  return out;
}

double chamfer_distance(std::span<const geom::Vec3> p, std::span<const geom::Vec3> q, ChamferMethod method) {
  require_nonempty(p, q);
  // each direction summed on its own so that swapping p and q is exact
  double forward = 0.0, backward = 0.0;
  const auto pq = nearest_indices(p, q, method);
  for (std::size_t i = 0; i < p.size(); ++i) forward += geom::squared_norm(p[i] - q[pq[i]]);
  const auto qp = nearest_indices(q, p, method);
  for (std::size_t i = 0; i < q.size(); ++i) backward += geom::squared_norm(q[i] - p[qp[i]]);
  return forward + backward;
}

namespace {

std::vector<geom::Vec3> rows_of(const ag::Tensor& t) {
  std::vector<geom::Vec3> out(t.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {t[3 * i], t[3 * i + 1], t[3 * i + 2]};
  return out;
}

ag::Tensor squared_sum(const ag::Tensor& x) { return ag::sum(x * x); }

ag::Tensor rotation_of(const core::PoseTensors& poses, std::size_t i) {
  return ag::reshape(ag::slice(poses.rot, 0, i, 1), {3, 3});
}
ag::Tensor translation_of(const core::PoseTensors& poses, std::size_t i) {
  return ag::reshape(ag::slice(poses.trans, 0, i, 1), {1, 3});
}

// Row-vector clouds: x R^T (+ t).
ag::Tensor rotate(const ag::Tensor& cloud, const ag::Tensor& rot) {
  return ag::matmul(cloud, ag::permute(rot, {1, 0}));
}

ag::Tensor gt_rotation(const geom::RigidTransform& t) {
  const auto& m = t.r.matrix().m;
  return ag::Tensor::from({3, 3}, std::vector<double>(m.begin(), m.end()));
}

void require_counts(std::size_t pred, std::size_t gt, std::size_t clouds) {
  if (pred != gt || (clouds != kNone && clouds != gt)) {
    throw std::invalid_argument("objective: " + std::to_string(pred) + " predicted poses, " + std::to_string(gt) +
                                " ground-truth poses" +
                                (clouds == kNone ? std::string() : ", " + std::to_string(clouds) + " clouds"));
  }
}

}  // namespace

ag::Tensor chamfer_tensor(const ag::Tensor& p, const ag::Tensor& q) {
  const auto pv = rows_of(p), qv = rows_of(q);
  const auto pq = nearest_indices(pv, qv);
  const auto qp = nearest_indices(qv, pv);
  return squared_sum(p - ag::index_select(q, pq)) + squared_sum(q - ag::index_select(p, qp));
}

// ---- losses -------------------------------------------------------------------

ag::Tensor pose_loss(const core::PoseTensors& pred, const std::vector<geom::RigidTransform>& gt, double lambda_rot) {
  require_counts(pred.count(), gt.size(), kNone);
  const core::PoseTensors target = core::PoseTensors::constant(gt);
  const std::size_t n = gt.size();
  const ag::Tensor rel = ag::matmul(ag::permute(target.rot, {0, 2, 1}), pred.rot);
  const ag::Tensor eye = ag::Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const ag::Tensor dev = rel - ag::broadcast(ag::reshape(eye, {1, 3, 3}), {n, 3, 3});
  return squared_sum(target.trans - pred.trans) + ag::scale(squared_sum(dev), lambda_rot);
}

ag::Tensor chamfer_loss(const core::PoseTensors& pred, const std::vector<geom::RigidTransform>& gt,
                        const std::vector<encoder::PartCloud>& clouds, double lambda_shape) {
  require_counts(pred.count(), gt.size(), clouds.size());
  ag::Tensor per_part = ag::Tensor::scalar(0.0);
  std::vector<ag::Tensor> assembled_gt, assembled_pred;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    const ag::Tensor cloud = encoder::cloud_tensor(clouds[i].points);
    const ag::Tensor rot_gt = rotate(cloud, gt_rotation(gt[i]));
    const ag::Tensor rot_pred = rotate(cloud, rotation_of(pred, i));
    per_part = per_part + chamfer_tensor(rot_gt, rot_pred);
    const auto& t = gt[i].t.v;
    assembled_gt.push_back(rot_gt + ag::Tensor::from({1, 3}, {t.x, t.y, t.z}));
    assembled_pred.push_back(rot_pred + translation_of(pred, i));
  }
  const ag::Tensor shape = chamfer_tensor(ag::concat(assembled_gt, 0), ag::concat(assembled_pred, 0));
  return per_part + ag::scale(shape, lambda_shape);
}

ag::Tensor point_loss(const core::PoseTensors& pred, const std::vector<geom::RigidTransform>& gt,
                      const std::vector<encoder::PartCloud>& clouds) {
  require_counts(pred.count(), gt.size(), clouds.size());
  ag::Tensor total = ag::Tensor::scalar(0.0);
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    const ag::Tensor cloud = encoder::cloud_tensor(clouds[i].points);
    total = total + squared_sum(rotate(cloud, gt_rotation(gt[i])) - rotate(cloud, rotation_of(pred, i)));
  }
  return total;
}

ag::Tensor total_loss(const ag::Tensor& pose, const ag::Tensor& chamfer, const ag::Tensor& point,
                      const LossWeights& weights) {
  weights.validate();
  return pose + ag::scale(chamfer, weights.lambda_chamfer) + ag::scale(point, weights.lambda_point);
}

LossComponents compute_losses(const core::PoseTensors& pred, const std::vector<geom::RigidTransform>& gt,
                              const std::vector<encoder::PartCloud>& clouds, const LossWeights& weights) {
  LossComponents c;
  c.pose = pose_loss(pred, gt, weights.lambda_rot);
  c.chamfer = chamfer_loss(pred, gt, clouds, weights.lambda_shape);
  c.point = point_loss(pred, gt, clouds);
  c.total = total_loss(c.pose, c.chamfer, c.point, weights);
  return c;
}

// ---- metrics ------------------------------------------------------------------

std::vector<geom::Vec3> assemble(const std::vector<geom::RigidTransform>& poses,
                                 const std::vector<encoder::PartCloud>& clouds) {
  require_counts(poses.size(), clouds.size(), kNone);
  std::vector<geom::Vec3> out;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    const auto moved = geom::apply(poses[i], clouds[i].points);
    out.insert(out.end(), moved.begin(), moved.end());
  }
  return out;
}

double shape_chamfer(const std::vector<geom::RigidTransform>& pred, const std::vector<geom::RigidTransform>& gt,
                     const std::vector<encoder::PartCloud>& clouds) {
  require_counts(pred.size(), gt.size(), clouds.size());
  return chamfer_distance(assemble(gt, clouds), assemble(pred, clouds));
}

double part_accuracy(const std::vector<geom::RigidTransform>& pred, const std::vector<geom::RigidTransform>& gt,
                     const std::vector<encoder::PartCloud>& clouds, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("part_accuracy: tau must be positive");
  require_counts(pred.size(), gt.size(), clouds.size());
  if (clouds.empty()) throw std::invalid_argument("part_accuracy: no parts");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    const double cd = chamfer_distance(geom::apply(gt[i], clouds[i].points), geom::apply(pred[i], clouds[i].points));
    if (cd < tau) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(clouds.size());
}

std::optional<double> connectivity_accuracy(const std::vector<geom::RigidTransform>& pred,
                                            const std::vector<Contact>& contacts, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("connectivity_accuracy: tau must be positive");
  if (contacts.empty()) return std::nullopt;
  std::size_t hits = 0;
  for (const Contact& c : contacts) {
    if (c.i >= pred.size() || c.j >= pred.size()) throw std::out_of_range("connectivity_accuracy: contact index");
    const geom::Vec3 a = geom::apply(pred[c.i], c.c_ij);
    const geom::Vec3 b = geom::apply(pred[c.j], c.c_ji);
    if (geom::squared_norm(a - b) < tau) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(contacts.size());
}

namespace {

double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  return a <= -std::numbers::pi ? a + 2.0 * std::numbers::pi : a;
}

ErrorPair mean_errors(const std::vector<std::array<double, 3>>& deltas) {
  if (deltas.empty()) throw std::invalid_argument("errors: no parts");
  ErrorPair e;
  for (const auto& d : deltas) {
    e.mae += (std::abs(d[0]) + std::abs(d[1]) + std::abs(d[2])) / 3.0;
    e.rmse += std::sqrt((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) / 3.0);
  }
  const double n = static_cast<double>(deltas.size());
  return {e.rmse / n, e.mae / n};
}

}  // namespace

ErrorPair rotation_errors(const std::vector<geom::RigidTransform>& pred, const std::vector<geom::RigidTransform>& gt) {
  require_counts(pred.size(), gt.size(), kNone);
  constexpr double deg = 180.0 / std::numbers::pi;
  std::vector<std::array<double, 3>> deltas;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const geom::EulerAngles a = geom::mat2axis(pred[i].r), b = geom::mat2axis(gt[i].r);
    deltas.push_back({deg * wrap_angle(a.phi - b.phi), deg * wrap_angle(a.theta - b.theta),
                      deg * wrap_angle(a.psi - b.psi)});
  }
  return mean_errors(deltas);
}

ErrorPair translation_errors(const std::vector<geom::RigidTransform>& pred,
                             const std::vector<geom::RigidTransform>& gt) {
  require_counts(pred.size(), gt.size(), kNone);
  std::vector<std::array<double, 3>> deltas;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const geom::Vec3 d = pred[i].t.v - gt[i].t.v;
    deltas.push_back({d.x, d.y, d.z});
  }
  return mean_errors(deltas);
}

double mean_geodesic(const std::vector<geom::RigidTransform>& pred, const std::vector<geom::RigidTransform>& gt) {
  require_counts(pred.size(), gt.size(), kNone);
  if (gt.empty()) throw std::invalid_argument("mean_geodesic: no parts");
  double s = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) s += geom::geodesic_distance(pred[i].r, gt[i].r);
  return s / static_cast<double>(gt.size());
}

namespace {

std::string g6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string ca_text(const std::optional<double>& ca) { return ca ? g6(*ca) : "undefined"; }

}  // namespace

std::string MetricReport::to_text() const {
  std::string s;
  s += "samples=" + std::to_string(samples) + "\n";
  s += "shape_cd=" + g6(shape_cd) + "\n";
  s += "part_accuracy=" + g6(part_accuracy) + "\n";
  s += "connectivity_accuracy=" + ca_text(connectivity_accuracy) + "\n";
  s += "rmse_r=" + g6(rmse_r) + "\n";
  s += "mae_r=" + g6(mae_r) + "\n";
  s += "rmse_t=" + g6(rmse_t) + "\n";
  s += "mae_t=" + g6(mae_t) + "\n";
  s += "gd=" + g6(gd) + "\n";
  return s;
}

std::string MetricReport::csv_header() {
  return "sample,shape_cd,part_accuracy,connectivity_accuracy,rmse_r,mae_r,rmse_t,mae_t,gd";
}

std::string MetricReport::csv_row(const std::string& label) const {
  return label + "," + g6(shape_cd) + "," + g6(part_accuracy) + "," + ca_text(connectivity_accuracy) + "," +
         g6(rmse_r) + "," + g6(mae_r) + "," + g6(rmse_t) + "," + g6(mae_t) + "," + g6(gd);
}

MetricReport evaluate(const std::vector<geom::RigidTransform>& pred, const std::vector<geom::RigidTransform>& gt,
                      const std::vector<encoder::PartCloud>& clouds, const std::vector<Contact>& contacts,
                      double tau) {
  MetricReport r;
  r.shape_cd = shape_chamfer(pred, gt, clouds);
  r.part_accuracy = part_accuracy(pred, gt, clouds, tau);
  r.connectivity_accuracy = connectivity_accuracy(pred, contacts, tau);
  const ErrorPair rot = rotation_errors(pred, gt), trans = translation_errors(pred, gt);
  r.rmse_r = rot.rmse;
  r.mae_r = rot.mae;
  r.rmse_t = trans.rmse;
  r.mae_t = trans.mae;
  r.gd = mean_geodesic(pred, gt);
  return r;
}

MetricReport aggregate(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate: no reports");
  MetricReport out;
  out.samples = reports.size();
  double ca = 0.0;
  std::size_t ca_n = 0;
  for (const MetricReport& r : reports) {
    out.shape_cd += r.shape_cd;
    out.part_accuracy += r.part_accuracy;
    out.rmse_r += r.rmse_r;
    out.mae_r += r.mae_r;
    out.rmse_t += r.rmse_t;
    out.mae_t += r.mae_t;
    out.gd += r.gd;
    if (r.connectivity_accuracy) {
      ca += *r.connectivity_accuracy;
      ++ca_n;
    }
  }
  const double n = static_cast<double>(reports.size());
  out.shape_cd /= n;
  out.part_accuracy /= n;
  out.rmse_r /= n;
  out.mae_r /= n;
  out.rmse_t /= n;
  out.mae_t /= n;
  out.gd /= n;
  if (ca_n > 0) out.connectivity_accuracy = ca / static_cast<double>(ca_n);
  return out;
}

}  // namespace gpat::objective
