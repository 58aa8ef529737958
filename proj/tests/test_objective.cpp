#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "gpat/objective.hpp"
#include "gpat/params.hpp"
#include "support.hpp"

using namespace gpat;
using namespace gpat::objective;
using geom::RigidTransform;
using geom::Vec3;

namespace {

const double kPi = std::numbers::pi;

std::vector<Vec3> cloud(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::vector<Vec3> out;
  for (std::size_t k = 0; k < n; ++k) out.push_back(testsupport::random_vec(rng, scale));
  return out;
}

// O(MK) reference written out independently of the library.
double chamfer_oracle(const std::vector<Vec3>& p, const std::vector<Vec3>& q) {
  auto one_way = [](const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    double s = 0.0;
    for (const Vec3& x : a) {
      double best = INFINITY;
      for (const Vec3& y : b) {
        const double dx = x.x - y.x, dy = x.y - y.y, dz = x.z - y.z;
        best = std::min(best, dx * dx + dy * dy + dz * dz);
      }
      s += best;
    }
    return s;
  };
  return one_way(p, q) + one_way(q, p);
}

std::vector<encoder::PartCloud> parts_of(std::vector<std::vector<Vec3>> pts) {
  std::vector<encoder::PartCloud> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    out[i].points = std::move(pts[i]);
    out[i].part_id = static_cast<int>(i);
  }
  return out;
}

RigidTransform shifted(double x, double y = 0, double z = 0) { return {geom::Rotation::identity(), {{x, y, z}}}; }
RigidTransform turned(double angle) { return {geom::Rotation::about_z(angle), {}}; }

}  // namespace

TEST_CASE("chamfer distance examples") {
  std::mt19937_64 rng(1);
  const auto p = cloud(20, rng);
  CHECK(chamfer_distance(p, p) == 0.0);
  const std::vector<Vec3> a{{0, 0, 0}}, b{{1, 0, 0}};
  CHECK(chamfer_distance(a, b) == 2.0);
  const std::vector<Vec3> none;
  CHECK_THROWS(chamfer_distance(none, b));
  CHECK_THROWS(chamfer_distance(a, none));
}

TEST_CASE("grid chamfer equals brute force") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> size(1, 120);
  for (int k = 0; k < 100; ++k) {
    // mix of uniform blobs and tight clusters far apart
    auto p = cloud(size(rng), rng, k % 3 == 0 ? 0.01 : 1.0);
    auto q = cloud(size(rng), rng, k % 5 == 0 ? 3.0 : 1.0);
    if (k % 7 == 0) {
      for (Vec3& x : q) x = x + Vec3{5, -2, 0};
    }
    const double oracle = chamfer_oracle(p, q);
    const double brute = chamfer_distance(p, q, ChamferMethod::brute_force);
    const double grid = chamfer_distance(p, q, ChamferMethod::grid);
    CHECK(std::abs(brute - oracle) <= 1e-9 * std::max(1.0, oracle));
    CHECK(std::abs(grid - brute) <= 1e-9);
    CHECK(std::abs(chamfer_distance(q, p) - chamfer_distance(p, q)) <= 1e-12);
    CHECK(nearest_indices(p, q, ChamferMethod::grid) == nearest_indices(p, q, ChamferMethod::brute_force));
  }
}

TEST_CASE("chamfer tensor matches the value and the finite differences") {
  std::mt19937_64 rng(3);
  const auto p = cloud(12, rng), q = cloud(9, rng);
  std::vector<double> flat_p, flat_q;
  for (const Vec3& x : p) flat_p.insert(flat_p.end(), {x.x, x.y, x.z});
  for (const Vec3& x : q) flat_q.insert(flat_q.end(), {x.x, x.y, x.z});
  ag::ParameterStore s;
  s.add("p", {12, 3}, flat_p);
  s.add("q", {9, 3}, flat_q);
  {
    ag::NoGradScope ng;
    CHECK(std::abs(chamfer_tensor(s.get("p"), s.get("q")).item() - chamfer_oracle(p, q)) < 1e-12);
  }
  CHECK(ag::finite_difference_check([&] { return chamfer_tensor(s.get("p"), s.get("q")); }, s, 1e-6) < 1e-6);
}

TEST_CASE("pose loss") {
  const std::vector<RigidTransform> gt{shifted(0.1, 0.2, 0.3), turned(0.4)};
  CHECK(pose_loss(core::PoseTensors::constant(gt), gt, 1.0).item() == 0.0);
  CHECK(pose_loss(core::PoseTensors::constant({shifted(1)}), {RigidTransform::identity()}, 1.0).item() == 1.0);
  CHECK(pose_loss(core::PoseTensors::constant({turned(kPi / 2)}), {RigidTransform::identity()}, 1.0).item() ==
        doctest::Approx(4.0).epsilon(1e-14));
  CHECK(pose_loss(core::PoseTensors::constant({turned(kPi / 2)}), {RigidTransform::identity()}, 0.5).item() ==
        doctest::Approx(2.0).epsilon(1e-14));
  CHECK_THROWS(pose_loss(core::PoseTensors::constant(gt), {gt[0]}, 1.0));

  // rotation term against 4 (1 - cos theta)
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> angle(0.0, kPi);
  for (int k = 0; k < 200; ++k) {
    const geom::Rotation base = geom::random_rotation(rng);
    const double theta = angle(rng);
    const geom::Rotation other = base * testsupport::rodrigues(testsupport::random_vec(rng), theta);
    const double term =
        pose_loss(core::PoseTensors::constant({{other, {}}}), {{base, {}}}, 1.0).item();
    CHECK(std::abs(term - 4.0 * (1.0 - std::cos(theta))) < 1e-9);
  }
}

TEST_CASE("chamfer loss") {
  std::mt19937_64 rng(5);
  auto clouds = parts_of({cloud(6, rng, 0.2), cloud(5, rng, 0.2)});
  const std::vector<RigidTransform> gt{testsupport::random_pose(rng), testsupport::random_pose(rng)};
  CHECK(chamfer_loss(core::PoseTensors::constant(gt), gt, clouds, 1.0).item() == 0.0);

  // move one part: per-part rotation term stays zero, the assembly term does not
  auto pred = gt;
  pred[1].t.v = pred[1].t.v + Vec3{0.3, 0, 0};
  const double only_parts = chamfer_loss(core::PoseTensors::constant(pred), gt, clouds, 0.0).item();
  const double with_shape = chamfer_loss(core::PoseTensors::constant(pred), gt, clouds, 1.0).item();
  CHECK(only_parts == 0.0);
  const double assembly = chamfer_oracle(assemble(gt, clouds), assemble(pred, clouds));
  CHECK(assembly > 0.0);
  CHECK(std::abs(with_shape - assembly) < 1e-12);
  CHECK(std::abs(chamfer_loss(core::PoseTensors::constant(pred), gt, clouds, 2.5).item() - 2.5 * assembly) < 1e-12);

  // a wrong rotation shows up in the per-part term
  pred = gt;
  pred[0].r = pred[0].r * geom::Rotation::about_x(0.5);
  CHECK(chamfer_loss(core::PoseTensors::constant(pred), gt, clouds, 0.0).item() > 0.0);

  const double before = chamfer_loss(core::PoseTensors::constant(pred), gt, clouds, 1.0).item();
  std::shuffle(clouds[0].points.begin(), clouds[0].points.end(), rng);
  CHECK(std::abs(chamfer_loss(core::PoseTensors::constant(pred), gt, clouds, 1.0).item() - before) < 1e-12);
}

TEST_CASE("point loss") {
  const auto one = parts_of({{{1, 0, 0}}});
  CHECK(point_loss(core::PoseTensors::constant({turned(kPi / 2)}), {RigidTransform::identity()}, one).item() ==
        doctest::Approx(2.0).epsilon(1e-14));
  const std::vector<RigidTransform> gt{turned(0.3)};
  CHECK(point_loss(core::PoseTensors::constant({shifted(4, 4, 4)}), {RigidTransform::identity()}, one).item() == 0.0);
  CHECK(point_loss(core::PoseTensors::constant(gt), gt, one).item() == 0.0);

  std::mt19937_64 rng(6);
  const auto single = parts_of({cloud(7, rng)});
  auto doubled = single;
  doubled[0].points.insert(doubled[0].points.end(), single[0].points.begin(), single[0].points.end());
  const auto pred = core::PoseTensors::constant({turned(1.1)});
  CHECK(std::abs(point_loss(pred, gt, doubled).item() - 2.0 * point_loss(pred, gt, single).item()) < 1e-12);
}

TEST_CASE("total loss") {
  const ag::Tensor z = ag::Tensor::scalar(0.0);
  CHECK(total_loss(z, z, z, {}).item() == 0.0);
  LossWeights only_pose{1.0, 1.0, 0.0, 0.0};
  const ag::Tensor p = ag::Tensor::scalar(1.5), c = ag::Tensor::scalar(2.0), q = ag::Tensor::scalar(3.0);
  CHECK(total_loss(p, c, q, only_pose).item() == 1.5);
  CHECK(total_loss(p, c, q, {1.0, 1.0, 0.5, 2.0}).item() == 1.5 + 1.0 + 6.0);
  CHECK_THROWS(LossWeights{1.0, -1.0, 1.0, 1.0}.validate());

  // gradient of the sum equals the sum of the gradients
  std::mt19937_64 rng(7);
  const auto clouds = parts_of({cloud(5, rng, 0.3), cloud(4, rng, 0.3)});
  const std::vector<RigidTransform> gt{testsupport::random_pose(rng), testsupport::random_pose(rng)};
  const std::vector<RigidTransform> start{testsupport::random_pose(rng), testsupport::random_pose(rng)};
  ag::ParameterStore s;
  const auto init = core::PoseTensors::constant(start);
  s.add("rot", init.rot.shape(), {init.rot.data().begin(), init.rot.data().end()});
  s.add("trans", init.trans.shape(), {init.trans.data().begin(), init.trans.data().end()});
  auto grads_of = [&](int which) {
    ag::Tape tape;
    ag::TapeScope scope(tape);
    const core::PoseTensors pred{s.get("rot"), s.get("trans")};
    const LossComponents l = compute_losses(pred, gt, clouds, {});
    const ag::Tensor pick[4] = {l.pose, l.chamfer, l.point, l.total};
    tape.backward(pick[which]);
    std::vector<double> g;
    for (const char* name : {"rot", "trans"}) {
      const auto& t = s.get(name);
      if (t.has_grad()) {
        g.insert(g.end(), t.grad().begin(), t.grad().end());
      } else {
        g.insert(g.end(), t.numel(), 0.0);
      }
    }
    s.zero_grad();
    return g;
  };
  const auto gp = grads_of(0), gc = grads_of(1), gq = grads_of(2), gt_total = grads_of(3);
  for (std::size_t i = 0; i < gt_total.size(); ++i) CHECK(std::abs(gt_total[i] - (gp[i] + gc[i] + gq[i])) < 1e-12);
}

TEST_CASE("part accuracy") {
  std::mt19937_64 rng(8);
  const auto clouds = parts_of({cloud(10, rng, 0.2), cloud(10, rng, 0.2)});
  const std::vector<RigidTransform> gt{testsupport::random_pose(rng), testsupport::random_pose(rng)};
  CHECK(part_accuracy(gt, gt, clouds, 0.01) == 100.0);
  auto pred = gt;
  pred[1].t.v = pred[1].t.v + Vec3{10, 0, 0};
  CHECK(part_accuracy(pred, gt, clouds, 0.01) == 50.0);
  CHECK(part_accuracy(pred, gt, clouds, 1e12) == 100.0);

  // non-increasing as tau shrinks
  pred[0].r = pred[0].r * geom::Rotation::about_y(0.05);
  double last = 101.0;
  for (double tau : {1e3, 10.0, 1.0, 0.1, 0.01, 1e-4, 1e-8}) {
    const double pa = part_accuracy(pred, gt, clouds, tau);
    CHECK(pa <= last);
    last = pa;
  }
}

TEST_CASE("connectivity accuracy") {
  const std::vector<RigidTransform> gt{shifted(-0.25), shifted(0.25)};
  const Contact touching{0, 1, {0.25, 0, 0}, {-0.25, 0, 0}};
  CHECK(connectivity_accuracy(gt, {touching}, 0.01) == 100.0);
  const std::vector<RigidTransform> apart{shifted(-0.75), shifted(0.25)};
  CHECK(connectivity_accuracy(apart, {touching}, 0.01) == 0.0);

  const std::vector<RigidTransform> three{shifted(-0.25), shifted(0.25), shifted(5.0)};
  const Contact far{1, 2, {0.25, 0, 0}, {-0.25, 0, 0}};
  CHECK(connectivity_accuracy(three, {touching, far}, 0.01) == 50.0);
  CHECK(!connectivity_accuracy(gt, {}, 0.01).has_value());
}

TEST_CASE("rotation and translation errors") {
  const auto zero = rotation_errors({turned(0.7)}, {turned(0.7)});
  CHECK(zero.mae == 0.0);
  CHECK(zero.rmse == 0.0);

  const auto thirty = rotation_errors({turned(kPi / 6)}, {RigidTransform::identity()});
  CHECK(thirty.mae == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(thirty.rmse == doctest::Approx(30.0 / std::sqrt(3.0)).epsilon(1e-12));
  CHECK(std::abs(thirty.rmse - 17.32) < 5e-3);

  const double deg = kPi / 180.0;
  const auto wrap = rotation_errors({turned(-179 * deg)}, {turned(179 * deg)});
  CHECK(wrap.mae * 3.0 == doctest::Approx(2.0).epsilon(1e-9));

  const auto t = translation_errors({shifted(3)}, {RigidTransform::identity()});
  CHECK(t.mae == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(t.rmse == doctest::Approx(std::sqrt(3.0)).epsilon(1e-15));
  CHECK(translation_errors({shifted(1, 2, 3)}, {shifted(1, 2, 3)}).mae == 0.0);

  std::mt19937_64 rng(9);
  std::vector<RigidTransform> pred, gt;
  for (int k = 0; k < 4; ++k) {
    pred.push_back(testsupport::random_pose(rng));
    gt.push_back(testsupport::random_pose(rng));
  }
  const auto a = translation_errors(pred, gt);
  std::swap(pred[0], pred[3]);
  std::swap(gt[0], gt[3]);
  const auto b = translation_errors(pred, gt);
  CHECK(std::abs(a.mae - b.mae) < 1e-14);
  CHECK(std::abs(a.rmse - b.rmse) < 1e-14);

  CHECK(mean_geodesic({turned(0.5), turned(0.0)}, {turned(0.0), turned(0.0)}) ==
        doctest::Approx((2 * 0.25 + 0.0) / 2).epsilon(1e-12));
}

TEST_CASE("metric report") {
  std::mt19937_64 rng(10);
  const auto clouds = parts_of({cloud(6, rng, 0.2), cloud(6, rng, 0.2)});
  const std::vector<RigidTransform> gt{testsupport::random_pose(rng), testsupport::random_pose(rng)};
  const MetricReport perfect = evaluate(gt, gt, clouds, {});
  CHECK(perfect.shape_cd == 0.0);
  CHECK(perfect.part_accuracy == 100.0);
  CHECK(!perfect.connectivity_accuracy);
  const std::string text = perfect.to_text();
  CHECK(text.find("part_accuracy=100\n") != std::string::npos);
  CHECK(text.find("connectivity_accuracy=undefined\n") != std::string::npos);
  CHECK(MetricReport::csv_header().rfind("sample,", 0) == 0);

  MetricReport a, b;
  a.shape_cd = 1.0;
  a.connectivity_accuracy = 40.0;
  b.shape_cd = 3.0;
  const MetricReport m = aggregate({a, b});
  CHECK(m.samples == 2);
  CHECK(m.shape_cd == 2.0);
  CHECK(m.connectivity_accuracy == 40.0);
  CHECK_THROWS(aggregate({}));
}
