#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

#include "doctest.h"
#include "gpat/encoder.hpp"
#include "gpat/params.hpp"
#include "support.hpp"

using namespace gpat;
using encoder::EncoderConfig;

namespace {

std::vector<geom::Vec3> random_cloud(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<geom::Vec3> out;
  for (std::size_t k = 0; k < n; ++k) out.push_back(testsupport::random_vec(rng, 0.5));
  return out;
}

EncoderConfig small(std::size_t d = 8) {
  EncoderConfig c;
  c.d = d;
  c.n_points = 16;
  return c;
}

bool bitwise_equal(const ag::Tensor& a, const ag::Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

double max_abs_diff(const ag::Tensor& a, const ag::Tensor& b) {
  double g = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) g = std::max(g, std::abs(a[i] - b[i]));
  return g;
}

ag::Tensor random_tensor(ag::Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(ag::shape_numel(shape));
  for (double& x : v) x = u(rng);
  return ag::Tensor::from(shape, v);
}

}  // namespace

TEST_CASE("backbone is invariant to point order and duplication") {
  ag::ParameterStore store;
  std::mt19937_64 rng(1);
  encoder::add_encoder_params(store, small(), rng);
  auto cloud = random_cloud(20, 2);
  const ag::Tensor base = encoder::backbone_extract(store, encoder::cloud_tensor(cloud));
  CHECK(base.shape() == ag::Shape{8});

  auto shuffled = cloud;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(bitwise_equal(encoder::backbone_extract(store, encoder::cloud_tensor(shuffled)), base));

  auto doubled = cloud;
  doubled.insert(doubled.end(), cloud.begin(), cloud.end());
  CHECK(bitwise_equal(encoder::backbone_extract(store, encoder::cloud_tensor(doubled)), base));

  // raw coordinates: a rigid motion changes the feature
  const geom::RigidTransform t{geom::Rotation::about_x(0.7), {{0.3, -0.2, 0.1}}};
  CHECK(max_abs_diff(encoder::backbone_extract(store, encoder::cloud_tensor(geom::apply(t, cloud))), base) > 1e-6);

  CHECK_THROWS(encoder::backbone_extract(store, encoder::cloud_tensor(std::vector<geom::Vec3>{})));
}

TEST_CASE("backbone with zero weights returns the final bias") {
  ag::ParameterStore store;
  std::mt19937_64 rng(3);
  encoder::add_encoder_params(store, small(), rng);
  for (const auto& [name, t] : store.all()) {
    if (name.rfind("backbone", 0) != 0) continue;
    for (double& v : store.get(name).mutable_data()) v = 0.0;
  }
  auto bias = store.get("backbone.l2.bias").mutable_data();
  for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = 0.25 * static_cast<double>(i) - 1.0;
  const ag::Tensor out = encoder::backbone_extract(store, encoder::cloud_tensor(random_cloud(10, 4)));
  for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out[i] == bias[i]);
}

TEST_CASE("global pool") {
  const ag::Tensor one = ag::Tensor::from({1, 3}, {1.0, -2.0, 0.5});
  CHECK(bitwise_equal(encoder::global_pool(one), ag::Tensor::from({3}, {1.0, -2.0, 0.5})));
  const ag::Tensor opposite = ag::Tensor::from({2, 2}, {1.5, -3.0, -1.5, 3.0});
  CHECK(encoder::global_pool(opposite)[0] == 0.0);
  CHECK(encoder::global_pool(opposite)[1] == 0.0);
  const ag::Tensor hand = encoder::global_pool(ag::Tensor::from({2, 2}, {1, 3, 3, 5}));
  CHECK(hand[0] == 2.0);
  CHECK(hand[1] == 4.0);
}

TEST_CASE("part and pair embedders") {
  const EncoderConfig cfg = small();
  ag::ParameterStore store;
  std::mt19937_64 rng(5);
  encoder::add_encoder_params(store, cfg, rng);
  const ag::Tensor h_local = random_tensor({3, 8}, 6), h_global = random_tensor({8}, 7);
  const ag::Tensor zero = ag::Tensor::zeros({3, 8});
  const ag::Tensor h = encoder::embed_part(store, h_local, h_global, zero, zero);
  CHECK(h.shape() == ag::Shape{3, 8});
  const ag::Tensor moved = encoder::embed_part(store, h_local, h_global, random_tensor({3, 8}, 8), zero);
  CHECK(max_abs_diff(h, moved) > 1e-6);
  CHECK_THROWS(encoder::embed_part(store, h_local, h_global, ag::Tensor::zeros({3, 5}), zero));

  const ag::Tensor z = encoder::embed_pair(store, h_local, ag::Tensor::zeros({3, 3, cfg.bins()}));
  CHECK(z.shape() == ag::Shape{3, 3, 8});
  double asym = 0.0;
  for (std::size_t c = 0; c < 8; ++c) asym = std::max(asym, std::abs(z[(0 * 3 + 1) * 8 + c] - z[(1 * 3 + 0) * 8 + c]));
  CHECK(asym > 1e-6);
  CHECK_THROWS(encoder::embed_pair(store, h_local, ag::Tensor::zeros({3, 3, 5})));
}

TEST_CASE("round one runs with zero recycled features") {
  const EncoderConfig cfg = small();
  ag::ParameterStore store;
  std::mt19937_64 rng(9);
  encoder::add_encoder_params(store, cfg, rng);
  std::vector<ag::Tensor> clouds{encoder::cloud_tensor(random_cloud(12, 10)), encoder::cloud_tensor(random_cloud(9, 11))};
  const ag::Tensor hz = ag::Tensor::zeros({2, 8});
  const encoder::PartFeatures f = encoder::encode(store, clouds, hz, hz, ag::Tensor::zeros({2, 2, cfg.bins()}));
  CHECK(f.h_local.shape() == ag::Shape{2, 8});
  CHECK(f.h_global.shape() == ag::Shape{8});
  CHECK(f.h.shape() == ag::Shape{2, 8});
  CHECK(f.z.shape() == ag::Shape{2, 2, 8});
  CHECK(bitwise_equal(f.h, encoder::embed_part(store, f.h_local, f.h_global, hz, hz)));
}

TEST_CASE("distance basis") {
  EncoderConfig cfg = small(4);
  cfg.rbf_cutoff = 2.0;
  const double pi = std::numbers::pi;
  const auto at0 = encoder::rbf_distance(0.0, cfg);
  CHECK(at0[0] == doctest::Approx(pi / 2).epsilon(1e-15));
  for (std::size_t n = 1; n <= 4; ++n) CHECK(at0[n - 1] == doctest::Approx(n * pi / 2).epsilon(1e-14));
  for (double v : encoder::rbf_distance(2.0, cfg)) CHECK(std::abs(v) < 1e-15);
  CHECK(encoder::rbf_distance(1.0, cfg)[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS(encoder::rbf_distance(-0.1, cfg));

  // stitching between the analytic limit and the formula
  for (double d0 : {0.0, 5e-9, 1e-8, 2e-8}) {
    const auto a = encoder::rbf_distance(d0, cfg), b = encoder::rbf_distance(d0 + 1e-9, cfg);
    for (std::size_t n = 0; n < a.size(); ++n) CHECK(std::abs(a[n] - b[n]) < 1e-6);
  }
  // direct formula away from zero
  for (double d : {0.3, 1.7, 2.5}) {
    const auto v = encoder::rbf_distance(d, cfg);
    for (std::size_t n = 1; n <= 4; ++n) {
      CHECK(std::abs(v[n - 1] - std::sqrt(2.0 / 2.0) * std::sin(n * pi * d / 2.0) / d) < 1e-14);
    }
  }
}

TEST_CASE("angle basis") {
  EncoderConfig cfg = small(5);
  for (double v : encoder::rbf_angle(1.0, cfg)) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(encoder::rbf_angle(0.0, cfg)[1] == 0.0);
  CHECK(encoder::rbf_angle(0.5, cfg)[2] == doctest::Approx(-0.125).epsilon(1e-15));
  CHECK_THROWS(encoder::rbf_angle(std::nan(""), cfg));
  for (int k = 0; k < 100; ++k) {
    const double x = -1.0 + 2.0 * k / 99.0;
    const auto p = encoder::rbf_angle(x, cfg);
    const double explicit_p[5] = {1.0, x, (3 * x * x - 1) / 2, (5 * x * x * x - 3 * x) / 2,
                                  (35 * x * x * x * x - 30 * x * x + 3) / 8};
    for (int l = 0; l < 5; ++l) CHECK(std::abs(p[static_cast<std::size_t>(l)] - explicit_p[l]) < 1e-12);
  }
  // clamped outside [-1, 1]
  CHECK(encoder::rbf_angle(1.0 + 1e-12, cfg)[4] == doctest::Approx(1.0).epsilon(1e-12));
}
