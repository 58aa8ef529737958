#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "gpat/objective.hpp"
#include "gpat/synthdata.hpp"

using namespace gpat;
using namespace gpat::synth;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gpat_test_synth_" + name);
  fs::remove_all(p);
  return p;
}

bool item_passed(const CheckReport& r, const std::string& name) {
  for (const auto& it : r.items)
    if (it.name == name) return it.passed;
  FAIL("no check item " << name);
  return false;
}

double volume(const Box& b) { return (b.hi.x - b.lo.x) * (b.hi.y - b.lo.y) * (b.hi.z - b.lo.z); }

}  // namespace

TEST_CASE("cut layout") {
  std::mt19937_64 rng(1);
  for (std::size_t n = 2; n <= 8; ++n) {
    for (int rep = 0; rep < 20; ++rep) {
      const FractureLayout l = cut_unit_cube(rng, n);
      REQUIRE(l.pieces.size() == n);
      double vol = 0.0;
      for (const Box& b : l.pieces) {
        vol += volume(b);
        for (int a = 0; a < 3; ++a) {
          CHECK(b.hi[a] - b.lo[a] >= kMinThickness);
          CHECK(b.lo[a] >= -0.5);
          CHECK(b.hi[a] <= 0.5);
        }
      }
      CHECK(std::abs(vol - 1.0) < 1e-12);
      // boxes are pairwise interior-disjoint
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
          double overlap = 1.0;
          for (int a = 0; a < 3; ++a) {
            overlap *= std::max(0.0, std::min(l.pieces[i].hi[a], l.pieces[j].hi[a]) -
                                         std::max(l.pieces[i].lo[a], l.pieces[j].lo[a]));
          }
          CHECK(overlap < 1e-12);
        }
    }
  }
  CHECK_THROWS(cut_unit_cube(rng, 1));
  CHECK_THROWS(cut_unit_cube(rng, 9));
}

TEST_CASE("two parts share exactly one contact") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const AssemblySample s = generate_from_seed(seed, 2, 32, "two");
    CHECK(s.contacts.size() == 1);
    CHECK(s.contacts[0].i == 0);
    CHECK(s.contacts[0].j == 1);
  }
}

TEST_CASE("generation is deterministic") {
  std::mt19937_64 a(5), b(5);
  const AssemblySample x = generate_box_fracture(a, 4, 40), y = generate_box_fracture(b, 4, 40);
  CHECK(format_sample(x) == format_sample(y));
  CHECK(format_sample(generate_from_seed(9, 3, 16, "s")) == format_sample(generate_from_seed(9, 3, 16, "s")));
  CHECK(format_sample(generate_from_seed(9, 3, 16, "s")) != format_sample(generate_from_seed(10, 3, 16, "s")));
  std::mt19937_64 c(5);
  CHECK_THROWS(generate_box_fracture(c, 2, 3));
}

TEST_CASE("ground truth reassembles the uncut surface") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const std::size_t n = 2 + seed % 7;
    const AssemblySample s = generate_from_seed(seed, n, 64, "r");
    REQUIRE(s.parts.size() == n);
    const std::vector<geom::Vec3> rebuilt = objective::assemble(s.gt_poses, s.parts);
    std::vector<geom::Vec3> fresh;
    for (const auto& piece : assembled_surface_from_seed(seed, n, 64)) fresh.insert(fresh.end(), piece.begin(), piece.end());
    CHECK(objective::chamfer_distance(rebuilt, fresh) < 1e-3);
    for (const geom::Vec3& p : rebuilt)
      for (int a = 0; a < 3; ++a) CHECK(std::abs(p[a]) <= 0.5 + 1e-6);
    CHECK(canonical_check(s).passed());
  }
}

TEST_CASE("contacts meet under the ground truth") {
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    const AssemblySample s = generate_from_seed(seed, 5, 32, "c");
    CHECK(!s.contacts.empty());
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& c : s.contacts) {
      CHECK(c.i < c.j);
      CHECK(seen.insert({c.i, c.j}).second);
      const geom::Vec3 a = geom::apply(s.gt_poses[c.i], c.c_ij), b = geom::apply(s.gt_poses[c.j], c.c_ji);
      CHECK(geom::norm(a - b) < 0.02);
    }
  }
}

TEST_CASE("canonical frames are centered and uniformly oriented") {
  double trace_sum = 0.0;
  std::size_t count = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const AssemblySample s = generate_from_seed(seed, 4, 8, "o");
    for (std::size_t i = 0; i < s.parts.size(); ++i) {
      geom::Vec3 c{};
      for (const auto& p : s.parts[i].points) c = c + p;
      CHECK(geom::norm((1.0 / static_cast<double>(s.parts[i].points.size())) * c) < 1e-9);
      trace_sum += s.gt_poses[i].r.matrix().trace();
      ++count;
    }
  }
  // uniform on SO(3): mean trace 0, unit variance
  CHECK(std::abs(trace_sum / static_cast<double>(count)) < 4.0 / std::sqrt(static_cast<double>(count)));
}

TEST_CASE("canonical_check catches broken samples") {
  const AssemblySample good = generate_from_seed(3, 3, 32, "g");
  CHECK(canonical_check(good).passed());

  AssemblySample moved = good;
  moved.gt_poses[1].t.v = moved.gt_poses[1].t.v + geom::Vec3{0.5, 0, 0};
  CHECK(!item_passed(canonical_check(moved), "reassembly"));

  AssemblySample off = good;
  for (auto& p : off.parts[0].points) p = p + geom::Vec3{0, 0.01, 0};
  CHECK(!item_passed(canonical_check(off), "centered"));
}

TEST_CASE("sample text roundtrip") {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 100; ++k) {
    const AssemblySample s = generate_box_fracture(rng, 2 + static_cast<std::size_t>(k % 4), 6);
    const AssemblySample back = parse_sample(format_sample(s), "mem");
    CHECK(back.object_id == s.object_id);
    REQUIRE(back.parts.size() == s.parts.size());
    double gap = 0.0;
    for (std::size_t i = 0; i < s.parts.size(); ++i) {
      REQUIRE(back.parts[i].points.size() == s.parts[i].points.size());
      for (std::size_t m = 0; m < s.parts[i].points.size(); ++m)
        gap = std::max(gap, geom::norm(back.parts[i].points[m] - s.parts[i].points[m]));
      for (int e = 0; e < 9; ++e) gap = std::max(gap, std::abs(back.gt_poses[i].r.matrix().m[e] - s.gt_poses[i].r.matrix().m[e]));
      gap = std::max(gap, geom::norm(back.gt_poses[i].t.v - s.gt_poses[i].t.v));
    }
    REQUIRE(back.contacts.size() == s.contacts.size());
    for (std::size_t c = 0; c < s.contacts.size(); ++c) {
      gap = std::max({gap, geom::norm(back.contacts[c].c_ij - s.contacts[c].c_ij),
                      geom::norm(back.contacts[c].c_ji - s.contacts[c].c_ji)});
    }
    CHECK(gap <= 1e-14);
  }
}

TEST_CASE("malformed files are rejected with a name and line") {
  const AssemblySample s = generate_from_seed(4, 2, 5, "m");
  const std::string text = format_sample(s);

  const std::string truncated = text.substr(0, text.size() / 2);
  std::string msg;
  try {
    parse_sample(truncated, "cut.txt");
  } catch (const DatasetError& e) {
    msg = e.what();
  }
  CHECK(msg.find("cut.txt") != std::string::npos);

  std::string v2 = text;
  v2.replace(0, 12, "GPATSAMPLE 2");
  msg.clear();
  try {
    parse_sample(v2, "v2.txt");
  } catch (const DatasetError& e) {
    msg = e.what();
  }
  CHECK(msg.find("v2.txt:1") != std::string::npos);

  std::string garbage = text;
  const auto at = garbage.find('\n', garbage.find("part 0"));
  garbage.insert(at + 1, "1.0 oops 2.0\n");
  msg.clear();
  try {
    parse_sample(garbage, "bad.txt");
  } catch (const DatasetError& e) {
    msg = e.what();
  }
  CHECK(msg.find("bad.txt:4") != std::string::npos);
  CHECK_THROWS_AS(read_sample(scratch("missing.txt")), DatasetError);
}

TEST_CASE("dataset files and manifest") {
  const fs::path dir = scratch("set");
  std::mt19937_64 rng(12);
  std::vector<AssemblySample> samples;
  for (int k = 0; k < 6; ++k) samples.push_back(generate_box_fracture(rng, 3, 8));
  DatasetManifest m;
  m.seed = 12;
  m.parts_min = 3;
  m.parts_max = 3;
  m.points_per_part = 8;
  write_dataset(samples, m, dir);

  const DatasetManifest back = read_manifest(dir);
  CHECK(back.n_samples() == 6);
  CHECK(back.seed == 12);
  std::size_t on_disk = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename() != kManifestName) ++on_disk;
  CHECK(on_disk == back.n_samples());
  const auto read = read_dataset(dir);
  REQUIRE(read.size() == 6);
  for (std::size_t k = 0; k < 6; ++k) CHECK(format_sample(read[k]) == format_sample(samples[k]));

  const auto poses = read_poses(dir / back.entries[2].file);
  CHECK(poses == samples[2].gt_poses);

  const fs::path pose_file = dir / "poses.txt";
  {
    std::ofstream out(pose_file);
    out << "GPATASSEMBLY 1\n" << format_pose(0, samples[0].gt_poses[0]) << "point 0 1 2 3\n";
  }
  CHECK(read_poses(pose_file) == std::vector<geom::RigidTransform>{samples[0].gt_poses[0]});
  fs::remove_all(dir);
}

TEST_CASE("split by object id") {
  DatasetManifest m;
  for (int k = 0; k < 10; ++k) m.entries.push_back({"f" + std::to_string(k), "obj" + std::to_string(k)});
  std::mt19937_64 a(13), b(13);
  const auto [train, test] = split_dataset(m, 0.5, a);
  CHECK(train.n_samples() == 5);
  CHECK(test.n_samples() == 5);
  CHECK(train.split == "train");
  std::set<std::string> all;
  for (const auto& e : train.entries) all.insert(e.object_id);
  for (const auto& e : test.entries) CHECK(all.insert(e.object_id).second);
  CHECK(all.size() == 10);
  const auto again = split_dataset(m, 0.5, b);
  CHECK(again.first.entries.size() == train.entries.size());
  for (std::size_t k = 0; k < train.entries.size(); ++k) CHECK(again.first.entries[k].file == train.entries[k].file);

  // entries with one object id stay together
  DatasetManifest grouped;
  for (int k = 0; k < 8; ++k) grouped.entries.push_back({"g" + std::to_string(k), "obj" + std::to_string(k / 2)});
  std::mt19937_64 c(14);
  const auto [gtrain, gtest] = split_dataset(grouped, 0.5, c);
  std::set<std::string> train_ids;
  for (const auto& e : gtrain.entries) train_ids.insert(e.object_id);
  for (const auto& e : gtest.entries) CHECK(train_ids.count(e.object_id) == 0);

  for (double bad : {0.0, 1.0, -0.2, 1.5}) CHECK_THROWS(split_dataset(m, bad, c));
}
