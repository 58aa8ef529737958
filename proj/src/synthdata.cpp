#include "gpat/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace gpat::synth {

namespace {

double extent(const Box& b, int axis) { return b.hi[axis] - b.lo[axis]; }
double volume(const Box& b) { return extent(b, 0) * extent(b, 1) * extent(b, 2); }

struct Face {
  int axis;  // normal axis
  double level;
  int u, v;  // in-plane axes
  double u0, u1, v0, v1;
  double area() const { return (u1 - u0) * (v1 - v0); }
};

std::vector<Face> faces_of(const Box& b) {
  std::vector<Face> out;
  for (int a = 0; a < 3; ++a) {
    const int u = (a + 1) % 3, v = (a + 2) % 3;
    for (double level : {b.lo[a], b.hi[a]}) out.push_back({a, level, u, v, b.lo[u], b.hi[u], b.lo[v], b.hi[v]});
  }
  return out;
}

// Largest-remainder allocation of `total` proportional to `weights`.
std::vector<std::size_t> apportion(const std::vector<double>& weights, std::size_t total) {
  double sum = 0.0;
  for (double w : weights) sum += w;
  std::vector<std::size_t> count(weights.size());
  std::vector<std::pair<double, std::size_t>> rest;
  std::size_t used = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const double exact = static_cast<double>(total) * weights[k] / sum;
    count[k] = static_cast<std::size_t>(std::floor(exact));
    used += count[k];
    rest.emplace_back(exact - static_cast<double>(count[k]), k);
  }
  std::stable_sort(rest.begin(), rest.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; used < total; ++k, ++used) ++count[rest[k % rest.size()].second];
  return count;
}

}  // namespace

FractureLayout cut_unit_cube(std::mt19937_64& rng, std::size_t n_parts) {
  if (n_parts < 2 || n_parts > 8) throw std::invalid_argument("box fracture: n_parts must be in [2, 8]");
  FractureLayout layout;
  layout.pieces.push_back({{-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5}});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t cut = 0; cut + 1 < n_parts; ++cut) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      // Volume-weighted choice of the piece to split.
      double total = 0.0;
      for (const Box& b : layout.pieces) total += volume(b);
      double pick = unit(rng) * total;
      std::size_t idx = 0;
      while (idx + 1 < layout.pieces.size() && pick >= volume(layout.pieces[idx])) pick -= volume(layout.pieces[idx++]);
      const int axis = static_cast<int>(std::min(2.0, std::floor(unit(rng) * 3.0)));
      const Box b = layout.pieces[idx];
      const double at = b.lo[axis] + unit(rng) * extent(b, axis);
      if (at - b.lo[axis] < kMinThickness || b.hi[axis] - at < kMinThickness) continue;
      Box left = b, right = b;
      left.hi[axis] = at;
      right.lo[axis] = at;
      layout.pieces[idx] = left;
      layout.pieces.push_back(right);
      placed = true;
    }
    if (!placed) throw std::runtime_error("box fracture: no admissible cut after 1000 draws");
  }
  return layout;
}

std::vector<std::vector<geom::Vec3>> sample_surfaces(const FractureLayout& layout, std::size_t points_per_part,
                                                     std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<geom::Vec3>> out;
  for (const Box& b : layout.pieces) {
    const std::vector<Face> faces = faces_of(b);
    std::vector<double> areas;
    for (const Face& f : faces) areas.push_back(f.area());
    const auto counts = apportion(areas, points_per_part);
    std::vector<geom::Vec3> pts;
    pts.reserve(points_per_part);
    for (std::size_t k = 0; k < faces.size(); ++k) {
      const Face& f = faces[k];
      const bool u_long = f.u1 - f.u0 >= f.v1 - f.v0;
      for (std::size_t s = 0; s < counts[k]; ++s) {
        // Jittered strata along the long side, uniform across the short one.
        const double strat = (static_cast<double>(s) + unit(rng)) / static_cast<double>(counts[k]);
        const double free = unit(rng);
        geom::Vec3 p;
        p[f.axis] = f.level;
        p[f.u] = f.u0 + (u_long ? strat : free) * (f.u1 - f.u0);
        p[f.v] = f.v0 + (u_long ? free : strat) * (f.v1 - f.v0);
        pts.push_back(p);
      }
    }
    out.push_back(std::move(pts));
  }
  return out;
}

std::vector<SharedFace> shared_faces(const FractureLayout& layout) {
  std::vector<SharedFace> out;
  const auto& p = layout.pieces;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = i + 1; j < p.size(); ++j) {
      for (int a = 0; a < 3; ++a) {
        double level;
        if (p[i].hi[a] == p[j].lo[a]) {
          level = p[i].hi[a];
        } else if (p[j].hi[a] == p[i].lo[a]) {
          level = p[i].lo[a];
        } else {
          continue;
        }
        const int u = (a + 1) % 3, v = (a + 2) % 3;
        const double u0 = std::max(p[i].lo[u], p[j].lo[u]), u1 = std::min(p[i].hi[u], p[j].hi[u]);
        const double v0 = std::max(p[i].lo[v], p[j].lo[v]), v1 = std::min(p[i].hi[v], p[j].hi[v]);
        if (u1 - u0 <= 1e-12 || v1 - v0 <= 1e-12) continue;
        geom::Vec3 c;
        c[a] = level;
        c[u] = 0.5 * (u0 + u1);
        c[v] = 0.5 * (v0 + v1);
        out.push_back({i, j, c});
      }
    }
  }
  return out;
}

AssemblySample canonicalize(const FractureLayout& layout, const std::vector<std::vector<geom::Vec3>>& clouds,
                            std::mt19937_64& rng, std::string object_id) {
  AssemblySample s;
  s.object_id = std::move(object_id);
  std::vector<geom::RigidTransform> to_canonical;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    geom::Vec3 c;
    for (const geom::Vec3& p : clouds[i]) c = c + p;
    c = (1.0 / static_cast<double>(clouds[i].size())) * c;
    const geom::Rotation r = geom::random_rotation(rng);
    // x_canonical = R (x - c)
    const geom::RigidTransform fwd{r, {-(r * c)}};
    encoder::PartCloud part;
    part.part_id = static_cast<int>(i);
    part.points.reserve(clouds[i].size());
    for (const geom::Vec3& p : clouds[i]) part.points.push_back(r * (p - c));
    s.parts.push_back(std::move(part));
    s.gt_poses.push_back({r.transposed(), {c}});
    to_canonical.push_back(fwd);
  }
  for (const SharedFace& f : shared_faces(layout)) {
    s.contacts.push_back({f.i, f.j, geom::apply(to_canonical[f.i], f.center), geom::apply(to_canonical[f.j], f.center)});
  }
  return s;
}

AssemblySample generate_from_seed(std::uint64_t seed, std::size_t n_parts, std::size_t points_per_part,
                                  std::string object_id) {
  if (points_per_part < 4) throw std::invalid_argument("box fracture: points_per_part must be at least 4");
  std::mt19937_64 rng(seed);
  const FractureLayout layout = cut_unit_cube(rng, n_parts);
  const auto clouds = sample_surfaces(layout, points_per_part, rng);
  return canonicalize(layout, clouds, rng, std::move(object_id));
}

std::vector<std::vector<geom::Vec3>> assembled_surface_from_seed(std::uint64_t seed, std::size_t n_parts,
                                                                 std::size_t points_per_part) {
  std::mt19937_64 rng(seed);
  const FractureLayout layout = cut_unit_cube(rng, n_parts);
  return sample_surfaces(layout, points_per_part, rng);
}

AssemblySample generate_box_fracture(std::mt19937_64& rng, std::size_t n_parts, std::size_t points_per_part) {
  const std::uint64_t seed = rng();
  return generate_from_seed(seed, n_parts, points_per_part, "box-" + std::to_string(seed));
}

// ---- validation ---------------------------------------------------------------

bool CheckReport::passed() const {
  return std::all_of(items.begin(), items.end(), [](const CheckItem& c) { return c.passed; });
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

CheckReport canonical_check(const AssemblySample& s) {
  CheckReport report;
  if (s.parts.size() != s.gt_poses.size()) {
    report.items.push_back({"reassembly", false, "part and pose counts differ"});
    return report;
  }
  double outside = 0.0;
  for (std::size_t i = 0; i < s.parts.size(); ++i) {
    for (const geom::Vec3& p : geom::apply(s.gt_poses[i], s.parts[i].points)) {
      for (int a = 0; a < 3; ++a) outside = std::max(outside, std::abs(p[a]) - 0.5);
    }
  }
  report.items.push_back({"reassembly", outside <= 1e-6, "max excursion outside unit box " + num(outside)});

  double off_center = 0.0;
  for (const encoder::PartCloud& part : s.parts) {
    geom::Vec3 c;
    for (const geom::Vec3& p : part.points) c = c + p;
    if (!part.points.empty()) off_center = std::max(off_center, geom::norm((1.0 / part.points.size()) * c));
  }
  report.items.push_back({"centered", off_center <= 1e-9, "max centroid norm " + num(off_center)});

  double gap = 0.0;
  bool indices_ok = true;
  for (const objective::Contact& c : s.contacts) {
    if (c.i >= s.parts.size() || c.j >= s.parts.size()) {
      indices_ok = false;
      continue;
    }
    gap = std::max(gap, geom::norm(geom::apply(s.gt_poses[c.i], c.c_ij) - geom::apply(s.gt_poses[c.j], c.c_ji)));
  }
  report.items.push_back({"contacts", indices_ok && gap < 0.02,
                          indices_ok ? "max contact gap " + num(gap) : "contact index out of range"});
  return report;
}

// ---- text format --------------------------------------------------------------

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string vec_line(const geom::Vec3& p) { return g17(p.x) + " " + g17(p.y) + " " + g17(p.z) + "\n"; }

class LineReader {
 public:
  LineReader(const std::string& text, std::string source) : in_(text), source_(std::move(source)) {}

  bool next(std::string& line) {
    while (std::getline(in_, line)) {
      ++number_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") != std::string::npos) return true;
    }
    return false;
  }
  std::string require(const char* what) {
    std::string line;
    if (!next(line)) throw DatasetError(source_ + ": unexpected end of file, expected " + what);
    return line;
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw DatasetError(source_ + ":" + std::to_string(number_) + ": " + msg);
  }
  geom::Vec3 vec(const std::string& line) {
    std::istringstream ls(line);
    geom::Vec3 p;
    std::string extra;
    if (!(ls >> p.x >> p.y >> p.z) || (ls >> extra)) fail("expected three numbers, got '" + line + "'");
    return p;
  }

 private:
  std::istringstream in_;
  std::string source_;
  std::size_t number_ = 0;
};

geom::RigidTransform read_pose_body(LineReader& r) {
  geom::Mat3 m;
  for (int row = 0; row < 3; ++row) {
    const geom::Vec3 v = r.vec(r.require("rotation row"));
    m(row, 0) = v.x;
    m(row, 1) = v.y;
    m(row, 2) = v.z;
  }
  return {geom::Rotation{m}, {r.vec(r.require("translation"))}};
}

}  // namespace

std::string format_pose(std::size_t k, const geom::RigidTransform& pose) {
  std::string s = "gtpose " + std::to_string(k) + "\n";
  const geom::Mat3& m = pose.r.matrix();
  for (int row = 0; row < 3; ++row) s += vec_line({m(row, 0), m(row, 1), m(row, 2)});
  return s + vec_line(pose.t.v);
}

std::string format_sample(const AssemblySample& s) {
  std::string out = "GPATSAMPLE 1\nobject " + s.object_id + "\n";
  for (std::size_t k = 0; k < s.parts.size(); ++k) {
    out += "part " + std::to_string(k) + " " + std::to_string(s.parts[k].points.size()) + "\n";
    for (const geom::Vec3& p : s.parts[k].points) out += vec_line(p);
    out += format_pose(k, s.gt_poses.at(k));
  }
  for (const objective::Contact& c : s.contacts) {
    out += "contact " + std::to_string(c.i) + " " + std::to_string(c.j) + " " + g17(c.c_ij.x) + " " + g17(c.c_ij.y) +
           " " + g17(c.c_ij.z) + " " + g17(c.c_ji.x) + " " + g17(c.c_ji.y) + " " + g17(c.c_ji.z) + "\n";
  }
  return out;
}

AssemblySample parse_sample(const std::string& text, const std::string& source) {
  LineReader r(text, source);
  std::string line;
  if (!r.next(line)) throw DatasetError(source + ": empty file");
  {
    std::istringstream ls(line);
    std::string magic;
    int version = 0;
    if (!(ls >> magic >> version) || magic != "GPATSAMPLE") r.fail("missing GPATSAMPLE header");
    if (version != 1) r.fail("unsupported format version " + std::to_string(version));
  }
  AssemblySample s;
  bool have_object = false;
  std::map<std::size_t, encoder::PartCloud> parts;
  std::map<std::size_t, geom::RigidTransform> poses;
  while (r.next(line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "object") {
      if (!(ls >> s.object_id)) r.fail("object record without id");
      have_object = true;
    } else if (tag == "part") {
      std::size_t k = 0, n = 0;
      if (!(ls >> k >> n)) r.fail("malformed part record '" + line + "'");
      if (parts.count(k) != 0) r.fail("duplicate part " + std::to_string(k));
      encoder::PartCloud& part = parts[k];
      part.part_id = static_cast<int>(k);
      part.points.reserve(n);
      for (std::size_t q = 0; q < n; ++q) part.points.push_back(r.vec(r.require("point")));
    } else if (tag == "gtpose") {
      std::size_t k = 0;
      if (!(ls >> k)) r.fail("malformed gtpose record");
      if (poses.count(k) != 0) r.fail("duplicate gtpose " + std::to_string(k));
      poses[k] = read_pose_body(r);
    } else if (tag == "contact") {
      objective::Contact c;
      if (!(ls >> c.i >> c.j >> c.c_ij.x >> c.c_ij.y >> c.c_ij.z >> c.c_ji.x >> c.c_ji.y >> c.c_ji.z)) {
        r.fail("malformed contact record '" + line + "'");
      }
      s.contacts.push_back(c);
    } else {
      r.fail("unknown record '" + tag + "'");
    }
  }
  if (!have_object) throw DatasetError(source + ": missing object record");
  if (parts.empty()) throw DatasetError(source + ": no parts");
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (parts.count(k) == 0) throw DatasetError(source + ": part indices are not contiguous");
    if (poses.count(k) == 0) throw DatasetError(source + ": part " + std::to_string(k) + " has no gtpose");
    s.parts.push_back(std::move(parts[k]));
    s.gt_poses.push_back(poses[k]);
  }
  if (poses.size() != parts.size()) throw DatasetError(source + ": gtpose without matching part");
  for (const objective::Contact& c : s.contacts) {
    if (c.i >= s.parts.size() || c.j >= s.parts.size()) throw DatasetError(source + ": contact index out of range");
  }
  return s;
}

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write " + path.string());
  out << text;
  if (!out) throw DatasetError("write failed for " + path.string());
}

}  // namespace

void write_sample(const AssemblySample& s, const std::filesystem::path& path) { spit(path, format_sample(s)); }

AssemblySample read_sample(const std::filesystem::path& path) { return parse_sample(slurp(path), path.string()); }

std::vector<geom::RigidTransform> read_poses(const std::filesystem::path& path) {
  const std::string text = slurp(path);
  LineReader r(text, path.string());
  std::map<std::size_t, geom::RigidTransform> poses;
  std::string line;
  while (r.next(line)) {
    std::istringstream ls(line);
    std::string tag;
    std::size_t k = 0;
    if (!(ls >> tag) || tag != "gtpose") continue;
    if (!(ls >> k)) r.fail("malformed gtpose record");
    poses[k] = read_pose_body(r);
  }
  std::vector<geom::RigidTransform> out;
  for (std::size_t k = 0; k < poses.size(); ++k) {
    if (poses.count(k) == 0) throw DatasetError(path.string() + ": gtpose indices are not contiguous");
    out.push_back(poses[k]);
  }
  return out;
}

// ---- manifest -----------------------------------------------------------------

void DatasetManifest::validate() const {
  if (parts_min < 2) throw std::invalid_argument("manifest: parts_min must be at least 2");
  if (parts_max < parts_min) throw std::invalid_argument("manifest: parts_max below parts_min");
  if (points_per_part < 4) throw std::invalid_argument("manifest: points_per_part must be at least 4");
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& dir) {
  nlohmann::ordered_json j;
  j["format"] = "GPATSAMPLE 1";
  j["seed"] = m.seed;
  j["n_samples"] = m.entries.size();
  j["parts_range"] = {m.parts_min, m.parts_max};
  j["points_per_part"] = m.points_per_part;
  j["split"] = m.split;
  j["samples"] = nlohmann::ordered_json::array();
  for (const ManifestEntry& e : m.entries) j["samples"].push_back({{"file", e.file}, {"object_id", e.object_id}});
  spit(dir / kManifestName, j.dump(2) + "\n");
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const std::filesystem::path path = dir / kManifestName;
  DatasetManifest m;
  try {
    const auto j = nlohmann::json::parse(slurp(path));
    if (j.at("format").get<std::string>() != "GPATSAMPLE 1") throw DatasetError(path.string() + ": unsupported format");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.parts_min = j.at("parts_range").at(0).get<std::size_t>();
    m.parts_max = j.at("parts_range").at(1).get<std::size_t>();
    m.points_per_part = j.at("points_per_part").get<std::size_t>();
    m.split = j.at("split").get<std::string>();
    for (const auto& e : j.at("samples")) m.entries.push_back({e.at("file"), e.at("object_id")});
    if (j.at("n_samples").get<std::size_t>() != m.entries.size()) {
      throw DatasetError(path.string() + ": n_samples does not match the sample list");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(path.string() + ": " + e.what());
  }
  return m;
}

void write_dataset(const std::vector<AssemblySample>& samples, DatasetManifest manifest,
                   const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DatasetError("cannot create " + dir.string() + ": " + ec.message());
  manifest.entries.clear();
  for (std::size_t k = 0; k < samples.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%05zu.txt", k);
    write_sample(samples[k], dir / name);
    manifest.entries.push_back({name, samples[k].object_id});
  }
  write_manifest(manifest, dir);
}

std::vector<AssemblySample> read_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest) {
  std::vector<AssemblySample> out;
  out.reserve(manifest.entries.size());
  for (const ManifestEntry& e : manifest.entries) out.push_back(read_sample(dir / e.file));
  return out;
}

std::vector<AssemblySample> read_dataset(const std::filesystem::path& dir) {
  return read_dataset(dir, read_manifest(dir));
}

std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest, double train_fraction,
                                                          std::mt19937_64& rng) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("split_dataset: train fraction must lie in (0, 1)");
  }
  std::map<std::string, std::vector<ManifestEntry>> groups;
  for (const ManifestEntry& e : manifest.entries) groups[e.object_id].push_back(e);
  std::vector<std::string> ids;
  for (const auto& [id, entries] : groups) ids.push_back(id);
  for (std::size_t k = ids.size(); k > 1; --k) {
    std::swap(ids[k - 1], ids[std::uniform_int_distribution<std::size_t>(0, k - 1)(rng)]);
  }
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ids.size())));
  DatasetManifest train = manifest, test = manifest;
  train.entries.clear();
  test.entries.clear();
  train.split = "train";
  test.split = "test";
  for (std::size_t k = 0; k < ids.size(); ++k) {
    DatasetManifest& dst = k < n_train ? train : test;
    for (const ManifestEntry& e : groups[ids[k]]) dst.entries.push_back(e);
  }
  return {train, test};
}

}  // namespace gpat::synth
