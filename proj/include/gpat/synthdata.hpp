#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gpat/encoder.hpp"
#include "gpat/geom3d.hpp"
#include "gpat/objective.hpp"

namespace gpat::synth {

struct AssemblySample {
  std::vector<encoder::PartCloud> parts;         // canonical frames
  std::vector<geom::RigidTransform> gt_poses;    // canonical -> assembled
  std::vector<objective::Contact> contacts;      // each pair once, i < j
  std::string object_id;
};

struct Box {
  geom::Vec3 lo;
  geom::Vec3 hi;
};

/// Axis-aligned pieces of the unit cube [-0.5, 0.5]^3.
struct FractureLayout {
  std::vector<Box> pieces;
};

constexpr double kMinThickness = 0.05;

/// n_parts - 1 axis-aligned cuts of the unit cube. A cut that would leave a
/// piece thinner than kMinThickness is redrawn; throws after 1000 redraws.
FractureLayout cut_unit_cube(std::mt19937_64& rng, std::size_t n_parts);

/// Stratified, area-weighted samples on the six faces of every piece, in the
/// assembled frame.
std::vector<std::vector<geom::Vec3>> sample_surfaces(const FractureLayout& layout, std::size_t points_per_part,
                                                     std::mt19937_64& rng);

/// Pairs of pieces sharing a cut face, with the centroid of the shared region
/// (assembled frame).
struct SharedFace {
  std::size_t i = 0;
  std::size_t j = 0;
  geom::Vec3 center;
};
std::vector<SharedFace> shared_faces(const FractureLayout& layout);

/// Centers each cloud on its centroid and applies a random rotation; the
/// ground-truth pose undoes both.
AssemblySample canonicalize(const FractureLayout& layout, const std::vector<std::vector<geom::Vec3>>& clouds,
                            std::mt19937_64& rng, std::string object_id);

/// Everything below derives from one seed, so the assembled-frame clouds can
/// be regenerated independently of the canonical sample.
AssemblySample generate_from_seed(std::uint64_t seed, std::size_t n_parts, std::size_t points_per_part,
                                  std::string object_id);
std::vector<std::vector<geom::Vec3>> assembled_surface_from_seed(std::uint64_t seed, std::size_t n_parts,
                                                                 std::size_t points_per_part);

/// Draws a seed from `rng` and calls generate_from_seed. 2 <= n_parts <= 8.
AssemblySample generate_box_fracture(std::mt19937_64& rng, std::size_t n_parts, std::size_t points_per_part);

struct CheckItem {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct CheckReport {
  std::vector<CheckItem> items;
  bool passed() const;
};

/// "reassembly": posed parts inside the unit box within 1e-6; "centered":
/// canonical centroids within 1e-9 of the origin; "contacts": contact points
/// meet within 0.02 under the ground truth.
CheckReport canonical_check(const AssemblySample& sample);

// ---- files --------------------------------------------------------------------

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ManifestEntry {
  std::string file;
  std::string object_id;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::size_t parts_min = 2;
  std::size_t parts_max = 2;
  std::size_t points_per_part = 4;
  std::string split = "all";
  std::vector<ManifestEntry> entries;

  std::size_t n_samples() const { return entries.size(); }
  void validate() const;
};

/// Text form of one sample ("GPATSAMPLE 1" header, 17 significant digits).
std::string format_sample(const AssemblySample& s);
/// Throws DatasetError naming `source` and the first offending line.
AssemblySample parse_sample(const std::string& text, const std::string& source);

void write_sample(const AssemblySample& s, const std::filesystem::path& path);
AssemblySample read_sample(const std::filesystem::path& path);

/// `gtpose <k>` block: header plus three rotation rows and one translation row.
std::string format_pose(std::size_t k, const geom::RigidTransform& pose);
/// Reads every gtpose block of a file, ignoring other records.
std::vector<geom::RigidTransform> read_poses(const std::filesystem::path& path);

inline constexpr const char* kManifestName = "manifest.json";

void write_manifest(const DatasetManifest& m, const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& dir);

/// Writes sample_<k>.txt files plus the manifest; fills manifest.entries.
void write_dataset(const std::vector<AssemblySample>& samples, DatasetManifest manifest,
                   const std::filesystem::path& dir);
/// Samples listed in the manifest, in manifest order.
std::vector<AssemblySample> read_dataset(const std::filesystem::path& dir);
/// As read_dataset, for an explicit manifest (file names relative to `dir`).
std::vector<AssemblySample> read_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest);

/// Disjoint, exhaustive, seed-deterministic split by object id.
std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest, double train_fraction,
                                                          std::mt19937_64& rng);

}  // namespace gpat::synth
