// SPDX-License-Identifier: Apache-2.0
// Procedural paired SAR/EO scenes with speckle, misalignment and
// single-modality objects, plus on-disk dataset manifests.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cdiff/image.hpp"
#include "cdiff/rng.hpp"
#include "cdiff/tensor.hpp"

namespace cdiff {

enum class Polarization { single, full };

struct SceneSpec {
  std::size_t image_size = 64;
  std::size_t objects_min = 3;
  std::size_t objects_max = 12;
  double speckle_looks = 4.0;
  double discrepancy_prob = 0.3;
  double misalign_max = 4.0;  // pixels
  Polarization polarization = Polarization::single;
  std::uint64_t seed = kDefaultSeed;

  void validate() const;
};

enum class ShapeKind { ellipse, rectangle };

struct SceneObject {
  ShapeKind kind = ShapeKind::ellipse;
  double cx = 0, cy = 0;  // centre, pixels
  double rx = 1, ry = 1;  // half extents
  double angle = 0;       // radians
  int material = 0;
  double reflectance = 0.5;
  std::array<double, 3> color{};
  std::array<double, 4> pol_gain{1, 1, 1, 1};  // HH, HV, VH, VV

  bool contains(double x, double y) const;
};

/// Object indices are shared across modalities; label maps hold
/// (topmost object index + 1), 0 for background, sampled at pixel centres
/// in the unshifted frame.
struct SceneLayout {
  int background_material = 0;
  std::array<double, 3> background_color{};
  double background_reflectance = 0.5;
  std::vector<SceneObject> objects;
  std::vector<std::size_t> eo_objects;   // indices drawn in EO, bottom to top
  std::vector<std::size_t> sar_objects;  // indices drawn in SAR, bottom to top
  std::vector<std::uint16_t> eo_labels;
  std::vector<std::uint16_t> sar_labels;
};

struct ScenePair {
  ImageSample sar;
  ImageSample eo;
  Tensor mask;  // (1,H,W) in {0,1}
  double misalign_dx = 0, misalign_dy = 0;
  std::uint64_t seed = 0;
  bool has_discrepancy = false;
  SceneLayout layout;
};

ScenePair render_scene(const SceneSpec& spec, std::uint64_t seed);
/// Scene `index` of a dataset drawn from spec.seed.
ScenePair render_scene_at(const SceneSpec& spec, std::size_t index);

/// SAR channels for a layout: reflectance render translated by (dx, dy),
/// times a fresh speckle field, scaled by 1/kSarReferenceLevel and clipped
/// to [0,1].
Tensor render_sar(const SceneLayout& layout, const SceneSpec& spec, double dx, double dy,
                  std::mt19937_64& speckle_rng);
/// Speckle-free reflectance render (before the reference scaling).
Tensor render_reflectance(const SceneLayout& layout, const SceneSpec& spec, double dx, double dy);

inline constexpr double kSarReferenceLevel = 2.0;
inline constexpr double kEoSensorNoise = 0.01;

/// I.i.d. Gamma(shape = looks, scale = 1/looks): mean 1, variance 1/looks.
Tensor speckle_field(const Shape& shape, double looks, std::mt19937_64& rng);

/// Element k of the dihedral group D4 on square (C,H,W) tensors:
/// rotate by (k % 4) quarter turns, then mirror horizontally if k >= 4.
Tensor apply_dihedral(const Tensor& img, int k);
/// Index of the inverse transform.
int dihedral_inverse(int k);
/// Applies one uniformly drawn D4 element jointly to SAR, EO and mask.
ScenePair augment(const ScenePair& pair, std::mt19937_64& rng, int* drawn = nullptr);
ScenePair apply_dihedral(const ScenePair& pair, int k);

// --- datasets -------------------------------------------------------------

enum class Split { train, test };

struct ManifestEntry {
  std::string id;
  Split split = Split::train;
  std::vector<std::string> sar_paths;  // 1 file (single-pol) or 4 (HH, HV, VH, VV)
  std::string eo_path;
  std::string mask_path;  // empty when unknown
  std::optional<std::uint64_t> seed;
  std::optional<bool> has_discrepancy;
};

/// Tab-separated: id, split, sar_path, eo_path, mask_path, seed,
/// has_discrepancy. Full-pol SAR paths are comma-joined; unknown fields are
/// written as "-". Relative paths resolve against the manifest's directory.
struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  void save(const std::filesystem::path& path) const;
  static Manifest load(const std::filesystem::path& path);

  std::vector<const ManifestEntry*> split(Split s) const;
  const ManifestEntry& find(const std::string& id) const;
};

/// Deterministic 80/20 assignment for ids given in sorted order.
std::vector<Split> assign_splits(std::size_t count, std::uint64_t seed);

/// Renders `count` scenes and writes PGM/PPM files plus manifest.tsv.
Manifest write_dataset(const SceneSpec& spec, std::size_t count, const std::filesystem::path& out_dir);

enum class SarNormalization { none, max, p99 };
SarNormalization parse_sar_normalization(const std::string& name);

/// Pairs files by stem across the two directories; throws on any
/// unpaired stem, unreadable image, or size not divisible by 8.
Manifest ingest_paired_dir(const std::filesystem::path& sar_dir, const std::filesystem::path& eo_dir,
                           std::uint64_t seed = kDefaultSeed);

struct PairedSample {
  std::string id;
  ImageSample sar;
  ImageSample eo;
  Tensor mask;  // undefined when the manifest has none
  bool has_discrepancy = false;
};

PairedSample load_sample(const Manifest& manifest, const ManifestEntry& entry,
                         SarNormalization norm = SarNormalization::none);
std::vector<PairedSample> load_split(const Manifest& manifest, Split s,
                                     SarNormalization norm = SarNormalization::none);

}  // namespace cdiff
