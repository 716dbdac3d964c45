// SPDX-License-Identifier: Apache-2.0
#include "cdiff/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "cdiff/parallel.hpp"

namespace cdiff {

namespace {

struct Material {
  const char* name;
  std::array<double, 3> color;
  double reflectance;
};

// Reflectance tracks optical brightness so that radar intensity identifies
// the material.
constexpr std::array<Material, 5> kMaterials{{
    {"water", {0.10, 0.22, 0.45}, 0.10},
    {"forest", {0.12, 0.38, 0.14}, 0.30},
    {"soil", {0.55, 0.40, 0.25}, 0.45},
    {"field", {0.55, 0.60, 0.25}, 0.60},
    {"concrete", {0.80, 0.80, 0.78}, 0.90},
}};

constexpr int kSupersample = 4;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

int pick_material(std::mt19937_64& rng, int exclude) {
  int m = uniform_int(rng, 0, static_cast<int>(kMaterials.size()) - 2);
  if (m >= exclude) ++m;
  return m;
}

SceneObject make_object(std::mt19937_64& rng, double size, double min_half, double max_half, int background) {
  SceneObject o;
  o.kind = uniform(rng, 0, 1) < 0.5 ? ShapeKind::ellipse : ShapeKind::rectangle;
  o.rx = uniform(rng, min_half, max_half);
  o.ry = uniform(rng, min_half, max_half);
  const double margin = std::min(o.rx, o.ry) * 0.5;
  o.cx = uniform(rng, margin, size - margin);
  o.cy = uniform(rng, margin, size - margin);
  o.angle = uniform(rng, 0, std::numbers::pi);
  o.material = pick_material(rng, background);
  const Material& mat = kMaterials[static_cast<std::size_t>(o.material)];
  for (int c = 0; c < 3; ++c) o.color[c] = std::clamp(mat.color[c] + uniform(rng, -0.04, 0.04), 0.0, 1.0);
  o.reflectance = mat.reflectance * uniform(rng, 0.9, 1.1);
  for (double& g : o.pol_gain) g = uniform(rng, 0.8, 1.2);
  return o;
}

/// Topmost object index (+1) covering (x, y), 0 for background.
std::uint16_t label_at(const SceneLayout& layout, const std::vector<std::size_t>& order, double x, double y) {
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (layout.objects[*it].contains(x, y)) return static_cast<std::uint16_t>(*it + 1);
  }
  return 0;
}

std::vector<std::uint16_t> label_map(const SceneLayout& layout, const std::vector<std::size_t>& order,
                                     std::size_t size) {
  std::vector<std::uint16_t> labels(size * size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) labels[y * size + x] = label_at(layout, order, x + 0.5, y + 0.5);
  return labels;
}

/// Supersampled render of a per-label value; value(label) returns the
/// quantity for background (0) or object (label - 1).
template <typename ValueFn>
void render_supersampled(const SceneLayout& layout, const std::vector<std::size_t>& order, std::size_t size,
                         double dx, double dy, std::size_t channels, ValueFn value, std::span<float> out) {
  const double step = 1.0 / kSupersample;
  std::vector<double> acc(channels);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int sy = 0; sy < kSupersample; ++sy)
        for (int sx = 0; sx < kSupersample; ++sx) {
          const double px = x + (sx + 0.5) * step - dx;
          const double py = y + (sy + 0.5) * step - dy;
          const std::uint16_t label = label_at(layout, order, px, py);
          for (std::size_t c = 0; c < channels; ++c) acc[c] += value(label, c);
        }
      for (std::size_t c = 0; c < channels; ++c) {
        out[(c * size + y) * size + x] = static_cast<float>(acc[c] / (kSupersample * kSupersample));
      }
    }
}

std::string pad_id(std::size_t i) {
  std::ostringstream os;
  os.width(6);
  os.fill('0');
  os << i;
  return os.str();
}

constexpr std::array<const char*, 4> kPolNames{"hh", "hv", "vh", "vv"};

}  // namespace

void SceneSpec::validate() const {
  if (image_size == 0 || image_size % kLatentDownsample != 0) {
    throw std::invalid_argument("image_size must be a positive multiple of 8, got " + std::to_string(image_size));
  }
  if (objects_min < 1 || objects_min > objects_max) throw std::invalid_argument("invalid object count range");
  if (!(speckle_looks > 0.0)) throw std::invalid_argument("speckle looks must be positive");
  if (!(discrepancy_prob >= 0.0 && discrepancy_prob <= 1.0)) {
    throw std::invalid_argument("discrepancy probability must lie in [0,1]");
  }
  if (!(misalign_max >= 0.0 && misalign_max < static_cast<double>(image_size) / kLatentDownsample)) {
    throw std::invalid_argument("misalign_max must lie in [0, image_size/8)");
  }
}

bool SceneObject::contains(double x, double y) const {
  const double c = std::cos(angle), s = std::sin(angle);
  const double u = (x - cx) * c + (y - cy) * s;
  const double v = -(x - cx) * s + (y - cy) * c;
  if (kind == ShapeKind::ellipse) return (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0;
  return std::abs(u) <= rx && std::abs(v) <= ry;
}

Tensor speckle_field(const Shape& shape, double looks, std::mt19937_64& rng) {
  if (!(looks > 0.0)) throw std::invalid_argument("speckle looks must be positive, got " + std::to_string(looks));
  Tensor t(shape);
  std::gamma_distribution<double> dist(looks, 1.0 / looks);
  for (float& v : t.data()) v = static_cast<float>(dist(rng));
  return t;
}

Tensor render_reflectance(const SceneLayout& layout, const SceneSpec& spec, double dx, double dy) {
  const std::size_t n = spec.image_size;
  const std::size_t channels = spec.polarization == Polarization::full ? 4 : 1;
  Tensor out({channels, n, n});
  render_supersampled(
      layout, layout.sar_objects, n, dx, dy, channels,
      [&](std::uint16_t label, std::size_t c) {
        if (label == 0) return layout.background_reflectance;
        const SceneObject& o = layout.objects[label - 1];
        return channels == 1 ? o.reflectance : o.reflectance * o.pol_gain[c];
      },
      out.data());
  return out;
}

Tensor render_sar(const SceneLayout& layout, const SceneSpec& spec, double dx, double dy,
                  std::mt19937_64& speckle_rng) {
  Tensor out = render_reflectance(layout, spec, dx, dy);
  const Tensor speckle = speckle_field(out.shape(), spec.speckle_looks, speckle_rng);
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = std::clamp(static_cast<float>(d[i] * speckle[i] / kSarReferenceLevel), 0.0f, 1.0f);
  }
  return out;
}

ScenePair render_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  const double size = static_cast<double>(spec.image_size);
  const double cell = size / kLatentDownsample;
  auto rng = make_rng(seed, "layout");

  ScenePair pair;
  pair.seed = seed;
  SceneLayout& layout = pair.layout;
  layout.background_material = uniform_int(rng, 0, static_cast<int>(kMaterials.size()) - 1);
  const Material& bg = kMaterials[static_cast<std::size_t>(layout.background_material)];
  for (int c = 0; c < 3; ++c) layout.background_color[c] = std::clamp(bg.color[c] + uniform(rng, -0.03, 0.03), 0.0, 1.0);
  layout.background_reflectance = bg.reflectance * uniform(rng, 0.9, 1.1);

  const int count = uniform_int(rng, static_cast<int>(spec.objects_min), static_cast<int>(spec.objects_max));
  for (int i = 0; i < count; ++i) {
    layout.objects.push_back(make_object(rng, size, size / 16.0, size / 5.0, layout.background_material));
    layout.eo_objects.push_back(layout.objects.size() - 1);
    layout.sar_objects.push_back(layout.objects.size() - 1);
  }

  // Single-modality objects are at least 3 latent cells across and drawn on
  // top, so they are visible at latent resolution.
  if (uniform(rng, 0, 1) < spec.discrepancy_prob) {
    const int extra = uniform_int(rng, 1, 2);
    const bool in_eo = uniform(rng, 0, 1) < 0.5;
    for (int i = 0; i < extra; ++i) {
      layout.objects.push_back(make_object(rng, size, 1.5 * cell, 2.0 * cell, layout.background_material));
      (in_eo ? layout.eo_objects : layout.sar_objects).push_back(layout.objects.size() - 1);
    }
  }

  if (spec.misalign_max > 0.0) {
    pair.misalign_dx = uniform(rng, -spec.misalign_max, spec.misalign_max);
    pair.misalign_dy = uniform(rng, -spec.misalign_max, spec.misalign_max);
  }

  const std::size_t n = spec.image_size;
  layout.eo_labels = label_map(layout, layout.eo_objects, n);
  layout.sar_labels = label_map(layout, layout.sar_objects, n);
  pair.mask = Tensor({1, n, n});
  for (std::size_t i = 0; i < n * n; ++i) {
    const bool differs = layout.eo_labels[i] != layout.sar_labels[i];
    pair.mask.data()[i] = differs ? 1.0f : 0.0f;
    pair.has_discrepancy = pair.has_discrepancy || differs;
  }

  Tensor eo({3, n, n});
  render_supersampled(
      layout, layout.eo_objects, n, 0.0, 0.0, 3,
      [&](std::uint16_t label, std::size_t c) {
        return label == 0 ? layout.background_color[c] : layout.objects[label - 1].color[c];
      },
      eo.data());
  auto noise_rng = make_rng(seed, "eo-noise");
  std::normal_distribution<double> noise(0.0, kEoSensorNoise);
  for (float& v : eo.data()) v = std::clamp(static_cast<float>(v + noise(noise_rng)), 0.0f, 1.0f);
  pair.eo = ImageSample{eo, Modality::eo};

  auto speckle_rng = make_rng(seed, "speckle");
  pair.sar = ImageSample{render_sar(layout, spec, pair.misalign_dx, pair.misalign_dy, speckle_rng), Modality::sar};
  return pair;
}

ScenePair render_scene_at(const SceneSpec& spec, std::size_t index) {
  return render_scene(spec, derive_seed(spec.seed, "scene", index));
}

// --------------------------------------------------------------------------
// Dihedral augmentation

Tensor apply_dihedral(const Tensor& img, int k) {
  if (img.rank() != 3 || img.dim(1) != img.dim(2)) {
    throw ShapeError("dihedral transforms need square (C,H,W) input, got " + shape_str(img.shape()));
  }
  if (k < 0 || k > 7) throw std::out_of_range("dihedral element must be in [0,8)");
  const std::size_t C = img.dim(0), n = img.dim(1);
  const int turns = k % 4;
  const bool mirror = k >= 4;
  Tensor out(img.shape());
  auto src = img.data();
  auto dst = out.data();
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      // Walk the output coordinate back through mirror, then the rotations.
      std::size_t sy = y, sx = mirror ? n - 1 - x : x;
      for (int r = 0; r < turns; ++r) {
        const std::size_t ty = sx, tx = n - 1 - sy;
        sy = ty;
        sx = tx;
      }
      for (std::size_t c = 0; c < C; ++c) dst[(c * n + y) * n + x] = src[(c * n + sy) * n + sx];
    }
  return out;
}

int dihedral_inverse(int k) { return k < 4 ? (4 - k) % 4 : k; }

ScenePair apply_dihedral(const ScenePair& pair, int k) {
  if (pair.sar.pixels.dim(1) != pair.sar.pixels.dim(2) || pair.eo.pixels.dim(1) != pair.eo.pixels.dim(2)) {
    throw ShapeError("augment requires square images");
  }
  ScenePair out = pair;
  out.sar.pixels = apply_dihedral(pair.sar.pixels, k);
  out.eo.pixels = apply_dihedral(pair.eo.pixels, k);
  if (pair.mask.defined()) out.mask = apply_dihedral(pair.mask, k);
  out.layout = SceneLayout{};  // label maps are not carried through transforms
  return out;
}

ScenePair augment(const ScenePair& pair, std::mt19937_64& rng, int* drawn) {
  const int k = std::uniform_int_distribution<int>(0, 7)(rng);
  if (drawn != nullptr) *drawn = k;
  return apply_dihedral(pair, k);
}

// --------------------------------------------------------------------------
// Manifests

namespace {

std::string split_name(Split s) { return s == Split::train ? "train" : "test"; }

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(item);
  return out;
}

std::filesystem::path resolve(const Manifest& m, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : m.root / path;
}

}  // namespace

void Manifest::save(const std::filesystem::path& path) const {
  std::ostringstream os;
  os << "# id\tsplit\tsar_path\teo_path\tmask_path\tseed\thas_discrepancy\n";
  for (const ManifestEntry& e : entries) {
    std::string sar;
    for (std::size_t i = 0; i < e.sar_paths.size(); ++i) sar += (i ? "," : "") + e.sar_paths[i];
    os << e.id << '\t' << split_name(e.split) << '\t' << sar << '\t' << e.eo_path << '\t'
       << (e.mask_path.empty() ? "-" : e.mask_path) << '\t' << (e.seed ? std::to_string(*e.seed) : "-") << '\t'
       << (e.has_discrepancy ? (*e.has_discrepancy ? "1" : "0") : "-") << '\n';
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << os.str();
}

Manifest Manifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest " + path.string());
  Manifest m;
  m.root = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_on(line, '\t');
    if (f.size() != 7) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 7 tab-separated fields");
    }
    ManifestEntry e;
    e.id = f[0];
    if (f[1] == "train") {
      e.split = Split::train;
    } else if (f[1] == "test") {
      e.split = Split::test;
    } else {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad split '" + f[1] + "'");
    }
    e.sar_paths = split_on(f[2], ',');
    e.eo_path = f[3];
    if (f[4] != "-") e.mask_path = f[4];
    if (f[5] != "-") e.seed = std::stoull(f[5]);
    if (f[6] != "-") e.has_discrepancy = f[6] == "1";
    m.entries.push_back(std::move(e));
  }
  return m;
}

std::vector<const ManifestEntry*> Manifest::split(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.split == s) out.push_back(&e);
  }
  return out;
}

const ManifestEntry& Manifest::find(const std::string& id) const {
  for (const auto& e : entries) {
    if (e.id == id) return e;
  }
  throw std::out_of_range("manifest has no sample '" + id + "'");
}

std::vector<Split> assign_splits(std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  auto rng = make_rng(seed, "split");
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_test = count / 5;
  std::vector<Split> splits(count, Split::train);
  for (std::size_t i = 0; i < n_test; ++i) splits[order[i]] = Split::test;
  return splits;
}

Manifest write_dataset(const SceneSpec& spec, std::size_t count, const std::filesystem::path& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "sar");
  fs::create_directories(out_dir / "eo");
  fs::create_directories(out_dir / "mask");

  std::vector<ScenePair> scenes(count);
  parallel_for(count, [&](std::size_t i) { scenes[i] = render_scene_at(spec, i); });

  const auto splits = assign_splits(count, spec.seed);
  Manifest m;
  m.root = out_dir;
  for (std::size_t i = 0; i < count; ++i) {
    const ScenePair& s = scenes[i];
    ManifestEntry e;
    e.id = pad_id(i);
    e.split = splits[i];
    const std::size_t n = spec.image_size;
    if (s.sar.channels() == 1) {
      e.sar_paths.push_back("sar/" + e.id + ".pgm");
      write_pnm(out_dir / e.sar_paths.back(), s.sar.pixels);
    } else {
      for (std::size_t c = 0; c < s.sar.channels(); ++c) {
        e.sar_paths.push_back("sar/" + e.id + "_" + kPolNames[c] + ".pgm");
        write_pnm(out_dir / e.sar_paths.back(), narrow(s.sar.pixels, 0, c, 1).reshape({1, n, n}));
      }
    }
    e.eo_path = "eo/" + e.id + ".ppm";
    write_pnm(out_dir / e.eo_path, s.eo.pixels);
    e.mask_path = "mask/" + e.id + ".pgm";
    write_pnm(out_dir / e.mask_path, s.mask);
    e.seed = s.seed;
    e.has_discrepancy = s.has_discrepancy;
    m.entries.push_back(std::move(e));
  }
  m.save(out_dir / "manifest.tsv");
  return m;
}

SarNormalization parse_sar_normalization(const std::string& name) {
  if (name == "none") return SarNormalization::none;
  if (name == "max") return SarNormalization::max;
  if (name == "p99") return SarNormalization::p99;
  throw std::invalid_argument("unknown SAR normalization '" + name + "' (expected none, max or p99)");
}

Manifest ingest_paired_dir(const std::filesystem::path& sar_dir, const std::filesystem::path& eo_dir,
                           std::uint64_t seed) {
  namespace fs = std::filesystem;
  auto list = [](const fs::path& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    std::map<std::string, fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      const auto ext = entry.path().extension().string();
      if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") files[entry.path().stem().string()] = entry.path();
    }
    return files;
  };
  const auto sar = list(sar_dir);
  const auto eo = list(eo_dir);
  for (const auto& [stem, path] : sar) {
    if (!eo.contains(stem)) throw std::runtime_error("unpaired filename: " + path.string() + " has no EO counterpart");
  }
  for (const auto& [stem, path] : eo) {
    if (!sar.contains(stem)) throw std::runtime_error("unpaired filename: " + path.string() + " has no SAR counterpart");
  }

  Manifest m;
  m.root = fs::absolute(sar_dir).parent_path();
  const auto splits = assign_splits(sar.size(), seed);
  std::size_t i = 0;
  for (const auto& [stem, sar_path] : sar) {
    const fs::path eo_path = eo.at(stem);
    const Tensor s = read_pnm(sar_path);
    const Tensor y = read_pnm(eo_path);
    if (s.dim(0) != 1) throw std::runtime_error(sar_path.string() + ": SAR images must be single-channel PGM");
    if (y.dim(0) != 3) throw std::runtime_error(eo_path.string() + ": EO images must be 3-channel PPM");
    validate_image(ImageSample{s, Modality::sar});
    validate_image(ImageSample{y, Modality::eo});
    if (s.shape()[1] != y.shape()[1] || s.shape()[2] != y.shape()[2]) {
      throw std::runtime_error("size mismatch between " + sar_path.string() + " and " + eo_path.string());
    }
    ManifestEntry e;
    e.id = stem;
    e.split = splits[i++];
    e.sar_paths.push_back(fs::absolute(sar_path).string());
    e.eo_path = fs::absolute(eo_path).string();
    m.entries.push_back(std::move(e));
  }
  return m;
}

namespace {

void normalize_sar(Tensor& sar, SarNormalization norm) {
  if (norm == SarNormalization::none) return;
  std::vector<float> v(sar.data().begin(), sar.data().end());
  float ref = 0.0f;
  if (norm == SarNormalization::max) {
    ref = *std::max_element(v.begin(), v.end());
  } else {
    const std::size_t k = static_cast<std::size_t>(0.99 * static_cast<double>(v.size() - 1));
    std::nth_element(v.begin(), v.begin() + static_cast<long>(k), v.end());
    ref = v[k];
  }
  if (ref <= 0.0f) return;
  for (float& x : sar.data()) x = std::clamp(x / ref, 0.0f, 1.0f);
}

}  // namespace

PairedSample load_sample(const Manifest& manifest, const ManifestEntry& entry, SarNormalization norm) {
  PairedSample s;
  s.id = entry.id;
  std::vector<Tensor> channels;
  for (const auto& p : entry.sar_paths) channels.push_back(read_pnm(resolve(manifest, p)));
  Tensor sar = channels.size() == 1 ? channels.front() : concat(channels, 0);
  normalize_sar(sar, norm);
  s.sar = ImageSample{sar, Modality::sar};
  s.eo = ImageSample{read_pnm(resolve(manifest, entry.eo_path)), Modality::eo};
  if (!entry.mask_path.empty()) s.mask = read_pnm(resolve(manifest, entry.mask_path));
  s.has_discrepancy = entry.has_discrepancy.value_or(false);
  return s;
}

std::vector<PairedSample> load_split(const Manifest& manifest, Split split, SarNormalization norm) {
  const auto entries = manifest.split(split);
  std::vector<PairedSample> out(entries.size());
  std::vector<std::string> failures(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) {
    try {
      out[i] = load_sample(manifest, *entries[i], norm);
    } catch (const std::exception& e) {
      failures[i] = entries[i]->id + ": " + e.what();
    }
  });
  std::string missing;
  for (const auto& f : failures) {
    if (!f.empty()) missing += (missing.empty() ? "" : "; ") + f;
  }
  if (!missing.empty()) throw std::runtime_error("failed to load samples: " + missing);
  return out;
}

}  // namespace cdiff
