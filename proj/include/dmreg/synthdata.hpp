#ifndef DMREG_SYNTHDATA_HPP
#define DMREG_SYNTHDATA_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmreg/core.hpp"
#include "dmreg/transform.hpp"
#include "dmreg/volume.hpp"
#include "dmreg/volume_io.hpp"

namespace dmreg {

/// Seeded blob phantom standing in for a structural scan.
struct PhantomSpec {
  Dims dims{64, 64, 64};
  Vec3 spacing{1.0, 1.0, 1.0};
  int blobs = 28;
  double blob_radius_min = 3.0;  ///< mm
  double blob_radius_max = 9.0;  ///< mm
  double smooth_sigma = 1.0;     ///< mm
  double noise = 0.01;           ///< Gaussian noise std before normalization
  double anatomy_threshold = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (dims.nx < 8 || dims.ny < 8 || dims.nz < 8) throw std::invalid_argument("PhantomSpec: dims too small");
    if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0)) throw std::invalid_argument("PhantomSpec: bad spacing");
    if (blobs < 0 || !(blob_radius_min > 0.0) || blob_radius_max < blob_radius_min) {
      throw std::invalid_argument("PhantomSpec: bad blob parameters");
    }
    if (!(smooth_sigma >= 0.0)) throw std::invalid_argument("PhantomSpec: smoothness must be >= 0");
    if (!(noise >= 0.0 && noise <= 0.2)) throw std::invalid_argument("PhantomSpec: noise must be in [0, 0.2]");
  }
};

/// Fraction of voxels with intensity above `tau`.
inline double anatomy_fraction(const Volume& vol, double tau) {
  std::size_t n = 0;
  for (float v : vol.voxels())
    if (v > tau) ++n;
  return static_cast<double>(n) / static_cast<double>(vol.size());
}

namespace detail {

inline constexpr std::uint64_t kStreamPhantom = 0x31;
inline constexpr std::uint64_t kStreamModality = 0x32;
inline constexpr std::uint64_t kStreamMisalign = 0x33;
inline constexpr std::uint64_t kStreamPairPhantom = 0x34;

// Soft-edged ball added into `acc` (edge width 0.5 mm).
inline void add_ball(std::vector<double>& acc, const Geometry& g, Vec3 c, Vec3 radii, double amplitude) {
  const double w = 0.5;
  const double reach = std::max({radii.x, radii.y, radii.z}) + 6.0 * w;
  int lo[3], hi[3];
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max(0, static_cast<int>(std::floor((c[a] - reach - g.origin[a]) / g.spacing[a])));
    hi[a] = std::min(g.dims[a] - 1, static_cast<int>(std::ceil((c[a] + reach - g.origin[a]) / g.spacing[a])));
  }
  const double rmean = (radii.x + radii.y + radii.z) / 3.0;
  for (int k = lo[2]; k <= hi[2]; ++k)
    for (int j = lo[1]; j <= hi[1]; ++j)
      for (int i = lo[0]; i <= hi[0]; ++i) {
        const Vec3 p = g.position(i, j, k) - c;
        // Scaled radial distance, converted back to mm at the mean radius.
        const double q = std::sqrt((p.x * p.x) / (radii.x * radii.x) + (p.y * p.y) / (radii.y * radii.y) +
                                   (p.z * p.z) / (radii.z * radii.z));
        const double s = (q - 1.0) * rmean / w;
        acc[i + static_cast<std::size_t>(g.dims.nx) * (j + static_cast<std::size_t>(g.dims.ny) * k)] +=
            amplitude / (1.0 + std::exp(s));
      }
}

inline Volume phantom_attempt(const PhantomSpec& spec, std::uint64_t seed) {
  Geometry g;
  g.dims = spec.dims;
  g.spacing = spec.spacing;
  Rng rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const Vec3 extent{(g.dims.nx - 1) * g.spacing.x, (g.dims.ny - 1) * g.spacing.y, (g.dims.nz - 1) * g.spacing.z};
  const Vec3 center = g.center();
  std::vector<double> acc(g.dims.count(), 0.0);
  Vec3 head;
  for (int a = 0; a < 3; ++a) head[a] = extent[a] * (0.30 + 0.08 * u01(rng));
  const Vec3 head_center = center + Vec3{extent.x * 0.04 * (u01(rng) - 0.5), extent.y * 0.04 * (u01(rng) - 0.5),
                                         extent.z * 0.04 * (u01(rng) - 0.5)};
  add_ball(acc, g, head_center, head, 0.35);
  std::uniform_real_distribution<double> radius(spec.blob_radius_min, spec.blob_radius_max);
  for (int b = 0; b < spec.blobs; ++b) {
    Vec3 off;
    do {
      off = {2.0 * u01(rng) - 1.0, 2.0 * u01(rng) - 1.0, 2.0 * u01(rng) - 1.0};
    } while (dot(off, off) > 0.75);
    const Vec3 c{head_center.x + off.x * head.x, head_center.y + off.y * head.y, head_center.z + off.z * head.z};
    const double r = radius(rng);
    const Vec3 radii{r * (0.7 + 0.6 * u01(rng)), r * (0.7 + 0.6 * u01(rng)), r * (0.7 + 0.6 * u01(rng))};
    const double amp = (u01(rng) < 0.7 ? 1.0 : -1.0) * (0.15 + 0.45 * u01(rng));
    add_ball(acc, g, c, radii, amp);
  }
  std::vector<float> vox(acc.size());
  for (std::size_t n = 0; n < acc.size(); ++n) vox[n] = static_cast<float>(std::max(0.0, acc[n]));
  Volume vol(g, std::move(vox));
  vol = gaussian_smooth(vol, spec.smooth_sigma / spec.spacing.x);
  if (spec.noise > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise);
    for (float& v : vol.voxels()) v = static_cast<float>(std::max(0.0, v + noise(rng)));
  }
  return normalize_intensity(vol);
}

}  // namespace detail

/// Blob phantom normalized to [0,1] whose anatomy (> tau) covers 10%-60% of voxels.
inline Volume generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  for (int attempt = 0; attempt < 100; ++attempt) {
    Volume v = detail::phantom_attempt(spec, derive_seed(spec.seed, detail::kStreamPhantom, attempt));
    const double occ = anatomy_fraction(v, spec.anatomy_threshold);
    if (occ >= 0.10 && occ <= 0.60) return v;
  }
  throw std::runtime_error("generate_phantom: anatomy occupancy outside [0.1, 0.6] after 100 attempts");
}

enum class ModalityKind { remap, gm };

inline ModalityKind parse_modality(const std::string& s) {
  if (s == "remap") return ModalityKind::remap;
  if (s == "gm") return ModalityKind::gm;
  throw std::invalid_argument("unknown modality '" + s + "'");
}

/// Strictly increasing piecewise-linear map through 8 knots on [0,1], f(0)=0, f(1)=1.
class MonotoneRemap {
 public:
  explicit MonotoneRemap(std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> inc(0.05, 1.0);
    y_[0] = 0.0;
    for (int k = 1; k < kKnots; ++k) y_[k] = y_[k - 1] + inc(rng);
    for (double& y : y_) y /= y_[kKnots - 1];
  }

  double operator()(double x) const {
    const double c = std::clamp(x, 0.0, 1.0) * (kKnots - 1);
    const int k = std::min(static_cast<int>(c), kKnots - 2);
    const double f = c - k;
    return y_[k] + (y_[k + 1] - y_[k]) * f;
  }

  static constexpr int kKnots = 8;

 private:
  double y_[kKnots]{};
};

/// Second modality from a normalized volume: gradient magnitude, or a seeded
/// monotone remap plus noise (std `noise`), renormalized.
inline Volume derive_modality(const Volume& vol, ModalityKind kind, std::uint64_t seed, double noise = 0.02) {
  if (kind == ModalityKind::gm) return normalize_intensity(gradient_magnitude(vol));
  const MonotoneRemap map(seed);
  Volume out(vol.geometry());
  Rng rng(derive_seed(seed, detail::kStreamModality));
  std::normal_distribution<double> gauss(0.0, noise > 0.0 ? noise : 1.0);
  for (std::size_t n = 0; n < vol.size(); ++n) {
    double v = map(vol.voxels()[n]);
    if (noise > 0.0) v = std::max(0.0, v + gauss(rng));
    out.voxels()[n] = static_cast<float>(v);
  }
  return normalize_intensity(out);
}

/// Fixed volume, moving volume and the transform that registers them:
/// moving(T_true(x)) corresponds to fixed(x).
struct SyntheticPair {
  Volume fixed;
  Volume moving;
  RigidParams truth;
};

inline SyntheticPair make_synthetic_pair(const PhantomSpec& spec, ModalityKind kind, const MisalignSpec& misalign,
                                         std::uint64_t index) {
  PhantomSpec ps = spec;
  ps.seed = derive_seed(spec.seed, detail::kStreamPairPhantom, index);
  SyntheticPair p;
  p.fixed = generate_phantom(ps);
  const Volume other = derive_modality(p.fixed, kind, derive_seed(spec.seed, detail::kStreamModality, index));
  Rng rng(derive_seed(misalign.seed, detail::kStreamMisalign, index));
  p.truth = draw_misalignment(misalign, p.fixed.geometry().center(), rng);
  p.moving = resample_moving(other, invert(p.truth), p.fixed.geometry());
  return p;
}

inline std::vector<SyntheticPair> make_misaligned_set(int n_pairs, const PhantomSpec& spec, ModalityKind kind,
                                                      const MisalignSpec& misalign) {
  if (n_pairs < 1) throw std::invalid_argument("make_misaligned_set: n_pairs must be >= 1");
  misalign.validate();
  std::vector<SyntheticPair> out;
  out.reserve(n_pairs);
  for (int i = 0; i < n_pairs; ++i) out.push_back(make_synthetic_pair(spec, kind, misalign, i));
  return out;
}

//------------------------------------------------------------------------------
// Manifest CSV: pair_id,fixed_path,moving_path,theta_true

struct ManifestEntry {
  int pair_id = 0;
  std::string fixed_path;
  std::string moving_path;
  RigidParams truth;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "pair_id,fixed_path,moving_path,theta_true\n";
  for (const auto& e : entries) {
    out << e.pair_id << ',' << e.fixed_path << ',' << e.moving_path << ',' << format_params(e.truth) << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

/// Paths in the returned entries are resolved relative to the manifest directory.
inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  const std::filesystem::path dir = std::filesystem::path(path).parent_path();
  std::string line;
  if (!std::getline(in, line) || line.rfind("pair_id,fixed_path,moving_path,theta_true", 0) != 0) {
    throw ParseError("manifest header missing in " + path);
  }
  std::vector<ManifestEntry> entries;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4) throw ParseError("manifest row needs 4 fields: " + line);
    ManifestEntry e;
    try {
      e.pair_id = std::stoi(f[0]);
    } catch (const std::exception&) {
      throw ParseError("bad pair id in manifest: " + f[0]);
    }
    auto resolve = [&](const std::string& p) {
      const std::filesystem::path fp(p);
      return (fp.is_absolute() ? fp : dir / fp).string();
    };
    e.fixed_path = resolve(f[1]);
    e.moving_path = resolve(f[2]);
    e.truth = parse_params(f[3]);
    entries.push_back(std::move(e));
  }
  return entries;
}

/// Writes fixed_NNN.v3d / moving_NNN.v3d and manifest.csv into `dir`.
inline void write_synthetic_set(const std::string& dir, const std::vector<SyntheticPair>& pairs) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    char name[64];
    ManifestEntry e;
    e.pair_id = static_cast<int>(i);
    std::snprintf(name, sizeof name, "fixed_%03zu.v3d", i);
    e.fixed_path = name;
    write_volume((std::filesystem::path(dir) / name).string(), pairs[i].fixed);
    std::snprintf(name, sizeof name, "moving_%03zu.v3d", i);
    e.moving_path = name;
    write_volume((std::filesystem::path(dir) / name).string(), pairs[i].moving);
    e.truth = pairs[i].truth;
    entries.push_back(e);
  }
  write_manifest((std::filesystem::path(dir) / "manifest.csv").string(), entries);
}

}  // namespace dmreg

#endif  // DMREG_SYNTHDATA_HPP
