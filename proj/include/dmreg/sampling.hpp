#ifndef DMREG_SAMPLING_HPP
#define DMREG_SAMPLING_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmreg/binary_io.hpp"
#include "dmreg/core.hpp"
#include "dmreg/transform.hpp"
#include "dmreg/volume.hpp"

namespace dmreg {

/// Cubic P^3 patch, x fastest.
struct Patch {
  int size = 0;
  std::vector<float> values;

  Patch() = default;
  explicit Patch(int p) : size(p), values(static_cast<std::size_t>(p) * p * p, 0.0f) {}

  double mean() const {
    return values.empty() ? 0.0 : std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  }
  friend bool operator==(const Patch&, const Patch&) = default;
};

struct PairMeta {
  int source = -1;
  Vec3 fixed_center;
  Vec3 moving_center;
};

/// Fixed/moving patch pair with label z (1 = registered, 0 = not).
struct PatchPair {
  Patch u;
  Patch v;
  std::uint8_t z = 0;
  PairMeta meta;
};

struct DitherSpec {
  double sigma2 = 0.0;  ///< variance of the moving-center displacement, mm^2
  int m = 1;            ///< dithered draws per base center

  void validate() const {
    if (!(sigma2 >= 0.0)) throw std::invalid_argument("DitherSpec: sigma2 must be >= 0");
    if (m < 1) throw std::invalid_argument("DitherSpec: m must be >= 1");
  }
};

struct SamplerConfig {
  int patch_size = 17;
  double anatomy_threshold = 0.05;
  /// Minimum negative-pair offset in mm; <= 0 selects one patch extent, P * max(spacing).
  double min_negative_offset = 0.0;
  int pairs_per_volume = 1000;
  bool symmetrize = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (patch_size < 1 || patch_size % 2 == 0) throw std::invalid_argument("SamplerConfig: patch size must be odd");
    if (!(anatomy_threshold >= 0.0 && anatomy_threshold < 1.0)) {
      throw std::invalid_argument("SamplerConfig: anatomy threshold must be in [0,1)");
    }
    if (pairs_per_volume < 2 || pairs_per_volume % 2 != 0) {
      throw std::invalid_argument("SamplerConfig: pairs_per_volume must be even and >= 2");
    }
  }

  double negative_offset(const Geometry& g) const {
    if (min_negative_offset > 0.0) return min_negative_offset;
    return patch_size * std::max({g.spacing.x, g.spacing.y, g.spacing.z});
  }
};

inline constexpr int kMaxRejections = 1000;

/// Samples `vol` on the P^3 lattice x_o = center + o (o on the fixed lattice
/// spacing), mapped through `T` and shifted by `shift`. Outside samples are 0.
/// Returns true if every lattice point was inside the volume.
inline bool sample_lattice(const Volume& vol, const Affine& T, Vec3 center, Vec3 spacing, int P, Vec3 shift,
                           std::span<float> out) {
  const int h = P / 2;
  const Vec3 base = T(center) + shift;
  const Geometry& g = vol.geometry();
  // Lattice axes mapped into the moving index space.
  Vec3 ax[3];
  for (int a = 0; a < 3; ++a) {
    Vec3 e;
    e[a] = spacing[a];
    const Vec3 d = T.rotate(e);
    ax[a] = {d.x / g.spacing.x, d.y / g.spacing.y, d.z / g.spacing.z};
  }
  const Vec3 u0 = g.to_index(base);
  bool all_inside = true;
  std::size_t n = 0;
  for (int k = -h; k <= h; ++k)
    for (int j = -h; j <= h; ++j)
      for (int i = -h; i <= h; ++i, ++n) {
        Vec3 u;
        if (i == 0 && j == 0 && k == 0) {
          u = u0;
        } else {
          u = u0 + (static_cast<double>(i) * ax[0] + static_cast<double>(j) * ax[1]) + static_cast<double>(k) * ax[2];
        }
        bool in = true;
        for (int a = 0; a < 3; ++a) {
          const double hi = g.dims[a] - 1;
          if (!(u[a] >= -1e-9) || u[a] > hi + 1e-9) {
            in = false;
          } else {
            u[a] = std::clamp(u[a], 0.0, hi);
          }
        }
        if (!in) {
          all_inside = false;
          out[n] = 0.0f;
        } else {
          out[n] = static_cast<float>(sample_index(vol, u));
        }
      }
  return all_inside;
}

/// Axis-aligned patch at `center`; throws OutOfBoundsError if the lattice exits the volume.
inline Patch extract_patch(const Volume& vol, Vec3 center, int P) {
  if (P < 1) throw std::invalid_argument("extract_patch: size must be >= 1");
  Patch patch(P);
  const Affine identity = to_affine(RigidParams::identity());
  if (!sample_lattice(vol, identity, center, vol.spacing(), P, {}, patch.values)) {
    throw OutOfBoundsError("extract_patch: lattice leaves the volume");
  }
  return patch;
}

//------------------------------------------------------------------------------
// Cube symmetries

/// One of the 48 signed axis permutations: output axis k takes input axis
/// perm[k], negated when flip[k].
struct SymmetryElement {
  std::array<int, 3> perm{0, 1, 2};
  std::array<bool, 3> flip{false, false, false};

  static constexpr int kCount = 48;

  /// Elements are indexed perm_index * 8 + flip_bits; index 0 is the identity.
  static SymmetryElement from_index(int index) {
    if (index < 0 || index >= kCount) throw std::invalid_argument("SymmetryElement index out of range");
    static constexpr int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    SymmetryElement g;
    const int p = index / 8;
    const int bits = index % 8;
    for (int a = 0; a < 3; ++a) {
      g.perm[a] = perms[p][a];
      g.flip[a] = (bits >> a) & 1;
    }
    return g;
  }

  static SymmetryElement identity() { return {}; }
  static SymmetryElement flip_x() { return from_index(1); }

  friend bool operator==(const SymmetryElement&, const SymmetryElement&) = default;
};

inline std::vector<float> apply_symmetry(std::span<const float> cube, int P, const SymmetryElement& g) {
  if (cube.size() != static_cast<std::size_t>(P) * P * P) {
    throw std::invalid_argument("apply_symmetry: data is not a P^3 cube");
  }
  std::vector<float> out(cube.size());
  const int last = P - 1;
  int in_idx[3];
  std::size_t n = 0;
  for (in_idx[2] = 0; in_idx[2] < P; ++in_idx[2])
    for (in_idx[1] = 0; in_idx[1] < P; ++in_idx[1])
      for (in_idx[0] = 0; in_idx[0] < P; ++in_idx[0], ++n) {
        int o[3];
        for (int k = 0; k < 3; ++k) {
          const int src = in_idx[g.perm[k]];
          o[k] = g.flip[k] ? last - src : src;
        }
        out[o[0] + static_cast<std::size_t>(P) * (o[1] + static_cast<std::size_t>(P) * o[2])] = cube[n];
      }
  return out;
}

inline PatchPair symmetrize_pair(const PatchPair& pair, const SymmetryElement& g) {
  const auto cubic = [](const Patch& p) { return p.size > 0 && p.values.size() == static_cast<std::size_t>(p.size) * p.size * p.size; };
  if (!cubic(pair.u) || !cubic(pair.v) || pair.u.size != pair.v.size) {
    throw std::invalid_argument("symmetrize_pair: patches must be cubic and equal in size");
  }
  PatchPair out = pair;
  out.u.values = apply_symmetry(pair.u.values, pair.u.size, g);
  out.v.values = apply_symmetry(pair.v.values, pair.v.size, g);
  return out;
}

//------------------------------------------------------------------------------
// Pair generation

/// Random offset with uniformly distributed direction and length in [rho, 2 rho].
inline Vec3 draw_negative_offset(double rho, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec3 dir;
  double len = 0.0;
  do {
    dir = {gauss(rng), gauss(rng), gauss(rng)};
    len = norm(dir);
  } while (len < 1e-12);
  std::uniform_real_distribution<double> length(rho, 2.0 * rho);
  return (length(rng) / len) * dir;
}

namespace detail {

/// Voxel-grid center whose P^3 fixed patch lies inside and has mean > tau.
inline Vec3 draw_anatomy_center(const Volume& fixed, const SamplerConfig& cfg, Rng& rng, Patch& fixed_patch) {
  const int h = cfg.patch_size / 2;
  const Dims& d = fixed.dims();
  if (d.nx < cfg.patch_size || d.ny < cfg.patch_size || d.nz < cfg.patch_size) {
    throw OutOfBoundsError("volume smaller than the patch");
  }
  std::uniform_int_distribution<int> ix(h, d.nx - 1 - h), iy(h, d.ny - 1 - h), iz(h, d.nz - 1 - h);
  const Affine identity = to_affine(RigidParams::identity());
  for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
    const Vec3 c = fixed.position(ix(rng), iy(rng), iz(rng));
    sample_lattice(fixed, identity, c, fixed.spacing(), cfg.patch_size, {}, fixed_patch.values);
    if (fixed_patch.mean() > cfg.anatomy_threshold) return c;
  }
  throw NoAnatomyError("no patch center above the anatomy threshold after 1000 attempts");
}

inline Vec3 draw_dither(double sigma2, Rng& rng) {
  if (sigma2 == 0.0) return {};
  std::normal_distribution<double> gauss(0.0, std::sqrt(sigma2));
  const double x = gauss(rng);
  const double y = gauss(rng);
  const double z = gauss(rng);
  return {x, y, z};
}

/// Positive pair at a given fixed center.
inline PatchPair positive_at(const Volume& fixed, const Volume& moving, const Affine& align, Vec3 c,
                             const Patch& fixed_patch, const SamplerConfig& cfg, const DitherSpec& dither, Rng& rng) {
  PatchPair pair;
  pair.u = fixed_patch;
  pair.v = Patch(cfg.patch_size);
  pair.z = 1;
  const Vec3 d = draw_dither(dither.sigma2, rng);
  sample_lattice(moving, align, c, fixed.spacing(), cfg.patch_size, d, pair.v.values);
  pair.meta.fixed_center = c;
  pair.meta.moving_center = align(c) + d;
  return pair;
}

}  // namespace detail

/// One labeled pair. Positives sample the moving image at the aligned,
/// dithered location; negatives add an offset of length >= rho. Moving
/// samples outside the volume are 0, as in the metric.
inline PatchPair make_pair(const Volume& fixed, const Volume& moving, const RigidParams& align,
                           const SamplerConfig& cfg, const DitherSpec& dither, int label, Rng& rng) {
  cfg.validate();
  dither.validate();
  if (label != 0 && label != 1) throw std::invalid_argument("make_pair: label must be 0 or 1");
  const Affine T = to_affine(align);
  Patch fixed_patch(cfg.patch_size);
  if (label == 1) {
    const Vec3 c = detail::draw_anatomy_center(fixed, cfg, rng, fixed_patch);
    return detail::positive_at(fixed, moving, T, c, fixed_patch, cfg, dither, rng);
  }
  const double rho = cfg.negative_offset(fixed.geometry());
  for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
    const Vec3 c = detail::draw_anatomy_center(fixed, cfg, rng, fixed_patch);
    const Vec3 w = draw_negative_offset(rho, rng);
    PatchPair pair;
    pair.v = Patch(cfg.patch_size);
    sample_lattice(moving, T, c, fixed.spacing(), cfg.patch_size, w, pair.v.values);
    if (!(pair.v.mean() > cfg.anatomy_threshold)) continue;
    pair.u = fixed_patch;
    pair.z = 0;
    pair.meta.fixed_center = c;
    pair.meta.moving_center = T(c) + w;
    return pair;
  }
  throw NoAnatomyError("no negative pair on the anatomy after 1000 attempts");
}

/// Fixed/moving volumes with the current best alignment estimate.
struct AlignedPair {
  const Volume* fixed = nullptr;
  const Volume* moving = nullptr;
  RigidParams align;
};

struct Dataset {
  int patch_size = 0;
  std::vector<PatchPair> pairs;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

namespace detail {
inline constexpr std::uint64_t kStreamEntry = 0x11;
inline constexpr std::uint64_t kStreamBase = 0x12;
inline constexpr std::uint64_t kStreamShuffle = 0x13;
}  // namespace detail

/// Balanced, symmetrized, shuffled dataset: pairs_per_volume entries per
/// volume pair, half positive. Entry e draws from its own stream derived
/// from (seed, e), so the result does not depend on evaluation order.
inline Dataset build_dataset(std::span<const AlignedPair> volume_pairs, const SamplerConfig& cfg,
                             const DitherSpec& dither) {
  cfg.validate();
  dither.validate();
  if (volume_pairs.empty()) throw std::invalid_argument("build_dataset: no volume pairs");
  const int per = cfg.pairs_per_volume;
  const int n_pos = per / 2;
  Dataset ds;
  ds.patch_size = cfg.patch_size;
  ds.pairs.reserve(volume_pairs.size() * per);
  for (std::size_t vp = 0; vp < volume_pairs.size(); ++vp) {
    const AlignedPair& src = volume_pairs[vp];
    const Affine T = to_affine(src.align);
    Vec3 base_center;
    Patch base_patch(cfg.patch_size);
    for (int k = 0; k < per; ++k) {
      const std::uint64_t e = vp * static_cast<std::uint64_t>(per) + k;
      Rng rng(derive_seed(cfg.seed, detail::kStreamEntry, e));
      PatchPair pair;
      if (k < n_pos) {
        if (dither.m == 1) {
          pair = make_pair(*src.fixed, *src.moving, src.align, cfg, dither, 1, rng);
        } else {
          if (k % dither.m == 0) {
            Rng base_rng(derive_seed(cfg.seed, detail::kStreamBase, e));
            base_center = detail::draw_anatomy_center(*src.fixed, cfg, base_rng, base_patch);
          }
          pair = detail::positive_at(*src.fixed, *src.moving, T, base_center, base_patch, cfg, dither, rng);
        }
      } else {
        pair = make_pair(*src.fixed, *src.moving, src.align, cfg, dither, 0, rng);
      }
      pair.meta.source = static_cast<int>(vp);
      if (cfg.symmetrize) {
        std::uniform_int_distribution<int> pick(0, SymmetryElement::kCount - 1);
        pair = symmetrize_pair(pair, SymmetryElement::from_index(pick(rng)));
      }
      ds.pairs.push_back(std::move(pair));
    }
  }
  Rng shuffle_rng(derive_seed(cfg.seed, detail::kStreamShuffle));
  std::shuffle(ds.pairs.begin(), ds.pairs.end(), shuffle_rng);
  return ds;
}

//------------------------------------------------------------------------------
// PPD1 dataset files: "PPD1", u32 P, u64 count, then per record
// f32 u[P^3], f32 v[P^3], u8 z. Metadata is not stored.

inline void write_dataset(const std::string& path, const Dataset& ds) {
  detail::BinaryWriter w(path);
  w.bytes("PPD1", 4);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.patch_size));
  w.put<std::uint64_t>(ds.pairs.size());
  const std::size_t n = static_cast<std::size_t>(ds.patch_size) * ds.patch_size * ds.patch_size;
  for (const auto& p : ds.pairs) {
    if (p.u.values.size() != n || p.v.values.size() != n) throw std::invalid_argument("write_dataset: patch size mismatch");
    w.put_array<float>(p.u.values);
    w.put_array<float>(p.v.values);
    w.put<std::uint8_t>(p.z);
  }
  w.close();
}

inline Dataset read_dataset(const std::string& path) {
  detail::BinaryReader r(path);
  r.expect_magic("PPD1");
  Dataset ds;
  const auto P = r.get<std::uint32_t>();
  if (P == 0 || P > 255) throw ParseError("implausible patch size in " + path);
  ds.patch_size = static_cast<int>(P);
  const auto count = r.get<std::uint64_t>();
  if (count > (1ULL << 32)) throw ParseError("implausible record count in " + path);
  ds.pairs.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
  for (std::uint64_t i = 0; i < count; ++i) {
    PatchPair p;
    p.u = Patch(ds.patch_size);
    p.v = Patch(ds.patch_size);
    r.get_array<float>(p.u.values);
    r.get_array<float>(p.v.values);
    p.z = r.get<std::uint8_t>();
    if (p.z > 1) throw ParseError("label out of range in " + path);
    ds.pairs.push_back(std::move(p));
  }
  if (!r.at_end()) throw ParseError("trailing bytes in " + path);
  return ds;
}

}  // namespace dmreg

#endif  // DMREG_SAMPLING_HPP
