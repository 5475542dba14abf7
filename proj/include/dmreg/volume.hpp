#ifndef DMREG_VOLUME_HPP
#define DMREG_VOLUME_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dmreg/core.hpp"

namespace dmreg {

/// Grid layout of a volume in physical space.
struct Geometry {
  Dims dims;
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin;

  /// Physical position of voxel (i,j,k).
  Vec3 position(double i, double j, double k) const {
    return {origin.x + i * spacing.x, origin.y + j * spacing.y, origin.z + k * spacing.z};
  }

  /// Continuous voxel index of a physical point.
  Vec3 to_index(Vec3 p) const {
    return {(p.x - origin.x) / spacing.x, (p.y - origin.y) / spacing.y, (p.z - origin.z) / spacing.z};
  }

  /// Physical center of the voxel-center bounding box.
  Vec3 center() const {
    return position(0.5 * (dims.nx - 1), 0.5 * (dims.ny - 1), 0.5 * (dims.nz - 1));
  }

  friend bool operator==(const Geometry&, const Geometry&) = default;
};

/// 3D scalar image with x-fastest voxel ordering.
class Volume {
 public:
  Volume() = default;

  explicit Volume(const Geometry& geometry, float fill = 0.0f) : geometry_(geometry) {
    validate(geometry_);
    voxels_.assign(geometry_.dims.count(), fill);
  }

  Volume(const Geometry& geometry, std::vector<float> voxels) : geometry_(geometry), voxels_(std::move(voxels)) {
    validate(geometry_);
    if (voxels_.size() != geometry_.dims.count()) {
      throw std::invalid_argument("voxel count does not match dims");
    }
  }

  const Geometry& geometry() const { return geometry_; }
  const Dims& dims() const { return geometry_.dims; }
  const Vec3& spacing() const { return geometry_.spacing; }
  const Vec3& origin() const { return geometry_.origin; }
  std::size_t size() const { return voxels_.size(); }
  bool empty() const { return voxels_.empty(); }

  std::span<const float> voxels() const { return voxels_; }
  std::span<float> voxels() { return voxels_; }

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(geometry_.dims.nx) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(geometry_.dims.ny) * static_cast<std::size_t>(k));
  }

  float operator()(int i, int j, int k) const { return voxels_[index(i, j, k)]; }
  float& operator()(int i, int j, int k) { return voxels_[index(i, j, k)]; }

  Vec3 position(int i, int j, int k) const { return geometry_.position(i, j, k); }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  static void validate(const Geometry& g) {
    if (g.dims.nx <= 0 || g.dims.ny <= 0 || g.dims.nz <= 0) throw std::invalid_argument("dims must be positive");
    if (!(g.spacing.x > 0.0 && g.spacing.y > 0.0 && g.spacing.z > 0.0)) {
      throw std::invalid_argument("spacing must be positive");
    }
  }

  Geometry geometry_;
  std::vector<float> voxels_;
};

/// Trilinear interpolation at continuous voxel index `u`; 0 outside the
/// voxel-center bounding box.
inline double sample_index(const Volume& vol, Vec3 u) {
  const Dims& d = vol.dims();
  int base[3];
  double frac[3];
  for (int a = 0; a < 3; ++a) {
    const double c = u[a];
    const int n = d[a];
    if (!(c >= 0.0) || c > static_cast<double>(n - 1)) return 0.0;
    if (n == 1) {
      base[a] = 0;
      frac[a] = 0.0;
      continue;
    }
    int i0 = static_cast<int>(c);
    if (i0 > n - 2) i0 = n - 2;
    base[a] = i0;
    frac[a] = c - i0;
  }
  const int i1 = d.nx > 1 ? 1 : 0;
  const std::size_t sy = d.ny > 1 ? static_cast<std::size_t>(d.nx) : 0;
  const std::size_t sz = d.nz > 1 ? static_cast<std::size_t>(d.nx) * d.ny : 0;
  const float* p = vol.voxels().data() + vol.index(base[0], base[1], base[2]);
  const double fx = frac[0], fy = frac[1], fz = frac[2];
  const double c00 = p[0] * (1.0 - fx) + p[i1] * fx;
  const double c10 = p[sy] * (1.0 - fx) + p[sy + i1] * fx;
  const double c01 = p[sz] * (1.0 - fx) + p[sz + i1] * fx;
  const double c11 = p[sz + sy] * (1.0 - fx) + p[sz + sy + i1] * fx;
  const double c0 = c00 * (1.0 - fy) + c10 * fy;
  const double c1 = c01 * (1.0 - fy) + c11 * fy;
  return c0 * (1.0 - fz) + c1 * fz;
}

/// Trilinear interpolation at physical point `p` (mm).
inline double trilinear_sample(const Volume& vol, Vec3 p) {
  if (vol.empty()) throw std::invalid_argument("trilinear_sample on empty volume");
  return sample_index(vol, vol.geometry().to_index(p));
}

/// True when `p` lies inside the voxel-center bounding box.
inline bool inside(const Geometry& g, Vec3 p) {
  const Vec3 u = g.to_index(p);
  for (int a = 0; a < 3; ++a) {
    if (!(u[a] >= 0.0) || u[a] > static_cast<double>(g.dims[a] - 1)) return false;
  }
  return true;
}

/// Normalized Gaussian taps for offsets -radius..radius, radius = ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  if (sigma < 0.0) throw std::invalid_argument("gaussian_kernel: sigma must be >= 0");
  if (sigma == 0.0) return {1.0};
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += taps[i + radius];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

namespace detail {

// One separable pass along `axis` with edge replication.
inline void convolve_axis(const std::vector<float>& in, std::vector<float>& out, const Dims& d, int axis,
                          const std::vector<double>& taps) {
  const int radius = static_cast<int>(taps.size() / 2);
  const int n = d[axis];
  const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? static_cast<std::size_t>(d.nx) : d.count() / d.nz);
  const int outer_a = axis == 0 ? d.ny : d.nx;
  const int outer_b = axis == 2 ? d.ny : d.nz;
  std::vector<double> line(n);
  for (int b = 0; b < outer_b; ++b) {
    for (int a = 0; a < outer_a; ++a) {
      std::size_t start = 0;
      if (axis == 0) start = static_cast<std::size_t>(d.nx) * (a + static_cast<std::size_t>(d.ny) * b);
      if (axis == 1) start = a + static_cast<std::size_t>(d.nx) * d.ny * b;
      if (axis == 2) start = a + static_cast<std::size_t>(d.nx) * b;
      for (int i = 0; i < n; ++i) line[i] = in[start + i * stride];
      for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t) {
          const int src = std::clamp(i + t, 0, n - 1);
          acc += taps[t + radius] * line[src];
        }
        out[start + i * stride] = static_cast<float>(acc);
      }
    }
  }
}

}  // namespace detail

/// Separable Gaussian smoothing with sigma in voxels, clamped edges.
inline Volume gaussian_smooth(const Volume& vol, double sigma_vox) {
  if (sigma_vox < 0.0 || std::isnan(sigma_vox)) throw std::invalid_argument("gaussian_smooth: negative sigma");
  if (sigma_vox == 0.0) return vol;
  const auto taps = gaussian_kernel(sigma_vox);
  std::vector<float> a(vol.voxels().begin(), vol.voxels().end());
  std::vector<float> b(a.size());
  for (int axis = 0; axis < 3; ++axis) {
    detail::convolve_axis(a, b, vol.dims(), axis, taps);
    std::swap(a, b);
  }
  return Volume(vol.geometry(), std::move(a));
}

/// Anti-aliased decimation by integer factor `l` (sigma = l/2 voxels, phase 0).
inline Volume downsample(const Volume& vol, int l) {
  if (l < 1) throw std::invalid_argument("downsample: factor must be >= 1");
  if (l == 1) return vol;
  const Volume smooth = gaussian_smooth(vol, 0.5 * l);
  const Dims& d = vol.dims();
  Geometry g;
  g.dims = {(d.nx + l - 1) / l, (d.ny + l - 1) / l, (d.nz + l - 1) / l};
  g.spacing = static_cast<double>(l) * vol.spacing();
  g.origin = vol.origin();
  Volume out(g);
  for (int k = 0; k < g.dims.nz; ++k)
    for (int j = 0; j < g.dims.ny; ++j)
      for (int i = 0; i < g.dims.nx; ++i) out(i, j, k) = smooth(i * l, j * l, k * l);
  return out;
}

/// Affine map of intensities onto [0,1]; a constant volume maps to zeros.
inline Volume normalize_intensity(const Volume& vol) {
  if (vol.empty()) throw std::invalid_argument("normalize_intensity on empty volume");
  const auto [lo_it, hi_it] = std::minmax_element(vol.voxels().begin(), vol.voxels().end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  std::vector<float> out(vol.size(), 0.0f);
  if (hi > lo) {
    const double range = hi - lo;
    for (std::size_t n = 0; n < out.size(); ++n) {
      out[n] = static_cast<float>(std::clamp((vol.voxels()[n] - lo) / range, 0.0, 1.0));
    }
  }
  return Volume(vol.geometry(), std::move(out));
}

/// Gradient magnitude in physical units: central differences inside,
/// one-sided differences on the faces.
inline Volume gradient_magnitude(const Volume& vol) {
  const Dims& d = vol.dims();
  if (d.nx < 3 || d.ny < 3 || d.nz < 3) throw std::invalid_argument("gradient_magnitude needs >= 3 voxels per axis");
  const Vec3 s = vol.spacing();
  Volume out(vol.geometry());
  auto diff = [&](int i, int j, int k, int axis) {
    int lo[3] = {i, j, k};
    int hi[3] = {i, j, k};
    const int c = lo[axis];
    const int n = d[axis];
    double width = 2.0 * s[axis];
    if (c == 0) {
      hi[axis] = 1;
      width = s[axis];
    } else if (c == n - 1) {
      lo[axis] = n - 2;
      width = s[axis];
    } else {
      lo[axis] = c - 1;
      hi[axis] = c + 1;
    }
    return (static_cast<double>(vol(hi[0], hi[1], hi[2])) - vol(lo[0], lo[1], lo[2])) / width;
  };
  for (int k = 0; k < d.nz; ++k)
    for (int j = 0; j < d.ny; ++j)
      for (int i = 0; i < d.nx; ++i) {
        const double gx = diff(i, j, k, 0);
        const double gy = diff(i, j, k, 1);
        const double gz = diff(i, j, k, 2);
        out(i, j, k) = static_cast<float>(std::sqrt(gx * gx + gy * gy + gz * gz));
      }
  return out;
}

}  // namespace dmreg

#endif  // DMREG_VOLUME_HPP
