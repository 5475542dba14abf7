#ifndef DMREG_METRIC_HPP
#define DMREG_METRIC_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmreg/network.hpp"
#include "dmreg/sampling.hpp"
#include "dmreg/transform.hpp"
#include "dmreg/volume.hpp"

namespace dmreg {

/// Per-patch score M for the fixed patch at `center` and the moving patch on
/// the lattice T(center + o). Moving samples outside the volume are 0.
inline double patch_score(const ModelParams<float>& model, const Volume& fixed, const Volume& moving, const Affine& T,
                          Vec3 center, ForwardTrace<float>& trace, std::vector<float>& input) {
  const int P = model.arch.patch_size;
  const std::size_t p3 = static_cast<std::size_t>(P) * P * P;
  input.resize(2 * p3);
  const Affine identity = to_affine(RigidParams::identity());
  std::span<float> u(input.data(), p3);
  std::span<float> v(input.data() + p3, p3);
  sample_lattice(fixed, identity, center, fixed.spacing(), P, {}, u);
  sample_lattice(moving, T, center, fixed.spacing(), P, {}, v);
  for (float x : input)
    if (!std::isfinite(x)) return std::numeric_limits<double>::quiet_NaN();
  const Logits<float> l = forward_input<float>(model, input, {}, trace);
  return static_cast<double>(presoftmax_score(l));
}

/// Learned metric: F = sum over frozen centers of M, in center order.
inline double deep_metric(const ModelParams<float>& model, std::span<const Vec3> centers, const Volume& fixed,
                          const Volume& moving, const RigidParams& theta) {
  if (model.arch.in_channels != 2) throw ShapeError("deep metric needs a two-channel model");
  const Affine T = to_affine(theta);
  ForwardTrace<float> trace;
  std::vector<float> input;
  double F = 0.0;
  for (const Vec3& c : centers) F += patch_score(model, fixed, moving, T, c, trace, input);
  return F;
}

/// `n` independently drawn voxel-grid centers (repeats possible) whose fixed patch is interior and
/// has mean intensity above `tau`.
inline std::vector<Vec3> sample_patch_centers(const Volume& fixed, int n, int P, double tau, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_patch_centers: n must be >= 1");
  SamplerConfig cfg;
  cfg.patch_size = P;
  cfg.anatomy_threshold = tau;
  Rng rng(seed);
  Patch scratch(P);
  std::vector<Vec3> centers;
  centers.reserve(n);
  for (int i = 0; i < n; ++i) centers.push_back(detail::draw_anatomy_center(fixed, cfg, rng, scratch));
  return centers;
}

/// Entropy (natural log) of a histogram with total count `total`.
inline double entropy(std::span<const double> counts, double total) {
  double h = 0.0;
  for (double c : counts) {
    if (c > 0.0) {
      const double p = c / total;
      h -= p * std::log(p);
    }
  }
  return h;
}

inline int intensity_bin(double v, int bins) {
  const double c = std::clamp(v, 0.0, 1.0);
  return std::min(static_cast<int>(c * bins), bins - 1);
}

/// (H(A)+H(B))/H(A,B) over fixed voxels whose mapped location lies inside
/// the moving volume. Overlap under 1% of fixed voxels scores 0; a zero
/// joint entropy scores 1; a non-finite sample gives NaN.
inline double nmi(const Volume& fixed, const Volume& moving, const RigidParams& theta, int bins = 60) {
  if (bins < 2) throw std::invalid_argument("nmi: bins must be >= 2");
  const Affine T = to_affine(theta);
  const Geometry& fg = fixed.geometry();
  const Geometry& mg = moving.geometry();
  std::vector<double> joint(static_cast<std::size_t>(bins) * bins, 0.0);
  std::size_t overlap = 0;
  const Dims& d = fg.dims;
  for (int k = 0; k < d.nz; ++k)
    for (int j = 0; j < d.ny; ++j)
      for (int i = 0; i < d.nx; ++i) {
        const Vec3 u = mg.to_index(T(fg.position(i, j, k)));
        bool in = true;
        for (int a = 0; a < 3; ++a) {
          if (!(u[a] >= 0.0) || u[a] > mg.dims[a] - 1) in = false;
        }
        if (!in) continue;
        const double a = fixed(i, j, k);
        const double b = sample_index(moving, u);
        if (!std::isfinite(a) || !std::isfinite(b)) return std::numeric_limits<double>::quiet_NaN();
        const int a_bin = intensity_bin(a, bins);
        const int b_bin = intensity_bin(b, bins);
        joint[static_cast<std::size_t>(a_bin) * bins + b_bin] += 1.0;
        ++overlap;
      }
  if (overlap == 0 || static_cast<double>(overlap) < 0.01 * static_cast<double>(d.count())) return 0.0;
  std::vector<double> ha(bins, 0.0), hb(bins, 0.0);
  for (int a = 0; a < bins; ++a)
    for (int b = 0; b < bins; ++b) {
      ha[a] += joint[static_cast<std::size_t>(a) * bins + b];
      hb[b] += joint[static_cast<std::size_t>(a) * bins + b];
    }
  const double total = static_cast<double>(overlap);
  const double hab = entropy(joint, total);
  if (hab <= 0.0) return 1.0;
  return (entropy(ha, total) + entropy(hb, total)) / hab;
}

enum class MetricKind { deep, nmi };

/// Similarity measure with its frozen state for one registration run.
class MetricContext {
 public:
  static MetricContext make_nmi(int bins = 60) {
    if (bins < 2) throw std::invalid_argument("nmi: bins must be >= 2");
    MetricContext c;
    c.kind_ = MetricKind::nmi;
    c.bins_ = bins;
    return c;
  }

  static MetricContext make_deep(std::shared_ptr<const ModelParams<float>> model, std::vector<Vec3> centers) {
    if (!model) throw std::invalid_argument("deep metric needs a model");
    if (centers.empty()) throw std::invalid_argument("deep metric needs at least one patch center");
    MetricContext c;
    c.kind_ = MetricKind::deep;
    c.model_ = std::move(model);
    c.centers_ = std::move(centers);
    return c;
  }

  /// Deep context with `n` anatomy-restricted centers drawn from `fixed`.
  static MetricContext make_deep(std::shared_ptr<const ModelParams<float>> model, const Volume& fixed, int n = 64,
                                 std::uint64_t seed = 0, double tau = 0.05) {
    if (!model) throw std::invalid_argument("deep metric needs a model");
    auto centers = sample_patch_centers(fixed, n, model->arch.patch_size, tau, seed);
    return make_deep(std::move(model), std::move(centers));
  }

  MetricKind kind() const { return kind_; }
  int bins() const { return bins_; }
  std::span<const Vec3> centers() const { return centers_; }
  const ModelParams<float>* model() const { return model_.get(); }

  double evaluate(const Volume& fixed, const Volume& moving, const RigidParams& theta) const {
    if (kind_ == MetricKind::nmi) return nmi(fixed, moving, theta, bins_);
    return deep_metric(*model_, centers_, fixed, moving, theta);
  }

 private:
  MetricKind kind_ = MetricKind::nmi;
  int bins_ = 60;
  std::shared_ptr<const ModelParams<float>> model_;
  std::vector<Vec3> centers_;
};

enum class Axis { tx, ty, tz, rx, ry, rz };

inline Axis parse_axis(const std::string& s) {
  static const char* names[] = {"tx", "ty", "tz", "rx", "ry", "rz"};
  for (int i = 0; i < 6; ++i)
    if (s == names[i]) return static_cast<Axis>(i);
  throw std::invalid_argument("unknown axis '" + s + "'");
}

inline const char* axis_name(Axis a) {
  static const char* names[] = {"tx", "ty", "tz", "rx", "ry", "rz"};
  return names[static_cast<int>(a)];
}

inline const char* axis_unit(Axis a) { return static_cast<int>(a) < 3 ? "mm" : "rad"; }

struct SweepPoint {
  double offset = 0.0;
  double value = 0.0;
};

/// Evaluates `metric` at `steps` equally spaced offsets of one parameter around `base`.
inline std::vector<SweepPoint> response_sweep(const std::function<double(const RigidParams&)>& metric,
                                              const RigidParams& base, Axis axis, double lo, double hi, int steps) {
  if (steps < 2) throw std::invalid_argument("response_sweep: steps must be >= 2");
  std::vector<SweepPoint> curve;
  curve.reserve(steps);
  for (int i = 0; i < steps; ++i) {
    const double offset = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1);
    auto v = base.vector();
    v[static_cast<int>(axis)] += offset;
    curve.push_back({offset, metric(RigidParams::from_vector(v, base.center))});
  }
  return curve;
}

inline std::vector<SweepPoint> response_sweep(const MetricContext& ctx, const Volume& fixed, const Volume& moving,
                                              const RigidParams& base, Axis axis, double lo, double hi, int steps) {
  return response_sweep([&](const RigidParams& p) { return ctx.evaluate(fixed, moving, p); }, base, axis, lo, hi,
                        steps);
}

/// "# axis=<a> unit=<u>", header "offset,value", one row per step.
inline void write_sweep_csv(const std::string& path, Axis axis, const std::vector<SweepPoint>& curve) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "# axis=" << axis_name(axis) << " unit=" << axis_unit(axis) << "\n";
  out << "offset,value\n";
  char buf[96];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.offset, p.value);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace dmreg

#endif  // DMREG_METRIC_HPP
