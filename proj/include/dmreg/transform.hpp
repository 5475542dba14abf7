#ifndef DMREG_TRANSFORM_HPP
#define DMREG_TRANSFORM_HPP

#include <array>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "dmreg/core.hpp"
#include "dmreg/volume.hpp"

namespace dmreg {

/// Rigid transform parameters: x -> R (x - center) + center + t, with
/// R = Rz(rz) Ry(ry) Rx(rx). Translations in mm, rotations in radians.
struct RigidParams {
  Vec3 t;
  Vec3 r;
  Vec3 center;

  static RigidParams identity(Vec3 center = {}) { return {{}, {}, center}; }

  /// Parameter vector [tx ty tz rx ry rz].
  std::array<double, 6> vector() const { return {t.x, t.y, t.z, r.x, r.y, r.z}; }
  static RigidParams from_vector(const std::array<double, 6>& v, Vec3 center) {
    return {{v[0], v[1], v[2]}, {v[3], v[4], v[5]}, center};
  }

  friend bool operator==(const RigidParams&, const RigidParams&) = default;
};

using Mat3 = std::array<std::array<double, 3>, 3>;
using Mat4 = std::array<std::array<double, 4>, 4>;

/// Rotation block plus translation column: y = R x + b.
struct Affine {
  Mat3 R{};
  Vec3 b;

  Vec3 operator()(Vec3 p) const {
    return {R[0][0] * p.x + R[0][1] * p.y + R[0][2] * p.z + b.x,
            R[1][0] * p.x + R[1][1] * p.y + R[1][2] * p.z + b.y,
            R[2][0] * p.x + R[2][1] * p.y + R[2][2] * p.z + b.z};
  }

  Vec3 rotate(Vec3 p) const {
    return {R[0][0] * p.x + R[0][1] * p.y + R[0][2] * p.z, R[1][0] * p.x + R[1][1] * p.y + R[1][2] * p.z,
            R[2][0] * p.x + R[2][1] * p.y + R[2][2] * p.z};
  }
};

inline Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Mat3 transpose(const Mat3& a) {
  Mat3 t{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[i][j] = a[j][i];
  return t;
}

/// Rz(rz) * Ry(ry) * Rx(rx).
inline Mat3 rotation_zyx(Vec3 r) {
  const double cx = std::cos(r.x), sx = std::sin(r.x);
  const double cy = std::cos(r.y), sy = std::sin(r.y);
  const double cz = std::cos(r.z), sz = std::sin(r.z);
  const Mat3 Rx{{{1, 0, 0}, {0, cx, -sx}, {0, sx, cx}}};
  const Mat3 Ry{{{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}}};
  const Mat3 Rz{{{cz, -sz, 0}, {sz, cz, 0}, {0, 0, 1}}};
  return matmul(Rz, matmul(Ry, Rx));
}

/// Inverse of rotation_zyx for |ry| < pi/2.
inline Vec3 euler_zyx(const Mat3& R) {
  const double ry = std::asin(std::clamp(-R[2][0], -1.0, 1.0));
  const double rx = std::atan2(R[2][1], R[2][2]);
  const double rz = std::atan2(R[1][0], R[0][0]);
  return {rx, ry, rz};
}

inline Affine to_affine(const RigidParams& p) {
  Affine a;
  a.R = rotation_zyx(p.r);
  // b = c + t - R c; exact zero for the identity rotation.
  const Vec3 rc = a.rotate(p.center);
  a.b = (p.center + p.t) - rc;
  return a;
}

/// Recovers parameters about `center` from an affine map.
inline RigidParams from_affine(const Affine& a, Vec3 center) {
  RigidParams p;
  p.center = center;
  p.r = euler_zyx(a.R);
  const Mat3 R = rotation_zyx(p.r);
  Affine tmp{R, {}};
  p.t = a.b - center + tmp.rotate(center);
  return p;
}

inline Mat4 rigid_matrix(const RigidParams& p) {
  const Affine a = to_affine(p);
  Mat4 m{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m[i][j] = a.R[i][j];
    m[i][3] = a.b[i];
  }
  m[3][3] = 1.0;
  return m;
}

inline Vec3 apply_point(const RigidParams& p, Vec3 x) { return to_affine(p)(x); }

/// compose(a, b) maps x to a(b(x)). Result is expressed about a's center.
inline RigidParams compose(const RigidParams& a, const RigidParams& b) {
  const Affine A = to_affine(a);
  const Affine B = to_affine(b);
  Affine C;
  C.R = matmul(A.R, B.R);
  C.b = A.rotate(B.b) + A.b;
  return from_affine(C, a.center);
}

inline RigidParams invert(const RigidParams& p) {
  const Affine A = to_affine(p);
  Affine inv;
  inv.R = transpose(A.R);
  inv.b = -1.0 * inv.rotate(A.b);
  return from_affine(inv, p.center);
}

/// Resamples `moving` onto `ref`: output(x) = moving(T(x)).
inline Volume resample_moving(const Volume& moving, const RigidParams& theta, const Geometry& ref) {
  if (moving.empty()) throw std::invalid_argument("resample_moving: empty moving volume");
  const Affine T = to_affine(theta);
  Volume out(ref);
  const Geometry& mg = moving.geometry();
  for (int k = 0; k < ref.dims.nz; ++k)
    for (int j = 0; j < ref.dims.ny; ++j)
      for (int i = 0; i < ref.dims.nx; ++i) {
        const Vec3 q = T(ref.position(i, j, k));
        out(i, j, k) = static_cast<float>(sample_index(moving, mg.to_index(q)));
      }
  return out;
}

/// Random misalignment: |t_axis| ~ U[t_min, t_max] with random sign,
/// r_axis ~ U[-r_max, r_max].
struct MisalignSpec {
  double t_min = 0.0;
  double t_max = 0.0;
  double r_max = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(t_min >= 0.0 && t_min <= t_max)) throw std::invalid_argument("MisalignSpec: need 0 <= t_min <= t_max");
    if (!(r_max >= 0.0)) throw std::invalid_argument("MisalignSpec: need r_max >= 0");
  }
};

inline RigidParams draw_misalignment(const MisalignSpec& spec, Vec3 center, Rng& rng) {
  spec.validate();
  std::uniform_real_distribution<double> mag(spec.t_min, spec.t_max);
  std::uniform_real_distribution<double> rot(-spec.r_max, spec.r_max);
  std::bernoulli_distribution sign(0.5);
  RigidParams p;
  p.center = center;
  for (int a = 0; a < 3; ++a) {
    const double m = mag(rng);
    p.t[a] = sign(rng) ? m : -m;
  }
  for (int a = 0; a < 3; ++a) p.r[a] = rot(rng);
  return p;
}

/// Estimated minus true parameters, with rotations in degrees.
struct ErrorRecord {
  Vec3 dt;
  double norm_t = 0.0;
  Vec3 dr_deg;
};

inline ErrorRecord transform_error(const RigidParams& truth, const RigidParams& estimate) {
  if (norm(truth.center - estimate.center) > 1e-9) {
    throw std::invalid_argument("transform_error: rotation centers differ");
  }
  ErrorRecord e;
  e.dt = estimate.t - truth.t;
  e.norm_t = norm(e.dt);
  e.dr_deg = kRadToDeg * (estimate.r - truth.r);
  return e;
}

// Text form: "tx ty tz rx ry rz cx cy cz 1", round-trip exact.
inline constexpr int kParamsTextVersion = 1;

inline std::string format_params(const RigidParams& p) {
  const double v[9] = {p.t.x, p.t.y, p.t.z, p.r.x, p.r.y, p.r.z, p.center.x, p.center.y, p.center.z};
  std::string out;
  char buf[32];
  for (double x : v) {
    std::snprintf(buf, sizeof buf, "%.17g ", x);
    out += buf;
  }
  out += std::to_string(kParamsTextVersion);
  return out;
}

inline RigidParams parse_params(const std::string& text) {
  std::istringstream in(text);
  double v[9];
  for (double& x : v) {
    if (!(in >> x)) throw ParseError("rigid params: expected 10 numbers in '" + text + "'");
  }
  int version = 0;
  if (!(in >> version)) throw ParseError("rigid params: missing version tag in '" + text + "'");
  if (version != kParamsTextVersion) throw UnsupportedVersionError("rigid params: unsupported version tag");
  std::string rest;
  if (in >> rest) throw ParseError("rigid params: trailing text in '" + text + "'");
  return {{v[0], v[1], v[2]}, {v[3], v[4], v[5]}, {v[6], v[7], v[8]}};
}

}  // namespace dmreg

#endif  // DMREG_TRANSFORM_HPP
