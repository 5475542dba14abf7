#ifndef DMREG_REGISTRATION_HPP
#define DMREG_REGISTRATION_HPP

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "dmreg/metric.hpp"
#include "dmreg/powell.hpp"
#include "dmreg/transform.hpp"
#include "dmreg/volume.hpp"

namespace dmreg {

/// Default Powell settings for rigid parameters: 1 mm per unit step for
/// translations, 0.01 rad for rotations.
inline PowellConfig rigid_powell_config() {
  PowellConfig cfg;
  cfg.scales = {1.0, 1.0, 1.0, 0.01, 0.01, 0.01};
  return cfg;
}

struct RegistrationResult {
  RigidParams theta;
  double initial_value = 0.0;
  double final_value = 0.0;
  PowellStatus status = PowellStatus::max_iters;
  int evaluations = 0;
};

/// Maximizes the metric over the six rigid parameters starting at theta0;
/// the rotation center stays theta0.center.
inline RegistrationResult register_pair(const Volume& fixed, const Volume& moving, const MetricContext& ctx,
                                        const RigidParams& theta0, const PowellConfig& cfg = rigid_powell_config()) {
  const Vec3 center = theta0.center;
  auto to_params = [&](std::span<const double> x) {
    std::array<double, 6> v{};
    for (int i = 0; i < 6; ++i) v[i] = x[i];
    return RigidParams::from_vector(v, center);
  };
  const Objective objective = [&](std::span<const double> x) { return -ctx.evaluate(fixed, moving, to_params(x)); };
  const auto start = theta0.vector();
  const PowellResult pr = powell_minimize(objective, start, cfg);
  RegistrationResult r;
  r.initial_value = -pr.trace.front();
  r.status = pr.status;
  r.evaluations = pr.evaluations;
  if (pr.f <= pr.trace.front()) {
    r.theta = to_params(pr.x);
    r.final_value = -pr.f;
  } else {
    r.theta = theta0;
    r.final_value = r.initial_value;
  }
  return r;
}

}  // namespace dmreg

#endif  // DMREG_REGISTRATION_HPP
