#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "dmreg/metric.hpp"
#include "dmreg/synthdata.hpp"
#include "test_util.hpp"

using namespace dmreg;

namespace {

Volume phantom(std::uint64_t seed, int n = 32) {
  PhantomSpec spec;
  spec.dims = {n, n, n};
  spec.seed = seed;
  return generate_phantom(spec);
}

std::shared_ptr<const ModelParams<float>> random_model(std::uint64_t seed, int P = 9) {
  return std::make_shared<const ModelParams<float>>(init_model<float>(default_architecture(P), seed));
}

}  // namespace

TEST(DeepMetric, SingleCenterIsPatchScore) {
  const Volume f = phantom(1);
  const Volume m = derive_modality(f, ModalityKind::remap, 2);
  const auto model = random_model(3);
  const Vec3 c = f.position(15, 14, 16);
  PatchPair pair;
  pair.u = extract_patch(f, c, 9);
  pair.v = extract_patch(m, c, 9);
  const double expect = presoftmax_score(model_forward<float>(*model, pair));
  const std::vector<Vec3> centers{c};
  const double F = deep_metric(*model, centers, f, m, RigidParams::identity(f.geometry().center()));
  EXPECT_NEAR(F, expect, 1e-5 * std::max(1.0, std::abs(expect)));
}

TEST(DeepMetric, AdditiveOverCenters) {
  const Volume f = phantom(4);
  const Volume m = derive_modality(f, ModalityKind::gm, 5);
  const auto model = random_model(6);
  const auto a = sample_patch_centers(f, 10, 9, 0.05, 7);
  const auto b = sample_patch_centers(f, 7, 9, 0.05, 8);
  std::vector<Vec3> ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  const RigidParams theta{{1.2, -0.7, 0.4}, {0.02, -0.03, 0.05}, f.geometry().center()};
  const double fa = deep_metric(*model, a, f, m, theta);
  const double fb = deep_metric(*model, b, f, m, theta);
  const double fab = deep_metric(*model, ab, f, m, theta);
  EXPECT_NEAR(fab, fa + fb, 1e-9 * std::max(1.0, std::abs(fab)));
}

TEST(DeepMetric, OneChannelModelRejected) {
  const Volume f = phantom(9);
  ArchDescriptor arch = default_architecture(9);
  arch.in_channels = 1;
  arch.convs[0].in = 1;
  const ModelParams<float> model(arch);
  const std::vector<Vec3> centers{f.geometry().center()};
  EXPECT_THROW(deep_metric(model, centers, f, f, RigidParams::identity()), ShapeError);
}

TEST(PatchCenters, DefaultCountDeterministicInteriorAnatomy) {
  const Volume f = phantom(10);
  const auto model = random_model(11);
  const MetricContext ctx = MetricContext::make_deep(model, f);
  EXPECT_EQ(ctx.centers().size(), 64u);
  EXPECT_EQ(ctx.kind(), MetricKind::deep);
  const auto again = sample_patch_centers(f, 64, 9, 0.05, 0);
  ASSERT_EQ(again.size(), 64u);
  for (std::size_t i = 0; i < again.size(); ++i) EXPECT_EQ(ctx.centers()[i], again[i]);
  for (const Vec3& c : again) {
    const Patch p = extract_patch(f, c, 9);
    double mean = 0.0;
    for (float v : p.values) mean += v;
    EXPECT_GT(mean / p.values.size(), 0.05);
  }
  EXPECT_NE(sample_patch_centers(f, 64, 9, 0.05, 1), again);
  EXPECT_THROW(sample_patch_centers(f, 0, 9, 0.05, 0), std::invalid_argument);
  EXPECT_THROW(MetricContext::make_deep(nullptr, f), std::invalid_argument);
  EXPECT_THROW(MetricContext::make_deep(model, std::vector<Vec3>{}), std::invalid_argument);
}

TEST(Nmi, SelfPairIsTwo) {
  const Volume f = phantom(12);
  EXPECT_NEAR(nmi(f, f, RigidParams::identity(f.geometry().center())), 2.0, 1e-9);
}

TEST(Nmi, IndependentNoiseNearOne) {
  const Volume a = test::random_volume({32, 32, 32}, 13);
  const Volume b = test::random_volume({32, 32, 32}, 14);
  const double v = nmi(a, b, RigidParams::identity());
  EXPECT_GE(v, 1.0);
  EXPECT_LE(v, 1.05);
}

TEST(Nmi, ConstantVolumeScoresOne) {
  const Volume c(Geometry{{16, 16, 16}, {1, 1, 1}, {}}, 0.4f);
  const Volume r = test::random_volume({16, 16, 16}, 15);
  EXPECT_EQ(nmi(c, c, RigidParams::identity()), 1.0);
  EXPECT_NEAR(nmi(c, r, RigidParams::identity()), 1.0, 1e-12);
}

TEST(Nmi, BoundedByOneAndTwo) {
  const Volume f = phantom(16);
  const Volume m = derive_modality(f, ModalityKind::remap, 17);
  Rng rng(18);
  std::uniform_real_distribution<double> t(-6, 6), r(-0.2, 0.2);
  for (int n = 0; n < 20; ++n) {
    const RigidParams p{{t(rng), t(rng), t(rng)}, {r(rng), r(rng), r(rng)}, f.geometry().center()};
    const double v = nmi(f, m, p);
    EXPECT_GE(v, 1.0 - 1e-12);
    EXPECT_LE(v, 2.0 + 1e-12);
  }
}

TEST(Nmi, TinyOverlapScoresZero) {
  const Volume f = phantom(19);
  EXPECT_EQ(nmi(f, f, {{30.5, 30.5, 0}, {}, {}}), 0.0);
  EXPECT_EQ(nmi(f, f, {{100, 0, 0}, {}, {}}), 0.0);
  EXPECT_GT(nmi(f, f, {{30.5, 0, 0}, {}, {}}), 0.0);
  EXPECT_THROW(nmi(f, f, RigidParams::identity(), 1), std::invalid_argument);
}

TEST(Sweep, OffsetsAndAxis) {
  const RigidParams base{{1, 2, 3}, {0.1, 0.2, 0.3}, {5, 5, 5}};
  std::vector<RigidParams> seen;
  const auto curve = response_sweep(
      [&](const RigidParams& p) {
        seen.push_back(p);
        return 0.0;
      },
      base, Axis::ry, -2, 2, 5);
  ASSERT_EQ(curve.size(), 5u);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(curve[i].offset, -2.0 + i);
    EXPECT_EQ(seen[i].t, base.t);
    EXPECT_EQ(seen[i].r.x, base.r.x);
    EXPECT_EQ(seen[i].r.z, base.r.z);
    EXPECT_DOUBLE_EQ(seen[i].r.y, base.r.y + curve[i].offset);
    EXPECT_EQ(seen[i].center, base.center);
  }
  EXPECT_THROW(response_sweep([](const RigidParams&) { return 0.0; }, base, Axis::tx, 0, 1, 1),
               std::invalid_argument);
}

TEST(Sweep, SymmetricResponseGivesSymmetricCurve) {
  const RigidParams base = RigidParams::identity();
  const auto curve =
      response_sweep([](const RigidParams& p) { return -p.t.z * p.t.z; }, base, Axis::tz, -10, 10, 21);
  for (int i = 0; i < 21; ++i) EXPECT_EQ(curve[i].value, curve[20 - i].value);
  EXPECT_EQ(curve[10].value, 0.0);
}

TEST(Sweep, NmiPeaksAtAlignment) {
  const Volume f = phantom(20);
  const Volume m = derive_modality(f, ModalityKind::remap, 21);
  const MetricContext ctx = MetricContext::make_nmi();
  const auto curve = response_sweep(ctx, f, m, RigidParams::identity(f.geometry().center()), Axis::tx, -4, 4, 9);
  const auto best = std::max_element(curve.begin(), curve.end(),
                                     [](const SweepPoint& a, const SweepPoint& b) { return a.value < b.value; });
  EXPECT_EQ(best->offset, 0.0);
}

TEST(Sweep, CsvFormat) {
  const std::string dir = test::temp_dir("sweep");
  write_sweep_csv(dir + "/s.csv", Axis::rz, {{-0.5, 1.25}, {0.5, 2.0}});
  const auto bytes = test::read_bytes(dir + "/s.csv");
  EXPECT_EQ(std::string(bytes.begin(), bytes.end()), "# axis=rz unit=rad\noffset,value\n-0.5,1.25\n0.5,2\n");
  EXPECT_EQ(parse_axis("ty"), Axis::ty);
  EXPECT_THROW(parse_axis("tw"), std::invalid_argument);
}
