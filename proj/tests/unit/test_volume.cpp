#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "dmreg/volume.hpp"
#include "dmreg/volume_io.hpp"
#include "test_util.hpp"

using namespace dmreg;
using dmreg::test::random_volume;

namespace {

Volume constant_volume(Dims d, float value, Vec3 spacing = {1, 1, 1}) { return Volume(Geometry{d, spacing, {}}, value); }

}  // namespace

TEST(Volume, ConstructorValidates) {
  EXPECT_THROW(Volume(Geometry{{0, 2, 2}, {1, 1, 1}, {}}), std::invalid_argument);
  EXPECT_THROW(Volume(Geometry{{2, 2, 2}, {1, 0, 1}, {}}), std::invalid_argument);
  EXPECT_THROW(Volume(Geometry{{2, 2, 2}, {1, 1, 1}, {}}, std::vector<float>(7)), std::invalid_argument);
}

TEST(Volume, PositionFollowsOriginAndSpacing) {
  const Volume v(Geometry{{4, 5, 6}, {0.5, 2.0, 3.0}, {1.0, -2.0, 10.0}});
  const Vec3 p = v.position(2, 3, 4);
  EXPECT_EQ(p, (Vec3{2.0, 4.0, 22.0}));
  EXPECT_EQ(v.index(1, 2, 3), 1u + 4u * (2u + 5u * 3u));
}

TEST(Trilinear, VoxelCenterReturnsVoxel) {
  const Volume v = random_volume({6, 7, 8}, 1, {1.5, 1.0, 0.5}, {3, 4, 5});
  EXPECT_EQ(trilinear_sample(v, v.position(2, 3, 4)), static_cast<double>(v(2, 3, 4)));
}

TEST(Trilinear, MidpointIsAverage) {
  Volume v(Geometry{{2, 1, 1}, {1, 1, 1}, {}});
  v(0, 0, 0) = 0.0f;
  v(1, 0, 0) = 1.0f;
  EXPECT_DOUBLE_EQ(trilinear_sample(v, {0.5, 0, 0}), 0.5);
}

TEST(Trilinear, OutsideIsBackground) {
  const Volume v = constant_volume({5, 5, 5}, 1.0f);
  EXPECT_EQ(trilinear_sample(v, {-10.0, 2.0, 2.0}), 0.0);
  EXPECT_EQ(trilinear_sample(v, {2.0, 2.0, 14.0}), 0.0);
  EXPECT_EQ(trilinear_sample(v, {4.0, 4.0, 4.0}), 1.0);
}

TEST(Trilinear, EmptyVolumeThrows) {
  const Volume v;
  EXPECT_THROW(trilinear_sample(v, {0, 0, 0}), std::invalid_argument);
}

TEST(Trilinear, Continuous) {
  const Volume v = random_volume({8, 8, 8}, 2);
  Rng rng(3);
  std::uniform_real_distribution<double> u(0.0, 7.0);
  for (int n = 0; n < 1000; ++n) {
    const Vec3 p{u(rng), u(rng), u(rng)};
    const Vec3 q = p + Vec3{1e-6, -1e-6, 1e-6};
    EXPECT_LE(std::abs(trilinear_sample(v, p) - trilinear_sample(v, q)), 1e-4);
  }
}

TEST(Gaussian, KernelTruncatedAndNormalized) {
  const auto k = gaussian_kernel(1.0);
  ASSERT_EQ(k.size(), 7u);
  double s = 0.0;
  for (double w : k) s += w;
  EXPECT_NEAR(s, 1.0, 1e-15);
  EXPECT_EQ(gaussian_kernel(1.2).size(), 2u * 4u + 1u);
}

TEST(Gaussian, ConstantPreserved) {
  const Volume v = constant_volume({9, 7, 5}, 0.7f);
  const Volume s = gaussian_smooth(v, 1.7);
  for (float x : s.voxels()) EXPECT_NEAR(x, 0.7f, 1e-6f);
}

TEST(Gaussian, SigmaZeroIsBitIdentical) {
  const Volume v = random_volume({6, 6, 6}, 4);
  EXPECT_EQ(gaussian_smooth(v, 0.0), v);
}

TEST(Gaussian, NegativeSigmaThrows) {
  const Volume v = constant_volume({3, 3, 3}, 1.0f);
  EXPECT_THROW(gaussian_smooth(v, -0.1), std::invalid_argument);
}

TEST(Gaussian, ImpulseCenterIsProductOfKernelCenters) {
  Volume v = constant_volume({15, 15, 15}, 0.0f);
  v(7, 7, 7) = 1.0f;
  // Independent evaluation of the truncated normalized kernel, radius 3.
  double z = 0.0;
  for (int i = -3; i <= 3; ++i) z += std::exp(-0.5 * i * i);
  const double w0 = 1.0 / z;
  const Volume s = gaussian_smooth(v, 1.0);
  EXPECT_NEAR(s(7, 7, 7), w0 * w0 * w0, 1e-7);
  EXPECT_NEAR(w0 * w0 * w0, 0.0635452157, 1e-9);
}

TEST(Gaussian, Linear) {
  const Volume a = random_volume({8, 9, 7}, 5);
  const Volume b = random_volume({8, 9, 7}, 6);
  Volume mix = a;
  for (std::size_t n = 0; n < mix.size(); ++n) mix.voxels()[n] = 2.0f * a.voxels()[n] - 0.5f * b.voxels()[n];
  const Volume sa = gaussian_smooth(a, 1.3), sb = gaussian_smooth(b, 1.3), sm = gaussian_smooth(mix, 1.3);
  for (std::size_t n = 0; n < mix.size(); ++n) {
    const double expect = 2.0 * sa.voxels()[n] - 0.5 * sb.voxels()[n];
    EXPECT_NEAR(sm.voxels()[n], expect, 1e-6 * std::max(1.0, std::abs(expect)));
  }
}

TEST(Gaussian, NeverExpandsRange) {
  const Volume v = random_volume({10, 10, 10}, 7);
  const auto [lo, hi] = std::minmax_element(v.voxels().begin(), v.voxels().end());
  const Volume s = gaussian_smooth(v, 2.0);
  const auto [slo, shi] = std::minmax_element(s.voxels().begin(), s.voxels().end());
  EXPECT_GE(*slo, *lo - 1e-9);
  EXPECT_LE(*shi, *hi + 1e-9);
}

TEST(Downsample, FactorOneIsIdentity) {
  const Volume v = random_volume({5, 6, 7}, 8);
  EXPECT_EQ(downsample(v, 1), v);
}

TEST(Downsample, ConstantHalvesDims) {
  const Volume v = constant_volume({9, 8, 7}, 0.25f, {1.0, 2.0, 0.5});
  const Volume d = downsample(v, 2);
  EXPECT_EQ(d.dims(), (Dims{5, 4, 4}));
  EXPECT_EQ(d.spacing(), (Vec3{2.0, 4.0, 1.0}));
  EXPECT_EQ(d.origin(), v.origin());
  for (float x : d.voxels()) EXPECT_NEAR(x, 0.25f, 1e-7f);
}

TEST(Downsample, CeilDims) {
  const Volume v = constant_volume({17, 17, 17}, 1.0f);
  EXPECT_EQ(downsample(v, 4).dims(), (Dims{5, 5, 5}));
}

TEST(Downsample, InvalidFactorThrows) {
  const Volume v = constant_volume({4, 4, 4}, 1.0f);
  EXPECT_THROW(downsample(v, 0), std::invalid_argument);
}

TEST(Downsample, ComposesWithIdentity) {
  const Volume v = random_volume({12, 11, 10}, 9);
  EXPECT_EQ(downsample(downsample(v, 1), 3), downsample(v, 3));
}

TEST(Downsample, DecimatesSmoothedGridAtPhaseZero) {
  const Volume v = random_volume({10, 10, 10}, 10);
  const Volume s = gaussian_smooth(v, 1.0);
  const Volume d = downsample(v, 2);
  EXPECT_EQ(d(2, 3, 4), s(4, 6, 8));
}

TEST(Normalize, EndpointsMapToUnitRange) {
  Volume v(Geometry{{2, 1, 1}, {1, 1, 1}, {}}, std::vector<float>{2.0f, 4.0f});
  const Volume n = normalize_intensity(v);
  EXPECT_EQ(n.voxels()[0], 0.0f);
  EXPECT_EQ(n.voxels()[1], 1.0f);
}

TEST(Normalize, ConstantBecomesZero) {
  const Volume n = normalize_intensity(constant_volume({3, 3, 3}, 5.0f));
  for (float x : n.voxels()) EXPECT_EQ(x, 0.0f);
}

TEST(Normalize, UnitRangeUnchanged) {
  Volume v = random_volume({4, 4, 4}, 11);
  v.voxels()[0] = 0.0f;
  v.voxels()[1] = 1.0f;
  const Volume n = normalize_intensity(v);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(n.voxels()[i], v.voxels()[i], 1e-7f);
  for (float x : n.voxels()) {
    EXPECT_GE(x, 0.0f);
    EXPECT_LE(x, 1.0f);
  }
}

TEST(GradientMagnitude, ConstantIsZero) {
  const Volume g = gradient_magnitude(constant_volume({5, 5, 5}, 0.3f));
  for (float x : g.voxels()) EXPECT_EQ(x, 0.0f);
}

TEST(GradientMagnitude, RampSlope) {
  Volume v(Geometry{{8, 5, 5}, {0.5, 1.0, 1.0}, {}});
  for (int k = 0; k < 5; ++k)
    for (int j = 0; j < 5; ++j)
      for (int i = 0; i < 8; ++i) v(i, j, k) = static_cast<float>(3.0 * v.position(i, j, k).x);
  const Volume g = gradient_magnitude(v);
  EXPECT_NEAR(g(3, 2, 2), 3.0, 1e-5);
  EXPECT_NEAR(g(0, 2, 2), 3.0, 1e-5);
}

TEST(GradientMagnitude, MatchesTripleLoopReference) {
  const Volume v = random_volume({7, 6, 5}, 12, {1.0, 0.5, 2.0});
  const Volume g = gradient_magnitude(v);
  const Dims d = v.dims();
  for (int k = 0; k < d.nz; ++k)
    for (int j = 0; j < d.ny; ++j)
      for (int i = 0; i < d.nx; ++i) {
        const int idx[3] = {i, j, k};
        double s2 = 0.0;
        for (int a = 0; a < 3; ++a) {
          int lo[3] = {i, j, k}, hi[3] = {i, j, k};
          double h;
          if (idx[a] == 0) {
            hi[a] += 1;
            h = v.spacing()[a];
          } else if (idx[a] == d[a] - 1) {
            lo[a] -= 1;
            h = v.spacing()[a];
          } else {
            lo[a] -= 1;
            hi[a] += 1;
            h = 2.0 * v.spacing()[a];
          }
          const double diff = (static_cast<double>(v(hi[0], hi[1], hi[2])) - v(lo[0], lo[1], lo[2])) / h;
          s2 += diff * diff;
        }
        EXPECT_NEAR(g(i, j, k), std::sqrt(s2), 1e-5) << i << "," << j << "," << k;
      }
}

TEST(GradientMagnitude, SmallDimsThrow) {
  EXPECT_THROW(gradient_magnitude(constant_volume({2, 5, 5}, 1.0f)), std::invalid_argument);
}

TEST(VolumeIo, RoundTripIsBitExact) {
  const std::string dir = dmreg::test::temp_dir("volume_io");
  const Volume v = random_volume({5, 4, 3}, 13, {0.7, 1.1, 2.3}, {-1.5, 0.25, 1e-3});
  const std::string path = dir + "/v.v3d";
  write_volume(path, v);
  const Volume r = read_volume(path);
  EXPECT_EQ(r, v);
  EXPECT_EQ(r.geometry(), v.geometry());
}

TEST(VolumeIo, HeaderIsSixtyFourBytes) {
  EXPECT_EQ(kV3dHeaderBytes, 64u);
  const std::string dir = dmreg::test::temp_dir("volume_header");
  write_volume(dir + "/v.v3d", constant_volume({2, 2, 2}, 1.0f));
  EXPECT_EQ(std::filesystem::file_size(dir + "/v.v3d"), 64u + 8u * 4u);
}

TEST(VolumeIo, CorruptInputsRaiseDistinctErrors) {
  const std::string dir = dmreg::test::temp_dir("volume_corrupt");
  const std::string path = dir + "/v.v3d";
  write_volume(path, random_volume({3, 3, 3}, 14));
  const auto good = dmreg::test::read_bytes(path);

  auto bad = good;
  bad[0] = 'X';
  dmreg::test::write_bytes(path, bad);
  EXPECT_THROW(read_volume(path), BadMagicError);

  bad = good;
  bad[3] = '2';
  dmreg::test::write_bytes(path, bad);
  EXPECT_THROW(read_volume(path), UnsupportedVersionError);

  bad.assign(good.begin(), good.end() - 5);
  dmreg::test::write_bytes(path, bad);
  EXPECT_THROW(read_volume(path), TruncatedFileError);

  bad = good;
  bad.push_back(0);
  dmreg::test::write_bytes(path, bad);
  EXPECT_THROW(read_volume(path), ParseError);

  EXPECT_THROW(read_volume(dir + "/missing.v3d"), IoError);
}
