#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "dmreg/model_io.hpp"
#include "dmreg/network.hpp"
#include "dmreg/sampling.hpp"
#include "test_util.hpp"

using namespace dmreg;

namespace {

PatchPair random_pair(int P, Rng& rng, std::uint8_t z = 1) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  PatchPair p;
  p.u = Patch(P);
  p.v = Patch(P);
  for (float& x : p.u.values) x = u(rng);
  for (float& x : p.v.values) x = u(rng);
  p.z = z;
  return p;
}

ArchDescriptor tiny_arch(int convs) {
  ArchDescriptor a;
  a.in_channels = 2;
  a.patch_size = 5;
  if (convs >= 1) a.convs.push_back({2, 3, 3, 2, 1});
  if (convs >= 2) a.convs.push_back({3, 4, 3, 1, 1});
  a.validate();
  return a;
}

// Biases nudged positive so few ReLUs sit at a kink.
ModelParams<double> tiny_model(int convs, std::uint64_t seed) {
  ModelParams<double> m = init_model<double>(tiny_arch(convs), seed);
  Rng rng(seed + 1);
  std::uniform_real_distribution<double> u(0.05, 0.3);
  for (std::size_t b = 0; b < m.blocks.size(); ++b)
    if (!m.blocks[b].is_weight)
      for (double& x : m.block(b)) x = u(rng);
  return m;
}

// Worst relative error of analytic vs central-difference gradients.
double max_gradient_error(ModelParams<double> model, const std::vector<PatchPair>& batch, double lambda,
                          const std::vector<std::vector<double>>& masks = {}) {
  const auto analytic = model_gradients<double>(model, batch, lambda, masks);
  constexpr double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const double keep = model.data[i];
    model.data[i] = keep + h;
    const double fp = model_gradients<double>(model, batch, lambda, masks).loss;
    model.data[i] = keep - h;
    const double fm = model_gradients<double>(model, batch, lambda, masks).loss;
    model.data[i] = keep;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic.grads[i];
    const double scale = std::max(std::abs(a), std::abs(numeric));
    const double err = scale < 1e-6 ? 0.0 : std::abs(a - numeric) / scale;
    worst = std::max(worst, err);
  }
  return worst;
}

std::vector<PatchPair> tiny_batch(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PatchPair> batch;
  for (int i = 0; i < n; ++i) batch.push_back(random_pair(5, rng, static_cast<std::uint8_t>(i % 2)));
  return batch;
}

}  // namespace

TEST(Architecture, DefaultShapeChain) {
  const ArchDescriptor a = default_architecture();
  EXPECT_EQ(a.spatial_chain(), (std::vector<int>{17, 9, 5, 3, 2}));
  EXPECT_EQ(a.features(), 64);
  const auto blocks = param_layout(a);
  ASSERT_EQ(blocks.size(), 10u);
  EXPECT_EQ(blocks[0].size, 16u * 2u * 125u);
  EXPECT_EQ(blocks[8].size, 2u * 64u);
}

TEST(Architecture, IncompatiblePatchIsShapeError) {
  ArchDescriptor a = default_architecture();
  a.patch_size = 1;
  a.convs[0].pad = 0;
  EXPECT_THROW(a.validate(), ShapeError);
  ArchDescriptor b = default_architecture();
  b.convs[1].in = 8;
  EXPECT_THROW(b.validate(), ShapeError);
}

TEST(Forward, ZeroNetworkIsUninformative) {
  const ModelParams<float> m(default_architecture());
  Rng rng(1);
  const Logits<float> l = model_forward(m, random_pair(17, rng));
  EXPECT_EQ(l.unregistered, 0.0f);
  EXPECT_EQ(l.registered, 0.0f);
  const auto p = softmax(l);
  EXPECT_EQ(p[0], 0.5f);
  EXPECT_EQ(p[1], 0.5f);
}

TEST(Forward, WrongPatchSizeIsShapeError) {
  const ModelParams<float> m = init_model<float>(default_architecture(), 2);
  Rng rng(2);
  EXPECT_THROW(model_forward(m, random_pair(15, rng)), ShapeError);
}

TEST(Forward, PointwiseConvMatchesHandComputation) {
  ArchDescriptor a;
  a.in_channels = 1;
  a.patch_size = 3;
  a.convs = {{1, 1, 1, 1, 0}};
  ModelParams<double> m(a);
  m.block(0)[0] = 2.0;   // conv weight
  m.block(1)[0] = -0.5;  // conv bias
  m.block(2)[0] = 1.5;   // dense w, class 0
  m.block(2)[1] = -1.0;  // dense w, class 1
  m.block(3)[0] = 0.25;
  m.block(3)[1] = 0.75;
  std::vector<double> input(27);
  for (int i = 0; i < 27; ++i) input[i] = 0.1 * i - 0.6;
  double pooled = 0.0;
  for (double x : input) pooled += std::max(0.0, 2.0 * x - 0.5);
  pooled /= 27.0;
  ForwardTrace<double> tr;
  const Logits<double> l = forward_input<double>(m, input, {}, tr);
  EXPECT_NEAR(l.unregistered, 0.25 + 1.5 * pooled, 1e-12);
  EXPECT_NEAR(l.registered, 0.75 - 1.0 * pooled, 1e-12);
}

TEST(Forward, ConvMatchesDirectTripleLoop) {
  ArchDescriptor a;
  a.in_channels = 2;
  a.patch_size = 5;
  a.convs = {{2, 3, 3, 2, 1}};
  const ModelParams<double> m = tiny_model(1, 3);
  Rng rng(4);
  const PatchPair pair = random_pair(5, rng);
  ForwardTrace<double> tr;
  model_forward<double>(m, pair, Mode::eval, nullptr, 0.5, &tr);
  const auto input = stack_channels<double>(pair);
  const auto W = m.conv_weight(0);
  const auto b = m.conv_bias(0);
  const int n = 5, k = 3, s = 2, pad = 1, out_n = 3;
  for (int oc = 0; oc < 3; ++oc)
    for (int oz = 0; oz < out_n; ++oz)
      for (int oy = 0; oy < out_n; ++oy)
        for (int ox = 0; ox < out_n; ++ox) {
          double acc = b[oc];
          for (int ic = 0; ic < 2; ++ic)
            for (int kz = 0; kz < k; ++kz)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const int iz = oz * s - pad + kz, iy = oy * s - pad + ky, ix = ox * s - pad + kx;
                  if (iz < 0 || iy < 0 || ix < 0 || iz >= n || iy >= n || ix >= n) continue;
                  acc += W[(((oc * 2 + ic) * k + kz) * k + ky) * k + kx] * input[ic * 125 + (iz * n + iy) * n + ix];
                }
          const double expect = std::max(0.0, acc);
          EXPECT_NEAR(tr.acts[0](ox + out_n * (oy + out_n * oz), oc), expect, 1e-6);
        }
}

TEST(Forward, EvalModeIsPure) {
  const ModelParams<float> m = init_model<float>(default_architecture(), 5);
  Rng rng(5);
  const PatchPair p = random_pair(17, rng);
  const Logits<float> a = model_forward(m, p);
  const Logits<float> b = model_forward(m, p);
  EXPECT_EQ(a.unregistered, b.unregistered);
  EXPECT_EQ(a.registered, b.registered);
}

TEST(Forward, TrainModeDropoutMask) {
  Rng rng(6);
  const auto mask = draw_dropout_mask<double>(10000, 0.5, rng);
  int zeros = 0;
  for (double x : mask) {
    EXPECT_TRUE(x == 0.0 || x == 2.0);
    zeros += x == 0.0;
  }
  EXPECT_NEAR(zeros / 10000.0, 0.5, 0.02);
  const ModelParams<float> m = init_model<float>(default_architecture(), 6);
  EXPECT_THROW(model_forward(m, random_pair(17, rng), Mode::train), std::invalid_argument);
}

TEST(Forward, PoolInvariantUnderCubeSymmetries) {
  ArchDescriptor a;
  a.patch_size = 7;
  ModelParams<double> m = init_model<double>(a, 7);
  Rng rng(7);
  const PatchPair p = random_pair(7, rng);
  ForwardTrace<double> base;
  model_forward<double>(m, p, Mode::eval, nullptr, 0.5, &base);
  for (int g = 0; g < SymmetryElement::kCount; ++g) {
    ForwardTrace<double> tr;
    model_forward<double>(m, symmetrize_pair(p, SymmetryElement::from_index(g)), Mode::eval, nullptr, 0.5, &tr);
    for (std::size_t c = 0; c < base.pooled.size(); ++c) EXPECT_NEAR(tr.pooled[c], base.pooled[c], 1e-6);
  }
}

TEST(Score, PresoftmaxIsLogRatio) {
  EXPECT_EQ(presoftmax_score(Logits<double>{2.0, 2.0}), 0.0);
  EXPECT_EQ(presoftmax_score(Logits<double>{1.0 + 5.0, 3.0 + 5.0}), presoftmax_score(Logits<double>{1.0, 3.0}));
  Rng rng(8);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int i = 0; i < 100; ++i) {
    const Logits<double> l{g(rng), g(rng)};
    const auto p = softmax(l);
    EXPECT_NEAR(p[0] + p[1], 1.0, 1e-12);
    EXPECT_NEAR(presoftmax_score(l), std::log(p[1] / p[0]), 1e-10);
  }
}

TEST(Gradients, ZeroModelBalancedLossIsLn2) {
  const ModelParams<double> m(tiny_arch(2));
  const auto r = model_gradients<double>(m, tiny_batch(4, 9), 0.0);
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-12);
}

TEST(Gradients, DenseBiasIsMeanResidual) {
  const ModelParams<double> m = tiny_model(2, 10);
  const auto batch = tiny_batch(6, 11);
  const auto r = model_gradients<double>(m, batch, 0.01);
  double g0 = 0.0, g1 = 0.0;
  for (const auto& p : batch) {
    const auto s = softmax(model_forward(m, p));
    g0 += s[0] - (p.z ? 0.0 : 1.0);
    g1 += s[1] - (p.z ? 1.0 : 0.0);
  }
  const auto bias = m.blocks.back();
  EXPECT_NEAR(r.grads[bias.offset], g0 / batch.size(), 1e-12);
  EXPECT_NEAR(r.grads[bias.offset + 1], g1 / batch.size(), 1e-12);
}

TEST(Gradients, PoolDenseSoftmaxMatchFiniteDifferences) {
  EXPECT_LT(max_gradient_error(tiny_model(0, 12), tiny_batch(4, 13), 0.01), 1e-4);
}

TEST(Gradients, SingleConvMatchesFiniteDifferences) {
  EXPECT_LT(max_gradient_error(tiny_model(1, 14), tiny_batch(4, 15), 0.01), 1e-4);
}

TEST(Gradients, TwoConvMatchesFiniteDifferences) {
  EXPECT_LT(max_gradient_error(tiny_model(2, 16), tiny_batch(4, 17), 0.01), 1e-4);
}

TEST(Gradients, DropoutMaskedForwardMatchesFiniteDifferences) {
  const auto model = tiny_model(2, 18);
  Rng rng(19);
  std::vector<std::vector<double>> masks;
  for (int i = 0; i < 4; ++i) masks.push_back(draw_dropout_mask<double>(model.arch.features(), 0.5, rng));
  EXPECT_LT(max_gradient_error(model, tiny_batch(4, 20), 0.01, masks), 1e-4);
}

TEST(Gradients, WeightDecaySkipsBiases) {
  ModelParams<double> m(tiny_arch(1));
  for (double& x : m.data) x = 1.0;
  EXPECT_DOUBLE_EQ(weight_decay_penalty(m, 0.5), 0.25 * (2 * 3 * 27 + 2 * 3));
}

TEST(Gradients, EmptyBatchThrows) {
  const ModelParams<double> m(tiny_arch(1));
  EXPECT_THROW(model_gradients<double>(m, {}, 0.0), std::invalid_argument);
}

TEST(Init, SeededAndFinite) {
  const auto a = init_model<float>(default_architecture(), 21);
  const auto b = init_model<float>(default_architecture(), 21);
  const auto c = init_model<float>(default_architecture(), 22);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == c);
  EXPECT_TRUE(a.all_finite());
  for (float x : a.conv_bias(0)) EXPECT_EQ(x, 0.0f);
}

TEST(ModelIo, RoundTripGivesIdenticalForwards) {
  const auto m = init_model<float>(default_architecture(), 23);
  const std::string dir = test::temp_dir("model_io");
  save_model(dir + "/m.dmr", m);
  const auto r = load_model(dir + "/m.dmr", default_architecture());
  EXPECT_EQ(r, m);
  Rng rng(24);
  for (int i = 0; i < 100; ++i) {
    const PatchPair p = random_pair(17, rng);
    const auto a = model_forward(m, p), b = model_forward(r, p);
    EXPECT_EQ(a.unregistered, b.unregistered);
    EXPECT_EQ(a.registered, b.registered);
  }
}

TEST(ModelIo, CorruptFilesRaiseDistinctErrors) {
  const auto m = init_model<float>(default_architecture(), 25);
  const std::string dir = test::temp_dir("model_corrupt");
  const std::string path = dir + "/m.dmr";
  save_model(path, m);
  const auto good = test::read_bytes(path);

  auto bad = good;
  bad[0] = 'X';
  test::write_bytes(path, bad);
  EXPECT_THROW(load_model(path), BadMagicError);

  bad = good;
  const std::uint32_t v999 = 999;
  std::memcpy(bad.data() + 4, &v999, 4);
  test::write_bytes(path, bad);
  EXPECT_THROW(load_model(path), UnsupportedVersionError);

  bad.assign(good.begin(), good.end() - 10);
  test::write_bytes(path, bad);
  EXPECT_THROW(load_model(path), TruncatedFileError);

  test::write_bytes(path, good);
  EXPECT_THROW(load_model(path, default_architecture(15)), DescriptorMismatchError);

  bad = good;
  const std::uint32_t wrong_in = 7;
  std::memcpy(bad.data() + 24 + 20, &wrong_in, 4);  // second conv "in"
  test::write_bytes(path, bad);
  EXPECT_THROW(load_model(path), DescriptorMismatchError);
}

TEST(Predict, TiesGoToClassZero) {
  const ModelParams<float> m(default_architecture());
  Rng rng(26);
  EXPECT_EQ(predict(m, random_pair(17, rng)), 0);
}
