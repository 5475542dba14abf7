#ifndef DMREG_NETWORK_HPP
#define DMREG_NETWORK_HPP

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmreg/core.hpp"
#include "dmreg/sampling.hpp"

namespace dmreg {

/// Cubic 3D convolution followed by ReLU.
struct ConvSpec {
  int in = 0;
  int out = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;

  int output_size(int n) const { return (n + 2 * pad - kernel) / stride + 1; }
  std::size_t weight_count() const { return static_cast<std::size_t>(out) * in * kernel * kernel * kernel; }
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// conv+ReLU stack -> global average pool -> dropout -> dense(2) -> softmax.
struct ArchDescriptor {
  int in_channels = 2;
  int patch_size = 17;
  std::vector<ConvSpec> convs;
  int classes = 2;

  int features() const { return convs.empty() ? in_channels : convs.back().out; }

  /// Spatial size entering each conv layer, plus the final map size.
  std::vector<int> spatial_chain() const {
    std::vector<int> chain{patch_size};
    int n = patch_size;
    int channels = in_channels;
    for (const auto& c : convs) {
      if (c.in != channels) throw ShapeError("conv input channels do not chain");
      if (c.kernel < 1 || c.stride < 1 || c.pad < 0 || c.out < 1) throw ShapeError("invalid conv spec");
      if (n + 2 * c.pad < c.kernel) throw ShapeError("patch too small for the conv stack");
      n = c.output_size(n);
      if (n < 1) throw ShapeError("patch too small for the conv stack");
      chain.push_back(n);
      channels = c.out;
    }
    return chain;
  }

  void validate() const {
    if (in_channels < 1 || patch_size < 1) throw ShapeError("invalid input shape");
    if (classes != 2) throw ShapeError("only two-class models are supported");
    spatial_chain();
  }

  friend bool operator==(const ArchDescriptor&, const ArchDescriptor&) = default;
};

/// Conv(2->16,k5,s2,p2) Conv(16->32,k3,s2,p1) Conv(32->32,k3,s2,p1) Conv(32->64,k3,s2,p1).
inline ArchDescriptor default_architecture(int patch_size = 17) {
  ArchDescriptor a;
  a.in_channels = 2;
  a.patch_size = patch_size;
  a.convs = {{2, 16, 5, 2, 2}, {16, 32, 3, 2, 1}, {32, 32, 3, 2, 1}, {32, 64, 3, 2, 1}};
  a.classes = 2;
  a.validate();
  return a;
}

/// Location of one weight or bias tensor inside the flat parameter vector.
struct ParamBlock {
  std::size_t offset = 0;
  std::size_t size = 0;
  bool is_weight = false;
  friend bool operator==(const ParamBlock&, const ParamBlock&) = default;
};

/// Flat parameter layout: per conv (W[out][in][kz][ky][kx], b[out]), then dense (W[2][C], b[2]).
inline std::vector<ParamBlock> param_layout(const ArchDescriptor& arch) {
  std::vector<ParamBlock> blocks;
  std::size_t off = 0;
  auto add = [&](std::size_t n, bool w) {
    blocks.push_back({off, n, w});
    off += n;
  };
  for (const auto& c : arch.convs) {
    add(c.weight_count(), true);
    add(static_cast<std::size_t>(c.out), false);
  }
  add(static_cast<std::size_t>(arch.classes) * arch.features(), true);
  add(static_cast<std::size_t>(arch.classes), false);
  return blocks;
}

template <typename T>
struct ModelParams {
  ArchDescriptor arch;
  std::vector<T> data;
  std::vector<ParamBlock> blocks;

  ModelParams() = default;
  explicit ModelParams(ArchDescriptor a) : arch(std::move(a)) {
    arch.validate();
    blocks = param_layout(arch);
    data.assign(blocks.back().offset + blocks.back().size, T(0));
  }

  std::size_t size() const { return data.size(); }
  std::span<T> block(std::size_t i) { return {data.data() + blocks[i].offset, blocks[i].size}; }
  std::span<const T> block(std::size_t i) const { return {data.data() + blocks[i].offset, blocks[i].size}; }

  std::span<const T> conv_weight(std::size_t l) const { return block(2 * l); }
  std::span<const T> conv_bias(std::size_t l) const { return block(2 * l + 1); }
  std::span<const T> dense_weight() const { return block(2 * arch.convs.size()); }
  std::span<const T> dense_bias() const { return block(2 * arch.convs.size() + 1); }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> m(arch);
    for (std::size_t i = 0; i < data.size(); ++i) m.data[i] = static_cast<U>(data[i]);
    return m;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// He-style fan-in Gaussian weights, zero biases.
template <typename T>
ModelParams<T> init_model(const ArchDescriptor& arch, std::uint64_t seed) {
  ModelParams<T> m(arch);
  Rng rng(seed);
  for (std::size_t l = 0; l < arch.convs.size(); ++l) {
    const auto& c = arch.convs[l];
    const double fan_in = static_cast<double>(c.in) * c.kernel * c.kernel * c.kernel;
    std::normal_distribution<double> g(0.0, std::sqrt(2.0 / fan_in));
    for (T& w : m.block(2 * l)) w = static_cast<T>(g(rng));
  }
  std::normal_distribution<double> g(0.0, std::sqrt(1.0 / arch.features()));
  for (T& w : m.block(2 * arch.convs.size())) w = static_cast<T>(g(rng));
  return m;
}

/// Pre-softmax activations for (unregistered, registered).
template <typename T>
struct Logits {
  T unregistered = 0;
  T registered = 0;
};

/// Registered-vs-unregistered log-likelihood ratio.
template <typename T>
T presoftmax_score(const Logits<T>& l) {
  return l.registered - l.unregistered;
}

template <typename T>
std::array<T, 2> softmax(const Logits<T>& l) {
  const T mx = std::max(l.unregistered, l.registered);
  const T e0 = std::exp(l.unregistered - mx);
  const T e1 = std::exp(l.registered - mx);
  const T s = e0 + e1;
  return {e0 / s, e1 / s};
}

enum class Mode { eval, train };

/// Per-feature dropout multipliers (0 or 1/(1-rate)) applied after pooling.
template <typename T>
std::vector<T> draw_dropout_mask(int features, double rate, Rng& rng) {
  std::vector<T> mask(features, T(1));
  if (rate <= 0.0) return mask;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (T& m : mask) m = u(rng) < rate ? T(0) : keep_scale;
  return mask;
}

/// Forward activations retained for backpropagation.
template <typename T>
struct ForwardTrace {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  std::vector<Mat> cols;  ///< im2col of each layer input: (out voxels) x (in * k^3)
  std::vector<Mat> acts;  ///< post-ReLU output of each layer: (out voxels) x channels
  std::vector<T> pooled;
  std::vector<T> dropped;
  std::vector<T> mask;
  Logits<T> logits;
};

namespace detail {

// Column q = (ic, kz, ky, kx) of `cols` holds the input value seen by each output voxel.
template <typename T, typename Mat>
void im2col(const T* input, int n, int channels, const ConvSpec& c, int m, Mat& cols) {
  const int k = c.kernel;
  const std::size_t n3 = static_cast<std::size_t>(n) * n * n;
  const Eigen::Index M = static_cast<Eigen::Index>(m) * m * m;
  cols.resize(M, static_cast<Eigen::Index>(channels) * k * k * k);
  for (int ic = 0; ic < channels; ++ic) {
    const T* src = input + ic * n3;
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const Eigen::Index q = ((static_cast<Eigen::Index>(ic) * k + kz) * k + ky) * k + kx;
          T* dst = cols.col(q).data();
          for (int oz = 0; oz < m; ++oz) {
            const int iz = oz * c.stride + kz - c.pad;
            for (int oy = 0; oy < m; ++oy) {
              const int iy = oy * c.stride + ky - c.pad;
              T* row = dst + (static_cast<std::size_t>(oz) * m + oy) * m;
              if (iz < 0 || iz >= n || iy < 0 || iy >= n) {
                std::fill(row, row + m, T(0));
                continue;
              }
              const T* line = src + (static_cast<std::size_t>(iz) * n + iy) * n;
              for (int ox = 0; ox < m; ++ox) {
                const int ix = ox * c.stride + kx - c.pad;
                row[ox] = (ix >= 0 && ix < n) ? line[ix] : T(0);
              }
            }
          }
        }
  }
}

template <typename T, typename Mat>
void col2im_add(const Mat& dcols, int n, int channels, const ConvSpec& c, int m, T* dinput) {
  const int k = c.kernel;
  const std::size_t n3 = static_cast<std::size_t>(n) * n * n;
  for (int ic = 0; ic < channels; ++ic) {
    T* dst = dinput + ic * n3;
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const Eigen::Index q = ((static_cast<Eigen::Index>(ic) * k + kz) * k + ky) * k + kx;
          const T* src = dcols.col(q).data();
          for (int oz = 0; oz < m; ++oz) {
            const int iz = oz * c.stride + kz - c.pad;
            if (iz < 0 || iz >= n) continue;
            for (int oy = 0; oy < m; ++oy) {
              const int iy = oy * c.stride + ky - c.pad;
              if (iy < 0 || iy >= n) continue;
              const T* row = src + (static_cast<std::size_t>(oz) * m + oy) * m;
              T* line = dst + (static_cast<std::size_t>(iz) * n + iy) * n;
              for (int ox = 0; ox < m; ++ox) {
                const int ix = ox * c.stride + kx - c.pad;
                if (ix >= 0 && ix < n) line[ix] += row[ox];
              }
            }
          }
        }
  }
}

}  // namespace detail

/// Forward pass on a channel-major input (channel c occupies [c*P^3, (c+1)*P^3)).
/// `mask` empty means no dropout.
template <typename T>
Logits<T> forward_input(const ModelParams<T>& model, std::span<const T> input, std::span<const T> mask,
                        ForwardTrace<T>& trace) {
  using Mat = typename ForwardTrace<T>::Mat;
  const ArchDescriptor& arch = model.arch;
  const std::size_t p3 = static_cast<std::size_t>(arch.patch_size) * arch.patch_size * arch.patch_size;
  if (input.size() != p3 * arch.in_channels) throw ShapeError("input does not match the model's patch shape");
  const std::vector<int> chain = arch.spatial_chain();
  const std::size_t L = arch.convs.size();
  trace.cols.resize(L);
  trace.acts.resize(L);
  const T* in = input.data();
  for (std::size_t l = 0; l < L; ++l) {
    const ConvSpec& c = arch.convs[l];
    const int n = chain[l];
    const int m = chain[l + 1];
    detail::im2col(in, n, c.in, c, m, trace.cols[l]);
    const Eigen::Index cink = static_cast<Eigen::Index>(c.in) * c.kernel * c.kernel * c.kernel;
    Eigen::Map<const Mat> Wt(model.conv_weight(l).data(), cink, c.out);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(model.conv_bias(l).data(), c.out);
    Mat& a = trace.acts[l];
    a.noalias() = trace.cols[l] * Wt;
    a.rowwise() += b;
    a = a.cwiseMax(T(0));
    in = a.data();
  }
  const int C = arch.features();
  trace.pooled.assign(C, T(0));
  if (L == 0) {
    for (int ch = 0; ch < C; ++ch) {
      T s = 0;
      for (std::size_t i = 0; i < p3; ++i) s += input[ch * p3 + i];
      trace.pooled[ch] = s / static_cast<T>(p3);
    }
  } else {
    const Mat& last = trace.acts.back();
    for (int ch = 0; ch < C; ++ch) trace.pooled[ch] = last.col(ch).mean();
  }
  trace.mask.assign(mask.begin(), mask.end());
  trace.dropped = trace.pooled;
  if (!mask.empty()) {
    if (mask.size() != static_cast<std::size_t>(C)) throw ShapeError("dropout mask size mismatch");
    for (int ch = 0; ch < C; ++ch) trace.dropped[ch] *= mask[ch];
  }
  const auto Wd = model.dense_weight();
  const auto bd = model.dense_bias();
  T l0 = bd[0], l1 = bd[1];
  for (int ch = 0; ch < C; ++ch) {
    l0 += Wd[ch] * trace.dropped[ch];
    l1 += Wd[C + ch] * trace.dropped[ch];
  }
  trace.logits = {l0, l1};
  return trace.logits;
}

/// Stacks the fixed and moving patches as the two input channels.
template <typename T>
std::vector<T> stack_channels(const PatchPair& pair) {
  std::vector<T> input;
  input.reserve(pair.u.values.size() + pair.v.values.size());
  for (float x : pair.u.values) input.push_back(static_cast<T>(x));
  for (float x : pair.v.values) input.push_back(static_cast<T>(x));
  return input;
}

/// Forward on a patch pair. In train mode a dropout mask is drawn from `rng`.
template <typename T>
Logits<T> model_forward(const ModelParams<T>& model, const PatchPair& pair, Mode mode = Mode::eval,
                        Rng* rng = nullptr, double dropout = 0.5, ForwardTrace<T>* trace = nullptr) {
  if (model.arch.in_channels != 2) throw ShapeError("patch pairs need a two-channel model");
  if (pair.u.size != model.arch.patch_size || pair.v.size != model.arch.patch_size) {
    throw ShapeError("patch size does not match the model");
  }
  ForwardTrace<T> local;
  ForwardTrace<T>& tr = trace ? *trace : local;
  std::vector<T> mask;
  if (mode == Mode::train) {
    if (!rng) throw std::invalid_argument("train-mode forward needs an rng");
    mask = draw_dropout_mask<T>(model.arch.features(), dropout, *rng);
  }
  const std::vector<T> input = stack_channels<T>(pair);
  return forward_input<T>(model, input, mask, tr);
}

/// Adds d(loss)/d(params) for one traced sample, given d(loss)/d(logits).
template <typename T>
void backward(const ModelParams<T>& model, const ForwardTrace<T>& trace, T d_unregistered, T d_registered,
              std::span<T> grads) {
  using Mat = typename ForwardTrace<T>::Mat;
  const ArchDescriptor& arch = model.arch;
  const std::size_t L = arch.convs.size();
  const int C = arch.features();
  const auto Wd = model.dense_weight();
  T* gWd = grads.data() + model.blocks[2 * L].offset;
  T* gbd = grads.data() + model.blocks[2 * L + 1].offset;
  gbd[0] += d_unregistered;
  gbd[1] += d_registered;
  std::vector<T> dpooled(C);
  for (int ch = 0; ch < C; ++ch) {
    gWd[ch] += d_unregistered * trace.dropped[ch];
    gWd[C + ch] += d_registered * trace.dropped[ch];
    T dh = Wd[ch] * d_unregistered + Wd[C + ch] * d_registered;
    if (!trace.mask.empty()) dh *= trace.mask[ch];
    dpooled[ch] = dh;
  }
  if (L == 0) return;
  const std::vector<int> chain = arch.spatial_chain();
  Mat dact(trace.acts.back().rows(), C);
  const T inv_n = T(1) / static_cast<T>(trace.acts.back().rows());
  for (int ch = 0; ch < C; ++ch) dact.col(ch).setConstant(dpooled[ch] * inv_n);
  Mat dcols;
  for (std::size_t li = L; li-- > 0;) {
    const ConvSpec& c = arch.convs[li];
    const Mat& a = trace.acts[li];
    dact = dact.cwiseProduct((a.array() > T(0)).template cast<T>().matrix());
    const Eigen::Index cink = static_cast<Eigen::Index>(c.in) * c.kernel * c.kernel * c.kernel;
    Eigen::Map<Mat> gWt(grads.data() + model.blocks[2 * li].offset, cink, c.out);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(grads.data() + model.blocks[2 * li + 1].offset, c.out);
    gWt.noalias() += trace.cols[li].transpose() * dact;
    gb += dact.colwise().sum().transpose();
    if (li == 0) break;
    Eigen::Map<const Mat> Wt(model.conv_weight(li).data(), cink, c.out);
    dcols.noalias() = dact * Wt.transpose();
    const int n = chain[li];
    Mat dprev = Mat::Zero(static_cast<Eigen::Index>(n) * n * n, c.in);
    detail::col2im_add(dcols, n, c.in, c, chain[li + 1], dprev.data());
    dact.swap(dprev);
  }
}

/// (lambda/2) * sum of squared weights (biases excluded).
template <typename T>
T weight_decay_penalty(const ModelParams<T>& model, T lambda) {
  T s = 0;
  for (const auto& b : model.blocks) {
    if (!b.is_weight) continue;
    for (std::size_t i = 0; i < b.size; ++i) s += model.data[b.offset + i] * model.data[b.offset + i];
  }
  return T(0.5) * lambda * s;
}

template <typename T>
void add_weight_decay_gradient(const ModelParams<T>& model, T lambda, std::span<T> grads) {
  for (const auto& b : model.blocks) {
    if (!b.is_weight) continue;
    for (std::size_t i = 0; i < b.size; ++i) grads[b.offset + i] += lambda * model.data[b.offset + i];
  }
}

template <typename T>
struct GradientResult {
  T loss = 0;
  std::vector<T> grads;
};

/// Mean cross-entropy over the batch plus L2 weight decay, and its exact
/// gradient. `masks` holds one dropout mask per sample, or is empty for
/// eval-mode (no dropout) forwards.
template <typename T>
GradientResult<T> model_gradients(const ModelParams<T>& model, std::span<const PatchPair> batch, T lambda,
                                  std::span<const std::vector<T>> masks = {}) {
  if (batch.empty()) throw std::invalid_argument("model_gradients: empty batch");
  if (!masks.empty() && masks.size() != batch.size()) throw std::invalid_argument("model_gradients: mask count");
  GradientResult<T> r;
  r.grads.assign(model.size(), T(0));
  const T inv_b = T(1) / static_cast<T>(batch.size());
  ForwardTrace<T> trace;
  T loss = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const PatchPair& pair = batch[s];
    if (pair.u.size != model.arch.patch_size || pair.v.size != model.arch.patch_size) {
      throw ShapeError("patch size does not match the model");
    }
    const std::vector<T> input = stack_channels<T>(pair);
    std::span<const T> mask = masks.empty() ? std::span<const T>{} : std::span<const T>(masks[s]);
    const Logits<T> lg = forward_input<T>(model, input, mask, trace);
    const auto p = softmax(lg);
    const T mx = std::max(lg.unregistered, lg.registered);
    const T lse = mx + std::log(std::exp(lg.unregistered - mx) + std::exp(lg.registered - mx));
    loss += lse - (pair.z ? lg.registered : lg.unregistered);
    const T d0 = (p[0] - (pair.z ? T(0) : T(1))) * inv_b;
    const T d1 = (p[1] - (pair.z ? T(1) : T(0))) * inv_b;
    backward<T>(model, trace, d0, d1, r.grads);
  }
  r.loss = loss * inv_b + weight_decay_penalty(model, lambda);
  add_weight_decay_gradient<T>(model, lambda, r.grads);
  return r;
}

/// Argmax class in eval mode; exact ties go to class 0.
template <typename T>
int predict(const ModelParams<T>& model, const PatchPair& pair) {
  const Logits<T> l = model_forward(model, pair);
  return l.registered > l.unregistered ? 1 : 0;
}

}  // namespace dmreg

#endif  // DMREG_NETWORK_HPP
