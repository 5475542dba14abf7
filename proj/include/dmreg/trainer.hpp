#ifndef DMREG_TRAINER_HPP
#define DMREG_TRAINER_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmreg/network.hpp"
#include "dmreg/sampling.hpp"

namespace dmreg {

struct TrainConfig {
  double lr0 = 0.01;
  double lr_decay = 0.8;  ///< multiplicative, applied after each epoch
  double dropout = 0.5;
  double weight_decay = 0.01;
  int batch_size = 32;
  int epochs = 10;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr0 > 0.0)) throw std::invalid_argument("TrainConfig: lr0 must be > 0");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("TrainConfig: lr_decay must be in (0,1]");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("TrainConfig: dropout must be in [0,1)");
  }

  /// Learning rate used during epoch k (0-based).
  double learning_rate(int epoch) const { return lr0 * std::pow(lr_decay, epoch); }
};

template <typename T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  std::int64_t t = 0;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, T(0)), v(n, T(0)) {}
};

/// Bias-corrected Adam update in place.
template <typename T>
void adam_step(ModelParams<T>& model, std::span<const T> grads, AdamState<T>& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8) {
  const std::size_t n = model.data.size();
  if (grads.size() != n || state.m.size() != n || state.v.size() != n) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
  for (std::size_t i = 0; i < n; ++i) {
    const T g = grads[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    model.data[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
  }
}

/// Fraction of pairs whose eval-mode argmax equals the label.
template <typename T>
double validate_accuracy(const ModelParams<T>& model, std::span<const PatchPair> val) {
  if (val.empty()) throw std::invalid_argument("validate_accuracy: empty set");
  std::size_t correct = 0;
  ForwardTrace<T> trace;
  for (const auto& pair : val) {
    const Logits<T> l = model_forward<T>(model, pair, Mode::eval, nullptr, 0.0, &trace);
    const int pred = l.registered > l.unregistered ? 1 : 0;
    if (pred == pair.z) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(val.size());
}

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  ModelParams<float> best;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

namespace detail {
inline constexpr std::uint64_t kStreamInit = 0x21;
inline constexpr std::uint64_t kStreamEpochShuffle = 0x22;
inline constexpr std::uint64_t kStreamDropout = 0x23;
}  // namespace detail

/// Adam training with geometric learning-rate decay; keeps the epoch with the
/// best validation accuracy (earliest on ties).
inline TrainResult train(std::span<const PatchPair> dataset, std::span<const PatchPair> val_set, const TrainConfig& cfg,
                         std::optional<ModelParams<float>> initial = {}, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (dataset.empty() || val_set.empty()) throw std::invalid_argument("train: empty training or validation set");
  const int P = dataset.front().u.size;
  ModelParams<float> model =
      initial ? *initial : init_model<float>(default_architecture(P), derive_seed(cfg.seed, detail::kStreamInit));
  AdamState<float> adam(model.size());
  TrainResult result;
  result.best_val_accuracy = -1.0;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<PatchPair> batch;
  std::vector<std::vector<float>> masks;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate(epoch);
    Rng shuffle_rng(derive_seed(cfg.seed, detail::kStreamEpochShuffle, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    Rng drop_rng(derive_seed(cfg.seed, detail::kStreamDropout, epoch));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      masks.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(dataset[order[i]]);
        masks.push_back(draw_dropout_mask<float>(model.arch.features(), cfg.dropout, drop_rng));
      }
      const auto g = model_gradients<float>(model, batch, static_cast<float>(cfg.weight_decay), masks);
      if (!std::isfinite(g.loss)) throw NumericError("training loss became non-finite");
      loss_sum += static_cast<double>(g.loss) * static_cast<double>(end - start);
      adam_step<float>(model, g.grads, adam, lr, cfg.beta1, cfg.beta2, cfg.eps);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_accuracy = validate_accuracy<float>(model, val_set);
    result.history.push_back(rec);
    if (rec.val_accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = rec.val_accuracy;
      result.best_epoch = epoch;
      result.best = model;
    }
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

/// CSV: epoch,lr,train_loss,val_accuracy
inline void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "epoch,lr,train_loss,val_accuracy\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", r.epoch, r.lr, r.train_loss, r.val_accuracy);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace dmreg

#endif  // DMREG_TRAINER_HPP
