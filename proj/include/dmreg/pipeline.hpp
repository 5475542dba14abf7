#ifndef DMREG_PIPELINE_HPP
#define DMREG_PIPELINE_HPP

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmreg/metric.hpp"
#include "dmreg/registration.hpp"
#include "dmreg/sampling.hpp"
#include "dmreg/trainer.hpp"
#include "dmreg/transform.hpp"
#include "dmreg/volume.hpp"

namespace dmreg {

/// One training stage: downsample factor, dither variance (mm^2), patch size.
struct StageSpec {
  int l = 1;
  double sigma2 = 0.0;
  int patch_size = 17;

  void validate() const {
    if (l < 1) throw std::invalid_argument("StageSpec: downsample factor must be >= 1");
    if (!(sigma2 >= 0.0)) throw std::invalid_argument("StageSpec: sigma2 must be >= 0");
    if (patch_size < 1 || patch_size % 2 == 0) throw std::invalid_argument("StageSpec: patch size must be odd");
  }
  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

/// Parses whitespace-separated "l,sigma2[,P]" items, e.g. "4,100 2,25 2,15 1,8".
inline std::vector<StageSpec> parse_stages(const std::string& text) {
  std::istringstream in(text);
  std::string item;
  std::vector<StageSpec> stages;
  while (in >> item) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : item) {
      if (c == ',') {
        parts.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    parts.push_back(cur);
    if (parts.size() < 2 || parts.size() > 3) throw std::invalid_argument("stage '" + item + "' is not l,sigma2[,P]");
    StageSpec s;
    try {
      std::size_t used = 0;
      s.l = std::stoi(parts[0], &used);
      if (used != parts[0].size()) throw std::invalid_argument("l");
      s.sigma2 = std::stod(parts[1], &used);
      if (used != parts[1].size()) throw std::invalid_argument("sigma2");
      if (parts.size() == 3) {
        s.patch_size = std::stoi(parts[2], &used);
        if (used != parts[2].size()) throw std::invalid_argument("P");
      }
    } catch (const std::exception&) {
      throw std::invalid_argument("stage '" + item + "' is not l,sigma2[,P]");
    }
    s.validate();
    stages.push_back(s);
  }
  if (stages.empty()) throw std::invalid_argument("no stages given");
  return stages;
}

/// A fixed/moving pair with its current alignment and, when known, the truth.
struct RegistrationCase {
  const Volume* fixed = nullptr;
  const Volume* moving = nullptr;
  RigidParams align;
  std::optional<RigidParams> truth;
};

using ModelPtr = std::shared_ptr<const ModelParams<float>>;

struct PipelineConfig {
  SamplerConfig sampler;          ///< patch_size and seed are overridden per stage
  int val_pairs_per_volume = 100;
  int dither_draws = 1;
  TrainConfig train;              ///< seed is overridden per stage
  int n_patches = 64;
  PowellConfig powell = rigid_powell_config();
  std::uint64_t seed = 0;
  /// Per-stage models to use instead of training (null entries are trained).
  std::vector<ModelPtr> pretrained;
  std::function<void(const std::string&)> log;
};

struct StageReport {
  int stage = 0;
  double mean_train_norm_before = 0.0;
  double mean_train_norm_after = 0.0;
  double val_accuracy = 0.0;
  int best_epoch = 0;
  std::vector<EpochRecord> history;
};

struct PipelineResult {
  std::vector<ModelPtr> models;
  std::vector<RigidParams> train_alignments;
  std::vector<StageReport> stages;
  std::vector<RigidParams> test_estimates;
};

namespace detail {
inline constexpr std::uint64_t kStreamStageTrain = 0x41;
inline constexpr std::uint64_t kStreamStageVal = 0x42;
inline constexpr std::uint64_t kStreamStageModel = 0x43;
inline constexpr std::uint64_t kStreamRealign = 0x44;
inline constexpr std::uint64_t kStreamTest = 0x45;

// Mean translation-norm misalignment over cases with a known truth (-1 if none).
inline double mean_norm_error(const std::vector<RegistrationCase>& cases, const std::vector<RigidParams>& aligns) {
  double s = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (!cases[i].truth) continue;
    s += transform_error(*cases[i].truth, aligns[i]).norm_t;
    ++n;
  }
  return n ? s / n : -1.0;
}

/// Downsampled copies of case volumes, cached per factor.
class PyramidCache {
 public:
  const Volume& get(const Volume* v, int l) {
    if (l == 1) return *v;
    auto key = std::make_pair(v, l);
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, downsample(*v, l)).first;
    return it->second;
  }

 private:
  std::map<std::pair<const Volume*, int>, Volume> cache_;
};

}  // namespace detail

/// Registers one pair with a single stage metric; volumes are already at the stage resolution.
inline RigidParams register_stage(const ModelPtr& model, const Volume& fixed, const Volume& moving,
                                  const RigidParams& theta0, int n_patches,
                                  const PowellConfig& powell, std::uint64_t center_seed, double tau = 0.05) {
  const MetricContext ctx = MetricContext::make_deep(model, fixed, n_patches, center_seed, tau);
  return register_pair(fixed, moving, ctx, theta0, powell).theta;
}

/// Applies the stage metrics in order, each starting from the previous estimate.
inline RigidParams register_cascade(const std::vector<ModelPtr>& models, const std::vector<StageSpec>& stages,
                                    const Volume& fixed, const Volume& moving, const RigidParams& theta0,
                                    int n_patches, const PowellConfig& powell, std::uint64_t seed) {
  if (models.size() != stages.size()) throw std::invalid_argument("register_cascade: one model per stage required");
  RigidParams theta = theta0;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const Volume f = downsample(fixed, stages[s].l);
    const Volume m = downsample(moving, stages[s].l);
    theta = register_stage(models[s], f, m, theta, n_patches, powell, derive_seed(seed, s));
  }
  return theta;
}

/// Multi-stage training: per stage, downsample, build a dithered dataset from
/// the current alignments, train, then realign every training pair with the
/// new metric. Test pairs are registered with the stage metrics in sequence.
inline PipelineResult run_pipeline(const std::vector<StageSpec>& stages, const std::vector<RegistrationCase>& train_cases,
                                   const std::vector<RegistrationCase>& test_cases, const PipelineConfig& cfg) {
  if (stages.empty()) throw std::invalid_argument("run_pipeline: no stages");
  for (const auto& s : stages) s.validate();
  auto log = [&](const std::string& msg) {
    if (cfg.log) cfg.log(msg);
  };
  PipelineResult result;
  detail::PyramidCache pyramid;
  for (const auto& c : train_cases) result.train_alignments.push_back(c.align);

  for (std::size_t s = 0; s < stages.size(); ++s) {
    const StageSpec& stage = stages[s];
    StageReport report;
    report.stage = static_cast<int>(s) + 1;
    report.mean_train_norm_before = detail::mean_norm_error(train_cases, result.train_alignments);

    ModelPtr model = s < cfg.pretrained.size() ? cfg.pretrained[s] : nullptr;
    if (!model) {
      if (train_cases.empty()) throw std::invalid_argument("run_pipeline: no training pairs");
      std::vector<AlignedPair> aligned;
      for (std::size_t i = 0; i < train_cases.size(); ++i) {
        aligned.push_back({&pyramid.get(train_cases[i].fixed, stage.l), &pyramid.get(train_cases[i].moving, stage.l),
                           result.train_alignments[i]});
      }
      SamplerConfig sc = cfg.sampler;
      sc.patch_size = stage.patch_size;
      sc.seed = derive_seed(cfg.seed, detail::kStreamStageTrain, s);
      const DitherSpec dither{stage.sigma2, cfg.dither_draws};
      const Dataset train_set = build_dataset(aligned, sc, dither);
      SamplerConfig vc = sc;
      vc.pairs_per_volume = cfg.val_pairs_per_volume;
      vc.seed = derive_seed(cfg.seed, detail::kStreamStageVal, s);
      const Dataset val_set = build_dataset(aligned, vc, dither);
      TrainConfig tc = cfg.train;
      tc.seed = derive_seed(cfg.seed, detail::kStreamStageModel, s);
      log("stage " + std::to_string(s + 1) + ": training on " + std::to_string(train_set.size()) + " pairs");
      TrainResult tr = train(train_set.pairs, val_set.pairs, tc, {}, [&](const EpochRecord& r) {
        log("  epoch " + std::to_string(r.epoch) + " loss " + std::to_string(r.train_loss) + " val " +
            std::to_string(r.val_accuracy));
      });
      report.val_accuracy = tr.best_val_accuracy;
      report.best_epoch = tr.best_epoch;
      report.history = tr.history;
      model = std::make_shared<const ModelParams<float>>(std::move(tr.best));
    }
    result.models.push_back(model);

    for (std::size_t i = 0; i < train_cases.size(); ++i) {
      const Volume& f = pyramid.get(train_cases[i].fixed, stage.l);
      const Volume& m = pyramid.get(train_cases[i].moving, stage.l);
      result.train_alignments[i] =
          register_stage(model, f, m, result.train_alignments[i], cfg.n_patches, cfg.powell,
                         derive_seed(cfg.seed, detail::kStreamRealign, s * 1000003 + i));
    }
    report.mean_train_norm_after = detail::mean_norm_error(train_cases, result.train_alignments);
    log("stage " + std::to_string(s + 1) + ": mean train |T| " + std::to_string(report.mean_train_norm_before) +
        " -> " + std::to_string(report.mean_train_norm_after));
    result.stages.push_back(std::move(report));
  }

  for (std::size_t i = 0; i < test_cases.size(); ++i) {
    result.test_estimates.push_back(register_cascade(result.models, stages, *test_cases[i].fixed,
                                                     *test_cases[i].moving, test_cases[i].align, cfg.n_patches,
                                                     cfg.powell, derive_seed(cfg.seed, detail::kStreamTest, i)));
  }
  return result;
}

/// CSV: stage,mean_train_normT_before,mean_train_normT_after,val_accuracy
inline void write_pipeline_report(const std::string& path, const std::vector<StageReport>& stages) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "stage,mean_train_normT_before,mean_train_normT_after,val_accuracy\n";
  char buf[160];
  for (const auto& r : stages) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", r.stage, r.mean_train_norm_before,
                  r.mean_train_norm_after, r.val_accuracy);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace dmreg

#endif  // DMREG_PIPELINE_HPP
