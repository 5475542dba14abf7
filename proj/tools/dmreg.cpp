// dmreg: synthetic data generation, multi-stage training, registration,
// metric sweeps and error reports.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dmreg/evaluation.hpp"
#include "dmreg/metric.hpp"
#include "dmreg/model_io.hpp"
#include "dmreg/pipeline.hpp"
#include "dmreg/registration.hpp"
#include "dmreg/synthdata.hpp"
#include "dmreg/volume_io.hpp"

namespace fs = std::filesystem;
using namespace dmreg;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kIo = 3, kNumeric = 4 };

std::vector<double> parse_list(const std::string& text, std::size_t n, const char* what) {
  std::vector<double> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(what);
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string(what) + ": cannot parse '" + text + "'");
    }
  }
  if (out.size() != n) throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(n) + " values");
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

// A model argument is either one DMR1 file (full resolution) or a directory
// written by `train` holding stages.txt and model_<k>.dmr.
struct ModelChain {
  std::vector<ModelPtr> models;
  std::vector<StageSpec> stages;
};

ModelChain load_chain(const std::string& path) {
  ModelChain chain;
  if (fs::is_directory(path)) {
    std::ifstream in(fs::path(path) / "stages.txt");
    if (!in) throw IoError("missing stages.txt in " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    chain.stages = parse_stages(ss.str());
    for (std::size_t s = 0; s < chain.stages.size(); ++s) {
      const auto file = fs::path(path) / ("model_" + std::to_string(s + 1) + ".dmr");
      chain.models.push_back(std::make_shared<const ModelParams<float>>(load_model(file.string())));
    }
  } else {
    auto m = std::make_shared<const ModelParams<float>>(load_model(path));
    chain.stages.push_back({1, 0.0, m->arch.patch_size});
    chain.models.push_back(std::move(m));
  }
  return chain;
}

struct MetricOptions {
  std::string metric = "deep";
  std::string model;
  int n_patches = 64;
  int bins = 60;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--metric", metric, "deep or nmi")->check(CLI::IsMember({"deep", "nmi"}));
    app->add_option("--model", model, "DMR1 model file or trained model directory");
    app->add_option("--n-patches", n_patches, "patch centers for the deep metric");
    app->add_option("--bins", bins, "NMI histogram bins");
    app->add_option("--seed", seed, "seed for patch-center sampling");
  }

  void check() const {
    if (metric == "deep" && model.empty()) throw std::invalid_argument("--model is required for --metric deep");
  }
};

RigidParams register_one(const MetricOptions& mo, const Volume& fixed, const Volume& moving, const RigidParams& init,
                         std::uint64_t seed) {
  const PowellConfig powell = rigid_powell_config();
  if (mo.metric == "nmi") {
    return register_pair(fixed, moving, MetricContext::make_nmi(mo.bins), init, powell).theta;
  }
  const ModelChain chain = load_chain(mo.model);
  return register_cascade(chain.models, chain.stages, fixed, moving, init, mo.n_patches, powell, seed);
}

//------------------------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  int pairs = 10;
  std::string dims = "64,64,64";
  std::string modality = "gm";
  std::string t_range = "1,10";
  double r_range = 0.1;
  std::uint64_t seed = 0;
};

int run_gen_data(const GenDataArgs& a) {
  const auto d = parse_list(a.dims, 3, "--dims");
  PhantomSpec ps;
  ps.dims = {static_cast<int>(d[0]), static_cast<int>(d[1]), static_cast<int>(d[2])};
  ps.seed = a.seed;
  ps.validate();
  const auto t = parse_list(a.t_range, 2, "--t-range");
  MisalignSpec ms{t[0], t[1], a.r_range, derive_seed(a.seed, 0x51)};
  ms.validate();
  const auto pairs = make_misaligned_set(a.pairs, ps, parse_modality(a.modality), ms);
  write_synthetic_set(a.out, pairs);
  std::cerr << "wrote " << pairs.size() << " pairs to " << a.out << "\n";
  return kOk;
}

struct TrainArgs {
  std::string data;
  std::string stages = "2,25 2,15 1,5";
  int epochs = 10;
  int batch = 32;
  double lr = 0.01;
  std::uint64_t seed = 0;
  std::string out;
  int pairs_per_volume = 1000;
  int val_pairs = 100;
  int n_patches = 64;
  double min_offset = 0.0;
  bool no_symmetrize = false;
};

int run_train(const TrainArgs& a) {
  const auto stages = parse_stages(a.stages);
  fs::path manifest = a.data;
  if (fs::is_directory(manifest)) manifest /= "manifest.csv";
  const auto entries = read_manifest(manifest.string());
  std::vector<Volume> fixed, moving;
  fixed.reserve(entries.size());
  moving.reserve(entries.size());
  for (const auto& e : entries) {
    fixed.push_back(read_volume(e.fixed_path));
    moving.push_back(read_volume(e.moving_path));
  }
  std::vector<RegistrationCase> cases;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    cases.push_back({&fixed[i], &moving[i], RigidParams::identity(fixed[i].geometry().center()), entries[i].truth});
  }
  PipelineConfig cfg;
  cfg.sampler.pairs_per_volume = a.pairs_per_volume;
  cfg.sampler.symmetrize = !a.no_symmetrize;
  cfg.sampler.min_negative_offset = a.min_offset;
  cfg.sampler.validate();
  cfg.val_pairs_per_volume = a.val_pairs;
  cfg.train.epochs = a.epochs;
  cfg.train.batch_size = a.batch;
  cfg.train.lr0 = a.lr;
  cfg.train.validate();
  cfg.n_patches = a.n_patches;
  cfg.seed = a.seed;
  cfg.log = [](const std::string& msg) { std::cerr << msg << "\n"; };
  const PipelineResult r = run_pipeline(stages, cases, {}, cfg);

  fs::create_directories(a.out);
  std::string stage_text;
  for (const auto& s : stages) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%d,%.17g,%d\n", s.l, s.sigma2, s.patch_size);
    stage_text += buf;
  }
  write_text((fs::path(a.out) / "stages.txt").string(), stage_text);
  for (std::size_t s = 0; s < r.models.size(); ++s) {
    const std::string k = std::to_string(s + 1);
    save_model((fs::path(a.out) / ("model_" + k + ".dmr")).string(), *r.models[s]);
    write_history_csv((fs::path(a.out) / ("history_" + k + ".csv")).string(), r.stages[s].history);
  }
  write_pipeline_report((fs::path(a.out) / "report.csv").string(), r.stages);
  return kOk;
}

struct RegisterArgs {
  std::string fixed;
  std::string moving;
  std::string manifest;
  MetricOptions metric;
  std::string init = "0 0 0 0 0 0";
  std::string out;
};

RigidParams parse_init(const std::string& text, Vec3 center) {
  std::istringstream in(text);
  std::array<double, 6> v{};
  for (double& x : v)
    if (!(in >> x)) throw std::invalid_argument("--init: expected 6 numbers");
  std::string rest;
  if (in >> rest) throw std::invalid_argument("--init: expected 6 numbers");
  return RigidParams::from_vector(v, center);
}

int run_register(const RegisterArgs& a) {
  a.metric.check();
  if (a.manifest.empty()) {
    if (a.fixed.empty() || a.moving.empty()) throw std::invalid_argument("--fixed and --moving (or --manifest) required");
    const Volume f = read_volume(a.fixed);
    const Volume m = read_volume(a.moving);
    const RigidParams theta = register_one(a.metric, f, m, parse_init(a.init, f.geometry().center()), a.metric.seed);
    write_text(a.out, format_params(theta) + "\n");
    return kOk;
  }
  // Batch mode: estimates CSV for every manifest pair.
  const auto entries = read_manifest(a.manifest);
  std::string csv = "pair_id,method,theta_est\n";
  for (const auto& e : entries) {
    const Volume f = read_volume(e.fixed_path);
    const Volume m = read_volume(e.moving_path);
    const RigidParams theta =
        register_one(a.metric, f, m, parse_init(a.init, f.geometry().center()), derive_seed(a.metric.seed, e.pair_id));
    csv += std::to_string(e.pair_id) + "," + a.metric.metric + "," + format_params(theta) + "\n";
    std::cerr << "pair " << e.pair_id << " |T| error " << transform_error(e.truth, theta).norm_t << " mm\n";
  }
  write_text(a.out, csv);
  return kOk;
}

struct SweepArgs {
  std::string fixed;
  std::string moving;
  MetricOptions metric;
  std::string axis = "tx";
  std::string range = "-20,20";
  int steps = 41;
  std::string out;
};

int run_sweep(const SweepArgs& a) {
  a.metric.check();
  const Volume f = read_volume(a.fixed);
  const Volume m = read_volume(a.moving);
  const auto r = parse_list(a.range, 2, "--range");
  MetricContext ctx = MetricContext::make_nmi(a.metric.bins);
  if (a.metric.metric == "deep") {
    const ModelChain chain = load_chain(a.metric.model);
    // Sweeps use the finest stage.
    ctx = MetricContext::make_deep(chain.models.back(), f, a.metric.n_patches, a.metric.seed);
  }
  const Axis axis = parse_axis(a.axis);
  const auto curve = response_sweep(ctx, f, m, RigidParams::identity(f.geometry().center()), axis, r[0], r[1], a.steps);
  write_sweep_csv(a.out, axis, curve);
  return kOk;
}

struct EvaluateArgs {
  std::string manifest;
  std::vector<std::string> estimates;
  std::string out;
};

int run_evaluate(const EvaluateArgs& a) {
  const auto entries = read_manifest(a.manifest);
  std::map<int, RigidParams> truth;
  for (const auto& e : entries) truth[e.pair_id] = e.truth;
  std::vector<EvalRecord> records;
  for (const auto& path : a.estimates) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("pair_id,method,theta_est", 0) != 0) {
      throw ParseError("estimates header missing in " + path);
    }
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto f = split_csv_line(line);
      if (f.size() != 3) throw ParseError("estimates row needs 3 fields: " + line);
      EvalRecord r;
      try {
        r.pair_id = std::stoi(f[0]);
      } catch (const std::exception&) {
        throw ParseError("bad pair id in " + path + ": " + f[0]);
      }
      auto it = truth.find(r.pair_id);
      if (it == truth.end()) throw std::invalid_argument("pair " + f[0] + " is not in the manifest");
      r.method = f[1];
      r.truth = it->second;
      r.estimate = parse_params(f[2]);
      records.push_back(std::move(r));
    }
  }
  if (records.empty()) throw std::invalid_argument("no estimates given");
  const ErrorTable table = evaluate_errors(records);
  if (!table.pvalue_error.empty()) std::cerr << "warning: p-values unavailable: " << table.pvalue_error << "\n";
  write_text(a.out, render_table_csv(table));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dmreg: learned similarity metrics for rigid multimodal registration"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "write seeded synthetic phantom pairs and a manifest");
  c_gen->add_option("--out", gen.out, "output directory")->required();
  c_gen->add_option("--pairs", gen.pairs, "number of pairs");
  c_gen->add_option("--dims", gen.dims, "X,Y,Z voxels");
  c_gen->add_option("--modality", gen.modality, "remap or gm")->check(CLI::IsMember({"remap", "gm"}));
  c_gen->add_option("--t-range", gen.t_range, "translation magnitude range a,b (mm)");
  c_gen->add_option("--r-range", gen.r_range, "rotation bound (rad)");
  c_gen->add_option("--seed", gen.seed);

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "multi-stage training with realignment between stages");
  c_train->add_option("--data", tr.data, "data directory or manifest")->required();
  c_train->add_option("--stages", tr.stages, "\"l,s2[,P] ...\"");
  c_train->add_option("--epochs", tr.epochs);
  c_train->add_option("--batch", tr.batch);
  c_train->add_option("--lr", tr.lr, "initial Adam learning rate");
  c_train->add_option("--seed", tr.seed);
  c_train->add_option("--out", tr.out, "model directory")->required();
  c_train->add_option("--pairs-per-volume", tr.pairs_per_volume);
  c_train->add_option("--val-pairs", tr.val_pairs, "validation pairs per volume");
  c_train->add_option("--n-patches", tr.n_patches, "patch centers for realignment");
  c_train->add_option("--min-offset", tr.min_offset, "minimum negative offset in mm (0 = one patch extent)");
  c_train->add_flag("--no-symmetrize", tr.no_symmetrize);

  RegisterArgs reg;
  auto* c_reg = app.add_subcommand("register", "rigid registration of one pair or a manifest");
  c_reg->add_option("--fixed", reg.fixed);
  c_reg->add_option("--moving", reg.moving);
  c_reg->add_option("--manifest", reg.manifest, "register every pair; --out is then an estimates CSV");
  reg.metric.add(c_reg);
  c_reg->add_option("--init", reg.init, "\"tx ty tz rx ry rz\"");
  c_reg->add_option("--out", reg.out)->required();

  SweepArgs sw;
  auto* c_sweep = app.add_subcommand("sweep", "metric response along one parameter axis");
  c_sweep->add_option("--fixed", sw.fixed)->required();
  c_sweep->add_option("--moving", sw.moving)->required();
  sw.metric.add(c_sweep);
  c_sweep->add_option("--axis", sw.axis)->check(CLI::IsMember({"tx", "ty", "tz", "rx", "ry", "rz"}));
  c_sweep->add_option("--range", sw.range, "lo,hi");
  c_sweep->add_option("--steps", sw.steps);
  c_sweep->add_option("--out", sw.out)->required();

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "error table with paired significance tests");
  c_eval->add_option("--manifest", ev.manifest)->required();
  c_eval->add_option("--estimates", ev.estimates, "estimates CSV (repeatable)")->required();
  c_eval->add_option("--out", ev.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*c_gen) return run_gen_data(gen);
    if (*c_train) return run_train(tr);
    if (*c_reg) return run_register(reg);
    if (*c_sweep) return run_sweep(sw);
    if (*c_eval) return run_evaluate(ev);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const NoAnatomyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kUsage;
  } catch (const std::out_of_range& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kUsage;
}
