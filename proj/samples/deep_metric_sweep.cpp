// Trains a small deep metric on aligned phantom pairs and prints its
// response to an x translation of a held-out pair.

#include <cstdio>
#include <memory>
#include <vector>

#include "dmreg/metric.hpp"
#include "dmreg/synthdata.hpp"
#include "dmreg/trainer.hpp"

int main() {
  using namespace dmreg;
  constexpr int kTrain = 4;
  std::vector<Volume> fixed, moving;
  for (int i = 0; i <= kTrain; ++i) {
    PhantomSpec spec;
    spec.seed = 10 + i;
    fixed.push_back(generate_phantom(spec));
    moving.push_back(derive_modality(fixed.back(), ModalityKind::gm, 20 + i));
  }
  std::vector<AlignedPair> aligned;
  for (int i = 0; i < kTrain; ++i) {
    aligned.push_back({&fixed[i], &moving[i], RigidParams::identity(fixed[i].geometry().center())});
  }

  SamplerConfig sc;
  sc.pairs_per_volume = 400;
  sc.seed = 1;
  const Dataset train_set = build_dataset(aligned, sc, {});
  sc.pairs_per_volume = 50;
  sc.seed = 2;
  const Dataset val_set = build_dataset(aligned, sc, {});

  TrainConfig tc;
  tc.epochs = 3;
  const TrainResult tr = train(train_set.pairs, val_set.pairs, tc, {}, [](const EpochRecord& e) {
    std::printf("epoch %d loss %.4f val %.3f\n", e.epoch, e.train_loss, e.val_accuracy);
  });

  auto model = std::make_shared<const ModelParams<float>>(tr.best);
  const Volume& f = fixed[kTrain];
  const MetricContext ctx = MetricContext::make_deep(model, f, 32, 3);
  for (const SweepPoint& p :
       response_sweep(ctx, f, moving[kTrain], RigidParams::identity(f.geometry().center()), Axis::tx, -10, 10, 11)) {
    std::printf("tx %+6.1f  F %9.2f\n", p.offset, p.value);
  }
}
