// Incremental rank growth on a rank-4 teacher: prints the rank schedule and
// the final spectrum of the learned update.

#include <cstdio>

#include "inrank/data.hpp"
#include "inrank/inrank.hpp"

int main() {
  using namespace inrank;
  Rng rng(3);
  Rng data_rng = rng.split("data");
  const Dataset data = make_teacher_student(32, 32, 4, 512, 0.1, data_rng);

  Rng init_rng = rng.split("model");
  const std::vector<std::size_t> dims{32, 32};
  Model model = build_deep_linear(dims, InitScheme::zeros(), init_rng);
  InRankConfig icfg;
  icfg.b = 4;
  icfg.alpha = 0.95;
  icfg.check_interval = 20;
  model = make_factorized(model, icfg);

  TrainConfig tcfg;
  tcfg.epochs = 30;
  tcfg.batch_size = 64;
  tcfg.metrics_every = 80;
  OptimizerConfig ocfg;
  ocfg.kind = OptimizerKind::adam;
  ocfg.lr = 0.01;
  Optimizer opt(ocfg);
  Rng train_rng = rng.split("train");
  const TrainResult res = train_model(model, data, tcfg, opt, train_rng, &icfg, [](const MetricsRow& r) {
    std::printf("iter %5zu  loss %.5f  rank %zu\n", r.iteration, r.loss, r.ranks.at(0));
  });

  std::printf("rank changes:");
  for (const auto& e : res.schedule.layer(0)) std::printf(" %zu@%zu", e.rank, e.iteration);
  std::printf("\nupdate spectrum:");
  for (double s : update_spectrum(model.layers[0])) std::printf(" %.4f", s);
  std::printf("\n");
}
