// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number
// of failed criteria (0 when all pass).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "inrank/config.hpp"
#include "inrank/runner.hpp"
#include "test_util.hpp"

#ifndef INRANK_LAB_CONFIG_DIR
#error "INRANK_LAB_CONFIG_DIR must point at the configs directory"
#endif

using namespace inrank;
using namespace inrank::testing;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ExperimentConfig shipped(const std::string& name, const std::vector<std::string>& overrides = {},
                         std::optional<std::uint64_t> seed = std::nullopt) {
  nlohmann::json root = parse_config_text(read_file_bytes(std::string(INRANK_LAB_CONFIG_DIR) + "/" + name));
  for (const auto& o : overrides) apply_override(root, o);
  return load_config(std::move(root), seed);
}

struct TrainOutcome {
  Model model;
  TrainResult result;
  Dataset data;
};

TrainOutcome train_from(const ExperimentConfig& c, std::optional<Dataset> given = std::nullopt) {
  Rng root(c.seed);
  Rng data_rng = root.split("data");
  Rng model_rng = root.split("model");
  Rng train_rng = root.split("train");
  Dataset data = given ? std::move(*given) : detail::make_dataset(c.task, data_rng);
  Model model = detail::make_model(c, data, model_rng);
  TrainConfig t;
  t.epochs = c.epochs;
  t.batch_size = c.batch;
  t.metrics_every = c.logging.metrics_every;
  Optimizer opt(c.optim);
  const bool factorized = c.model.layer_mode == "factorized";
  TrainResult r = train_model(model, data, t, opt, train_rng, factorized ? &c.inrank : nullptr);
  return {std::move(model), std::move(r), std::move(data)};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// 1. SVD reconstruction, orthonormality, thin product SVD.
Verdict numerical_core() {
  Rng rng(1001);
  double recon = 0.0, ortho = 0.0, thin = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.below(128);
    const std::size_t n = 1 + rng.below(96);
    const Matrix a = random_matrix(m, n, rng);
    const SvdResult s = svd(a);
    recon = std::max(recon, rel_fro(reconstruct(s), a));
    ortho = std::max({ortho, orthonormality_error(s.u), orthonormality_error(s.v)});

    const std::size_t p = 1 + rng.below(128);
    const std::size_t q = 1 + rng.below(96);
    const std::size_t w = 1 + rng.below(std::min<std::size_t>(16, std::min(p, q)));
    const Matrix u = random_matrix(p, w, rng);
    const Matrix v = random_matrix(w, q, rng);
    thin = std::max(thin, max_rel_diff(thin_svd_of_product(u, v, w).s, svd(matmul(u, v), w).s));
  }
  return {recon <= 1e-10 && ortho <= 1e-10 && thin <= 1e-9,
          "recon " + fmt("%.2e", recon) + ", orthonormality " + fmt("%.2e", ortho) + ", thin-vs-dense " +
              fmt("%.2e", thin)};
}

// 2. Analytic vs central finite-difference gradients.
Verdict gradients() {
  double worst = 0.0;
  std::size_t checks = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 500);
    for (Activation act : {Activation::linear, Activation::relu, Activation::tanh}) {
      for (LossKind lk : {LossKind::squared, LossKind::cross_entropy}) {
        Model m;
        m.loss = lk;
        m.layers.emplace_back(DenseLayer(random_matrix(5, 4, rng, 0.7), random_matrix(5, 1, rng, 0.1), act));
        FactorizedLayer f(random_matrix(6, 5, rng, 0.5), 3, 2, random_matrix(6, 1, rng, 0.1), act);
        f.u = random_matrix(6, 3, rng, 0.5);
        f.v = random_matrix(3, 5, rng, 0.5);
        m.layers.emplace_back(f);
        m.layers.emplace_back(DenseLayer(random_matrix(3, 6, rng, 0.7), random_matrix(3, 1, rng, 0.1)));
        const Matrix x = random_matrix(4, 7, rng);
        Matrix target = random_matrix(3, 7, rng);
        if (lk == LossKind::cross_entropy) {
          std::vector<int> labels;
          for (int j = 0; j < 7; ++j) labels.push_back(static_cast<int>(rng.below(3)));
          target = one_hot(labels, 3);
        }
        auto fw = forward(m, x);
        const GradientSet g = backward(m, fw.cache, loss(lk, fw.y, target).grad);
        for (std::size_t l = 0; l < m.layers.size(); ++l)
          for (std::size_t p = 0; p < g.layers[l].params.size(); ++p) {
            worst = std::max(worst, tensor_rel_error(g.layers[l].params[p], finite_difference(m, l, p, x, target)));
            ++checks;
          }
      }
    }
  }
  return {worst <= 1e-6, std::to_string(checks) + " tensors, worst relative error " + fmt("%.2e", worst)};
}

// 3. Mode trajectories against the closed form.
Verdict theory_trajectories() {
  Rng root(2024);
  bool ok = true;
  std::string detail;
  for (std::size_t ai = 0; ai < 3; ++ai) {
    const double a = std::array{0.1, 0.5, 1.0}[ai];
    FlowConfig fc;
    fc.spectrum = linear_spectrum(a, 10);
    Rng u0_rng = root.split("u0").split(ai);
    fc.u0 = sample_initial_strengths(fc.nh, 0.05, u0_rng);
    fc.integrator = Integrator::rk4;
    fc.dt = 1e-3;
    Rng flow_rng = root.split("flow").split(ai);
    const FlowProblem p = make_flow_problem(fc, flow_rng);
    const auto modes = p.modes();
    const double horizon = transition_horizon(modes);
    const auto run_sgd = [&](double eta) {
      const auto steps = static_cast<std::size_t>(std::ceil(horizon / eta));
      return verify_trajectory(train_planted_sgd(p, eta, steps, std::max<std::size_t>(1, steps / 400)).trace, modes, eta)
          .worst();
    };
    fc.steps = static_cast<std::size_t>(std::ceil(horizon / fc.dt));
    fc.record_every = std::max<std::size_t>(1, fc.steps / 400);
    const double flow_err = verify_trajectory(simulate_gradient_flow(p, fc).trace, modes, fc.dt).worst();
    const double sgd_err = run_sgd(1e-3);
    const double half_err = run_sgd(5e-4);
    const bool this_ok = flow_err <= 0.02 && sgd_err <= 0.05 && half_err < sgd_err;
    ok = ok && this_ok;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%sa=%g flow %.1e sgd %.4f sgd/2 %.4f", detail.empty() ? "" : "; ", a, flow_err,
                  sgd_err, half_err);
    detail += buf;
  }
  return {ok, detail};
}

// 4. Half-rise times decrease strictly with mode strength.
Verdict learning_order() {
  FlowConfig fc;
  fc.nx = fc.ny = 10;
  fc.nh = 8;
  for (int i = 0; i < 8; ++i) fc.spectrum.push_back(0.6 * std::pow(1.25, i));
  fc.u0.assign(fc.nh, 1e-3);
  fc.integrator = Integrator::rk4;
  fc.dt = 1e-3;
  Rng rng(77);
  const FlowProblem p = make_flow_problem(fc, rng);
  const auto modes = p.modes();
  fc.steps = static_cast<std::size_t>(std::ceil(transition_horizon(modes) / fc.dt));
  fc.record_every = 5;
  const FlowResult r = simulate_gradient_flow(p, fc);
  std::vector<double> t_half;
  for (std::size_t i = 0; i < modes.size(); ++i) t_half.push_back(crossing_time(r.times, r.strengths, i, modes[i].s / 2));
  bool ok = true;
  std::string detail = "t_half by increasing s:";
  for (std::size_t i = 0; i < t_half.size(); ++i) {
    detail += " " + fmt("%.3f", t_half[i]);
    if (t_half[i] < 0) ok = false;
    if (i > 0 && !(t_half[i] < t_half[i - 1])) ok = false;
  }
  return {ok, detail};
}

// 5. Greedy low-rank learning staircase.
Verdict glrl_staircase() {
  const ExperimentConfig c = shipped("glrl.json");
  Rng root(c.seed);
  Rng data_rng = root.split("data");
  const Dataset d = detail::make_dataset(c.task, data_rng);
  const GlrlResult r = glrl_train(GlrlTask{d.y}, c.glrl);
  bool ok = r.state.width() == 3 && r.plateaus.size() == 3;
  std::string detail = "final width " + std::to_string(r.state.width());
  for (const auto& pl : r.plateaus) {
    const bool within = pl.bound > c.glrl.tol ? std::abs(pl.loss - pl.bound) <= 0.05 * pl.bound : pl.loss <= c.glrl.tol;
    ok = ok && within;
    detail += "; w=" + std::to_string(pl.width) + " loss " + fmt("%.4g", pl.loss) + " bound " + fmt("%.4g", pl.bound);
  }
  return {ok, detail};
}

// 6. Rank recovery on the planted teacher, against a dense baseline.
Verdict rank_recovery() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto inr = train_from(shipped("inrank_teacher.json", {}, seed));
    const auto dense = train_from(shipped("inrank_teacher.json", {"model.layer_mode=dense"}, seed));
    const std::size_t rank = layer_ranks(inr.model).at(0);
    const double ratio = inr.result.final_loss() / dense.result.final_loss();
    ok = ok && rank >= 8 && rank <= 16 && std::abs(ratio - 1.0) <= 0.10;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + " rank " +
              std::to_string(rank) + " loss/dense " + fmt("%.3f", ratio);
  }
  return {ok, detail};
}

// 7. Explained ratio.
Verdict explained() {
  bool ok = true;
  std::string detail;
  Rng rng(7);
  const Matrix u = random_matrix(10, 3, rng);
  const Matrix v = random_matrix(3, 8, rng);
  const auto s = thin_svd_of_product(u, v, 3).s;
  for (std::size_t b : {1, 4, 20}) ok = ok && explained_ratio(s, 3, b) == 1.0;
  ok = ok && explained_ratio(std::vector<double>{5, 3, 1, 0, 0}, 3, 2) == 1.0;
  const double worked = explained_ratio(std::vector<double>{4, 3, 2, 1}, 1, 3);
  const double expected = 1.0 - 14.0 / 30.0;
  ok = ok && std::abs(worked - expected) <= 1e-15;
  detail = "g([4,3,2,1],1,3) = " + fmt("%.17g", worked);
  std::size_t violations = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> sv(1 + rng.below(12));
    for (double& x : sv) x = std::abs(rng.normal());
    std::sort(sv.rbegin(), sv.rend());
    const std::size_t b = 1 + rng.below(6);
    double prev = -1.0;
    for (std::size_t r = 0; r <= sv.size() + 2; ++r) {
      const double g = explained_ratio(sv, r, b);
      if (g < prev) ++violations;
      prev = g;
    }
  }
  ok = ok && violations == 0;
  detail += ", monotonicity violations " + std::to_string(violations);
  return {ok, detail};
}

// 8. Fusion optimality, frozen rank after fusion, blobs accuracy.
Verdict fusion() {
  Rng rng(88);
  double ey = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    FactorizedLayer f(random_matrix(12, 9, rng), 5, 3, std::nullopt, Activation::linear);
    f.u = random_matrix(12, 5, rng);
    f.v = random_matrix(5, 9, rng);
    const std::size_t r_star = 1 + rng.below(5);
    const Matrix w = effective_weight(Layer(f));
    const FactorizedLayer fused = fuse_to_fixed_rank(f, r_star);
    const double err = (matmul(fused.u, fused.v) - w).frobenius_norm();
    const auto s = singular_values(w);
    double tail = 0.0;
    for (std::size_t i = r_star; i < s.size(); ++i) tail += s[i] * s[i];
    ey = std::max(ey, std::abs(err * err - tail) / tail);
  }

  // Blobs: the config's per_class samples per class train both models; four
  // times as many fresh draws per class form the held-out set. Accuracy is
  // averaged over seeds.
  bool frozen = true;
  double acc_eff = 0.0, acc_dense = 0.0;
  const int seeds = 5;
  for (int seed = 1; seed <= seeds; ++seed) {
    const ExperimentConfig ec = shipped("blobs_efficient.json", {}, seed);
    const ExperimentConfig dc = shipped("blobs_efficient.json", {"model.layer_mode=dense"}, seed);
    Rng root(ec.seed);
    Rng data_rng = root.split("data");
    TaskSection t = ec.task;
    t.per_class *= 5;
    const Dataset all = detail::make_dataset(t, data_rng);
    std::vector<std::size_t> train_cols, test_cols;
    for (std::size_t j = 0; j < all.samples(); ++j) (j % 5 == 0 ? train_cols : test_cols).push_back(j);
    const auto subset = [&](const std::vector<std::size_t>& cols) {
      Dataset d;
      d.n_classes = all.n_classes;
      d.x = select_columns(all.x, cols);
      for (std::size_t j : cols) d.labels.push_back(all.labels[j]);
      return d;
    };
    const Dataset train = subset(train_cols);
    const Dataset test = subset(test_cols);

    const auto eff = train_from(ec, train);
    frozen = frozen && eff.result.fused_at.has_value();
    for (std::size_t l = 0; l < eff.result.schedule.layer_count(); ++l)
      for (const auto& ev : eff.result.schedule.layer(l))
        if (ev.iteration > *eff.result.fused_at) frozen = false;
    std::vector<std::size_t> after;
    for (const auto& row : eff.result.metrics)
      if (row.iteration >= *eff.result.fused_at) {
        if (after.empty()) after = row.ranks;
        frozen = frozen && row.ranks == after;
      }
    const auto dense = train_from(dc, train);
    acc_eff += accuracy(predict(eff.model, test.x), test.labels) / seeds;
    acc_dense += accuracy(predict(dense.model, test.x), test.labels) / seeds;
  }
  const bool ok = ey <= 1e-8 && frozen && std::abs(acc_eff - acc_dense) <= 0.02;
  return {ok, "Eckart-Young rel " + fmt("%.1e", ey) + ", rank frozen after fusion " + (frozen ? "yes" : "no") +
                  ", held-out accuracy " + fmt("%.4f", acc_eff) + " vs dense " + fmt("%.4f", acc_dense) + " (mean of 5 seeds)"};
}

// 9. Incremental growth against a fixed-rank factorization trained from scratch.
Verdict incremental_vs_fixed() {
  std::vector<double> ratios;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const ExperimentConfig c = shipped("inrank_teacher.json", {}, seed);
    const auto inr = train_from(c);
    const std::size_t r = layer_ranks(inr.model).at(0);

    Rng root(c.seed);
    Rng data_rng = root.split("data");
    Rng init_rng = root.split("fixed-init");
    Rng train_rng = root.split("train");
    const Dataset data = detail::make_dataset(c.task, data_rng);
    Model fixed;
    fixed.loss = LossKind::squared;
    const std::size_t ny = data.y.rows(), nx = data.x.rows();
    fixed.layers.emplace_back(FactorizedLayer::fixed(random_matrix(ny, r, init_rng, 0.1),
                                                     random_matrix(r, nx, init_rng, 0.1), std::nullopt,
                                                     Activation::linear));
    TrainConfig t;
    t.epochs = c.epochs;
    t.batch_size = c.batch;
    t.metrics_every = c.logging.metrics_every;
    Optimizer opt(c.optim);
    const TrainResult fr = train_model(fixed, data, t, opt, train_rng);
    ratios.push_back(inr.result.final_loss() / fr.final_loss());
  }
  const double med = median(ratios);
  const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
  return {med <= 1.05, "median loss ratio " + fmt("%.4f", med) + " (range " + fmt("%.4f", *lo) + ".." +
                           fmt("%.4f", *hi) + ")"};
}

// 10. Byte-identical outputs across repeated runs.
Verdict reproducibility() {
  const fs::path base = fs::temp_directory_path() / "inrank_lab_acceptance";
  fs::remove_all(base);
  struct Case {
    std::string command, config;
    std::vector<std::string> overrides;
  };
  const std::vector<Case> cases{
      {"theory-verify", "theory.json", {"theory.a=[0.5]", "theory.records=50"}},
      {"glrl-demo", "glrl.json", {}},
      {"train", "inrank_teacher.json", {"optim.epochs=5", "logging.spectrum_every=32"}},
      {"spectrum-trace", "spectrum_dense.json", {"optim.epochs=5"}},
  };
  bool ok = true;
  std::string detail;
  std::ostringstream sink;
  for (const Case& c : cases) {
    std::vector<fs::path> dirs;
    for (int run = 0; run < 2; ++run) {
      RunOptions o;
      o.command = c.command;
      o.config_path = std::string(INRANK_LAB_CONFIG_DIR) + "/" + c.config;
      o.out_dir = (base / (c.command + "-" + std::to_string(run))).string();
      o.overrides = c.overrides;
      if (run_experiment(o, sink) != 0) ok = false;
      dirs.push_back(o.out_dir);
    }
    bool same = true;
    for (const char* name : {"metrics.csv", "spectrum.csv"}) {
      const bool e0 = fs::exists(dirs[0] / name), e1 = fs::exists(dirs[1] / name);
      if (e0 != e1) same = false;
      if (e0 && e1 && read_file_bytes((dirs[0] / name).string()) != read_file_bytes((dirs[1] / name).string()))
        same = false;
    }
    const auto m0 = nlohmann::json::parse(read_file_bytes((dirs[0] / "manifest.json").string()));
    const auto m1 = nlohmann::json::parse(read_file_bytes((dirs[1] / "manifest.json").string()));
    for (const char* key : {"config_digest", "resolved_config_digest", "outputs", "final_ranks"})
      if (m0.at(key) != m1.at(key)) same = false;
    ok = ok && same;
    detail += (detail.empty() ? "" : ", ") + c.command + (same ? " identical" : " DIFFERS");
  }
  fs::remove_all(base);
  return {ok, detail};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double limit_s;  // 0 = no runtime bound
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "numerical core", 30, numerical_core},
      {2, "gradient correctness", 60, gradients},
      {3, "mode trajectories vs closed form", 120, theory_trajectories},
      {4, "sequential learning order", 60, learning_order},
      {5, "greedy low-rank staircase", 120, glrl_staircase},
      {6, "rank recovery", 180, rank_recovery},
      {7, "explained ratio", 0, explained},
      {8, "efficient fusion", 180, fusion},
      {9, "incremental vs fixed rank", 300, incremental_vs_fixed},
      {10, "reproducibility", 0, reproducibility},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.limit_s == 0 || secs < c.limit_s;
    const bool pass = v.pass && in_time;
    if (!pass) ++failed;
    std::printf("criterion %2d %-34s %s  %s  [%.1fs%s]\n", c.id, c.name, pass ? "PASS" : "FAIL", v.detail.c_str(), secs,
                in_time ? "" : ", over time limit");
    std::fflush(stdout);
  }
  return failed;
}
