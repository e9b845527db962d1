#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "inrank/optim.hpp"
#include "test_util.hpp"

using namespace inrank;
using namespace inrank::testing;

namespace {

Model scalar_model(double w) {
  Model m;
  m.layers.emplace_back(DenseLayer(Matrix{{w}}));
  return m;
}

GradientSet scalar_grad(double g) {
  GradientSet gs;
  gs.layers.resize(1);
  gs.layers[0].params.push_back(Matrix{{g}});
  return gs;
}

double scalar(const Model& m) { return std::get<DenseLayer>(m.layers[0]).w(0, 0); }

GradientSet gradients(const Model& m, const Matrix& x, const Matrix& t) {
  auto fw = forward(m, x);
  return backward(m, fw.cache, loss(m.loss, fw.y, t).grad);
}

}  // namespace

TEST_CASE("sgd step") {
  Model m = scalar_model(1.0);
  OptimizerConfig cfg;
  cfg.lr = 0.1;
  Optimizer opt(cfg);
  opt.step(m, scalar_grad(0.5));
  CHECK(scalar(m) == Catch::Approx(0.95).margin(1e-15));
  CHECK(opt.step_count() == 1);
}

TEST_CASE("momentum accumulates velocity") {
  Model m = scalar_model(0.0);
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::momentum;
  cfg.lr = 0.1;
  cfg.momentum = 0.5;
  Optimizer opt(cfg);
  opt.step(m, scalar_grad(1.0));
  opt.step(m, scalar_grad(1.0));
  CHECK(scalar(m) == Catch::Approx(-0.1 - 0.15).margin(1e-15));
}

TEST_CASE("adam's first step moves by about lr times the sign") {
  for (double g : {3.0, -0.02, 1e-3}) {
    Model m = scalar_model(1.0);
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::adam;
    cfg.lr = 1e-3;
    Optimizer opt(cfg);
    opt.step(m, scalar_grad(g));
    CHECK(scalar(m) - 1.0 == Catch::Approx(-1e-3 * std::copysign(1.0, g)).epsilon(1e-4));
  }
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::momentum, OptimizerKind::adam, OptimizerKind::adamw}) {
    Model m = scalar_model(0.7);
    OptimizerConfig cfg;
    cfg.kind = kind;
    Optimizer opt(cfg);
    opt.step(m, scalar_grad(0.0));
    CHECK(scalar(m) == 0.7);
  }
}

TEST_CASE("adamw without decay equals adam bitwise") {
  Rng rng(3);
  const std::vector<std::size_t> dims{4, 5, 3};
  const Model base = build_deep_linear(dims, InitScheme::gaussian(0.5), rng);
  const Matrix x = random_matrix(4, 8, rng);
  const Matrix t = random_matrix(3, 8, rng);

  Model a = base, b = base;
  OptimizerConfig ca;
  ca.kind = OptimizerKind::adam;
  OptimizerConfig cb = ca;
  cb.kind = OptimizerKind::adamw;
  cb.weight_decay = 0.0;
  Optimizer oa(ca), ob(cb);
  for (int i = 0; i < 10; ++i) {
    oa.step(a, gradients(a, x, t));
    ob.step(b, gradients(b, x, t));
  }
  for (std::size_t l = 0; l < a.layers.size(); ++l) CHECK(effective_weight(a.layers[l]) == effective_weight(b.layers[l]));
}

TEST_CASE("adamw decays weights") {
  Model m = scalar_model(2.0);
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::adamw;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  Optimizer opt(cfg);
  opt.step(m, scalar_grad(0.0));
  CHECK(scalar(m) == Catch::Approx(2.0 - 0.1 * 0.5 * 2.0));
}

TEST_CASE("warmup ramps the learning rate") {
  OptimizerConfig cfg;
  cfg.lr = 1.0;
  cfg.warmup_steps = 4;
  Optimizer opt(cfg);
  Model m = scalar_model(0.0);
  opt.step(m, scalar_grad(1.0));
  CHECK(scalar(m) == Catch::Approx(-0.25));
  for (int i = 0; i < 5; ++i) opt.step(m, scalar_grad(0.0));
  CHECK(opt.current_lr() == 1.0);
}

TEST_CASE("invalid configuration is rejected") {
  OptimizerConfig cfg;
  cfg.lr = 0.0;
  CHECK_THROWS_AS(Optimizer(cfg), ParameterError);
  cfg.lr = 0.1;
  cfg.beta1 = 1.0;
  CHECK_THROWS_AS(Optimizer(cfg), ParameterError);
  CHECK_THROWS_AS(parse_optimizer("rmsprop"), ParameterError);
  CHECK(parse_optimizer("adamw") == OptimizerKind::adamw);
}

TEST_CASE("non-finite gradient is reported with its layer") {
  Model m;
  m.layers.emplace_back(DenseLayer(Matrix(2, 2, 1.0)));
  m.layers.emplace_back(DenseLayer(Matrix(2, 2, 1.0)));
  GradientSet g;
  g.layers.resize(2);
  g.layers[0].params.push_back(Matrix(2, 2));
  g.layers[1].params.push_back(Matrix(2, 2));
  g.layers[1].params[0](1, 0) = std::numeric_limits<double>::infinity();
  Optimizer opt(OptimizerConfig{});
  try {
    opt.step(m, g);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.layer() == 1);
  }
  CHECK(std::get<DenseLayer>(m.layers[0]).w == Matrix(2, 2, 1.0));
  CHECK(opt.step_count() == 0);
}

TEST_CASE("expand_state widens factor moments") {
  Rng rng(4);
  Model m;
  FactorizedLayer f(random_matrix(5, 4, rng), 2, 1);
  f.u = random_matrix(5, 2, rng);
  f.v = random_matrix(2, 4, rng);
  m.layers.emplace_back(f);
  const Matrix x = random_matrix(4, 6, rng);
  const Matrix t = random_matrix(5, 6, rng);

  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::adam;
  Optimizer opt(cfg);
  for (int i = 0; i < 3; ++i) opt.step(m, gradients(m, x, t));
  const auto before = opt.slots(0);

  opt.expand_state(0, 2, 4);
  const auto& after = opt.slots(0);
  CHECK(opt.step_count() == 3);
  REQUIRE(after[0].first.cols() == 4);
  REQUIRE(after[1].second.rows() == 4);
  CHECK(after[0].first.leading_cols(2) == before[0].first);
  CHECK(after[0].second.leading_cols(2) == before[0].second);
  CHECK(after[1].first.leading_rows(2) == before[1].first);
  CHECK(after[0].first.block(0, 2, 5, 2).max_abs() == 0.0);
  CHECK(after[1].second.block(2, 0, 2, 4).max_abs() == 0.0);

  CHECK_THROWS_AS(opt.expand_state(0, 4, 4), UsageError);
  CHECK_THROWS_AS(opt.expand_state(0, 4, 3), UsageError);
}

TEST_CASE("growth with zero-initialized columns does not perturb training") {
  // Paired runs: one grows two zero buffer modes (zero u columns, zero v rows)
  // after 5 steps, the other never grows. The effective weights must agree.
  Rng rng(5);
  const Matrix w0 = random_matrix(6, 5, rng);
  const Matrix x = random_matrix(5, 10, rng);
  const Matrix t = random_matrix(6, 10, rng);
  FactorizedLayer f(w0, 2, 1);
  f.u = random_matrix(6, 2, rng, 0.3);
  f.v = random_matrix(2, 5, rng, 0.3);

  for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::momentum, OptimizerKind::adam}) {
    Model a, b;
    a.layers.emplace_back(f);
    b.layers.emplace_back(f);
    OptimizerConfig cfg;
    cfg.kind = kind;
    Optimizer oa(cfg), ob(cfg);
    for (int i = 0; i < 10; ++i) {
      if (i == 5) {
        auto& g = std::get<FactorizedLayer>(b.layers[0]);
        g.u = hconcat(g.u, Matrix(6, 2));
        g.v = vconcat(g.v, Matrix(2, 5));
        ob.expand_state(0, 2, 4);
      }
      oa.step(a, gradients(a, x, t));
      ob.step(b, gradients(b, x, t));
    }
    // u' = 0 and v' = 0 give zero gradients for both new blocks, so they stay 0.
    CHECK(max_abs_diff(effective_weight(a.layers[0]), effective_weight(b.layers[0])) <= 1e-12);
  }
}

TEST_CASE("reset_layer clears state") {
  Model m = scalar_model(1.0);
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::momentum;
  Optimizer opt(cfg);
  opt.step(m, scalar_grad(1.0));
  CHECK_FALSE(opt.slots(0).empty());
  opt.reset_layer(0);
  CHECK(opt.slots(0).empty());
}
