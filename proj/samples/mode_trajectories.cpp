// Simulates a two-layer linear network from a small structured start and
// prints each mode's strength next to its closed-form value.

#include <cstdio>

#include "inrank/theory.hpp"

int main() {
  using namespace inrank;
  FlowConfig cfg;
  cfg.nx = cfg.ny = 8;
  cfg.nh = 4;
  cfg.spectrum = {1.0, 2.0, 3.0, 4.0};
  cfg.u0.assign(cfg.nh, 1e-3);
  cfg.integrator = Integrator::rk4;
  cfg.dt = 1e-3;

  Rng rng(1);
  const FlowProblem p = make_flow_problem(cfg, rng);
  const auto modes = p.modes();
  cfg.steps = static_cast<std::size_t>(transition_horizon(modes) / cfg.dt);
  cfg.record_every = cfg.steps / 12;
  const FlowResult r = simulate_gradient_flow(p, cfg);

  std::printf("%8s", "t");
  for (std::size_t i = 0; i < modes.size(); ++i) std::printf("   s=%-4g sim / theory  ", modes[i].s);
  std::printf("\n");
  for (std::size_t k = 0; k < r.times.size(); ++k) {
    std::printf("%8.3f", r.times[k]);
    for (std::size_t i = 0; i < modes.size(); ++i)
      std::printf("   %8.5f / %8.5f", r.strengths[k][i], closed_form_mode(r.times[k], modes[i]));
    std::printf("\n");
  }
  for (const auto& m : modes) std::printf("half-rise time for s=%g: %.4f\n", m.s, half_rise_time(m));
}
