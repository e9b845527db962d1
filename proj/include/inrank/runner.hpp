#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "inrank/config.hpp"
#include "inrank/data.hpp"
#include "inrank/glrl.hpp"
#include "inrank/inrank.hpp"
#include "inrank/report.hpp"
#include "inrank/theory.hpp"

namespace inrank {

inline constexpr const char* kToolName = "inrank_lab";
inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { exit_ok = 0, exit_config = 1, exit_numeric = 2, exit_io = 3 };

struct RunOptions {
  std::string command;  // theory-verify | glrl-demo | train | spectrum-trace
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool plot = false;
  std::vector<std::string> overrides;
};

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

namespace detail {

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunContext {
  const ExperimentConfig& cfg;
  std::filesystem::path out;
  bool plot;
  std::vector<std::string> outputs;  // file names relative to out, in creation order
  nlohmann::json final_ranks = nlohmann::json::array();
  nlohmann::json summary = nlohmann::json::object();

  std::string file(const std::string& name) {
    if (std::find(outputs.begin(), outputs.end(), name) == outputs.end()) outputs.push_back(name);
    return (out / name).string();
  }
};

inline Dataset make_dataset(const TaskSection& t, Rng& rng) {
  if (t.type == "planted") {
    const auto s = t.spectrum.empty() ? linear_spectrum(t.a, t.modes) : t.spectrum;
    return make_planted_task(t.nx, t.ny, s, rng);
  }
  if (t.type == "teacher-student") {
    return make_teacher_student(t.nx, t.ny, t.rank, t.samples, t.noise, rng, parse_teacher(t.teacher));
  }
  if (t.type == "blobs") return make_blobs(t.classes, t.dim, t.per_class, t.separation, t.sigma, rng);
  return load_csv(t.path, t.classes);
}

inline Model make_model(const ExperimentConfig& c, const Dataset& data, Rng& rng) {
  std::vector<std::size_t> dims{data.x.rows()};
  dims.insert(dims.end(), c.model.widths.begin(), c.model.widths.end());
  dims.push_back(data.is_classification() ? data.n_classes : data.y.rows());
  const LossKind loss_kind = !c.model.loss.empty() ? parse_loss(c.model.loss)
                             : data.is_classification() ? LossKind::cross_entropy
                                                        : LossKind::squared;
  if (loss_kind == LossKind::cross_entropy && !data.is_classification()) {
    throw ConfigError("model.loss: cross-entropy needs a classification task");
  }
  if (loss_kind == LossKind::squared && data.is_classification()) {
    throw ConfigError("model.loss: squared loss needs a regression task");
  }
  Model m = build_mlp(dims, parse_activation(c.model.activation), InitScheme::parse(c.model.init), c.model.bias,
                      loss_kind, rng);
  if (c.model.layer_mode == "factorized") {
    try {
      m = make_factorized(m, c.inrank);
    } catch (const ParameterError& e) {
      throw ConfigError(std::string("inrank: ") + e.what());
    }
  }
  return m;
}

inline void write_svg(RunContext& ctx, const std::string& name, const std::string& svg) {
  write_text_file(ctx.file(name), svg);
}

inline void run_training(RunContext& ctx, bool force_spectrum) {
  const ExperimentConfig& c = ctx.cfg;
  Rng root(c.seed);
  Rng data_rng = root.split("data");
  Rng model_rng = root.split("model");
  Rng train_rng = root.split("train");
  const Dataset data = make_dataset(c.task, data_rng);
  Model model = make_model(c, data, model_rng);
  const bool factorized = c.model.layer_mode == "factorized";

  TrainConfig tcfg;
  tcfg.epochs = c.epochs;
  tcfg.batch_size = c.batch;
  tcfg.metrics_every = c.logging.metrics_every;
  tcfg.spectrum_every = c.logging.spectrum_every;
  if (force_spectrum && tcfg.spectrum_every == 0) {
    const std::size_t b = c.batch == 0 ? data.samples() : std::min(c.batch, data.samples());
    tcfg.spectrum_every = (data.samples() + b - 1) / b;  // once per epoch
  }
  Optimizer opt(c.optim);
  MetricsCsv metrics(ctx.file("metrics.csv"), model.layers.size(), data.is_classification());
  const TrainResult res = train_model(model, data, tcfg, opt, train_rng, factorized ? &c.inrank : nullptr,
                                      [&](const MetricsRow& r) { metrics.write(r); });

  if (!res.trace.empty()) write_spectrum_csv(res.trace, ctx.file("spectrum.csv"));
  if (factorized) write_rank_schedule_csv(res.schedule, ctx.file("rank_schedule.csv"));

  for (std::size_t r : layer_ranks(model)) ctx.final_ranks.push_back(r);
  ctx.summary["iterations"] = res.iterations;
  ctx.summary["final_loss"] = res.final_loss();
  if (res.metrics.back().accuracy) ctx.summary["final_accuracy"] = *res.metrics.back().accuracy;
  if (res.fused_at) ctx.summary["fused_at"] = *res.fused_at;
  ctx.summary["warnings"] = res.warnings;

  if (ctx.plot) {
    PlotSeries loss{"loss", {}, {}};
    for (const auto& r : res.metrics) {
      loss.x.push_back(static_cast<double>(r.iteration));
      loss.y.push_back(r.loss);
    }
    PlotOptions lo;
    lo.title = "training loss";
    lo.y_label = "loss";
    lo.log_y = true;
    write_svg(ctx, "loss.svg", render_svg({loss}, lo));
    for (std::size_t l = 0; l < res.trace.layer_count(); ++l) {
      write_svg(ctx, "spectrum_layer" + std::to_string(l) + ".svg",
                render_spectrum_svg(res.trace, l, "cumulative update spectrum, layer " + std::to_string(l)));
    }
    if (factorized) {
      std::vector<PlotSeries> ranks;
      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        PlotSeries s{"layer " + std::to_string(l), {}, {}};
        for (const auto& r : res.metrics) {
          s.x.push_back(static_cast<double>(r.iteration));
          s.y.push_back(static_cast<double>(r.ranks.at(l)));
        }
        ranks.push_back(std::move(s));
      }
      PlotOptions ro;
      ro.title = "active rank";
      ro.y_label = "rank";
      write_svg(ctx, "ranks.svg", render_svg(ranks, ro));
    }
  }
}

inline std::string series_name(const std::string& method, double a) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", a);
  return method + "-a" + buf;
}

inline void run_theory(RunContext& ctx) {
  const ExperimentConfig& c = ctx.cfg;
  const TheorySection& th = c.theory;
  Rng root(c.seed);
  CsvWriter metrics(ctx.file("metrics.csv"), {"series", "iter", "time", "loss", "learned_modes"});
  CsvWriter spectrum(ctx.file("spectrum.csv"), spectrum_header());
  CsvWriter report(ctx.file("theory_report.csv"),
                   {"series", "a", "method", "mode", "s", "u0", "max_rel_error", "points", "within_tolerance"});

  std::size_t series_index = 0;
  bool all_ok = true;
  nlohmann::json series_summary = nlohmann::json::array();
  for (std::size_t ai = 0; ai < th.a.size(); ++ai) {
    const double a = th.a[ai];
    FlowConfig fc;
    fc.nx = th.nx;
    fc.ny = th.ny;
    fc.nh = th.nh;
    fc.spectrum = linear_spectrum(a, th.modes);
    Rng u0_rng = root.split("u0").split(ai);
    fc.u0 = sample_initial_strengths(th.nh, th.u0_scale, u0_rng);
    fc.random_mixing = th.random_mixing;
    fc.integrator = parse_integrator(th.integrator);
    fc.dt = th.dt;
    Rng flow_rng = root.split("flow").split(ai);
    const FlowProblem p = make_flow_problem(fc, flow_rng);
    const auto modes = p.modes();
    const double horizon = th.horizon > 0.0 ? th.horizon : transition_horizon(modes);

    struct Run {
      std::string method;
      double step;
    };
    std::vector<Run> runs{{"flow", th.dt}};
    if (th.lr > 0.0) runs.push_back({"sgd", th.lr});
    for (const Run& run : runs) {
      const auto steps = static_cast<std::size_t>(std::ceil(horizon / run.step));
      const std::size_t every = std::max<std::size_t>(1, steps / th.records);
      FlowResult fr;
      if (run.method == "flow") {
        fc.steps = steps;
        fc.record_every = every;
        fr = simulate_gradient_flow(p, fc);
      } else {
        fr = train_planted_sgd(p, run.step, steps, every);
      }
      const TrajectoryReport rep = verify_trajectory(fr.trace, modes, run.step);
      const std::string name = series_name(run.method, a);
      const auto& snaps = fr.trace.layer(0);
      for (std::size_t k = 0; k < snaps.size(); ++k) {
        std::size_t learned = 0;
        for (std::size_t i = 0; i < modes.size(); ++i)
          if (fr.strengths[k][i] >= modes[i].s / 2.0 - modes[i].u0) ++learned;
        metrics.row({name, std::to_string(snaps[k].iteration), format_number(fr.times[k]), format_number(fr.losses[k]),
                     std::to_string(learned)});
      }
      append_spectrum_rows(spectrum, fr.trace, series_index);
      bool ok = true;
      for (std::size_t i = 0; i < modes.size(); ++i) {
        const bool within = rep.max_rel_error[i] <= th.tolerance;
        ok = ok && within;
        report.row({name, format_number(a), run.method, std::to_string(i), format_number(modes[i].s),
                    format_number(modes[i].u0), format_number(rep.max_rel_error[i]), std::to_string(rep.points[i]),
                    within ? "true" : "false"});
      }
      all_ok = all_ok && ok;
      std::size_t learned_final = 0;
      for (std::size_t i = 0; i < modes.size(); ++i)
        if (fr.strengths.back()[i] >= modes[i].s / 2.0 - modes[i].u0) ++learned_final;
      ctx.final_ranks.push_back(learned_final);
      series_summary.push_back({{"series", name},
                                {"layer", series_index},
                                {"steps", steps},
                                {"max_rel_error", rep.worst()},
                                {"within_tolerance", ok}});
      if (ctx.plot) {
        write_svg(ctx, "spectrum_" + name + ".svg",
                  render_spectrum_svg(fr.trace, 0, "D_t spectrum, " + name, th.modes, run.step));
      }
      ++series_index;
    }
  }
  ctx.summary["series"] = series_summary;
  ctx.summary["tolerance"] = th.tolerance;
  ctx.summary["all_within_tolerance"] = all_ok;
}

inline void run_glrl(RunContext& ctx) {
  const ExperimentConfig& c = ctx.cfg;
  if (c.task.type != "planted") throw ConfigError("task.type: glrl-demo needs a planted task");
  Rng root(c.seed);
  Rng data_rng = root.split("data");
  const Dataset data = make_dataset(c.task, data_rng);
  const GlrlTask task{data.y};  // inputs are the standard basis, so Σyx = Y

  CsvWriter metrics(ctx.file("metrics.csv"), {"iter", "loss", "width"});
  const GlrlResult r = glrl_train(task, c.glrl, [&](const GlrlRecord& rec) {
    metrics.row({std::to_string(rec.iteration), format_number(rec.loss), std::to_string(rec.width)});
  });

  CsvWriter widths(ctx.file("width_history.csv"), {"stage", "width", "iter", "loss", "eckart_young_bound"});
  for (std::size_t i = 0; i < r.plateaus.size(); ++i) {
    const auto& p = r.plateaus[i];
    widths.row({std::to_string(i), std::to_string(p.width), std::to_string(p.iteration), format_number(p.loss),
                format_number(p.bound)});
  }
  RankSchedule schedule;
  schedule.record(0, 0, 1);
  for (std::size_t i = 0; i + 1 < r.plateaus.size(); ++i) schedule.record(0, r.plateaus[i].iteration, i + 2);
  write_rank_schedule_csv(schedule, ctx.file("rank_schedule.csv"));

  ctx.final_ranks.push_back(r.state.width());
  ctx.summary["iterations"] = r.iterations;
  ctx.summary["converged"] = r.converged;
  ctx.summary["saturated"] = r.saturated;
  ctx.summary["width_history"] = r.width_history;
  ctx.summary["final_loss"] = r.history.back().loss;

  if (ctx.plot) {
    PlotSeries loss{"loss", {}, {}};
    PlotSeries width{"width", {}, {}};
    for (const auto& h : r.history) {
      loss.x.push_back(static_cast<double>(h.iteration));
      loss.y.push_back(h.loss);
      width.x.push_back(static_cast<double>(h.iteration));
      width.y.push_back(static_cast<double>(h.width));
    }
    PlotOptions lo;
    lo.title = "greedy low-rank learning loss";
    lo.y_label = "cost";
    lo.log_y = true;
    write_svg(ctx, "loss.svg", render_svg({loss}, lo));
    PlotOptions wo;
    wo.title = "width";
    wo.y_label = "width";
    write_svg(ctx, "width.svg", render_svg({width}, wo));
  }
}

}  // namespace detail

/// Runs one subcommand end to end and returns its exit code. Errors are
/// reported on `err`. manifest.json is written last whenever the output
/// directory exists.
inline int run_experiment(const RunOptions& opts, std::ostream& err = std::cerr) {
  const std::string started = detail::utc_timestamp();
  std::string config_bytes;
  std::optional<ExperimentConfig> cfg;
  try {
    config_bytes = read_file_bytes(opts.config_path);
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return exit_io;
  }
  try {
    static const std::set<std::string> commands{"theory-verify", "glrl-demo", "train", "spectrum-trace"};
    if (!commands.count(opts.command)) throw ConfigError("unknown command '" + opts.command + "'");
    nlohmann::json root = parse_config_text(config_bytes);
    for (const auto& o : opts.overrides) apply_override(root, o);
    cfg = load_config(std::move(root), resolve_seed_override(opts.seed));
  } catch (const Error& e) {
    err << "config error: " << e.what() << '\n';
    return exit_config;
  }

  std::error_code ec;
  std::filesystem::create_directories(opts.out_dir, ec);
  if (ec || !std::filesystem::is_directory(opts.out_dir)) {
    err << "error: cannot create output directory '" << opts.out_dir << "'\n";
    return exit_io;
  }

  detail::RunContext ctx{*cfg, opts.out_dir, opts.plot};
  int code = exit_ok;
  std::string status = "ok";
  std::string message;
  try {
    if (opts.command == "theory-verify") detail::run_theory(ctx);
    else if (opts.command == "glrl-demo") detail::run_glrl(ctx);
    else detail::run_training(ctx, opts.command == "spectrum-trace");
  } catch (const NumericError& e) {
    code = exit_numeric;
    status = "numeric-failure";
    message = e.what();
  } catch (const ConfigError& e) {
    code = exit_config;
    status = "config-error";
    message = e.what();
  } catch (const IoError& e) {
    code = exit_io;
    status = "io-error";
    message = e.what();
  } catch (const ParseError& e) {
    code = exit_io;
    status = "io-error";
    message = e.what();
  } catch (const SchemaError& e) {
    code = exit_io;
    status = "io-error";
    message = e.what();
  } catch (const Error& e) {
    code = exit_config;
    status = "config-error";
    message = e.what();
  }
  if (code != exit_ok) err << status << ": " << message << '\n';

  nlohmann::json manifest;
  manifest["tool"] = kToolName;
  manifest["tool_version"] = kToolVersion;
  manifest["command"] = opts.command;
  manifest["config_path"] = opts.config_path;
  manifest["config_digest"] = sha256_hex(config_bytes);
  manifest["resolved_config_digest"] = sha256_hex(cfg->resolved.dump());
  manifest["resolved_config"] = cfg->resolved;
  manifest["seed"] = cfg->seed;
  manifest["started_at"] = started;
  manifest["status"] = status;
  if (!message.empty()) manifest["message"] = message;
  manifest["final_ranks"] = ctx.final_ranks;
  manifest["summary"] = ctx.summary;
  nlohmann::json outputs = nlohmann::json::object();
  for (const auto& name : ctx.outputs) {
    try {
      outputs[name] = sha256_hex(read_file_bytes((ctx.out / name).string()));
    } catch (const IoError&) {
      outputs[name] = nullptr;
    }
  }
  manifest["outputs"] = outputs;
  manifest["finished_at"] = detail::utc_timestamp();
  try {
    write_text_file((ctx.out / "manifest.json").string(), manifest.dump(2) + "\n");
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return exit_io;
  }
  return code;
}

}  // namespace inrank
