#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "inrank/report.hpp"

namespace fs = std::filesystem;
using inrank::read_file_bytes;

namespace {

std::string tool() {
  const char* t = std::getenv("INRANK_LAB_TOOL");
  REQUIRE(t != nullptr);
  return t;
}

std::string config(const std::string& name) {
  const char* d = std::getenv("INRANK_LAB_CONFIG_DIR");
  REQUIRE(d != nullptr);
  return std::string(d) + "/" + name;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("inrank_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Run {
  int code;
  std::string err;
};

Run run(const std::string& args, const fs::path& dir) {
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = "'" + tool() + "' " + args + " >/dev/null 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  std::string text = fs::exists(err) ? read_file_bytes(err.string()) : "";
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, text};
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

nlohmann::json manifest(const fs::path& out) { return nlohmann::json::parse(read_file_bytes((out / "manifest.json").string())); }

}  // namespace

TEST_CASE("unknown config key exits 1 naming the key") {
  const fs::path dir = scratch("unknown");
  write(dir / "bad.json", R"({"optim": {"learnig_rate": 0.01}})");
  const Run r = run("train --config '" + (dir / "bad.json").string() + "' --out '" + (dir / "out").string() + "'", dir);
  CHECK(r.code == 1);
  CHECK(r.err.find("learnig_rate") != std::string::npos);
}

TEST_CASE("bad override exits 1") {
  const fs::path dir = scratch("override");
  const Run r = run("train --config '" + config("spectrum_dense.json") + "' --out '" + (dir / "out").string() +
                        "' --set optim.momentun=0.5",
                    dir);
  CHECK(r.code == 1);
  CHECK(r.err.find("optim.momentun") != std::string::npos);
}

TEST_CASE("missing csv data exits 3") {
  const fs::path dir = scratch("io");
  write(dir / "cfg.json", R"({"task": {"type": "csv", "path": "/nonexistent/data.csv"}})");
  const Run r = run("train --config '" + (dir / "cfg.json").string() + "' --out '" + (dir / "out").string() + "'", dir);
  CHECK(r.code == 3);
}

TEST_CASE("malformed csv data exits 3") {
  const fs::path dir = scratch("malformed");
  write(dir / "data.csv", "feat_0,feat_1,label\n1,2,0\n3,oops,1\n");
  write(dir / "cfg.json", R"({"task": {"type": "csv", "path": ")" + (dir / "data.csv").string() + R"("}})");
  const Run r = run("train --config '" + (dir / "cfg.json").string() + "' --out '" + (dir / "out").string() + "'", dir);
  CHECK(r.code == 3);
  CHECK(r.err.find("line 3") != std::string::npos);
}

TEST_CASE("divergent training exits 2 and keeps partial output") {
  const fs::path dir = scratch("diverge");
  const fs::path out = dir / "out";
  const Run r = run("train --config '" + config("spectrum_dense.json") + "' --out '" + out.string() +
                        "' --set optim.lr=1e6 --set optim.epochs=50",
                    dir);
  CHECK(r.code == 2);
  REQUIRE(fs::exists(out / "manifest.json"));
  CHECK(manifest(out)["status"] == "numeric-failure");
  CHECK(fs::exists(out / "metrics.csv"));
}

TEST_CASE("repeated runs are byte identical") {
  const fs::path dir = scratch("repro");
  const std::string base = "train --config '" + config("inrank_teacher.json") + "' --set optim.epochs=3 --set logging.spectrum_every=16 --out '";
  REQUIRE(run(base + (dir / "a").string() + "'", dir).code == 0);
  REQUIRE(run(base + (dir / "b").string() + "'", dir).code == 0);
  for (const char* f : {"metrics.csv", "spectrum.csv", "rank_schedule.csv"}) {
    INFO(f);
    CHECK(read_file_bytes((dir / "a" / f).string()) == read_file_bytes((dir / "b" / f).string()));
  }
  CHECK(manifest(dir / "a")["outputs"] == manifest(dir / "b")["outputs"]);
}

TEST_CASE("seed flag beats environment beats config") {
  const fs::path dir = scratch("seed");
  const std::string cfg = config("spectrum_dense.json");
  const std::string common = "spectrum-trace --config '" + cfg + "' --set optim.epochs=1 --out '";
  REQUIRE(run(common + (dir / "plain").string() + "'", dir).code == 0);
  CHECK(manifest(dir / "plain")["seed"] == 2);
  ::setenv("INRANK_LAB_SEED", "17", 1);
  REQUIRE(run(common + (dir / "env").string() + "'", dir).code == 0);
  REQUIRE(run(common + (dir / "flag").string() + "' --seed 23", dir).code == 0);
  ::unsetenv("INRANK_LAB_SEED");
  CHECK(manifest(dir / "env")["seed"] == 17);
  CHECK(manifest(dir / "flag")["seed"] == 23);
  CHECK(manifest(dir / "env")["resolved_config_digest"] != manifest(dir / "plain")["resolved_config_digest"]);
  CHECK(manifest(dir / "env")["config_digest"] == manifest(dir / "plain")["config_digest"]);
}

TEST_CASE("config digest tracks config bytes and the run leaves the config alone") {
  const fs::path dir = scratch("digest");
  const std::string text = read_file_bytes(config("spectrum_dense.json"));
  write(dir / "a.json", text);
  write(dir / "b.json", text + "\n");
  REQUIRE(run("train --config '" + (dir / "a.json").string() + "' --set optim.epochs=1 --out '" + (dir / "a").string() + "'", dir).code == 0);
  REQUIRE(run("train --config '" + (dir / "b.json").string() + "' --set optim.epochs=1 --out '" + (dir / "b").string() + "'", dir).code == 0);
  CHECK(manifest(dir / "a")["config_digest"] != manifest(dir / "b")["config_digest"]);
  CHECK(read_file_bytes((dir / "a.json").string()) == text);
}

TEST_CASE("every subcommand writes its outputs and a manifest") {
  const fs::path dir = scratch("outputs");
  struct Case {
    std::string cmd, cfg, extra;
    std::vector<std::string> files;
  };
  const std::vector<Case> cases{
      {"theory-verify", "theory.json", "--set theory.a=[1.0] --set theory.records=40",
       {"metrics.csv", "spectrum.csv", "theory_report.csv", "spectrum_flow-a1.svg", "spectrum_sgd-a1.svg"}},
      {"glrl-demo", "glrl.json", "", {"metrics.csv", "width_history.csv", "rank_schedule.csv", "loss.svg"}},
      {"train", "blobs_efficient.json", "--set optim.epochs=3", {"metrics.csv", "rank_schedule.csv", "ranks.svg"}},
      {"spectrum-trace", "spectrum_dense.json", "--set optim.epochs=2", {"metrics.csv", "spectrum.csv", "spectrum_layer0.svg"}},
  };
  for (const Case& c : cases) {
    INFO(c.cmd);
    const fs::path out = dir / c.cmd;
    const Run r = run(c.cmd + " --plot --config '" + config(c.cfg) + "' --out '" + out.string() + "' " + c.extra, dir);
    REQUIRE(r.code == 0);
    const auto m = manifest(out);
    CHECK(m["status"] == "ok");
    CHECK(m["tool"] == "inrank_lab");
    CHECK(m["config_digest"].get<std::string>().size() == 64);
    CHECK_FALSE(m["final_ranks"].empty());
    for (const auto& f : c.files) {
      INFO(f);
      CHECK(fs::exists(out / f));
      CHECK(m["outputs"].contains(f));
    }
  }
}

TEST_CASE("usage errors") {
  const fs::path dir = scratch("usage");
  CHECK(run("", dir).code == 1);
  CHECK(run("train --out x", dir).code == 1);
  CHECK(run("frobnicate --config x --out y", dir).code == 1);
}
