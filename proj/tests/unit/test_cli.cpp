#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <sys/wait.h>

#include "doctest.h"

#include "deepkkl/cli.hpp"
#include "deepkkl/text_io.hpp"

using namespace dkkl;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("deepkkl_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small dataset and a two-epoch model in `dir`.
void make_artifacts(const fs::path& dir, const std::string& system = "vanderpol") {
  REQUIRE(cli({"--out", dir.string(), "--seed", "4", "gen-data", "--system", system, "--n-train", "16", "--n-val",
               "4", "--n-test", "4", "--length", "30"})
              .code == 0);
  REQUIRE(cli({"--out", dir.string(), "--seed", "4", "train", "--data", (dir / (system + ".csv")).string(),
               "--epochs", "2", "--batch-size", "8", "--t-train", "10", "--p-train", "10", "--hidden", "8,8",
               "--lr", "1e-3"})
              .code == 0);
}

int log_rows(const fs::path& path) {
  const std::string text = read_text_file(path);
  int n = 0;
  for (char c : text) n += c == '\n';
  return n - 1;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("exit codes for usage problems") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  const auto bad = cli({"--out", fresh_dir("usage").string(), "gen-data", "--system", "pendulum"});
  CHECK(bad.code == kExitUsage);
  CHECK(bad.err.find("pendulum") != std::string::npos);
  CHECK(bad.err.find("--n-train") != std::string::npos);
  const auto typo = cli({"gen-data", "--n-train", "many"});
  CHECK(typo.code == kExitUsage);
  CHECK(typo.err.find("--length") != std::string::npos);
  CHECK(cli({"train", "--data", "/nonexistent.csv"}).code == kExitUsage);
  CHECK(cli({"predict", "--model-file", "/nonexistent.json", "--data", "/nonexistent.csv"}).code == kExitUsage);
}

TEST_CASE("train writes a model and a log") {
  const auto dir = fresh_dir("train");
  make_artifacts(dir);
  CHECK(fs::exists(dir / "kkl_vanderpol.json"));
  const std::string log = read_text_file(dir / "kkl_vanderpol_log.csv");
  CHECK(log.rfind("epoch,train_loss,val_mse,seconds\n", 0) == 0);
  CHECK(log_rows(dir / "kkl_vanderpol_log.csv") == 2);
  // wall time is left out unless requested
  CHECK(log.find(",0\n") != std::string::npos);
  const auto bad_window = cli({"--out", dir.string(), "train", "--data", (dir / "vanderpol.csv").string(),
                               "--t-train", "25", "--p-train", "25"});
  CHECK(bad_window.code == kExitUsage);
  CHECK(bad_window.err.find("exceeds the trajectory length") != std::string::npos);
}

TEST_CASE("predict") {
  const auto dir = fresh_dir("predict");
  make_artifacts(dir);
  const auto model = (dir / "kkl_vanderpol.json").string();
  const auto data = (dir / "vanderpol.csv").string();
  REQUIRE(cli({"--out", dir.string(), "predict", "--model-file", model, "--data", data, "--t", "5", "--p", "10"})
              .code == 0);
  const std::string forecast = read_text_file(dir / "forecast.csv");
  CHECK(forecast.rfind("step,t,y_pred,y_true\n5,1.25,", 0) == 0);
  CHECK(log_rows(dir / "forecast.csv") == 10);

  REQUIRE(cli({"--out", dir.string(), "predict", "--model-file", model, "--data", data, "--t", "5", "--p", "0"})
              .code == 0);
  CHECK(read_text_file(dir / "forecast.csv") == "step,t,y_pred,y_true\n");

  CHECK(cli({"--out", dir.string(), "predict", "--model-file", model, "--data", data, "--t", "5", "--p", "40"})
            .code == kExitUsage);
  CHECK(cli({"--out", dir.string(), "predict", "--model-file", model, "--data", data, "--traj-id", "99"}).code ==
        kExitUsage);
}

TEST_CASE("a model and a dataset from different systems are rejected") {
  const auto dir = fresh_dir("mismatch");
  make_artifacts(dir);
  REQUIRE(cli({"--out", dir.string(), "gen-data", "--system", "lorenz", "--n-train", "4", "--n-val", "2",
               "--n-test", "2", "--length", "20"})
              .code == 0);
  const auto r = cli({"--out", dir.string(), "predict", "--model-file", (dir / "kkl_vanderpol.json").string(),
                      "--data", (dir / "lorenz.csv").string(), "--t", "5", "--p", "5"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("latent dimension 6") != std::string::npos);
  CHECK(r.err.find("state dimension 3") != std::string::npos);
}

TEST_CASE("eval writes the table") {
  const auto dir = fresh_dir("eval");
  make_artifacts(dir);
  REQUIRE(cli({"--out", dir.string(), "eval", "--model-file", (dir / "kkl_vanderpol.json").string(), "--data",
               (dir / "vanderpol.csv").string(), "--t", "5", "--p", "20"})
              .code == 0);
  const std::string table = read_text_file(dir / "mse_table.csv");
  CHECK(table.rfind("model,vanderpol\nkkl,", 0) == 0);
}

TEST_CASE("config files fill unset options only") {
  const auto dir = fresh_dir("config");
  REQUIRE(cli({"--out", dir.string(), "gen-data", "--n-train", "8", "--n-val", "2", "--n-test", "2", "--length",
               "30"})
              .code == 0);
  write_text_file(dir / "run.cfg", "# defaults\nepochs = 1\nbatch-size = 8\nt-train = 10\np-train = 10\nhidden = 8,8\n");
  const auto base = std::vector<std::string>{"--out", dir.string(), "--config", (dir / "run.cfg").string(),
                                             "train", "--data", (dir / "vanderpol.csv").string()};
  REQUIRE(cli(base).code == 0);
  CHECK(log_rows(dir / "kkl_vanderpol_log.csv") == 1);
  auto with_flag = base;
  with_flag.insert(with_flag.end(), {"--epochs", "3"});
  REQUIRE(cli(with_flag).code == 0);
  CHECK(log_rows(dir / "kkl_vanderpol_log.csv") == 3);

  write_text_file(dir / "bad.cfg", "epochs = 1\nwarp = 9\n");
  const auto r = cli({"--out", dir.string(), "--config", (dir / "bad.cfg").string(), "train", "--data",
                      (dir / "vanderpol.csv").string()});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("warp") != std::string::npos);
}

TEST_CASE("reruns with the same flags write identical bytes") {
  const auto a = fresh_dir("repeat_a");
  const auto b = fresh_dir("repeat_b");
  make_artifacts(a);
  make_artifacts(b);
  for (const char* name : {"vanderpol.csv", "vanderpol.meta", "kkl_vanderpol.json", "kkl_vanderpol_log.csv"}) {
    INFO(name);
    REQUIRE(fs::exists(a / name));
    CHECK(read_text_file(a / name) == read_text_file(b / name));
  }
  // thread count does not change results
  const auto model = (a / "kkl_vanderpol.json").string();
  const auto data = (a / "vanderpol.csv").string();
  REQUIRE(cli({"--out", a.string(), "--threads", "1", "eval", "--model-file", model, "--data", data, "--p", "20"})
              .code == 0);
  REQUIRE(cli({"--out", b.string(), "--threads", "4", "eval", "--model-file", model, "--data", data, "--p", "20"})
              .code == 0);
  CHECK(read_text_file(a / "mse_table.csv") == read_text_file(b / "mse_table.csv"));
}

TEST_CASE("bound report and oracle check") {
  const auto dir = fresh_dir("bounds");
  const auto lti = cli({"--out", dir.string(), "bound-report", "--lti"});
  CHECK(lti.code == 0);
  CHECK(lti.out.find("certified") != std::string::npos);
  CHECK(log_rows(dir / "bound_report.csv") == 100);
  make_artifacts(dir);
  CHECK(cli({"--out", dir.string(), "bound-report", "--model-file", (dir / "kkl_vanderpol.json").string(), "--data",
             (dir / "vanderpol.csv").string(), "--t-grid", "5,10", "--p-grid", "0,5,10"})
            .code == 0);
  CHECK(log_rows(dir / "bound_report.csv") == 6);
  CHECK(cli({"--out", dir.string(), "t-oracle-check", "--samples", "3"}).code == 0);
  CHECK(log_rows(dir / "t_oracle_check.csv") == 3);
  CHECK(read_text_file(dir / "t_injectivity.csv").rfind("i,j,t_distance,h_distance\n0,1,", 0) == 0);
  CHECK(log_rows(dir / "t_injectivity.csv") == 3);
  // an unreachable tolerance fails the check
  CHECK(cli({"--out", dir.string(), "t-oracle-check", "--samples", "2", "--tol", "1e-9"}).code == kExitCheckFailed);
}

TEST_CASE("heatmap and noise sweep") {
  const auto dir = fresh_dir("heatmap");
  make_artifacts(dir);
  REQUIRE(cli({"--out", dir.string(), "heatmap", "--model-file", (dir / "kkl_vanderpol.json").string(), "--cells",
               "4", "--t", "5", "--p", "10"})
              .code == 0);
  CHECK(log_rows(dir / "heatmap.csv") == 16);
  REQUIRE(cli({"--out", dir.string(), "noise-sweep", "--sigmas", "0,0.1", "--seeds", "1", "--n-train", "8",
               "--n-val", "2", "--n-test", "2", "--epochs", "1", "--t-train", "5", "--p-train", "5", "--p", "20"})
              .code == 0);
  CHECK(log_rows(dir / "noise_sweep.csv") == 2);
  CHECK(log_rows(dir / "noise_summary.csv") == 2);
}

TEST_CASE("numeric failure exits with its own code") {
  const auto dir = fresh_dir("numeric");
  REQUIRE(cli({"--out", dir.string(), "gen-data", "--n-train", "8", "--n-val", "2", "--n-test", "2", "--length",
               "30"})
              .code == 0);
  // an absurd step sends the output map to overflow within the first epoch
  const auto r = cli({"--out", dir.string(), "train", "--data", (dir / "vanderpol.csv").string(), "--epochs", "5",
                      "--batch-size", "1", "--t-train", "10", "--p-train", "10", "--hidden", "8,8", "--lr",
                      "1e150"});
  CHECK(r.code == kExitNumeric);
  CHECK(r.err.find("numeric failure") != std::string::npos);
}

TEST_CASE("the installed binary returns the same exit codes") {
  const std::string bin = DEEPKKL_CLI_PATH;
  const auto dir = fresh_dir("binary");
  auto status = [&](const std::string& args) {
    const int raw = std::system((bin + " " + args + " > " + (dir / "log.txt").string() + " 2>&1").c_str());
    return WEXITSTATUS(raw);
  };
  CHECK(status("--out " + dir.string() + " bound-report --lti") == 0);
  CHECK(status("gen-data --system pendulum") == 2);
  CHECK(status("") == 2);
}

}  // TEST_SUITE
