#include <doctest.h>

#include <json.hpp>

#include "fixtures.hpp"
#include "lazyconv/cli.hpp"
#include "lazyconv/model_io.hpp"

using namespace lazyconv;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) { return cli::run(args); }

}  // namespace

TEST_CASE("command-line workflow end to end") {
  const fs::path d = fixture::temp_dir("cli");
  const std::string D = d.string();
  REQUIRE(run({"gen-synthetic", "--out", D, "--input", "3,12,12", "--filters", "4,8,8,16", "--dense", "16,5",
               "--samples", "60", "--prototypes", "5", "--seed", "9"}) == 0);
  CHECK(fs::exists(d / "model" / "manifest.json"));
  CHECK(fs::exists(d / "data" / "data.bin"));

  const std::string model = D + "/model", data = D + "/data";
  REQUIRE(run({"trace", "--model", model, "--data", data, "--out", D + "/traces"}) == 0);
  REQUIRE(run({"train-predictor", "--traces", D + "/traces", "--out", D + "/pred", "--epochs", "20"}) == 0);
  CHECK(fs::exists(d / "pred" / "train_report.json"));

  REQUIRE(run({"eval", "--model", model, "--data", data, "--out", D + "/eval", "--reps", "0"}) == 0);
  const auto cost = nlohmann::json::parse(io::read_text(d / "eval" / "cost_report.json"));
  CHECK(cost["accuracy"].get<double>() == 1.0);

  REQUIRE(run({"eval", "--model", model, "--data", data, "--predictors", D + "/pred", "--policy", "all-0.5", "--out",
               D + "/eval50", "--reps", "0"}) == 0);

  REQUIRE(run({"sweep", "--model", model, "--data", data, "--out", D + "/sweep", "--layer", "conv2_1"}) == 0);
  CHECK(io::read_text(d / "sweep" / "sensitivity_conv2_1.csv").rfind("fraction,accuracy\n", 0) == 0);
  REQUIRE(run({"sweep", "--model", model, "--data", data, "--out", D + "/sweepp", "--mode", "predicted",
               "--predictors", D + "/pred"}) == 0);
  CHECK_FALSE(fs::exists(d / "sweepp" / "sensitivity_conv1_1.csv"));
  CHECK(fs::exists(d / "sweepp" / "sensitivity_conv2_2.csv"));

  REQUIRE(run({"bench", "--model", model, "--data", data, "--out", D + "/bench", "--layer", "conv2_2", "--reps",
               "5"}) == 0);
  CHECK(fs::exists(d / "bench" / "bench_conv2_2.csv"));

  for (const char* out : {"/pa", "/pb"})
    REQUIRE(run({"pareto", "--model", model, "--data", data, "--predictors", D + "/pred", "--out", D + out, "--pop",
                 "8", "--gens", "2", "--subset", "20"}) == 0);
  CHECK(io::read_text(d / "pa" / "pareto.csv") == io::read_text(d / "pb" / "pareto.csv"));
  CHECK(io::read_text(d / "pa" / "front.csv") == io::read_text(d / "pb" / "front.csv"));

  REQUIRE(run({"mem-report", "--model", model, "--data", data, "--predictors", D + "/pred", "--policy", "all-0.5",
               "--out", D + "/mem", "--subset", "10"}) == 0);
  const auto mem = nlohmann::json::parse(io::read_text(d / "mem" / "memory_report.json"));
  CHECK(mem["max_abs_diff"].get<double>() <= 1e-6);

  const auto manifest = nlohmann::json::parse(io::read_text(d / "pa" / "run_manifest.json"));
  CHECK(manifest["command"] == "pareto");
  CHECK(manifest["flags"]["pop"] == "8");
  CHECK(manifest["flags"]["threads"] == "1");
  CHECK(manifest["seeds"]["seed"] == 42);
  CHECK(manifest["inputs"].size() >= 4);
  CHECK(manifest["extra"]["subset"].size() == 20);
  CHECK(manifest.contains("started"));
  CHECK(manifest.contains("tool_version"));
}

TEST_CASE("command-line errors return nonzero") {
  const fs::path d = fixture::temp_dir("cli_err");
  CHECK(run({}) != 0);
  CHECK(run({"frobnicate"}) != 0);
  CHECK(run({"trace", "--model", "x"}) != 0);
  CHECK(run({"trace", "--model", (d / "none").string(), "--data", (d / "none").string(), "--out", d.string()}) == 1);
  CHECK(run({"sweep", "--model", "m", "--data", "d", "--out", d.string(), "--mode", "sideways"}) != 0);
}

TEST_CASE("predictors trained for another network are rejected") {
  const fs::path d = fixture::temp_dir("cli_fp");
  const std::string D = d.string();
  REQUIRE(run({"gen-synthetic", "--out", D + "/a", "--input", "3,12,12", "--filters", "4,8", "--pool-after", "2",
               "--dense", "5", "--samples", "30", "--seed", "1"}) == 0);
  REQUIRE(run({"gen-synthetic", "--out", D + "/b", "--input", "3,12,12", "--filters", "4,8", "--pool-after", "2",
               "--dense", "5", "--samples", "30", "--seed", "2"}) == 0);
  REQUIRE(run({"trace", "--model", D + "/a/model", "--data", D + "/a/data", "--out", D + "/t"}) == 0);
  REQUIRE(run({"train-predictor", "--traces", D + "/t", "--out", D + "/p", "--epochs", "5"}) == 0);
  CHECK(run({"eval", "--model", D + "/b/model", "--data", D + "/b/data", "--predictors", D + "/p", "--policy",
             "all-0.5", "--out", D + "/e", "--reps", "0"}) == 1);
}
