#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ebr/cli.hpp"
#include "ebr/error.hpp"
#include "support.hpp"

using nlohmann::json;
namespace cli = ebr::cli;
namespace fs = std::filesystem;

namespace {

void write(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  return json::parse(in);
}

const char* kSmallConfig = R"({
  "seed": 3,
  "data": {"train_size": 80, "valid_size": 10, "test_size": 12},
  "energy": {"embed_dim": 8, "hidden_dim": 16},
  "train": {"k": 6, "batch_size": 4, "steps_per_epoch": 5},
  "eval": {"k": 8},
  "analysis": {"k": 5}
})";

int run(const fs::path& out, std::vector<std::string> args) {
  args.push_back("--out");
  args.push_back(out.string());
  return cli::run(args);
}

}  // namespace

TEST_CASE("default config validates and has every section") {
  const auto cfg = cli::default_config();
  CHECK_NOTHROW(cli::validate_config(cfg));
  for (const char* s : {"data", "base", "lm", "energy", "train", "eval", "analysis", "sweep"}) CHECK(cfg.contains(s));
  CHECK(cfg["energy"]["pooling"] == "conv");
  CHECK(cfg["train"]["alpha"] == 10.0);
}

TEST_CASE("merge_config accepts known keys and rejects unknown ones") {
  auto cfg = cli::default_config();
  cli::merge_config(cfg, json::parse(R"({"train": {"alpha": 3, "gamma": 0.5}, "task": "reverse"})"));
  CHECK(cfg["train"]["alpha"] == 3.0);
  CHECK(cfg["train"]["alpha"].is_number_float());
  CHECK(cfg["task"] == "reverse");
  CHECK_THROWS_AS(cli::merge_config(cfg, json::parse(R"({"train": {"beta": 1}})")), ebr::InvalidConfig);
  CHECK_THROWS_AS(cli::merge_config(cfg, json::parse(R"({"bogus": {}})")), ebr::InvalidConfig);
  CHECK_THROWS_AS(cli::merge_config(cfg, json::parse(R"({"train": {"k": "many"}})")), ebr::InvalidConfig);
  CHECK_THROWS_AS(cli::merge_config(cfg, json::parse(R"({"train": {"k": 2.5}})")), ebr::InvalidConfig);
}

TEST_CASE("validate_config range checks") {
  auto cfg = cli::default_config();
  cfg["train"]["gamma"] = 1.5;
  CHECK_THROWS_AS(cli::validate_config(cfg), ebr::InvalidConfig);
  cfg = cli::default_config();
  cfg["train"]["T"] = 0.0;
  CHECK_THROWS_AS(cli::validate_config(cfg), ebr::InvalidConfig);
  cfg = cli::default_config();
  cfg["eval"]["strategy"] = "mbr";
  CHECK_THROWS_AS(cli::validate_config(cfg), ebr::InvalidConfig);
}

TEST_CASE("TOML and JSON config files load") {
  testing::TempDir dir("ebr_cfg");
  write(dir / "a.toml", "seed = 9\n[train]\nalpha = 2.5\ngamma = 0.25\n[analysis]\nlength_bins = [4, 8]\n");
  const auto t = cli::load_config_file(dir / "a.toml");
  auto cfg = cli::default_config();
  cli::merge_config(cfg, t);
  CHECK(cfg["seed"] == 9);
  CHECK(cfg["train"]["alpha"] == 2.5);
  CHECK(cfg["train"]["gamma"] == 0.25);
  CHECK(cfg["analysis"]["length_bins"] == json::array({4, 8}));

  write(dir / "b.json", R"({"energy": {"pooling": "mean"}})");
  cli::merge_config(cfg, cli::load_config_file(dir / "b.json"));
  CHECK(cfg["energy"]["pooling"] == "mean");

  write(dir / "bad.toml", "[train]\nbeta = 1\n");
  CHECK_THROWS_AS(cli::load_config_file(dir / "bad.toml"), ebr::InvalidConfig);
}

TEST_CASE("exit codes") {
  testing::TempDir dir("ebr_exit");
  write(dir / "unknown.json", R"({"train": {"beta": 1}})");
  CHECK(run(dir / "r", {"gen-data", "--config", (dir / "unknown.json").string()}) == cli::kExitConfig);
  CHECK(run(dir / "r", {"train-energy", "--gamma", "1.0", "--gamma", "0.5"}) == cli::kExitUsage);
  CHECK(run(dir / "r", {"gen-data", "--no-such-flag"}) == cli::kExitUsage);
  CHECK(cli::run(std::vector<std::string>{}) == cli::kExitUsage);
  CHECK(run(dir / "r", {"evaluate", "--strategy", "mbr"}) == cli::kExitConfig);
  CHECK(run(dir / "r", {"train-energy", "--gamma", "0.1,0.2"}) == cli::kExitConfig);
  CHECK(run(dir / "r", {"train-energy", "--strategy", "beam"}) == cli::kExitConfig);
  CHECK(run(dir / "fresh", {"train-base"}) == cli::kExitRuntime);
}

TEST_CASE("small pipeline end to end") {
  testing::TempDir dir("ebr_pipeline");
  const auto out = dir / "run";
  write(dir / "small.json", kSmallConfig);
  const std::string cfg = (dir / "small.json").string();

  REQUIRE(run(out, {"gen-data", "--config", cfg}) == 0);
  for (const char* f : {"vocab.json", "task.json", "data/train.src", "data/test.ref", "config.json",
                        "snapshots/gen-data.json"})
    CHECK(fs::exists(out / f));
  REQUIRE(run(out, {"train-base"}) == 0);
  REQUIRE(run(out, {"train-lm"}) == 0);
  REQUIRE(run(out, {"train-energy"}) == 0);
  CHECK(fs::exists(out / "energy.ckpt"));
  CHECK(fs::exists(out / "loss_trace.csv"));
  REQUIRE(run(out, {"train-energy", "--strategy", "nce-ebr"}) == 0);
  CHECK(fs::exists(out / "nce_energy.ckpt"));

  // Settings from the first stage persist through the run directory.
  CHECK(read_json(out / "config.json")["data"]["train_size"] == 80);

  REQUIRE(run(out, {"evaluate", "--strategy", "ebr", "--k", "100"}) == 0);
  const auto report = read_json(out / "reports/ebr.json");
  CHECK(report["strategy"] == "ebr");
  CHECK(report["k"] == 100);
  CHECK(report["per_sentence"].size() == 12);

  REQUIRE(run(out, {"evaluate", "--strategy", "all"}) == 0);
  for (const char* s : {"beam", "sample", "lm", "mlm", "ebr", "nce-ebr", "oracle"})
    CHECK(fs::exists(out / "reports" / (std::string(s) + ".json")));
  std::ifstream summary(out / "reports/summary.csv");
  std::string header;
  std::getline(summary, header);
  CHECK(header == "strategy,bleu,mean_seconds_per_sentence");

  REQUIRE(run(out, {"analyze"}) == 0);
  const auto analysis = read_json(out / "analysis/summary.json");
  CHECK(analysis.contains("spearman_energy"));
  CHECK(analysis["shuffle"]["sentences"] == 12);
  CHECK(fs::exists(out / "analysis/spearman_base_logprob.dat"));

  REQUIRE(run(out, {"sweep", "--gamma", "0,1"}) == 0);
  const auto sweep = read_json(out / "sweep/summary.json");
  REQUIRE(sweep["rows"].size() == 2);
  CHECK(sweep["rows"][1]["gamma"] == 1.0);
  CHECK(fs::exists(out / "sweep/gamma_0/report.json"));
  CHECK(fs::exists(out / "sweep/gamma_1/energy.ckpt"));

  REQUIRE(run(out, {"rerank", "--strategy", "sample"}) == 0);
  const auto rr = read_json(out / "rerank/sample.json");
  CHECK(rr["per_sentence"].size() == 12);
  CHECK(rr.contains("bleu"));

  std::ifstream src(out / "data/test.src");
  std::string first, second;
  std::getline(src, first);
  std::getline(src, second);
  write(dir / "in.txt", first + "\n" + second + "\n");
  REQUIRE(run(out, {"rerank", "--strategy", "ebr", "--input", (dir / "in.txt").string()}) == 0);
  const auto ri = read_json(out / "rerank/ebr.json");
  CHECK(ri["per_sentence"].size() == 2);
  CHECK(ri["per_sentence"][0]["src"] == first);
  CHECK_FALSE(ri.contains("bleu"));
}
