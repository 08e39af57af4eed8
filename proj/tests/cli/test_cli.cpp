#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "capsfield/cli/cli.hpp"
#include "capsfield/errors.hpp"
#include "capsfield/lightfield/dataset.hpp"
#include "capsfield/model/config_io.hpp"
#include "capsfield/numerics/tensor_io.hpp"
#include "support/model_fixtures.hpp"
#include "support/temp_dir.hpp"

namespace fs = std::filesystem;
using namespace capsfield;
using capsfield::cli::run_cli;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "capsfield");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::string small_recipe_json(int subjects) {
  lightfield::DatasetRecipe r;
  r.subjects = subjects;
  r.views = 3;
  r.height = r.width = 12;
  r.disparity = {1.0, 1.0, 1.0};
  return lightfield::recipe_to_json(r);
}

/// Run configuration with the tiny model and a short schedule.
std::string tiny_run_config(const fs::path& data, std::size_t epochs = 2) {
  cli::RunConfig c;
  c.data = {data.string()};
  c.model = testing::tiny_config();
  c.train.epochs = epochs;
  c.train.batch_size = 16;
  c.train.optimizer.learning_rate = 3e-3;
  c.seed = 11;
  return cli::to_json(c).dump(2);
}

std::size_t count_lines_not_starting_with(const std::string& text, char c) {
  std::istringstream in(text);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);)
    if (!line.empty() && line[0] != c) ++n;
  return n;
}

/// Generates a small dataset under `dir` and returns its path.
fs::path generated(const fs::path& dir, int subjects, const std::string& name = "data") {
  write(dir / (name + ".recipe.json"), small_recipe_json(subjects));
  const Result r = run({"generate", "--recipe", (dir / (name + ".recipe.json")).string(), "--out",
                        (dir / name).string(), "--seed", "3"});
  REQUIRE(r.code == 0);
  return dir / name;
}

}  // namespace

TEST_CASE("seed precedence: flag, then config, then CAPSFIELD_SEED, then zero") {
  ::unsetenv("CAPSFIELD_SEED");
  CHECK(cli::resolve_seed(std::nullopt, std::nullopt) == 0);
  ::setenv("CAPSFIELD_SEED", "42", 1);
  CHECK(cli::resolve_seed(std::nullopt, std::nullopt) == 42);
  CHECK(cli::resolve_seed(std::nullopt, 7) == 7);
  CHECK(cli::resolve_seed(9, 7) == 9);
  ::setenv("CAPSFIELD_SEED", "4x", 1);
  CHECK_THROWS_AS(cli::resolve_seed(std::nullopt, std::nullopt), ConfigError);
  ::unsetenv("CAPSFIELD_SEED");
}

TEST_CASE("run configuration round-trips through JSON and rejects unknown fields") {
  cli::RunConfig c;
  c.data = {"a", "b"};
  c.protocols = {"cross_distance:close", "subject_independent"};
  c.matching = "euclidean";
  c.seed = 77;
  c.shuffle_labels = true;
  c.model = testing::tiny_config();
  c.train.epochs = 3;
  cli::RunConfig back;
  cli::apply_json(cli::to_json(c), back);
  CHECK(cli::to_json(back) == cli::to_json(c));
  CHECK_FALSE(cli::to_json(c).contains("output"));

  cli::RunConfig d;
  cli::apply_json(nlohmann::json{{"data", "single"}}, d);
  CHECK(d.data == std::vector<std::string>{"single"});
  CHECK_THROWS_AS(cli::apply_json(nlohmann::json{{"dta", "x"}}, d), ConfigError);
  CHECK_THROWS_AS(cli::apply_json(nlohmann::json{{"seed", "x"}}, d), ConfigError);
  CHECK_THROWS_AS(cli::apply_json(nlohmann::json::array(), d), ConfigError);
}

TEST_CASE("argument errors map to exit code 2") {
  CHECK(run({}).code == cli::kExitConfig);
  CHECK(run({"frobnicate"}).code == cli::kExitConfig);
  CHECK(run({"train"}).code == cli::kExitConfig);
  CHECK(run({"train", "--data", "x", "--protocol", "cross_nothing"}).code == cli::kExitConfig);
  CHECK(run({"train", "--data", "x", "--config", "/nonexistent/config.json"}).code == cli::kExitConfig);
  CHECK(run({"gradcheck", "--scale", "huge"}).code == cli::kExitConfig);
  CHECK(run({"--help"}).code == cli::kExitOk);
}

TEST_CASE("generate writes a manifest and rejects malformed recipes") {
  testing::TempDir tmp;
  const fs::path data = generated(tmp.path(), 2);
  CHECK(fs::exists(data / "manifest.json"));
  const auto m = lightfield::load_manifest(data);
  CHECK(m.entries.size() == 72);

  write(tmp.path() / "bad.json", "{\"subjects\": 0}");
  CHECK(run({"generate", "--recipe", (tmp.path() / "bad.json").string(), "--out", (tmp.path() / "x").string()}).code ==
        cli::kExitConfig);
  write(tmp.path() / "broken.json", "{");
  CHECK(run({"generate", "--recipe", (tmp.path() / "broken.json").string(), "--out", (tmp.path() / "y").string()})
            .code == cli::kExitConfig);
}

TEST_CASE("train then eval twice yields byte-identical metrics") {
  testing::TempDir tmp;
  const fs::path data = generated(tmp.path(), 3);
  write(tmp.path() / "run.json", tiny_run_config(data));
  const std::string cfg = (tmp.path() / "run.json").string();

  std::vector<std::string> metrics, logs;
  for (const char* out : {"a", "b"}) {
    const std::string dir = (tmp.path() / out).string();
    const Result t = run({"train", "--config", cfg, "--out", dir});
    REQUIRE_MESSAGE(t.code == 0, t.err);
    CHECK(fs::exists(fs::path(dir) / "model.ckpt"));
    CHECK(fs::exists(fs::path(dir) / "run_config.json"));
    const Result e = run({"eval", "--config", cfg, "--out", dir});
    REQUIRE_MESSAGE(e.code == 0, e.err);
    metrics.push_back(slurp(fs::path(dir) / "metrics.csv"));
    logs.push_back(slurp(fs::path(dir) / "train_log.csv"));
  }
  CHECK(metrics[0] == metrics[1]);
  CHECK(logs[0] == logs[1]);
  CHECK(metrics[0].find("# seed: 11") != std::string::npos);
  CHECK(count_lines_not_starting_with(logs[0], '#') == 3);

  // The saved run configuration reproduces the run when fed back in.
  const std::string saved = (tmp.path() / "a" / "run_config.json").string();
  const Result again = run({"eval", "--config", saved, "--out", (tmp.path() / "a").string()});
  REQUIRE(again.code == 0);
  CHECK(slurp(tmp.path() / "a" / "metrics.csv") == metrics[0]);

  // A different seed changes the recorded provenance.
  const Result other = run({"eval", "--config", cfg, "--out", (tmp.path() / "a").string(), "--seed", "12"});
  REQUIRE(other.code == 0);
  CHECK(slurp(tmp.path() / "a" / "metrics.csv") != metrics[0]);
}

TEST_CASE("routing and loss flags land in the recorded configuration") {
  testing::TempDir tmp;
  const fs::path data = generated(tmp.path(), 2);
  write(tmp.path() / "run.json", tiny_run_config(data, 1));
  const std::string out = (tmp.path() / "out").string();
  REQUIRE(run({"train", "--config", (tmp.path() / "run.json").string(), "--out", out, "--detach-routing",
               "--joint-loss", "--epochs", "2", "--lr", "0.01", "--batch-size", "8"})
              .code == 0);
  const auto j = nlohmann::json::parse(slurp(fs::path(out) / "run_config.json"));
  CHECK(j["model"]["capsule"]["detach_routing"] == true);
  CHECK(j["train"]["joint_loss"] == true);
  CHECK(j["train"]["epochs"] == 2);
  CHECK(j["train"]["learning_rate"] == 0.01);
  CHECK(j["train"]["batch_size"] == 8);
  CHECK(j["seed"] == 11);
}

TEST_CASE("eval against a dataset with another class vocabulary exits 4") {
  testing::TempDir tmp;
  const fs::path three = generated(tmp.path(), 3, "three");
  const fs::path four = generated(tmp.path(), 4, "four");
  write(tmp.path() / "run.json", tiny_run_config(three, 1));
  const std::string out = (tmp.path() / "out").string();
  REQUIRE(run({"train", "--config", (tmp.path() / "run.json").string(), "--out", out}).code == 0);
  const Result e =
      run({"eval", "--config", (tmp.path() / "run.json").string(), "--out", out, "--data", four.string()});
  CHECK(e.code == cli::kExitCompatibility);
  CHECK_FALSE(e.err.empty());
  CHECK(run({"eval", "--data", three.string(), "--checkpoint", (tmp.path() / "missing.ckpt").string()}).code ==
        cli::kExitCompatibility);
}

TEST_CASE("export-embeddings writes one tensor per sample plus labels") {
  testing::TempDir tmp;
  const fs::path data = generated(tmp.path(), 2);
  write(tmp.path() / "run.json", tiny_run_config(data, 1));
  const std::string out = (tmp.path() / "out").string();
  REQUIRE(run({"train", "--config", (tmp.path() / "run.json").string(), "--out", out}).code == 0);
  const fs::path exp = tmp.path() / "emb";
  const Result r = run({"export-embeddings", "--checkpoint", out + "/model.ckpt", "--data", data.string(), "--out",
                        exp.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(exp / "embeddings")) {
    ++files;
    if (files == 1) {
      const auto cfg = testing::tiny_config();
      CHECK(numerics::load_tensor(e.path()).size() == cfg.capsule.num_secondary * cfg.capsule.capsule_size);
    }
  }
  CHECK(files == 72);
  CHECK(count_lines_not_starting_with(slurp(exp / "labels.csv"), '#') == 73);

  write(tmp.path() / "garbage.ckpt", "not a checkpoint");
  CHECK(run({"export-embeddings", "--checkpoint", (tmp.path() / "garbage.ckpt").string(), "--data", data.string(),
             "--out", (tmp.path() / "e2").string()})
            .code == cli::kExitCompatibility);
}

TEST_CASE("ablate writes four rows per protocol") {
  testing::TempDir tmp;
  const fs::path data = generated(tmp.path(), 2);
  write(tmp.path() / "run.json", tiny_run_config(data, 1));
  const std::string out = (tmp.path() / "out").string();
  const Result r = run({"ablate", "--config", (tmp.path() / "run.json").string(), "--out", out, "--protocol",
                        "cross_environment:indoor", "--protocol", "cross_distance:close"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(count_lines_not_starting_with(slurp(fs::path(out) / "ablation.csv"), '#') == 1 + 8);
}

TEST_CASE("gradcheck exits 0 when gradients agree and 5 when squash is corrupted") {
  const Result ok = run({"gradcheck", "--scale", "unit"});
  CHECK(ok.code == cli::kExitOk);
  CHECK(ok.out.find("gradcheck passed") != std::string::npos);
  const Result bad = run({"gradcheck", "--scale", "unit", "--corrupt", "squash"});
  CHECK(bad.code == cli::kExitGradcheck);
  CHECK(bad.out.find("FAIL") != std::string::npos);
}
