#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "capsfield/model/model.hpp"
#include "capsfield/model/train.hpp"

namespace capsfield::cli {

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitNumeric = 3,
  kExitCompatibility = 4,
  kExitGradcheck = 5,
};

/// Fully resolved settings of a train, eval or ablate run.
struct RunConfig {
  /// Dataset directories or manifest files.
  std::vector<std::string> data;
  std::vector<std::string> protocols{"cross_environment:indoor"};
  std::string matching = "cosine";
  model::ModelConfig model;
  model::TrainConfig train;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  bool shuffle_labels = false;
  /// Output directory. Not part of the provenance record, so reruns into
  /// another directory produce identical artifacts.
  std::string output = "capsfield-out";
};

/// Provenance form: every field that influences results, in a fixed order.
nlohmann::json to_json(const RunConfig& c);
/// Strict parse on top of the defaults; unknown fields throw ConfigError.
void apply_json(const nlohmann::json& j, RunConfig& c);

/// Seed precedence: explicit flag, then config file, then CAPSFIELD_SEED, then 0.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> config);

/// Runs one command line (args[0] is the program name) and returns the exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace capsfield::cli
