#include "capsfield/cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "capsfield/diagnostics/gradcheck_suite.hpp"
#include "capsfield/errors.hpp"
#include "capsfield/lightfield/dataset.hpp"
#include "capsfield/model/checkpoint.hpp"
#include "capsfield/model/config_io.hpp"
#include "capsfield/numerics/parallel.hpp"
#include "capsfield/numerics/tensor_io.hpp"
#include "capsfield/protocols/protocols.hpp"

namespace capsfield::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string format_fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("failed writing " + path.string());
}

/// Options shared by train, eval and ablate.
struct RunOptions {
  std::string config;
  std::vector<std::string> data;
  std::vector<std::string> protocols;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> learning_rate;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> jobs;
  std::optional<std::string> matching;
  bool shuffle_labels = false;
  bool detach_routing = false;
  bool joint_loss = false;
};

void add_run_options(CLI::App& cmd, RunOptions& o) {
  cmd.add_option("--config", o.config, "JSON run configuration");
  cmd.add_option("--data", o.data, "Dataset directory or manifest (repeatable; replaces the config list)");
  cmd.add_option("--protocol", o.protocols, "Protocol, e.g. cross_environment:indoor (repeatable)");
  cmd.add_option("--out", o.out, "Output directory");
  cmd.add_option("--seed", o.seed, "Root seed (falls back to the config, then CAPSFIELD_SEED)");
  cmd.add_option("--epochs", o.epochs, "Training epochs");
  cmd.add_option("--lr", o.learning_rate, "RMSProp learning rate");
  cmd.add_option("--batch-size", o.batch_size, "Mini-batch size");
  cmd.add_option("--jobs", o.jobs, "Worker threads (results do not depend on it)");
  cmd.add_option("--matching", o.matching, "Subject-independent matching: cosine or euclidean");
  cmd.add_flag("--shuffle-labels", o.shuffle_labels, "Permute training labels (chance-level control)");
  cmd.add_flag("--detach-routing", o.detach_routing, "Stop gradients through the routing logit updates");
  cmd.add_flag("--joint-loss", o.joint_loss, "Train on the fused probabilities instead of per-branch losses");
}

RunConfig resolve(const RunOptions& o) {
  RunConfig c;
  std::optional<std::uint64_t> config_seed;
  if (!o.config.empty()) {
    if (!fs::is_regular_file(o.config)) throw ConfigError("config file not found: " + o.config);
    json j;
    try {
      j = json::parse(read_text(o.config));
    } catch (const json::exception& e) {
      throw ConfigError(o.config + ": " + e.what());
    }
    try {
      if (j.is_object() && j.contains("seed")) config_seed = j["seed"].get<std::uint64_t>();
      apply_json(j, c);
    } catch (const json::exception& e) {
      throw ConfigError(o.config + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(o.config + ": " + e.what());
    }
  }
  if (!o.data.empty()) c.data = o.data;
  if (!o.protocols.empty()) c.protocols = o.protocols;
  if (!o.out.empty()) c.output = o.out;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.learning_rate) c.train.optimizer.learning_rate = *o.learning_rate;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.jobs) c.jobs = *o.jobs;
  if (o.matching) c.matching = *o.matching;
  if (o.shuffle_labels) c.shuffle_labels = true;
  if (o.detach_routing) c.model.capsule.detach_routing = true;
  if (o.joint_loss) c.train.joint_loss = true;
  c.seed = resolve_seed(o.seed, config_seed);
  c.train.seed = c.seed;
  if (c.jobs == 0) throw ConfigError("--jobs must be at least 1");
  c.train.jobs = c.jobs;
  if (c.data.empty()) throw ConfigError("no dataset given (--data or \"data\" in the config)");
  if (c.protocols.empty()) throw ConfigError("no protocol given");
  for (const auto& p : c.protocols) protocols::parse_protocol(p);
  protocols::parse_matching(c.matching);
  c.train.validate();
  return c;
}

protocols::Catalog load_catalog(RunConfig& c) {
  std::vector<lightfield::Manifest> manifests;
  for (const auto& path : c.data) manifests.push_back(lightfield::load_manifest(path));
  protocols::Catalog catalog(std::move(manifests));
  c.model.views = catalog.views();
  c.model.height = catalog.height();
  c.model.width = catalog.width();
  c.model.channels = catalog.channels();
  c.model.validate();
  return catalog;
}

protocols::ProtocolSpec spec_of(const RunConfig& c, const std::string& text) {
  protocols::ProtocolSpec s = protocols::parse_protocol(text);
  s.matching = protocols::parse_matching(c.matching);
  return s;
}

protocols::RunSettings settings_of(const RunConfig& c, std::ostream* log) {
  protocols::RunSettings s;
  s.model = c.model;
  s.train = c.train;
  s.seed = c.seed;
  s.jobs = c.jobs;
  s.shuffle_labels = c.shuffle_labels;
  s.config_json = to_json(c).dump();
  if (log)
    s.on_epoch = [log](const model::EpochLog& e) {
      *log << "epoch " << e.epoch << "  loss " << format_fixed(e.train_loss) << "  train_acc "
           << format_fixed(e.train_accuracy) << "  val_acc " << format_fixed(e.validation_accuracy) << '\n';
    };
  return s;
}

std::string provenance_header(const std::string& title, const RunConfig& c) {
  const std::string cfg = to_json(c).dump();
  return "# " + title + "\n# seed: " + std::to_string(c.seed) + "\n# config_fingerprint: " +
         protocols::fingerprint(cfg) + "\n# run_config: " + cfg + "\n";
}

std::string train_log_csv(const RunConfig& c, const model::TrainResult& r) {
  std::string out = provenance_header("capsfield train log", c);
  out += "# best_epoch: " + std::to_string(r.best_epoch) + "\n";
  out += "epoch,train_loss,first_batch_loss,train_accuracy,validation_accuracy,validation_loss\n";
  for (const auto& e : r.log)
    out += std::to_string(e.epoch) + ',' + format_fixed(e.train_loss) + ',' + format_fixed(e.first_batch_loss) + ',' +
           format_fixed(e.train_accuracy) + ',' + format_fixed(e.validation_accuracy) + ',' +
           format_fixed(e.validation_loss) + '\n';
  return out;
}

int cmd_generate(const std::string& recipe_path, const std::string& out_dir, std::optional<std::uint64_t> seed,
                 std::size_t jobs, std::ostream& out) {
  const lightfield::DatasetRecipe recipe = lightfield::load_recipe(recipe_path);
  const std::uint64_t s = resolve_seed(seed, std::nullopt);
  const auto start = std::chrono::steady_clock::now();
  const lightfield::Manifest m = lightfield::generate_dataset(recipe, s, out_dir, jobs);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << "generated " << m.entries.size() << " samples (" << m.subjects().size() << " subjects, "
      << lightfield::to_string(m.dataset) << ", " << m.views << "x" << m.views << " views of " << m.height << "x"
      << m.width << ", seed " << s << ") in " << out_dir << " [" << format_fixed(secs) << " s]\n";
  return kExitOk;
}

int cmd_train(const RunOptions& o, std::ostream& out) {
  RunConfig c = resolve(o);
  const protocols::Catalog catalog = load_catalog(c);
  const protocols::ProtocolSpec spec = spec_of(c, c.protocols.front());
  const protocols::SplitPlan plan = protocols::build_split(catalog, spec, c.seed, c.train.validation_fraction);
  out << "training on " << spec.name() << ": " << plan.train.size() << " train, " << plan.validation.size()
      << " validation, " << plan.vocabulary.size() << " classes\n";
  const protocols::TrainedPlan trained = protocols::train_plan(catalog, plan, settings_of(c, &out));
  const fs::path dir = c.output;
  fs::create_directories(dir);
  model::save_checkpoint(trained.model, dir / "model.ckpt");
  write_text(dir / "train_log.csv", train_log_csv(c, trained.training));
  write_text(dir / "run_config.json", to_json(c).dump(2) + "\n");
  out << "best epoch " << trained.training.best_epoch << (trained.training.early_stopped ? " (early stop)" : "")
      << "; wrote " << (dir / "model.ckpt").string() << '\n';
  return kExitOk;
}

int cmd_eval(const RunOptions& o, const std::string& checkpoint, std::ostream& out) {
  RunConfig c = resolve(o);
  const protocols::Catalog catalog = load_catalog(c);
  const fs::path ckpt = checkpoint.empty() ? fs::path(c.output) / "model.ckpt" : fs::path(checkpoint);
  const model::CapsFieldModel m = model::load_checkpoint(ckpt);
  std::vector<protocols::MetricsReport> reports;
  for (const auto& text : c.protocols) {
    const protocols::ProtocolSpec spec = spec_of(c, text);
    const protocols::SplitPlan plan = protocols::build_split(catalog, spec, c.seed, c.train.validation_fraction);
    protocols::MetricsReport r = protocols::evaluate_plan(catalog, plan, m, c.jobs);
    r.seed = c.seed;
    r.fingerprint = protocols::fingerprint(to_json(c).dump());
    out << r.protocol << ": average rank-1 " << format_fixed(r.average) << '\n';
    reports.push_back(std::move(r));
  }
  const fs::path path = fs::path(c.output) / "metrics.csv";
  write_text(path, protocols::reports_to_csv(reports, to_json(c).dump()));
  out << "wrote " << path.string() << '\n';
  return kExitOk;
}

int cmd_ablate(const RunOptions& o, std::ostream& out) {
  RunConfig c = resolve(o);
  const protocols::Catalog catalog = load_catalog(c);
  std::vector<protocols::ProtocolSpec> specs;
  for (const auto& text : c.protocols) specs.push_back(spec_of(c, text));
  const protocols::AblationTable t = protocols::run_ablation(catalog, specs, settings_of(c, nullptr));
  std::vector<protocols::MetricsReport> rows;
  for (const auto& row : t.reports)
    for (const auto& r : row) {
      out << r.variant << " " << r.protocol << ": "
          << (r.failure ? "failed: " + *r.failure : "average rank-1 " + format_fixed(r.average)) << '\n';
      rows.push_back(r);
    }
  const fs::path path = fs::path(c.output) / "ablation.csv";
  write_text(path, protocols::reports_to_csv(rows, to_json(c).dump()));
  out << "wrote " << path.string() << '\n';
  return kExitOk;
}

int cmd_gradcheck(const std::string& scale, const std::string& corrupt, std::optional<std::uint64_t> seed,
                  std::ostream& out) {
  const auto s = diagnostics::parse_grad_scale(scale);
  const auto corruption = diagnostics::parse_corruption(corrupt);
  const auto start = std::chrono::steady_clock::now();
  const auto checks = diagnostics::run_gradcheck_suite(s, corruption, resolve_seed(seed, std::nullopt));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const auto& c : checks) {
    char line[160];
    std::snprintf(line, sizeof line, "%-22s max_rel_err %.3e  %s\n", c.name.c_str(), c.report.max_relative_error,
                  c.report.passed() ? "ok" : "FAIL");
    out << line;
  }
  const bool ok = diagnostics::all_passed(checks);
  out << (ok ? "gradcheck passed" : "gradcheck FAILED") << " (tolerance " << diagnostics::kGradTolerance << ", "
      << format_fixed(secs) << " s)\n";
  return ok ? kExitOk : kExitGradcheck;
}

int cmd_export(const std::string& checkpoint, const std::vector<std::string>& data, const std::string& out_dir,
               std::size_t jobs, std::ostream& out) {
  if (jobs == 0) throw ConfigError("--jobs must be at least 1");
  model::CapsFieldModel m;
  try {
    m = model::load_checkpoint(checkpoint);
  } catch (const FormatError& e) {
    throw CompatibilityError(std::string("unreadable checkpoint: ") + e.what());
  }
  std::vector<lightfield::Manifest> manifests;
  for (const auto& path : data) manifests.push_back(lightfield::load_manifest(path));
  const protocols::Catalog catalog(std::move(manifests));
  model::check_compatible(m, catalog.views(), catalog.height(), catalog.width(), catalog.channels());

  const auto& entries = catalog.entries();
  std::vector<model::Example> examples(entries.size());
  numerics::parallel_for(entries.size(), jobs, [&](std::size_t i) {
    const auto& e = *entries[i];
    examples[i] = model::make_example(lightfield::fetch_sample(catalog.manifest_of(e.meta.sample_id), e), 0);
    examples[i].id = e.meta.sample_id;
  });
  std::vector<const model::Example*> ptrs;
  for (const auto& e : examples) ptrs.push_back(&e);
  const model::BatchInference inf = model::infer(m, ptrs, 32, jobs);

  const fs::path dir = out_dir;
  fs::create_directories(dir / "embeddings");
  std::string labels = "# capsfield embeddings\n# checkpoint_seed: " + std::to_string(m.seed) +
                       "\n# checkpoint_epoch: " + std::to_string(m.epoch) +
                       "\n# model: " + model::to_json(m.config).dump() +
                       "\nid,file,subject,expression,class_index,class,predicted\n";
  auto class_index = [&](const lightfield::ManifestEntry& e) -> long {
    char subject[16];
    std::snprintf(subject, sizeof subject, "s%03d", e.meta.subject);
    for (const std::string& key : {std::string(subject), std::string(lightfield::to_string(e.meta.expression))})
      for (std::size_t k = 0; k < m.vocabulary.size(); ++k)
        if (m.vocabulary[k] == key) return static_cast<long>(k);
    return -1;
  };
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = *entries[i];
    const std::string file = "embeddings/" + e.meta.sample_id + ".cft";
    numerics::save_tensor(dir / file, inf.embeddings[i], numerics::StorageType::f64);
    const long idx = class_index(e);
    labels += e.meta.sample_id + ',' + file + ',' + std::to_string(e.meta.subject) + ',' +
              std::string(lightfield::to_string(e.meta.expression)) + ',' + std::to_string(idx) + ',' +
              (idx >= 0 ? m.vocabulary[static_cast<std::size_t>(idx)] : std::string()) + ',' +
              m.vocabulary[inf.predictions[i].label] + '\n';
  }
  write_text(dir / "labels.csv", labels);
  const std::size_t dim = inf.embeddings.empty() ? 0 : inf.embeddings.front().size();
  out << "exported " << entries.size() << " embeddings of length " << dim << " to " << dir.string() << '\n';
  return kExitOk;
}

}  // namespace

json to_json(const RunConfig& c) {
  return json{{"data", c.data},
              {"protocols", c.protocols},
              {"matching", c.matching},
              {"seed", c.seed},
              {"shuffle_labels", c.shuffle_labels},
              {"model", model::to_json(c.model)},
              {"train", model::to_json(c.train)}};
}

void apply_json(const json& j, RunConfig& c) {
  if (!j.is_object()) throw ConfigError("run configuration must be a JSON object");
  static const std::vector<std::string> known{"data",  "protocols", "matching", "seed",  "shuffle_labels",
                                              "model", "train",     "jobs",     "output"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown run configuration field '" + key + "'");
  try {
    if (j.contains("data")) {
      c.data = j["data"].is_string() ? std::vector<std::string>{j["data"].get<std::string>()}
                                     : j["data"].get<std::vector<std::string>>();
    }
    if (j.contains("protocols")) c.protocols = j["protocols"].get<std::vector<std::string>>();
    if (j.contains("matching")) c.matching = j["matching"].get<std::string>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("shuffle_labels")) c.shuffle_labels = j["shuffle_labels"].get<bool>();
    if (j.contains("jobs")) c.jobs = j["jobs"].get<std::size_t>();
    if (j.contains("output")) c.output = j["output"].get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run configuration: ") + e.what());
  }
  if (j.contains("model")) model::apply_json(j["model"], c.model);
  if (j.contains("train")) model::apply_json(j["train"], c.train);
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> config) {
  if (flag) return *flag;
  if (config) return *config;
  if (const char* env = std::getenv("CAPSFIELD_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0') throw ConfigError(std::string("CAPSFIELD_SEED is not an unsigned integer: '") + env + "'");
    return v;
  }
  return 0;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CapsField: capsule routing over light-field view sequences"};
  app.require_subcommand(1);

  std::string recipe, gen_out;
  std::optional<std::uint64_t> gen_seed;
  std::size_t gen_jobs = 1;
  auto* generate = app.add_subcommand("generate", "Render a synthetic light-field dataset");
  generate->add_option("--recipe", recipe, "Recipe JSON")->required();
  generate->add_option("--out", gen_out, "Dataset directory")->required();
  generate->add_option("--seed", gen_seed, "Data seed (falls back to CAPSFIELD_SEED)");
  generate->add_option("--jobs", gen_jobs, "Worker threads");

  RunOptions train_opts, eval_opts, ablate_opts;
  auto* train = app.add_subcommand("train", "Train a model under a protocol's split");
  add_run_options(*train, train_opts);
  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint under one or more protocols");
  add_run_options(*eval, eval_opts);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/model.ckpt)");
  auto* ablate = app.add_subcommand("ablate", "Run the four ablation variants on every protocol");
  add_run_options(*ablate, ablate_opts);

  std::string scale = "unit", corrupt;
  std::optional<std::uint64_t> gc_seed;
  auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  gradcheck->add_option("--scale", scale, "unit or toy-model");
  gradcheck->add_option("--seed", gc_seed, "Seed of the random test inputs");
  gradcheck->add_option("--corrupt", corrupt)->group("");

  std::string export_ckpt, export_out;
  std::vector<std::string> export_data;
  std::size_t export_jobs = 1;
  auto* exporter = app.add_subcommand("export-embeddings", "Write the capsule embedding of every sample");
  exporter->add_option("--checkpoint", export_ckpt, "Checkpoint")->required();
  exporter->add_option("--data", export_data, "Dataset directory or manifest (repeatable)")->required();
  exporter->add_option("--out", export_out, "Output directory")->required();
  exporter->add_option("--jobs", export_jobs, "Worker threads");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*generate) return cmd_generate(recipe, gen_out, gen_seed, gen_jobs, out);
    if (*train) return cmd_train(train_opts, out);
    if (*eval) return cmd_eval(eval_opts, checkpoint, out);
    if (*ablate) return cmd_ablate(ablate_opts, out);
    if (*gradcheck) return cmd_gradcheck(scale, corrupt, gc_seed, out);
    if (*exporter) return cmd_export(export_ckpt, export_data, export_out, export_jobs, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const CompatibilityError& e) {
    err << "compatibility error: " << e.what() << '\n';
    return kExitCompatibility;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kExitCompatibility;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace capsfield::cli
