// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. Pass criterion numbers as arguments to
// run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "capsfield/capsule/capsule.hpp"
#include "capsfield/cli/cli.hpp"
#include "capsfield/diagnostics/gradcheck_suite.hpp"
#include "capsfield/lightfield/dataset.hpp"
#include "capsfield/model/checkpoint.hpp"
#include "capsfield/model/model.hpp"
#include "capsfield/numerics/ops.hpp"
#include "capsfield/numerics/rng.hpp"
#include "capsfield/numerics/tensor_io.hpp"
#include "capsfield/protocols/protocols.hpp"
#include "support/capsule_oracle.hpp"
#include "support/fixtures.hpp"
#include "support/model_fixtures.hpp"
#include "support/temp_dir.hpp"

namespace fs = std::filesystem;
using namespace capsfield;
using numerics::Rng;
using numerics::Tensor;
namespace oracle = capsfield::testing::oracle;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int quiet_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "capsfield");
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  if (code != 0) std::fprintf(stderr, "  capsfield %s -> %d\n%s", args[1].c_str(), code, err.str().c_str());
  return code;
}

Tensor random_tensor(Rng& rng, numerics::Shape shape, double lo, double hi) {
  Tensor t(std::move(shape), 0.0);
  for (double& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

// 1. Squash, routing softmax and routing iterations against the scalar oracle.
Outcome equation_fidelity() {
  Outcome o;
  const auto start = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  const int trials = 40;
  for (int t = 0; t < trials; ++t) {
    const std::size_t np = 1 + rng.index(4), nc = 1 + rng.index(3), cs = 1 + rng.index(4);

    const Tensor s = random_tensor(rng, {np, cs}, -3.0, 3.0);
    const Tensor sq = capsule::squash(s);
    for (std::size_t i = 0; i < np; ++i) {
      const oracle::Vec ref = oracle::squash(oracle::Vec(s.data().begin() + i * cs, s.data().begin() + (i + 1) * cs));
      for (std::size_t k = 0; k < cs; ++k) worst = std::max(worst, std::abs(sq[i * cs + k] - ref[k]));
    }

    const Tensor logits = random_tensor(rng, {np, nc}, -4.0, 4.0);
    const Tensor c = numerics::softmax_rows(logits);
    for (std::size_t i = 0; i < np; ++i) {
      const oracle::Vec ref =
          oracle::softmax(oracle::Vec(logits.data().begin() + i * nc, logits.data().begin() + (i + 1) * nc));
      for (std::size_t j = 0; j < nc; ++j) worst = std::max(worst, std::abs(c[i * nc + j] - ref[j]));
    }

    const Tensor primary = capsule::squash(random_tensor(rng, {np, cs}, -2.0, 2.0));
    const Tensor pose = random_tensor(rng, {np, nc, cs, cs}, -2.0, 2.0);
    std::vector<std::vector<oracle::Mat>> w(np, std::vector<oracle::Mat>(nc, oracle::Mat(cs, oracle::Vec(cs))));
    oracle::Mat p(np, oracle::Vec(cs));
    for (std::size_t i = 0; i < np; ++i) {
      for (std::size_t k = 0; k < cs; ++k) p[i][k] = primary[i * cs + k];
      for (std::size_t j = 0; j < nc; ++j)
        for (std::size_t a = 0; a < cs; ++a)
          for (std::size_t b = 0; b < cs; ++b) w[i][j][a][b] = pose[((i * nc + j) * cs + a) * cs + b];
    }
    for (std::size_t iterations : {std::size_t{1}, std::size_t{3}}) {
      capsule::CapsuleConfig cfg;
      cfg.num_secondary = nc;
      cfg.capsule_size = cs;
      cfg.routing_iterations = iterations;
      const capsule::RoutingResult r = capsule::dynamic_routing(primary, pose, cfg);
      const oracle::Routing ref = oracle::route(oracle::predictions(w, p), iterations);
      for (std::size_t j = 0; j < nc; ++j)
        for (std::size_t k = 0; k < cs; ++k) worst = std::max(worst, std::abs(r.secondary[j * cs + k] - ref.v[j][k]));
      for (std::size_t i = 0; i < np; ++i)
        for (std::size_t j = 0; j < nc; ++j) worst = std::max(worst, std::abs(r.coupling[i * nc + j] - ref.c[i][j]));
    }
  }
  const double secs = seconds_since(start);
  o.require(worst <= 1e-9, "max abs error " + fmt("%.3e", worst) + " > 1e-9");
  o.require(secs < 5.0, "took " + fmt("%.2f", secs) + " s");
  if (o.pass)
    o.detail = std::to_string(trials) + " instances, max abs error " + fmt("%.2e", worst) + ", " + fmt("%.2f", secs) + " s";
  return o;
}

// 2. Analytic against central-difference gradients, and the gradcheck command.
Outcome gradient_correctness() {
  Outcome o;
  const auto checks = diagnostics::run_gradcheck_suite(diagnostics::GradScale::toy_model, diagnostics::Corruption::none);
  double worst = 0.0;
  for (const auto& c : checks) {
    worst = std::max(worst, c.report.max_relative_error);
    o.require(c.report.passed(), c.name + " relative error " + fmt("%.3e", c.report.max_relative_error));
  }
  const auto start = Clock::now();
  const int code = quiet_cli({"gradcheck", "--scale", "toy-model"});
  const double secs = seconds_since(start);
  o.require(code == 0, "gradcheck exited " + std::to_string(code));
  o.require(secs < 60.0, "gradcheck took " + fmt("%.1f", secs) + " s");
  const int unit = quiet_cli({"gradcheck", "--scale", "unit"});
  o.require(unit == 0, "unit gradcheck exited " + std::to_string(unit));
  if (o.pass) o.detail = "toy model max relative error " + fmt("%.2e", worst) + ", gradcheck exit 0 in " + fmt("%.1f", secs) + " s";
  return o;
}

// 3. Default capsule geometry and the exported embedding length.
Outcome structural_anchors() {
  Outcome o;
  const model::ModelConfig cfg;
  o.require(cfg.capsule.num_secondary == 5, "num_secondary " + std::to_string(cfg.capsule.num_secondary));
  o.require(cfg.capsule.capsule_size == 64, "capsule_size " + std::to_string(cfg.capsule.capsule_size));
  o.require(cfg.capsule.routing_iterations == 3, "routing_iterations " + std::to_string(cfg.capsule.routing_iterations));
  o.require(cfg.head_input() == 320, "head input " + std::to_string(cfg.head_input()));

  testing::TempDir tmp;
  lightfield::DatasetRecipe r;
  r.subjects = 2;
  r.environments = {lightfield::Environment::indoor};
  r.distances = {lightfield::Distance::close};
  r.variations = {lightfield::Variation::neutral_frontal};
  const fs::path data = tmp.path() / "data";
  lightfield::generate_dataset(r, 1, data);
  const model::CapsFieldModel m = model::init_model(cfg, {"s001", "s002"}, 1);
  model::save_checkpoint(m, tmp.path() / "model.ckpt");
  const int code = quiet_cli({"export-embeddings", "--checkpoint", (tmp.path() / "model.ckpt").string(), "--data",
                              data.string(), "--out", (tmp.path() / "emb").string()});
  o.require(code == 0, "export-embeddings exited " + std::to_string(code));
  std::size_t files = 0;
  if (code == 0)
    for (const auto& e : fs::directory_iterator(tmp.path() / "emb" / "embeddings")) {
      ++files;
      const std::size_t n = numerics::load_tensor(e.path()).size();
      o.require(n == 320, "exported embedding has " + std::to_string(n) + " elements");
    }
  o.require(files > 0, "no embeddings exported");
  if (o.pass) o.detail = "5 capsules x 64, 3 iterations, " + std::to_string(files) + " exported embeddings of 320";
  return o;
}

// 4. Coupling mass concentrates on the capsule every primary agrees on.
Outcome routing_by_agreement() {
  Outcome o;
  Rng rng(404);
  capsule::CapsuleConfig cfg;  // defaults: 5 capsules of 64, 3 iterations
  const std::size_t np = 7;
  int ok = 0;
  const int trials = 50;
  for (int t = 0; t < trials; ++t) {
    const std::size_t agreed = rng.index(cfg.num_secondary);
    const Tensor u = testing::agreement_fixture(rng, np, cfg.num_secondary, cfg.capsule_size, agreed);
    const capsule::RoutingResult r = capsule::route_predictions(u, cfg);
    std::vector<double> mean(cfg.num_secondary, 0.0);
    for (std::size_t i = 0; i < np; ++i)
      for (std::size_t j = 0; j < cfg.num_secondary; ++j) mean[j] += r.coupling[i * cfg.num_secondary + j] / np;
    bool top = true;
    for (std::size_t j = 0; j < cfg.num_secondary; ++j)
      if (j != agreed && !(mean[agreed] > mean[j])) top = false;
    ok += top ? 1 : 0;
  }
  o.require(ok == trials, std::to_string(ok) + "/" + std::to_string(trials) + " trials concentrated");
  if (o.pass) o.detail = "50/50 trials put the most coupling on the agreed capsule";
  return o;
}

// 5. Learning on disparity-separable identities, plus the shuffled-label control.
lightfield::DatasetRecipe separable_recipe() {
  lightfield::DatasetRecipe r;
  r.name = "separable";
  r.subjects = 10;
  r.views = 7;
  r.height = r.width = 32;
  // Subjects sit at disparities -4.5, -3.5, ..., 4.5 px per view step.
  r.disparity = {-4.5, -4.5, -4.5};
  r.subject_disparity_step = 1.0;
  r.noise_sigma = 0.01;
  r.samples_per_cell = 3;
  return r;
}

protocols::RunSettings learning_settings(bool shuffled) {
  protocols::RunSettings s;
  s.train.epochs = 100;
  s.train.optimizer.learning_rate = 3e-3;
  s.train.batch_size = 16;
  s.train.patience = 15;
  s.seed = 5;
  s.shuffle_labels = shuffled;
  s.config_json = shuffled ? "{\"acceptance\":\"shuffled\"}" : "{\"acceptance\":\"learning\"}";
  return s;
}

Outcome learning_capability() {
  Outcome o;
  const protocols::Catalog catalog({lightfield::plan_dataset(separable_recipe(), 55)});
  const auto spec = protocols::parse_protocol("cross_environment:indoor");

  auto start = Clock::now();
  const protocols::ProtocolRun run = protocols::run_protocol(catalog, spec, learning_settings(false));
  const double secs = seconds_since(start);
  std::size_t tested = 0, correct = 0;
  for (const auto& g : run.report.groups) {
    tested += g.samples;
    correct += g.correct;
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(tested);
  o.require(acc >= 0.95, "rank-1 " + fmt("%.4f", acc) + " < 0.95");
  o.require(secs < 15 * 60.0, "training took " + fmt("%.0f", secs) + " s");
  o.require(run.training.log.size() <= 100, "more than 100 epochs");

  const protocols::ProtocolRun control = protocols::run_protocol(catalog, spec, learning_settings(true));
  std::size_t c_tested = 0, c_correct = 0;
  for (const auto& g : control.report.groups) {
    c_tested += g.samples;
    c_correct += g.correct;
  }
  const double chance = 0.1;
  const double sigma = std::sqrt(chance * (1.0 - chance) / static_cast<double>(c_tested));
  const double c_acc = static_cast<double>(c_correct) / static_cast<double>(c_tested);
  o.require(std::abs(c_acc - chance) <= 3.0 * sigma,
            "shuffled control " + fmt("%.4f", c_acc) + " outside 0.1 +- " + fmt("%.4f", 3.0 * sigma));
  const std::string summary = "rank-1 " + fmt("%.4f", acc) + " (" + std::to_string(correct) + "/" +
                              std::to_string(tested) + ") after " + std::to_string(run.training.log.size()) +
                              " epochs in " + fmt("%.0f", secs) + " s; shuffled control " + fmt("%.4f", c_acc) +
                              " (3 sigma " + fmt("%.4f", 3.0 * sigma) + ")";
  o.detail = o.pass ? summary : o.detail + "; " + summary;
  return o;
}

// 6. Ablation ordering on anisotropic-disparity data over five seeds.
Outcome ablation_ordering() {
  Outcome o;
  lightfield::DatasetRecipe r;
  r.name = "anisotropic";
  r.subjects = 6;
  r.views = 5;
  r.height = r.width = 24;
  r.disparity = {-2.5, -2.5, -2.5};
  r.subject_disparity_step = 1.0;
  r.vertical_disparity_ratio = 0.25;
  r.noise_sigma = 0.01;

  protocols::RunSettings s;
  s.model.embedder.embedding_dim = 32;
  s.model.capsule.capsule_size = 32;
  s.model.views = r.views;
  s.model.height = r.height;
  s.model.width = r.width;
  s.train.epochs = 60;
  s.train.optimizer.learning_rate = 3e-3;
  s.train.patience = 15;
  s.config_json = "{\"acceptance\":\"ablation\"}";

  std::map<std::string, double> mean;
  const int seeds = 5;
  const auto start = Clock::now();
  for (int seed = 1; seed <= seeds; ++seed) {
    const protocols::Catalog catalog({lightfield::plan_dataset(r, 600 + static_cast<std::uint64_t>(seed))});
    s.seed = static_cast<std::uint64_t>(seed);
    const protocols::AblationTable t =
        protocols::run_ablation(catalog, {protocols::parse_protocol("cross_environment:indoor")}, s);
    for (std::size_t v = 0; v < t.variants.size(); ++v) {
      const auto& rep = t.reports[v][0];
      o.require(!rep.failure, t.variants[v] + " failed: " + rep.failure.value_or(""));
      mean[t.variants[v]] += rep.average / seeds;
    }
  }
  const double full = mean["full"];
  o.require(full >= mean["horizontal"], "full " + fmt("%.4f", full) + " < horizontal " + fmt("%.4f", mean["horizontal"]));
  o.require(full >= mean["vertical"], "full " + fmt("%.4f", full) + " < vertical " + fmt("%.4f", mean["vertical"]));
  o.require(full >= mean["no_capsules"],
            "full " + fmt("%.4f", full) + " < no_capsules " + fmt("%.4f", mean["no_capsules"]));
  const std::string summary = "means over 5 seeds: full " + fmt("%.4f", full) + ", horizontal " +
                              fmt("%.4f", mean["horizontal"]) + ", vertical " + fmt("%.4f", mean["vertical"]) +
                              ", no_capsules " + fmt("%.4f", mean["no_capsules"]) + " (" +
                              fmt("%.0f", seconds_since(start)) + " s)";
  o.detail = o.pass ? summary : o.detail + "; " + summary;
  return o;
}

// 7. Split sizes on manifests shaped like the published datasets.
Outcome protocol_integrity() {
  Outcome o;
  lightfield::DatasetRecipe constrained;
  constrained.dataset = lightfield::DatasetTag::constrained;
  const lightfield::Manifest wild_m = lightfield::plan_dataset(lightfield::DatasetRecipe{}, 7);
  const lightfield::Manifest con_m = lightfield::plan_dataset(constrained, 8);
  o.require(wild_m.entries.size() == 1908, "wild total " + std::to_string(wild_m.entries.size()));
  o.require(con_m.entries.size() == 1060, "constrained total " + std::to_string(con_m.entries.size()));
  const protocols::Catalog wild({wild_m});
  const protocols::Catalog both({wild_m, con_m});

  auto per_subject = [](const protocols::Catalog& c, const std::vector<std::string>& ids) {
    std::map<int, std::size_t> out;
    for (const auto& id : ids) ++out[c.find(id).meta.subject];
    return out;
  };
  auto train_ids = [](const protocols::SplitPlan& p) {
    std::vector<std::string> ids = p.train;
    ids.insert(ids.end(), p.validation.begin(), p.validation.end());
    return ids;
  };
  auto expect_counts = [&](const std::string& protocol, std::size_t train_n, std::size_t test_n) {
    const auto p = protocols::build_split(wild, protocols::parse_protocol(protocol), 1);
    const auto tr = per_subject(wild, train_ids(p));
    const auto te = per_subject(wild, p.all_test_ids());
    o.require(tr.size() == 53 && te.size() == 53, protocol + ": not every subject on both sides");
    for (const auto& [s, n] : tr) o.require(n == train_n, protocol + ": " + std::to_string(n) + " train shots");
    for (const auto& [s, n] : te) o.require(n == test_n, protocol + ": " + std::to_string(n) + " test shots");
  };
  expect_counts("cross_environment:indoor", 18, 18);
  expect_counts("cross_environment:outdoor", 18, 18);
  for (const char* d : {"cross_distance:close", "cross_distance:moderate", "cross_distance:far"}) expect_counts(d, 12, 24);
  expect_counts("cross_pose_expression", 6, 30);
  {
    const auto p = protocols::build_split(wild, protocols::parse_protocol("cross_pose_expression"), 1);
    for (const auto& id : train_ids(p))
      o.require(wild.find(id).meta.variation == lightfield::Variation::neutral_frontal,
                "cross-pose train set holds a non-frontal shot");
  }
  {
    const auto p = protocols::build_split(wild, protocols::parse_protocol("subject_independent:28"), 1);
    const auto tr = per_subject(wild, train_ids(p));
    const auto te = per_subject(wild, p.all_test_ids());
    o.require(tr.size() == 28, "subject-independent train subjects " + std::to_string(tr.size()));
    o.require(te.size() == 25, "subject-independent test subjects " + std::to_string(te.size()));
    for (const auto& [s, n] : te) o.require(!tr.contains(s), "subject-independent sides share a subject");
  }
  {
    const auto p = protocols::build_split(both, protocols::parse_protocol("cross_dataset:constrained"), 1);
    o.require(train_ids(p).size() == 1060 && p.all_test_ids().size() == 1908, "cross-dataset sizes");
    const auto q = protocols::build_split(both, protocols::parse_protocol("cross_dataset:wild"), 1);
    o.require(train_ids(q).size() == 1908 && q.all_test_ids().size() == 1060, "reverse cross-dataset sizes");
  }
  if (o.pass)
    o.detail = "18/18 environment, 12/24 distance, 6 frontal-neutral pose train, 28/25 subjects, 1908 + 1060 samples";
  return o;
}

// 8. Repeated train + eval with one config and seed gives identical metric files.
Outcome reproducibility() {
  Outcome o;
  testing::TempDir tmp;
  lightfield::DatasetRecipe r;
  r.subjects = 3;
  r.views = 3;
  r.height = r.width = 12;
  r.disparity = {1.0, 1.0, 1.0};
  const fs::path data = tmp.path() / "data";
  lightfield::generate_dataset(r, 4, data);

  cli::RunConfig c;
  c.data = {data.string()};
  c.protocols = {"cross_environment:indoor", "cross_distance:far"};
  c.model = testing::tiny_config();
  c.train.epochs = 3;
  c.train.batch_size = 16;
  c.seed = 8;
  {
    std::ofstream(tmp.path() / "run.json") << cli::to_json(c).dump(2);
  }
  const std::string cfg = (tmp.path() / "run.json").string();
  std::vector<std::string> metrics;
  for (const char* dir : {"first", "second", "third"}) {
    const std::string out = (tmp.path() / dir).string();
    const std::string jobs = dir == std::string("third") ? "2" : "1";
    o.require(quiet_cli({"train", "--config", cfg, "--out", out, "--jobs", jobs}) == 0, "train failed");
    o.require(quiet_cli({"eval", "--config", cfg, "--out", out, "--jobs", jobs}) == 0, "eval failed");
    metrics.push_back(slurp(fs::path(out) / "metrics.csv"));
  }
  o.require(!metrics[0].empty(), "empty metrics.csv");
  o.require(metrics[0] == metrics[1], "repeated runs differ");
  o.require(metrics[0] == metrics[2], "runs with 1 and 2 jobs differ");
  if (o.pass) o.detail = "three train+eval runs (jobs 1, 1, 2) wrote byte-identical metrics.csv";
  return o;
}

// 9. Score fusion keeps a distribution and a shared argmax.
Outcome fusion_contract() {
  Outcome o;
  Rng rng(909);
  int shared = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng.index(9);
    auto draw = [&] {
      Tensor p({n}, 0.0);
      double total = 0.0;
      for (double& x : p.data()) total += (x = rng.uniform(0.0, 1.0));
      for (double& x : p.data()) x /= total;
      return p;
    };
    Tensor ph = draw(), pv = draw();
    // Half the pairs are pushed toward a common winner.
    if (t % 2 == 0) {
      const std::size_t k = rng.index(n);
      for (Tensor* p : {&ph, &pv}) {
        (*p)[k] += 1.0;
        for (double& x : p->data()) x /= 2.0;
      }
    }
    const Tensor f = model::fuse_scores(ph, pv);
    double total = 0.0;
    bool nonneg = true;
    for (double x : f.data()) {
      total += x;
      nonneg = nonneg && x >= 0.0;
    }
    o.require(std::abs(total - 1.0) <= 1e-12 && nonneg, "fused output not normalized at trial " + std::to_string(t));
    std::size_t ah = 0, av = 0, af = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (ph[i] > ph[ah]) ah = i;
      if (pv[i] > pv[av]) av = i;
      if (f[i] > f[af]) af = i;
    }
    if (ah == av) {
      ++shared;
      o.require(af == ah, "fused argmax differs from the shared argmax at trial " + std::to_string(t));
      o.require(model::argmax(f) == ah, "library argmax differs at trial " + std::to_string(t));
    }
  }
  o.require(shared >= 400, "too few shared-argmax pairs");
  if (o.pass) o.detail = "1000 pairs normalized; " + std::to_string(shared) + " shared-argmax pairs kept their winner";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"equation fidelity", equation_fidelity},     {"gradient correctness", gradient_correctness},
      {"structural anchors", structural_anchors},   {"routing by agreement", routing_by_agreement},
      {"learning capability", learning_capability}, {"ablation ordering", ablation_ordering},
      {"protocol integrity", protocol_integrity},   {"reproducibility", reproducibility},
      {"fusion contract", fusion_contract},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    const int k = std::atoi(argv[i]);
    if (k < 1 || k > static_cast<int>(criteria.size())) {
      std::fprintf(stderr, "usage: %s [criterion 1-9 ...]\n", argv[0]);
      return 2;
    }
    selected.insert(k);
  }
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int k = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.contains(k)) continue;
    Outcome o;
    const auto start = Clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::printf("criterion %d %-21s %s  %s [%.1f s]\n", k, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), seconds_since(start));
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
