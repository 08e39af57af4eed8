#include "capsfield/protocols/protocols.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "capsfield/errors.hpp"
#include "capsfield/numerics/parallel.hpp"

namespace capsfield::protocols {

using lightfield::DatasetTag;
using lightfield::ManifestEntry;
using lightfield::Variation;
using numerics::Tensor;

namespace {

constexpr std::array<std::pair<ProtocolKind, std::string_view>, 7> kKindNames{{
    {ProtocolKind::cross_environment, "cross_environment"},
    {ProtocolKind::cross_distance, "cross_distance"},
    {ProtocolKind::cross_pose_expression, "cross_pose_expression"},
    {ProtocolKind::cross_dataset, "cross_dataset"},
    {ProtocolKind::subject_independent, "subject_independent"},
    {ProtocolKind::kfold_expression, "kfold_expression"},
    {ProtocolKind::cross_dataset_expression, "cross_dataset_expression"},
}};

std::string subject_name(int subject) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%03d", subject);
  return buf;
}

std::string format_fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

bool expression_dropped(const ProtocolSpec& spec, lightfield::Expression e) {
  return spec.kind == ProtocolKind::cross_dataset_expression &&
         (e == lightfield::Expression::sadness || e == lightfield::Expression::disgust);
}

std::string group_of(const SplitPlan& plan, const ManifestEntry& e) {
  if (plan.spec.task() == Task::expression_recognition) return std::string(lightfield::to_string(e.meta.expression));
  return std::string(lightfield::display_name(e.meta.variation));
}

using Filter = std::function<bool(const ManifestEntry&)>;

std::vector<const ManifestEntry*> select(const Catalog& c, const Filter& f) {
  std::vector<const ManifestEntry*> out;
  for (const ManifestEntry* e : c.entries())
    if (f(*e)) out.push_back(e);
  return out;
}

void require_nonempty(const std::vector<const ManifestEntry*>& v, const ProtocolSpec& spec, const char* what) {
  if (v.empty())
    throw CompatibilityError("protocol " + spec.name() + " finds no " + what + " samples in the given manifests");
}

double cosine(const Tensor& a, const Tensor& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

GroupResult score_group(const std::string& name, const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  GroupResult g{name, pairs.size(), 0, rank1_accuracy(pairs)};
  for (const auto& [truth, predicted] : pairs)
    if (truth == predicted) ++g.correct;
  return g;
}

}  // namespace

std::string_view to_string(ProtocolKind k) {
  for (const auto& [kind, name] : kKindNames)
    if (kind == k) return name;
  return "?";
}

std::string_view to_string(Matching m) { return m == Matching::cosine ? "cosine" : "euclidean"; }

Matching parse_matching(std::string_view s) {
  if (s == "cosine") return Matching::cosine;
  if (s == "euclidean") return Matching::euclidean;
  throw ConfigError("unknown matching rule '" + std::string(s) + "' (expected cosine or euclidean)");
}

Task ProtocolSpec::task() const {
  return kind == ProtocolKind::kfold_expression || kind == ProtocolKind::cross_dataset_expression
             ? Task::expression_recognition
             : Task::face_recognition;
}

std::string ProtocolSpec::name() const {
  std::string out(to_string(kind));
  switch (kind) {
    case ProtocolKind::cross_environment: return out + ":" + std::string(lightfield::to_string(train_environment));
    case ProtocolKind::cross_distance: return out + ":" + std::string(lightfield::to_string(train_distance));
    case ProtocolKind::cross_pose_expression: return out;
    case ProtocolKind::cross_dataset:
    case ProtocolKind::cross_dataset_expression:
      return out + ":" + std::string(lightfield::to_string(train_dataset));
    case ProtocolKind::subject_independent: return out + ":" + std::to_string(train_subjects);
    case ProtocolKind::kfold_expression: return out + ":" + std::to_string(fold);
  }
  return out;
}

void ProtocolSpec::validate() const {
  if (kind == ProtocolKind::subject_independent && train_subjects == 0)
    throw ConfigError("subject_independent needs at least one training subject");
  if (kind == ProtocolKind::kfold_expression) {
    if (folds < 2) throw ConfigError("kfold_expression needs at least 2 folds");
    if (fold >= folds)
      throw ConfigError("fold " + std::to_string(fold) + " is out of range for " + std::to_string(folds) + " folds");
  }
}

ProtocolSpec parse_protocol(std::string_view text) {
  const auto colon = text.find(':');
  const std::string_view head = text.substr(0, colon);
  const std::string_view arg = colon == std::string_view::npos ? std::string_view() : text.substr(colon + 1);
  ProtocolSpec spec;
  bool found = false;
  for (const auto& [kind, name] : kKindNames)
    if (name == head) {
      spec.kind = kind;
      found = true;
    }
  if (!found) throw ConfigError("unknown protocol '" + std::string(text) + "'");
  auto number = [&](std::string_view s) {
    std::size_t v = 0;
    for (char ch : s) {
      if (ch < '0' || ch > '9') throw ConfigError("protocol '" + std::string(text) + "' needs a number after ':'");
      v = v * 10 + static_cast<std::size_t>(ch - '0');
    }
    return v;
  };
  try {
    if (!arg.empty()) {
      switch (spec.kind) {
        case ProtocolKind::cross_environment: spec.train_environment = lightfield::parse_environment(arg); break;
        case ProtocolKind::cross_distance: spec.train_distance = lightfield::parse_distance(arg); break;
        case ProtocolKind::cross_dataset:
        case ProtocolKind::cross_dataset_expression: spec.train_dataset = lightfield::parse_dataset_tag(arg); break;
        case ProtocolKind::subject_independent: spec.train_subjects = number(arg); break;
        case ProtocolKind::kfold_expression: spec.fold = number(arg); break;
        case ProtocolKind::cross_pose_expression:
          throw ConfigError("protocol cross_pose_expression takes no argument");
      }
    }
  } catch (const FormatError& e) {
    throw ConfigError("protocol '" + std::string(text) + "': " + e.what());
  }
  spec.validate();
  return spec;
}

Catalog::Catalog(std::vector<lightfield::Manifest> manifests) : manifests_(std::move(manifests)) {
  if (manifests_.empty()) throw ConfigError("a protocol needs at least one manifest");
  const auto& first = manifests_.front();
  views_ = first.views;
  height_ = first.height;
  width_ = first.width;
  channels_ = first.channels;
  for (std::size_t m = 0; m < manifests_.size(); ++m) {
    const auto& man = manifests_[m];
    if (man.views != views_ || man.height != height_ || man.width != width_ || man.channels != channels_)
      throw CompatibilityError("manifest '" + man.name + "' has different view dimensions from '" + first.name + "'");
    for (const auto& e : man.entries) {
      if (!index_.emplace(e.meta.sample_id, entries_.size()).second)
        throw CompatibilityError("sample id '" + e.meta.sample_id + "' appears in more than one manifest");
      entries_.push_back(&e);
      owner_.push_back(m);
    }
  }
}

const ManifestEntry& Catalog::find(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw CompatibilityError("sample '" + id + "' is not in any manifest");
  return *entries_[it->second];
}

const lightfield::Manifest& Catalog::manifest_of(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw CompatibilityError("sample '" + id + "' is not in any manifest");
  return manifests_[owner_[it->second]];
}

std::size_t SplitPlan::label_of(const ManifestEntry& e) const {
  const std::string key = spec.task() == Task::expression_recognition
                              ? std::string(lightfield::to_string(e.meta.expression))
                              : subject_name(e.meta.subject);
  const auto it = std::find(vocabulary.begin(), vocabulary.end(), key);
  if (it == vocabulary.end())
    throw CompatibilityError("sample '" + e.meta.sample_id + "' has class '" + key + "' outside the plan");
  return static_cast<std::size_t>(it - vocabulary.begin());
}

std::vector<std::string> SplitPlan::all_test_ids() const {
  std::vector<std::string> out;
  for (const auto& g : test) out.insert(out.end(), g.ids.begin(), g.ids.end());
  return out;
}

std::vector<std::vector<int>> subject_folds(const std::vector<int>& subjects, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ConfigError("fold count must be positive");
  std::vector<int> order = subjects;
  std::sort(order.begin(), order.end());
  numerics::Rng rng(numerics::derive_seed(seed, "folds"));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  std::vector<std::vector<int>> folds(k);
  for (std::size_t i = 0; i < order.size(); ++i) folds[i % k].push_back(order[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

SplitPlan build_split(const Catalog& catalog, const ProtocolSpec& spec, std::uint64_t seed,
                      double validation_fraction) {
  spec.validate();
  SplitPlan plan;
  plan.spec = spec;
  std::vector<const ManifestEntry*> train, test, gallery;
  const auto wild = [](const ManifestEntry& e) { return e.meta.dataset == DatasetTag::wild; };

  switch (spec.kind) {
    case ProtocolKind::cross_environment:
      train = select(catalog, [&](const ManifestEntry& e) { return wild(e) && e.meta.environment == spec.train_environment; });
      test = select(catalog, [&](const ManifestEntry& e) { return wild(e) && e.meta.environment != spec.train_environment; });
      break;
    case ProtocolKind::cross_distance:
      train = select(catalog, [&](const ManifestEntry& e) { return wild(e) && e.meta.distance == spec.train_distance; });
      test = select(catalog, [&](const ManifestEntry& e) { return wild(e) && e.meta.distance != spec.train_distance; });
      break;
    case ProtocolKind::cross_pose_expression:
      train = select(catalog, [&](const ManifestEntry& e) { return wild(e) && e.meta.variation == Variation::neutral_frontal; });
      test = select(catalog, [&](const ManifestEntry& e) { return wild(e) && e.meta.variation != Variation::neutral_frontal; });
      break;
    case ProtocolKind::cross_dataset:
    case ProtocolKind::cross_dataset_expression:
      train = select(catalog, [&](const ManifestEntry& e) {
        return e.meta.dataset == spec.train_dataset && !expression_dropped(spec, e.meta.expression);
      });
      test = select(catalog, [&](const ManifestEntry& e) {
        return e.meta.dataset != spec.train_dataset && !expression_dropped(spec, e.meta.expression);
      });
      break;
    case ProtocolKind::subject_independent: {
      std::set<int> subjects;
      for (const ManifestEntry* e : catalog.entries())
        if (wild(*e)) subjects.insert(e->meta.subject);
      if (subjects.size() <= spec.train_subjects)
        throw CompatibilityError("subject_independent trains on " + std::to_string(spec.train_subjects) +
                                 " subjects but the manifests hold only " + std::to_string(subjects.size()));
      const int last_train = *std::next(subjects.begin(), static_cast<std::ptrdiff_t>(spec.train_subjects - 1));
      train = select(catalog, [&](const ManifestEntry& e) { return wild(e) && e.meta.subject <= last_train; });
      gallery = select(catalog, [&](const ManifestEntry& e) {
        return wild(e) && e.meta.subject > last_train && e.meta.variation == Variation::neutral_frontal;
      });
      test = select(catalog, [&](const ManifestEntry& e) {
        return wild(e) && e.meta.subject > last_train && e.meta.variation != Variation::neutral_frontal;
      });
      std::set<int> enrolled, probed;
      for (const ManifestEntry* e : gallery) enrolled.insert(e->meta.subject);
      for (const ManifestEntry* e : test) probed.insert(e->meta.subject);
      for (int s : probed)
        if (!enrolled.contains(s))
          throw CompatibilityError("held-out subject " + std::to_string(s) + " has no frontal gallery sample");
      break;
    }
    case ProtocolKind::kfold_expression: {
      std::set<int> subject_set;
      std::map<lightfield::Expression, std::set<int>> per_class;
      for (const ManifestEntry* e : catalog.entries()) {
        subject_set.insert(e->meta.subject);
        per_class[e->meta.expression].insert(e->meta.subject);
      }
      for (const auto& [expr, subs] : per_class)
        if (subs.size() < spec.folds)
          throw CompatibilityError("expression '" + std::string(lightfield::to_string(expr)) + "' has " +
                                   std::to_string(subs.size()) + " subjects, fewer than the " +
                                   std::to_string(spec.folds) + " folds");
      const auto folds = subject_folds({subject_set.begin(), subject_set.end()}, spec.folds, seed);
      const std::set<int> chosen(folds[spec.fold].begin(), folds[spec.fold].end());
      const bool conventional = spec.conventional_folds;
      train = select(catalog, [&](const ManifestEntry& e) { return chosen.contains(e.meta.subject) != conventional; });
      test = select(catalog, [&](const ManifestEntry& e) { return chosen.contains(e.meta.subject) == conventional; });
      break;
    }
  }
  require_nonempty(train, spec, "training");
  require_nonempty(test, spec, "test");

  // Vocabulary from the training side, in a fixed order.
  if (spec.task() == Task::expression_recognition) {
    for (auto expr : lightfield::kExpressions)
      for (const ManifestEntry* e : train)
        if (e->meta.expression == expr) {
          plan.vocabulary.emplace_back(lightfield::to_string(expr));
          break;
        }
  } else {
    std::set<int> subjects;
    for (const ManifestEntry* e : train) subjects.insert(e->meta.subject);
    for (int s : subjects) plan.vocabulary.push_back(subject_name(s));
  }

  // Closed-set test samples must have a class the model knows.
  if (spec.kind != ProtocolKind::subject_independent) {
    std::vector<const ManifestEntry*> known;
    for (const ManifestEntry* e : test) {
      const std::string key = spec.task() == Task::expression_recognition
                                  ? std::string(lightfield::to_string(e->meta.expression))
                                  : subject_name(e->meta.subject);
      if (std::find(plan.vocabulary.begin(), plan.vocabulary.end(), key) != plan.vocabulary.end())
        known.push_back(e);
    }
    test = std::move(known);
    require_nonempty(test, spec, "test samples with trained classes among the");
  }

  std::vector<std::size_t> labels;
  for (const ManifestEntry* e : train) labels.push_back(plan.label_of(*e));
  const auto [tr, va] = model::stratified_holdout(labels, validation_fraction, numerics::derive_seed(seed, "split"));
  for (auto i : tr) plan.train.push_back(train[i]->meta.sample_id);
  for (auto i : va) plan.validation.push_back(train[i]->meta.sample_id);
  for (const ManifestEntry* e : gallery) plan.gallery.push_back(e->meta.sample_id);

  for (const std::string& title : group_columns(spec.task())) {
    TestGroup g{title, {}};
    for (const ManifestEntry* e : test)
      if (group_of(plan, *e) == title) g.ids.push_back(e->meta.sample_id);
    if (!g.ids.empty()) plan.test.push_back(std::move(g));
  }
  return plan;
}

double rank1_accuracy(const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  if (pairs.empty()) throw ConfigError("rank-1 accuracy of an empty prediction list");
  std::size_t hits = 0;
  for (const auto& [truth, predicted] : pairs)
    if (truth == predicted) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

void MetricsReport::recompute_average() {
  if (groups.empty()) {
    average = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  double s = 0.0;
  for (const auto& g : groups) s += g.accuracy;
  average = s / static_cast<double>(groups.size());
}

std::vector<std::string> group_columns(Task task) {
  std::vector<std::string> out;
  if (task == Task::expression_recognition) {
    for (auto e : lightfield::kExpressions) out.emplace_back(lightfield::to_string(e));
  } else {
    for (auto v : lightfield::kVariations) out.emplace_back(lightfield::display_name(v));
  }
  return out;
}

std::string fingerprint(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string reports_to_csv(const std::vector<MetricsReport>& reports, const std::string& config_json) {
  std::vector<std::string> columns;
  for (Task task : {Task::face_recognition, Task::expression_recognition})
    for (const std::string& c : group_columns(task)) {
      bool used = false;
      for (const auto& r : reports)
        for (const auto& g : r.groups) used = used || g.name == c;
      if (used && std::find(columns.begin(), columns.end(), c) == columns.end()) columns.push_back(c);
    }
  std::ostringstream out;
  out << "# capsfield metrics\n";
  if (!reports.empty()) out << "# seed: " << reports.front().seed << '\n';
  out << "# config_fingerprint: " << fingerprint(config_json) << '\n';
  out << "# run_config: " << config_json << '\n';
  out << "variant,protocol";
  for (const auto& c : columns) out << ',' << c;
  out << ",Avg.,samples,status\n";
  for (const auto& r : reports) {
    out << r.variant << ',' << r.protocol;
    std::size_t samples = 0;
    for (const auto& c : columns) {
      out << ',';
      for (const auto& g : r.groups)
        if (g.name == c) {
          out << format_fixed(g.accuracy);
          samples += g.samples;
        }
    }
    out << ',' << (r.failure ? "" : format_fixed(r.average)) << ',' << samples << ',';
    if (r.failure) {
      std::string msg = *r.failure;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      out << "failed: " << msg;
    } else {
      out << "ok";
    }
    out << '\n';
  }
  return out.str();
}

std::vector<model::Example> load_examples(const Catalog& catalog, const SplitPlan& plan,
                                          const std::vector<std::string>& ids, std::size_t jobs) {
  std::vector<model::Example> out(ids.size());
  numerics::parallel_for(ids.size(), jobs, [&](std::size_t i) {
    const ManifestEntry& e = catalog.find(ids[i]);
    const bool labelled = plan.spec.kind != ProtocolKind::subject_independent ||
                          std::find(plan.vocabulary.begin(), plan.vocabulary.end(), subject_name(e.meta.subject)) !=
                              plan.vocabulary.end();
    out[i] = model::make_example(lightfield::fetch_sample(catalog.manifest_of(ids[i]), e),
                                 labelled ? plan.label_of(e) : 0);
    out[i].id = ids[i];
  });
  return out;
}

std::size_t nearest(const Tensor& probe, const std::vector<Tensor>& gallery, Matching matching) {
  if (gallery.empty()) throw ConfigError("nearest-neighbour matching against an empty gallery");
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < gallery.size(); ++g) {
    double score;
    if (matching == Matching::cosine) {
      score = cosine(probe, gallery[g]);
    } else {
      double d = 0.0;
      for (std::size_t i = 0; i < probe.size(); ++i) d += (probe[i] - gallery[g][i]) * (probe[i] - gallery[g][i]);
      score = -d;
    }
    if (score > best_score) {
      best_score = score;
      best = g;
    }
  }
  return best;
}

MetricsReport evaluate_plan(const Catalog& catalog, const SplitPlan& plan, const model::CapsFieldModel& model,
                            std::size_t jobs) {
  model::check_compatible(model, catalog.views(), catalog.height(), catalog.width(), catalog.channels());
  const ProtocolSpec& spec = plan.spec;
  if (spec.kind != ProtocolKind::subject_independent) model::check_vocabulary(model, plan.vocabulary);
  auto pointers = [](const std::vector<model::Example>& v) {
    std::vector<const model::Example*> out;
    for (const auto& e : v) out.push_back(&e);
    return out;
  };
  MetricsReport report;
  report.protocol = spec.name();

  if (spec.kind == ProtocolKind::subject_independent) {
    const auto gallery_examples = load_examples(catalog, plan, plan.gallery, jobs);
    const auto gallery = model::infer(model, pointers(gallery_examples), 32, jobs);
    std::vector<int> gallery_subject;
    for (const auto& id : plan.gallery) gallery_subject.push_back(catalog.find(id).meta.subject);
    for (const TestGroup& g : plan.test) {
      const auto probes = load_examples(catalog, plan, g.ids, jobs);
      const auto inf = model::infer(model, pointers(probes), 32, jobs);
      std::vector<std::pair<std::size_t, std::size_t>> pairs;
      for (std::size_t i = 0; i < probes.size(); ++i) {
        const std::size_t match = nearest(inf.embeddings[i], gallery.embeddings, spec.matching);
        pairs.emplace_back(static_cast<std::size_t>(catalog.find(g.ids[i]).meta.subject),
                           static_cast<std::size_t>(gallery_subject[match]));
      }
      report.groups.push_back(score_group(g.name, pairs));
    }
  } else {
    for (const TestGroup& g : plan.test) {
      const auto examples = load_examples(catalog, plan, g.ids, jobs);
      const auto inf = model::infer(model, pointers(examples), 32, jobs);
      std::vector<std::pair<std::size_t, std::size_t>> pairs;
      for (std::size_t i = 0; i < examples.size(); ++i) pairs.emplace_back(examples[i].label, inf.predictions[i].label);
      report.groups.push_back(score_group(g.name, pairs));
    }
  }
  report.recompute_average();
  return report;
}

TrainedPlan train_plan(const Catalog& catalog, const SplitPlan& plan, const RunSettings& settings) {
  TrainedPlan run;

  model::ModelConfig mc = settings.model;
  mc.views = catalog.views();
  mc.height = catalog.height();
  mc.width = catalog.width();
  mc.channels = catalog.channels();

  std::vector<model::Example> train = load_examples(catalog, plan, plan.train, settings.jobs);
  std::vector<model::Example> validation = load_examples(catalog, plan, plan.validation, settings.jobs);
  if (settings.shuffle_labels) {
    std::vector<std::size_t> labels;
    for (const auto& e : train) labels.push_back(e.label);
    for (const auto& e : validation) labels.push_back(e.label);
    numerics::Rng rng(numerics::derive_seed(settings.seed, "control"));
    for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[rng.index(i)]);
    for (std::size_t i = 0; i < train.size(); ++i) train[i].label = labels[i];
    for (std::size_t i = 0; i < validation.size(); ++i) validation[i].label = labels[train.size() + i];
  }

  run.model = model::init_model(mc, plan.vocabulary, settings.seed);
  model::TrainConfig tc = settings.train;
  tc.seed = settings.seed;
  tc.jobs = settings.jobs;
  auto pointers = [](const std::vector<model::Example>& v) {
    std::vector<const model::Example*> out;
    for (const auto& e : v) out.push_back(&e);
    return out;
  };
  // A shuffled control can leave a class without training samples; give it
  // nothing to learn rather than failing.
  std::vector<const model::Example*> train_ptrs = pointers(train);
  if (settings.shuffle_labels) {
    std::vector<bool> seen(plan.vocabulary.size(), false);
    for (const auto* e : train_ptrs) seen[e->label] = true;
    for (std::size_t c = 0; c < seen.size(); ++c)
      if (!seen[c]) {
        for (auto& e : validation)
          if (e.label == c) {
            train.push_back(e);
            break;
          }
      }
    train_ptrs = pointers(train);
  }
  run.training = model::train(run.model, train_ptrs, pointers(validation), tc, settings.on_epoch);

  return run;
}

ProtocolRun run_protocol(const Catalog& catalog, const ProtocolSpec& spec, const RunSettings& settings) {
  ProtocolRun run;
  run.plan = build_split(catalog, spec, settings.seed, settings.train.validation_fraction);
  TrainedPlan trained = train_plan(catalog, run.plan, settings);
  run.model = std::move(trained.model);
  run.training = std::move(trained.training);
  run.report = evaluate_plan(catalog, run.plan, run.model, settings.jobs);
  run.report.seed = settings.seed;
  run.report.fingerprint = fingerprint(settings.config_json);
  return run;
}

std::vector<AblationVariant> ablation_variants() {
  return {{"full", model::BranchMode::both, true},
          {"horizontal", model::BranchMode::horizontal, true},
          {"vertical", model::BranchMode::vertical, true},
          {"no_capsules", model::BranchMode::both, false}};
}

AblationTable run_ablation(const Catalog& catalog, const std::vector<ProtocolSpec>& protocols,
                           const RunSettings& settings) {
  AblationTable table;
  for (const auto& p : protocols) table.protocols.push_back(p.name());
  for (const auto& v : ablation_variants()) {
    table.variants.push_back(v.name);
    std::vector<MetricsReport> row;
    for (const auto& p : protocols) {
      RunSettings s = settings;
      s.model.branches = v.branches;
      s.model.use_capsules = v.use_capsules;
      MetricsReport report;
      try {
        report = run_protocol(catalog, p, s).report;
      } catch (const Error& e) {
        report.protocol = p.name();
        report.seed = settings.seed;
        report.fingerprint = fingerprint(settings.config_json);
        report.failure = e.what();
        report.recompute_average();
      }
      report.variant = v.name;
      row.push_back(std::move(report));
    }
    table.reports.push_back(std::move(row));
  }
  return table;
}

KFoldResult run_kfold_expression(const Catalog& catalog, std::size_t k, bool conventional,
                                 const RunSettings& settings) {
  KFoldResult result;
  std::map<std::string, std::pair<double, std::size_t>> sums;
  std::map<std::string, std::size_t> samples;
  for (std::size_t f = 0; f < k; ++f) {
    ProtocolSpec spec;
    spec.kind = ProtocolKind::kfold_expression;
    spec.folds = k;
    spec.fold = f;
    spec.conventional_folds = conventional;
    MetricsReport r = run_protocol(catalog, spec, settings).report;
    for (const auto& g : r.groups) {
      sums[g.name].first += g.accuracy;
      sums[g.name].second += 1;
      samples[g.name] += g.samples;
    }
    result.fold_mean += r.average;
    result.folds.push_back(std::move(r));
  }
  result.fold_mean /= static_cast<double>(k);
  result.mean.protocol = "kfold_expression:mean";
  result.mean.seed = settings.seed;
  result.mean.fingerprint = fingerprint(settings.config_json);
  for (const std::string& title : group_columns(Task::expression_recognition)) {
    const auto it = sums.find(title);
    if (it == sums.end()) continue;
    result.mean.groups.push_back(
        GroupResult{title, samples[title], 0, it->second.first / static_cast<double>(it->second.second)});
  }
  result.mean.recompute_average();
  return result;
}

}  // namespace capsfield::protocols
