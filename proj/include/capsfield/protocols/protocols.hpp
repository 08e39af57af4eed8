#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "capsfield/lightfield/dataset.hpp"
#include "capsfield/model/model.hpp"
#include "capsfield/model/train.hpp"

namespace capsfield::protocols {

enum class ProtocolKind {
  cross_environment,
  cross_distance,
  cross_pose_expression,
  cross_dataset,
  subject_independent,
  kfold_expression,
  cross_dataset_expression,
};

enum class Task { face_recognition, expression_recognition };
enum class Matching { cosine, euclidean };

std::string_view to_string(ProtocolKind k);
std::string_view to_string(Matching m);
Matching parse_matching(std::string_view s);

struct ProtocolSpec {
  ProtocolKind kind = ProtocolKind::cross_environment;
  /// cross_environment: the environment trained on.
  lightfield::Environment train_environment = lightfield::Environment::indoor;
  /// cross_distance: the distance trained on.
  lightfield::Distance train_distance = lightfield::Distance::close;
  /// cross_dataset and cross_dataset_expression: the dataset trained on.
  lightfield::DatasetTag train_dataset = lightfield::DatasetTag::constrained;
  /// subject_independent: subjects with the lowest ids that are trained on.
  std::size_t train_subjects = 28;
  Matching matching = Matching::cosine;
  /// kfold_expression: fold index and fold count.
  std::size_t fold = 0;
  std::size_t folds = 4;
  /// kfold_expression: train on k-1 folds and test on one instead of the reverse.
  bool conventional_folds = false;

  Task task() const;
  /// Short stable label, e.g. "cross_environment:indoor".
  std::string name() const;
  void validate() const;
};

/// Parses the form produced by name(): "cross_environment[:indoor|outdoor]",
/// "cross_distance[:close|moderate|far]", "cross_pose_expression",
/// "cross_dataset[:constrained|wild]", "subject_independent[:N]",
/// "kfold_expression[:fold]", "cross_dataset_expression[:constrained|wild]".
ProtocolSpec parse_protocol(std::string_view text);

/// The manifests a protocol may draw from. Sample ids must be unique across them.
class Catalog {
 public:
  explicit Catalog(std::vector<lightfield::Manifest> manifests);
  Catalog(const Catalog&) = delete;
  Catalog& operator=(const Catalog&) = delete;
  Catalog(Catalog&&) = default;
  Catalog& operator=(Catalog&&) = default;

  const std::vector<lightfield::Manifest>& manifests() const noexcept { return manifests_; }
  /// Every entry in manifest order.
  const std::vector<const lightfield::ManifestEntry*>& entries() const noexcept { return entries_; }
  const lightfield::ManifestEntry& find(const std::string& id) const;
  const lightfield::Manifest& manifest_of(const std::string& id) const;
  /// Views per axis, height, width and channels shared by all manifests.
  std::size_t views() const noexcept { return views_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }

 private:
  std::vector<lightfield::Manifest> manifests_;
  std::vector<const lightfield::ManifestEntry*> entries_;
  std::vector<std::size_t> owner_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::size_t views_ = 0, height_ = 0, width_ = 0, channels_ = 0;
};

struct TestGroup {
  std::string name;
  std::vector<std::string> ids;
};

struct SplitPlan {
  ProtocolSpec spec;
  /// Class names; index = label.
  std::vector<std::string> vocabulary;
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<TestGroup> test;
  /// subject_independent only: enrolled frontal samples of the held-out subjects.
  std::vector<std::string> gallery;

  /// Class index of a sample under this plan's task.
  std::size_t label_of(const lightfield::ManifestEntry& e) const;
  std::vector<std::string> all_test_ids() const;
};

/// Deterministic split. 10% (validation_fraction) of the training samples,
/// stratified per class, become validation. Throws CompatibilityError when
/// the catalog lacks what the protocol needs.
SplitPlan build_split(const Catalog& catalog, const ProtocolSpec& spec, std::uint64_t seed,
                      double validation_fraction = 0.10);

/// Fraction of (true, predicted) pairs that agree. Throws ConfigError on an empty list.
double rank1_accuracy(const std::vector<std::pair<std::size_t, std::size_t>>& pairs);

struct GroupResult {
  std::string name;
  std::size_t samples = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

struct MetricsReport {
  std::string protocol;
  std::string variant = "full";
  std::vector<GroupResult> groups;
  /// Unweighted mean of the group accuracies.
  double average = 0.0;
  std::uint64_t seed = 0;
  std::string fingerprint;
  /// Set when the run failed; groups are then empty.
  std::optional<std::string> failure;

  void recompute_average();
};

/// Group titles in reporting order for a task.
std::vector<std::string> group_columns(Task task);

/// CSV with provenance comment lines, one row per report, columns =
/// variation groups + Avg. Numbers use a fixed format, so equal inputs give
/// byte-identical files.
std::string reports_to_csv(const std::vector<MetricsReport>& reports, const std::string& config_json);

/// 16 hex digits of the FNV-1a hash of `text`.
std::string fingerprint(const std::string& text);

struct RunSettings {
  model::ModelConfig model;
  model::TrainConfig train;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  /// Permute the training and validation labels (a chance-level control).
  bool shuffle_labels = false;
  /// Written into reports as the configuration fingerprint source.
  std::string config_json;
  model::EpochCallback on_epoch;
};

struct ProtocolRun {
  SplitPlan plan;
  MetricsReport report;
  model::CapsFieldModel model;
  model::TrainResult training;
};

/// Loads the samples of `ids` (rendering or reading them) as model examples.
std::vector<model::Example> load_examples(const Catalog& catalog, const SplitPlan& plan,
                                          const std::vector<std::string>& ids, std::size_t jobs);

struct TrainedPlan {
  model::CapsFieldModel model;
  model::TrainResult training;
};

/// Trains a fresh model on the plan's training and validation samples.
TrainedPlan train_plan(const Catalog& catalog, const SplitPlan& plan, const RunSettings& settings);

/// Scores a trained model on the plan's test groups. Seed and fingerprint
/// are left for the caller. Throws CompatibilityError when the model does not
/// fit the catalog or, for closed-set protocols, the plan's vocabulary.
MetricsReport evaluate_plan(const Catalog& catalog, const SplitPlan& plan, const model::CapsFieldModel& model,
                            std::size_t jobs);

/// Builds the split, trains a fresh model and scores every test group.
/// Subject-independent runs match probes against the gallery by the
/// branch-averaged capsule embedding instead of classifying.
ProtocolRun run_protocol(const Catalog& catalog, const ProtocolSpec& spec, const RunSettings& settings);

/// Nearest gallery sample (cosine or Euclidean); ties go to the earlier gallery entry.
std::size_t nearest(const numerics::Tensor& probe, const std::vector<numerics::Tensor>& gallery,
                    Matching matching);

struct AblationVariant {
  std::string name;
  model::BranchMode branches;
  bool use_capsules;
};

/// full (H+V+caps), horizontal (H+caps), vertical (V+caps), no_capsules (H+V).
std::vector<AblationVariant> ablation_variants();

struct AblationTable {
  std::vector<std::string> variants;
  std::vector<std::string> protocols;
  /// reports[v][p]
  std::vector<std::vector<MetricsReport>> reports;
};

/// Runs every variant on every protocol. A failing cell is recorded in its
/// report and does not stop the others.
AblationTable run_ablation(const Catalog& catalog, const std::vector<ProtocolSpec>& protocols,
                           const RunSettings& settings);

struct KFoldResult {
  std::vector<MetricsReport> folds;
  /// Group accuracies averaged over folds; `average` is their unweighted mean.
  MetricsReport mean;
  /// Mean of the per-fold averages.
  double fold_mean = 0.0;
};

/// Subject-disjoint k-fold expression protocol (train 1 fold, test k-1,
/// unless conventional). Throws CompatibilityError when an expression has
/// fewer than k subjects.
KFoldResult run_kfold_expression(const Catalog& catalog, std::size_t k, bool conventional,
                                 const RunSettings& settings);

/// Subject folds used by kfold_expression: sorted subjects shuffled by the
/// seed and dealt round-robin.
std::vector<std::vector<int>> subject_folds(const std::vector<int>& subjects, std::size_t k,
                                            std::uint64_t seed);

}  // namespace capsfield::protocols
