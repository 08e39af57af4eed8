#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "capsfield/model/model.hpp"
#include "capsfield/numerics/optimizer.hpp"

namespace capsfield::model {

enum class Precision { f64, f32 };

std::string_view to_string(Precision p);
Precision parse_precision(std::string_view s);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 53;
  numerics::RmsPropConfig optimizer;
  /// Root of the "shuffle" and "validation" sub-streams.
  std::uint64_t seed = 0;
  /// f32 rounds every parameter to single precision after each update.
  Precision precision = Precision::f64;
  /// Stop after this many epochs without a better validation accuracy; 0 disables.
  std::size_t patience = 15;
  double validation_fraction = 0.10;
  /// Train on the cross-entropy of the fused scores instead of one loss per branch.
  bool joint_loss = false;
  std::size_t jobs = 1;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  /// Mean per-branch cross-entropy over the epoch's batches, weighted by batch size.
  double train_loss = 0.0;
  /// The same quantity on the first batch, before its update.
  double first_batch_loss = 0.0;
  /// Fused accuracy of the forward passes seen during the epoch.
  double train_accuracy = 0.0;
  /// Fused accuracy on the validation set; NaN when there is none.
  double validation_accuracy = 0.0;
  /// Mean cross-entropy of the fused validation scores; NaN when there is none.
  double validation_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  /// Epoch whose parameters the model holds at the end.
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains `model` in place with RMSProp. Each branch gets its own
/// cross-entropy on its own head, and the summed loss is minimised; since the
/// branches share no parameters (unless pose matrices are shared) this is the
/// same as training them independently. With a validation set the parameters
/// of the best validation epoch (highest accuracy, then lowest validation
/// loss) are restored at the end.
/// Throws ConfigError when a class has no training sample and NumericError
/// (naming epoch and batch) when the loss stops being finite.
TrainResult train(CapsFieldModel& model, const std::vector<const Example*>& train_set,
                  const std::vector<const Example*>& validation_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Per-class seeded hold-out: round(fraction * count) samples of every class
/// with at least two samples go to validation. Returns indices into `labels`
/// as {train, validation}, each sorted.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_holdout(
    const std::vector<std::size_t>& labels, double fraction, std::uint64_t seed);

/// Loss of one batch, as minimised by train(); exposed for tests.
numerics::Var batch_loss(numerics::Tape& tape, const ModelVars& vars, const ModelConfig& config,
                         const std::vector<const Example*>& batch, bool joint_loss,
                         std::vector<numerics::Var>* branch_losses = nullptr,
                         numerics::Tensor* fused_probs = nullptr);

/// Fraction of examples whose fused prediction matches their label.
double accuracy(const CapsFieldModel& model, const std::vector<const Example*>& examples,
                std::size_t jobs = 1);

}  // namespace capsfield::model
