#include "capsfield/model/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <tuple>

#include "capsfield/errors.hpp"
#include "capsfield/numerics/ops.hpp"

namespace capsfield::model {

using lightfield::Axis;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

namespace {

void shuffle(std::vector<std::size_t>& v, numerics::Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

void round_to_float(Tensor& t) {
  for (double& x : t.data()) x = static_cast<double>(static_cast<float>(x));
}

std::vector<Tensor> snapshot(const CapsFieldModel& model) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : model.parameters()) out.push_back(*t);
  return out;
}

void restore(CapsFieldModel& model, const std::vector<Tensor>& saved) {
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) *params[i].second = saved[i];
}

}  // namespace

std::string_view to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(std::string_view s) {
  if (s == "f64" || s == "double") return Precision::f64;
  if (s == "f32" || s == "float") return Precision::f32;
  throw ConfigError("unknown precision '" + std::string(s) + "' (expected f32 or f64)");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (!(validation_fraction >= 0.0 && validation_fraction <= 0.5))
    throw ConfigError("validation fraction must lie in [0, 0.5]");
  if (jobs == 0) throw ConfigError("jobs must be at least 1");
  optimizer.validate();
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_holdout(
    const std::vector<std::size_t>& labels, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 0.5)) throw ConfigError("validation fraction must lie in [0, 0.5]");
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<std::size_t> train, validation;
  for (auto& [label, members] : by_class) {
    numerics::Rng rng(numerics::derive_seed(numerics::derive_seed(seed, "validation"), label));
    shuffle(members, rng);
    std::size_t k = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(members.size())));
    k = std::min(k, members.size() - 1);
    validation.insert(validation.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(k));
    train.insert(train.end(), members.begin() + static_cast<std::ptrdiff_t>(k), members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(validation.begin(), validation.end());
  return {train, validation};
}

Var batch_loss(Tape& tape, const ModelVars& vars, const ModelConfig& config,
               const std::vector<const Example*>& batch, bool joint_loss, std::vector<Var>* branch_losses,
               Tensor* fused_probs) {
  std::vector<std::size_t> labels;
  for (const Example* e : batch) labels.push_back(e->label);
  std::vector<Var> probs, losses;
  for (Axis axis : {Axis::horizontal, Axis::vertical}) {
    const auto& b = axis == Axis::horizontal ? vars.horizontal : vars.vertical;
    if (!b) continue;
    const Var images = tape.constant(model_input(batch, axis, config));
    const BranchOutput o = forward_branch(*b, config, images, batch.size());
    probs.push_back(o.probs);
    losses.push_back(numerics::cross_entropy(o.probs, labels));
  }
  if (branch_losses) *branch_losses = losses;
  Var fused = probs[0];
  if (probs.size() == 2) fused = numerics::scale(numerics::add(probs[0], probs[1]), 0.5);
  if (fused_probs) *fused_probs = fused.value();
  if (joint_loss) return numerics::cross_entropy(fused, labels);
  Var total = losses[0];
  for (std::size_t i = 1; i < losses.size(); ++i) total = numerics::add(total, losses[i]);
  return total;
}

namespace {

/// Fused accuracy and mean fused cross-entropy.
std::pair<double, double> evaluate(const CapsFieldModel& model, const std::vector<const Example*>& examples,
                                   std::size_t jobs) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (examples.empty()) return {nan, nan};
  const BatchInference inf = infer(model, examples, 32, jobs);
  std::size_t hits = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (inf.predictions[i].label == examples[i]->label) ++hits;
    loss += numerics::cross_entropy(inf.predictions[i].probs, examples[i]->label);
  }
  const double n = static_cast<double>(examples.size());
  return {static_cast<double>(hits) / n, loss / n};
}

}  // namespace

double accuracy(const CapsFieldModel& model, const std::vector<const Example*>& examples, std::size_t jobs) {
  if (examples.empty()) return std::numeric_limits<double>::quiet_NaN();
  const BatchInference inf = infer(model, examples, 32, jobs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < examples.size(); ++i)
    if (inf.predictions[i].label == examples[i]->label) ++hits;
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

TrainResult train(CapsFieldModel& model, const std::vector<const Example*>& train_set,
                  const std::vector<const Example*>& validation_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  const std::size_t n_classes = model.num_classes();
  std::vector<std::size_t> per_class(n_classes, 0);
  for (const Example* e : train_set) {
    if (e->label >= n_classes)
      throw ConfigError("sample '" + e->id + "' has label " + std::to_string(e->label) + " but the model has " +
                        std::to_string(n_classes) + " classes");
    ++per_class[e->label];
  }
  for (const Example* e : validation_set)
    if (e->label >= n_classes) throw ConfigError("validation sample '" + e->id + "' has an unknown label");
  for (std::size_t c = 0; c < n_classes; ++c)
    if (per_class[c] == 0) throw ConfigError("class '" + model.vocabulary[c] + "' has no training samples");

  std::vector<numerics::OptimizerState> states;
  for (const auto& [name, t] : model.parameters()) states.emplace_back(t->shape(), cfg.optimizer);
  if (cfg.precision == Precision::f32)
    for (auto& [name, t] : model.parameters()) round_to_float(*t);

  const double branches = cfg.joint_loss ? 1.0 : static_cast<double>(model.config.branch_count());
  const std::uint64_t shuffle_root = numerics::derive_seed(cfg.seed, "shuffle");
  std::vector<std::size_t> order(train_set.size());

  TrainResult result;
  double best_val = -1.0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params;
  std::size_t since_best = 0;
  const std::size_t start_epoch = model.epoch;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    numerics::Rng rng(numerics::derive_seed(shuffle_root, epoch));
    shuffle(order, rng);

    EpochLog log;
    log.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t hits = 0;
    const std::size_t batches = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
    for (std::size_t bi = 0; bi < batches; ++bi) {
      const std::size_t lo = bi * cfg.batch_size, hi = std::min(order.size(), lo + cfg.batch_size);
      std::vector<const Example*> batch;
      for (std::size_t k = lo; k < hi; ++k) batch.push_back(train_set[order[k]]);

      Tape tape(true);
      const ModelVars vars = bind(tape, model, true);
      Var loss;
      Tensor fused;
      try {
        loss = batch_loss(tape, vars, model.config, batch, cfg.joint_loss, nullptr, &fused);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(bi + 1) + ")");
      }
      const double value = loss.value().item();
      if (!std::isfinite(value))
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(bi + 1));
      const double per_branch = value / branches;
      if (bi == 0) log.first_batch_loss = per_branch;
      loss_sum += per_branch * static_cast<double>(batch.size());
      for (std::size_t k = 0; k < batch.size(); ++k)
        if (argmax(Tensor({n_classes}, std::vector<double>(fused.data().begin() + static_cast<std::ptrdiff_t>(k * n_classes),
                                                          fused.data().begin() + static_cast<std::ptrdiff_t>((k + 1) * n_classes)))) ==
            batch[k]->label)
          ++hits;

      tape.backward(loss);
      for (std::size_t p = 0; p < vars.leaves.size(); ++p) {
        const auto& [var, tensor] = vars.leaves[p];
        numerics::rmsprop_step(*tensor, tape.gradient(var), states[p]);
        if (cfg.precision == Precision::f32) round_to_float(*tensor);
        if (!tensor->all_finite())
          throw NumericError("non-finite parameter after update at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(bi + 1));
      }
    }
    model.epoch = start_epoch + epoch;
    log.train_loss = loss_sum / static_cast<double>(order.size());
    log.train_accuracy = static_cast<double>(hits) / static_cast<double>(order.size());
    std::tie(log.validation_accuracy, log.validation_loss) = evaluate(model, validation_set, cfg.jobs);
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);

    if (validation_set.empty()) {
      result.best_epoch = epoch;
      continue;
    }
    if (log.validation_accuracy > best_val ||
        (log.validation_accuracy == best_val && log.validation_loss < best_val_loss)) {
      best_val = log.validation_accuracy;
      best_val_loss = log.validation_loss;
      best_params = snapshot(model);
      result.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  if (!validation_set.empty() && !best_params.empty()) {
    restore(model, best_params);
    model.epoch = start_epoch + result.best_epoch;
  }
  return result;
}

}  // namespace capsfield::model
