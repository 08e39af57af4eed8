#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "capsfield/capsule/capsule.hpp"
#include "capsfield/features/embedder.hpp"
#include "capsfield/lightfield/light_field.hpp"
#include "capsfield/numerics/tape.hpp"
#include "capsfield/numerics/tensor.hpp"

namespace capsfield::model {

enum class BranchMode { both, horizontal, vertical };

std::string_view to_string(BranchMode m);
BranchMode parse_branch_mode(std::string_view s);

/// Preprocessing applied to every view before the embedder.
enum class InputNormalization {
  none,
  /// Each view is shifted and scaled to zero mean and unit variance.
  per_view,
};

std::string_view to_string(InputNormalization n);
InputNormalization parse_input_normalization(std::string_view s);

struct ModelConfig {
  features::EmbedderConfig embedder;
  capsule::CapsuleConfig capsule;
  BranchMode branches = BranchMode::both;
  /// false: the V * D concatenated view embeddings feed the head directly.
  bool use_capsules = true;
  /// One set of pose matrices for both branches.
  bool share_pose_matrices = false;
  InputNormalization input_normalization = InputNormalization::per_view;
  /// Expected input: V x V views of H x W pixels with C channels.
  std::size_t views = 7;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;

  void validate() const;
  bool uses(lightfield::Axis axis) const;
  std::size_t branch_count() const { return branches == BranchMode::both ? 2 : 1; }
  /// Length of the head input: N_c * C_s with capsules, V * D without.
  std::size_t head_input() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct BranchParams {
  features::EmbedderParams embedder;
  /// [N_p, N_c, C_s, C_s]; empty without capsules or when shared.
  numerics::Tensor pose;
  numerics::Tensor head_weight;  // [head_input, n_classes]
  numerics::Tensor head_bias;    // [n_classes]
};

struct CapsFieldModel {
  ModelConfig config;
  std::vector<std::string> vocabulary;
  std::uint64_t seed = 0;
  /// Epochs of training the parameters have seen.
  std::size_t epoch = 0;
  std::optional<BranchParams> horizontal;
  std::optional<BranchParams> vertical;
  /// Pose matrices used by both branches when config.share_pose_matrices.
  numerics::Tensor shared_pose;

  std::size_t num_classes() const { return vocabulary.size(); }
  const BranchParams& branch(lightfield::Axis axis) const;
  BranchParams& branch(lightfield::Axis axis);
  const numerics::Tensor& pose(lightfield::Axis axis) const;

  /// Every trainable tensor with a stable name, in a fixed order.
  std::vector<std::pair<std::string, numerics::Tensor*>> parameters();
  std::vector<std::pair<std::string, const numerics::Tensor*>> parameters() const;
};

/// Parameters drawn from the "init" sub-stream of `seed`.
CapsFieldModel init_model(const ModelConfig& config, std::vector<std::string> vocabulary,
                          std::uint64_t seed);

/// Both view sequences of one light field as [V, C, H, W] tensors, plus a class index.
struct Example {
  std::string id;
  numerics::Tensor horizontal;
  numerics::Tensor vertical;
  std::size_t label = 0;
};

Example make_example(const lightfield::SAArray& lf, std::size_t label);

// Batched forward pass on a tape.

struct BranchVars {
  features::EmbedderVars embedder;
  numerics::Var pose;
  numerics::Var head_weight;
  numerics::Var head_bias;
};

struct ModelVars {
  std::optional<BranchVars> horizontal;
  std::optional<BranchVars> vertical;
  /// Trainable leaves paired with the tensors they were bound from.
  std::vector<std::pair<numerics::Var, numerics::Tensor*>> leaves;
};

ModelVars bind(numerics::Tape& tape, CapsFieldModel& model, bool trainable);
ModelVars bind(numerics::Tape& tape, const CapsFieldModel& model);

struct BranchOutput {
  numerics::Var features;  // [B, head_input], the flattened capsules (or concatenation)
  numerics::Var probs;     // [B, n_classes]
  std::optional<numerics::Var> coupling;  // [B, N_p, N_c]
};

/// images: [B * V, C, H, W], the sequences of B samples stacked in order.
BranchOutput forward_branch(const BranchVars& vars, const ModelConfig& config, numerics::Var images,
                            std::size_t batch);

/// [B * V, C, H, W] stack of one axis of the given examples.
numerics::Tensor stack_sequences(const std::vector<const Example*>& batch, lightfield::Axis axis);

/// Normalizes each [C, H, W] view of a [N, C, H, W] stack in place.
void normalize_views(numerics::Tensor& images, InputNormalization mode);

/// stack_sequences followed by the configured normalization: the embedder input.
numerics::Tensor model_input(const std::vector<const Example*>& batch, lightfield::Axis axis,
                             const ModelConfig& config);

// Single-sample and inference API.

/// Class probabilities of one branch for one light field.
numerics::Tensor forward_branch(const lightfield::SAArray& lf, lightfield::Axis axis,
                                const CapsFieldModel& model);

/// Elementwise mean. Throws ShapeError on a length mismatch and
/// NumericError when an input is not a distribution (sum off by > 1e-5).
numerics::Tensor fuse_scores(const numerics::Tensor& p_h, const numerics::Tensor& p_v);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(const numerics::Tensor& probs);

struct Prediction {
  std::size_t label = 0;
  numerics::Tensor probs;
};

/// Fused prediction; a single-branch model uses its one branch.
Prediction predict(const lightfield::SAArray& lf, const CapsFieldModel& model);

struct BatchInference {
  std::vector<Prediction> predictions;
  /// Per-sample head input averaged over the active branches, [head_input] each.
  std::vector<numerics::Tensor> embeddings;
  /// Per-sample coupling coefficients of the final routing iteration, one per branch.
  std::vector<std::vector<numerics::Tensor>> couplings;
};

/// Inference over many examples in chunks of `chunk` samples, spread over
/// up to `jobs` threads. Results do not depend on `jobs`.
BatchInference infer(const CapsFieldModel& model, const std::vector<const Example*>& examples,
                     std::size_t chunk = 32, std::size_t jobs = 1);

/// Throws CompatibilityError when the model cannot consume the given data.
void check_compatible(const CapsFieldModel& model, std::size_t views, std::size_t height,
                      std::size_t width, std::size_t channels);
void check_vocabulary(const CapsFieldModel& model, const std::vector<std::string>& vocabulary);

}  // namespace capsfield::model
