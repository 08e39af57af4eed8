#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "capsfield/lightfield/light_field.hpp"
#include "capsfield/numerics/rng.hpp"
#include "capsfield/numerics/tape.hpp"
#include "capsfield/numerics/tensor.hpp"

namespace capsfield::features {

struct ConvStage {
  std::size_t out_channels = 8;
  std::size_t kernel = 3;
  std::size_t stride = 2;

  friend bool operator==(const ConvStage&, const ConvStage&) = default;
};

/// Small convolutional embedder: conv stages with ReLU (zero padding
/// kernel / 2), global average pooling, then a linear map to D.
struct EmbedderConfig {
  std::vector<ConvStage> stages{{8, 3, 2}, {16, 3, 2}, {32, 3, 2}};
  std::size_t embedding_dim = 64;

  /// Throws ConfigError when there are no stages or a stage is degenerate.
  void validate() const;
  friend bool operator==(const EmbedderConfig&, const EmbedderConfig&) = default;
};

struct EmbedderParams {
  std::size_t in_channels = 1;
  std::vector<numerics::Tensor> conv_weight;  // [O, C, k, k]
  std::vector<numerics::Tensor> conv_bias;    // [O]
  numerics::Tensor proj_weight;  // [C_last, D]
  numerics::Tensor proj_bias;    // [D]

  /// Every tensor in a fixed order, for optimisers and checkpoints.
  std::vector<numerics::Tensor*> tensors();
  std::vector<const numerics::Tensor*> tensors() const;
  std::vector<std::string> tensor_names() const;
};

/// Weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
EmbedderParams init_embedder(const EmbedderConfig& cfg, std::size_t in_channels, numerics::Rng& rng);

/// The parameters placed on a tape.
struct EmbedderVars {
  std::vector<numerics::Var> conv_weight;
  std::vector<numerics::Var> conv_bias;
  numerics::Var proj_weight;
  numerics::Var proj_bias;
};

/// Trainable leaves when `trainable`, constants otherwise.
EmbedderVars bind(numerics::Tape& tape, const EmbedderParams& params, bool trainable);

/// images [N, C, H, W] -> embeddings [N, D]; every image goes through the same weights.
numerics::Var embed_images(const EmbedderVars& vars, const EmbedderConfig& cfg, numerics::Var images);

struct EmbeddingSequence {
  lightfield::Axis axis;
  numerics::Tensor rows;  // [V, D]
};

/// [D] embedding of one view. Throws ShapeError when the channel count
/// differs from the parameters'.
numerics::Tensor embed_view(const lightfield::SubApertureImage& image, const EmbedderParams& params,
                            const EmbedderConfig& cfg);

/// Row i is embed_view(seq.views[i]).
EmbeddingSequence embed_sequence(const lightfield::ViewSequence& seq, const EmbedderParams& params,
                                 const EmbedderConfig& cfg);

}  // namespace capsfield::features
