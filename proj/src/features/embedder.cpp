#include "capsfield/features/embedder.hpp"

#include <cmath>

#include "capsfield/errors.hpp"
#include "capsfield/numerics/ops.hpp"

namespace capsfield::features {

using numerics::Shape;
using numerics::Tensor;
using numerics::Var;

namespace {

Tensor uniform_tensor(Shape shape, double bound, numerics::Rng& rng) {
  Tensor t(std::move(shape), 0.0);
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

void check_channels(std::size_t got, const EmbedderParams& params) {
  if (got != params.in_channels)
    throw ShapeError("embedder expects " + std::to_string(params.in_channels) +
                     "-channel images, got " + std::to_string(got));
}

}  // namespace

void EmbedderConfig::validate() const {
  if (stages.empty()) throw ConfigError("embedder needs at least one conv stage");
  for (const auto& s : stages)
    if (s.out_channels == 0 || s.kernel == 0 || s.stride == 0)
      throw ConfigError("conv stage sizes must be positive");
  if (embedding_dim == 0) throw ConfigError("embedding dimension must be positive");
}

std::vector<Tensor*> EmbedderParams::tensors() {
  std::vector<Tensor*> out;
  for (std::size_t i = 0; i < conv_weight.size(); ++i) {
    out.push_back(&conv_weight[i]);
    out.push_back(&conv_bias[i]);
  }
  out.push_back(&proj_weight);
  out.push_back(&proj_bias);
  return out;
}

std::vector<const Tensor*> EmbedderParams::tensors() const {
  std::vector<const Tensor*> out;
  for (Tensor* t : const_cast<EmbedderParams*>(this)->tensors()) out.push_back(t);
  return out;
}

std::vector<std::string> EmbedderParams::tensor_names() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < conv_weight.size(); ++i) {
    out.push_back("conv" + std::to_string(i) + ".weight");
    out.push_back("conv" + std::to_string(i) + ".bias");
  }
  out.push_back("proj.weight");
  out.push_back("proj.bias");
  return out;
}

EmbedderParams init_embedder(const EmbedderConfig& cfg, std::size_t in_channels, numerics::Rng& rng) {
  cfg.validate();
  if (in_channels == 0) throw ConfigError("embedder input needs at least one channel");
  EmbedderParams p;
  p.in_channels = in_channels;
  std::size_t c = in_channels;
  for (const auto& s : cfg.stages) {
    const double fan_in = static_cast<double>(c * s.kernel * s.kernel);
    // Uniform(+-sqrt(6 / fan_in)) keeps activation variance through the ReLUs.
    p.conv_weight.push_back(uniform_tensor({s.out_channels, c, s.kernel, s.kernel}, std::sqrt(6.0 / fan_in), rng));
    p.conv_bias.emplace_back(Shape{s.out_channels}, 0.0);
    c = s.out_channels;
  }
  p.proj_weight = uniform_tensor({c, cfg.embedding_dim}, std::sqrt(3.0 / static_cast<double>(c)), rng);
  p.proj_bias = Tensor({cfg.embedding_dim}, 0.0);
  return p;
}

EmbedderVars bind(numerics::Tape& tape, const EmbedderParams& params, bool trainable) {
  auto leaf = [&](const Tensor& t) { return trainable ? tape.variable(t) : tape.constant(t); };
  EmbedderVars v;
  for (std::size_t i = 0; i < params.conv_weight.size(); ++i) {
    v.conv_weight.push_back(leaf(params.conv_weight[i]));
    v.conv_bias.push_back(leaf(params.conv_bias[i]));
  }
  v.proj_weight = leaf(params.proj_weight);
  v.proj_bias = leaf(params.proj_bias);
  return v;
}

Var embed_images(const EmbedderVars& vars, const EmbedderConfig& cfg, Var images) {
  if (images.value().rank() != 4)
    throw ShapeError("embedder input must be [N, C, H, W], got " + numerics::to_string(images.shape()));
  if (vars.conv_weight.size() != cfg.stages.size())
    throw ShapeError("embedder parameters do not match the configured stages");
  Var x = images;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const auto& s = cfg.stages[i];
    x = numerics::relu(numerics::conv2d(x, vars.conv_weight[i], vars.conv_bias[i], s.stride, s.kernel / 2));
  }
  x = numerics::global_avg_pool(x);
  return numerics::add_bias(numerics::matmul(x, vars.proj_weight), vars.proj_bias);
}

Tensor embed_view(const lightfield::SubApertureImage& image, const EmbedderParams& params,
                  const EmbedderConfig& cfg) {
  check_channels(image.channels(), params);
  numerics::Tape tape(false);
  const EmbedderVars vars = bind(tape, params, false);
  Tensor chw = image.to_tensor();
  Var x = tape.constant(chw.reshaped({1, image.channels(), image.height(), image.width()}));
  return embed_images(vars, cfg, x).value().reshaped({cfg.embedding_dim});
}

EmbeddingSequence embed_sequence(const lightfield::ViewSequence& seq, const EmbedderParams& params,
                                 const EmbedderConfig& cfg) {
  if (seq.views.empty()) throw ShapeError("cannot embed an empty view sequence");
  check_channels(seq.views.front().channels(), params);
  numerics::Tape tape(false);
  const EmbedderVars vars = bind(tape, params, false);
  Var x = tape.constant(lightfield::to_tensor(seq));
  return {seq.axis, embed_images(vars, cfg, x).value()};
}

}  // namespace capsfield::features
