#include "capsfield/model/model.hpp"

#include <cmath>
#include <string>

#include "capsfield/errors.hpp"
#include "capsfield/numerics/ops.hpp"
#include "capsfield/numerics/parallel.hpp"

namespace capsfield::model {

using lightfield::Axis;
using numerics::Shape;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

namespace {

Tensor uniform_tensor(Shape shape, double bound, numerics::Rng& rng) {
  Tensor t(std::move(shape), 0.0);
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

std::string branch_prefix(Axis axis) { return axis == Axis::horizontal ? "h." : "v."; }

Tensor row_of(const Tensor& m, std::size_t r) {
  const std::size_t n = m.size() / m.dim(0);
  return Tensor({n}, std::vector<double>(m.data().begin() + static_cast<std::ptrdiff_t>(r * n),
                                         m.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * n)));
}

Tensor sample_block(const Tensor& t, std::size_t b) {
  Shape shape(t.shape().begin() + 1, t.shape().end());
  const std::size_t n = numerics::shape_size(shape);
  return Tensor(std::move(shape),
                std::vector<double>(t.data().begin() + static_cast<std::ptrdiff_t>(b * n),
                                    t.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * n)));
}

}  // namespace

std::string_view to_string(BranchMode m) {
  switch (m) {
    case BranchMode::both: return "both";
    case BranchMode::horizontal: return "horizontal";
    case BranchMode::vertical: return "vertical";
  }
  return "?";
}

BranchMode parse_branch_mode(std::string_view s) {
  if (s == "both") return BranchMode::both;
  if (s == "horizontal" || s == "h") return BranchMode::horizontal;
  if (s == "vertical" || s == "v") return BranchMode::vertical;
  throw ConfigError("unknown branch mode '" + std::string(s) + "' (expected both, horizontal or vertical)");
}

std::string_view to_string(InputNormalization n) {
  switch (n) {
    case InputNormalization::none: return "none";
    case InputNormalization::per_view: return "per_view";
  }
  return "?";
}

InputNormalization parse_input_normalization(std::string_view s) {
  if (s == "none") return InputNormalization::none;
  if (s == "per_view") return InputNormalization::per_view;
  throw ConfigError("unknown input normalization '" + std::string(s) + "' (expected none or per_view)");
}

void ModelConfig::validate() const {
  embedder.validate();
  capsule.validate();
  if (views == 0 || views % 2 == 0) throw ConfigError("views per axis must be odd and positive");
  if (height < lightfield::kMinImageSide || width < lightfield::kMinImageSide)
    throw ConfigError("images must be at least " + std::to_string(lightfield::kMinImageSide) + " px");
  if (channels == 0) throw ConfigError("images need at least one channel");
  if (use_capsules) capsule.primary_count(views, embedder.embedding_dim);
}

bool ModelConfig::uses(Axis axis) const {
  if (branches == BranchMode::both) return true;
  return (axis == Axis::horizontal) == (branches == BranchMode::horizontal);
}

std::size_t ModelConfig::head_input() const {
  return use_capsules ? capsule.output_length() : views * embedder.embedding_dim;
}

const BranchParams& CapsFieldModel::branch(Axis axis) const {
  const auto& b = axis == Axis::horizontal ? horizontal : vertical;
  if (!b) throw ConfigError("model has no " + std::string(lightfield::to_string(axis)) + " branch");
  return *b;
}

BranchParams& CapsFieldModel::branch(Axis axis) {
  return const_cast<BranchParams&>(std::as_const(*this).branch(axis));
}

const Tensor& CapsFieldModel::pose(Axis axis) const {
  return config.share_pose_matrices ? shared_pose : branch(axis).pose;
}

std::vector<std::pair<std::string, Tensor*>> CapsFieldModel::parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (Axis axis : {Axis::horizontal, Axis::vertical}) {
    auto& b = axis == Axis::horizontal ? horizontal : vertical;
    if (!b) continue;
    const std::string prefix = branch_prefix(axis);
    const auto names = b->embedder.tensor_names();
    const auto tensors = b->embedder.tensors();
    for (std::size_t i = 0; i < tensors.size(); ++i) out.emplace_back(prefix + names[i], tensors[i]);
    if (config.use_capsules && !config.share_pose_matrices) out.emplace_back(prefix + "pose", &b->pose);
    out.emplace_back(prefix + "head.weight", &b->head_weight);
    out.emplace_back(prefix + "head.bias", &b->head_bias);
  }
  if (config.use_capsules && config.share_pose_matrices) out.emplace_back("shared.pose", &shared_pose);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> CapsFieldModel::parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<CapsFieldModel*>(this)->parameters()) out.emplace_back(name, t);
  return out;
}

CapsFieldModel init_model(const ModelConfig& config, std::vector<std::string> vocabulary,
                          std::uint64_t seed) {
  config.validate();
  if (vocabulary.empty()) throw ConfigError("label vocabulary is empty");
  CapsFieldModel m;
  m.config = config;
  m.vocabulary = std::move(vocabulary);
  m.seed = seed;
  const std::size_t n = m.vocabulary.size();
  const std::size_t f = config.head_input();
  const std::size_t np =
      config.use_capsules ? config.capsule.primary_count(config.views, config.embedder.embedding_dim) : 0;
  for (Axis axis : {Axis::horizontal, Axis::vertical}) {
    if (!config.uses(axis)) continue;
    numerics::Rng rng(numerics::derive_seed(seed, "init"), branch_prefix(axis));
    BranchParams b;
    b.embedder = features::init_embedder(config.embedder, config.channels, rng);
    if (config.use_capsules && !config.share_pose_matrices)
      b.pose = capsule::init_pose_matrices(np, config.capsule, rng);
    b.head_weight = uniform_tensor({f, n}, 1.0 / std::sqrt(static_cast<double>(f)), rng);
    b.head_bias = Tensor({n}, 0.0);
    (axis == Axis::horizontal ? m.horizontal : m.vertical) = std::move(b);
  }
  if (config.use_capsules && config.share_pose_matrices) {
    numerics::Rng rng(numerics::derive_seed(seed, "init"), "shared");
    m.shared_pose = capsule::init_pose_matrices(np, config.capsule, rng);
  }
  return m;
}

Example make_example(const lightfield::SAArray& lf, std::size_t label) {
  return Example{lf.metadata().sample_id,
                 lightfield::to_tensor(lightfield::extract_sequence(lf, Axis::horizontal)),
                 lightfield::to_tensor(lightfield::extract_sequence(lf, Axis::vertical)), label};
}

ModelVars bind(Tape& tape, CapsFieldModel& model, bool trainable) {
  ModelVars vars;
  auto leaf = [&](Tensor& t) {
    const Var v = trainable ? tape.variable(t) : tape.constant(t);
    if (trainable) vars.leaves.emplace_back(v, &t);
    return v;
  };
  Var shared;
  if (model.config.use_capsules && model.config.share_pose_matrices) shared = leaf(model.shared_pose);
  for (Axis axis : {Axis::horizontal, Axis::vertical}) {
    auto& params = axis == Axis::horizontal ? model.horizontal : model.vertical;
    if (!params) continue;
    BranchVars b;
    auto& e = params->embedder;
    for (std::size_t i = 0; i < e.conv_weight.size(); ++i) {
      b.embedder.conv_weight.push_back(leaf(e.conv_weight[i]));
      b.embedder.conv_bias.push_back(leaf(e.conv_bias[i]));
    }
    b.embedder.proj_weight = leaf(e.proj_weight);
    b.embedder.proj_bias = leaf(e.proj_bias);
    if (model.config.use_capsules) b.pose = model.config.share_pose_matrices ? shared : leaf(params->pose);
    b.head_weight = leaf(params->head_weight);
    b.head_bias = leaf(params->head_bias);
    (axis == Axis::horizontal ? vars.horizontal : vars.vertical) = std::move(b);
  }
  return vars;
}

ModelVars bind(Tape& tape, const CapsFieldModel& model) {
  return bind(tape, const_cast<CapsFieldModel&>(model), false);
}

BranchOutput forward_branch(const BranchVars& vars, const ModelConfig& config, Var images,
                            std::size_t batch) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[0] != batch * config.views || s[1] != config.channels || s[2] != config.height ||
      s[3] != config.width)
    throw ShapeError("forward_branch: expected " + std::to_string(batch) + " sequences of " +
                     std::to_string(config.views) + " views of " + std::to_string(config.channels) + "x" +
                     std::to_string(config.height) + "x" + std::to_string(config.width) + ", got " +
                     numerics::to_string(s));
  const Var emb = features::embed_images(vars.embedder, config.embedder, images);
  const Var joined = numerics::reshape(emb, {batch, config.views * config.embedder.embedding_dim});
  BranchOutput out;
  if (config.use_capsules) {
    const Var primary = capsule::reshape_to_primary(joined, config.capsule);
    capsule::RoutingOutput routed = capsule::dynamic_routing(primary, vars.pose, config.capsule);
    out.features = capsule::flatten_capsules(routed.secondary);
    out.coupling = routed.coupling;
  } else {
    out.features = joined;
  }
  const Var logits = numerics::add_bias(numerics::matmul(out.features, vars.head_weight), vars.head_bias);
  out.probs = numerics::softmax_rows(logits);
  return out;
}

Tensor stack_sequences(const std::vector<const Example*>& batch, Axis axis) {
  if (batch.empty()) throw ShapeError("stack_sequences: empty batch");
  const Tensor& first = axis == Axis::horizontal ? batch[0]->horizontal : batch[0]->vertical;
  Shape shape = first.shape();
  const std::size_t per = first.size();
  shape[0] *= batch.size();
  Tensor out(shape, 0.0);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Tensor& t = axis == Axis::horizontal ? batch[b]->horizontal : batch[b]->vertical;
    if (t.shape() != first.shape())
      throw ShapeError("stack_sequences: sample '" + batch[b]->id + "' has shape " +
                       numerics::to_string(t.shape()) + ", expected " + numerics::to_string(first.shape()));
    std::copy(t.data().begin(), t.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * per));
  }
  return out;
}

void normalize_views(Tensor& images, InputNormalization mode) {
  if (mode == InputNormalization::none) return;
  if (images.rank() != 4)
    throw ShapeError("normalize_views expects [N, C, H, W], got " + numerics::to_string(images.shape()));
  const std::size_t per = images.size() / images.dim(0);
  const std::span<double> d = images.data();
  for (std::size_t v = 0; v < images.dim(0); ++v) {
    const auto first = d.begin() + static_cast<std::ptrdiff_t>(v * per);
    double mean = 0.0;
    for (auto it = first; it != first + static_cast<std::ptrdiff_t>(per); ++it) mean += *it;
    mean /= static_cast<double>(per);
    double var = 0.0;
    for (auto it = first; it != first + static_cast<std::ptrdiff_t>(per); ++it) var += (*it - mean) * (*it - mean);
    var /= static_cast<double>(per);
    // A flat view stays flat (all zeros) rather than blowing up.
    const double inv = var > 1e-12 ? 1.0 / std::sqrt(var) : 0.0;
    for (auto it = first; it != first + static_cast<std::ptrdiff_t>(per); ++it) *it = (*it - mean) * inv;
  }
}

Tensor model_input(const std::vector<const Example*>& batch, Axis axis, const ModelConfig& config) {
  Tensor images = stack_sequences(batch, axis);
  normalize_views(images, config.input_normalization);
  return images;
}

Tensor forward_branch(const lightfield::SAArray& lf, Axis axis, const CapsFieldModel& model) {
  const Example ex = make_example(lf, 0);
  check_compatible(model, lf.side(), lf.view(0, 0).height(), lf.view(0, 0).width(), lf.view(0, 0).channels());
  Tape tape(false);
  const ModelVars vars = bind(tape, model);
  const auto& b = axis == Axis::horizontal ? vars.horizontal : vars.vertical;
  if (!b) throw ConfigError("model has no " + std::string(lightfield::to_string(axis)) + " branch");
  const Var images = tape.constant(model_input({&ex}, axis, model.config));
  return row_of(forward_branch(*b, model.config, images, 1).probs.value(), 0);
}

Tensor fuse_scores(const Tensor& p_h, const Tensor& p_v) {
  if (p_h.rank() != 1 || p_v.rank() != 1 || p_h.size() != p_v.size())
    throw ShapeError("fuse_scores: length mismatch " + numerics::to_string(p_h.shape()) + " vs " +
                     numerics::to_string(p_v.shape()));
  for (const Tensor* p : {&p_h, &p_v}) {
    double total = 0.0;
    for (double x : p->data()) total += x;
    if (!p->all_finite() || std::abs(total - 1.0) > 1e-5)
      throw NumericError("fuse_scores: input does not sum to 1 (sum " + std::to_string(total) + ")");
  }
  Tensor out(p_h.shape(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (p_h[i] + p_v[i]);
  return out;
}

std::size_t argmax(const Tensor& probs) {
  if (probs.empty()) throw ShapeError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = i;
  return best;
}

Prediction predict(const lightfield::SAArray& lf, const CapsFieldModel& model) {
  check_compatible(model, lf.side(), lf.view(0, 0).height(), lf.view(0, 0).width(), lf.view(0, 0).channels());
  const Example ex = make_example(lf, 0);
  return infer(model, {&ex}).predictions.front();
}

BatchInference infer(const CapsFieldModel& model, const std::vector<const Example*>& examples,
                     std::size_t chunk, std::size_t jobs) {
  if (chunk == 0) throw ConfigError("inference chunk size must be positive");
  const std::size_t n = examples.size();
  BatchInference out;
  out.predictions.resize(n);
  out.embeddings.resize(n);
  out.couplings.resize(n);
  const std::size_t chunks = (n + chunk - 1) / chunk;
  numerics::parallel_for(chunks, jobs, [&](std::size_t c) {
    const std::size_t lo = c * chunk, hi = std::min(n, lo + chunk);
    const std::vector<const Example*> batch(examples.begin() + static_cast<std::ptrdiff_t>(lo),
                                            examples.begin() + static_cast<std::ptrdiff_t>(hi));
    Tape tape(false);
    const ModelVars vars = bind(tape, model);
    std::vector<Tensor> probs, feats, coupling;
    for (Axis axis : {Axis::horizontal, Axis::vertical}) {
      const auto& b = axis == Axis::horizontal ? vars.horizontal : vars.vertical;
      if (!b) continue;
      const Var images = tape.constant(model_input(batch, axis, model.config));
      const BranchOutput o = forward_branch(*b, model.config, images, batch.size());
      probs.push_back(o.probs.value());
      feats.push_back(o.features.value());
      if (o.coupling) coupling.push_back(o.coupling->value());
    }
    for (std::size_t k = 0; k < batch.size(); ++k) {
      Tensor p = row_of(probs[0], k);
      Tensor e = row_of(feats[0], k);
      if (probs.size() == 2) {
        p = fuse_scores(p, row_of(probs[1], k));
        const Tensor e2 = row_of(feats[1], k);
        for (std::size_t i = 0; i < e.size(); ++i) e[i] = 0.5 * (e[i] + e2[i]);
      }
      const std::size_t label = argmax(p);
      out.predictions[lo + k] = Prediction{label, std::move(p)};
      out.embeddings[lo + k] = std::move(e);
      for (const Tensor& cp : coupling) out.couplings[lo + k].push_back(sample_block(cp, k));
    }
  });
  return out;
}

void check_compatible(const CapsFieldModel& model, std::size_t views, std::size_t height,
                      std::size_t width, std::size_t channels) {
  const ModelConfig& c = model.config;
  if (views != c.views || height != c.height || width != c.width || channels != c.channels)
    throw CompatibilityError("model expects " + std::to_string(c.views) + " views per axis of " +
                             std::to_string(c.channels) + "x" + std::to_string(c.height) + "x" +
                             std::to_string(c.width) + ", data has " + std::to_string(views) + " of " +
                             std::to_string(channels) + "x" + std::to_string(height) + "x" +
                             std::to_string(width));
}

void check_vocabulary(const CapsFieldModel& model, const std::vector<std::string>& vocabulary) {
  if (vocabulary.size() != model.num_classes())
    throw CompatibilityError("model has " + std::to_string(model.num_classes()) + " classes, data has " +
                             std::to_string(vocabulary.size()));
  for (std::size_t i = 0; i < vocabulary.size(); ++i)
    if (vocabulary[i] != model.vocabulary[i])
      throw CompatibilityError("class " + std::to_string(i) + " is '" + model.vocabulary[i] +
                               "' in the model but '" + vocabulary[i] + "' in the data");
}

}  // namespace capsfield::model
