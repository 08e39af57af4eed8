#include "capsfield/diagnostics/gradcheck_suite.hpp"

#include <cmath>

#include "capsfield/capsule/capsule.hpp"
#include "capsfield/errors.hpp"
#include "capsfield/features/embedder.hpp"
#include "capsfield/model/model.hpp"
#include "capsfield/model/train.hpp"
#include "capsfield/numerics/ops.hpp"
#include "capsfield/numerics/rng.hpp"

namespace capsfield::diagnostics {

using numerics::Rng;
using numerics::Shape;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape), 0.0);
  for (double& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

/// Scalar probe of a tensor-valued output: sum(out * weights) with fixed weights.
Var probe(Var out, const Tensor& weights) {
  return numerics::sum(numerics::mul(out, out.tape().constant(weights)));
}

/// Squash with the correct forward value but a backward pass that drops the
/// derivative of the length factor.
Var corrupted_squash(Var s) {
  Tensor out = capsule::squash(s.value());
  const std::size_t cs = s.shape().back();
  const std::size_t n = s.value().size() / cs;
  return s.tape().record(std::move(out), {s}, [s, cs, n](const Tensor& g, const Tensor&, Tape& tape) {
    const Tensor& sv = s.value();
    Tensor& ds = tape.grad_buffer(s);
    for (std::size_t r = 0; r < n; ++r) {
      double n2 = 0.0;
      for (std::size_t k = 0; k < cs; ++k) n2 += sv[r * cs + k] * sv[r * cs + k];
      const double f = std::sqrt(n2) / (1.0 + n2);
      for (std::size_t k = 0; k < cs; ++k) ds[r * cs + k] += f * g[r * cs + k];
    }
  });
}

ComponentCheck check(std::string name, const numerics::ScalarFn& fn, std::vector<Tensor> params) {
  return {std::move(name), numerics::grad_check(fn, std::move(params), kGradTolerance)};
}

ComponentCheck squash_check(Rng& rng, Corruption corruption) {
  const Tensor weights = random_tensor(rng, {2, 3, 4});
  const bool corrupt = corruption == Corruption::squash;
  return check(
      "squash",
      [&](Tape&, std::span<const Var> p) { return probe(corrupt ? corrupted_squash(p[0]) : capsule::squash(p[0]), weights); },
      {random_tensor(rng, {2, 3, 4})});
}

void unit_checks(Rng& rng, std::vector<ComponentCheck>& out) {
  capsule::CapsuleConfig caps;
  caps.num_secondary = 2;
  caps.capsule_size = 4;
  caps.routing_iterations = 3;

  {
    const Tensor weights = random_tensor(rng, {2, 3, 2, 4});
    out.push_back(check(
        "pose_predict", [&](Tape&, std::span<const Var> p) { return probe(capsule::pose_predict(p[0], p[1]), weights); },
        {random_tensor(rng, {2, 3, 4}), random_tensor(rng, {3, 2, 4, 4})}));
  }
  {
    const Tensor weights = random_tensor(rng, {2, 2, 4});
    out.push_back(check(
        "coupling_sum", [&](Tape&, std::span<const Var> p) { return probe(capsule::coupling_sum(p[0], p[1]), weights); },
        {random_tensor(rng, {2, 3, 2}, 0.0, 1.0), random_tensor(rng, {2, 3, 2, 4})}));
  }
  {
    const Tensor weights = random_tensor(rng, {2, 3, 2});
    out.push_back(check(
        "agreement", [&](Tape&, std::span<const Var> p) { return probe(capsule::agreement(p[0], p[1]), weights); },
        {random_tensor(rng, {2, 3, 2, 4}), random_tensor(rng, {2, 2, 4})}));
  }
  {
    const Tensor weights = random_tensor(rng, {6, 3});
    out.push_back(check(
        "routing_softmax", [&](Tape&, std::span<const Var> p) { return probe(numerics::softmax_rows(p[0]), weights); },
        {random_tensor(rng, {6, 3}, -2.0, 2.0)}));
  }
  {
    const Tensor weights = random_tensor(rng, {2, 2, 4});
    out.push_back(check(
        "dynamic_routing",
        [&](Tape&, std::span<const Var> p) { return probe(capsule::dynamic_routing(p[0], p[1], caps).secondary, weights); },
        {random_tensor(rng, {2, 3, 4}, -0.5, 0.5), random_tensor(rng, {3, 2, 4, 4})}));
  }
  {
    const Tensor weights = random_tensor(rng, {2, 3, 3, 3});
    out.push_back(check(
        "conv2d", [&](Tape&, std::span<const Var> p) { return probe(numerics::conv2d(p[0], p[1], p[2], 2, 1), weights); },
        {random_tensor(rng, {2, 2, 6, 6}), random_tensor(rng, {3, 2, 3, 3}), random_tensor(rng, {3})}));
  }
  {
    features::EmbedderConfig cfg;
    cfg.stages = {{3, 3, 2}, {4, 3, 2}};
    cfg.embedding_dim = 4;
    Rng init(rng.index(1u << 30));
    features::EmbedderParams params = features::init_embedder(cfg, 1, init);
    // Positive biases keep the ReLUs away from their kink.
    for (auto& b : params.conv_bias) b = random_tensor(rng, b.shape(), 0.1, 0.3);
    const Tensor images = random_tensor(rng, {2, 1, 8, 8}, 0.0, 1.0);
    const Tensor weights = random_tensor(rng, {2, 4});
    std::vector<Tensor> init_values;
    for (const Tensor* t : params.tensors()) init_values.push_back(*t);
    out.push_back(check(
        "embedder",
        [&](Tape& tape, std::span<const Var> p) {
          features::EmbedderVars v;
          for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
            v.conv_weight.push_back(p[2 * i]);
            v.conv_bias.push_back(p[2 * i + 1]);
          }
          v.proj_weight = p[2 * cfg.stages.size()];
          v.proj_bias = p[2 * cfg.stages.size() + 1];
          return probe(features::embed_images(v, cfg, tape.constant(images)), weights);
        },
        init_values));
  }
  {
    const std::vector<std::size_t> labels{0, 3, 1};
    out.push_back(check(
        "head_cross_entropy",
        [&](Tape&, std::span<const Var> p) {
          return numerics::cross_entropy(numerics::softmax_rows(numerics::add_bias(numerics::matmul(p[0], p[1]), p[2])),
                                         labels);
        },
        {random_tensor(rng, {3, 5}), random_tensor(rng, {5, 4}), random_tensor(rng, {4}, -0.1, 0.1)}));
  }
}

model::BranchVars branch_vars(std::span<const Var> p, std::size_t& at, std::size_t stages, bool capsules) {
  model::BranchVars b;
  for (std::size_t i = 0; i < stages; ++i) {
    b.embedder.conv_weight.push_back(p[at++]);
    b.embedder.conv_bias.push_back(p[at++]);
  }
  b.embedder.proj_weight = p[at++];
  b.embedder.proj_bias = p[at++];
  if (capsules) b.pose = p[at++];
  b.head_weight = p[at++];
  b.head_bias = p[at++];
  return b;
}

void toy_model_checks(Rng& rng, std::vector<ComponentCheck>& out) {
  model::ModelConfig cfg;
  cfg.embedder.stages = {{2, 3, 2}};
  cfg.embedder.embedding_dim = 4;
  cfg.capsule.num_secondary = 2;
  cfg.capsule.capsule_size = 4;
  cfg.views = 3;
  cfg.height = 8;
  cfg.width = 8;
  model::CapsFieldModel m = model::init_model(cfg, {"a", "b", "c"}, rng.index(1u << 30));
  for (auto* b : {&*m.horizontal, &*m.vertical}) {
    b->embedder.conv_bias[0] = random_tensor(rng, {2}, 0.1, 0.3);
    b->embedder.proj_bias = random_tensor(rng, {4}, -0.5, 0.5);
  }
  std::vector<model::Example> data(2);
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i].id = "toy" + std::to_string(i);
    data[i].label = i;
    data[i].horizontal = random_tensor(rng, {cfg.views, 1, cfg.height, cfg.width}, 0.0, 1.0);
    data[i].vertical = random_tensor(rng, {cfg.views, 1, cfg.height, cfg.width}, 0.0, 1.0);
  }
  std::vector<const model::Example*> batch;
  for (const auto& e : data) batch.push_back(&e);
  std::vector<Tensor> params;
  for (const auto& [name, t] : m.parameters()) params.push_back(*t);

  for (bool joint : {false, true}) {
    out.push_back(check(
        joint ? "model_fused_loss" : "model_branch_losses",
        [&](Tape& tape, std::span<const Var> p) {
          model::ModelVars vars;
          std::size_t at = 0;
          vars.horizontal = branch_vars(p, at, cfg.embedder.stages.size(), true);
          vars.vertical = branch_vars(p, at, cfg.embedder.stages.size(), true);
          return model::batch_loss(tape, vars, cfg, batch, joint);
        },
        params));
  }
}

}  // namespace

GradScale parse_grad_scale(std::string_view s) {
  if (s == "unit") return GradScale::unit;
  if (s == "toy-model" || s == "toy_model") return GradScale::toy_model;
  throw ConfigError("unknown gradcheck scale '" + std::string(s) + "' (expected unit or toy-model)");
}

Corruption parse_corruption(std::string_view s) {
  if (s.empty() || s == "none") return Corruption::none;
  if (s == "squash") return Corruption::squash;
  throw ConfigError("unknown corruption '" + std::string(s) + "'");
}

std::vector<ComponentCheck> run_gradcheck_suite(GradScale scale, Corruption corruption, std::uint64_t seed) {
  Rng rng(numerics::derive_seed(seed, "gradcheck"));
  std::vector<ComponentCheck> out;
  out.push_back(squash_check(rng, corruption));
  if (scale == GradScale::unit) {
    unit_checks(rng, out);
  } else {
    toy_model_checks(rng, out);
  }
  return out;
}

bool all_passed(const std::vector<ComponentCheck>& checks) {
  for (const auto& c : checks)
    if (!c.report.passed()) return false;
  return true;
}

}  // namespace capsfield::diagnostics
