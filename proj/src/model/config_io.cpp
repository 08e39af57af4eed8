#include "capsfield/model/config_io.hpp"

#include <initializer_list>
#include <string>

#include "capsfield/errors.hpp"

namespace capsfield::model {

using nlohmann::json;

namespace {

void require_object(const json& j, const char* what, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(std::string("unknown ") + what + " field '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const char* what) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(what) + " field '" + key + "' has the wrong type");
  }
}

}  // namespace

json to_json(const features::EmbedderConfig& c) {
  json stages = json::array();
  for (const auto& s : c.stages)
    stages.push_back(json{{"channels", s.out_channels}, {"kernel", s.kernel}, {"stride", s.stride}});
  return json{{"stages", stages}, {"embedding_dim", c.embedding_dim}};
}

json to_json(const capsule::CapsuleConfig& c) {
  return json{{"num_secondary", c.num_secondary},
              {"capsule_size", c.capsule_size},
              {"routing_iterations", c.routing_iterations},
              {"detach_routing", c.detach_routing}};
}

json to_json(const ModelConfig& c) {
  return json{{"embedder", to_json(c.embedder)},
              {"capsule", to_json(c.capsule)},
              {"branches", std::string(to_string(c.branches))},
              {"use_capsules", c.use_capsules},
              {"share_pose_matrices", c.share_pose_matrices},
              {"input_normalization", std::string(to_string(c.input_normalization))},
              {"views", c.views},
              {"height", c.height},
              {"width", c.width},
              {"channels", c.channels}};
}

json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.optimizer.learning_rate},
              {"decay", c.optimizer.decay},
              {"epsilon", c.optimizer.epsilon},
              {"precision", std::string(to_string(c.precision))},
              {"patience", c.patience},
              {"validation_fraction", c.validation_fraction},
              {"joint_loss", c.joint_loss}};
}

void apply_json(const json& j, features::EmbedderConfig& c) {
  require_object(j, "embedder", {"stages", "embedding_dim"});
  if (j.contains("stages")) {
    if (!j["stages"].is_array()) throw ConfigError("embedder field 'stages' must be an array");
    c.stages.clear();
    for (const auto& s : j["stages"]) {
      require_object(s, "conv stage", {"channels", "kernel", "stride"});
      features::ConvStage stage;
      read(s, "channels", stage.out_channels, "conv stage");
      read(s, "kernel", stage.kernel, "conv stage");
      read(s, "stride", stage.stride, "conv stage");
      c.stages.push_back(stage);
    }
  }
  read(j, "embedding_dim", c.embedding_dim, "embedder");
}

void apply_json(const json& j, capsule::CapsuleConfig& c) {
  require_object(j, "capsule", {"num_secondary", "capsule_size", "routing_iterations", "detach_routing"});
  read(j, "num_secondary", c.num_secondary, "capsule");
  read(j, "capsule_size", c.capsule_size, "capsule");
  read(j, "routing_iterations", c.routing_iterations, "capsule");
  read(j, "detach_routing", c.detach_routing, "capsule");
}

void apply_json(const json& j, ModelConfig& c) {
  require_object(j, "model", {"embedder", "capsule", "branches", "use_capsules", "share_pose_matrices",
                              "input_normalization", "views", "height", "width", "channels"});
  if (j.contains("embedder")) apply_json(j["embedder"], c.embedder);
  if (j.contains("capsule")) apply_json(j["capsule"], c.capsule);
  std::string branches(to_string(c.branches));
  read(j, "branches", branches, "model");
  c.branches = parse_branch_mode(branches);
  read(j, "use_capsules", c.use_capsules, "model");
  read(j, "share_pose_matrices", c.share_pose_matrices, "model");
  std::string normalization(to_string(c.input_normalization));
  read(j, "input_normalization", normalization, "model");
  c.input_normalization = parse_input_normalization(normalization);
  read(j, "views", c.views, "model");
  read(j, "height", c.height, "model");
  read(j, "width", c.width, "model");
  read(j, "channels", c.channels, "model");
}

void apply_json(const json& j, TrainConfig& c) {
  require_object(j, "train", {"epochs", "batch_size", "learning_rate", "decay", "epsilon", "precision", "patience",
                              "validation_fraction", "joint_loss"});
  read(j, "epochs", c.epochs, "train");
  read(j, "batch_size", c.batch_size, "train");
  read(j, "learning_rate", c.optimizer.learning_rate, "train");
  read(j, "decay", c.optimizer.decay, "train");
  read(j, "epsilon", c.optimizer.epsilon, "train");
  std::string precision(to_string(c.precision));
  read(j, "precision", precision, "train");
  c.precision = parse_precision(precision);
  read(j, "patience", c.patience, "train");
  read(j, "validation_fraction", c.validation_fraction, "train");
  read(j, "joint_loss", c.joint_loss, "train");
}

}  // namespace capsfield::model
