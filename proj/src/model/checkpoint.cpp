#include "capsfield/model/checkpoint.hpp"

#include <array>
#include <cstdint>
#include <fstream>
#include <string>

#include "capsfield/errors.hpp"
#include "capsfield/model/config_io.hpp"
#include "capsfield/numerics/tensor_io.hpp"

namespace capsfield::model {

using nlohmann::json;
using numerics::Tensor;

namespace {

constexpr std::array<char, 4> kMagic{'C', 'F', 'C', 'K'};

void write_u32(std::ostream& out, std::uint32_t v) {
  const std::array<unsigned char, 4> b{static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                       static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t read_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError("checkpoint truncated in its header");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

void save_checkpoint(const CapsFieldModel& model, const std::filesystem::path& path) {
  json tensors = json::array();
  for (const auto& [name, t] : model.parameters()) tensors.push_back(json{{"name", name}, {"shape", t->shape()}});
  const json header{{"version", kCheckpointVersion}, {"model", to_json(model.config)},
                    {"vocabulary", model.vocabulary}, {"seed", model.seed},
                    {"epoch", model.epoch},           {"tensors", tensors}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint '" + path.string() + "'");
  out.write(kMagic.data(), kMagic.size());
  write_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : model.parameters()) numerics::write_tensor(out, *t, numerics::StorageType::f64);
  if (!out) throw ConfigError("failed writing checkpoint '" + path.string() + "'");
}

CapsFieldModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CompatibilityError("cannot open checkpoint '" + path.string() + "'");
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kMagic)
    throw FormatError("'" + path.string() + "' is not a checkpoint (bad magic bytes)");
  const std::uint32_t length = read_u32(in);
  std::string text(length, '\0');
  if (!in.read(text.data(), length)) throw FormatError("checkpoint truncated in its header");

  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const std::string version = header.value("version", std::string());
  if (version != kCheckpointVersion)
    throw CompatibilityError("checkpoint version '" + version + "' is not supported (expected '" +
                             std::string(kCheckpointVersion) + "')");

  CapsFieldModel model;
  try {
    ModelConfig config;
    apply_json(header.at("model"), config);
    model = init_model(config, header.at("vocabulary").get<std::vector<std::string>>(),
                       header.at("seed").get<std::uint64_t>());
    model.epoch = header.at("epoch").get<std::size_t>();
    const json& listed = header.at("tensors");
    auto params = model.parameters();
    if (listed.size() != params.size())
      throw FormatError("checkpoint lists " + std::to_string(listed.size()) + " tensors, the model needs " +
                        std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& [name, tensor] = params[i];
      if (listed[i].at("name").get<std::string>() != name)
        throw FormatError("checkpoint tensor " + std::to_string(i) + " is '" +
                          listed[i].at("name").get<std::string>() + "', expected '" + name + "'");
      Tensor t = numerics::read_tensor(in);
      if (t.shape() != tensor->shape() || listed[i].at("shape").get<numerics::Shape>() != tensor->shape())
        throw FormatError("checkpoint tensor '" + name + "' has shape " + numerics::to_string(t.shape()) +
                          ", expected " + numerics::to_string(tensor->shape()));
      *tensor = std::move(t);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("corrupt checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint holds an invalid configuration: ") + e.what());
  }
  return model;
}

}  // namespace capsfield::model
