#include "fisherscope/checkpoint.hpp"

#include "fisherscope/blobfile.hpp"
#include "fisherscope/error.hpp"

namespace fisherscope {

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"task", to_string(c.task)},
          {"depth", c.depth},
          {"width", c.width},
          {"input_dim", c.input_dim},
          {"output_dim", c.output_dim},
          {"activation", to_string(c.activation)},
          {"heads", c.heads},
          {"vocab_size", c.vocab_size},
          {"max_seq_len", c.max_seq_len}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.kind = parse_model_kind(j.at("kind").get<std::string>());
  c.task = parse_task_kind(j.at("task").get<std::string>());
  c.depth = j.at("depth").get<std::size_t>();
  c.width = j.at("width").get<std::size_t>();
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.output_dim = j.at("output_dim").get<std::size_t>();
  c.activation = parse_activation(j.at("activation").get<std::string>());
  c.heads = j.at("heads").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  return c;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path, const CheckpointMetadata& metadata) {
  BlobFile file;
  file.kind = "checkpoint";
  file.version = kCheckpointVersion;
  file.manifest["config"] = config_to_json(model.config());
  file.manifest["metadata"] = {{"creation_seed", metadata.creation_seed}, {"provenance", metadata.provenance}};
  file.manifest["fingerprint"] = model.fingerprint();
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : model.params().all()) {
    params.push_back({{"id", p.id}, {"name", p.name}, {"layer", p.layer}, {"role", to_string(p.role)}});
    file.names.push_back(p.name);
    file.blocks.push_back(p.tensor);
  }
  file.manifest["parameters"] = std::move(params);
  write_blob_file(path, file);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  BlobFile file = read_blob_file(path, "checkpoint", kCheckpointVersion);
  ModelConfig config;
  std::vector<Parameter> params;
  CheckpointMetadata meta;
  try {
    config = config_from_json(file.manifest.at("config"));
    const auto& entries = file.manifest.at("parameters");
    if (entries.size() != file.blocks.size()) throw CorruptFile("parameter directory and data blocks differ in count");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      params.push_back({e.at("id").get<ParamId>(), e.at("name").get<std::string>(), e.at("layer").get<LayerId>(),
                        parse_param_role(e.at("role").get<std::string>()), std::move(file.blocks[i])});
    }
    meta.creation_seed = file.manifest.at("metadata").at("creation_seed").get<std::uint64_t>();
    meta.provenance = file.manifest.at("metadata").at("provenance").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile("'" + path.string() + "': malformed checkpoint manifest (" + e.what() + ")");
  } catch (const InvalidArgument& e) {
    throw CorruptFile("'" + path.string() + "': " + e.what());
  }
  ParameterSet set;
  try {
    config.validate();
    set = ParameterSet(std::move(params));
  } catch (const InvalidArgument& e) {
    throw CorruptFile("'" + path.string() + "': " + e.what());
  }
  return Checkpoint{Model(config, std::move(set)), meta};
}

}  // namespace fisherscope
