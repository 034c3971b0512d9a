#include "quiver/checkpoint.hpp"

#include "quiver/archive.hpp"
#include "quiver/error.hpp"

namespace quiver {

nlohmann::json spec_to_json(const MlpSpec& spec) {
  return {{"input_dim", spec.input_dim},
          {"hidden", spec.hidden},
          {"output_dim", spec.output_dim},
          {"activation", to_string(spec.activation)},
          {"init_seed", spec.init_seed}};
}

MlpSpec spec_from_json(const nlohmann::json& j) {
  MlpSpec spec;
  try {
    spec.input_dim = j.at("input_dim").get<std::size_t>();
    spec.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    spec.output_dim = j.at("output_dim").get<std::size_t>();
    spec.activation = parse_activation(j.value("activation", std::string("relu")));
    spec.init_seed = j.value("init_seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ManifestMismatch, std::string("bad model spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

void save_checkpoint(const std::filesystem::path& stem, const Mlp& mlp, const nlohmann::json& meta) {
  Blob blob;
  blob.manifest = {{"format", kCheckpointFormat},
                   {"dtype", "float32-le"},
                   {"spec", spec_to_json(mlp.spec())},
                   {"param_count", param_count(mlp.spec())},
                   {"meta", meta}};
  blob.payload.reserve(param_count(mlp.spec()));
  for (const auto& layer : mlp.layers()) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) blob.payload.push_back(static_cast<float>(layer.weight(r, c)));
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) blob.payload.push_back(static_cast<float>(layer.bias(r)));
  }
  write_blob(stem, blob);
}

Checkpoint load_checkpoint(const std::filesystem::path& stem) {
  Blob blob = read_blob(stem);
  if (blob.manifest.value("format", std::string{}) != kCheckpointFormat) {
    fail(ErrorCode::ManifestMismatch, "not a checkpoint manifest");
  }
  MlpSpec spec = spec_from_json(blob.manifest.at("spec"));
  if (blob.payload.size() != param_count(spec)) {
    fail(ErrorCode::ShapeMismatch, "checkpoint payload does not match the model spec");
  }
  const auto sizes = spec.layer_sizes();
  std::vector<DenseLayer> layers;
  std::size_t pos = 0;
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    DenseLayer layer{Eigen::MatrixXd(sizes[l], sizes[l - 1]), Eigen::VectorXd(sizes[l])};
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = blob.payload[pos++];
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = blob.payload[pos++];
    layers.push_back(std::move(layer));
  }
  return {Mlp(std::move(spec), std::move(layers)), std::move(blob.manifest)};
}

}  // namespace quiver
