#pragma once

#include "eovae/nn/checkpoint.hpp"
#include "eovae/vae/model.hpp"

namespace eovae::vae {

/// Model weights plus configs; callers may add optimizer/RNG state to the writer first.
template <typename T>
void save_model(const VAEModel<T>& model, const std::filesystem::path& path, nn::CheckpointWriter writer = {}) {
  writer.meta()["kind"] = "vae";
  writer.meta()["config"] = to_json(model.config());
  writer.add_params(model.parameters());
  writer.write(path);
}

template <typename T>
VAEModel<T> model_from_checkpoint(const nn::Checkpoint& ck) {
  if (ck.meta.value("kind", "") != "vae") throw ConfigError("checkpoint does not hold a VAE");
  VAEModel<T> model(model_config_from_json(ck.meta.at("config")), 0);
  ck.load_params(model.parameters());
  return model;
}

template <typename T>
VAEModel<T> load_model(const std::filesystem::path& path) {
  return model_from_checkpoint<T>(nn::read_checkpoint(path));
}

}  // namespace eovae::vae
