#pragma once

#include "defsynth/discriminator.hpp"
#include "defsynth/generator.hpp"
#include "defsynth/nn.hpp"
#include "defsynth/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

namespace defsynth::ckpt {

inline constexpr int64_t kFormatVersion = 1;

/// Everything a checkpoint stores besides the parameter blobs. `extra` is an
/// opaque caller-owned section (the trainer keeps its config echo there) and
/// round-trips verbatim.
struct CheckpointMeta {
  int64_t iteration = 0;
  std::vector<std::string> categories;
  std::string rng_state;  // text-serialized engine state; empty when not tracked
  nlohmann::json extra = nlohmann::json::object();
};

/// Parameter blob round trip. Entries are written in registry order; the
/// loader requires the target registry to match name-for-name and
/// shape-for-shape, then overwrites values in place so existing graph handles
/// stay valid.
void save_params(const nn::ParamStore& store, const std::filesystem::path& file);
void load_params(nn::ParamStore& store, const std::filesystem::path& file);

/// Optimizer moment blobs, keyed by parameter name.
void save_adam(const optim::Adam& opt, const std::filesystem::path& file);
void load_adam(optim::Adam& opt, const nn::ParamStore& store,
               const std::filesystem::path& file);

nlohmann::json generator_config_json(const gan::GeneratorConfig& c);
gan::GeneratorConfig generator_config_from_json(const nlohmann::json& j);
nlohmann::json discriminator_config_json(const gan::DiscriminatorConfig& c);
gan::DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j);

/// Writes dir/{manifest.json, generator.bin, discriminator.bin} plus
/// opt_g.bin / opt_d.bin when the optimizers are given. Creates dir.
void write_checkpoint(const std::filesystem::path& dir, const CheckpointMeta& meta,
                      const gan::Generator& generator, const gan::Discriminator& critic,
                      const optim::Adam* opt_g = nullptr,
                      const optim::Adam* opt_d = nullptr);

struct LoadedModels {
  CheckpointMeta meta;
  gan::Generator generator;
  gan::Discriminator critic;
};

/// Rebuilds both models from a checkpoint directory.
LoadedModels load_models(const std::filesystem::path& dir);

/// Restores optimizer moments saved alongside the models. The optimizers must
/// already be constructed over the matching parameter registries.
void load_optimizers(const std::filesystem::path& dir, optim::Adam& opt_g,
                     const nn::ParamStore& g_store, optim::Adam& opt_d,
                     const nn::ParamStore& d_store);

/// Manifest only, without touching the blobs.
CheckpointMeta read_meta(const std::filesystem::path& dir);

/// Highest-iteration ckpt_<n> directory under run_dir, if any.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir);

}  // namespace defsynth::ckpt
