#pragma once

#include "defsynth/datamodel.hpp"
#include "defsynth/discriminator.hpp"
#include "defsynth/generator.hpp"
#include "defsynth/objectives.hpp"
#include "defsynth/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace defsynth::train {

/// Ablation switches; each removes one design element wholesale.
struct AblationFlags {
  bool spatial_control = true;      // control-map conditioning in the decoder
  bool noise_injection = true;      // learned additive noise
  bool composition = true;          // blend over the input vs direct repaint
  bool spatial_constraints = true;  // blend-map cycle and area losses
};

struct TrainConfig {
  int64_t iterations = 2000;  // scheduled updates; critic and generator both count
  int64_t batch_size = 4;
  int64_t n_critic = 5;  // critic updates per generator update
  double beta1 = 0.5;
  double beta2 = 0.999;
  double lr_start = 2e-4;
  double lr_end = 1e-6;
  int64_t image_size = 32;
  int64_t base_width = 16;
  int64_t res_blocks = 2;
  int64_t disc_stages = 3;
  uint64_t seed = 1;
  int64_t checkpoint_period = 500;
  AblationFlags ablation;
  gan::LossWeights weights;

  void validate() const;
  gan::GeneratorConfig generator_config() const;
  gan::DiscriminatorConfig discriminator_config() const;
};

/// Full-size settings matched to the published run.
TrainConfig paper_preset();
/// CPU-size settings for the end-to-end desk pipeline.
TrainConfig desk_preset();

nlohmann::json train_config_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// In-memory training pools, split by label. Values are normalized to [-1,1].
struct TrainingSet {
  Tensor normals;  // (Nn,3,S,S)
  Tensor defects;  // (Nd,3,S,S)
  std::vector<data::LabelVector> defect_labels;
  int64_t image_size = 0;

  /// Reads every record of the manifest; throws when either pool ends up
  /// empty or an image does not match the expected size.
  static TrainingSet load(const data::DatasetManifest& manifest, int64_t image_size);
};

/// One sampled step input: paired normal and defect batches.
struct CycleBatch {
  Tensor normals;  // (B,3,S,S)
  Tensor defects;  // (B,3,S,S)
  std::vector<data::LabelVector> defect_labels;
};

/// One logged update.
struct LossRow {
  int64_t iteration = 0;
  char kind = 'd';  // 'd' or 'g'
  double lr = 0.0;
  gan::LossReport report;
  std::string to_json() const;
};
LossRow loss_row_from_json(const std::string& line);

/// Runs the interleaved critic/generator schedule over both translation
/// cycles. Deterministic for a fixed config, data set, and seed when stepped
/// serially.
class Trainer {
 public:
  Trainer(TrainConfig config, TrainingSet data);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  /// True when the scheduled update at `iteration` trains the generator.
  bool is_g_step(int64_t iteration) const;
  /// Learning rate applied at `iteration`; exact at both schedule endpoints.
  double lr_at(int64_t iteration) const;

  /// Runs the next scheduled update and returns its log row.
  LossRow step();

  int64_t next_iteration() const { return iteration_; }

  /// Writes ckpt_<completed-updates> under run_dir and returns its path.
  std::filesystem::path save_checkpoint(const std::filesystem::path& run_dir) const;

  /// Restores parameters, optimizer moments, RNG state, and the iteration
  /// counter. Throws when the checkpoint does not match the configured model.
  void restore(const std::filesystem::path& ckpt_dir);

  /// Runs all remaining updates, appending one JSON row per update to
  /// run_dir/train_log.jsonl and checkpointing at the configured period and
  /// at the end. On a non-finite loss a diagnostic checkpoint is written
  /// before the error propagates. `progress` gets a line every 100 updates.
  void run(const std::filesystem::path& run_dir, std::ostream* progress = nullptr);

  const TrainConfig& config() const { return config_; }
  gan::Generator& generator() { return g_; }
  gan::Discriminator& critic() { return d_; }

 private:
  CycleBatch sample_batch();
  Tensor deface_control(const CycleBatch& batch) const;
  gan::LossReport step_d(const CycleBatch& batch, double lr);
  gan::LossReport step_g(const CycleBatch& batch, double lr);
  void write_state(const std::filesystem::path& dir) const;
  uint64_t draw_seed() { return rng_(); }

  TrainConfig config_;
  TrainingSet data_;
  gan::Generator g_;
  gan::Discriminator d_;
  optim::Adam opt_g_;
  optim::Adam opt_d_;
  std::mt19937_64 rng_;
  int64_t iteration_ = 0;
};

}  // namespace defsynth::train
