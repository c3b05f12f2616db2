#pragma once

#include "defsynth/autodiff.hpp"
#include "defsynth/datamodel.hpp"
#include "defsynth/nn.hpp"
#include "defsynth/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace defsynth::insp {

namespace ad = defsynth::ad;

/// Settings for the downstream defect classifier. The source head learns to
/// tell real from generated inputs; its gradient reaches the backbone through
/// a reversal layer so shared features stop encoding sample origin.
struct InspectorConfig {
  std::string backbone = "small_conv";  // feature extractor id
  int64_t input_size = 224;             // images are resized to this square
  double lr = 1e-3;                     // SGD step size
  int64_t batch_size = 16;
  double lambda_grl = 1.0;  // reversal strength; 0 detaches the source head
  int64_t epochs = 20;
  uint64_t seed = 1;

  void validate() const;

  static InspectorConfig paper_preset();
  static InspectorConfig desk_preset();
};

nlohmann::json inspector_config_json(const InspectorConfig& c);
InspectorConfig inspector_config_from_json(const nlohmann::json& j);

/// Real and generated training records merged into one pool. Source tags ride
/// on the records; `mixed` records whether augmentation data was folded in.
struct MixedDataset {
  std::vector<data::SampleRecord> records;
  int64_t real_count = 0;
  int64_t synthetic_count = 0;
  int64_t restored_count = 0;
  bool mixed = false;
};

/// Concatenates real records with an optional augmentation manifest
/// (synthetic + restored corpus). The category spaces must agree; paths
/// appearing in both manifests are an error listing every duplicate.
MixedDataset mix_training_data(const data::DatasetManifest& real,
                               const data::DatasetManifest* augmentation);

/// Multi-label classifier with a category head and an origin head. The
/// backbone is chosen by id; `small_conv` is bundled, the full-scale ids
/// (resnet34, densenet121) are recognized but have no bundled weights.
class Inspector {
 public:
  Inspector(InspectorConfig config, uint64_t init_seed);
  Inspector(const Inspector&) = delete;
  Inspector& operator=(const Inspector&) = delete;

  struct Heads {
    ad::Var categories;  // (N, kNumCategories) logits
    ad::Var source;      // (N, 1) logit, positive means real
  };

  /// Both heads; the source branch sees the features through a reversal layer
  /// of strength `lambda_grl`, the category branch sees them directly.
  Heads forward(const ad::Var& images, double lambda_grl) const;

  /// Pooled backbone features, (N, feature_dim).
  ad::Var features(const ad::Var& images) const;

  int64_t feature_dim() const { return feature_dim_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  const InspectorConfig& config() const { return config_; }

 private:
  InspectorConfig config_;
  nn::ParamStore store_;
  std::vector<nn::Conv2d> conv_;
  std::unique_ptr<nn::Linear> category_head_, source_head_;
  int64_t feature_dim_ = 0;
};

/// Share of samples whose entire thresholded prediction vector equals the
/// target labels, as a percentage. Probabilities >= threshold count positive.
double exact_match_accuracy(const std::vector<Tensor>& probabilities,
                            const std::vector<data::LabelVector>& targets,
                            double threshold = 0.5);

struct EpochMetrics {
  int64_t epoch = 0;
  double category_loss = 0.0;
  double source_loss = 0.0;
  double total_loss = 0.0;
  double val_exact_match = 0.0;  // percent

  nlohmann::json to_json() const;
};
EpochMetrics epoch_metrics_from_json(const nlohmann::json& j);

struct InspectorRun {
  std::unique_ptr<Inspector> model;  // holds the best-epoch parameters
  std::vector<EpochMetrics> history;
  int64_t best_epoch = -1;
  double best_val_accuracy = 0.0;
  bool source_head_active = false;
  std::vector<std::string> warnings;
};

/// Full training loop: SGD over shuffled epochs, per-epoch validation, best
/// epoch kept by highest validation exact match (earliest on ties). Writes
/// out_dir/metrics.jsonl and the best checkpoint (inspector_best.bin plus
/// inspector_meta.json). When every record shares one origin and lambda_grl
/// is positive, the source head is disabled with a warning instead of
/// training on an unlearnable task.
InspectorRun train_inspector(const InspectorConfig& config, const MixedDataset& training,
                             const std::vector<data::SampleRecord>& validation,
                             const std::filesystem::path& out_dir,
                             const std::function<void(const EpochMetrics&)>& progress = nullptr);

/// Rebuilds the trained model from train_inspector's output directory.
std::unique_ptr<Inspector> load_inspector(const std::filesystem::path& dir);

}  // namespace defsynth::insp
