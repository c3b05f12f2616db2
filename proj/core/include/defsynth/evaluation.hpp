#pragma once

#include "defsynth/controlmap.hpp"
#include "defsynth/datamodel.hpp"
#include "defsynth/generator.hpp"
#include "defsynth/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace defsynth::eval {

/// Gaussian fit of an embedded image set.
struct GaussianStats {
  Tensor mean;        // (k,)
  Tensor covariance;  // (k,k), symmetric
  int64_t count = 0;

  int64_t dim() const { return mean.numel(); }
  void validate() const;
};

/// Pluggable image embedding: a deterministic map from a (3,H,W) image to a
/// fixed-length vector. Distances are only comparable within one embedder.
struct Embedder {
  std::string id;
  int64_t dim = 0;
  std::function<Tensor(const Tensor&)> map;
};

/// Streaming mean/covariance accumulator. Merging partial accumulators is
/// order-insensitive up to floating point, so per-image work can be sharded.
class StatsAccumulator {
 public:
  explicit StatsAccumulator(int64_t dim);
  void add(const Tensor& embedding);
  void merge(const StatsAccumulator& other);
  /// Unbiased covariance; requires at least 2 samples.
  GaussianStats finalize() const;
  int64_t count() const { return count_; }

 private:
  int64_t dim_;
  int64_t count_ = 0;
  Tensor mean_;
  Tensor m2_;  // sum of outer products of deviations
};

GaussianStats compute_stats(const std::vector<Tensor>& embeddings);
GaussianStats compute_image_stats(const std::vector<Tensor>& images, const Embedder& embed);

/// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}), the square root taken
/// through symmetric eigendecompositions; eigenvalues slightly below zero are
/// clipped, ones below -1e-6 are an error.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

/// Distance between two explicitly chosen subsets of one image set.
double split_fid(const std::vector<Tensor>& images, const Embedder& embed,
                 const std::vector<size_t>& first, const std::vector<size_t>& second);

/// Baseline: distance between two random halves of the real set.
double ideal_split_fid(const std::vector<Tensor>& images, const Embedder& embed,
                       uint64_t seed);

/// Principal-component projection of raw pixels, fitted on a reference set.
Embedder pixel_pca_embedder(const std::vector<Tensor>& reference, int64_t dim);

/// Embedder registry for the CLI. "pixel_pca" is bundled; pretrained feature
/// extractors are named but error until weights are supplied.
Embedder make_embedder(const std::string& id, const std::vector<Tensor>& reference,
                       int64_t dim);

/// Bulk synthesis request.
struct CorpusRequest {
  int64_t count = 100;
  bool with_restorations = false;
  /// Spatial conditioning override; labels then follow the painted channels.
  std::optional<ctrl::AttributeControlMap> control;
  /// Draws the conditioning label per sample; defaults to a uniform single
  /// defect category.
  std::function<data::LabelVector(std::mt19937_64&)> category_sampler;
};

/// Defaces random normal-pool images into `count` synthetic defect samples
/// (plus their restorations when requested) and writes images, blend maps,
/// and an index.csv under out_root. Returns the corpus manifest re-read from
/// disk. Deterministic per seed.
data::DatasetManifest generate_corpus(const gan::Generator& generator,
                                      const data::DatasetManifest& normal_manifest,
                                      const CorpusRequest& request,
                                      const std::filesystem::path& out_root, uint64_t seed);

}  // namespace defsynth::eval
