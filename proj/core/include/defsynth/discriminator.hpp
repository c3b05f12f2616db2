#pragma once

#include "defsynth/autodiff.hpp"
#include "defsynth/datamodel.hpp"
#include "defsynth/nn.hpp"
#include "defsynth/tensor.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace defsynth::gan {

/// Patch critic with an auxiliary category head. A stack of stride-2
/// convolutions (no normalization, leaky activations) feeds two heads: a map
/// of unbounded per-patch realness scores and a full-spatial convolution
/// producing one logit per category.
struct DiscriminatorConfig {
  int64_t image_size = 128;
  int64_t base_width = 64;
  int64_t stages = 6;  // stride-2 convolutions; image_size must divide by 2^stages
  int64_t categories = data::kNumCategories;
  void validate() const;
};

struct DiscriminatorOutput {
  ad::Var src_map;     // (N,1,h',w'), h' = w' = image_size / 2^stages
  ad::Var cls_logits;  // (N,C)
};

class Discriminator {
 public:
  Discriminator(DiscriminatorConfig config, uint64_t init_seed);

  DiscriminatorOutput forward(const ad::Var& x) const;

  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  const DiscriminatorConfig& config() const { return config_; }

  /// Side length of the src score map.
  int64_t patch_size() const;

  /// Receptive field of one src score in input pixels; basis for locality
  /// bounds in tests.
  int64_t receptive_field() const;

  /// Input-pixel stride between adjacent src scores (2^stages).
  int64_t jump() const;

 private:
  DiscriminatorConfig config_;
  nn::ParamStore store_;
  std::vector<nn::Conv2d> trunk_;
  std::optional<nn::Conv2d> src_head_, cls_head_;
};

}  // namespace defsynth::gan
