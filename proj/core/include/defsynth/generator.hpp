#pragma once

#include "defsynth/autodiff.hpp"
#include "defsynth/controlmap.hpp"
#include "defsynth/datamodel.hpp"
#include "defsynth/nn.hpp"
#include "defsynth/tensor.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace defsynth::gan {

namespace ad = defsynth::ad;

/// Encoder-decoder translator. The encoder downsamples by a total stride of 4;
/// the decoder (bottleneck residual blocks plus two upsampling blocks) is
/// conditioned on the control map at every block. Two heads emit a repaint
/// foreground (tanh, [-1,1]) and a blend map (sigmoid, [0,1]); the final image
/// is blended onto the input rather than painted from scratch.
struct GeneratorConfig {
  int64_t image_size = 128;  // must be divisible by 4
  int64_t base_width = 64;
  int64_t res_blocks = 6;
  int64_t categories = data::kNumCategories;
  bool noise_injection = true;     // per-block additive noise with learned gains
  bool spatial_modulation = true;  // control-map conditioning in decoder norms
  bool composition = true;         // blend over the input vs direct output
  void validate() const;
};

struct GeneratorOutput {
  ad::Var foreground;  // (N,3,H,W) in [-1,1]
  ad::Var blend;       // (N,1,H,W) in [0,1]
};

struct TranslationResult {
  ad::Var image;       // (N,3,H,W)
  ad::Var foreground;  // (N,3,H,W)
  ad::Var blend;       // (N,1,H,W)
};

/// out = background * (1 - blend) + foreground * blend, the blend map shared
/// across the color channels. Exact at blend values 0 and 1.
ad::Var compose(const ad::Var& background, const ad::Var& foreground, const ad::Var& blend);

class Generator {
 public:
  Generator(GeneratorConfig config, uint64_t init_seed);

  /// One full pass; control is an (N,C,H,W) batch of control maps at image
  /// resolution. The noise seed fixes the injected noise, making the pass
  /// reproducible for frozen parameters.
  GeneratorOutput forward(const ad::Var& x, const Tensor& control, uint64_t noise_seed) const;

  /// forward + composition toward the control map's categories.
  TranslationResult deface(const ad::Var& image, const Tensor& control,
                           uint64_t noise_seed) const;

  /// forward + composition toward the normal category.
  TranslationResult restore(const ad::Var& image, uint64_t noise_seed) const;

  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  const GeneratorConfig& config() const { return config_; }

 private:
  struct EncoderStage {
    EncoderStage(nn::ParamStore& store, const std::string& prefix, int64_t in_ch, int64_t out_ch,
                 int64_t kernel, int stride, int pad, std::mt19937_64& rng);
    nn::Conv2d conv;
    nn::InstanceNorm norm;
    nn::NoiseInjection noise;
  };
  struct ResBlock {
    ResBlock(nn::ParamStore& store, const std::string& prefix, int64_t channels,
             int64_t control_channels, bool modulated, std::mt19937_64& rng);
    nn::Conv2d c1, c2;
    std::optional<nn::SpatialModulation> m1, m2;
    std::optional<nn::InstanceNorm> n1, n2;
    nn::NoiseInjection noise;
  };
  struct UpStage {
    UpStage(nn::ParamStore& store, const std::string& prefix, int64_t in_ch, int64_t out_ch,
            int64_t control_channels, bool modulated, std::mt19937_64& rng);
    nn::ConvTranspose2d conv;
    std::optional<nn::SpatialModulation> mod;
    std::optional<nn::InstanceNorm> norm;
    nn::NoiseInjection noise;
  };

  ad::Var normalized(const std::optional<nn::SpatialModulation>& mod,
                     const std::optional<nn::InstanceNorm>& plain, const ad::Var& x,
                     const Tensor& control) const;

  GeneratorConfig config_;
  nn::ParamStore store_;
  std::vector<EncoderStage> encoder_;
  std::vector<ResBlock> blocks_;
  std::vector<UpStage> ups_;
  std::optional<nn::Conv2d> f_head_, m_head_;
};

}  // namespace defsynth::gan
