#include "defsynth/generator.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace defsynth::gan {

namespace {

int64_t modulation_hidden(int64_t channels) { return std::min<int64_t>(channels, 128); }

}  // namespace

void GeneratorConfig::validate() const {
  if (image_size < 4 || image_size % 4 != 0)
    throw std::invalid_argument("generator: image size must be a positive multiple of 4, got " +
                                std::to_string(image_size));
  if (base_width < 1) throw std::invalid_argument("generator: base width must be positive");
  if (res_blocks < 0) throw std::invalid_argument("generator: negative residual block count");
  if (categories < 1) throw std::invalid_argument("generator: category count must be positive");
}

ad::Var compose(const ad::Var& background, const ad::Var& foreground, const ad::Var& blend) {
  const Tensor& bg = background.value();
  const Tensor& fg = foreground.value();
  const Tensor& m = blend.value();
  if (bg.shape() != fg.shape())
    throw std::invalid_argument("compose: background " + bg.shape_str() + " vs foreground " +
                                fg.shape_str());
  if (m.rank() != 4 || m.dim(0) != bg.dim(0) || m.dim(1) != 1 || m.dim(2) != bg.dim(2) ||
      m.dim(3) != bg.dim(3))
    throw std::invalid_argument("compose: blend map " + m.shape_str() + " does not match " +
                                bg.shape_str());
  for (int64_t i = 0; i < m.numel(); ++i)
    if (!(m.at(i) >= 0.0 && m.at(i) <= 1.0))
      throw std::invalid_argument("compose: blend map value " + std::to_string(m.at(i)) +
                                  " outside [0,1]");
  ad::Var m3 = ad::broadcast_c1(blend, bg.dim(1));
  ad::Var ones = ad::constant(Tensor::full(bg.shape(), 1.0));
  return ad::add(ad::mul(background, ad::sub(ones, m3)), ad::mul(foreground, m3));
}

Generator::EncoderStage::EncoderStage(nn::ParamStore& store, const std::string& prefix,
                                      int64_t in_ch, int64_t out_ch, int64_t kernel, int stride,
                                      int pad, std::mt19937_64& rng)
    : conv(store, prefix + ".conv", in_ch, out_ch, kernel, stride, pad, true, rng),
      norm(store, prefix + ".norm", out_ch),
      noise(store, prefix + ".noise") {}

Generator::ResBlock::ResBlock(nn::ParamStore& store, const std::string& prefix, int64_t channels,
                              int64_t control_channels, bool modulated, std::mt19937_64& rng)
    : c1(store, prefix + ".c1", channels, channels, 3, 1, 1, true, rng),
      c2(store, prefix + ".c2", channels, channels, 3, 1, 1, true, rng),
      noise(store, prefix + ".noise") {
  if (modulated) {
    m1.emplace(store, prefix + ".n1", channels, control_channels, modulation_hidden(channels),
               rng);
    m2.emplace(store, prefix + ".n2", channels, control_channels, modulation_hidden(channels),
               rng);
  } else {
    n1.emplace(store, prefix + ".n1", channels);
    n2.emplace(store, prefix + ".n2", channels);
  }
}

Generator::UpStage::UpStage(nn::ParamStore& store, const std::string& prefix, int64_t in_ch,
                            int64_t out_ch, int64_t control_channels, bool modulated,
                            std::mt19937_64& rng)
    : conv(store, prefix + ".conv", in_ch, out_ch, 4, 2, 1, true, rng),
      noise(store, prefix + ".noise") {
  if (modulated)
    mod.emplace(store, prefix + ".norm", out_ch, control_channels, modulation_hidden(out_ch),
                rng);
  else
    norm.emplace(store, prefix + ".norm", out_ch);
}

Generator::Generator(GeneratorConfig config, uint64_t init_seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(init_seed);
  const int64_t w = config_.base_width;
  encoder_.reserve(3);
  encoder_.emplace_back(store_, "stem", 3, w, 7, 1, 3, rng);
  encoder_.emplace_back(store_, "down0", w, 2 * w, 4, 2, 1, rng);
  encoder_.emplace_back(store_, "down1", 2 * w, 4 * w, 4, 2, 1, rng);
  blocks_.reserve(static_cast<size_t>(config_.res_blocks));
  for (int64_t i = 0; i < config_.res_blocks; ++i)
    blocks_.emplace_back(store_, "res" + std::to_string(i), 4 * w, config_.categories,
                         config_.spatial_modulation, rng);
  ups_.reserve(2);
  ups_.emplace_back(store_, "up0", 4 * w, 2 * w, config_.categories, config_.spatial_modulation,
                    rng);
  ups_.emplace_back(store_, "up1", 2 * w, w, config_.categories, config_.spatial_modulation, rng);
  f_head_.emplace(store_, "f_head", w, 3, 7, 1, 3, true, rng);
  m_head_.emplace(store_, "m_head", w, 1, 7, 1, 3, true, rng);
}

ad::Var Generator::normalized(const std::optional<nn::SpatialModulation>& mod,
                              const std::optional<nn::InstanceNorm>& plain, const ad::Var& x,
                              const Tensor& control) const {
  return mod ? mod->forward(x, control) : plain->forward(x);
}

GeneratorOutput Generator::forward(const ad::Var& x, const Tensor& control,
                                   uint64_t noise_seed) const {
  const Tensor& v = x.value();
  if (v.rank() != 4 || v.dim(1) != 3 || v.dim(2) != config_.image_size ||
      v.dim(3) != config_.image_size)
    throw std::invalid_argument("generator: expected (N,3," + std::to_string(config_.image_size) +
                                "," + std::to_string(config_.image_size) + ") input, got " +
                                v.shape_str());
  if (control.rank() != 4 || control.dim(0) != v.dim(0) || control.dim(1) != config_.categories ||
      control.dim(2) != v.dim(2) || control.dim(3) != v.dim(3))
    throw std::invalid_argument("generator: control map " + control.shape_str() +
                                " does not match input " + v.shape_str());

  std::mt19937_64 rng(noise_seed);
  const bool noisy = config_.noise_injection;

  ad::Var h = x;
  for (const EncoderStage& stage : encoder_) {
    h = ad::relu(stage.norm.forward(stage.conv.forward(h)));
    h = stage.noise.forward(h, rng, noisy);
  }
  for (const ResBlock& block : blocks_) {
    ad::Var r = ad::relu(normalized(block.m1, block.n1, block.c1.forward(h), control));
    r = normalized(block.m2, block.n2, block.c2.forward(r), control);
    h = block.noise.forward(ad::add(h, r), rng, noisy);
  }
  for (const UpStage& up : ups_) {
    h = ad::relu(normalized(up.mod, up.norm, up.conv.forward(h), control));
    h = up.noise.forward(h, rng, noisy);
  }
  GeneratorOutput out;
  out.foreground = ad::tanh_(f_head_->forward(h));
  out.blend = ad::sigmoid_(m_head_->forward(h));
  return out;
}

TranslationResult Generator::deface(const ad::Var& image, const Tensor& control,
                                    uint64_t noise_seed) const {
  GeneratorOutput out = forward(image, control, noise_seed);
  TranslationResult result;
  result.foreground = out.foreground;
  result.blend = out.blend;
  result.image = config_.composition ? compose(image, out.foreground, out.blend) : out.foreground;
  return result;
}

TranslationResult Generator::restore(const ad::Var& image, uint64_t noise_seed) const {
  if (config_.categories != data::kNumCategories)
    throw std::logic_error("generator: restore requires the standard category set");
  const Tensor& v = image.value();
  Tensor control = ctrl::restoration_map(v.dim(2), v.dim(3)).batch(v.dim(0));
  return deface(image, control, noise_seed);
}

}  // namespace defsynth::gan
