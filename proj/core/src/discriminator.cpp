#include "defsynth/discriminator.hpp"

#include <stdexcept>
#include <string>

namespace defsynth::gan {

namespace {
constexpr double kLeakySlope = 0.01;
}

void DiscriminatorConfig::validate() const {
  if (stages < 1) throw std::invalid_argument("discriminator: need at least one stage");
  if (stages > 30) throw std::invalid_argument("discriminator: stage count out of range");
  const int64_t factor = int64_t{1} << stages;
  if (image_size < factor || image_size % factor != 0)
    throw std::invalid_argument("discriminator: image size " + std::to_string(image_size) +
                                " must be a multiple of 2^stages = " + std::to_string(factor));
  if (base_width < 1) throw std::invalid_argument("discriminator: base width must be positive");
  if (categories < 1) throw std::invalid_argument("discriminator: category count must be positive");
}

Discriminator::Discriminator(DiscriminatorConfig config, uint64_t init_seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(init_seed);
  int64_t in_ch = 3;
  int64_t out_ch = config_.base_width;
  trunk_.reserve(static_cast<size_t>(config_.stages));
  for (int64_t s = 0; s < config_.stages; ++s) {
    trunk_.emplace_back(store_, "stage" + std::to_string(s), in_ch, out_ch, 4, 2, 1, true, rng);
    in_ch = out_ch;
    out_ch *= 2;
  }
  src_head_.emplace(store_, "src", in_ch, 1, 3, 1, 1, false, rng);
  cls_head_.emplace(store_, "cls", in_ch, config_.categories, patch_size(), 1, 0, false, rng);
}

int64_t Discriminator::patch_size() const { return config_.image_size >> config_.stages; }

int64_t Discriminator::receptive_field() const {
  // src head first (3x3, stride 1), then back through the stride-2 stack.
  int64_t rf = 3;
  for (int64_t s = 0; s < config_.stages; ++s) rf = (rf - 1) * 2 + 4;
  return rf;
}

int64_t Discriminator::jump() const { return int64_t{1} << config_.stages; }

DiscriminatorOutput Discriminator::forward(const ad::Var& x) const {
  const Tensor& v = x.value();
  if (v.rank() != 4 || v.dim(1) != 3 || v.dim(2) != config_.image_size ||
      v.dim(3) != config_.image_size)
    throw std::invalid_argument("discriminator: expected (N,3," +
                                std::to_string(config_.image_size) + "," +
                                std::to_string(config_.image_size) + ") input, got " +
                                v.shape_str());
  ad::Var h = x;
  for (const nn::Conv2d& conv : trunk_) h = ad::leaky_relu(conv.forward(h), kLeakySlope);
  DiscriminatorOutput out;
  out.src_map = src_head_->forward(h);
  out.cls_logits = ad::reshape(cls_head_->forward(h), {v.dim(0), config_.categories});
  return out;
}

}  // namespace defsynth::gan
