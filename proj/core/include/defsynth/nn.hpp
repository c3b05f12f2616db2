#pragma once

#include "defsynth/autodiff.hpp"
#include "defsynth/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace defsynth::nn {

namespace ad = defsynth::ad;

/// Named registry of trainable parameters. Layers create their parameters
/// here; optimizers and checkpoints walk the registry in insertion order.
class ParamStore {
 public:
  /// Registers a new parameter. Throws on duplicate names.
  ad::Var create(const std::string& name, Tensor init);

  /// Looks up a parameter variable. Throws if absent.
  ad::Var get(const std::string& name) const;

  /// Aliasing handle to the parameter's storage (mutating it updates the model).
  Tensor tensor(const std::string& name) const;

  bool has(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  int64_t total_scalars() const;

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, ad::Var> map_;
};

/// N(0, sqrt(2/fan_in)) weight init.
Tensor kaiming_normal(std::vector<int64_t> shape, int64_t fan_in, std::mt19937_64& rng);

/// Nearest-neighbor resize of an (N,C,H,W) tensor to (oh, ow).
Tensor nearest_resize_nchw(const Tensor& x, int64_t oh, int64_t ow);

/// Per-sample, per-channel normalization over the spatial extent (no affine).
ad::Var instance_normalize(const ad::Var& x, double eps = 1e-5);

class Conv2d {
 public:
  Conv2d(ParamStore& store, const std::string& prefix, int64_t in_ch, int64_t out_ch,
         int64_t kernel, int stride, int pad, bool bias, std::mt19937_64& rng);
  ad::Var forward(const ad::Var& x) const;

 private:
  ad::Var w_, b_;
  int stride_, pad_;
};

/// Upsampling convolution; output spatial size is (h-1)*stride + kernel - 2*pad.
class ConvTranspose2d {
 public:
  ConvTranspose2d(ParamStore& store, const std::string& prefix, int64_t in_ch, int64_t out_ch,
                  int64_t kernel, int stride, int pad, bool bias, std::mt19937_64& rng);
  ad::Var forward(const ad::Var& x) const;

 private:
  ad::Var w_, b_;
  int64_t kernel_;
  int stride_, pad_;
};

class Linear {
 public:
  Linear(ParamStore& store, const std::string& prefix, int64_t in_dim, int64_t out_dim,
         std::mt19937_64& rng);
  ad::Var forward(const ad::Var& x) const;

 private:
  ad::Var w_, b_;
};

/// Instance norm with learned per-channel gain and shift.
class InstanceNorm {
 public:
  InstanceNorm(ParamStore& store, const std::string& prefix, int64_t channels);
  ad::Var forward(const ad::Var& x) const;

 private:
  ad::Var gamma_, beta_;
};

/// Control-map conditioning: out = normalize(x) * (1 + gamma(A)) + beta(A).
/// gamma and beta are conv maps of the control tensor, zero-initialized so the
/// layer starts as parameter-free normalization. The control map is resized to
/// the feature resolution by nearest neighbor.
class SpatialModulation {
 public:
  SpatialModulation(ParamStore& store, const std::string& prefix, int64_t channels,
                    int64_t control_channels, int64_t hidden, std::mt19937_64& rng);
  ad::Var forward(const ad::Var& x, const Tensor& control) const;

 private:
  ad::Var ws_, bs_, wg_, bg_, wb_, bb_;
};

/// Additive per-element Gaussian noise with one learned scalar gain per site.
class NoiseInjection {
 public:
  NoiseInjection(ParamStore& store, const std::string& prefix);

  /// Adds scale * z, z ~ N(0,1). When disabled, returns x unchanged.
  ad::Var forward(const ad::Var& x, std::mt19937_64& rng, bool enabled) const;

 private:
  ad::Var scale_;
};

}  // namespace defsynth::nn
