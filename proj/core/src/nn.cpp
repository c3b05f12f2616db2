#include "defsynth/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace defsynth::nn {

ad::Var ParamStore::create(const std::string& name, Tensor init) {
  if (map_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
  ad::Var v = ad::leaf(std::move(init));
  order_.push_back(name);
  map_.emplace(name, v);
  return v;
}

ad::Var ParamStore::get(const std::string& name) const {
  auto it = map_.find(name);
  if (it == map_.end()) throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

Tensor ParamStore::tensor(const std::string& name) const { return get(name).value(); }

bool ParamStore::has(const std::string& name) const { return map_.count(name) != 0; }

int64_t ParamStore::total_scalars() const {
  int64_t n = 0;
  for (const auto& name : order_) n += map_.at(name).value().numel();
  return n;
}

Tensor kaiming_normal(std::vector<int64_t> shape, int64_t fan_in, std::mt19937_64& rng) {
  if (fan_in <= 0) throw std::invalid_argument("kaiming_normal: fan_in must be positive");
  double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  return Tensor::randn(std::move(shape), rng, stddev);
}

Tensor nearest_resize_nchw(const Tensor& x, int64_t oh, int64_t ow) {
  if (x.rank() != 4) throw std::invalid_argument("nearest_resize_nchw: expected NCHW, got " + x.shape_str());
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("nearest_resize_nchw: non-positive output size");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h == oh && w == ow) return x;
  Tensor out({n, c, oh, ow});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j)
      for (int64_t oy = 0; oy < oh; ++oy) {
        int64_t iy = oy * h / oh;
        for (int64_t ox = 0; ox < ow; ++ox) {
          int64_t ix = ox * w / ow;
          out.at4(i, j, oy, ox) = x.at4(i, j, iy, ix);
        }
      }
  return out;
}

ad::Var instance_normalize(const ad::Var& x, double eps) {
  const int64_t h = x.value().dim(2), w = x.value().dim(3);
  ad::Var mu = ad::mean_hw(x);
  ad::Var centered = ad::sub(x, ad::broadcast_hw(mu, h, w));
  ad::Var var = ad::mean_hw(ad::square(centered));
  ad::Var inv = ad::rsqrt_eps(var, eps);
  return ad::mul(centered, ad::broadcast_hw(inv, h, w));
}

Conv2d::Conv2d(ParamStore& store, const std::string& prefix, int64_t in_ch, int64_t out_ch,
               int64_t kernel, int stride, int pad, bool bias, std::mt19937_64& rng)
    : stride_(stride), pad_(pad) {
  w_ = store.create(prefix + ".w",
                    kaiming_normal({out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel, rng));
  if (bias) b_ = store.create(prefix + ".b", Tensor({out_ch}));
}

ad::Var Conv2d::forward(const ad::Var& x) const {
  ad::Var y = ad::conv2d(x, w_, stride_, pad_);
  return b_.defined() ? ad::bias_nchw(y, b_) : y;
}

ConvTranspose2d::ConvTranspose2d(ParamStore& store, const std::string& prefix, int64_t in_ch,
                                 int64_t out_ch, int64_t kernel, int stride, int pad, bool bias,
                                 std::mt19937_64& rng)
    : kernel_(kernel), stride_(stride), pad_(pad) {
  w_ = store.create(prefix + ".w",
                    kaiming_normal({in_ch, out_ch, kernel, kernel}, in_ch * kernel * kernel, rng));
  if (bias) b_ = store.create(prefix + ".b", Tensor({out_ch}));
}

ad::Var ConvTranspose2d::forward(const ad::Var& x) const {
  const int64_t h = x.value().dim(2), w = x.value().dim(3);
  const int64_t oh = (h - 1) * stride_ + kernel_ - 2 * pad_;
  const int64_t ow = (w - 1) * stride_ + kernel_ - 2 * pad_;
  ad::Var y = ad::conv2d_input_grad(x, w_, oh, ow, stride_, pad_);
  return b_.defined() ? ad::bias_nchw(y, b_) : y;
}

Linear::Linear(ParamStore& store, const std::string& prefix, int64_t in_dim, int64_t out_dim,
               std::mt19937_64& rng) {
  w_ = store.create(prefix + ".w", kaiming_normal({in_dim, out_dim}, in_dim, rng));
  b_ = store.create(prefix + ".b", Tensor({out_dim}));
}

ad::Var Linear::forward(const ad::Var& x) const {
  ad::Var y = ad::matmul(x, w_);
  const int64_t n = y.value().dim(0), m = y.value().dim(1);
  y = ad::bias_nchw(ad::reshape(y, {n, m, 1, 1}), b_);
  return ad::reshape(y, {n, m});
}

InstanceNorm::InstanceNorm(ParamStore& store, const std::string& prefix, int64_t channels) {
  gamma_ = store.create(prefix + ".gamma", Tensor::full({channels}, 1.0));
  beta_ = store.create(prefix + ".beta", Tensor({channels}));
}

ad::Var InstanceNorm::forward(const ad::Var& x) const {
  const int64_t n = x.value().dim(0), h = x.value().dim(2), w = x.value().dim(3);
  ad::Var y = instance_normalize(x);
  return ad::add(ad::mul(y, ad::broadcast_c(gamma_, n, h, w)), ad::broadcast_c(beta_, n, h, w));
}

SpatialModulation::SpatialModulation(ParamStore& store, const std::string& prefix,
                                     int64_t channels, int64_t control_channels, int64_t hidden,
                                     std::mt19937_64& rng) {
  ws_ = store.create(prefix + ".shared.w", kaiming_normal({hidden, control_channels, 3, 3},
                                                          control_channels * 9, rng));
  bs_ = store.create(prefix + ".shared.b", Tensor({hidden}));
  wg_ = store.create(prefix + ".gamma.w", Tensor({channels, hidden, 3, 3}));
  bg_ = store.create(prefix + ".gamma.b", Tensor({channels}));
  wb_ = store.create(prefix + ".beta.w", Tensor({channels, hidden, 3, 3}));
  bb_ = store.create(prefix + ".beta.b", Tensor({channels}));
}

ad::Var SpatialModulation::forward(const ad::Var& x, const Tensor& control) const {
  const int64_t h = x.value().dim(2), w = x.value().dim(3);
  ad::Var a = ad::constant(nearest_resize_nchw(control, h, w));
  ad::Var shared = ad::relu(ad::bias_nchw(ad::conv2d(a, ws_, 1, 1), bs_));
  ad::Var gamma = ad::bias_nchw(ad::conv2d(shared, wg_, 1, 1), bg_);
  ad::Var beta = ad::bias_nchw(ad::conv2d(shared, wb_, 1, 1), bb_);
  ad::Var y = instance_normalize(x);
  return ad::add(ad::mul(y, ad::add_scalar(gamma, 1.0)), beta);
}

NoiseInjection::NoiseInjection(ParamStore& store, const std::string& prefix) {
  scale_ = store.create(prefix + ".scale", Tensor({1}));
}

ad::Var NoiseInjection::forward(const ad::Var& x, std::mt19937_64& rng, bool enabled) const {
  if (!enabled) return x;
  Tensor z = Tensor::randn(x.value().shape(), rng, 1.0);
  return ad::add(x, ad::mul_const(ad::broadcast_all(scale_, x.value().shape()), z));
}

}  // namespace defsynth::nn
