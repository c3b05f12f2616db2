#include "defsynth/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace defsynth {

namespace {
int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw std::invalid_argument("Tensor: negative dimension in shape " + defsynth::shape_str(shape));
    n *= d;
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<int64_t> shape)
    : shape_(std::move(shape)),
      numel_(shape_numel(shape_)),
      buf_(std::make_shared<std::vector<double>>(static_cast<size_t>(numel_), 0.0)) {}

Tensor Tensor::zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::scalar(double value) {
  Tensor t(std::vector<int64_t>{});
  t.at(0) = value;
  return t;
}

Tensor Tensor::from_vector(std::vector<int64_t> shape, std::vector<double> values) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.numel_ = shape_numel(t.shape_);
  if (static_cast<int64_t>(values.size()) != t.numel_)
    throw std::invalid_argument("Tensor::from_vector: " + std::to_string(values.size()) +
                                " values for shape " + defsynth::shape_str(t.shape_));
  t.buf_ = std::make_shared<std::vector<double>>(std::move(values));
  return t;
}

Tensor Tensor::randn(std::vector<int64_t> shape, std::mt19937_64& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, 1.0);
  double* p = t.data();
  for (int64_t i = 0; i < t.numel_; ++i) p[i] = dist(rng) * stddev;
  return t;
}

Tensor Tensor::uniform(std::vector<int64_t> shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  double* p = t.data();
  for (int64_t i = 0; i < t.numel_; ++i) p[i] = dist(rng);
  return t;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  t.numel_ = numel_;
  t.buf_ = std::make_shared<std::vector<double>>(*buf_);
  return t;
}

Tensor Tensor::reshaped(std::vector<int64_t> shape) const {
  if (shape_numel(shape) != numel_)
    throw std::invalid_argument("Tensor::reshaped: cannot view " + defsynth::shape_str(shape_) + " as " +
                                defsynth::shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.numel_ = numel_;
  t.buf_ = buf_;
  return t;
}

void Tensor::fill(double value) { std::fill(buf_->begin(), buf_->end(), value); }

void Tensor::copy_from(const Tensor& other) {
  if (!same_shape(*this, other))
    throw std::invalid_argument("Tensor::copy_from: shape mismatch " + shape_str() + " vs " +
                                other.shape_str());
  std::copy(other.buf_->begin(), other.buf_->end(), buf_->begin());
}

double Tensor::min() const {
  return *std::min_element(buf_->begin(), buf_->end());
}

double Tensor::max() const {
  return *std::max_element(buf_->begin(), buf_->end());
}

double Tensor::sum() const { return std::accumulate(buf_->begin(), buf_->end(), 0.0); }

double Tensor::abs_max() const {
  double m = 0.0;
  for (double v : *buf_) m = std::max(m, std::abs(v));
  return m;
}

bool Tensor::all_finite() const {
  for (double v : *buf_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const { return defsynth::shape_str(shape_); }

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

}  // namespace defsynth
