#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace defsynth {

/// Dense row-major double tensor with shared storage.
///
/// Copies are shallow (they alias the same buffer). The convention across the
/// library is that a tensor is immutable once it has been handed to the
/// autodiff layer; the optimizers are the only code that mutates parameter
/// storage in place, and they do so between steps when no graph is alive.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);

  static Tensor zeros(std::vector<int64_t> shape);
  static Tensor full(std::vector<int64_t> shape, double value);
  static Tensor scalar(double value);
  static Tensor from_vector(std::vector<int64_t> shape, std::vector<double> values);
  /// i.i.d. N(0, stddev^2) entries.
  static Tensor randn(std::vector<int64_t> shape, std::mt19937_64& rng, double stddev = 1.0);
  /// i.i.d. U(lo, hi) entries.
  static Tensor uniform(std::vector<int64_t> shape, std::mt19937_64& rng, double lo, double hi);

  bool defined() const { return static_cast<bool>(buf_); }
  const std::vector<int64_t>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t numel() const { return numel_; }

  double* data() { return buf_->data(); }
  const double* data() const { return buf_->data(); }

  double& at(int64_t i) { return (*buf_)[static_cast<size_t>(i)]; }
  double at(int64_t i) const { return (*buf_)[static_cast<size_t>(i)]; }

  /// NCHW element access.
  double& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
    return (*buf_)[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return (*buf_)[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double& at3(int64_t c, int64_t h, int64_t w) {
    return (*buf_)[static_cast<size_t>((c * shape_[1] + h) * shape_[2] + w)];
  }
  double at3(int64_t c, int64_t h, int64_t w) const {
    return (*buf_)[static_cast<size_t>((c * shape_[1] + h) * shape_[2] + w)];
  }
  double& at2(int64_t i, int64_t j) { return (*buf_)[static_cast<size_t>(i * shape_[1] + j)]; }
  double at2(int64_t i, int64_t j) const { return (*buf_)[static_cast<size_t>(i * shape_[1] + j)]; }

  /// Deep copy with fresh storage.
  Tensor clone() const;
  /// Same storage, new shape (element count must match).
  Tensor reshaped(std::vector<int64_t> shape) const;

  void fill(double value);
  /// Overwrites this tensor's storage with the other's contents (shapes must match).
  void copy_from(const Tensor& other);

  double min() const;
  double max() const;
  double sum() const;
  double abs_max() const;
  bool all_finite() const;

  std::string shape_str() const;

 private:
  std::vector<int64_t> shape_;
  int64_t numel_ = 0;
  std::shared_ptr<std::vector<double>> buf_;
};

bool same_shape(const Tensor& a, const Tensor& b);
std::string shape_str(const std::vector<int64_t>& shape);

}  // namespace defsynth
