#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "defsynth/tensor.hpp"

namespace defsynth::ad {

struct Node;

/// Handle to a value in the computation graph. Cheap to copy.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const;
  bool requires_grad() const;
  const std::shared_ptr<Node>& node() const { return node_; }

  /// Convenience for scalar (numel==1) variables.
  double item() const;

 private:
  friend Var make_op(const char* name, std::vector<Var> inputs, Tensor out,
                     std::function<std::vector<Var>(const Var&)> backward);
  std::shared_ptr<Node> node_;
};

struct Node {
  Tensor value;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<Var> inputs;
  /// Maps the gradient w.r.t. this node's output to gradients w.r.t. each
  /// input (undefined Var where an input takes no gradient). Built only while
  /// recording is enabled and some input requires grad.
  std::function<std::vector<Var>(const Var&)> backward;
};

/// While a guard is alive, newly created ops record no graph edges.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

using GradMap = std::unordered_map<const Node*, Var>;

/// Reverse-mode pass from a scalar root. With create_graph=true the returned
/// gradients are themselves recorded nodes and can be differentiated again.
GradMap backward(const Var& root, bool create_graph = false);

/// Gradient held for `v` in `m`; undefined Var if none was accumulated.
Var grad_in(const GradMap& m, const Var& v);

Var constant(Tensor t);
Var leaf(Tensor t, bool requires_grad = true);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var mul_const(const Var& a, const Tensor& t);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var abs_(const Var& a);
Var tanh_(const Var& a);
Var sigmoid_(const Var& a);
Var softplus(const Var& a);
Var exp_(const Var& a);
Var log_(const Var& a);
Var sqrt_(const Var& a);
Var square(const Var& a);
Var rsqrt_eps(const Var& a, double eps);

// ---- shape / reduction ----
Var reshape(const Var& a, std::vector<int64_t> shape);
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var broadcast_all(const Var& scalar, std::vector<int64_t> shape);
Var sum_chw(const Var& a);                                    // (N,C,H,W) -> (N)
Var broadcast_chw(const Var& a, int64_t c, int64_t h, int64_t w);  // (N) -> (N,C,H,W)
Var sum_hw(const Var& a);                                     // (N,C,H,W) -> (N,C,1,1)
Var broadcast_hw(const Var& a, int64_t h, int64_t w);         // (N,C,1,1) -> (N,C,H,W)
Var mean_hw(const Var& a);
Var sum_nhw(const Var& a);                                    // (N,C,H,W) -> (C)
Var broadcast_c(const Var& a, int64_t n, int64_t h, int64_t w);    // (C) -> (N,C,H,W)
Var broadcast_c1(const Var& a, int64_t c);                    // (N,1,H,W) -> (N,C,H,W)
Var sum_to_c1(const Var& a);                                  // (N,C,H,W) -> (N,1,H,W)

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);  // (N,K)x(K,M) -> (N,M)
Var transpose(const Var& a);             // (N,M) -> (M,N)

// ---- convolution ----
/// x: (N,Cin,H,W), w: (Cout,Cin,kh,kw) -> (N,Cout,Ho,Wo)
Var conv2d(const Var& x, const Var& w, int stride, int pad);
/// Adjoint of conv2d w.r.t. its input; doubles as the transposed convolution.
/// g: (N,Cout,Ho,Wo) -> (N,Cin,in_h,in_w)
Var conv2d_input_grad(const Var& g, const Var& w, int64_t in_h, int64_t in_w, int stride, int pad);
/// Adjoint of conv2d w.r.t. its weights. x: (N,Cin,H,W), g: (N,Cout,Ho,Wo) -> (Cout,Cin,kh,kw)
Var conv2d_weight_grad(const Var& x, const Var& g, int64_t kh, int64_t kw, int stride, int pad);
/// Per-channel bias add on NCHW.
Var bias_nchw(const Var& x, const Var& b);

// ---- misc ----
/// Identity forward; backward multiplies the incoming gradient by -lambda.
Var gradient_reversal(const Var& x, double lambda);

/// Stable binary cross-entropy with logits, mean over all elements.
/// targets entries must lie in [0,1] and are treated as constants.
Var bce_with_logits_mean(const Var& logits, const Tensor& targets);

/// Conv output spatial size for given input size, kernel, stride, pad.
int64_t conv_out_size(int64_t in, int64_t k, int stride, int pad);

}  // namespace defsynth::ad
