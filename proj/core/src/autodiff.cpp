#include "defsynth/autodiff.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace defsynth::ad {

namespace {

thread_local bool g_recording = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

[[noreturn]] void op_error(const char* op, const std::string& msg) {
  throw std::invalid_argument(std::string(op) + ": " + msg);
}

void check_rank(const char* op, const Var& v, int rank) {
  if (v.value().rank() != rank)
    op_error(op, "expected rank-" + std::to_string(rank) + " input, got " + v.value().shape_str());
}

void check_same(const char* op, const Var& a, const Var& b) {
  if (!same_shape(a.value(), b.value()))
    op_error(op, "shape mismatch " + a.value().shape_str() + " vs " + b.value().shape_str());
}

}  // namespace

Var::Var(Tensor value, bool requires_grad) {
  // Leaves keep requires_grad even when recording is paused; only op
  // recording is gated, so parameters created under NoGradGuard still train.
  node_ = std::make_shared<Node>();
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Var::value() const {
  if (!node_) throw std::logic_error("Var: access to undefined variable");
  return node_->value;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

double Var::item() const {
  if (value().numel() != 1) throw std::logic_error("Var::item: tensor has " + std::to_string(value().numel()) + " elements");
  return value().at(0);
}

bool grad_enabled() { return g_recording; }

NoGradGuard::NoGradGuard() : prev_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = prev_; }

Var make_op(const char* name, std::vector<Var> inputs, Tensor out,
            std::function<std::vector<Var>(const Var&)> backward) {
  bool needs = false;
  if (g_recording)
    for (const Var& v : inputs)
      if (v.requires_grad()) { needs = true; break; }
  Var r;
  r.node_ = std::make_shared<Node>();
  r.node_->value = std::move(out);
  r.node_->op = name;
  if (needs) {
    r.node_->requires_grad = true;
    r.node_->inputs = std::move(inputs);
    r.node_->backward = std::move(backward);
  }
  return r;
}

Var constant(Tensor t) { return Var(std::move(t), false); }
Var leaf(Tensor t, bool requires_grad) { return Var(std::move(t), requires_grad); }

GradMap backward(const Var& root, bool create_graph) {
  if (!root.defined()) throw std::logic_error("backward: undefined root");
  if (root.value().numel() != 1) throw std::logic_error("backward: root must be scalar");

  // Iterative post-order topological sort over the subgraph that requires grad.
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  struct Frame { Node* node; size_t next_input; };
  std::vector<Frame> stack;
  if (root.node()->requires_grad) {
    stack.push_back({root.node().get(), 0});
    seen.insert(root.node().get());
  }
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_input < f.node->inputs.size()) {
      Node* in = f.node->inputs[f.next_input++].node().get();
      if (in && in->requires_grad && !seen.count(in)) {
        seen.insert(in);
        stack.push_back({in, 0});
      }
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }

  GradMap grads;
  grads[root.node().get()] = constant(Tensor::full(root.value().shape(), 1.0));

  auto run = [&]() {
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      Node* n = *it;
      auto gi = grads.find(n);
      if (gi == grads.end() || !n->backward) continue;
      std::vector<Var> input_grads = n->backward(gi->second);
      if (input_grads.size() != n->inputs.size())
        throw std::logic_error(std::string("backward: op '") + n->op + "' returned " +
                               std::to_string(input_grads.size()) + " grads for " +
                               std::to_string(n->inputs.size()) + " inputs");
      for (size_t k = 0; k < n->inputs.size(); ++k) {
        const Var& in = n->inputs[k];
        if (!in.defined() || !in.node()->requires_grad || !input_grads[k].defined()) continue;
        auto slot = grads.find(in.node().get());
        if (slot == grads.end())
          grads.emplace(in.node().get(), input_grads[k]);
        else
          slot->second = add(slot->second, input_grads[k]);
      }
    }
  };

  if (create_graph) {
    run();
  } else {
    NoGradGuard guard;
    run();
  }
  return grads;
}

Var grad_in(const GradMap& m, const Var& v) {
  auto it = m.find(v.node().get());
  return it == m.end() ? Var() : it->second;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  check_same("add", a, b);
  Tensor out(a.value().shape());
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] + pb[i];
  return make_op("add", {a, b}, std::move(out),
                 [](const Var& g) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  check_same("sub", a, b);
  Tensor out(a.value().shape());
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] - pb[i];
  return make_op("sub", {a, b}, std::move(out),
                 [](const Var& g) { return std::vector<Var>{g, neg(g)}; });
}

Var mul(const Var& a, const Var& b) {
  check_same("mul", a, b);
  Tensor out(a.value().shape());
  const double* pa = a.value().data();
  const double* pb = b.value().data();
  double* po = out.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] * pb[i];
  return make_op("mul", {a, b}, std::move(out), [a, b](const Var& g) {
    return std::vector<Var>{mul(g, b), mul(g, a)};
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double c) {
  Tensor out(a.value().shape());
  const double* pa = a.value().data();
  double* po = out.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] * c;
  return make_op("scale", {a}, std::move(out),
                 [c](const Var& g) { return std::vector<Var>{scale(g, c)}; });
}

Var add_scalar(const Var& a, double c) {
  Tensor out(a.value().shape());
  const double* pa = a.value().data();
  double* po = out.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] + c;
  return make_op("add_scalar", {a}, std::move(out),
                 [](const Var& g) { return std::vector<Var>{g}; });
}

Var mul_const(const Var& a, const Tensor& t) {
  if (!same_shape(a.value(), t))
    op_error("mul_const", "shape mismatch " + a.value().shape_str() + " vs " + t.shape_str());
  Tensor out(a.value().shape());
  const double* pa = a.value().data();
  const double* pt = t.data();
  double* po = out.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] * pt[i];
  return make_op("mul_const", {a}, std::move(out),
                 [t](const Var& g) { return std::vector<Var>{mul_const(g, t)}; });
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var leaky_relu(const Var& a, double slope) {
  Tensor out(a.value().shape());
  Tensor mask(a.value().shape());
  const double* pa = a.value().data();
  double* po = out.data();
  double* pm = mask.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) {
    if (pa[i] > 0) {
      po[i] = pa[i];
      pm[i] = 1.0;
    } else {
      po[i] = pa[i] * slope;
      pm[i] = slope;
    }
  }
  return make_op("leaky_relu", {a}, std::move(out),
                 [mask](const Var& g) { return std::vector<Var>{mul_const(g, mask)}; });
}

Var abs_(const Var& a) {
  Tensor out(a.value().shape());
  Tensor sign(a.value().shape());
  const double* pa = a.value().data();
  double* po = out.data();
  double* ps = sign.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) {
    po[i] = std::abs(pa[i]);
    ps[i] = pa[i] > 0 ? 1.0 : (pa[i] < 0 ? -1.0 : 0.0);
  }
  return make_op("abs", {a}, std::move(out),
                 [sign](const Var& g) { return std::vector<Var>{mul_const(g, sign)}; });
}

namespace {
// Unary op whose backward multiplies the gradient by a precomputed factor.
Var unary_with_factor(const char* name, const Var& a, Tensor out, Tensor factor) {
  return make_op(name, {a}, std::move(out),
                 [factor](const Var& g) { return std::vector<Var>{mul_const(g, factor)}; });
}
}  // namespace

Var tanh_(const Var& a) {
  Tensor out(a.value().shape());
  Tensor fac(a.value().shape());
  const double* pa = a.value().data();
  double* po = out.data();
  double* pf = fac.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) {
    double y = std::tanh(pa[i]);
    po[i] = y;
    pf[i] = 1.0 - y * y;
  }
  return unary_with_factor("tanh", a, std::move(out), std::move(fac));
}

Var sigmoid_(const Var& a) {
  Tensor out(a.value().shape());
  Tensor fac(a.value().shape());
  const double* pa = a.value().data();
  double* po = out.data();
  double* pf = fac.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) {
    double x = pa[i];
    double y = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    po[i] = y;
    pf[i] = y * (1.0 - y);
  }
  return unary_with_factor("sigmoid", a, std::move(out), std::move(fac));
}

Var softplus(const Var& a) {
  Tensor out(a.value().shape());
  Tensor fac(a.value().shape());
  const double* pa = a.value().data();
  double* po = out.data();
  double* pf = fac.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) {
    double x = pa[i];
    po[i] = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    pf[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return unary_with_factor("softplus", a, std::move(out), std::move(fac));
}

Var exp_(const Var& a) {
  Tensor out(a.value().shape());
  const double* pa = a.value().data();
  double* po = out.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) po[i] = std::exp(pa[i]);
  Tensor fac = out.clone();
  return unary_with_factor("exp", a, std::move(out), std::move(fac));
}

Var log_(const Var& a) {
  Tensor out(a.value().shape());
  Tensor fac(a.value().shape());
  const double* pa = a.value().data();
  double* po = out.data();
  double* pf = fac.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) {
    po[i] = std::log(pa[i]);
    pf[i] = 1.0 / pa[i];
  }
  return unary_with_factor("log", a, std::move(out), std::move(fac));
}

Var sqrt_(const Var& a) {
  Tensor out(a.value().shape());
  Tensor fac(a.value().shape());
  const double* pa = a.value().data();
  double* po = out.data();
  double* pf = fac.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) {
    double y = std::sqrt(pa[i]);
    po[i] = y;
    // Zero-gradient convention at the origin keeps norms of all-zero vectors
    // from poisoning the backward pass.
    pf[i] = y > 0 ? 0.5 / y : 0.0;
  }
  return unary_with_factor("sqrt", a, std::move(out), std::move(fac));
}

Var square(const Var& a) {
  Tensor out(a.value().shape());
  const double* pa = a.value().data();
  double* po = out.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) po[i] = pa[i] * pa[i];
  return make_op("square", {a}, std::move(out), [a](const Var& g) {
    return std::vector<Var>{scale(mul(g, a), 2.0)};
  });
}

Var rsqrt_eps(const Var& a, double eps) {
  Tensor out(a.value().shape());
  Tensor fac(a.value().shape());
  const double* pa = a.value().data();
  double* po = out.data();
  double* pf = fac.data();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) {
    double y = 1.0 / std::sqrt(pa[i] + eps);
    po[i] = y;
    pf[i] = -0.5 * y * y * y;
  }
  return unary_with_factor("rsqrt_eps", a, std::move(out), std::move(fac));
}

// ---------------------------------------------------------------------------
// shape / reduction
// ---------------------------------------------------------------------------

Var reshape(const Var& a, std::vector<int64_t> shape) {
  Tensor out = a.value().reshaped(shape);
  std::vector<int64_t> orig = a.value().shape();
  return make_op("reshape", {a}, std::move(out), [orig](const Var& g) {
    return std::vector<Var>{reshape(g, orig)};
  });
}

Var sum_all(const Var& a) {
  Tensor out = Tensor::scalar(a.value().sum());
  std::vector<int64_t> shape = a.value().shape();
  return make_op("sum_all", {a}, std::move(out), [shape](const Var& g) {
    return std::vector<Var>{broadcast_all(g, shape)};
  });
}

Var mean_all(const Var& a) {
  int64_t n = a.value().numel();
  if (n == 0) op_error("mean_all", "empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(n));
}

Var broadcast_all(const Var& scalar_v, std::vector<int64_t> shape) {
  if (scalar_v.value().numel() != 1) op_error("broadcast_all", "input must be scalar");
  Tensor out = Tensor::full(shape, scalar_v.value().at(0));
  return make_op("broadcast_all", {scalar_v}, std::move(out), [](const Var& g) {
    return std::vector<Var>{sum_all(g)};
  });
}

Var sum_chw(const Var& a) {
  check_rank("sum_chw", a, 4);
  const Tensor& x = a.value();
  int64_t n = x.dim(0), per = x.numel() / std::max<int64_t>(n, 1);
  Tensor out({n});
  const double* px = x.data();
  for (int64_t i = 0; i < n; ++i) {
    double s = 0;
    for (int64_t j = 0; j < per; ++j) s += px[i * per + j];
    out.at(i) = s;
  }
  int64_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
  return make_op("sum_chw", {a}, std::move(out), [c, h, w](const Var& g) {
    return std::vector<Var>{broadcast_chw(g, c, h, w)};
  });
}

Var broadcast_chw(const Var& a, int64_t c, int64_t h, int64_t w) {
  check_rank("broadcast_chw", a, 1);
  const Tensor& x = a.value();
  int64_t n = x.dim(0), per = c * h * w;
  Tensor out({n, c, h, w});
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i) {
    double v = x.at(i);
    for (int64_t j = 0; j < per; ++j) po[i * per + j] = v;
  }
  return make_op("broadcast_chw", {a}, std::move(out), [](const Var& g) {
    return std::vector<Var>{sum_chw(g)};
  });
}

Var sum_hw(const Var& a) {
  check_rank("sum_hw", a, 4);
  const Tensor& x = a.value();
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), hw = h * w;
  Tensor out({n, c, 1, 1});
  const double* px = x.data();
  double* po = out.data();
  for (int64_t i = 0; i < n * c; ++i) {
    double s = 0;
    for (int64_t j = 0; j < hw; ++j) s += px[i * hw + j];
    po[i] = s;
  }
  return make_op("sum_hw", {a}, std::move(out), [h, w](const Var& g) {
    return std::vector<Var>{broadcast_hw(g, h, w)};
  });
}

Var broadcast_hw(const Var& a, int64_t h, int64_t w) {
  check_rank("broadcast_hw", a, 4);
  const Tensor& x = a.value();
  if (x.dim(2) != 1 || x.dim(3) != 1) op_error("broadcast_hw", "input must be (N,C,1,1)");
  int64_t n = x.dim(0), c = x.dim(1), hw = h * w;
  Tensor out({n, c, h, w});
  const double* px = x.data();
  double* po = out.data();
  for (int64_t i = 0; i < n * c; ++i) {
    double v = px[i];
    for (int64_t j = 0; j < hw; ++j) po[i * hw + j] = v;
  }
  return make_op("broadcast_hw", {a}, std::move(out), [](const Var& g) {
    return std::vector<Var>{sum_hw(g)};
  });
}

Var mean_hw(const Var& a) {
  check_rank("mean_hw", a, 4);
  double inv = 1.0 / static_cast<double>(a.value().dim(2) * a.value().dim(3));
  return scale(sum_hw(a), inv);
}

Var sum_nhw(const Var& a) {
  check_rank("sum_nhw", a, 4);
  const Tensor& x = a.value();
  int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({c});
  const double* px = x.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) {
      double s = 0;
      const double* p = px + (i * c + j) * hw;
      for (int64_t k = 0; k < hw; ++k) s += p[k];
      out.at(j) += s;
    }
  int64_t h = x.dim(2), w = x.dim(3);
  return make_op("sum_nhw", {a}, std::move(out), [n, h, w](const Var& g) {
    return std::vector<Var>{broadcast_c(g, n, h, w)};
  });
}

Var broadcast_c(const Var& a, int64_t n, int64_t h, int64_t w) {
  check_rank("broadcast_c", a, 1);
  const Tensor& x = a.value();
  int64_t c = x.dim(0), hw = h * w;
  Tensor out({n, c, h, w});
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) {
      double v = x.at(j);
      double* p = po + (i * c + j) * hw;
      for (int64_t k = 0; k < hw; ++k) p[k] = v;
    }
  return make_op("broadcast_c", {a}, std::move(out), [](const Var& g) {
    return std::vector<Var>{sum_nhw(g)};
  });
}

Var broadcast_c1(const Var& a, int64_t c) {
  check_rank("broadcast_c1", a, 4);
  const Tensor& x = a.value();
  if (x.dim(1) != 1) op_error("broadcast_c1", "input must be (N,1,H,W)");
  int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3), hw = h * w;
  Tensor out({n, c, h, w});
  const double* px = x.data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j)
      std::copy(px + i * hw, px + (i + 1) * hw, po + (i * c + j) * hw);
  return make_op("broadcast_c1", {a}, std::move(out), [](const Var& g) {
    return std::vector<Var>{sum_to_c1(g)};
  });
}

Var sum_to_c1(const Var& a) {
  check_rank("sum_to_c1", a, 4);
  const Tensor& x = a.value();
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), hw = h * w;
  Tensor out({n, 1, h, w});
  const double* px = x.data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) {
      const double* p = px + (i * c + j) * hw;
      double* q = po + i * hw;
      for (int64_t k = 0; k < hw; ++k) q[k] += p[k];
    }
  int64_t cc = c;
  return make_op("sum_to_c1", {a}, std::move(out), [cc](const Var& g) {
    return std::vector<Var>{broadcast_c1(g, cc)};
  });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  check_rank("matmul", a, 2);
  check_rank("matmul", b, 2);
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (ta.dim(1) != tb.dim(0))
    op_error("matmul", "inner dimensions differ: " + ta.shape_str() + " x " + tb.shape_str());
  Tensor out({ta.dim(0), tb.dim(1)});
  MapConstMat ma(ta.data(), ta.dim(0), ta.dim(1));
  MapConstMat mb(tb.data(), tb.dim(0), tb.dim(1));
  MapMat mo(out.data(), out.dim(0), out.dim(1));
  mo.noalias() = ma * mb;
  return make_op("matmul", {a, b}, std::move(out), [a, b](const Var& g) {
    return std::vector<Var>{matmul(g, transpose(b)), matmul(transpose(a), g)};
  });
}

Var transpose(const Var& a) {
  check_rank("transpose", a, 2);
  const Tensor& x = a.value();
  Tensor out({x.dim(1), x.dim(0)});
  for (int64_t i = 0; i < x.dim(0); ++i)
    for (int64_t j = 0; j < x.dim(1); ++j) out.at2(j, i) = x.at2(i, j);
  return make_op("transpose", {a}, std::move(out), [](const Var& g) {
    return std::vector<Var>{transpose(g)};
  });
}

// ---------------------------------------------------------------------------
// convolution (im2col + GEMM)
// ---------------------------------------------------------------------------

int64_t conv_out_size(int64_t in, int64_t k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace {

// Gathers conv patches of image x[n] into a (Cin*kh*kw) x (Ho*Wo) row-major buffer.
void im2col(const Tensor& x, int64_t n, int64_t kh, int64_t kw, int stride, int pad,
            int64_t ho, int64_t wo, std::vector<double>& col) {
  const int64_t cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t patch = ho * wo;
  const double* px = x.data() + n * cin * h * w;
  double* pc = col.data();
  for (int64_t c = 0; c < cin; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        double* row = pc + ((c * kh + ki) * kw + kj) * patch;
        for (int64_t oy = 0; oy < ho; ++oy) {
          int64_t iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) {
            std::fill(row + oy * wo, row + (oy + 1) * wo, 0.0);
            continue;
          }
          const double* src = px + (c * h + iy) * w;
          for (int64_t ox = 0; ox < wo; ++ox) {
            int64_t ix = ox * stride - pad + kj;
            row[oy * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-adds a (Cin*kh*kw) x (Ho*Wo) buffer back into image grad[n].
void col2im(const std::vector<double>& col, Tensor& x, int64_t n, int64_t kh, int64_t kw,
            int stride, int pad, int64_t ho, int64_t wo) {
  const int64_t cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t patch = ho * wo;
  double* px = x.data() + n * cin * h * w;
  const double* pc = col.data();
  for (int64_t c = 0; c < cin; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const double* row = pc + ((c * kh + ki) * kw + kj) * patch;
        for (int64_t oy = 0; oy < ho; ++oy) {
          int64_t iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          double* dst = px + (c * h + iy) * w;
          for (int64_t ox = 0; ox < wo; ++ox) {
            int64_t ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < w) dst[ix] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, int stride, int pad) {
  check_rank("conv2d", x, 4);
  check_rank("conv2d", w, 4);
  const Tensor& tx = x.value();
  const Tensor& tw = w.value();
  if (tx.dim(1) != tw.dim(1))
    op_error("conv2d", "channel mismatch: input " + tx.shape_str() + ", weights " + tw.shape_str());
  const int64_t n = tx.dim(0), cout = tw.dim(0), kh = tw.dim(2), kw = tw.dim(3);
  const int64_t ho = conv_out_size(tx.dim(2), kh, stride, pad);
  const int64_t wo = conv_out_size(tx.dim(3), kw, stride, pad);
  if (ho <= 0 || wo <= 0)
    op_error("conv2d", "kernel " + tw.shape_str() + " larger than padded input " + tx.shape_str());
  const int64_t k = tw.numel() / cout, patch = ho * wo;

  Tensor out({n, cout, ho, wo});
  std::vector<double> col(static_cast<size_t>(k * patch));
  MapConstMat wm(tw.data(), cout, k);
  for (int64_t i = 0; i < n; ++i) {
    im2col(tx, i, kh, kw, stride, pad, ho, wo, col);
    MapConstMat cm(col.data(), k, patch);
    MapMat om(out.data() + i * cout * patch, cout, patch);
    om.noalias() = wm * cm;
  }

  const int64_t in_h = tx.dim(2), in_w = tx.dim(3);
  return make_op("conv2d", {x, w}, std::move(out),
                 [x, w, in_h, in_w, kh, kw, stride, pad](const Var& g) {
                   return std::vector<Var>{
                       conv2d_input_grad(g, w, in_h, in_w, stride, pad),
                       conv2d_weight_grad(x, g, kh, kw, stride, pad)};
                 });
}

Var conv2d_input_grad(const Var& g, const Var& w, int64_t in_h, int64_t in_w, int stride,
                      int pad) {
  check_rank("conv2d_input_grad", g, 4);
  check_rank("conv2d_input_grad", w, 4);
  const Tensor& tg = g.value();
  const Tensor& tw = w.value();
  if (tg.dim(1) != tw.dim(0))
    op_error("conv2d_input_grad",
             "channel mismatch: grad " + tg.shape_str() + ", weights " + tw.shape_str());
  const int64_t n = tg.dim(0), cout = tw.dim(0), cin = tw.dim(1), kh = tw.dim(2), kw = tw.dim(3);
  const int64_t ho = tg.dim(2), wo = tg.dim(3);
  if (conv_out_size(in_h, kh, stride, pad) != ho || conv_out_size(in_w, kw, stride, pad) != wo)
    op_error("conv2d_input_grad", "grad spatial size " + tg.shape_str() +
                                      " inconsistent with target input " + std::to_string(in_h) +
                                      "x" + std::to_string(in_w));
  const int64_t k = cin * kh * kw, patch = ho * wo;

  Tensor out({n, cin, in_h, in_w});
  std::vector<double> col(static_cast<size_t>(k * patch));
  MapConstMat wm(tw.data(), cout, k);
  for (int64_t i = 0; i < n; ++i) {
    MapConstMat gm(tg.data() + i * cout * patch, cout, patch);
    MapMat cm(col.data(), k, patch);
    cm.noalias() = wm.transpose() * gm;
    col2im(col, out, i, kh, kw, stride, pad, ho, wo);
  }

  return make_op("conv2d_input_grad", {g, w}, std::move(out),
                 [g, w, kh, kw, stride, pad](const Var& h) {
                   return std::vector<Var>{
                       conv2d(h, w, stride, pad),
                       conv2d_weight_grad(h, g, kh, kw, stride, pad)};
                 });
}

Var conv2d_weight_grad(const Var& x, const Var& g, int64_t kh, int64_t kw, int stride, int pad) {
  check_rank("conv2d_weight_grad", x, 4);
  check_rank("conv2d_weight_grad", g, 4);
  const Tensor& tx = x.value();
  const Tensor& tg = g.value();
  if (tx.dim(0) != tg.dim(0)) op_error("conv2d_weight_grad", "batch mismatch");
  const int64_t n = tx.dim(0), cin = tx.dim(1), cout = tg.dim(1);
  const int64_t ho = tg.dim(2), wo = tg.dim(3);
  if (conv_out_size(tx.dim(2), kh, stride, pad) != ho ||
      conv_out_size(tx.dim(3), kw, stride, pad) != wo)
    op_error("conv2d_weight_grad", "grad spatial size inconsistent with input and kernel");
  const int64_t k = cin * kh * kw, patch = ho * wo;

  Tensor out({cout, cin, kh, kw});
  std::vector<double> col(static_cast<size_t>(k * patch));
  MapMat om(out.data(), cout, k);
  for (int64_t i = 0; i < n; ++i) {
    im2col(tx, i, kh, kw, stride, pad, ho, wo, col);
    MapConstMat cm(col.data(), k, patch);
    MapConstMat gm(tg.data() + i * cout * patch, cout, patch);
    om.noalias() += gm * cm.transpose();
  }

  const int64_t in_h = tx.dim(2), in_w = tx.dim(3);
  return make_op("conv2d_weight_grad", {x, g}, std::move(out),
                 [x, g, in_h, in_w, stride, pad](const Var& u) {
                   return std::vector<Var>{
                       conv2d_input_grad(g, u, in_h, in_w, stride, pad),
                       conv2d(x, u, stride, pad)};
                 });
}

Var bias_nchw(const Var& x, const Var& b) {
  check_rank("bias_nchw", x, 4);
  check_rank("bias_nchw", b, 1);
  const Tensor& tx = x.value();
  const Tensor& tb = b.value();
  if (tx.dim(1) != tb.dim(0))
    op_error("bias_nchw", "bias length " + tb.shape_str() + " vs channels " + tx.shape_str());
  const int64_t n = tx.dim(0), c = tx.dim(1), hw = tx.dim(2) * tx.dim(3);
  Tensor out(tx.shape());
  const double* px = tx.data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) {
      double v = tb.at(j);
      const double* p = px + (i * c + j) * hw;
      double* q = po + (i * c + j) * hw;
      for (int64_t t = 0; t < hw; ++t) q[t] = p[t] + v;
    }
  return make_op("bias_nchw", {x, b}, std::move(out), [](const Var& g) {
    return std::vector<Var>{g, sum_nhw(g)};
  });
}

// ---------------------------------------------------------------------------
// misc
// ---------------------------------------------------------------------------

Var gradient_reversal(const Var& x, double lambda) {
  Tensor out = x.value().clone();
  return make_op("gradient_reversal", {x}, std::move(out), [lambda](const Var& g) {
    return std::vector<Var>{scale(g, -lambda)};
  });
}

Var bce_with_logits_mean(const Var& logits, const Tensor& targets) {
  if (!same_shape(logits.value(), targets))
    op_error("bce_with_logits_mean",
             "shape mismatch " + logits.value().shape_str() + " vs " + targets.shape_str());
  return mean_all(sub(softplus(logits), mul_const(logits, targets)));
}

}  // namespace defsynth::ad
