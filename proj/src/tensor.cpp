#include "hpcf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_set>
#include <utility>

namespace hpcf {

namespace detail {

std::size_t checked_numel(std::span<const int> shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
  std::size_t n = 1;
  for (int e : shape) {
    if (e < 1) throw ShapeError("tensor extent must be >= 1, got " + std::to_string(e));
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::TensorNode> make_leaf(std::vector<int> shape, bool requires_grad) {
  auto node = std::make_shared<detail::TensorNode>();
  node->data.resize(detail::checked_numel(shape));
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  node->leaf = true;
  return node;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool GradSink::needs(std::size_t i) const { return node_.parents[i]->requires_grad; }

std::span<double> GradSink::grad(std::size_t i) {
  auto& p = *node_.parents[i];
  if (p.grad.empty()) p.grad.assign(p.data.size(), 0.0);
  return p.grad;
}

std::span<const double> GradSink::input_data(std::size_t i) const {
  return node_.parents[i]->data;
}

const std::vector<int>& GradSink::input_shape(std::size_t i) const {
  return node_.parents[i]->shape;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), requires_grad));
}

Tensor Tensor::ones(std::vector<int> shape, bool requires_grad) {
  return full(std::move(shape), 1.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  auto node = make_leaf(std::move(shape), requires_grad);
  std::fill(node->data.begin(), node->data.end(), value);
  return Tensor(std::move(node));
}

Tensor Tensor::uniform(std::vector<int> shape, double lo, double hi, Rng& rng,
                       bool requires_grad) {
  auto node = make_leaf(std::move(shape), requires_grad);
  for (double& v : node->data) v = rng.uniform(lo, hi);
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
  const std::size_t n = detail::checked_numel(shape);
  if (n != values.size()) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape product " + std::to_string(n));
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const std::vector<int>& Tensor::shape() const {
  if (!node_) throw Error("shape() on undefined tensor");
  return node_->shape;
}

std::size_t Tensor::numel() const {
  if (!node_) throw Error("numel() on undefined tensor");
  return node_->data.size();
}

std::span<const double> Tensor::data() const {
  if (!node_) throw Error("data() on undefined tensor");
  return node_->data;
}

std::span<double> Tensor::raw_data() {
  if (!node_) throw Error("raw_data() on undefined tensor");
  return node_->data;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) throw Error("grad() on undefined tensor");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

void Tensor::accumulate_grad(std::span<const double> g) {
  if (!node_) throw Error("accumulate_grad() on undefined tensor");
  if (g.size() != node_->data.size()) throw ShapeError("gradient size mismatch");
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) node_->grad[i] += g[i];
}

double Tensor::value() const {
  if (numel() != 1) {
    throw ShapeError("value() expects a scalar tensor, numel=" + std::to_string(numel()));
  }
  return node_->data[0];
}

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

Tensor Tensor::make_op(const char* op_name, std::vector<int> shape, std::vector<double> data,
                       std::vector<Tensor> inputs, BackwardFn backward) {
  const std::size_t n = detail::checked_numel(shape);
  if (n != data.size()) throw ShapeError("make_op: data size does not match shape");
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op_name;
  node->leaf = false;

  bool needs_tape = false;
  if (g_grad_enabled) {
    for (const Tensor& in : inputs) {
      if (in.requires_grad()) {
        needs_tape = true;
        break;
      }
    }
  }
  if (needs_tape) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (Tensor& in : inputs) node->parents.push_back(in.node_);
    auto bw = std::move(backward);
    node->backward_fn = [bw = std::move(bw)](detail::TensorNode& self) {
      GradSink sink(self);
      bw(self.grad, sink);
    };
  }
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() expects a scalar loss, numel=" + std::to_string(numel()));
  }
  if (!node_->requires_grad) return;

  // Iterative postorder DFS over parents; each node visited exactly once.
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> seen;
  std::vector<std::pair<detail::TensorNode*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [cur, next] = stack.back();
    if (next < cur->parents.size()) {
      detail::TensorNode* p = cur->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(cur);
      stack.pop_back();
    }
  }

  // Interior gradients are scratch for this pass; leaves keep accumulating.
  for (detail::TensorNode* n : order) {
    if (!n->leaf) n->grad.assign(n->data.size(), 0.0);
  }
  if (node_->grad.empty()) node_->grad.assign(1, 0.0);
  node_->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

namespace {

enum class Broadcast { kNone, kChannel };

Broadcast check_elementwise(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  // Channel duplication: a (n,c,h,w) with b (n,1,h,w).
  if (a.rank() == 4 && b.rank() == 4 && b.dim(1) == 1 && a.dim(0) == b.dim(0) &&
      a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3)) {
    return Broadcast::kChannel;
  }
  throw ShapeError("elementwise shape mismatch");
}

template <typename Fwd, typename Bwd>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  const Broadcast bc = check_elementwise(a, b);
  std::vector<double> out(a.numel());
  const auto ad = a.data();
  const auto bd = b.data();
  if (bc == Broadcast::kNone) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(ad[i], bd[i]);
  } else {
    const std::size_t plane = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
    const int channels = a.dim(1);
    for (int n = 0; n < a.dim(0); ++n) {
      const double* brow = bd.data() + static_cast<std::size_t>(n) * plane;
      for (int c = 0; c < channels; ++c) {
        const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) out[base + i] = fwd(ad[base + i], brow[i]);
      }
    }
  }
  auto shape = a.shape();
  const int channels = a.rank() == 4 ? a.dim(1) : 1;
  const std::size_t plane =
      a.rank() == 4 ? static_cast<std::size_t>(a.dim(2)) * a.dim(3) : a.numel();
  return Tensor::make_op(
      name, shape, std::move(out), {a, b},
      [bc, bwd, channels, plane](std::span<const double> g, GradSink& sink) {
        const auto ad = sink.input_data(0);
        const auto bd = sink.input_data(1);
        if (sink.needs(0)) {
          auto ga = sink.grad(0);
          if (bc == Broadcast::kNone) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += bwd(ad[i], bd[i], g[i]).first;
          } else {
            const std::size_t batches = bd.size() / plane;
            for (std::size_t n = 0; n < batches; ++n) {
              const double* brow = bd.data() + n * plane;
              for (int c = 0; c < channels; ++c) {
                const std::size_t base = (n * channels + c) * plane;
                for (std::size_t i = 0; i < plane; ++i)
                  ga[base + i] += bwd(ad[base + i], brow[i], g[base + i]).first;
              }
            }
          }
        }
        if (sink.needs(1)) {
          auto gb = sink.grad(1);
          if (bc == Broadcast::kNone) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += bwd(ad[i], bd[i], g[i]).second;
          } else {
            const std::size_t batches = bd.size() / plane;
            for (std::size_t n = 0; n < batches; ++n) {
              double* brow = gb.data() + n * plane;
              for (int c = 0; c < channels; ++c) {
                const std::size_t base = (n * channels + c) * plane;
                for (std::size_t i = 0; i < plane; ++i)
                  brow[i] += bwd(ad[base + i], bd[n * plane + i], g[base + i]).second;
              }
            }
          }
        }
      });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g) { return std::pair<double, double>{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g) { return std::pair<double, double>{g, -g}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g) { return std::pair<double, double>{g * y, g * x}; });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  const auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * s;
  return Tensor::make_op("scale", a.shape(), std::move(out), {a},
                         [s](std::span<const double> g, GradSink& sink) {
                           if (!sink.needs(0)) return;
                           auto ga = sink.grad(0);
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
                         });
}

Tensor reciprocal_safe(const Tensor& a, double eps) {
  if (eps <= 0) throw Error("reciprocal_safe: eps must be positive");
  std::vector<double> out(a.numel());
  const auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = ad[i];
    const double floored = std::abs(x) < eps ? (std::signbit(x) ? -eps : eps) : x;
    out[i] = 1.0 / floored;
  }
  return Tensor::make_op("reciprocal_safe", a.shape(), std::move(out), {a},
                         [eps](std::span<const double> g, GradSink& sink) {
                           if (!sink.needs(0)) return;
                           const auto ad = sink.input_data(0);
                           auto ga = sink.grad(0);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             const double x = ad[i];
                             if (std::abs(x) < eps) continue;  // clamped region is flat
                             ga[i] += -g[i] / (x * x);
                           }
                         });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return Tensor::make_op("sum", {1}, {acc}, {a},
                         [](std::span<const double> g, GradSink& sink) {
                           if (!sink.needs(0)) return;
                           auto ga = sink.grad(0);
                           for (double& v : ga) v += g[0];
                         });
}

}  // namespace hpcf
