#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hpcf/errors.hpp"
#include "hpcf/rng.hpp"

namespace hpcf {

class Tensor;

namespace detail {

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> data;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<double> grad;  // persists on leaves, per-pass scratch on interior nodes
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;
  const char* op = "leaf";
};

std::size_t checked_numel(std::span<const int> shape);

}  // namespace detail

/// Accumulation interface handed to backward rules. `grad(i)` returns the
/// i-th input's gradient buffer (lazily zero-initialized); call it only when
/// `needs(i)` is true.
class GradSink {
 public:
  explicit GradSink(detail::TensorNode& node) : node_(node) {}
  std::size_t inputs() const { return node_.parents.size(); }
  bool needs(std::size_t i) const;
  std::span<double> grad(std::size_t i);
  std::span<const double> input_data(std::size_t i) const;
  const std::vector<int>& input_shape(std::size_t i) const;

 private:
  detail::TensorNode& node_;
};

using BackwardFn = std::function<void(std::span<const double> grad_out, GradSink& sink)>;

/// Dense row-major tensor of doubles with an optional reverse-mode tape.
///
/// Layout is (batch, channels, height, width) for rank-4 tensors. Values are
/// immutable once produced by an operation; `raw_data()` exists for leaf
/// initialization and optimizer updates only. Gradients of leaves accumulate
/// additively across backward passes until `zero_grad()`.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor ones(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  /// Seeded uniform fill in [lo, hi); bit-reproducible from the stream state.
  static Tensor uniform(std::vector<int> shape, double lo, double hi, Rng& rng,
                        bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int i) const { return shape().at(static_cast<std::size_t>(i)); }
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Mutable storage; valid on leaves (initialization, SGD updates).
  std::span<double> raw_data();

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();
  void accumulate_grad(std::span<const double> g);

  /// Scalar convenience accessor; throws ShapeError unless numel() == 1.
  double value() const;

  /// Reverse-mode sweep from this scalar. Interior gradients are per-call;
  /// leaf gradients accumulate. Throws ShapeError if numel() != 1.
  void backward() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  /// Builds an op-result tensor. The tape edge is recorded only when grads
  /// are enabled and some input requires them; otherwise the result is a
  /// constant. Public so tests can register custom (or deliberately wrong)
  /// backward rules.
  static Tensor make_op(const char* op_name, std::vector<int> shape, std::vector<double> data,
                        std::vector<Tensor> inputs, BackwardFn backward);

  const char* op_name() const;

 private:
  friend class GradSink;
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;
};

/// RAII guard that disables tape recording (forward-only evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Elementwise arithmetic. Shapes must match, except that `b` may broadcast
// over channels: a rank-4 (n,1,h,w) mask applies to every channel of `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// 1/x with |x| floored at eps (sign preserved; x == 0 counts as positive).
Tensor reciprocal_safe(const Tensor& a, double eps = 1e-12);
/// Sum of all elements, as a scalar tensor.
Tensor sum(const Tensor& a);

}  // namespace hpcf
