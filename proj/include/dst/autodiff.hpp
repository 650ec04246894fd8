// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense reverse-mode automatic differentiation over row-major f64
// tensors. A Tensor is a shared handle to a graph node; operations build the
// graph eagerly and backward() walks it in reverse topological order.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dst::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;        // backward already ran through this root
  std::uint64_t grad_epoch = 0;  // backward call that last wrote a leaf grad
  std::string name;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  /// Size of axis `axis`; negative values count from the back.
  std::size_t dim(int axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable values; only allowed on leaf tensors (parameters, inputs).
  std::span<double> mutable_data();
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  const std::string& name() const;
  Tensor& set_name(std::string name);

  /// Same values, no history.
  Tensor detach() const;
  std::vector<double> to_vector() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Topologically ordered record of the nodes reachable from a root.
class Tape {
 public:
  explicit Tape(const Tensor& root);
  const std::vector<detail::Node*>& nodes() const { return order_; }
  std::size_t size() const { return order_.size(); }

 private:
  std::vector<detail::Node*> order_;
};

/// Populates grads of every requires_grad leaf reachable from the scalar
/// `loss`, then releases the intermediate graph. Throws if `loss` is not a
/// scalar, was already back-propagated, or a leaf still holds a gradient
/// from an earlier backward call that was never zeroed.
void backward(const Tensor& loss);

/// Disables graph recording in the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k]x[k,n]
Tensor bmm(const Tensor& a, const Tensor& b);     // [B,m,k]x[B,k,n]
Tensor transpose(const Tensor& a);                // 2-D
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& a, Shape shape);

// Elementwise with broadcasting between equal-rank operands whose dims
// either match or are 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor sum(const Tensor& a);   // scalar
Tensor mean(const Tensor& a);  // scalar
Tensor sum_last(const Tensor& a);  // reduces last axis, keeps it as size 1

Tensor concat(const std::vector<Tensor>& parts);  // along last axis
Tensor slice(const Tensor& a, std::size_t begin, std::size_t end);  // last axis
/// Rows of a 2-D table selected by index: [V,d] -> [ids.size(), d].
Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids);

Tensor softmax(const Tensor& a, int axis = -1);
Tensor log_softmax(const Tensor& a, int axis = -1);
Tensor leaky_relu(const Tensor& a, double alpha);
Tensor relu(const Tensor& a);
Tensor elu(const Tensor& a, double alpha = 1.0);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor pow(const Tensor& a, double exponent);

/// Normalizes over the last axis, then applies gamma/beta of shape [d].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// Replaces positions where mask != 0 by `value`; mask broadcasts like add().
Tensor masked_fill(const Tensor& a, const std::vector<std::uint8_t>& mask, const Shape& mask_shape,
                   double value);

/// One GRU state update from the input and hidden projections (both [B,3h],
/// gate order reset|update|candidate) and the state [B,h]. Rows whose
/// `active` entry is 0 keep their state; an empty `active` means all rows.
Tensor gru_update(const Tensor& x_proj, const Tensor& h_proj, const Tensor& state,
                  std::span<const double> active = {});

Tensor mse_loss(const Tensor& prediction, const Tensor& target);
/// Mean negative log-likelihood of `labels` under softmax(logits), logits [B,C].
Tensor cross_entropy_loss(const Tensor& logits, std::span<const std::size_t> labels);

}  // namespace dst::ad
