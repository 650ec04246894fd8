// SPDX-License-Identifier: Apache-2.0

#include "dst/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "dst/errors.hpp"

namespace dst::ad {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_backward_epoch{0};

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const std::string& why) {
  throw ShapeError(std::string(op) + ": " + why + " (got " + shape_str(a) + ")");
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

// Builds the output node. History is kept only when recording is on and some
// input is tracked.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<NodePtr> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->leaf = false;
  bool track = g_grad_enabled &&
               std::any_of(inputs.begin(), inputs.end(),
                           [](const NodePtr& n) { return n && n->requires_grad; });
  if (track) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

std::size_t norm_axis(int axis, std::size_t rank, const char* op) {
  int r = static_cast<int>(rank);
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError(std::string(op) + ": axis out of range");
  return static_cast<std::size_t>(a);
}

// ---- broadcasting ----------------------------------------------------------

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;  // 0 on broadcast axes
  bool same = false;
};

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

Broadcast broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  if (a.size() != b.size()) shape_fail(op, a, b);
  bc.out.resize(a.size());
  auto sa = contiguous_strides(a), sb = contiguous_strides(b);
  bc.stride_a.resize(a.size());
  bc.stride_b.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) {
      bc.out[i] = a[i];
    } else if (a[i] == 1) {
      bc.out[i] = b[i];
    } else if (b[i] == 1) {
      bc.out[i] = a[i];
    } else {
      shape_fail(op, a, b);
    }
    bc.stride_a[i] = a[i] == 1 ? 0 : sa[i];
    bc.stride_b[i] = b[i] == 1 ? 0 : sb[i];
  }
  return bc;
}

// Calls f(out_index, a_index, b_index) over the broadcast output.
template <typename F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  std::size_t n = numel(bc.out);
  if (bc.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  std::size_t rank = bc.out.size();
  // Trailing-row broadcast of one operand, the bias pattern.
  std::size_t last = rank ? bc.out[rank - 1] : 1;
  bool row_a = rank >= 1 && bc.stride_a[rank - 1] == 1 && bc.stride_b[rank - 1] == 1;
  bool b_row = row_a, a_row = row_a;
  for (std::size_t d = 0; d + 1 < rank; ++d) {
    b_row = b_row && bc.stride_b[d] == 0 && bc.stride_a[d] != 0;
    a_row = a_row && bc.stride_a[d] == 0 && bc.stride_b[d] != 0;
  }
  if (b_row || a_row) {
    for (std::size_t o = 0; o < n; ++o) {
      std::size_t col = o % last;
      f(o, a_row ? col : o, b_row ? col : o);
    }
    return;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < bc.out[d]) {
        ia += bc.stride_a[d];
        ib += bc.stride_b[d];
        break;
      }
      ia -= bc.stride_a[d] * (bc.out[d] - 1);
      ib -= bc.stride_b[d] * (bc.out[d] - 1);
      idx[d] = 0;
    }
  }
}

template <typename Fwd, typename Bwd>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  require_defined(a, op);
  require_defined(b, op);
  auto bc = broadcast_shapes(a.shape(), b.shape(), op);
  const auto& va = a.node()->value;
  const auto& vb = b.node()->value;
  std::vector<double> out(numel(bc.out));
  for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = fwd(va[i], vb[j]); });
  NodePtr na = a.node_ptr(), nb = b.node_ptr();
  return make_result(bc.out, std::move(out), {na, nb}, [na, nb, bc, bwd](Node& self) {
    bool ga = na->requires_grad, gb = nb->requires_grad;
    if (ga) na->ensure_grad();
    if (gb) nb->ensure_grad();
    for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) {
      double da = 0.0, db = 0.0;
      bwd(na->value[i], nb->value[j], self.value[o], self.grad[o], da, db);
      if (ga) na->grad[i] += da;
      if (gb) nb->grad[j] += db;
    });
  });
}

// dfdx receives (x, y) and returns dy/dx.
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Deriv dfdx) {
  require_defined(a, op);
  const auto& va = a.node()->value;
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = fwd(va[i]);
  NodePtr na = a.node_ptr();
  return make_result(a.shape(), std::move(out), {na}, [na, dfdx](Node& self) {
    na->ensure_grad();
    for (std::size_t i = 0; i < self.value.size(); ++i)
      na->grad[i] += self.grad[i] * dfdx(na->value[i], self.value[i]);
  });
}

// Splits a shape around `axis` into (outer, n, inner) for axis-wise reductions.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};
AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit sp;
  for (std::size_t i = 0; i < axis; ++i) sp.outer *= s[i];
  sp.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = ad::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != ad::numel(shape))
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("shape() of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(int axis) const {
  return shape()[norm_axis(axis, rank(), "dim")];
}

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::data() const { return node_->value; }

std::span<double> Tensor::mutable_data() {
  if (!node_->leaf) throw std::logic_error("mutable_data() on a non-leaf tensor");
  return node_->value;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

std::span<const double> Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->grad.clear();
  node_->grad_epoch = 0;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!node_->leaf) throw std::logic_error("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = flag;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item(): tensor is not a scalar " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("at(): index rank mismatch");
  std::size_t off = 0, d = 0;
  for (std::size_t i : index) {
    if (i >= s[d]) throw std::out_of_range("at(): index out of range");
    off = off * s[d] + i;
    ++d;
  }
  return node_->value[off];
}

const std::string& Tensor::name() const { return node_->name; }

Tensor& Tensor::set_name(std::string name) {
  node_->name = std::move(name);
  return *this;
}

Tensor Tensor::detach() const { return from(shape(), node_->value); }

std::vector<double> Tensor::to_vector() const { return node_->value; }

// ---- tape / backward -------------------------------------------------------

Tape::Tape(const Tensor& root) {
  require_defined(root, "Tape");
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  Node* r = root.node();
  if (!r->requires_grad) return;
  stack.push_back({r, 0});
  visited.insert(r);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->consumed && !node->leaf)
      throw std::logic_error("backward: graph was already released by an earlier backward call");
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.push_back({child, 0});
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.numel() != 1)
    throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  Node* root = loss.node();
  if (root->consumed) throw std::logic_error("backward: called twice on the same loss");
  if (!root->requires_grad) throw std::logic_error("backward: loss does not depend on any tracked tensor");
  Tape tape(loss);
  std::uint64_t epoch = ++g_backward_epoch;
  for (Node* n : tape.nodes()) {
    if (!n->leaf) continue;
    if (n->grad_epoch != 0 && n->grad_epoch != epoch && n->grad.size() == n->value.size())
      throw std::logic_error("backward: gradient of '" + n->name +
                             "' already populated; call zero_grad() before another backward");
    n->grad.assign(n->value.size(), 0.0);
    n->grad_epoch = epoch;
  }
  root->ensure_grad();
  root->grad[0] = 1.0;
  const auto& order = tape.nodes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->leaf || !n->backward) continue;
    n->ensure_grad();
    n->backward(*n);
  }
  for (Node* n : order) {
    if (n->leaf) continue;
    n->inputs.clear();
    n->backward = nullptr;
    std::vector<double>().swap(n->grad);
    n->consumed = true;
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_fail("matmul", a.shape(), b.shape());
  std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  NodePtr na = a.node_ptr(), nb = b.node_ptr();
  return make_result({m, n}, std::move(out), {na, nb}, [na, nb, m, k, n](Node& self) {
    ConstMap g(self.grad.data(), m, n);
    if (na->requires_grad) {
      na->ensure_grad();
      MutMap(na->grad.data(), m, k).noalias() += g * ConstMap(nb->value.data(), k, n).transpose();
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      MutMap(nb->grad.data(), k, n).noalias() += ConstMap(na->value.data(), m, k).transpose() * g;
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require_defined(a, "bmm");
  require_defined(b, "bmm");
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    shape_fail("bmm", a.shape(), b.shape());
  std::size_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(bs * m * n);
  for (std::size_t i = 0; i < bs; ++i)
    MutMap(out.data() + i * m * n, m, n).noalias() =
        ConstMap(a.data().data() + i * m * k, m, k) * ConstMap(b.data().data() + i * k * n, k, n);
  NodePtr na = a.node_ptr(), nb = b.node_ptr();
  return make_result({bs, m, n}, std::move(out), {na, nb}, [na, nb, bs, m, k, n](Node& self) {
    if (na->requires_grad) na->ensure_grad();
    if (nb->requires_grad) nb->ensure_grad();
    for (std::size_t i = 0; i < bs; ++i) {
      ConstMap g(self.grad.data() + i * m * n, m, n);
      if (na->requires_grad)
        MutMap(na->grad.data() + i * m * k, m, k).noalias() +=
            g * ConstMap(nb->value.data() + i * k * n, k, n).transpose();
      if (nb->requires_grad)
        MutMap(nb->grad.data() + i * k * n, k, n).noalias() +=
            ConstMap(na->value.data() + i * m * k, m, k).transpose() * g;
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  if (a.rank() != 2) shape_fail("transpose", a.shape(), "expected rank 2");
  return permute(a, {1, 0});
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  require_defined(a, "permute");
  const Shape& in = a.shape();
  std::size_t rank = in.size();
  if (axes.size() != rank) shape_fail("permute", in, "axis count does not match rank");
  std::vector<bool> seen(rank, false);
  for (auto ax : axes) {
    if (ax >= rank || seen[ax]) shape_fail("permute", in, "axes are not a permutation");
    seen[ax] = true;
  }
  Shape out_shape(rank);
  auto in_strides = contiguous_strides(in);
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in[axes[i]];
    src_stride[i] = in_strides[axes[i]];
  }
  std::size_t n = numel(out_shape);
  // map[o] = source offset of output element o
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; ++o) {
    map[o] = src;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out_shape[d]) {
        src += src_stride[d];
        break;
      }
      src -= src_stride[d] * (out_shape[d] - 1);
      idx[d] = 0;
    }
  }
  const auto& va = a.node()->value;
  std::vector<double> out(n);
  for (std::size_t o = 0; o < n; ++o) out[o] = va[map[o]];
  NodePtr na = a.node_ptr();
  auto shared_map = std::make_shared<std::vector<std::size_t>>(std::move(map));
  return make_result(out_shape, std::move(out), {na}, [na, shared_map](Node& self) {
    na->ensure_grad();
    const auto& mp = *shared_map;
    for (std::size_t o = 0; o < mp.size(); ++o) na->grad[mp[o]] += self.grad[o];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  if (numel(shape) != a.numel()) shape_fail("reshape", a.shape(), shape);
  NodePtr na = a.node_ptr();
  return make_result(std::move(shape), na->value, {na}, [na](Node& self) {
    na->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) na->grad[i] += self.grad[i];
  });
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double x, double y, double, double g, double& da, double& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, "scale", [factor](double x) { return x * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(a, "add_scalar", [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor leaky_relu(const Tensor& a, double alpha) {
  return unary(a, "leaky_relu", [alpha](double x) { return x > 0 ? x : alpha * x; },
               [alpha](double x, double) { return x > 0 ? 1.0 : alpha; });
}

Tensor relu(const Tensor& a) {
  return unary(a, "relu", [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor elu(const Tensor& a, double alpha) {
  return unary(a, "elu", [alpha](double x) { return x > 0 ? x : alpha * std::expm1(x); },
               [alpha](double x, double y) { return x > 0 ? 1.0 : y + alpha; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor pow(const Tensor& a, double exponent) {
  return unary(a, "pow", [exponent](double x) { return std::pow(x, exponent); },
               [exponent](double x, double) { return exponent * std::pow(x, exponent - 1.0); });
}

// ---- reductions / structure ------------------------------------------------

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  const auto& va = a.node()->value;
  double s = std::accumulate(va.begin(), va.end(), 0.0);
  NodePtr na = a.node_ptr();
  return make_result({1}, {s}, {na}, [na](Node& self) {
    na->ensure_grad();
    for (auto& g : na->grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  require_defined(a, "mean");
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_last(const Tensor& a) {
  require_defined(a, "sum_last");
  Shape out_shape = a.shape();
  std::size_t d = out_shape.back();
  std::size_t rows = a.numel() / std::max<std::size_t>(d, 1);
  out_shape.back() = 1;
  const auto& va = a.node()->value;
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r] += va[r * d + j];
  NodePtr na = a.node_ptr();
  return make_result(out_shape, std::move(out), {na}, [na, rows, d](Node& self) {
    na->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d; ++j) na->grad[r * d + j] += self.grad[r];
  });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  for (const auto& p : parts) require_defined(p, "concat");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::size_t rows = numel(lead);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape l = p.shape();
    l.pop_back();
    if (l != lead) shape_fail("concat", parts[0].shape(), p.shape());
    widths.push_back(p.shape().back());
    total += widths.back();
  }
  std::vector<double> out(rows * total);
  std::size_t off = 0;
  std::vector<NodePtr> inputs;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].node()->value;
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.begin() + r * widths[k], widths[k], out.begin() + r * total + off);
    off += widths[k];
    inputs.push_back(parts[k].node_ptr());
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  auto ins = inputs;
  return make_result(out_shape, std::move(out), std::move(inputs), [ins, widths, rows, total](Node& self) {
    std::size_t o = 0;
    for (std::size_t k = 0; k < ins.size(); ++k) {
      if (ins[k]->requires_grad) {
        ins[k]->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[k]; ++j)
            ins[k]->grad[r * widths[k] + j] += self.grad[r * total + o + j];
      }
      o += widths[k];
    }
  });
}

Tensor slice(const Tensor& a, std::size_t begin, std::size_t end) {
  require_defined(a, "slice");
  std::size_t d = a.shape().back();
  if (begin >= end || end > d)
    shape_fail("slice", a.shape(), "range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid");
  std::size_t w = end - begin, rows = a.numel() / d;
  Shape out_shape = a.shape();
  out_shape.back() = w;
  const auto& va = a.node()->value;
  std::vector<double> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(va.begin() + r * d + begin, w, out.begin() + r * w);
  NodePtr na = a.node_ptr();
  return make_result(out_shape, std::move(out), {na}, [na, rows, d, w, begin](Node& self) {
    na->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) na->grad[r * d + begin + j] += self.grad[r * w + j];
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids) {
  require_defined(table, "embedding_lookup");
  if (table.rank() != 2) shape_fail("embedding_lookup", table.shape(), "table must be rank 2");
  std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  std::vector<double> out(idv.size() * d);
  const auto& vt = table.node()->value;
  for (std::size_t r = 0; r < idv.size(); ++r) {
    if (idv[r] >= vocab)
      throw std::out_of_range("embedding_lookup: index " + std::to_string(idv[r]) +
                              " outside vocabulary of size " + std::to_string(vocab));
    std::copy_n(vt.begin() + idv[r] * d, d, out.begin() + r * d);
  }
  NodePtr nt = table.node_ptr();
  return make_result({idv.size(), d}, std::move(out), {nt}, [nt, idv, d](Node& self) {
    nt->ensure_grad();
    for (std::size_t r = 0; r < idv.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) nt->grad[idv[r] * d + j] += self.grad[r * d + j];
  });
}

// ---- normalizations --------------------------------------------------------

Tensor softmax(const Tensor& a, int axis) {
  require_defined(a, "softmax");
  auto sp = split_axis(a.shape(), norm_axis(axis, a.rank(), "softmax"));
  const auto& va = a.node()->value;
  std::vector<double> out(va.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      std::size_t base = o * sp.n * sp.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.n; ++k) mx = std::max(mx, va[base + k * sp.inner]);
      double s = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) {
        double e = std::exp(va[base + k * sp.inner] - mx);
        out[base + k * sp.inner] = e;
        s += e;
      }
      for (std::size_t k = 0; k < sp.n; ++k) out[base + k * sp.inner] /= s;
    }
  NodePtr na = a.node_ptr();
  return make_result(a.shape(), std::move(out), {na}, [na, sp](Node& self) {
    na->ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t in = 0; in < sp.inner; ++in) {
        std::size_t base = o * sp.n * sp.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < sp.n; ++k) {
          std::size_t i = base + k * sp.inner;
          dot += self.grad[i] * self.value[i];
        }
        for (std::size_t k = 0; k < sp.n; ++k) {
          std::size_t i = base + k * sp.inner;
          na->grad[i] += self.value[i] * (self.grad[i] - dot);
        }
      }
  });
}

Tensor log_softmax(const Tensor& a, int axis) {
  require_defined(a, "log_softmax");
  auto sp = split_axis(a.shape(), norm_axis(axis, a.rank(), "log_softmax"));
  const auto& va = a.node()->value;
  std::vector<double> out(va.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      std::size_t base = o * sp.n * sp.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.n; ++k) mx = std::max(mx, va[base + k * sp.inner]);
      double s = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) s += std::exp(va[base + k * sp.inner] - mx);
      double lse = mx + std::log(s);
      for (std::size_t k = 0; k < sp.n; ++k) out[base + k * sp.inner] = va[base + k * sp.inner] - lse;
    }
  NodePtr na = a.node_ptr();
  return make_result(a.shape(), std::move(out), {na}, [na, sp](Node& self) {
    na->ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t in = 0; in < sp.inner; ++in) {
        std::size_t base = o * sp.n * sp.inner + in;
        double gs = 0.0;
        for (std::size_t k = 0; k < sp.n; ++k) gs += self.grad[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.n; ++k) {
          std::size_t i = base + k * sp.inner;
          na->grad[i] += self.grad[i] - std::exp(self.value[i]) * gs;
        }
      }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined(x, "layer_norm");
  std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) shape_fail("layer_norm", x.shape(), gamma.shape());
  std::size_t rows = x.numel() / d;
  const auto& vx = x.node()->value;
  const auto& vg = gamma.node()->value;
  const auto& vb = beta.node()->value;
  std::vector<double> out(vx.size()), xhat(vx.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += vx[r * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double c = vx[r * d + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      std::size_t i = r * d + j;
      xhat[i] = (vx[i] - mu) * inv_std[r];
      out[i] = vg[j] * xhat[i] + vb[j];
    }
  }
  NodePtr nx = x.node_ptr(), ng = gamma.node_ptr(), nb = beta.node_ptr();
  return make_result(x.shape(), std::move(out), {nx, ng, nb},
                     [nx, ng, nb, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](Node& self) {
                       if (ng->requires_grad) ng->ensure_grad();
                       if (nb->requires_grad) nb->ensure_grad();
                       if (nx->requires_grad) nx->ensure_grad();
                       double dd = static_cast<double>(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double m1 = 0.0, m2 = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           std::size_t i = r * d + j;
                           double g = self.grad[i];
                           if (ng->requires_grad) ng->grad[j] += g * xhat[i];
                           if (nb->requires_grad) nb->grad[j] += g;
                           double gh = g * ng->value[j];
                           m1 += gh;
                           m2 += gh * xhat[i];
                         }
                         if (!nx->requires_grad) continue;
                         m1 /= dd;
                         m2 /= dd;
                         for (std::size_t j = 0; j < d; ++j) {
                           std::size_t i = r * d + j;
                           double gh = self.grad[i] * ng->value[j];
                           nx->grad[i] += inv_std[r] * (gh - m1 - xhat[i] * m2);
                         }
                       }
                     });
}

Tensor masked_fill(const Tensor& a, const std::vector<std::uint8_t>& mask, const Shape& mask_shape,
                   double value) {
  require_defined(a, "masked_fill");
  if (mask.size() != numel(mask_shape)) shape_fail("masked_fill", mask_shape, "mask size mismatch");
  auto bc = broadcast_shapes(a.shape(), mask_shape, "masked_fill");
  if (bc.out != a.shape()) shape_fail("masked_fill", a.shape(), mask_shape);
  const auto& va = a.node()->value;
  std::vector<double> out(va.size());
  std::vector<std::uint8_t> keep(va.size());
  for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) {
    keep[o] = mask[j] ? 0 : 1;
    out[o] = keep[o] ? va[i] : value;
  });
  NodePtr na = a.node_ptr();
  return make_result(a.shape(), std::move(out), {na}, [na, keep = std::move(keep)](Node& self) {
    na->ensure_grad();
    for (std::size_t i = 0; i < keep.size(); ++i)
      if (keep[i]) na->grad[i] += self.grad[i];
  });
}

Tensor gru_update(const Tensor& x_proj, const Tensor& h_proj, const Tensor& state, std::span<const double> active) {
  require_defined(x_proj, "gru_update");
  require_defined(h_proj, "gru_update");
  require_defined(state, "gru_update");
  if (state.rank() != 2) shape_fail("gru_update", state.shape(), "state must be rank 2");
  const std::size_t b = state.dim(0), h = state.dim(1);
  const Shape proj{b, 3 * h};
  if (x_proj.shape() != proj) shape_fail("gru_update", x_proj.shape(), state.shape());
  if (h_proj.shape() != proj) shape_fail("gru_update", h_proj.shape(), state.shape());
  if (!active.empty() && active.size() != b)
    shape_fail("gru_update", state.shape(), "active mask has " + std::to_string(active.size()) + " rows");
  std::vector<double> mask(active.begin(), active.end());
  if (mask.empty()) mask.assign(b, 1.0);
  const auto& vx = x_proj.node()->value;
  const auto& vh = h_proj.node()->value;
  const auto& vs = state.node()->value;
  auto sig = [](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
  };
  // gates holds r, z, n per row for the backward pass.
  std::vector<double> gates(b * 3 * h), out(b * h);
  for (std::size_t i = 0; i < b; ++i) {
    const double* x = vx.data() + i * 3 * h;
    const double* u = vh.data() + i * 3 * h;
    double* g = gates.data() + i * 3 * h;
    for (std::size_t j = 0; j < h; ++j) {
      double r = sig(x[j] + u[j]);
      double z = sig(x[h + j] + u[h + j]);
      double n = std::tanh(x[2 * h + j] + r * u[2 * h + j]);
      g[j] = r;
      g[h + j] = z;
      g[2 * h + j] = n;
      double s = vs[i * h + j];
      double next = n + z * (s - n);
      out[i * h + j] = s + mask[i] * (next - s);
    }
  }
  NodePtr nx = x_proj.node_ptr(), nh = h_proj.node_ptr(), ns = state.node_ptr();
  return make_result(state.shape(), std::move(out), {nx, nh, ns},
                     [nx, nh, ns, b, h, mask = std::move(mask), gates = std::move(gates)](Node& self) {
    if (nx->requires_grad) nx->ensure_grad();
    if (nh->requires_grad) nh->ensure_grad();
    if (ns->requires_grad) ns->ensure_grad();
    for (std::size_t i = 0; i < b; ++i) {
      const double* g = gates.data() + i * 3 * h;
      const double* u = nh->value.data() + i * 3 * h;
      for (std::size_t j = 0; j < h; ++j) {
        double go = self.grad[i * h + j];
        double r = g[j], z = g[h + j], n = g[2 * h + j];
        double s = ns->value[i * h + j];
        double gn = go * mask[i];
        double dz = gn * (s - n) * z * (1.0 - z);
        double dn = gn * (1.0 - z) * (1.0 - n * n);
        double dr = dn * u[2 * h + j] * r * (1.0 - r);
        if (nx->requires_grad) {
          double* dx = nx->grad.data() + i * 3 * h;
          dx[j] += dr;
          dx[h + j] += dz;
          dx[2 * h + j] += dn;
        }
        if (nh->requires_grad) {
          double* du = nh->grad.data() + i * 3 * h;
          du[j] += dr;
          du[h + j] += dz;
          du[2 * h + j] += dn * r;
        }
        if (ns->requires_grad) ns->grad[i * h + j] += go * (1.0 - mask[i]) + gn * z;
      }
    }
  });
}

// ---- losses -----------------------------------------------------------------

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  require_defined(prediction, "mse_loss");
  require_defined(target, "mse_loss");
  if (prediction.shape() != target.shape()) shape_fail("mse_loss", prediction.shape(), target.shape());
  if (prediction.numel() == 0) throw ShapeError("mse_loss: empty input");
  const auto& vp = prediction.node()->value;
  const auto& vt = target.node()->value;
  double s = 0.0;
  for (std::size_t i = 0; i < vp.size(); ++i) s += (vp[i] - vt[i]) * (vp[i] - vt[i]);
  double n = static_cast<double>(vp.size());
  NodePtr np = prediction.node_ptr(), nt = target.node_ptr();
  return make_result({1}, {s / n}, {np, nt}, [np, nt, n](Node& self) {
    double g = self.grad[0] * 2.0 / n;
    if (np->requires_grad) np->ensure_grad();
    if (nt->requires_grad) nt->ensure_grad();
    for (std::size_t i = 0; i < np->value.size(); ++i) {
      double diff = np->value[i] - nt->value[i];
      if (np->requires_grad) np->grad[i] += g * diff;
      if (nt->requires_grad) nt->grad[i] -= g * diff;
    }
  });
}

Tensor cross_entropy_loss(const Tensor& logits, std::span<const std::size_t> labels) {
  require_defined(logits, "cross_entropy_loss");
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    shape_fail("cross_entropy_loss", logits.shape(), "expected [batch, classes] matching labels");
  if (labels.empty()) throw ShapeError("cross_entropy_loss: empty batch");
  std::size_t b = logits.dim(0), c = logits.dim(1);
  const auto& vl = logits.node()->value;
  std::vector<double> prob(b * c);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    if (lab[r] >= c) throw std::out_of_range("cross_entropy_loss: label outside class range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, vl[r * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(vl[r * c + j] - mx);
    double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) prob[r * c + j] = std::exp(vl[r * c + j] - lse);
    loss += lse - vl[r * c + lab[r]];
  }
  double bd = static_cast<double>(b);
  NodePtr nl = logits.node_ptr();
  return make_result({1}, {loss / bd}, {nl},
                     [nl, prob = std::move(prob), lab = std::move(lab), b, c, bd](Node& self) {
                       nl->ensure_grad();
                       double g = self.grad[0] / bd;
                       for (std::size_t r = 0; r < b; ++r)
                         for (std::size_t j = 0; j < c; ++j)
                           nl->grad[r * c + j] += g * (prob[r * c + j] - (j == lab[r] ? 1.0 : 0.0));
                     });
}

}  // namespace dst::ad
