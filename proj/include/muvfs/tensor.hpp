#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// Every op returns a new Tensor. When gradient recording is enabled and any
// input requires grad, the result keeps references to its inputs plus a
// backward closure; the closure is itself written in terms of Tensor ops, so
// running it with recording enabled yields a differentiable gradient
// (double backprop). Ops whose closures work on raw buffers are flagged as
// not double-differentiable and rejected by grad(..., create_graph = true).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace muvfs {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Tensor;

namespace detail {

using BackwardFn = std::function<std::vector<Tensor>(const Tensor& out, const Tensor& grad)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::string_view op = "leaf";
  bool double_differentiable = true;
  std::uint64_t seq = 0;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, double stddev, Rng& rng, bool requires_grad = false);
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writable view; only legal on leaves (graph outputs are immutable).
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double operator[](std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  Tensor& requires_grad_(bool value = true);
  bool is_leaf() const;
  std::string_view op_name() const;

  // New leaf holding a copy of the values, cut from any graph.
  Tensor detach() const;

  const detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op_result(std::string_view op, Shape shape, std::vector<double> data,
                               std::vector<Tensor> inputs, detail::BackwardFn backward,
                               bool double_differentiable);
};

// Internal constructor used by op implementations. Checks finiteness and
// records the node when recording is on and an input requires grad.
Tensor make_op_result(std::string_view op, Shape shape, std::vector<double> data,
                      std::vector<Tensor> inputs, detail::BackwardFn backward,
                      bool double_differentiable = true);

// --- gradient recording mode (thread local) --------------------------------

bool grad_enabled();

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

class NoGradGuard : public GradModeGuard {
 public:
  NoGradGuard() : GradModeGuard(false) {}
};

// --- elementwise (numpy broadcasting) ---------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator*(const Tensor& x, double s) { return scale(x, s); }
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }

Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor clamp_min(const Tensor& x, double floor);

// --- shape ------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);  // 2-D only
Tensor broadcast_to(const Tensor& x, const Shape& shape);
// Sums broadcast dimensions away so the result has `shape`.
Tensor sum_to(const Tensor& x, const Shape& shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
// Gathers rows (first axis) of x.
Tensor index_rows(const Tensor& x, std::span<const std::size_t> rows);

// --- contraction / reduction -----------------------------------------------

// op(a) * op(b) for 2-D operands, op = transpose when the flag is set.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// --- normalization / probability -------------------------------------------

Tensor softmax(const Tensor& x);      // over last axis, log-sum-exp stabilized
Tensor log_softmax(const Tensor& x);  // over last axis
Tensor row_norm(const Tensor& x);     // euclidean norm over last axis, keepdim
// x / max(||x||, eps) over the last axis.
Tensor l2_normalize(const Tensor& x, double eps = 1e-9);
// Cosine similarity of matching rows (last axis) -> shape without last axis.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);
// Pairwise cosine similarities of rows: (n x d), (m x d) -> (n x m).
Tensor cosine_similarity_matrix(const Tensor& a, const Tensor& b);
// Mean over rows of -log softmax(logits)[row, label]. logits: (n x c).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
Tensor one_hot(std::span<const int> labels, std::size_t classes);

// --- gradients --------------------------------------------------------------

struct GradOptions {
  bool create_graph = false;
};

// d(loss)/d(wrt[i]) for every requested tensor; tensors the loss does not
// depend on receive zeros of their own shape. With create_graph the results
// are themselves differentiable graph outputs.
std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> wrt, GradOptions options = {});
inline std::vector<Tensor> grad(const Tensor& loss, std::initializer_list<Tensor> wrt,
                                GradOptions options = {}) {
  return grad(loss, std::span<const Tensor>(wrt.begin(), wrt.size()), options);
}

// Number of nodes reachable from `root` (graph bookkeeping, used in tests).
std::size_t graph_size(const Tensor& root);

}  // namespace muvfs
