#include "muvfs/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace muvfs {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};
thread_local bool t_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_fail(std::string_view op, const Shape& a, const Shape& b, std::string_view what = {}) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << shape_str(a) << " and " << shape_str(b);
  if (!what.empty()) os << " (" << what << ")";
  throw ShapeError(os.str());
}

void require_defined(std::string_view op, const Tensor& t) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

Shape broadcast_shape(std::string_view op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) shape_fail(op, a, b, "not broadcastable");
    out[i] = da == 1 ? db : da;
  }
  return out;
}

// Strides of `src` laid against `out` (right-aligned), zero on broadcast axes.
std::vector<std::size_t> aligned_strides(const Shape& src, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < src.size(); ++k) {
    const std::size_t si = src.size() - 1 - k;
    const std::size_t oi = out.size() - 1 - k;
    strides[oi] = src[si] == 1 ? 0 : stride;
    stride *= src[si];
  }
  return strides;
}

// Visits every index of `out` with the matching offsets into two strided
// operands: f(flat_out, offset_a, offset_b).
template <class F>
void iterate2(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t total = shape_numel(out);
  if (total == 0) return;
  if (out.empty()) {
    f(0, 0, 0);
    return;
  }
  const std::size_t rank = out.size();
  const std::size_t inner = out[rank - 1];
  const std::size_t ia = sa[rank - 1];
  const std::size_t ib = sb[rank - 1];
  std::vector<std::size_t> counter(rank, 0);
  std::size_t oa = 0;
  std::size_t ob = 0;
  std::size_t flat = 0;
  while (flat < total) {
    for (std::size_t j = 0; j < inner; ++j) f(flat + j, oa + j * ia, ob + j * ib);
    flat += inner;
    if (rank == 1) break;
    std::size_t d = rank - 1;
    while (d > 0) {
      --d;
      ++counter[d];
      oa += sa[d];
      ob += sb[d];
      if (counter[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      counter[d] = 0;
    }
  }
}

template <class F>
std::vector<double> broadcast_apply(std::string_view op, const Tensor& a, const Tensor& b, Shape& out_shape, F f) {
  out_shape = broadcast_shape(op, a.shape(), b.shape());
  const std::size_t n = shape_numel(out_shape);
  std::vector<double> out(n);
  auto da = a.data();
  auto db = b.data();
  if (a.shape() == out_shape && b.shape() == out_shape) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(da[i], db[i]);
  } else if (a.shape() == out_shape && b.numel() == 1) {
    const double s = db[0];
    for (std::size_t i = 0; i < n; ++i) out[i] = f(da[i], s);
  } else if (b.shape() == out_shape && a.numel() == 1) {
    const double s = da[0];
    for (std::size_t i = 0; i < n; ++i) out[i] = f(s, db[i]);
  } else {
    iterate2(out_shape, aligned_strides(a.shape(), out_shape), aligned_strides(b.shape(), out_shape),
             [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = f(da[ia], db[ib]); });
  }
  return out;
}

bool needs(const Tensor& out, std::size_t input) { return out.node()->inputs[input].requires_grad(); }
const Tensor& in(const Tensor& out, std::size_t input) { return out.node()->inputs[input]; }

// Reduction geometry around one axis.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::size_t last_axis(std::string_view op, const Tensor& x) {
  if (x.dim() == 0) throw ShapeError(std::string(op) + ": needs at least one axis, got scalar");
  return x.dim() - 1;
}

}  // namespace

// --- shape helpers ----------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// --- Tensor -----------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                     " values, got " + std::to_string(data.size()));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
  node_->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }
Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::randn(Shape shape, double stddev, Rng& rng, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

const Shape& Tensor::shape() const {
  require_defined("shape", *this);
  return node_->shape;
}

std::size_t Tensor::size(std::size_t axis) const {
  if (axis >= dim()) throw ShapeError("size: axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return shape()[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  require_defined("data", *this);
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  require_defined("mutable_data", *this);
  if (!node_->inputs.empty()) throw GraphError("mutable_data: tensor is an output of op '" + std::string(node_->op) + "'");
  return node_->data;
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::requires_grad_(bool value) {
  require_defined("requires_grad_", *this);
  if (!node_->inputs.empty()) throw GraphError("requires_grad_: only leaves can be flagged");
  node_->requires_grad = value;
  return *this;
}

bool Tensor::is_leaf() const { return node_ && node_->inputs.empty(); }

std::string_view Tensor::op_name() const { return node_ ? node_->op : std::string_view("undefined"); }

Tensor Tensor::detach() const { return Tensor(shape(), to_vector(), false); }

Tensor make_op_result(std::string_view op, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                      detail::BackwardFn backward, bool double_differentiable) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string(op) + ": produced a non-finite value");
  }
  Tensor out(std::move(shape), std::move(data), false);
  const bool record = t_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                                     [](const Tensor& t) { return t.requires_grad(); });
  out.node_->op = op;
  if (record) {
    out.node_->requires_grad = true;
    out.node_->inputs = std::move(inputs);
    out.node_->backward = std::move(backward);
    out.node_->double_differentiable = double_differentiable;
  }
  return out;
}

// --- grad mode --------------------------------------------------------------

bool grad_enabled() { return t_grad_enabled; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(t_grad_enabled) { t_grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { t_grad_enabled = previous_; }

// --- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined("add", a);
  require_defined("add", b);
  Shape shape;
  auto data = broadcast_apply("add", a, b, shape, [](double x, double y) { return x + y; });
  return make_op_result("add", std::move(shape), std::move(data), {a, b}, [](const Tensor& out, const Tensor& g) {
    std::vector<Tensor> r(2);
    if (needs(out, 0)) r[0] = sum_to(g, in(out, 0).shape());
    if (needs(out, 1)) r[1] = sum_to(g, in(out, 1).shape());
    return r;
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined("sub", a);
  require_defined("sub", b);
  Shape shape;
  auto data = broadcast_apply("sub", a, b, shape, [](double x, double y) { return x - y; });
  return make_op_result("sub", std::move(shape), std::move(data), {a, b}, [](const Tensor& out, const Tensor& g) {
    std::vector<Tensor> r(2);
    if (needs(out, 0)) r[0] = sum_to(g, in(out, 0).shape());
    if (needs(out, 1)) r[1] = neg(sum_to(g, in(out, 1).shape()));
    return r;
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined("mul", a);
  require_defined("mul", b);
  Shape shape;
  auto data = broadcast_apply("mul", a, b, shape, [](double x, double y) { return x * y; });
  return make_op_result("mul", std::move(shape), std::move(data), {a, b}, [](const Tensor& out, const Tensor& g) {
    std::vector<Tensor> r(2);
    if (needs(out, 0)) r[0] = sum_to(mul(g, in(out, 1)), in(out, 0).shape());
    if (needs(out, 1)) r[1] = sum_to(mul(g, in(out, 0)), in(out, 1).shape());
    return r;
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_defined("div", a);
  require_defined("div", b);
  Shape shape;
  auto data = broadcast_apply("div", a, b, shape, [](double x, double y) { return x / y; });
  return make_op_result("div", std::move(shape), std::move(data), {a, b}, [](const Tensor& out, const Tensor& g) {
    std::vector<Tensor> r(2);
    if (needs(out, 0)) r[0] = sum_to(div(g, in(out, 1)), in(out, 0).shape());
    if (needs(out, 1)) r[1] = neg(sum_to(div(mul(g, out), in(out, 1)), in(out, 1).shape()));
    return r;
  });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double factor) {
  require_defined("scale", x);
  std::vector<double> data(x.numel());
  auto d = x.data();
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = d[i] * factor;
  return make_op_result("scale", x.shape(), std::move(data), {x}, [factor](const Tensor&, const Tensor& g) {
    return std::vector<Tensor>{scale(g, factor)};
  });
}

Tensor add_scalar(const Tensor& x, double value) {
  require_defined("add_scalar", x);
  std::vector<double> data(x.numel());
  auto d = x.data();
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = d[i] + value;
  return make_op_result("add_scalar", x.shape(), std::move(data), {x},
                        [](const Tensor&, const Tensor& g) { return std::vector<Tensor>{g}; });
}

Tensor relu(const Tensor& x) {
  require_defined("relu", x);
  std::vector<double> data(x.numel());
  auto d = x.data();
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = d[i] > 0.0 ? d[i] : 0.0;
  // Raw-buffer backward: first order only.
  return make_op_result(
      "relu", x.shape(), std::move(data), {x},
      [](const Tensor& out, const Tensor& g) {
        auto xd = in(out, 0).data();
        auto gd = g.data();
        std::vector<double> r(gd.size());
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = xd[i] > 0.0 ? gd[i] : 0.0;
        return std::vector<Tensor>{Tensor(g.shape(), std::move(r))};
      },
      false);
}

Tensor exp(const Tensor& x) {
  require_defined("exp", x);
  std::vector<double> data(x.numel());
  auto d = x.data();
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::exp(d[i]);
  return make_op_result("exp", x.shape(), std::move(data), {x},
                        [](const Tensor& out, const Tensor& g) { return std::vector<Tensor>{mul(g, out)}; });
}

Tensor log(const Tensor& x) {
  require_defined("log", x);
  std::vector<double> data(x.numel());
  auto d = x.data();
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::log(d[i]);
  return make_op_result("log", x.shape(), std::move(data), {x}, [](const Tensor& out, const Tensor& g) {
    return std::vector<Tensor>{div(g, in(out, 0))};
  });
}

Tensor sqrt(const Tensor& x) {
  require_defined("sqrt", x);
  std::vector<double> data(x.numel());
  auto d = x.data();
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::sqrt(d[i]);
  return make_op_result("sqrt", x.shape(), std::move(data), {x}, [](const Tensor& out, const Tensor& g) {
    return std::vector<Tensor>{scale(div(g, out), 0.5)};
  });
}

Tensor clamp_min(const Tensor& x, double floor) {
  require_defined("clamp_min", x);
  std::vector<double> data(x.numel());
  auto d = x.data();
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::max(d[i], floor);
  return make_op_result("clamp_min", x.shape(), std::move(data), {x}, [floor](const Tensor& out, const Tensor& g) {
    auto xd = in(out, 0).data();
    std::vector<double> mask(xd.size());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = xd[i] > floor ? 1.0 : 0.0;
    return std::vector<Tensor>{mul(g, Tensor(out.shape(), std::move(mask)))};
  });
}

// --- shape ------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined("reshape", x);
  if (shape_numel(shape) != x.numel()) shape_fail("reshape", x.shape(), shape, "element count differs");
  return make_op_result("reshape", std::move(shape), x.to_vector(), {x}, [](const Tensor& out, const Tensor& g) {
    return std::vector<Tensor>{reshape(g, in(out, 0).shape())};
  });
}

Tensor transpose(const Tensor& x) {
  require_defined("transpose", x);
  if (x.dim() != 2) throw ShapeError("transpose: expects a 2-D tensor, got " + shape_str(x.shape()));
  const std::size_t r = x.size(0), c = x.size(1);
  std::vector<double> data(x.numel());
  MutMap(data.data(), static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(r)) =
      ConstMap(x.data().data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)).transpose();
  return make_op_result("transpose", {c, r}, std::move(data), {x},
                        [](const Tensor&, const Tensor& g) { return std::vector<Tensor>{transpose(g)}; });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  require_defined("broadcast_to", x);
  if (broadcast_shape("broadcast_to", x.shape(), shape) != shape) shape_fail("broadcast_to", x.shape(), shape);
  if (x.shape() == shape) return x;
  std::vector<double> data(shape_numel(shape));
  auto d = x.data();
  iterate2(shape, aligned_strides(x.shape(), shape), std::vector<std::size_t>(shape.size(), 0),
           [&](std::size_t i, std::size_t ix, std::size_t) { data[i] = d[ix]; });
  return make_op_result("broadcast_to", shape, std::move(data), {x}, [](const Tensor& out, const Tensor& g) {
    return std::vector<Tensor>{sum_to(g, in(out, 0).shape())};
  });
}

Tensor sum_to(const Tensor& x, const Shape& shape) {
  require_defined("sum_to", x);
  if (x.shape() == shape) return x;
  if (broadcast_shape("sum_to", shape, x.shape()) != x.shape()) shape_fail("sum_to", x.shape(), shape);
  std::vector<double> data(shape_numel(shape), 0.0);
  auto d = x.data();
  iterate2(x.shape(), aligned_strides(shape, x.shape()), std::vector<std::size_t>(x.dim(), 0),
           [&](std::size_t i, std::size_t it, std::size_t) { data[it] += d[i]; });
  return make_op_result("sum_to", shape, std::move(data), {x}, [](const Tensor& out, const Tensor& g) {
    return std::vector<Tensor>{broadcast_to(g, in(out, 0).shape())};
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  for (const auto& p : parts) require_defined("concat", p);
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != ref.size()) shape_fail("concat", ref, s, "rank differs");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != ref[i]) shape_fail("concat", ref, s);
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit geo = split_axis(out_shape, axis);
  std::vector<double> data(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t width = p.shape()[axis] * geo.inner;
    auto d = p.data();
    for (std::size_t o = 0; o < geo.outer; ++o) {
      std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(o * width), width,
                  data.begin() + static_cast<std::ptrdiff_t>(o * geo.extent * geo.inner + offset * geo.inner));
    }
    offset += p.shape()[axis];
  }
  return make_op_result(
      "concat", out_shape, std::move(data), parts,
      [axis, offsets](const Tensor& out, const Tensor& g) {
        const auto& inputs = out.node()->inputs;
        std::vector<Tensor> r(inputs.size());
        const AxisSplit geo = split_axis(out.shape(), axis);
        auto gd = g.data();
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          if (!inputs[k].requires_grad()) continue;
          const std::size_t width = inputs[k].shape()[axis] * geo.inner;
          std::vector<double> part(inputs[k].numel());
          for (std::size_t o = 0; o < geo.outer; ++o) {
            std::copy_n(gd.begin() + static_cast<std::ptrdiff_t>(o * geo.extent * geo.inner + offsets[k] * geo.inner),
                        width, part.begin() + static_cast<std::ptrdiff_t>(o * width));
          }
          r[k] = Tensor(inputs[k].shape(), std::move(part));
        }
        return r;
      },
      false);
}

Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  require_defined("narrow", x);
  if (axis >= x.dim() || start + length > x.shape()[axis]) {
    throw ShapeError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") on axis " + std::to_string(axis) + " out of bounds for " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const AxisSplit geo = split_axis(x.shape(), axis);
  std::vector<double> data(shape_numel(out_shape));
  auto d = x.data();
  const std::size_t width = length * geo.inner;
  for (std::size_t o = 0; o < geo.outer; ++o) {
    std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(o * geo.extent * geo.inner + start * geo.inner), width,
                data.begin() + static_cast<std::ptrdiff_t>(o * width));
  }
  return make_op_result(
      "narrow", out_shape, std::move(data), {x},
      [axis, start, length](const Tensor& out, const Tensor& g) {
        const Tensor& src = in(out, 0);
        const AxisSplit geo = split_axis(src.shape(), axis);
        std::vector<double> r(src.numel(), 0.0);
        auto gd = g.data();
        const std::size_t width = length * geo.inner;
        for (std::size_t o = 0; o < geo.outer; ++o) {
          std::copy_n(gd.begin() + static_cast<std::ptrdiff_t>(o * width), width,
                      r.begin() + static_cast<std::ptrdiff_t>(o * geo.extent * geo.inner + start * geo.inner));
        }
        return std::vector<Tensor>{Tensor(src.shape(), std::move(r))};
      },
      false);
}

Tensor index_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_defined("index_rows", x);
  if (x.dim() == 0) throw ShapeError("index_rows: needs at least one axis");
  const std::size_t n = x.shape()[0];
  const std::size_t width = x.numel() / std::max<std::size_t>(n, 1);
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  std::vector<double> data(rows.size() * width);
  auto d = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) throw ShapeError("index_rows: row " + std::to_string(rows[i]) + " out of range for " + shape_str(x.shape()));
    std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(rows[i] * width), width,
                data.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_op_result(
      "index_rows", out_shape, std::move(data), {x},
      [idx, width](const Tensor& out, const Tensor& g) {
        const Tensor& src = in(out, 0);
        std::vector<double> r(src.numel(), 0.0);
        auto gd = g.data();
        for (std::size_t i = 0; i < idx.size(); ++i) {
          for (std::size_t j = 0; j < width; ++j) r[idx[i] * width + j] += gd[i * width + j];
        }
        return std::vector<Tensor>{Tensor(src.shape(), std::move(r))};
      },
      false);
}

// --- contraction / reduction -----------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  if (a.dim() != 2 || b.dim() != 2) shape_fail("matmul", a.shape(), b.shape(), "operands must be 2-D");
  const std::size_t m = transpose_a ? a.size(1) : a.size(0);
  const std::size_t k = transpose_a ? a.size(0) : a.size(1);
  const std::size_t kb = transpose_b ? b.size(1) : b.size(0);
  const std::size_t n = transpose_b ? b.size(0) : b.size(1);
  if (k != kb) shape_fail("matmul", a.shape(), b.shape(), "inner dimensions differ");
  std::vector<double> data(m * n);
  const auto ar = static_cast<Eigen::Index>(a.size(0)), ac = static_cast<Eigen::Index>(a.size(1));
  const auto br = static_cast<Eigen::Index>(b.size(0)), bc = static_cast<Eigen::Index>(b.size(1));
  ConstMap am(a.data().data(), ar, ac);
  ConstMap bm(b.data().data(), br, bc);
  MutMap om(data.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (!transpose_a && !transpose_b) om.noalias() = am * bm;
  else if (!transpose_a && transpose_b) om.noalias() = am * bm.transpose();
  else if (transpose_a && !transpose_b) om.noalias() = am.transpose() * bm;
  else om.noalias() = am.transpose() * bm.transpose();
  return make_op_result("matmul", {m, n}, std::move(data), {a, b},
                        [transpose_a, transpose_b](const Tensor& out, const Tensor& g) {
                          const Tensor& A = in(out, 0);
                          const Tensor& B = in(out, 1);
                          std::vector<Tensor> r(2);
                          const bool ga = needs(out, 0), gb = needs(out, 1);
                          if (!transpose_a && !transpose_b) {
                            if (ga) r[0] = matmul(g, B, false, true);
                            if (gb) r[1] = matmul(A, g, true, false);
                          } else if (!transpose_a && transpose_b) {
                            if (ga) r[0] = matmul(g, B, false, false);
                            if (gb) r[1] = matmul(g, A, true, false);
                          } else if (transpose_a && !transpose_b) {
                            if (ga) r[0] = matmul(B, g, false, true);
                            if (gb) r[1] = matmul(A, g, false, false);
                          } else {
                            if (ga) r[0] = matmul(B, g, true, true);
                            if (gb) r[1] = matmul(g, A, true, true);
                          }
                          return r;
                        });
}

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
  require_defined("sum", x);
  if (axis >= x.dim()) throw ShapeError("sum: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  const AxisSplit geo = split_axis(x.shape(), axis);
  std::vector<double> data(geo.outer * geo.inner, 0.0);
  auto d = x.data();
  for (std::size_t o = 0; o < geo.outer; ++o) {
    for (std::size_t e = 0; e < geo.extent; ++e) {
      const double* row = d.data() + (o * geo.extent + e) * geo.inner;
      double* dst = data.data() + o * geo.inner;
      for (std::size_t i = 0; i < geo.inner; ++i) dst[i] += row[i];
    }
  }
  Shape kept = x.shape();
  kept[axis] = 1;
  Shape out_shape = kept;
  if (!keepdim) out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  return make_op_result("sum", out_shape, std::move(data), {x}, [kept](const Tensor& out, const Tensor& g) {
    return std::vector<Tensor>{broadcast_to(reshape(g, kept), in(out, 0).shape())};
  });
}

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
  const Tensor s = sum(x, axis, keepdim);
  return scale(s, 1.0 / static_cast<double>(x.shape()[axis]));
}

Tensor sum_all(const Tensor& x) {
  require_defined("sum_all", x);
  auto d = x.data();
  const double total = std::accumulate(d.begin(), d.end(), 0.0);
  return make_op_result("sum_all", {}, {total}, {x}, [](const Tensor& out, const Tensor& g) {
    const Tensor& src = in(out, 0);
    return std::vector<Tensor>{broadcast_to(reshape(g, Shape(src.dim(), 1)), src.shape())};
  });
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(std::max<std::size_t>(x.numel(), 1))); }

// --- normalization / probability -------------------------------------------

Tensor softmax(const Tensor& x) {
  require_defined("softmax", x);
  const std::size_t axis = last_axis("softmax", x);
  const std::size_t width = x.shape()[axis];
  const std::size_t rows = x.numel() / std::max<std::size_t>(width, 1);
  std::vector<double> data(x.numel());
  auto d = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = d.data() + r * width;
    double* dst = data.data() + r * width;
    const double mx = *std::max_element(src, src + width);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) total += (dst[j] = std::exp(src[j] - mx));
    for (std::size_t j = 0; j < width; ++j) dst[j] /= total;
  }
  return make_op_result("softmax", x.shape(), std::move(data), {x}, [axis](const Tensor& out, const Tensor& g) {
    return std::vector<Tensor>{mul(out, sub(g, sum(mul(g, out), axis, true)))};
  });
}

Tensor log_softmax(const Tensor& x) {
  require_defined("log_softmax", x);
  const std::size_t axis = last_axis("log_softmax", x);
  const std::size_t width = x.shape()[axis];
  const std::size_t rows = x.numel() / std::max<std::size_t>(width, 1);
  std::vector<double> data(x.numel());
  auto d = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = d.data() + r * width;
    double* dst = data.data() + r * width;
    const double mx = *std::max_element(src, src + width);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) total += std::exp(src[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < width; ++j) dst[j] = src[j] - lse;
  }
  return make_op_result("log_softmax", x.shape(), std::move(data), {x}, [axis](const Tensor& out, const Tensor& g) {
    return std::vector<Tensor>{sub(g, mul(exp(out), sum(g, axis, true)))};
  });
}

Tensor row_norm(const Tensor& x) {
  require_defined("row_norm", x);
  const std::size_t axis = last_axis("row_norm", x);
  const std::size_t width = x.shape()[axis];
  const std::size_t rows = x.numel() / std::max<std::size_t>(width, 1);
  std::vector<double> data(rows);
  auto d = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < width; ++j) ss += d[r * width + j] * d[r * width + j];
    data[r] = std::sqrt(ss);
  }
  Shape out_shape = x.shape();
  out_shape[axis] = 1;
  return make_op_result("row_norm", out_shape, std::move(data), {x}, [](const Tensor& out, const Tensor& g) {
    // d||x||/dx = x / ||x||; zero rows contribute zero.
    return std::vector<Tensor>{mul(in(out, 0), div(g, clamp_min(out, 1e-300)))};
  });
}

Tensor l2_normalize(const Tensor& x, double eps) { return div(x, clamp_min(row_norm(x), eps)); }

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.defined() && b.defined() && a.shape() != b.shape()) shape_fail("cosine_similarity", a.shape(), b.shape());
  const Tensor prod = mul(l2_normalize(a), l2_normalize(b));
  return sum(prod, last_axis("cosine_similarity", prod));
}

Tensor cosine_similarity_matrix(const Tensor& a, const Tensor& b) {
  return matmul(l2_normalize(a), l2_normalize(b), false, true);
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  std::vector<double> data(labels.size() * classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw std::out_of_range("one_hot: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
    }
    data[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return Tensor({labels.size(), classes}, std::move(data));
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_defined("cross_entropy", logits);
  if (logits.dim() != 2 || logits.size(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " do not match " +
                     std::to_string(labels.size()) + " labels");
  }
  const Tensor picked = mul(log_softmax(logits), one_hot(labels, logits.size(1)));
  return scale(sum_all(picked), -1.0 / static_cast<double>(labels.size()));
}

// --- gradients --------------------------------------------------------------

namespace {

std::vector<Tensor> reverse_topological(const Tensor& root) {
  std::vector<Tensor> nodes;
  std::unordered_set<const detail::Node*> seen{root.node()};
  std::vector<Tensor> stack{root};
  while (!stack.empty()) {
    Tensor t = std::move(stack.back());
    stack.pop_back();
    for (const Tensor& input : t.node()->inputs) {
      if (input.requires_grad() && seen.insert(input.node()).second) stack.push_back(input);
    }
    nodes.push_back(std::move(t));
  }
  // Creation order is a topological order of the DAG.
  std::sort(nodes.begin(), nodes.end(), [](const Tensor& a, const Tensor& b) { return a.node()->seq > b.node()->seq; });
  return nodes;
}

}  // namespace

std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> wrt, GradOptions options) {
  require_defined("grad", loss);
  if (loss.numel() != 1) throw GraphError("grad: loss must be a scalar, got shape " + shape_str(loss.shape()));
  std::vector<Tensor> result(wrt.size());
  if (!loss.requires_grad()) {
    for (std::size_t i = 0; i < wrt.size(); ++i) result[i] = Tensor::zeros(wrt[i].shape());
    return result;
  }
  std::unordered_set<const detail::Node*> wanted;
  for (const auto& w : wrt) wanted.insert(w.node());

  GradModeGuard mode(options.create_graph);
  std::unordered_map<const detail::Node*, Tensor> grads;
  grads.emplace(loss.node(), Tensor::ones(loss.shape()));

  for (const Tensor& out : reverse_topological(loss)) {
    const detail::Node* node = out.node();
    auto it = grads.find(node);
    if (it == grads.end() || node->inputs.empty()) continue;
    if (options.create_graph && !node->double_differentiable) {
      throw GraphError("grad: op '" + std::string(node->op) + "' does not support double backprop");
    }
    const Tensor g = it->second;
    if (!wanted.count(node)) grads.erase(it);
    std::vector<Tensor> input_grads = node->backward(out, g);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const Tensor& input = node->inputs[i];
      if (!input.requires_grad() || i >= input_grads.size() || !input_grads[i].defined()) continue;
      auto [slot, inserted] = grads.try_emplace(input.node(), input_grads[i]);
      if (!inserted) slot->second = add(slot->second, input_grads[i]);
    }
  }
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    auto it = grads.find(wrt[i].node());
    result[i] = it != grads.end() ? it->second : Tensor::zeros(wrt[i].shape());
  }
  return result;
}

std::size_t graph_size(const Tensor& root) {
  if (!root.defined()) return 0;
  return reverse_topological(root).size();
}

}  // namespace muvfs
