#include "muvfs/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include "muvfs/a3m.hpp"
#include "muvfs/contrastive.hpp"
#include "muvfs/metalearn.hpp"
#include "muvfs/random.hpp"
#include "muvfs/streams.hpp"
#include "muvfs/tensor.hpp"

namespace muvfs::gradcheck {
namespace {

using Inputs = std::vector<Tensor>;
using Fn = std::function<Tensor(const Inputs&)>;

struct Case {
  Inputs inputs;
  Fn f;
};

using Factory = std::function<Case(Rng&)>;

struct Check {
  std::string name;
  CheckKind kind;
  Factory make;
};

std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) { return lo + uniform_index(rng, hi - lo + 1); }

Tensor normal(Shape s, Rng& rng) { return Tensor::randn(std::move(s), 1.0, rng, true); }

Tensor positive(Shape s, Rng& rng) { return Tensor::uniform(std::move(s), 0.5, 2.0, rng, true); }

// Values with |x| >= 0.2 so that kinks at zero are never straddled.
Tensor off_kink(Shape s, Rng& rng) {
  Tensor t = Tensor::uniform(std::move(s), 0.2, 1.5, rng, true);
  auto d = t.mutable_data();
  for (auto& v : d) {
    if (bernoulli(rng, 0.5)) v = -v;
  }
  return t;
}

std::vector<int> labels(Rng& rng, std::size_t n, std::size_t classes) {
  std::vector<int> out(n);
  for (auto& l : out) l = static_cast<int>(uniform_index(rng, classes));
  return out;
}

Case unary(Rng& rng, Tensor (*make)(Shape, Rng&), std::function<Tensor(const Tensor&)> op) {
  const std::size_t r = draw(rng, 1, 4), c = draw(rng, 1, 5);
  return {{make({r, c}, rng)}, [op](const Inputs& x) { return op(x[0]); }};
}

// Row-normalizing ops are constant for width 1, which leaves nothing to compare.
Case rows_of_vectors(Rng& rng, std::function<Tensor(const Tensor&)> op) {
  const std::size_t r = draw(rng, 1, 4), c = draw(rng, 2, 5);
  return {{off_kink({r, c}, rng)}, [op](const Inputs& x) { return op(x[0]); }};
}

Case binary_broadcast(Rng& rng, Tensor (*rhs)(Shape, Rng&), std::function<Tensor(const Tensor&, const Tensor&)> op) {
  const std::size_t r = draw(rng, 1, 4), c = draw(rng, 1, 5);
  Shape bs;
  switch (uniform_index(rng, 3)) {
    case 0: bs = {r, c}; break;
    case 1: bs = {c}; break;
    default: bs = {r, 1}; break;
  }
  return {{normal({r, c}, rng), rhs(bs, rng)}, [op](const Inputs& x) { return op(x[0], x[1]); }};
}

a3m::A3MParameters a3m_from(const Inputs& x, std::size_t offset) {
  return a3m::A3MParameters::from_list({x[offset], x[offset + 1], x[offset + 2], x[offset + 3], x[offset + 4]}, true, true);
}

Case attend_chain(Rng& rng) {
  const std::size_t B = draw(rng, 1, 3), F = draw(rng, 2, 4), D = draw(rng, 2, 4), dk = draw(rng, 1, 3),
                    dv = draw(rng, 2, 4), way = draw(rng, 2, 3);
  const auto y = labels(rng, B, way);
  Inputs in{normal({B, F, D}, rng), normal({B, D}, rng), normal({D, dk}, rng), normal({D, dv}, rng),
            normal({D, dk}, rng),   normal({dv, way}, rng), normal({way}, rng)};
  return {std::move(in), [y](const Inputs& x) {
            const auto p = a3m_from(x, 2);
            return cross_entropy(a3m::classify(a3m::attend(x[0], x[1], p).h, p), y);
          }};
}

std::vector<Check> registry() {
  std::vector<Check> c;
  auto op = [&](std::string name, Factory f) { c.push_back({std::move(name), CheckKind::Op, std::move(f)}); };
  auto composite = [&](std::string name, Factory f) { c.push_back({std::move(name), CheckKind::Composite, std::move(f)}); };
  auto twice = [&](std::string name, Factory f) { c.push_back({std::move(name), CheckKind::DoubleBackprop, std::move(f)}); };

  op("add", [](Rng& r) { return binary_broadcast(r, normal, [](auto& a, auto& b) { return add(a, b); }); });
  op("sub", [](Rng& r) { return binary_broadcast(r, normal, [](auto& a, auto& b) { return sub(a, b); }); });
  op("mul", [](Rng& r) { return binary_broadcast(r, normal, [](auto& a, auto& b) { return mul(a, b); }); });
  op("div", [](Rng& r) { return binary_broadcast(r, positive, [](auto& a, auto& b) { return div(a, b); }); });
  op("neg", [](Rng& r) { return unary(r, normal, [](auto& x) { return neg(x); }); });
  op("scale", [](Rng& r) {
    const double s = uniform_real(r, -2.0, 2.0);
    return unary(r, normal, [s](auto& x) { return scale(x, s); });
  });
  op("add_scalar", [](Rng& r) { return unary(r, normal, [](auto& x) { return add_scalar(x, 0.75); }); });
  op("relu", [](Rng& r) { return unary(r, off_kink, [](auto& x) { return relu(x); }); });
  op("exp", [](Rng& r) { return unary(r, normal, [](auto& x) { return exp(x); }); });
  op("log", [](Rng& r) { return unary(r, positive, [](auto& x) { return log(x); }); });
  op("sqrt", [](Rng& r) { return unary(r, positive, [](auto& x) { return sqrt(x); }); });
  op("clamp_min", [](Rng& r) { return unary(r, off_kink, [](auto& x) { return clamp_min(x, 0.0); }); });
  op("reshape", [](Rng& r) {
    const std::size_t a = draw(r, 1, 3), b = draw(r, 1, 4);
    return Case{{normal({a, b}, r)}, [a, b](const Inputs& x) { return reshape(x[0], {b, a}); }};
  });
  op("transpose", [](Rng& r) { return unary(r, normal, [](auto& x) { return transpose(x); }); });
  op("broadcast_to", [](Rng& r) {
    const std::size_t a = draw(r, 1, 4), b = draw(r, 1, 4);
    return Case{{normal({b}, r)}, [a, b](const Inputs& x) { return broadcast_to(x[0], {a, b}); }};
  });
  op("sum_to", [](Rng& r) {
    const std::size_t a = draw(r, 1, 4), b = draw(r, 1, 4);
    return Case{{normal({a, b}, r)}, [b](const Inputs& x) { return sum_to(x[0], {b}); }};
  });
  op("concat", [](Rng& r) {
    const std::size_t axis = uniform_index(r, 2), a = draw(r, 1, 3), b = draw(r, 1, 3), k = draw(r, 1, 3);
    Shape s1 = axis == 0 ? Shape{a, k} : Shape{k, a};
    Shape s2 = axis == 0 ? Shape{b, k} : Shape{k, b};
    return Case{{normal(s1, r), normal(s2, r)}, [axis](const Inputs& x) { return concat({x[0], x[1]}, axis); }};
  });
  op("narrow", [](Rng& r) {
    const std::size_t n = draw(r, 2, 5), start = uniform_index(r, n - 1), len = draw(r, 1, n - start);
    return Case{{normal({3, n}, r)}, [start, len](const Inputs& x) { return narrow(x[0], 1, start, len); }};
  });
  op("index_rows", [](Rng& r) {
    const std::size_t n = draw(r, 1, 4), k = draw(r, 1, 6);
    std::vector<std::size_t> rows(k);
    for (auto& i : rows) i = uniform_index(r, n);  // repeats exercise accumulation
    return Case{{normal({n, 3}, r)}, [rows](const Inputs& x) { return index_rows(x[0], rows); }};
  });
  op("matmul", [](Rng& r) {
    const std::size_t m = draw(r, 1, 4), k = draw(r, 1, 4), n = draw(r, 1, 4);
    const bool ta = bernoulli(r, 0.5), tb = bernoulli(r, 0.5);
    Tensor a = normal(ta ? Shape{k, m} : Shape{m, k}, r);
    Tensor b = normal(tb ? Shape{n, k} : Shape{k, n}, r);
    return Case{{a, b}, [ta, tb](const Inputs& x) { return matmul(x[0], x[1], ta, tb); }};
  });
  op("sum", [](Rng& r) {
    const std::size_t axis = uniform_index(r, 3);
    const bool keep = bernoulli(r, 0.5);
    return Case{{normal({2, 3, 2}, r)}, [axis, keep](const Inputs& x) { return sum(x[0], axis, keep); }};
  });
  op("mean", [](Rng& r) {
    const std::size_t axis = uniform_index(r, 3);
    const bool keep = bernoulli(r, 0.5);
    return Case{{normal({2, 3, 2}, r)}, [axis, keep](const Inputs& x) { return mean(x[0], axis, keep); }};
  });
  op("sum_all", [](Rng& r) { return unary(r, normal, [](auto& x) { return sum_all(x); }); });
  op("mean_all", [](Rng& r) { return unary(r, normal, [](auto& x) { return mean_all(x); }); });
  op("softmax", [](Rng& r) { return unary(r, normal, [](auto& x) { return softmax(x); }); });
  op("log_softmax", [](Rng& r) { return unary(r, normal, [](auto& x) { return log_softmax(x); }); });
  op("row_norm", [](Rng& r) { return unary(r, off_kink, [](auto& x) { return row_norm(x); }); });
  op("l2_normalize", [](Rng& r) { return rows_of_vectors(r, [](auto& x) { return l2_normalize(x); }); });
  op("cosine_similarity", [](Rng& r) {
    const std::size_t n = draw(r, 1, 4), d = draw(r, 2, 4);
    return Case{{off_kink({n, d}, r), off_kink({n, d}, r)}, [](const Inputs& x) { return cosine_similarity(x[0], x[1]); }};
  });
  op("cosine_similarity_matrix", [](Rng& r) {
    const std::size_t n = draw(r, 1, 4), m = draw(r, 1, 4), d = draw(r, 2, 4);
    return Case{{off_kink({n, d}, r), off_kink({m, d}, r)},
                [](const Inputs& x) { return cosine_similarity_matrix(x[0], x[1]); }};
  });
  op("cross_entropy", [](Rng& r) {
    const std::size_t n = draw(r, 1, 4), k = draw(r, 2, 5);
    const auto y = labels(r, n, k);
    return Case{{normal({n, k}, r)}, [y](const Inputs& x) { return cross_entropy(x[0], y); }};
  });

  composite("mlp", [](Rng& r) {
    const std::size_t in = draw(r, 2, 4), hid = draw(r, 2, 4), out = draw(r, 1, 3), B = draw(r, 1, 3);
    // Biases keep pre-activations away from the relu kink with high probability.
    return Case{{normal({B, in}, r), normal({in, hid}, r), off_kink({hid}, r), normal({hid, out}, r), normal({out}, r)},
                [](const Inputs& x) {
                  const Tensor h = relu(add(matmul(x[0], x[1]), x[2]));
                  return add(matmul(h, x[3]), x[4]);
                }};
  });
  composite("attend->classify->cross_entropy", attend_chain);
  composite("nt_xent", [](Rng& r) {
    const std::size_t pairs = draw(r, 1, 3), d = draw(r, 2, 4);
    const double tau = uniform_real(r, 0.2, 1.0);
    return Case{{off_kink({2 * pairs, d}, r)}, [tau](const Inputs& x) { return contrastive::nt_xent(x[0], tau); }};
  });
  composite("symmetric_kl", [](Rng& r) {
    const std::size_t n = draw(r, 1, 3), k = draw(r, 2, 4);
    return Case{{normal({n, k}, r), normal({n, k}, r)},
                [](const Inputs& x) { return contrastive::symmetric_kl(softmax(x[0]), softmax(x[1])); }};
  });
  composite("joint_projection->nt_xent", [](Rng& r) {
    const std::size_t pairs = draw(r, 1, 2), d = draw(r, 2, 3), p = draw(r, 2, 3);
    return Case{{off_kink({2 * pairs, d}, r), off_kink({2 * pairs, d}, r), normal({2 * d, p}, r), normal({p}, r)},
                [](const Inputs& x) {
                  const Tensor z = add(matmul(concat({x[0], x[1]}, 1), x[2]), x[3]);
                  return contrastive::nt_xent(z, 0.5);
                }};
  });

  twice("double:mul", [](Rng& r) { return binary_broadcast(r, normal, [](auto& a, auto& b) { return mul(a, b); }); });
  twice("double:div", [](Rng& r) { return binary_broadcast(r, positive, [](auto& a, auto& b) { return div(a, b); }); });
  twice("double:exp", [](Rng& r) { return unary(r, normal, [](auto& x) { return exp(x); }); });
  twice("double:log", [](Rng& r) { return unary(r, positive, [](auto& x) { return log(x); }); });
  twice("double:sqrt", [](Rng& r) { return unary(r, positive, [](auto& x) { return sqrt(x); }); });
  twice("double:matmul", [](Rng& r) {
    const std::size_t m = draw(r, 1, 3), k = draw(r, 1, 3), n = draw(r, 1, 3);
    return Case{{normal({m, k}, r), normal({k, n}, r)}, [](const Inputs& x) { return matmul(x[0], x[1]); }};
  });
  twice("double:softmax", [](Rng& r) { return unary(r, normal, [](auto& x) { return softmax(x); }); });
  twice("double:log_softmax", [](Rng& r) { return unary(r, normal, [](auto& x) { return log_softmax(x); }); });
  twice("double:l2_normalize", [](Rng& r) { return rows_of_vectors(r, [](auto& x) { return l2_normalize(x); }); });
  twice("double:cross_entropy", [](Rng& r) {
    const std::size_t n = draw(r, 1, 3), k = draw(r, 2, 4);
    const auto y = labels(r, n, k);
    return Case{{normal({n, k}, r)}, [y](const Inputs& x) { return cross_entropy(x[0], y); }};
  });
  twice("double:attend->classify->cross_entropy", attend_chain);
  // Full MAML meta-gradient of a tiny linear classifier: d/dtheta L_q(theta - alpha grad L_s(theta)).
  composite("maml-second-order", [](Rng& r) {
    const std::size_t d = 2, way = 2;
    Tensor xs = Tensor::randn({4, d}, 1.0, r), xq = Tensor::randn({4, d}, 1.0, r);
    const auto ys = labels(r, 4, way), yq = labels(r, 4, way);
    const double alpha = uniform_real(r, 0.1, 0.8);
    return Case{{normal({d, way}, r), normal({way}, r)}, [=](const Inputs& x) {
                  GradModeGuard on(true);
                  std::vector<Tensor> theta{x[0], x[1]};
                  if (!x[0].requires_grad()) {
                    theta = {Tensor(x[0].shape(), x[0].to_vector(), true), Tensor(x[1].shape(), x[1].to_vector(), true)};
                  }
                  const Tensor ls = cross_entropy(add(matmul(xs, theta[0]), theta[1]), ys);
                  const auto g = grad(ls, theta, {.create_graph = true});
                  const Tensor w = sub(theta[0], scale(g[0], alpha)), b = sub(theta[1], scale(g[1], alpha));
                  return cross_entropy(add(matmul(xq, w), b), yq);
                }};
  });
  return c;
}

std::vector<double> flatten(const std::vector<Tensor>& ts) {
  std::vector<double> out;
  for (const auto& t : ts) {
    auto d = t.data();
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

Inputs fresh(const Inputs& in, bool requires_grad) {
  Inputs out;
  for (const auto& t : in) out.emplace_back(t.shape(), t.to_vector(), requires_grad);
  return out;
}

// Scalar objective: sum(f(x) * R) for a fixed random R of f's output shape.
Fn scalarize(const Fn& f, const Inputs& in, Rng& rng) {
  Shape shape;
  {
    const Tensor probe = f(fresh(in, false));
    shape = probe.shape();
  }
  const Tensor R = Tensor::randn(shape, 1.0, rng);
  return [f, R](const Inputs& x) { return sum_all(mul(f(x), R)); };
}

// s(x) = sum_i <grad_i L(x), R_i>, differentiated a second time.
Fn gradient_projection(const Fn& loss, const Inputs& in, Rng& rng) {
  std::vector<Tensor> R;
  for (const auto& t : in) R.push_back(Tensor::randn(t.shape(), 1.0, rng));
  return [loss, R](const Inputs& x) {
    GradModeGuard on(true);
    Inputs leaves = x;
    bool create = true;
    if (!x.empty() && !x[0].requires_grad()) {
      leaves = fresh(x, true);
      create = false;
    }
    const auto g = grad(loss(leaves), leaves, {.create_graph = create});
    Tensor s = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < g.size(); ++i) s = add(s, sum_all(mul(g[i], R[i])));
    return s;
  };
}

std::vector<double> numeric_gradient(const Fn& f, const Inputs& in, double h) {
  std::vector<double> out;
  for (std::size_t i = 0; i < in.size(); ++i) {
    for (std::size_t j = 0; j < in[i].numel(); ++j) {
      auto eval = [&](double delta) {
        Inputs x = fresh(in, false);
        x[i].mutable_data()[j] += delta;
        NoGradGuard off;
        return f(x).item();
      };
      out.push_back((eval(h) - eval(-h)) / (2.0 * h));
    }
  }
  return out;
}

}  // namespace

std::string to_string(CheckKind kind) {
  switch (kind) {
    case CheckKind::Op: return "op";
    case CheckKind::Composite: return "composite";
    case CheckKind::DoubleBackprop: return "double-backprop";
  }
  return "op";
}

double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
  if (a.size() != n.size()) throw std::invalid_argument("relative_error: size mismatch");
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
}

std::vector<std::string> check_names() {
  std::vector<std::string> out;
  for (const auto& c : registry()) out.push_back(c.name);
  return out;
}

bool GradcheckReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::vector<std::string> GradcheckReport::failing() const {
  std::vector<std::string> out;
  for (const auto& c : checks) {
    if (!c.passed) out.push_back(c.name);
  }
  return out;
}

nlohmann::json GradcheckReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : checks) {
    arr.push_back({{"name", c.name},
                   {"kind", to_string(c.kind)},
                   {"max_rel_error", c.max_rel_error},
                   {"tolerance", c.tolerance},
                   {"trials", c.trials},
                   {"passed", c.passed}});
  }
  return {{"passed", passed()}, {"checks", arr}};
}

std::string GradcheckReport::to_text() const {
  std::ostringstream os;
  for (const auto& c : checks) {
    os << (c.passed ? "PASS " : "FAIL ") << std::left << std::setw(44) << c.name << " max_rel_error=" << std::scientific
       << std::setprecision(3) << c.max_rel_error << " tol=" << c.tolerance << " trials=" << c.trials << "\n";
  }
  return os.str();
}

GradcheckReport run(const GradcheckOptions& options) {
  if (options.seeds == 0) throw std::invalid_argument("gradcheck: seeds must be positive");
  if (!(options.step > 0.0)) throw std::invalid_argument("gradcheck: step must be positive");
  auto checks = registry();
  std::map<std::string, bool> known;
  for (const auto& c : checks) known[c.name] = true;
  for (const auto& n : options.only) {
    if (!known.count(n)) throw std::invalid_argument("gradcheck: unknown check '" + n + "'");
  }
  if (!options.inject_fault.empty() && !known.count(options.inject_fault)) {
    throw std::invalid_argument("gradcheck: unknown check '" + options.inject_fault + "'");
  }

  GradcheckReport report;
  for (std::size_t ci = 0; ci < checks.size(); ++ci) {
    const auto& check = checks[ci];
    if (!options.only.empty() && std::find(options.only.begin(), options.only.end(), check.name) == options.only.end()) {
      continue;
    }
    CheckResult res;
    res.name = check.name;
    res.kind = check.kind;
    res.tolerance = check.kind == CheckKind::DoubleBackprop || check.name == "maml-second-order" ? options.double_tolerance
                                                                                                  : options.tolerance;
    for (std::size_t s = 0; s < options.seeds; ++s) {
      Rng rng(derive_seed(options.base_seed, {ci, s}));
      Case c = check.make(rng);
      Fn objective = check.kind == CheckKind::DoubleBackprop
                         ? gradient_projection(scalarize(c.f, c.inputs, rng), c.inputs, rng)
                         : scalarize(c.f, c.inputs, rng);
      GradModeGuard on(true);
      Inputs leaves = fresh(c.inputs, true);
      std::vector<double> analytic = flatten(grad(objective(leaves), leaves));
      if (options.inject_fault == check.name && !analytic.empty()) {
        double norm = 0;
        for (double v : analytic) norm += v * v;
        analytic[0] += 1e-2 * (std::sqrt(norm) + 1.0);
      }
      const std::vector<double> numeric = numeric_gradient(objective, c.inputs, options.step);
      const double err = relative_error(analytic, numeric);
      res.max_rel_error = std::max(res.max_rel_error, std::isfinite(err) ? err : INFINITY);
      ++res.trials;
    }
    res.passed = res.max_rel_error < res.tolerance;
    report.checks.push_back(res);
  }
  return report;
}

}  // namespace muvfs::gradcheck
