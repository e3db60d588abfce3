#include <cstring>

#include "helpers.hpp"
#include "muvfs/gradcheck.hpp"
#include "muvfs/optim.hpp"

using namespace muvfs;
using testutil::check_close;

TEST_SUITE("tensor") {
  TEST_CASE("forward examples") {
    check_close(softmax(Tensor({3}, {0, 0, 0})).to_vector(), {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-15);
    check_close(l2_normalize(Tensor({2}, {3, 4})).to_vector(), {0.6, 0.8}, 1e-12);
    Rng rng(1);
    for (int i = 0; i < 10; ++i) {
      const Tensor v = Tensor::randn({6}, 1.0, rng);
      CHECK(cosine_similarity(v, v).item() == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("backward examples") {
    Tensor w({2}, {1, 2}, true);
    check_close(grad(sum_all(mul(w, w)), {w})[0].to_vector(), {2, 4}, 0);
    Tensor u({2}, {1, 2}, true);
    const Tensor c = sum_all(Tensor({2}, {5, 6}));
    check_close(grad(c, {u})[0].to_vector(), {0, 0}, 0);
  }

  TEST_CASE("double backprop on the quadratic") {
    Tensor theta = Tensor::scalar(1.0, true);
    auto inner = [](const Tensor& t) { return scale(mul(t, t), 0.5); };
    const Tensor g = grad(inner(theta), {theta}, {true})[0];
    const Tensor adapted = sub(theta, scale(g, 0.1));
    CHECK(adapted.item() == doctest::Approx(0.9));
    CHECK(grad(inner(adapted), {theta})[0].item() == doctest::Approx(0.81).epsilon(1e-14));

    // alpha = 0 leaves the plain gradient.
    const Tensor g0 = grad(inner(theta), {theta}, {true})[0];
    const Tensor same = sub(theta, scale(g0, 0.0));
    CHECK(grad(inner(same), {theta})[0].item() == doctest::Approx(1.0).epsilon(1e-15));
  }

  TEST_CASE("double backprop of a two-parameter classifier matches differences") {
    // Logistic loss on one point; adapted loss after one step, differentiated w.r.t. the start.
    auto adapted_loss = [](const Tensor& w, bool create) {
      auto loss = [](const Tensor& p) {
        const Tensor logits = reshape(p, {1, 2});
        const int label = 1;
        return cross_entropy(logits, std::span<const int>(&label, 1));
      };
      const Tensor g = grad(loss(w), {w}, {create})[0];
      return loss(sub(w, scale(g, 0.5)));
    };
    Tensor w({2}, {0.3, -0.2}, true);
    const auto analytic = grad(adapted_loss(w, true), {w})[0].to_vector();
    const auto numeric = testutil::numeric_grad(
        [&](const Tensor& x) {
          Tensor leaf = x.detach();
          leaf.requires_grad_(true);
          return adapted_loss(leaf, false);
        },
        w);
    CHECK(testutil::rel_error(analytic, numeric) < 1e-3);
  }

  TEST_CASE("softmax rows are distributions") {
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
      const Tensor x = Tensor::randn({4, 7}, 5.0, rng);
      const auto p = softmax(x).to_vector();
      for (std::size_t r = 0; r < 4; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 7; ++c) {
          CHECK(p[r * 7 + c] >= 0.0);
          s += p[r * 7 + c];
        }
        CHECK(std::abs(s - 1.0) <= 1e-12);
      }
    }
  }

  TEST_CASE("l2_normalize gives unit rows above the guard") {
    Rng rng(4);
    for (int i = 0; i < 50; ++i) {
      const Tensor x = Tensor::randn({3, 5}, uniform_real(rng, 1e-6, 10.0), rng);
      const auto n = row_norm(l2_normalize(x)).to_vector();
      for (double v : n) CHECK(std::abs(v - 1.0) <= 1e-12);
    }
    // The guard keeps zero rows finite.
    check_close(l2_normalize(Tensor::zeros({1, 3})).to_vector(), {0, 0, 0}, 0);
  }

  TEST_CASE("backward is bit-deterministic") {
    auto run = [] {
      Rng rng(9);
      Tensor a = Tensor::randn({5, 4}, 1.0, rng, true);
      Tensor b = Tensor::randn({4, 3}, 1.0, rng, true);
      const Tensor loss = mean_all(log_softmax(matmul(a, b)));
      return grad(loss, {a, b});
    };
    const auto g1 = run(), g2 = run();
    for (std::size_t i = 0; i < g1.size(); ++i) {
      const auto x = g1[i].to_vector(), y = g2[i].to_vector();
      CHECK(std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0);
    }
  }

  TEST_CASE("shape errors and non-finite values are rejected") {
    CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
    CHECK_THROWS_AS(log(Tensor({1}, {-1.0})), NonFiniteError);
  }

  TEST_CASE("no-grad mode records nothing") {
    Tensor a = Tensor::ones({2}, true);
    NoGradGuard guard;
    const Tensor b = mul(a, a);
    CHECK_FALSE(b.requires_grad());
  }
}

TEST_SUITE("optim") {
  TEST_CASE("sgd examples") {
    Tensor p({1}, {0.0});
    Optimizer sgd0({OptimizerKind::SgdMomentum, 0.0}, {p});
    const std::vector<Tensor> g = {Tensor({1}, {1.0})};
    sgd0.step(g, 0.1);
    CHECK(p.item() == doctest::Approx(-0.1).epsilon(1e-15));

    Tensor q({1}, {0.0});
    Optimizer sgd({OptimizerKind::SgdMomentum, 0.9}, {q});
    sgd.step(g, 0.1);
    sgd.step(g, 0.1);
    CHECK(std::abs(q.item() - -0.29) <= 1e-15);
  }

  TEST_CASE("zero gradients leave parameters unchanged") {
    for (auto kind : {OptimizerKind::SgdMomentum, OptimizerKind::Adam}) {
      Tensor p({3}, {1, -2, 3});
      Optimizer opt({kind}, {p});
      const std::vector<Tensor> g = {Tensor::zeros({3})};
      opt.step(g, 0.5);
      check_close(p.to_vector(), {1, -2, 3}, 0);
    }
  }

  TEST_CASE("schedule examples") {
    LrSchedule s{ScheduleKind::WarmupCosine, 5, 0.064, 0.0, 105};
    CHECK(lr_at(s, 4) == doctest::Approx(0.064).epsilon(1e-15));
    CHECK(lr_at(s, 104) == doctest::Approx(0.0));
    CHECK(lr_at(s, 0) < lr_at(s, 1));
    LrSchedule c{ScheduleKind::CosineAnnealing, 0, 0.064, 0.0, 101};
    CHECK(std::abs(lr_at(c, 50) - 0.032) <= 1e-12);
    CHECK(std::abs(lr_at(c, 100)) <= 1e-15);
  }
}

TEST_SUITE("gradcheck") {
  TEST_CASE("every check passes on a reduced seed count") {
    gradcheck::GradcheckOptions o;
    o.seeds = 5;
    const auto r = gradcheck::run(o);
    CHECK(r.passed());
    CHECK(r.checks.size() == gradcheck::check_names().size());
    for (const auto& c : r.checks) CHECK(c.max_rel_error < c.tolerance);
  }

  TEST_CASE("an injected fault names the failing check") {
    gradcheck::GradcheckOptions o;
    o.seeds = 3;
    o.only = {"matmul", "exp"};
    o.inject_fault = "matmul";
    const auto r = gradcheck::run(o);
    CHECK_FALSE(r.passed());
    REQUIRE(r.failing().size() == 1);
    CHECK(r.failing()[0] == "matmul");
    CHECK(r.to_json()["checks"].size() == 2);
  }

  TEST_CASE("unknown names are rejected") {
    gradcheck::GradcheckOptions o;
    o.only = {"no_such_op"};
    CHECK_THROWS_AS(gradcheck::run(o), std::invalid_argument);
  }

  TEST_CASE("relative error") {
    CHECK(gradcheck::relative_error({1, 0}, {1, 0}) == 0.0);
    CHECK(gradcheck::relative_error({0, 0}, {0, 0}) == 0.0);
    CHECK(gradcheck::relative_error({2, 0}, {1, 0}) == doctest::Approx(0.5));
  }
}
