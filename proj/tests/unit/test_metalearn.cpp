#include <cstring>

#include "helpers.hpp"
#include "muvfs/metalearn.hpp"

using namespace muvfs;
using namespace muvfs::metalearn;
using testutil::check_close;

namespace {

bool bit_equal(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto x = a[i].to_vector(), y = b[i].to_vector();
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

EpisodeLosses quadratic() {
  EpisodeLosses e;
  e.support = [](const std::vector<Tensor>& th) { return scale(mul(th[0], th[0]), 0.5); };
  e.query = e.support;
  return e;
}

ItemBatch random_batch(std::size_t way, std::size_t per_class, std::size_t frames, std::size_t D, Rng& rng) {
  ItemBatch b;
  const std::size_t n = way * per_class;
  b.ap_frames = Tensor::randn({n, frames, D}, 1.0, rng);
  b.ap_mean = mean(b.ap_frames, 1);
  b.act = Tensor::randn({n, D}, 1.0, rng);
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<int>(i % way));
  return b;
}

// Items whose action embedding is a scaled one-hot of the class: linearly separable.
ItemBatch separable_batch(std::size_t way, std::size_t per_class, std::size_t D, Rng& rng) {
  ItemBatch b = random_batch(way, per_class, 2, D, rng);
  std::vector<double> act(way * per_class * D);
  for (std::size_t i = 0; i < way * per_class; ++i) {
    for (std::size_t d = 0; d < D; ++d) act[i * D + d] = 0.05 * std::normal_distribution<double>()(rng);
    act[i * D + (i % way)] += 1.0;
  }
  b.act = Tensor({way * per_class, D}, act);
  return b;
}

a3m::A3MConfig small_head(std::size_t way = 5) {
  a3m::A3MConfig c;
  c.embed_dim = 8, c.d_k = 4, c.d_v = 8, c.way = way;
  return c;
}

}  // namespace

TEST_SUITE("metalearn") {
  TEST_CASE("inner adaptation") {
    const std::vector<Tensor> theta = {Tensor::scalar(1.0, true)};
    const auto e = quadratic();
    CHECK(inner_adapt(theta, e.support, 0.1, 1, false)[0].item() == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(inner_adapt(theta, e.support, 0.0, 1, false)[0].item() == 1.0);
    const LossFn flat = [](const std::vector<Tensor>& th) { return scale(sum_all(th[0]), 0.0); };
    CHECK(inner_adapt(theta, flat, 0.5, 3, false)[0].item() == 1.0);
    CHECK(theta[0].item() == 1.0);
  }

  TEST_CASE("inner adaptation never mutates theta") {
    Rng rng(1);
    auto head = Head::init(FeatureMode::A3M, small_head(), rng);
    const auto support = random_batch(5, 1, 3, 8, rng);
    const auto before = head.clone().theta();
    const LossFn f = [&](const std::vector<Tensor>& th) { return loss(head.with_theta(th), support); };
    for (bool create : {false, true}) inner_adapt(head.theta(), f, 10.0, 2, create);
    CHECK(bit_equal(head.theta(), before));
  }

  TEST_CASE("meta-gradient examples") {
    for (auto order : {MetaOrder::First, MetaOrder::Second}) {
      const auto mg = meta_gradient({Tensor::scalar(1.0, true)}, {quadratic()}, 0.1, 1, order);
      CHECK(mg.grads[0].item() == doctest::Approx(order == MetaOrder::Second ? 0.81 : 0.9).epsilon(1e-15));
      const auto twice = meta_gradient({Tensor::scalar(1.0, true)}, {quadratic(), quadratic()}, 0.1, 1, order);
      CHECK(twice.grads[0].item() == 2.0 * mg.grads[0].item());
    }
    EpisodeLosses zero;
    zero.support = quadratic().support;
    zero.query = [](const std::vector<Tensor>& th) { return scale(sum_all(th[0]), 0.0); };
    CHECK(meta_gradient({Tensor::scalar(1.0, true)}, {zero}, 0.1, 1, MetaOrder::Second).grads[0].item() == 0.0);
  }

  TEST_CASE("first and second order agree as alpha vanishes") {
    Rng rng(2);
    const auto head = Head::init(FeatureMode::A3M, small_head(), rng);
    auto h = head.clone();
    h.params.W = Tensor::randn(h.params.W.shape(), 0.5, rng, true);
    const auto support = random_batch(5, 1, 3, 8, rng), query = random_batch(5, 1, 3, 8, rng);
    const auto e = instance_episode_losses(h, support, query, 5, Learner::Maml);
    const auto first = meta_gradient(h.theta(), {e}, 1e-8, 1, MetaOrder::First);
    const auto second = meta_gradient(h.theta(), {e}, 1e-8, 1, MetaOrder::Second);
    std::vector<double> a, b;
    for (const auto& g : first.grads) for (double v : g.to_vector()) a.push_back(v);
    for (const auto& g : second.grads) for (double v : g.to_vector()) b.push_back(v);
    CHECK(testutil::rel_error(a, b) < 1e-6);
  }

  TEST_CASE("a zero meta-gradient leaves the head") {
    Rng rng(3);
    const auto head = Head::init(FeatureMode::A3M, small_head(), rng);
    MetaConfig mc;
    mc.iterations = 5;
    MetaTrainer trainer(head.clone(), mc);
    EpisodeLosses e;
    e.support = [](const std::vector<Tensor>& th) { return scale(sum_all(th[0]), 0.0); };
    e.query = e.support;
    trainer.step({e});
    CHECK(bit_equal(trainer.head().theta(), head.theta()));
  }

  TEST_CASE("prototype machinery") {
    const Tensor s({2, 2}, {0, 0, 1, 0});
    CHECK(protonet_predict(s, {0, 1}, Tensor({1, 2}, {0.4, 0}), 2) == std::vector<int>{0});
    CHECK(protonet_predict(s, {0, 1}, Tensor({1, 2}, {1, 0}), 2) == std::vector<int>{1});
    const Tensor dup = concat({s, s}, 0);
    check_close(prototypes(dup, {0, 1, 0, 1}, 2).to_vector(), prototypes(s, {0, 1}, 2).to_vector(), 0);

    Tensor W, b;
    protomaml_init(Tensor::zeros({3, 4}), W, b);
    for (double v : W.to_vector()) CHECK(v == 0.0);
    for (double v : b.to_vector()) CHECK(v == 0.0);
  }

  TEST_CASE("ProtoMAML init agrees with ProtoNet on random 3-way cases") {
    Rng rng(4);
    std::size_t agree = 0;
    for (int i = 0; i < 100; ++i) {
      const Tensor sup = l2_normalize(Tensor::randn({6, 5}, 1.0, rng));
      const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
      const Tensor q = l2_normalize(Tensor::randn({1, 5}, 1.0, rng));
      Tensor W, b;
      protomaml_init(prototypes(sup, labels, 3), W, b);
      agree += protonet_predict(sup, labels, q, 3) == predict(add(matmul(q, W), b));
    }
    CHECK(agree == 100);
  }

  TEST_CASE("meta-test keeps the head and converges on separable data") {
    Rng rng(5);
    const auto cfg = small_head(3);
    auto head = Head::init(FeatureMode::ActionOnly, cfg, rng);
    const auto data = separable_batch(3, 2, 8, rng);
    const auto before = head.clone().theta();
    for (auto learner : {Learner::Maml, Learner::ProtoMaml, Learner::BaselinePP, Learner::ProtoNet}) {
      TestProtocol tp;
      tp.learner = learner;
      tp.finetune_epochs = 100;
      CAPTURE(to_string(learner));
      CHECK(run_episode(head, data, data, 3, tp, 7).accuracy == 1.0);
      CHECK(bit_equal(head.theta(), before));
    }
    // Unseen queries from the same construction.
    TestProtocol tp;
    tp.learner = Learner::BaselinePP;
    CHECK(run_episode(head, separable_batch(3, 1, 8, rng), separable_batch(3, 2, 8, rng), 3, tp, 7).accuracy == 1.0);
  }

  TEST_CASE("no finetuning is repeatable") {
    Rng rng(6);
    auto head = Head::init(FeatureMode::A3M, small_head(), rng);
    head.params.W = Tensor::randn(head.params.W.shape(), 1.0, rng, true);
    const auto s = random_batch(5, 1, 3, 8, rng), q = random_batch(5, 1, 3, 8, rng);
    TestProtocol tp;
    tp.finetune_epochs = 0;
    const double a = run_episode(head, s, q, 5, tp, 1).accuracy;
    CHECK(run_episode(head, s, q, 5, tp, 2).accuracy == a);
    NoGradGuard g;
    CHECK(a == accuracy(predict(logits(head, q)), q.labels));
  }

  TEST_CASE("way mismatch re-initializes the classifier") {
    Rng rng(7);
    const auto head = Head::init(FeatureMode::A3M, small_head(5), rng);
    const auto s = random_batch(10, 1, 3, 8, rng), q = random_batch(10, 1, 3, 8, rng);
    TestProtocol tp;
    tp.finetune_epochs = 2;
    CHECK(run_episode(head, s, q, 10, tp, 1).classifier_reinitialized);
    CHECK_FALSE(run_episode(head, random_batch(5, 1, 3, 8, rng), random_batch(5, 1, 3, 8, rng), 5, tp, 1).classifier_reinitialized);
  }

  TEST_CASE("accuracy intervals") {
    const auto all = accuracy_ci({1, 1, 1, 1});
    CHECK(all.format() == "100.00 ± 0.00");
    const auto ex = accuracy_ci({1, 0, 1, 1});
    CHECK(ex.mean == doctest::Approx(75.0));
    CHECK(ex.halfwidth == doctest::Approx(49.0));
    CHECK(ex.format() == "75.00 ± 49.00");
    std::vector<double> base = {1, 0, 1, 1, 0, 1, 0.5, 0.2}, four;
    for (int r = 0; r < 4; ++r) four.insert(four.end(), base.begin(), base.end());
    std::vector<double> sixteen;
    for (int r = 0; r < 4; ++r) sixteen.insert(sixteen.end(), four.begin(), four.end());
    // Replication changes the sample variance slightly through n - 1.
    const double ratio = accuracy_ci(four).halfwidth / accuracy_ci(sixteen).halfwidth;
    CHECK(ratio == doctest::Approx(2.0).epsilon(0.02));
    CHECK_THROWS(accuracy_ci({1}));
  }

  TEST_CASE("report formats") {
    EvalReport r;
    r.learner = "maml", r.way = 5, r.shot = 1, r.episodes = 10, r.mean_acc = 62.8, r.ci95 = 0.45;
    CHECK(r.csv_row().find("62.8") != std::string::npos);
    CHECK(AccuracyCI{62.8, 0.45}.format() == "62.80 ± 0.45");
    CHECK(EvalReport::csv_header().find("mean_acc") != std::string::npos);
  }
}
