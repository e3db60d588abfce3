// Training-curve checks at desk scale. Slow: one pretraining run and one
// meta-training run, shared by both cases.

#include "helpers.hpp"
#include "muvfs/config.hpp"

using namespace muvfs;

namespace {

struct Trained {
  synthvid::VideoStore store;
  contrastive::PretrainResult pretrained;
};

const Trained& trained() {
  static const Trained t = [] {
    const auto c = config::RunConfig::load(std::filesystem::path(MUVFS_SOURCE_DIR) / "configs" / "desk.conf");
    Trained out{synthvid::VideoStore::synthesize(c.dataset_spec()), {}};
    Rng rng(derive_seed(c.seed, {0x6d6f64656cULL}));
    out.pretrained = contrastive::pretrain(out.store, streams::TwoStreamModel(c.streams_config(), rng), c.pretrain_config());
    return out;
  }();
  return t;
}

double mean_accuracy(const std::vector<metalearn::IterationLog>& log, std::size_t begin, std::size_t end) {
  double s = 0;
  for (std::size_t i = begin; i < end; ++i) s += log[i].query_accuracy;
  return s / static_cast<double>(end - begin);
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("thirty pretraining epochs cut both stream losses by at least 30%" * doctest::timeout(1200)) {
    const auto& log = trained().pretrained.log;
    REQUIRE(log.size() == 30);
    MESSAGE("loss_ap " << log.front().loss_ap << " -> " << log.back().loss_ap << ", loss_act " << log.front().loss_act << " -> "
                       << log.back().loss_act);
    CHECK(log.back().loss_ap <= 0.7 * log.front().loss_ap);
    CHECK(log.back().loss_act <= 0.7 * log.front().loss_act);
  }

  TEST_CASE("meta-training raises instance query accuracy" * doctest::timeout(1200)) {
    const auto c = config::RunConfig::load(std::filesystem::path(MUVFS_SOURCE_DIR) / "configs" / "desk.conf");
    const auto mc = c.meta_train_config();
    Rng rng(derive_seed(c.seed, {0x68656164ULL}));
    const auto head = metalearn::Head::init(mc.mode, mc.head, rng);
    const auto r = metalearn::meta_train(trained().store, trained().pretrained.model, head, mc);
    REQUIRE(r.log.size() == 300);
    const double first = mean_accuracy(r.log, 0, 50), last = mean_accuracy(r.log, 250, 300);
    MESSAGE("query accuracy, first 50 iterations " << first << ", last 50 " << last);
    CHECK(last > first);
  }

  TEST_CASE("zero meta-iterations and repeat runs") {
    auto c = config::RunConfig::load(std::filesystem::path(MUVFS_SOURCE_DIR) / "configs" / "desk.conf");
    c.set("meta.iterations", "0");
    auto mc = c.meta_train_config();
    Rng rng(1);
    const auto head = metalearn::Head::init(mc.mode, mc.head, rng);
    const auto r0 = metalearn::meta_train(trained().store, trained().pretrained.model, head.clone(), mc);
    CHECK(r0.log.empty());
    for (std::size_t i = 0; i < head.theta().size(); ++i) CHECK(r0.head.theta()[i].to_vector() == head.theta()[i].to_vector());

    mc.meta.iterations = 3;
    const auto a = metalearn::meta_train(trained().store, trained().pretrained.model, head.clone(), mc);
    const auto b = metalearn::meta_train(trained().store, trained().pretrained.model, head.clone(), mc);
    for (std::size_t i = 0; i < head.theta().size(); ++i) CHECK(a.head.theta()[i].to_vector() == b.head.theta()[i].to_vector());
  }
}
