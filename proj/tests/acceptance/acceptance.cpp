// Acceptance suite: one PASS/FAIL line per criterion.
//
//   muvfs_acceptance [criterion ...] [--work DIR]
//
// With no criteria listed all nine run. Exit status is 0 only if every
// selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "muvfs/a3m.hpp"
#include "muvfs/commands.hpp"
#include "muvfs/config.hpp"
#include "muvfs/contrastive.hpp"
#include "muvfs/gradcheck.hpp"
#include "muvfs/metalearn.hpp"
#include "muvfs/mining.hpp"
#include "muvfs/random.hpp"
#include "muvfs/synthvid.hpp"

#ifndef MUVFS_SOURCE_DIR
#define MUVFS_SOURCE_DIR "."
#endif

namespace fs = std::filesystem;
using namespace muvfs;
using config::RunConfig;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

fs::path g_work;

// --- 1: gradient correctness ------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  RunConfig c;
  const auto r = commands::cmd_gradcheck(c);
  const double secs = since(t0);
  double worst_first = 0, worst_double = 0;
  std::size_t n = 0;
  for (const auto& check : r.summary["checks"]) {
    ++n;
    const double e = check["max_rel_error"].get<double>();
    const bool dbl = check["tolerance"].get<double>() > 1e-4;
    (dbl ? worst_double : worst_first) = std::max(dbl ? worst_double : worst_first, e);
  }
  std::ostringstream d;
  d << n << " checks x " << c.gradcheck.seeds << " seeds, worst first-order " << fmt("%.2e", worst_first)
    << " (< 1e-4), worst double-backprop " << fmt("%.2e", worst_double) << " (< 1e-3), " << fmt("%.1f", secs) << "s";
  if (r.exit_code != 0) d << "; failing: " << r.message.substr(r.message.rfind(':') + 1);
  return {r.exit_code == 0 && secs < 60.0, d.str()};
}

// --- 2: closed-form oracles -------------------------------------------------

// Direct evaluation of the NT-Xent definition with plain loops.
double nt_xent_brute(const std::vector<std::vector<double>>& z, double tau) {
  const std::size_t n = z.size();
  auto cosine = [&](std::size_t i, std::size_t j) {
    double dot = 0, a = 0, b = 0;
    for (std::size_t k = 0; k < z[i].size(); ++k) dot += z[i][k] * z[j][k], a += z[i][k] * z[i][k], b += z[j][k] * z[j][k];
    return dot / std::sqrt(a * b);
  };
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pos = i ^ 1u;
    double denom = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k != i) denom += std::exp(cosine(i, k) / tau);
    }
    total += -std::log(std::exp(cosine(i, pos) / tau) / denom);
  }
  return total / static_cast<double>(n);
}

Tensor rows(const std::vector<std::vector<double>>& z) {
  std::vector<double> flat;
  for (const auto& r : z) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor({z.size(), z[0].size()}, flat);
}

Outcome closed_form_oracles() {
  std::vector<std::string> failed;
  std::ostringstream d;
  auto expect = [&](const std::string& name, double got, double want, double tol) {
    if (!(std::abs(got - want) <= tol)) failed.push_back(name + "=" + fmt("%.12g", got));
  };

  // NT-Xent: one pair is zero for any embeddings; the N=2 example matches enumeration.
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    const Tensor z = Tensor::randn({2, 5}, 1.0, rng);
    expect("nt_xent_single_pair", contrastive::nt_xent(z, uniform_real(rng, 0.05, 2.0)).item(), 0.0, 1e-12);
  }
  const std::vector<std::vector<double>> z2 = {{1, 0}, {1, 0}, {0, 1}, {0, 1}};
  const double brute = nt_xent_brute(z2, 1.0);
  const double hand = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
  const double got = contrastive::nt_xent(rows(z2), 1.0).item();
  expect("nt_xent_n2", got, brute, 1e-9);
  expect("nt_xent_n2_hand", brute, hand, 1e-12);
  d << "nt_xent N=2 " << fmt("%.6f", got);

  // Attention: scaled scores (0, ln 2) give a = (1/3, 2/3).
  a3m::A3MParameters p;
  const double l2 = 2.0 * std::log(2.0);
  p.K = Tensor({2, 4}, {0, 0, 0, 0, l2, 0, 0, 0});
  p.Q = Tensor({2, 4}, {1, 0, 0, 0, 0, 0, 0, 0});
  p.V = Tensor({2, 2}, {1, 0, 0, 1});
  const auto rec = a3m::attend(Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {1, 0}), p);
  expect("attention_a1", rec.a.data()[0], 1.0 / 3.0, 1e-12);
  expect("attention_a2", rec.a.data()[1], 2.0 / 3.0, 1e-12);
  d << ", a=(" << fmt("%.12f", rec.a.data()[0]) << ", " << fmt("%.12f", rec.a.data()[1]) << ")";

  // Symmetric KL of (0.75, 0.25) against (0.5, 0.5).
  const double skl = contrastive::symmetric_kl(Tensor({1, 2}, {0.75, 0.25}), Tensor({1, 2}, {0.5, 0.5})).item();
  const double skl_direct = 0.75 * std::log(1.5) + 0.25 * std::log(0.5) + 0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(2.0);
  expect("symmetric_kl", skl, skl_direct, 1e-6);
  // The two directed terms, each to the four digits it is usually quoted with.
  expect("kl_pq", 0.75 * std::log(1.5) + 0.25 * std::log(0.5), 0.1308, 5e-5);
  expect("kl_qp", 0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(2.0), 0.1438, 5e-5);
  d << ", skl " << fmt("%.6f", skl);

  // MAML on L = theta^2 / 2 at theta = 1, alpha = 0.1.
  for (auto order : {metalearn::MetaOrder::Second, metalearn::MetaOrder::First}) {
    metalearn::EpisodeLosses e;
    e.support = [](const std::vector<Tensor>& th) { return scale(mul(th[0], th[0]), 0.5); };
    e.query = e.support;
    const auto mg = metalearn::meta_gradient({Tensor::scalar(1.0, true)}, {e}, 0.1, 1, order);
    const double want = order == metalearn::MetaOrder::Second ? 0.81 : 0.9;
    expect(order == metalearn::MetaOrder::Second ? "maml_second" : "maml_first", mg.grads[0].item(), want, 1e-12);
    d << (order == metalearn::MetaOrder::Second ? ", maml " : "/") << fmt("%.12g", mg.grads[0].item());
  }

  // Confidence interval of [1, 0, 1, 1].
  const auto ci = metalearn::accuracy_ci({1, 0, 1, 1});
  expect("ci_mean", ci.mean, 75.0, 1e-9);
  expect("ci_halfwidth", ci.halfwidth, 49.0, 1e-9);
  d << ", ci " << ci.format();

  if (!failed.empty()) {
    d << "; mismatches:";
    for (const auto& f : failed) d << " " << f;
  }
  return {failed.empty(), d.str()};
}

// --- 3: mining oracle -------------------------------------------------------

std::set<std::int64_t> brute_lowest(const std::vector<std::int64_t>& ids, const std::vector<double>& s, std::size_t n) {
  std::vector<std::pair<double, std::int64_t>> v;
  for (std::size_t i = 0; i < ids.size(); ++i) v.push_back({s[i], ids[i]});
  std::sort(v.begin(), v.end());
  std::set<std::int64_t> out;
  for (std::size_t i = 0; i < n; ++i) out.insert(v[i].second);
  return out;
}

Outcome mining_oracle() {
  Rng rng(2024);
  std::size_t mismatches = 0, with_default_n = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    mining::MiningConfig cfg;
    cfg.way = 5;
    cfg.n = trial % 4 == 0 ? 32 : 5 + uniform_index(rng, 28);
    cfg.mining_batch = 2 * cfg.n + uniform_index(rng, 64);
    if (cfg.n == 32) ++with_default_n;
    cfg.exploration_fraction = trial % 3 == 0 ? 0.10 : uniform_real(rng, 0.0, 0.5);
    const std::size_t M = cfg.mining_batch;
    mining::AgreementScores sc;
    auto ids = sample_without_replacement(rng, 10 * M, M);
    for (auto i : ids) sc.ids.push_back(static_cast<std::int64_t>(i));
    for (std::size_t i = 0; i < M; ++i) {
      // Coarse values force ties, which must resolve to the lower id.
      const bool coarse = trial % 5 == 0;
      sc.ap.push_back(coarse ? std::round(uniform_real(rng, -1, 1) * 4) / 4 : uniform_real(rng, -1, 1));
      sc.act.push_back(coarse ? std::round(uniform_real(rng, -1, 1) * 4) / 4 : uniform_real(rng, -1, 1));
    }
    Rng pool_rng(static_cast<std::uint64_t>(trial));
    const auto pool = mining::mine_hard(sc, cfg, pool_rng);

    std::set<std::int64_t> base = brute_lowest(sc.ids, sc.ap, cfg.n);
    const auto act = brute_lowest(sc.ids, sc.act, cfg.n);
    base.insert(act.begin(), act.end());
    const std::size_t extras = std::min<std::size_t>(static_cast<std::size_t>(std::ceil(cfg.exploration_fraction * base.size() - 1e-9)),
                                                     M - base.size());
    std::set<std::int64_t> got_base, got_extra;
    for (const auto& m : pool.members) (m.selected_by == "exploration" ? got_extra : got_base).insert(m.video_id);
    bool ok = got_base == base && got_extra.size() == extras && pool.members.size() == base.size() + extras;
    for (auto id : got_extra) ok = ok && !base.count(id) && std::find(sc.ids.begin(), sc.ids.end(), id) != sc.ids.end();
    if (!ok) ++mismatches;
  }
  return {mismatches == 0, "1000 randomized score sets (" + std::to_string(with_default_n) + " with n=32), " +
                               std::to_string(mismatches) + " mismatches against the sort oracle"};
}

// --- 4: protocol invariants -------------------------------------------------

Outcome protocol_invariants() {
  const auto t0 = Clock::now();
  synthvid::DatasetSpec spec;
  const auto manifest = synthvid::make_manifest(spec);
  const auto items = mining::novel_items(manifest);
  mining::TestSampling ts;
  ts.episodes = 10000;
  Rng rng(4);
  const auto episodes = mining::sample_test_episodes(items, ts, rng);
  std::size_t bad = 0;
  for (const auto& e : episodes) {
    std::map<int, int> queries_per_class;
    for (const auto& q : e.query) ++queries_per_class[q.label];
    bool one_each = queries_per_class.size() == e.way;
    for (const auto& [_, n] : queries_per_class) one_each = one_each && n == 1;
    if (!mining::check_episode(e, 1, 1).empty() || !one_each || e.support.size() != 5) ++bad;
  }

  // Meta-test refresh: theta is bit-identical after finetuning episodes.
  Rng hr(5);
  a3m::A3MConfig ac;
  auto head = metalearn::Head::init(metalearn::FeatureMode::A3M, ac, hr);
  for (auto& t : head.params.list()) {
    for (auto& v : t.mutable_data()) v += 0.01 * std::normal_distribution<double>()(hr);
  }
  std::vector<std::vector<double>> before;
  for (const auto& t : head.theta()) before.push_back(t.to_vector());
  metalearn::EmbeddingTable table;
  std::vector<std::int64_t> ids;
  for (const auto& it : items) ids.push_back(it.video_id);
  const std::size_t n = ids.size();
  table.ap_frames = Tensor::randn({n, 8, ac.embed_dim}, 1.0, hr);
  table.ap_mean = mean(table.ap_frames, 1);
  table.act = Tensor::randn({n, ac.embed_dim}, 1.0, hr);
  for (std::size_t i = 0; i < n; ++i) table.row[ids[i]] = i;
  std::vector<mining::Episode> few(episodes.begin(), episodes.begin() + 50);
  metalearn::TestProtocol tp;
  metalearn::meta_test(head, table, few, tp);
  bool identical = true;
  const auto after = head.theta();
  for (std::size_t i = 0; i < after.size(); ++i) {
    const auto v = after[i].to_vector();
    identical = identical && std::memcmp(v.data(), before[i].data(), v.size() * sizeof(double)) == 0;
  }
  const double secs = since(t0);
  return {bad == 0 && identical && episodes.size() == 10000 && secs < 120.0,
          std::to_string(episodes.size()) + " episodes, " + std::to_string(bad) + " invalid; theta " +
              (identical ? "bit-identical" : "CHANGED") + " after 50 finetuned episodes; " + fmt("%.1f", secs) + "s"};
}

// --- 5: ProtoMAML / ProtoNet identity ---------------------------------------

Outcome proto_identity() {
  Rng rng(5);
  a3m::A3MConfig ac;
  ac.embed_dim = 16, ac.d_k = 8, ac.d_v = 16;
  std::size_t disagreements = 0, decisions = 0;
  for (int e = 0; e < 1000; ++e) {
    const std::size_t way = 5, shot = 1 + uniform_index(rng, 3);
    const auto head = metalearn::Head::init(metalearn::FeatureMode::A3M, ac, rng);
    auto batch = [&](std::size_t per_class) {
      metalearn::ItemBatch b;
      const std::size_t n = way * per_class;
      b.ap_frames = Tensor::randn({n, 4, ac.embed_dim}, 1.0, rng);
      b.ap_mean = mean(b.ap_frames, 1);
      b.act = Tensor::randn({n, ac.embed_dim}, 1.0, rng);
      for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<int>(i % way));
      return b;
    };
    const auto support = batch(shot), query = batch(1);
    NoGradGuard no_grad;
    const Tensor fs_ = l2_normalize(metalearn::features(head, support));
    const Tensor fq = l2_normalize(metalearn::features(head, query));
    const auto proto_pred = metalearn::protonet_predict(fs_, support.labels, fq, way);
    Tensor W, b;
    metalearn::protomaml_init(metalearn::prototypes(fs_, support.labels, way), W, b);
    metalearn::Head init = head;
    init.params.W = W, init.params.b = b;
    const auto maml_pred = metalearn::predict(metalearn::logits(init, query));
    for (std::size_t i = 0; i < proto_pred.size(); ++i, ++decisions) disagreements += proto_pred[i] != maml_pred[i];
  }
  return {disagreements == 0, std::to_string(decisions) + " query decisions over 1000 episodes, " + std::to_string(disagreements) +
                                  " disagreements"};
}

// --- 6-8: desk-scale experiment ---------------------------------------------

struct SeedResults {
  double action = 0, appearance = 0, concat = 0, full = 0, random_episodes = 0;
  double motion_sep_action = 0, motion_sep_appearance = 0;
  double appearance_sep_action = 0, appearance_sep_appearance = 0;
  std::map<std::size_t, double> full_by_way;
};

struct Desk {
  bool ran = false;
  std::string error;
  double seconds = 0;
  std::vector<SeedResults> seeds;
};

Desk g_desk;

void must(int code, const std::string& what) {
  if (code != 0) throw std::runtime_error(what + " exited with " + std::to_string(code));
}

std::map<std::size_t, double> evaluate(RunConfig c, const std::string& tag, const std::map<std::string, std::string>& sets) {
  c.set("paths.eval", (fs::path(c.paths.out) / ("eval_" + tag)).string());
  for (const auto& [k, v] : sets) c.set(k, v);
  c.validate();
  std::ostringstream out, err;
  must(commands::run_command("evaluate", c, out, err), "evaluate " + tag + ": " + err.str());
  std::ifstream in(fs::path(c.paths.eval_dir()) / "eval.json");
  const auto j = nlohmann::json::parse(in);
  std::map<std::size_t, double> acc;
  for (const auto& r : j["reports"]) acc[r["way"].get<std::size_t>()] = r["mean_acc"].get<double>();
  std::cout << "  seed " << c.seed << " " << tag << ": " << out.str() << std::flush;
  return acc;
}

void run_desk() {
  if (g_desk.ran) return;
  g_desk.ran = true;
  const auto t0 = Clock::now();
  try {
    const RunConfig base = RunConfig::load(fs::path(MUVFS_SOURCE_DIR) / "configs" / "desk.conf");
    for (std::uint64_t seed : {1, 2, 3}) {
      RunConfig c = base;
      c.set("run.seed", std::to_string(seed));
      c.set("paths.out", (g_work / ("desk_seed" + std::to_string(seed))).string());
      c.validate();
      std::ostringstream out, err;
      must(commands::run_command("generate", c, out, err), "generate");
      must(commands::run_command("pretrain", c, out, err), "pretrain");
      RunConfig hard = c, random = c;
      hard.set("paths.meta", (fs::path(c.paths.out) / "meta_hard").string());
      random.set("paths.meta", (fs::path(c.paths.out) / "meta_random").string());
      random.set("meta.hard_episodes", "false");
      must(commands::run_command("metatrain", hard, out, err), "metatrain (hard)");
      must(commands::run_command("metatrain", random, out, err), "metatrain (random)");

      SeedResults r;
      r.action = evaluate(c, "action", {{"eval.ablation", "action-only"}})[5];
      r.appearance = evaluate(c, "appearance", {{"eval.ablation", "appearance-only"}})[5];
      r.concat = evaluate(c, "concat", {{"eval.ablation", "concat-no-a3m"}})[5];
      r.full_by_way = evaluate(hard, "full", {{"eval.ablation", "full"}, {"eval.ways", "5,10,20"}});
      r.full = r.full_by_way[5];
      r.random_episodes = evaluate(random, "random", {{"eval.ablation", "no-hard-episodes"}})[5];
      r.motion_sep_action = evaluate(c, "motion_action", {{"eval.ablation", "action-only"}, {"eval.separable", "motion"}})[5];
      r.motion_sep_appearance =
          evaluate(c, "motion_appearance", {{"eval.ablation", "appearance-only"}, {"eval.separable", "motion"}})[5];
      r.appearance_sep_action =
          evaluate(c, "appearance_action", {{"eval.ablation", "action-only"}, {"eval.separable", "appearance"}})[5];
      r.appearance_sep_appearance =
          evaluate(c, "appearance_appearance", {{"eval.ablation", "appearance-only"}, {"eval.separable", "appearance"}})[5];
      g_desk.seeds.push_back(r);
    }
  } catch (const std::exception& e) {
    g_desk.error = e.what();
  }
  g_desk.seconds = since(t0);
}

double mean_of(const std::function<double(const SeedResults&)>& f) {
  double s = 0;
  for (const auto& r : g_desk.seeds) s += f(r);
  return s / static_cast<double>(g_desk.seeds.size());
}

Outcome table2_direction() {
  run_desk();
  if (!g_desk.error.empty()) return {false, "experiment failed: " + g_desk.error};
  const double act = mean_of([](auto& r) { return r.action; }), app = mean_of([](auto& r) { return r.appearance; });
  const double cat = mean_of([](auto& r) { return r.concat; }), full = mean_of([](auto& r) { return r.full; });
  const double rnd = mean_of([](auto& r) { return r.random_episodes; });
  const bool a = cat - act >= 2.0 && cat - app >= 2.0;
  const bool b = full - cat >= 1.0;
  const bool c = full - rnd >= 1.0;
  std::ostringstream d;
  d << "3 seeds x 2000 episodes: action " << fmt("%.2f", act) << ", appearance " << fmt("%.2f", app) << ", concat "
    << fmt("%.2f", cat) << ", a3m+hard " << fmt("%.2f", full) << ", a3m+random " << fmt("%.2f", rnd) << "; (a) "
    << (a ? "ok" : "FAIL") << " (b) " << (b ? "ok" : "FAIL") << " (c) " << (c ? "ok" : "FAIL") << "; experiment "
    << fmt("%.0f", g_desk.seconds) << "s";
  return {a && b && c && g_desk.seconds < 1800.0, d.str()};
}

Outcome stream_specialization() {
  run_desk();
  if (!g_desk.error.empty()) return {false, "experiment failed: " + g_desk.error};
  const double ma = mean_of([](auto& r) { return r.motion_sep_action; });
  const double mp = mean_of([](auto& r) { return r.motion_sep_appearance; });
  const double aa = mean_of([](auto& r) { return r.appearance_sep_action; });
  const double ap = mean_of([](auto& r) { return r.appearance_sep_appearance; });
  std::ostringstream d;
  d << "motion-separable: action " << fmt("%.2f", ma) << " vs appearance " << fmt("%.2f", mp) << "; appearance-separable: appearance "
    << fmt("%.2f", ap) << " vs action " << fmt("%.2f", aa);
  return {ma - mp >= 5.0 && ap - aa >= 5.0, d.str()};
}

Outcome many_way() {
  run_desk();
  if (!g_desk.error.empty()) return {false, "experiment failed: " + g_desk.error};
  const double w5 = mean_of([](auto& r) { return r.full_by_way.at(5); });
  const double w10 = mean_of([](auto& r) { return r.full_by_way.at(10); });
  const double w20 = mean_of([](auto& r) { return r.full_by_way.at(20); });
  return {w5 - w10 >= 2.0 && w10 - w20 >= 2.0,
          "full model: 5-way " + fmt("%.2f", w5) + ", 10-way " + fmt("%.2f", w10) + ", 20-way " + fmt("%.2f", w20)};
}

// --- 9: determinism ---------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "run_meta.json") continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    files[fs::relative(e.path(), root).string()] = ss.str();
  }
  return files;
}

Outcome determinism() {
  std::vector<std::map<std::string, std::string>> runs;
  std::vector<std::string> stdout_runs;
  for (int run = 0; run < 2; ++run) {
    // The second run shards evaluation across workers; results must not change.
    setenv("MUVFS_THREADS", run == 0 ? "1" : "3", 1);
    RunConfig c = RunConfig::parse(
        "data.videos_per_class = 3\npretrain.epochs = 2\npretrain.batch_size = 16\nmeta.iterations = 3\n"
        "mining.n = 8\nmining.mining_batch = 32\neval.episodes = 100\neval.ways = 5,10\ngradcheck.seeds = 3\n");
    c.set("run.seed", "9");
    // Same config means same paths, so both runs share one directory.
    const fs::path root = g_work / "determinism";
    fs::remove_all(root);
    c.set("paths.out", root.string());
    std::ostringstream out, err;
    for (const auto& cmd : commands::command_names()) {
      if (commands::run_command(cmd, c, out, err) != 0) {
        unsetenv("MUVFS_THREADS");
        return {false, cmd + " failed: " + err.str()};
      }
    }
    c.set("eval.learner", "baselinepp");
    c.set("paths.eval", (fs::path(c.paths.out) / "eval_baselinepp").string());
    commands::run_command("evaluate", c, out, err);
    runs.push_back(snapshot(c.paths.out));
    stdout_runs.push_back(out.str());
  }
  unsetenv("MUVFS_THREADS");
  std::size_t differing = 0;
  for (const auto& [name, bytes] : runs[0]) {
    const auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != bytes) ++differing;
  }
  const bool same = differing == 0 && runs[0].size() == runs[1].size() && stdout_runs[0] == stdout_runs[1];
  return {same, std::to_string(runs[0].size()) + " output files compared across two runs (1 vs 3 workers), " +
                    std::to_string(differing) + " differ; command output " + (stdout_runs[0] == stdout_runs[1] ? "identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  g_work = fs::temp_directory_path() / "muvfs_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      g_work = argv[++i];
    } else {
      selected.insert(std::stoi(a));
    }
  }
  std::error_code ec;
  fs::remove_all(g_work, ec);
  fs::create_directories(g_work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"closed-form oracles", closed_form_oracles},
      {"mining oracle equivalence", mining_oracle},
      {"protocol invariants", protocol_invariants},
      {"ProtoMAML/ProtoNet identity", proto_identity},
      {"directional ablation ordering", table2_direction},
      {"stream specialization", stream_specialization},
      {"many-way monotonicity", many_way},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
