#include "muvfs/metalearn.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "muvfs/parallel.hpp"
#include "muvfs/sampling.hpp"

namespace muvfs::metalearn {

namespace {

std::vector<Tensor> as_leaves(const std::vector<Tensor>& ts) {
  std::vector<Tensor> out;
  out.reserve(ts.size());
  for (const auto& t : ts) out.emplace_back(t.shape(), t.to_vector(), true);
  return out;
}

// theta - lr * g as fresh leaves.
std::vector<Tensor> gd_step(const std::vector<Tensor>& theta, const std::vector<Tensor>& g, double lr) {
  std::vector<Tensor> out;
  out.reserve(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    std::vector<double> v = theta[i].to_vector();
    auto gd = g[i].data();
    for (std::size_t j = 0; j < v.size(); ++j) v[j] -= lr * gd[j];
    out.emplace_back(theta[i].shape(), std::move(v), true);
  }
  return out;
}

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> r;
  for (std::size_t i = begin; i < end; ++i) r.push_back(i);
  return r;
}

ItemBatch slice(const ItemBatch& all, std::size_t begin, std::size_t end) {
  const auto rows = range(begin, end);
  ItemBatch b;
  b.ap_frames = index_rows(all.ap_frames, rows);
  b.ap_mean = index_rows(all.ap_mean, rows);
  b.act = index_rows(all.act, rows);
  b.labels.assign(all.labels.begin() + static_cast<std::ptrdiff_t>(begin), all.labels.begin() + static_cast<std::ptrdiff_t>(end));
  return b;
}

// Feature rows for the prototype learners: the classifier input, normalized.
Tensor proto_features(const Head& head, const ItemBatch& batch) { return l2_normalize(features(head, batch)); }

Tensor cosine_logits(const Tensor& h, const Tensor& W, const Tensor& s) {
  return mul(matmul(l2_normalize(h), l2_normalize(transpose(W)), false, true), s);
}

}  // namespace

FeatureMode parse_feature_mode(const std::string& name) {
  if (name == "a3m") return FeatureMode::A3M;
  if (name == "concat") return FeatureMode::Concat;
  if (name == "action-only") return FeatureMode::ActionOnly;
  if (name == "appearance-only") return FeatureMode::AppearanceOnly;
  throw std::invalid_argument("unknown feature mode '" + name + "'");
}

std::string to_string(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::A3M: return "a3m";
    case FeatureMode::Concat: return "concat";
    case FeatureMode::ActionOnly: return "action-only";
    case FeatureMode::AppearanceOnly: return "appearance-only";
  }
  return "?";
}

Learner parse_learner(const std::string& name) {
  if (name == "maml") return Learner::Maml;
  if (name == "protonet") return Learner::ProtoNet;
  if (name == "protomaml") return Learner::ProtoMaml;
  if (name == "baselinepp") return Learner::BaselinePP;
  throw std::invalid_argument("unknown learner '" + name + "' (expected maml, protonet, protomaml or baselinepp)");
}

std::string to_string(Learner learner) {
  switch (learner) {
    case Learner::Maml: return "maml";
    case Learner::ProtoNet: return "protonet";
    case Learner::ProtoMaml: return "protomaml";
    case Learner::BaselinePP: return "baselinepp";
  }
  return "?";
}

MetaOrder parse_meta_order(const std::string& name) {
  if (name == "first") return MetaOrder::First;
  if (name == "second") return MetaOrder::Second;
  throw std::invalid_argument("unknown meta order '" + name + "' (expected first or second)");
}

std::string to_string(MetaOrder order) { return order == MetaOrder::Second ? "second" : "first"; }

Head Head::init(FeatureMode mode, const a3m::A3MConfig& config, Rng& rng) {
  Head h;
  h.mode = mode;
  if (mode == FeatureMode::A3M) {
    h.params = a3m::A3MParameters::init(config, rng);
  } else {
    const std::size_t d = mode == FeatureMode::Concat ? 2 * config.embed_dim : config.embed_dim;
    h.params.W = Tensor::zeros({d, config.way}, true);
    if (config.bias) h.params.b = Tensor::zeros({config.way}, true);
  }
  return h;
}

std::size_t Head::feature_width() const { return params.W.size(0); }

Head Head::with_theta(const std::vector<Tensor>& theta) const {
  return {mode, a3m::A3MParameters::from_list(theta, params.has_heads(), params.b.defined())};
}

Tensor features(const Head& head, const ItemBatch& batch) {
  switch (head.mode) {
    case FeatureMode::A3M: return a3m::attend(batch.ap_frames, batch.act, head.params).h;
    case FeatureMode::Concat: return concat({l2_normalize(batch.ap_mean), l2_normalize(batch.act)}, 1);
    case FeatureMode::ActionOnly: return batch.act;
    case FeatureMode::AppearanceOnly: return batch.ap_mean;
  }
  throw std::logic_error("features: bad mode");
}

Tensor logits(const Head& head, const ItemBatch& batch) { return a3m::classify(features(head, batch), head.params); }

Tensor loss(const Head& head, const ItemBatch& batch) { return cross_entropy(logits(head, batch), batch.labels); }

std::vector<int> predict(const Tensor& logits) {
  const std::size_t n = logits.size(0), c = logits.size(1);
  auto d = logits.data();
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = d.data() + i * c;
    out[i] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels) {
  if (predicted.size() != labels.size() || labels.empty()) throw std::invalid_argument("accuracy: size mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<Tensor> inner_adapt(const std::vector<Tensor>& theta, const LossFn& support_loss, double alpha,
                                std::size_t steps, bool create_graph) {
  if (alpha < 0.0) throw std::invalid_argument("inner_adapt: alpha must be non-negative");
  std::vector<Tensor> cur = theta;
  bool stepped = false;
  for (std::size_t s = 0; s < steps; ++s) {
    const Tensor l = support_loss(cur);
    if (!l.defined()) break;  // objective without an inner loop
    stepped = true;
    if (!std::isfinite(l.item())) throw NonFiniteError("inner_adapt: non-finite support loss");
    const auto g = grad(l, cur, {.create_graph = create_graph});
    if (create_graph) {
      std::vector<Tensor> next;
      for (std::size_t i = 0; i < cur.size(); ++i) next.push_back(sub(cur[i], scale(g[i], alpha)));
      cur = std::move(next);
    } else {
      cur = gd_step(cur, g, alpha);
    }
  }
  if (!create_graph && !stepped) return as_leaves(theta);
  return cur;
}

MetaGradient meta_gradient(const std::vector<Tensor>& theta, const std::vector<EpisodeLosses>& episodes, double alpha,
                           std::size_t inner_steps, MetaOrder order) {
  if (episodes.empty()) throw std::invalid_argument("meta_gradient: no episodes");
  MetaGradient out;
  for (const auto& t : theta) out.grads.push_back(Tensor::zeros(t.shape()));
  std::size_t with_accuracy = 0;
  for (const auto& e : episodes) {
    std::vector<Tensor> g;
    std::vector<Tensor> adapted;
    if (order == MetaOrder::Second) {
      const std::vector<Tensor> start = as_leaves(theta);
      adapted = inner_adapt(start, e.support, alpha, inner_steps, true);
      const Tensor lq = e.query(adapted);
      out.query_loss += lq.item();
      g = grad(lq, start);
    } else {
      std::vector<Tensor> start = as_leaves(theta);
      adapted = inner_adapt(start, e.support, alpha, inner_steps, false);
      const Tensor lq = e.query(adapted);
      out.query_loss += lq.item();
      g = grad(lq, adapted);
    }
    if (e.query_accuracy) {
      NoGradGuard no_grad;
      std::vector<Tensor> plain;
      for (const auto& a : adapted) plain.push_back(a.detach());
      out.query_accuracy += e.query_accuracy(plain);
      ++with_accuracy;
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      std::vector<double> acc = out.grads[i].to_vector();
      auto gd = g[i].data();
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += gd[j];
      out.grads[i] = Tensor(theta[i].shape(), std::move(acc));
    }
  }
  out.query_loss /= static_cast<double>(episodes.size());
  if (with_accuracy) out.query_accuracy /= static_cast<double>(with_accuracy);
  return out;
}

Tensor prototypes(const Tensor& feats, const std::vector<int>& labels, std::size_t way) {
  if (feats.dim() != 2 || feats.size(0) != labels.size()) throw ShapeError("prototypes: features do not match labels");
  std::vector<double> inv(way, 0.0);
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= way) throw std::out_of_range("prototypes: label out of range");
    inv[static_cast<std::size_t>(l)] += 1.0;
  }
  for (std::size_t c = 0; c < way; ++c) {
    if (inv[c] == 0.0) throw std::invalid_argument("prototypes: class " + std::to_string(c) + " has no support items");
    inv[c] = 1.0 / inv[c];
  }
  const Tensor sums = matmul(one_hot(labels, way), feats, true, false);
  return mul(sums, Tensor({way, 1}, std::move(inv)));
}

std::vector<int> protonet_predict(const Tensor& support_features, const std::vector<int>& support_labels,
                                  const Tensor& query_features, std::size_t way) {
  const Tensor p = prototypes(support_features, support_labels, way);
  const std::size_t d = p.size(1);
  if (query_features.dim() != 2 || query_features.size(1) != d) throw ShapeError("protonet_predict: width mismatch");
  auto pd = p.data();
  auto qd = query_features.data();
  std::vector<int> out(query_features.size(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    double best = 0;
    for (std::size_t c = 0; c < way; ++c) {
      double dist = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = qd[i * d + j] - pd[c * d + j];
        dist += diff * diff;
      }
      if (c == 0 || dist < best) best = dist, out[i] = static_cast<int>(c);
    }
  }
  return out;
}

Tensor proto_loss(const Tensor& support_features, const std::vector<int>& support_labels, const Tensor& query_features,
                  const std::vector<int>& query_labels, std::size_t way) {
  const Tensor p = prototypes(support_features, support_labels, way);
  const Tensor qq = sum(mul(query_features, query_features), 1, true);
  const Tensor pp = reshape(sum(mul(p, p), 1), {1, way});
  const Tensor dist = add(sub(qq, scale(matmul(query_features, p, false, true), 2.0)), pp);
  return cross_entropy(neg(dist), query_labels);
}

void protomaml_init(const Tensor& protos, Tensor& W, Tensor& b) {
  W = transpose(scale(protos, 2.0));
  b = neg(sum(mul(protos, protos), 1));
}

void MetaConfig::validate() const {
  if (!(alpha > 0.0) || !(beta > 0.0)) throw std::invalid_argument("meta: alpha and beta must be positive");
  if (episodes_per_iter < 1) throw std::invalid_argument("meta: episodes_per_iter must be at least 1");
  if (inner_steps < 1) throw std::invalid_argument("meta: inner_steps must be at least 1");
  if (!(final_lr_ratio > 0.0 && final_lr_ratio <= 1.0)) throw std::invalid_argument("meta: final_lr_ratio must lie in (0, 1]");
}

std::string iteration_log_csv(const std::vector<IterationLog>& log) {
  std::ostringstream out;
  out << "iteration,query_loss,query_accuracy,lr,pool_size\n" << std::setprecision(10);
  for (const auto& r : log) out << r.iteration << ',' << r.query_loss << ',' << r.query_accuracy << ',' << r.lr << ',' << r.pool_size << '\n';
  return out.str();
}

namespace {

ItemBatch embed_views(const streams::TwoStreamModel& model, const std::vector<synthvid::View>& ap,
                      const std::vector<synthvid::View>& act) {
  NoGradGuard no_grad;
  std::vector<const synthvid::Frames*> ap_ptr, act_ptr;
  for (std::size_t i = 0; i < ap.size(); ++i) ap_ptr.push_back(&ap[i].frames), act_ptr.push_back(&act[i].frames);
  const auto e = streams::embed(model, ap_ptr, act_ptr);
  return {e.ap_frames, e.ap_mean, e.act, {}};
}

}  // namespace

ItemBatch embed_instance_items(const synthvid::VideoStore& store, const streams::TwoStreamModel& model,
                               const std::vector<mining::EpisodeItem>& items, const synthvid::AugmentationConfig& aug) {
  if (items.empty()) throw std::invalid_argument("embed_instance_items: no items");
  const auto ap_scheme = model.config().appearance();
  const auto act_scheme = model.config().action();
  std::vector<synthvid::View> ap(items.size()), act(items.size());
  parallel_for(items.size(), worker_count(), [&](std::size_t i) {
    const auto& video = store.video(items[i].video_id);
    Rng rng(items[i].view_seed);
    ap[i] = synthvid::make_view(video, ap_scheme, aug, rng);
    act[i] = synthvid::make_view(video, act_scheme, aug, rng);
  });
  ItemBatch b = embed_views(model, ap, act);
  for (const auto& it : items) b.labels.push_back(it.label);
  return b;
}

MetaTrainer::MetaTrainer(Head head, const MetaConfig& config)
    : head_(std::move(head)), config_(config), optimizer_(config.optimizer, head_.theta()) {
  config_.validate();
  schedule_ = {ScheduleKind::CosineAnnealing, 0, config.beta, config.beta * config.final_lr_ratio,
               std::max<std::size_t>(config.iterations, 1)};
}

MetaGradient MetaTrainer::step(const std::vector<EpisodeLosses>& episodes) {
  MetaGradient mg = meta_gradient(head_.theta(), episodes, config_.alpha, config_.inner_steps, config_.order);
  last_lr_ = lr_at(schedule_, iteration_);
  optimizer_.step(mg.grads, last_lr_);
  ++iteration_;
  return mg;
}

EpisodeLosses instance_episode_losses(const Head& head, const ItemBatch& support, const ItemBatch& query,
                                      std::size_t way, Learner objective) {
  EpisodeLosses e;
  const Head shape = head;
  if (objective == Learner::ProtoNet) {
    e.support = [](const std::vector<Tensor>&) { return Tensor(); };
    e.query = [shape, support, query, way](const std::vector<Tensor>& theta) {
      const Head h = shape.with_theta(theta);
      return proto_loss(proto_features(h, support), support.labels, proto_features(h, query), query.labels, way);
    };
    e.query_accuracy = [shape, support, query, way](const std::vector<Tensor>& theta) {
      const Head h = shape.with_theta(theta);
      return accuracy(protonet_predict(proto_features(h, support), support.labels, proto_features(h, query), way), query.labels);
    };
    return e;
  }
  const bool proto_init = objective == Learner::ProtoMaml;
  // ProtoMAML re-seeds the classifier from the support prototypes before adapting.
  auto effective = [shape, support, way, proto_init](const std::vector<Tensor>& theta) {
    Head h = shape.with_theta(theta);
    if (proto_init) {
      const Tensor p = prototypes(proto_features(h, support), support.labels, way);
      protomaml_init(p, h.params.W, h.params.b);
    }
    return h;
  };
  e.support = [effective, support](const std::vector<Tensor>& theta) { return loss(effective(theta), support); };
  e.query = [shape, query](const std::vector<Tensor>& theta) { return loss(shape.with_theta(theta), query); };
  e.query_accuracy = [shape, query](const std::vector<Tensor>& theta) {
    return accuracy(predict(logits(shape.with_theta(theta), query)), query.labels);
  };
  return e;
}

MetaTrainResult meta_train(const synthvid::VideoStore& store, const streams::TwoStreamModel& model, Head head,
                           const MetaTrainConfig& config) {
  config.meta.validate();
  config.mining.validate();
  MetaTrainResult result;
  MetaTrainer trainer(std::move(head), config.meta);
  const auto train_ids = store.ids(synthvid::Split::UnlabeledTrain);
  Rng rng(derive_seed(config.seed, {0x3e7aull}));
  const std::size_t m = std::min(config.mining.mining_batch, train_ids.size());
  const std::size_t way = config.mining.way;
  for (std::size_t it = 0; it < config.meta.iterations; ++it) {
    try {
      std::vector<std::int64_t> batch;
      for (std::size_t i : sample_without_replacement(rng, train_ids.size(), m)) batch.push_back(train_ids[i]);
      mining::HardPool pool;
      if (config.hard_episodes) {
        const auto scored = mining::agreement_scores(store, batch, model, config.augmentation, rng);
        pool = mining::mine_hard(scored.scores, config.mining, rng);
      } else {
        for (auto id : batch) pool.members.push_back({id, 0, 0, "random"});
      }
      const auto episodes = mining::build_instance_episodes(pool, config.mining, config.meta.episodes_per_iter, rng);
      std::vector<mining::EpisodeItem> items;
      for (const auto& e : episodes) {
        items.insert(items.end(), e.support.begin(), e.support.end());
        items.insert(items.end(), e.query.begin(), e.query.end());
      }
      const ItemBatch all = embed_instance_items(store, model, items, config.augmentation);
      std::vector<EpisodeLosses> losses;
      std::size_t offset = 0;
      for (const auto& e : episodes) {
        const ItemBatch support = slice(all, offset, offset + e.support.size());
        offset += e.support.size();
        const ItemBatch query = slice(all, offset, offset + e.query.size());
        offset += e.query.size();
        losses.push_back(instance_episode_losses(trainer.head(), support, query, way, config.meta.objective));
      }
      const auto mg = trainer.step(losses);
      result.log.push_back({it + 1, mg.query_loss, mg.query_accuracy, trainer.last_lr(), pool.members.size()});
    } catch (const std::exception& e) {
      throw std::runtime_error("meta_train: iteration " + std::to_string(it + 1) + ": " + e.what());
    }
  }
  result.head = trainer.head().clone();
  return result;
}

ItemBatch EmbeddingTable::gather(const std::vector<mining::EpisodeItem>& items) const {
  std::vector<std::size_t> rows;
  ItemBatch b;
  for (const auto& it : items) {
    auto found = row.find(it.video_id);
    if (found == row.end()) throw std::out_of_range("embedding table: no video " + std::to_string(it.video_id));
    rows.push_back(found->second);
    b.labels.push_back(it.label);
  }
  b.ap_frames = index_rows(ap_frames, rows);
  b.ap_mean = index_rows(ap_mean, rows);
  b.act = index_rows(act, rows);
  return b;
}

EmbeddingTable embed_test_videos(const synthvid::VideoStore& store, const streams::TwoStreamModel& model,
                                 const std::vector<std::int64_t>& ids, std::uint64_t seed) {
  if (ids.empty()) throw std::invalid_argument("embed_test_videos: no videos");
  const auto ap_scheme = model.config().appearance();
  const auto act_scheme = model.config().action();
  std::vector<synthvid::View> ap(ids.size()), act(ids.size());
  parallel_for(ids.size(), worker_count(), [&](std::size_t i) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(ids[i])}));
    ap[i] = synthvid::sample_appearance_view(store.video(ids[i]), ap_scheme, rng);
    act[i] = synthvid::sample_action_view(store.video(ids[i]), act_scheme, rng);
  });
  EmbeddingTable t;
  std::vector<Tensor> f, m, a;
  constexpr std::size_t chunk = 128;
  for (std::size_t s = 0; s < ids.size(); s += chunk) {
    const std::size_t e = std::min(ids.size(), s + chunk);
    std::vector<synthvid::View> ap_part(ap.begin() + static_cast<std::ptrdiff_t>(s), ap.begin() + static_cast<std::ptrdiff_t>(e));
    std::vector<synthvid::View> act_part(act.begin() + static_cast<std::ptrdiff_t>(s), act.begin() + static_cast<std::ptrdiff_t>(e));
    const ItemBatch b = embed_views(model, ap_part, act_part);
    f.push_back(b.ap_frames), m.push_back(b.ap_mean), a.push_back(b.act);
  }
  {
    NoGradGuard no_grad;
    t.ap_frames = concat(f, 0);
    t.ap_mean = concat(m, 0);
    t.act = concat(a, 0);
  }
  for (std::size_t i = 0; i < ids.size(); ++i) t.row[ids[i]] = i;
  return t;
}

EpisodeOutcome run_episode(const Head& head, const ItemBatch& support, const ItemBatch& query, std::size_t way,
                           const TestProtocol& protocol, std::uint64_t episode_seed) {
  EpisodeOutcome out;
  Head h = head.clone();
  const bool way_matches = h.params.way() == way;
  if (protocol.learner == Learner::ProtoNet) {
    NoGradGuard no_grad;
    out.accuracy = accuracy(protonet_predict(proto_features(h, support), support.labels, proto_features(h, query), way),
                            query.labels);
    return out;
  }
  if (protocol.learner == Learner::BaselinePP) {
    const std::size_t d = h.feature_width();
    std::vector<double> w(d * way);
    Rng rng(episode_seed);
    std::normal_distribution<double> normal(0.0, 0.01);
    for (std::size_t c = 0; c < way; ++c) {
      double norm = 0;
      if (way_matches) {
        for (std::size_t j = 0; j < d; ++j) norm += h.params.W[j * way + c] * h.params.W[j * way + c];
      }
      const bool reuse = way_matches && std::sqrt(norm) > 1e-8;
      for (std::size_t j = 0; j < d; ++j) w[j * way + c] = reuse ? h.params.W[j * way + c] : normal(rng);
    }
    out.classifier_reinitialized = !way_matches;
    std::vector<Tensor> theta;
    if (h.params.has_heads()) theta = {h.params.K, h.params.V, h.params.Q};
    const std::size_t heads = theta.size();
    theta.emplace_back(Shape{d, way}, std::move(w), true);
    theta.push_back(Tensor::scalar(protocol.baseline_scale, true));
    auto forward = [&](const std::vector<Tensor>& th, const ItemBatch& batch) {
      Head cur = h;
      if (heads) cur.params.K = th[0], cur.params.V = th[1], cur.params.Q = th[2];
      return cosine_logits(features(cur, batch), th[heads], th[heads + 1]);
    };
    for (std::size_t epoch = 0; epoch < protocol.finetune_epochs; ++epoch) {
      const Tensor l = cross_entropy(forward(theta, support), support.labels);
      theta = gd_step(theta, grad(l, theta), protocol.finetune_lr);
    }
    NoGradGuard no_grad;
    out.accuracy = accuracy(predict(forward(theta, query)), query.labels);
    return out;
  }
  if (protocol.learner == Learner::ProtoMaml) {
    NoGradGuard no_grad;
    const Tensor p = prototypes(proto_features(h, support), support.labels, way);
    Tensor W, b;
    protomaml_init(p, W, b);
    h.params.W = Tensor(W.shape(), W.to_vector(), true);
    h.params.b = Tensor(b.shape(), b.to_vector(), true);
  } else if (!way_matches) {
    h.params.W = Tensor::zeros({h.feature_width(), way}, true);
    if (h.params.b.defined()) h.params.b = Tensor::zeros({way}, true);
    out.classifier_reinitialized = true;
  }
  std::vector<Tensor> theta = h.theta();
  for (std::size_t epoch = 0; epoch < protocol.finetune_epochs; ++epoch) {
    const Tensor l = loss(h.with_theta(theta), support);
    theta = gd_step(theta, grad(l, theta), protocol.finetune_lr);
  }
  NoGradGuard no_grad;
  out.accuracy = accuracy(predict(logits(h.with_theta(theta), query)), query.labels);
  return out;
}

std::string AccuracyCI::format() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", mean, halfwidth);
  return buf;
}

AccuracyCI accuracy_ci(const std::vector<double>& xs) {
  if (xs.size() < 2) throw std::invalid_argument("accuracy_ci: need at least 2 episodes");
  const double n = static_cast<double>(xs.size());
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= n;
  double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double s = std::sqrt(ss / (n - 1.0));
  return {mean * 100.0, 1.96 * s / std::sqrt(n) * 100.0};
}

std::string EvalReport::to_json() const {
  nlohmann::json j{{"learner", learner},
                   {"ablation", ablation},
                   {"way", way},
                   {"shot", shot},
                   {"episodes", episodes},
                   {"mean_acc", mean_acc},
                   {"ci95", ci95},
                   {"formatted", AccuracyCI{mean_acc, ci95}.format()},
                   {"seed", seed},
                   {"config_digest", config_digest},
                   {"classifier_reinitialized", classifier_reinitialized}};
  return j.dump(1) + "\n";
}

std::string EvalReport::csv_header() { return "learner,ablation,way,shot,episodes,mean_acc,ci95,seed,config_digest\n"; }

std::string EvalReport::csv_row() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f,%.4f", mean_acc, ci95);
  std::ostringstream out;
  out << learner << ',' << ablation << ',' << way << ',' << shot << ',' << episodes << ',' << buf << ',' << seed << ','
      << config_digest << '\n';
  return out.str();
}

EvalReport meta_test(const Head& head, const EmbeddingTable& table, const std::vector<mining::Episode>& episodes,
                     const TestProtocol& protocol, std::vector<double>* per_episode) {
  if (episodes.size() < 2) throw std::invalid_argument("meta_test: need at least 2 episodes");
  std::vector<EpisodeOutcome> outcomes(episodes.size());
  parallel_for(episodes.size(), worker_count(), [&](std::size_t i) {
    const auto& e = episodes[i];
    outcomes[i] = run_episode(head, table.gather(e.support), table.gather(e.query), e.way, protocol,
                              derive_seed(protocol.seed, {i}));
  });
  std::vector<double> acc;
  EvalReport r;
  for (const auto& o : outcomes) {
    acc.push_back(o.accuracy);
    r.classifier_reinitialized = r.classifier_reinitialized || o.classifier_reinitialized;
  }
  const auto ci = accuracy_ci(acc);
  r.learner = to_string(protocol.learner);
  r.way = episodes.front().way;
  r.shot = episodes.front().support.size() / episodes.front().way;
  r.episodes = episodes.size();
  r.mean_acc = ci.mean;
  r.ci95 = ci.halfwidth;
  r.seed = protocol.seed;
  if (per_episode) *per_episode = std::move(acc);
  return r;
}

}  // namespace muvfs::metalearn
