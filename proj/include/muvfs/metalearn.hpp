#pragma once

// Episodic meta-training of the A3M head and classifier (MAML, first or
// second order), the meta-test protocol and the alternative learners.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "muvfs/a3m.hpp"
#include "muvfs/mining.hpp"
#include "muvfs/optim.hpp"
#include "muvfs/streams.hpp"

namespace muvfs::metalearn {

// Which features reach the classifier. Only A3M carries attention heads.
enum class FeatureMode { A3M, Concat, ActionOnly, AppearanceOnly };
FeatureMode parse_feature_mode(const std::string& name);
std::string to_string(FeatureMode mode);

enum class Learner { Maml, ProtoNet, ProtoMaml, BaselinePP };
Learner parse_learner(const std::string& name);
std::string to_string(Learner learner);

// Frozen embeddings for a batch of items.
struct ItemBatch {
  Tensor ap_frames;  // B x F x D
  Tensor ap_mean;    // B x D
  Tensor act;        // B x D
  std::vector<int> labels;
};

struct Head {
  FeatureMode mode = FeatureMode::A3M;
  a3m::A3MParameters params;

  static Head init(FeatureMode mode, const a3m::A3MConfig& config, Rng& rng);
  std::size_t feature_width() const;
  std::vector<Tensor> theta() const { return params.list(); }
  Head with_theta(const std::vector<Tensor>& theta) const;
  Head clone() const { return {mode, params.clone()}; }
};

// Pre-classifier features (B x d), not yet normalized.
Tensor features(const Head& head, const ItemBatch& batch);
Tensor logits(const Head& head, const ItemBatch& batch);
Tensor loss(const Head& head, const ItemBatch& batch);
std::vector<int> predict(const Tensor& logits);
double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels);

using LossFn = std::function<Tensor(const std::vector<Tensor>& theta)>;

// `steps` gradient-descent updates at rate alpha. With create_graph the
// result stays differentiable w.r.t. theta; otherwise it is a fresh set of
// leaves. theta is never modified.
std::vector<Tensor> inner_adapt(const std::vector<Tensor>& theta, const LossFn& support_loss, double alpha,
                                std::size_t steps, bool create_graph);

enum class MetaOrder { First, Second };
MetaOrder parse_meta_order(const std::string& name);
std::string to_string(MetaOrder order);

struct EpisodeLosses {
  LossFn support;
  LossFn query;
  // Optional: query accuracy at adapted parameters.
  std::function<double(const std::vector<Tensor>&)> query_accuracy;
};

struct MetaGradient {
  std::vector<Tensor> grads;  // summed over episodes
  double query_loss = 0;      // mean over episodes
  double query_accuracy = 0;  // mean over episodes (when available)
};

MetaGradient meta_gradient(const std::vector<Tensor>& theta, const std::vector<EpisodeLosses>& episodes, double alpha,
                           std::size_t inner_steps, MetaOrder order);

// Prototype machinery on l2-normalized features.
Tensor prototypes(const Tensor& features, const std::vector<int>& labels, std::size_t way);
std::vector<int> protonet_predict(const Tensor& support_features, const std::vector<int>& support_labels,
                                  const Tensor& query_features, std::size_t way);
// Softmax over negative squared distances, cross-entropy on the query labels.
Tensor proto_loss(const Tensor& support_features, const std::vector<int>& support_labels, const Tensor& query_features,
                  const std::vector<int>& query_labels, std::size_t way);
// Classifier column c = 2 p_c, bias c = -||p_c||^2.
void protomaml_init(const Tensor& protos, Tensor& W, Tensor& b);

struct MetaConfig {
  double alpha = 10.0;
  double beta = 0.001;
  std::size_t episodes_per_iter = 10;
  std::size_t iterations = 300;
  std::size_t inner_steps = 1;
  MetaOrder order = MetaOrder::First;
  OptimizerConfig optimizer{OptimizerKind::Adam};
  double final_lr_ratio = 0.1;  // cosine annealing ends at ratio * beta
  Learner objective = Learner::Maml;

  void validate() const;
};

struct MetaTrainConfig {
  MetaConfig meta;
  mining::MiningConfig mining;
  synthvid::AugmentationConfig augmentation;
  bool hard_episodes = true;
  FeatureMode mode = FeatureMode::A3M;
  a3m::A3MConfig head;
  std::uint64_t seed = 0;
};

struct IterationLog {
  std::size_t iteration = 0;
  double query_loss = 0;
  double query_accuracy = 0;
  double lr = 0;
  std::size_t pool_size = 0;
};

struct MetaTrainResult {
  Head head;
  std::vector<IterationLog> log;
};

std::string iteration_log_csv(const std::vector<IterationLog>& log);

// Frozen-encoder embeddings of instance items (each item renders its own
// view pair from its view seed).
ItemBatch embed_instance_items(const synthvid::VideoStore& store, const streams::TwoStreamModel& model,
                               const std::vector<mining::EpisodeItem>& items, const synthvid::AugmentationConfig& aug);

class MetaTrainer {
 public:
  MetaTrainer(Head head, const MetaConfig& config);
  // One outer update from the given episodes' losses.
  MetaGradient step(const std::vector<EpisodeLosses>& episodes);
  const Head& head() const { return head_; }
  std::size_t iteration() const { return iteration_; }
  double last_lr() const { return last_lr_; }

 private:
  Head head_;
  MetaConfig config_;
  Optimizer optimizer_;
  LrSchedule schedule_;
  std::size_t iteration_ = 0;
  double last_lr_ = 0;
};

EpisodeLosses instance_episode_losses(const Head& head, const ItemBatch& support, const ItemBatch& query,
                                      std::size_t way, Learner objective);

MetaTrainResult meta_train(const synthvid::VideoStore& store, const streams::TwoStreamModel& model, Head head,
                           const MetaTrainConfig& config);

// --- meta-testing --------------------------------------------------------

// Per-video frozen embedding for testing: no spatial augmentation, seeded
// temporal draw.
struct EmbeddingTable {
  std::map<std::int64_t, std::size_t> row;
  Tensor ap_frames, ap_mean, act;

  ItemBatch gather(const std::vector<mining::EpisodeItem>& items) const;
};

EmbeddingTable embed_test_videos(const synthvid::VideoStore& store, const streams::TwoStreamModel& model,
                                 const std::vector<std::int64_t>& ids, std::uint64_t seed);

struct TestProtocol {
  Learner learner = Learner::Maml;
  double finetune_lr = 10.0;
  std::size_t finetune_epochs = 50;
  double baseline_scale = 10.0;
  std::uint64_t seed = 0;
};

struct EpisodeOutcome {
  double accuracy = 0;
  bool classifier_reinitialized = false;
};

// Copies the head, adapts it on the support set and scores the queries. The
// meta-trained head is left untouched.
EpisodeOutcome run_episode(const Head& head, const ItemBatch& support, const ItemBatch& query, std::size_t way,
                           const TestProtocol& protocol, std::uint64_t episode_seed);

struct AccuracyCI {
  double mean = 0;      // percent
  double halfwidth = 0; // percent
  std::string format() const;
};
AccuracyCI accuracy_ci(const std::vector<double>& per_episode);

struct EvalReport {
  std::string learner;
  std::string ablation = "full";
  std::size_t way = 0, shot = 0, episodes = 0;
  double mean_acc = 0, ci95 = 0;
  std::uint64_t seed = 0;
  std::string config_digest;
  bool classifier_reinitialized = false;

  std::string to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

EvalReport meta_test(const Head& head, const EmbeddingTable& table, const std::vector<mining::Episode>& episodes,
                     const TestProtocol& protocol, std::vector<double>* per_episode = nullptr);

}  // namespace muvfs::metalearn
