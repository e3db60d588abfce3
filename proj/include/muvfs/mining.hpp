#pragma once

// Hard-instance mining over the frozen two-stream embedding space, instance
// episodes for meta-training and labeled episodes for meta-testing.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "muvfs/augment.hpp"
#include "muvfs/random.hpp"
#include "muvfs/streams.hpp"
#include "muvfs/synthvid.hpp"

namespace muvfs::mining {

struct MiningConfig {
  std::size_t n = 32;
  std::size_t mining_batch = 256;
  double exploration_fraction = 0.10;
  std::size_t way = 5;
  std::size_t shots = 1;
  std::size_t queries = 1;

  void validate() const;
};

struct AgreementScores {
  std::vector<std::int64_t> ids;
  std::vector<double> ap;
  std::vector<double> act;
};

// Both augmented views per stream, kept so scores can be recomputed.
struct ScoredEmbeddings {
  AgreementScores scores;
  Tensor ap_a, ap_b;    // M x D (frame-mean appearance embeddings)
  Tensor act_a, act_b;  // M x D
};

// Two augmentations per stream per video through the frozen encoders; the
// score is the cosine similarity of the pair.
ScoredEmbeddings agreement_scores(const synthvid::VideoStore& store, const std::vector<std::int64_t>& ids,
                                  const streams::TwoStreamModel& model, const synthvid::AugmentationConfig& aug, Rng& rng);

struct PoolMember {
  std::int64_t video_id = 0;
  double score_ap = 0, score_act = 0;
  std::string selected_by;  // appearance, action, both, exploration
};

struct HardPool {
  std::vector<PoolMember> members;  // base members by id, then extras in draw order

  std::vector<std::int64_t> ids() const;
  std::size_t base_size() const;
  std::string to_json() const;
};

// Ids of the n lowest scores; ties go to the lower video id.
std::vector<std::int64_t> lowest_n(const std::vector<std::int64_t>& ids, const std::vector<double>& scores, std::size_t n);

// Number of exploration extras for a union of `base` videos.
std::size_t exploration_count(std::size_t base, double fraction);

HardPool mine_hard(const AgreementScores& scores, const MiningConfig& config, Rng& rng);

enum class EpisodeMode { Instance, Labeled };

struct EpisodeItem {
  std::int64_t video_id = 0;
  int label = 0;
  // Seed of the item's own view draw (instance mode) or 0.
  std::uint64_t view_seed = 0;

  bool operator==(const EpisodeItem&) const = default;
};

struct Episode {
  std::size_t way = 0;
  EpisodeMode mode = EpisodeMode::Instance;
  std::vector<EpisodeItem> support;
  std::vector<EpisodeItem> query;
  // class_ids[label]: the video id (instance) or joint class (labeled).
  std::vector<std::int64_t> class_ids;
};

// Empty when every episode invariant holds, else a description.
std::string check_episode(const Episode& e, std::size_t shots, std::size_t queries);

std::vector<Episode> build_instance_episodes(const HardPool& pool, const MiningConfig& config, std::size_t count, Rng& rng);

struct TestItem {
  std::int64_t video_id = 0;
  int class_id = 0;
  int group = 0;  // episodes may be restricted to one group
};

struct TestSampling {
  std::size_t way = 5;
  std::size_t shot = 1;
  std::size_t queries = 1;
  std::size_t episodes = 10000;
  bool grouped = false;
};

std::vector<TestItem> novel_items(const synthvid::DatasetManifest& manifest);

std::vector<Episode> sample_test_episodes(const std::vector<TestItem>& items, const TestSampling& sampling, Rng& rng);

}  // namespace muvfs::mining
