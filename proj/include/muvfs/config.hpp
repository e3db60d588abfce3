#pragma once

// Flat `section.key = value` run configuration. Every module default is
// reachable from here; unknown keys and ill-typed values are rejected.

#include <cstdint>
#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "muvfs/a3m.hpp"
#include "muvfs/contrastive.hpp"
#include "muvfs/gradcheck.hpp"
#include "muvfs/metalearn.hpp"
#include "muvfs/mining.hpp"
#include "muvfs/streams.hpp"
#include "muvfs/synthvid.hpp"

namespace muvfs::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ablation rows of the evaluation command.
enum class Ablation { Full, ActionOnly, AppearanceOnly, ConcatNoA3M, NoHardEpisodes };
Ablation parse_ablation(const std::string& name);
std::string to_string(Ablation ablation);

// Which factor the classes of an evaluation episode differ in. `motion`
// fixes the appearance class within an episode, `appearance` fixes motion.
enum class Separable { Any, Motion, Appearance };
Separable parse_separable(const std::string& name);
std::string to_string(Separable separable);

struct EvalSettings {
  metalearn::Learner learner = metalearn::Learner::Maml;
  double finetune_lr = 10.0;
  std::size_t finetune_epochs = 50;
  double baseline_scale = 10.0;
  std::size_t episodes = 10000;
  std::vector<std::size_t> ways = {5};
  std::size_t shot = 1;
  std::size_t queries = 1;
  Ablation ablation = Ablation::Full;
  Separable separable = Separable::Any;
};

struct Paths {
  std::string out = "out";
  // Empty means <out>/<stage>.
  std::string dataset, pretrain, meta, eval;

  std::filesystem::path dataset_dir() const;
  std::filesystem::path pretrain_dir() const;
  std::filesystem::path meta_dir() const;
  std::filesystem::path eval_dir() const;
};

struct RunConfig {
  std::uint64_t seed = 0;
  Paths paths;
  synthvid::DatasetSpec data;
  streams::StreamsConfig streams;
  synthvid::AugmentationConfig augment;
  contrastive::PretrainConfig pretrain;
  a3m::A3MConfig a3m;
  mining::MiningConfig mining;
  metalearn::MetaConfig meta;
  bool hard_episodes = true;
  metalearn::FeatureMode meta_mode = metalearn::FeatureMode::A3M;
  EvalSettings eval;
  gradcheck::GradcheckOptions gradcheck;

  // Keys set explicitly by text or overrides.
  std::set<std::string> explicit_keys;

  static RunConfig parse(const std::string& text, const std::string& origin = "<config>");
  static RunConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  bool is_explicit(const std::string& key) const { return explicit_keys.count(key) > 0; }

  // Cross-key checks; throws ConfigError.
  void validate() const;

  // Every key in sorted order as `key = value` lines.
  std::string canonical() const;
  // FNV-1a 64 of the canonical text without paths.*, as 16 hex digits.
  std::string digest() const;

  // Module configs with the shared keys (seed, widths, augmentation) filled in.
  synthvid::DatasetSpec dataset_spec() const;
  streams::StreamsConfig streams_config() const;
  contrastive::PretrainConfig pretrain_config() const;
  metalearn::MetaTrainConfig meta_train_config() const;
  a3m::A3MConfig head_config() const;
  metalearn::TestProtocol test_protocol() const;
};

std::vector<std::string> known_keys();

std::uint64_t fnv1a64(const std::string& text);

}  // namespace muvfs::config
