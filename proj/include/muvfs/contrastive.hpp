#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "muvfs/augment.hpp"
#include "muvfs/optim.hpp"
#include "muvfs/streams.hpp"
#include "muvfs/synthvid.hpp"
#include "muvfs/tensor.hpp"

namespace muvfs::contrastive {

// NT-Xent over a 2N x d batch whose rows (2k, 2k+1) are positive pairs.
// Throws on zero-norm rows or tau <= 0.
Tensor nt_xent(const Tensor& z, double tau);

// Row i: softmax over the similarities of z_i to every other row.
Tensor matching_distribution(const Tensor& z, double tau);

struct StreamLosses {
  Tensor ap;
  Tensor act;
};
StreamLosses stream_losses(const Tensor& z_ap, const Tensor& z_act, double tau);

// NT-Xent over head(concat(h_ap, h_act)); rows follow the same pairing.
Tensor joint_loss(const Tensor& h_ap, const Tensor& h_act, const streams::Mlp& head, double tau);

// Mean over rows of KL(p||q) + KL(q||p), eps 1e-12 inside the logs.
Tensor symmetric_kl(const Tensor& p, const Tensor& q);

struct PretrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double tau = 0.1;
  double peak_lr = 0.01;
  double final_lr = 1e-5;
  std::size_t warmup_epochs = 2;
  OptimizerConfig optimizer{};
  bool joint_loss = false;
  bool skl_loss = false;
  // Appearance and action views of one video share the spatial draw.
  bool shared_augmentation = false;
  synthvid::AugmentationConfig augmentation{};
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss_ap = 0, loss_act = 0, loss_joint = 0, loss_skl = 0;
  double lr = 0;
};

struct PretrainResult {
  streams::TwoStreamModel model;
  std::vector<EpochLog> log;
};

// Log CSV with the optional columns present only when enabled.
std::string log_csv(const std::vector<EpochLog>& log, bool joint, bool skl);

// Trains on the unlabeled-train split of `store`, starting from `model`.
PretrainResult pretrain(const synthvid::VideoStore& store, streams::TwoStreamModel model, const PretrainConfig& config);

}  // namespace muvfs::contrastive
