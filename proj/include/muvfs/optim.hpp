#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "muvfs/tensor.hpp"

namespace muvfs {

enum class OptimizerKind { SgdMomentum, Adam };

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::SgdMomentum;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Owns the slot tensors for a fixed parameter list and updates the
// parameters in place. SGD uses the heavy-ball form v <- mu v + g,
// p <- p - lr v; Adam uses bias-corrected moments.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, std::vector<Tensor> params);

  void step(std::span<const Tensor> grads, double lr);

  std::uint64_t steps() const { return steps_; }
  const OptimizerConfig& config() const { return config_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  OptimizerConfig config_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::uint64_t steps_ = 0;
};

enum class ScheduleKind { WarmupCosine, CosineAnnealing, Constant };

ScheduleKind parse_schedule_kind(const std::string& name);

struct LrSchedule {
  ScheduleKind kind = ScheduleKind::WarmupCosine;
  std::size_t warmup_steps = 0;
  double peak_lr = 0.01;
  double final_lr = 0.0;
  std::size_t total_steps = 1;
};

// Linear warmup reaching peak_lr on step warmup_steps - 1, then a half-period
// cosine from peak_lr down to final_lr on the last step.
double lr_at(const LrSchedule& schedule, std::size_t step);

}  // namespace muvfs
