#include "muvfs/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace muvfs {

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd-momentum" || name == "sgd") return OptimizerKind::SgdMomentum;
  if (name == "adam") return OptimizerKind::Adam;
  throw std::invalid_argument("unknown optimizer '" + name + "' (expected sgd-momentum or adam)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd-momentum"; }

Optimizer::Optimizer(OptimizerConfig config, std::vector<Tensor> params)
    : config_(config), params_(std::move(params)) {
  for (const auto& p : params_) {
    if (!p.is_leaf()) throw GraphError("optimizer: parameter is not a leaf tensor");
    first_.emplace_back(p.numel(), 0.0);
    if (config_.kind == OptimizerKind::Adam) second_.emplace_back(p.numel(), 0.0);
  }
}

void Optimizer::step(std::span<const Tensor> grads, double lr) {
  if (grads.size() != params_.size()) {
    throw ShapeError("optimizer: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params_.size()) + " parameters");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("optimizer: learning rate must be positive");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (grads[i].shape() != params_[i].shape()) {
      throw ShapeError("optimizer: gradient " + shape_str(grads[i].shape()) + " does not match parameter " +
                       shape_str(params_[i].shape()));
    }
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto p = params_[i].mutable_data();
    auto g = grads[i].data();
    auto& m = first_[i];
    if (config_.kind == OptimizerKind::SgdMomentum) {
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = config_.momentum * m[j] + g[j];
        p[j] -= lr * m[j];
      }
    } else {
      auto& v = second_[i];
      const double c1 = 1.0 - std::pow(config_.beta1, t);
      const double c2 = 1.0 - std::pow(config_.beta2, t);
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
        v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
        p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
      }
    }
  }
}

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "warmup-cosine") return ScheduleKind::WarmupCosine;
  if (name == "cosine-annealing" || name == "cosine") return ScheduleKind::CosineAnnealing;
  if (name == "constant") return ScheduleKind::Constant;
  throw std::invalid_argument("unknown schedule '" + name + "'");
}

double lr_at(const LrSchedule& s, std::size_t step) {
  if (s.total_steps == 0 || step >= s.total_steps) {
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(s.total_steps) + ")");
  }
  if (s.kind == ScheduleKind::Constant) return s.peak_lr;
  const std::size_t warmup = s.kind == ScheduleKind::WarmupCosine ? std::min(s.warmup_steps, s.total_steps) : 0;
  if (step < warmup) return s.peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const std::size_t anchor = warmup > 0 ? warmup - 1 : 0;
  const std::size_t span = s.total_steps - 1 - anchor;
  if (span == 0) return s.peak_lr;
  const double progress = static_cast<double>(step - anchor) / static_cast<double>(span);
  return s.final_lr + (s.peak_lr - s.final_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace muvfs
