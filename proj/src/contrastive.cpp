#include "muvfs/contrastive.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "muvfs/parallel.hpp"
#include "muvfs/random.hpp"
#include "muvfs/sampling.hpp"

namespace muvfs::contrastive {

namespace {

constexpr double kMasked = -1e9;

void check_batch(const char* op, const Tensor& z, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument(std::string(op) + ": tau must be positive");
  if (z.dim() != 2 || z.size(0) < 2 || z.size(0) % 2 != 0) {
    throw ShapeError(std::string(op) + ": expected a 2N x d batch, got " + shape_str(z.shape()));
  }
  const std::size_t d = z.size(1);
  auto v = z.data();
  for (std::size_t r = 0; r < z.size(0); ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += v[r * d + j] * v[r * d + j];
    if (ss == 0.0) throw std::domain_error(std::string(op) + ": row " + std::to_string(r) + " has zero norm");
  }
}

Tensor masked_logits(const Tensor& z, double tau) {
  const std::size_t n = z.size(0);
  std::vector<double> mask(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) mask[i * n + i] = kMasked;
  return add(scale(cosine_similarity_matrix(z, z), 1.0 / tau), Tensor({n, n}, std::move(mask)));
}

}  // namespace

Tensor nt_xent(const Tensor& z, double tau) {
  check_batch("nt_xent", z, tau);
  std::vector<int> positives(z.size(0));
  for (std::size_t i = 0; i < positives.size(); ++i) positives[i] = static_cast<int>(i ^ 1u);
  return cross_entropy(masked_logits(z, tau), positives);
}

Tensor matching_distribution(const Tensor& z, double tau) {
  check_batch("matching_distribution", z, tau);
  return softmax(masked_logits(z, tau));
}

StreamLosses stream_losses(const Tensor& z_ap, const Tensor& z_act, double tau) {
  if (z_ap.dim() != 2 || z_act.dim() != 2 || z_ap.size(0) != z_act.size(0)) {
    throw ShapeError("stream_losses: batches " + shape_str(z_ap.shape()) + " and " + shape_str(z_act.shape()) +
                     " cover different video counts");
  }
  return {nt_xent(z_ap, tau), nt_xent(z_act, tau)};
}

Tensor joint_loss(const Tensor& h_ap, const Tensor& h_act, const streams::Mlp& head, double tau) {
  if (h_ap.dim() != 2 || h_act.dim() != 2 || h_ap.size(0) != h_act.size(0)) {
    throw ShapeError("joint_loss: unpaired rows " + shape_str(h_ap.shape()) + " vs " + shape_str(h_act.shape()));
  }
  return nt_xent(streams::project(head, concat({h_ap, h_act}, 1)), tau);
}

Tensor symmetric_kl(const Tensor& p, const Tensor& q) {
  if (p.shape() != q.shape() || p.dim() != 2) {
    throw ShapeError("symmetric_kl: shapes " + shape_str(p.shape()) + " and " + shape_str(q.shape()) + " differ");
  }
  constexpr double eps = 1e-12;
  const Tensor log_ratio = sub(log(add_scalar(p, eps)), log(add_scalar(q, eps)));
  // KL(p||q) + KL(q||p) = sum (p - q)(log p - log q)
  const Tensor per_row = sum(mul(sub(p, q), log_ratio), 1);
  return mean_all(per_row);
}

void PretrainConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("pretrain: batch_size must be at least 2");
  if (!(tau > 0.0)) throw std::invalid_argument("pretrain: tau must be positive");
  if (!(peak_lr > 0.0) || final_lr < 0.0 || final_lr > peak_lr) {
    throw std::invalid_argument("pretrain: need peak_lr > 0 and 0 <= final_lr <= peak_lr");
  }
  augmentation.validate();
}

std::string log_csv(const std::vector<EpochLog>& log, bool joint, bool skl) {
  std::ostringstream out;
  out << "epoch,loss_ap,loss_act";
  if (joint) out << ",loss_joint";
  if (skl) out << ",loss_skl";
  out << ",lr\n";
  out << std::setprecision(10);
  for (const auto& row : log) {
    out << row.epoch << ',' << row.loss_ap << ',' << row.loss_act;
    if (joint) out << ',' << row.loss_joint;
    if (skl) out << ',' << row.loss_skl;
    out << ',' << row.lr << '\n';
  }
  return out.str();
}

PretrainResult pretrain(const synthvid::VideoStore& store, streams::TwoStreamModel model, const PretrainConfig& config) {
  config.validate();
  PretrainResult result;
  const auto ids = store.ids(synthvid::Split::UnlabeledTrain);
  const auto ap_scheme = model.config().appearance();
  const auto act_scheme = model.config().action();
  const bool joint = config.joint_loss && model.head_joint.layers() > 0;
  if (config.joint_loss && !joint) throw std::invalid_argument("pretrain: joint loss enabled but the model has no joint head");

  std::size_t batches_per_epoch = ids.size() / config.batch_size;
  if (ids.size() % config.batch_size >= 2) ++batches_per_epoch;
  if (config.epochs > 0 && batches_per_epoch == 0) throw std::invalid_argument("pretrain: fewer than 2 training videos");

  model.set_requires_grad(true);
  const auto params = model.parameters();
  Optimizer optimizer(config.optimizer, params);
  LrSchedule schedule{ScheduleKind::WarmupCosine, config.warmup_epochs * batches_per_epoch, config.peak_lr,
                      config.final_lr, std::max<std::size_t>(config.epochs * batches_per_epoch, 1)};

  Rng order_rng(derive_seed(config.seed, {0x5eedull}));
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::int64_t> order = ids;
    std::shuffle(order.begin(), order.end(), order_rng);
    EpochLog row;
    row.epoch = epoch + 1;
    std::size_t counted = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, order.size() - start);
      if (b < 2) break;
      // Four views per video: two per stream.
      std::vector<synthvid::View> ap(2 * b), act(2 * b);
      parallel_for(b, worker_count(), [&](std::size_t i) {
        const auto& video = store.video(order[start + i]);
        Rng rng(derive_seed(config.seed, {epoch, static_cast<std::uint64_t>(video.video_id)}));
        for (std::size_t v = 0; v < 2; ++v) {
          if (config.shared_augmentation) {
            const auto p = synthvid::draw_augment_params(config.augmentation, video.channels, video.height, video.width, rng);
            auto& a = ap[2 * i + v];
            a.indices = synthvid::appearance_indices(video.frames, ap_scheme, rng);
            a.params = p;
            a.frames = synthvid::apply_augment(synthvid::gather_frames(video, a.indices), p, ap_scheme.height, ap_scheme.width);
            auto& c = act[2 * i + v];
            c.indices = synthvid::action_indices(video.frames, act_scheme, rng);
            c.params = p;
            c.frames = synthvid::apply_augment(synthvid::gather_frames(video, c.indices), p, act_scheme.height, act_scheme.width);
          } else {
            ap[2 * i + v] = synthvid::make_view(video, ap_scheme, config.augmentation, rng);
            act[2 * i + v] = synthvid::make_view(video, act_scheme, config.augmentation, rng);
          }
        }
      });
      std::vector<const synthvid::Frames*> ap_ptr, act_ptr;
      for (std::size_t k = 0; k < 2 * b; ++k) ap_ptr.push_back(&ap[k].frames), act_ptr.push_back(&act[k].frames);

      const auto e = streams::embed(model, ap_ptr, act_ptr);
      const Tensor z_ap = streams::project(model.head_ap, e.ap_mean);
      const Tensor z_act = streams::project(model.head_act, e.act);
      const auto losses = stream_losses(z_ap, z_act, config.tau);
      Tensor total = add(losses.ap, losses.act);
      double joint_value = 0, skl_value = 0;
      if (joint) {
        const Tensor lj = joint_loss(e.ap_mean, e.act, model.head_joint, config.tau);
        joint_value = lj.item();
        total = add(total, lj);
      }
      if (config.skl_loss) {
        const Tensor ls = symmetric_kl(matching_distribution(z_ap, config.tau), matching_distribution(z_act, config.tau));
        skl_value = ls.item();
        total = add(total, ls);
      }
      if (!std::isfinite(total.item())) {
        throw NonFiniteError("pretrain: non-finite loss at epoch " + std::to_string(epoch + 1));
      }
      const auto grads = grad(total, params);
      row.lr = lr_at(schedule, step++);
      optimizer.step(grads, row.lr);
      row.loss_ap += losses.ap.item() * static_cast<double>(b);
      row.loss_act += losses.act.item() * static_cast<double>(b);
      row.loss_joint += joint_value * static_cast<double>(b);
      row.loss_skl += skl_value * static_cast<double>(b);
      counted += b;
    }
    if (counted > 0) {
      const double n = static_cast<double>(counted);
      row.loss_ap /= n, row.loss_act /= n, row.loss_joint /= n, row.loss_skl /= n;
    }
    result.log.push_back(row);
  }
  model.set_requires_grad(false);
  result.model = std::move(model);
  return result;
}

}  // namespace muvfs::contrastive
