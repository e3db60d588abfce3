#pragma once

// Two-stream encoders (perceptrons over flattened frames / clips) with their
// projection heads, plus the parameter checkpoint format.

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "muvfs/sampling.hpp"
#include "muvfs/tensor.hpp"

namespace muvfs::streams {

// Fully connected stack: x W_0 + b_0 -> relu -> ... -> x W_k + b_k (no relu
// after the last layer). Weights are in x out.
class Mlp {
 public:
  Mlp() = default;
  // He-normal weights, zero biases.
  Mlp(const std::vector<std::size_t>& widths, Rng& rng);

  Tensor forward(const Tensor& x) const;
  std::size_t input_width() const;
  std::size_t output_width() const;
  std::size_t layers() const { return weights_.size(); }

  std::vector<Tensor>& weights() { return weights_; }
  std::vector<Tensor>& biases() { return biases_; }
  const std::vector<Tensor>& weights() const { return weights_; }
  const std::vector<Tensor>& biases() const { return biases_; }
  std::vector<Tensor> parameters() const;
  void add_named(const std::string& prefix, std::map<std::string, Tensor>& out) const;
  // Replaces values from a named map; every layer must be present.
  void load_named(const std::string& prefix, const std::map<std::string, Tensor>& in);

 private:
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

struct StreamsConfig {
  std::size_t channels = 3;
  std::string appearance_scheme = "8x1";
  std::size_t appearance_resolution = 16;
  std::string action_scheme = "4x4";
  std::size_t action_resolution = 8;
  std::vector<std::size_t> hidden = {256, 256};
  std::size_t embed_dim = 64;
  std::size_t proj_hidden = 0;  // 0 means embed_dim
  std::size_t proj_dim = 128;
  bool joint_head = false;
  // Each frame channel is standardized to zero mean and unit variance
  // before entering the encoders (per_frame_norm), else shifted by a fixed
  // mean and scale.
  bool per_frame_norm = true;
  double input_mean = 0.5;
  double input_std = 0.25;

  synthvid::SamplingScheme appearance() const;
  synthvid::SamplingScheme action() const;
  std::size_t appearance_input() const;
  std::size_t action_input() const;
};

// Batched embeddings for B videos.
struct StreamEmbeddings {
  Tensor ap_frames;  // B x F x D
  Tensor ap_mean;    // B x D
  Tensor act;        // B x D
};

class TwoStreamModel {
 public:
  TwoStreamModel() = default;
  TwoStreamModel(const StreamsConfig& config, Rng& rng);

  const StreamsConfig& config() const { return config_; }
  Mlp appearance, action;
  Mlp head_ap, head_act, head_joint;

  std::vector<Tensor> parameters() const;
  std::map<std::string, Tensor> named_parameters() const;
  void load_named(const std::map<std::string, Tensor>& params);
  void set_requires_grad(bool value);

 private:
  StreamsConfig config_;
};

struct InputNorm {
  bool per_frame = false;
  double mean = 0.0;
  double stddev = 1.0;
};
InputNorm input_norm(const StreamsConfig& config);

// Flattens B appearance views (F frames each) into (B*F) x (C*H*W).
Tensor pack_frames(const std::vector<const synthvid::Frames*>& views, const InputNorm& norm = {});
// Flattens B action views into B x (S*L*C*H*W).
Tensor pack_clips(const std::vector<const synthvid::Frames*>& views, const InputNorm& norm = {});

// frames: (B*F) x in -> {B x F x D, B x D}.
struct AppearanceOut {
  Tensor frames;
  Tensor mean;
};
AppearanceOut encode_appearance(const Mlp& encoder, const Tensor& frames, std::size_t batch, std::size_t per_video);
Tensor encode_action(const Mlp& encoder, const Tensor& clips, std::size_t expected_frames);
Tensor project(const Mlp& head, const Tensor& h);

StreamEmbeddings embed(const TwoStreamModel& model, const std::vector<const synthvid::Frames*>& ap_views,
                       const std::vector<const synthvid::Frames*>& act_views);

// Checkpoint directory: index.json mapping names to files, one MUVT (f64)
// file per parameter. `meta` is stored verbatim under "meta".
void save_checkpoint(const std::filesystem::path& dir, const std::map<std::string, Tensor>& params,
                     const std::map<std::string, std::string>& meta = {});
std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& dir,
                                              std::map<std::string, std::string>* meta = nullptr);

}  // namespace muvfs::streams
