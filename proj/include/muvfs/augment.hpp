#pragma once

// Clip-wise consistent spatial augmentation. One parameter draw is applied to
// every frame of a view.

#include <cstddef>
#include <vector>

#include "muvfs/random.hpp"

namespace muvfs::synthvid {

// A stack of frames, count x C x H x W, row-major.
struct Frames {
  std::size_t count = 0, channels = 0, height = 0, width = 0;
  std::vector<double> data;

  std::size_t frame_size() const { return channels * height * width; }
  double* frame(std::size_t k) { return data.data() + k * frame_size(); }
  const double* frame(std::size_t k) const { return data.data() + k * frame_size(); }
};

struct AugmentationConfig {
  double crop_min = 0.7;  // crop extent as a fraction of each axis
  double crop_max = 1.0;
  double hflip_prob = 0.5;
  double jitter_prob = 0.8;
  double jitter_strength = 0.4;
  double grayscale_prob = 0.2;
  double blur_prob = 0.5;

  void validate() const;
  static AugmentationConfig identity();
};

struct AugmentParams {
  // Crop origin in source pixels; the crop spans crop_scale of each axis.
  double crop_x = 0, crop_y = 0, crop_scale = 1;
  bool flip = false;
  bool jitter = false;
  std::vector<double> gain, bias;  // per channel
  bool grayscale = false;
  bool blur = false;

  bool operator==(const AugmentParams&) const = default;
};

struct AugmentResult {
  Frames frames;
  // The parameters applied to each output frame (all equal by construction).
  std::vector<AugmentParams> per_frame;
};

AugmentParams draw_augment_params(const AugmentationConfig& cfg, std::size_t channels, std::size_t height,
                                  std::size_t width, Rng& rng);

// Applies one parameter set to all frames and resamples the crop to
// out_height x out_width. Output values are clamped to [0, 1].
Frames apply_augment(const Frames& in, const AugmentParams& params, std::size_t out_height, std::size_t out_width);

AugmentResult augment(const Frames& in, const AugmentationConfig& cfg, Rng& rng, std::size_t out_height,
                      std::size_t out_width);
inline AugmentResult augment(const Frames& in, const AugmentationConfig& cfg, Rng& rng) {
  return augment(in, cfg, rng, in.height, in.width);
}

// Crop [x0, x0 + side_x) x [y0, y0 + side_y) resampled to out_h x out_w: area
// weights when shrinking, bilinear when enlarging.
Frames resample(const Frames& in, double x0, double y0, double side_x, double side_y, std::size_t out_height,
                std::size_t out_width);
Frames resize(const Frames& in, std::size_t out_height, std::size_t out_width);

Frames hflip(const Frames& in);

}  // namespace muvfs::synthvid
