#include "muvfs/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace muvfs::synthvid {

namespace {

void check_prob(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string("augment: ") + name + " must lie in [0, 1]");
}

// out_len x src_len resampling weights for the interval [start, start + extent).
std::vector<double> axis_weights(std::size_t src_len, double start, double extent, std::size_t out_len) {
  std::vector<double> w(out_len * src_len, 0.0);
  const double ratio = extent / static_cast<double>(out_len);
  for (std::size_t j = 0; j < out_len; ++j) {
    double* row = w.data() + j * src_len;
    if (ratio >= 1.0) {
      const double lo = start + static_cast<double>(j) * ratio;
      const double hi = lo + ratio;
      double total = 0.0;
      const auto first = static_cast<std::size_t>(std::max(0.0, std::floor(lo)));
      for (std::size_t i = first; i < src_len && static_cast<double>(i) < hi; ++i) {
        const double overlap = std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
        if (overlap > 0) row[i] += overlap, total += overlap;
      }
      if (total > 0) {
        for (std::size_t i = 0; i < src_len; ++i) row[i] /= total;
      }
    } else {
      double c = start + (static_cast<double>(j) + 0.5) * ratio - 0.5;
      c = std::clamp(c, 0.0, static_cast<double>(src_len - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(c));
      const double f = c - static_cast<double>(i0);
      row[i0] += 1.0 - f;
      row[std::min(i0 + 1, src_len - 1)] += f;
    }
  }
  return w;
}

void blur_plane(double* plane, std::size_t h, std::size_t w, std::vector<double>& tmp) {
  tmp.assign(plane, plane + h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double l = tmp[y * w + (x > 0 ? x - 1 : x)];
      const double r = tmp[y * w + (x + 1 < w ? x + 1 : x)];
      plane[y * w + x] = 0.25 * l + 0.5 * tmp[y * w + x] + 0.25 * r;
    }
  }
  tmp.assign(plane, plane + h * w);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t up = y > 0 ? y - 1 : y;
    const std::size_t down = y + 1 < h ? y + 1 : y;
    for (std::size_t x = 0; x < w; ++x) {
      plane[y * w + x] = 0.25 * tmp[up * w + x] + 0.5 * tmp[y * w + x] + 0.25 * tmp[down * w + x];
    }
  }
}

}  // namespace

void AugmentationConfig::validate() const {
  if (!(crop_min > 0.0 && crop_min <= crop_max && crop_max <= 1.0)) {
    throw std::invalid_argument("augment: crop range must satisfy 0 < crop_min <= crop_max <= 1");
  }
  check_prob(hflip_prob, "hflip_prob");
  check_prob(jitter_prob, "jitter_prob");
  check_prob(grayscale_prob, "grayscale_prob");
  check_prob(blur_prob, "blur_prob");
  if (jitter_strength < 0.0 || jitter_strength > 1.0) throw std::invalid_argument("augment: jitter_strength must lie in [0, 1]");
}

AugmentationConfig AugmentationConfig::identity() {
  AugmentationConfig c;
  c.crop_min = c.crop_max = 1.0;
  c.hflip_prob = c.jitter_prob = c.grayscale_prob = c.blur_prob = 0.0;
  return c;
}

AugmentParams draw_augment_params(const AugmentationConfig& cfg, std::size_t channels, std::size_t height,
                                  std::size_t width, Rng& rng) {
  cfg.validate();
  AugmentParams p;
  const double h = static_cast<double>(height), w = static_cast<double>(width);
  bool found = false;
  for (int attempt = 0; attempt < 10 && !found; ++attempt) {
    const double s = cfg.crop_min == cfg.crop_max ? cfg.crop_min : uniform_real(rng, cfg.crop_min, cfg.crop_max);
    // Regions under one source pixel per axis are degenerate.
    if (s * h < 1.0 || s * w < 1.0) continue;
    p.crop_scale = s;
    p.crop_x = s < 1.0 ? uniform_real(rng, 0.0, w * (1.0 - s)) : 0.0;
    p.crop_y = s < 1.0 ? uniform_real(rng, 0.0, h * (1.0 - s)) : 0.0;
    found = true;
  }
  if (!found) {
    p.crop_scale = std::clamp(cfg.crop_max, 1.0 / std::min(h, w), 1.0);
    p.crop_x = 0.5 * w * (1.0 - p.crop_scale);
    p.crop_y = 0.5 * h * (1.0 - p.crop_scale);
  }
  p.flip = bernoulli(rng, cfg.hflip_prob);
  p.jitter = bernoulli(rng, cfg.jitter_prob);
  if (p.jitter) {
    const double s = cfg.jitter_strength;
    p.gain.resize(channels);
    p.bias.resize(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      p.gain[c] = uniform_real(rng, 1.0 - s, 1.0 + s);
      p.bias[c] = uniform_real(rng, -0.5 * s, 0.5 * s);
    }
  }
  p.grayscale = channels == 3 && bernoulli(rng, cfg.grayscale_prob);
  p.blur = bernoulli(rng, cfg.blur_prob);
  return p;
}

Frames resample(const Frames& in, double x0, double y0, double side_x, double side_y, std::size_t out_height,
                std::size_t out_width) {
  if (out_height == 0 || out_width == 0) throw std::invalid_argument("resample: empty output size");
  const auto wy = axis_weights(in.height, y0, side_y, out_height);
  const auto wx = axis_weights(in.width, x0, side_x, out_width);
  Frames out{in.count, in.channels, out_height, out_width, {}};
  out.data.assign(in.count * in.channels * out_height * out_width, 0.0);
  std::vector<double> tmp(out_height * in.width);
  for (std::size_t plane = 0; plane < in.count * in.channels; ++plane) {
    const double* src = in.data.data() + plane * in.height * in.width;
    double* dst = out.data.data() + plane * out_height * out_width;
    std::fill(tmp.begin(), tmp.end(), 0.0);
    for (std::size_t j = 0; j < out_height; ++j) {
      for (std::size_t i = 0; i < in.height; ++i) {
        const double wgt = wy[j * in.height + i];
        if (wgt == 0.0) continue;
        for (std::size_t x = 0; x < in.width; ++x) tmp[j * in.width + x] += wgt * src[i * in.width + x];
      }
    }
    for (std::size_t j = 0; j < out_height; ++j) {
      for (std::size_t k = 0; k < out_width; ++k) {
        double acc = 0.0;
        for (std::size_t x = 0; x < in.width; ++x) acc += wx[k * in.width + x] * tmp[j * in.width + x];
        dst[j * out_width + k] = acc;
      }
    }
  }
  return out;
}

Frames resize(const Frames& in, std::size_t out_height, std::size_t out_width) {
  return resample(in, 0.0, 0.0, static_cast<double>(in.width), static_cast<double>(in.height), out_height, out_width);
}

Frames hflip(const Frames& in) {
  Frames out = in;
  for (std::size_t plane = 0; plane < in.count * in.channels; ++plane) {
    double* row0 = out.data.data() + plane * in.height * in.width;
    for (std::size_t y = 0; y < in.height; ++y) std::reverse(row0 + y * in.width, row0 + (y + 1) * in.width);
  }
  return out;
}

Frames apply_augment(const Frames& in, const AugmentParams& p, std::size_t out_height, std::size_t out_width) {
  if (in.count == 0) throw std::invalid_argument("augment: no frames");
  Frames out = resample(in, p.crop_x, p.crop_y, p.crop_scale * static_cast<double>(in.width),
                        p.crop_scale * static_cast<double>(in.height), out_height, out_width);
  if (p.flip) out = hflip(out);
  const std::size_t hw = out_height * out_width;
  std::vector<double> tmp;
  for (std::size_t k = 0; k < out.count; ++k) {
    double* f = out.frame(k);
    if (p.jitter) {
      for (std::size_t c = 0; c < out.channels; ++c) {
        for (std::size_t i = 0; i < hw; ++i) f[c * hw + i] = p.gain[c] * f[c * hw + i] + p.bias[c];
      }
    }
    if (p.grayscale && out.channels == 3) {
      for (std::size_t i = 0; i < hw; ++i) {
        const double y = 0.299 * f[i] + 0.587 * f[hw + i] + 0.114 * f[2 * hw + i];
        f[i] = f[hw + i] = f[2 * hw + i] = y;
      }
    }
    if (p.blur) {
      for (std::size_t c = 0; c < out.channels; ++c) blur_plane(f + c * hw, out_height, out_width, tmp);
    }
  }
  for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

AugmentResult augment(const Frames& in, const AugmentationConfig& cfg, Rng& rng, std::size_t out_height,
                      std::size_t out_width) {
  if (in.count == 0) throw std::invalid_argument("augment: no frames");
  const AugmentParams p = draw_augment_params(cfg, in.channels, in.height, in.width, rng);
  AugmentResult r;
  r.frames = apply_augment(in, p, out_height, out_width);
  r.per_frame.assign(in.count, p);
  return r;
}

}  // namespace muvfs::synthvid
