#include "muvfs/sampling.hpp"

#include <algorithm>

namespace muvfs::synthvid {

namespace {

// Normalizes the unicode spellings to ascii.
std::string ascii_scheme(std::string s) {
  const std::pair<std::string, std::string> subs[] = {{"×", "x"}, {"→", "->"}, {"X", "x"}, {" ", ""}};
  for (const auto& [from, to] : subs) {
    for (std::size_t pos; (pos = s.find(from)) != std::string::npos;) s.replace(pos, from.size(), to);
  }
  return s;
}

}  // namespace

std::string SamplingScheme::name() const {
  if (kind == SchemeKind::FramesPerSegment) return std::to_string(segments) + "x1";
  if (window == clip_length) return std::to_string(segments) + "x" + std::to_string(clip_length);
  if (segments == 1) return std::to_string(window) + "->" + std::to_string(clip_length);
  return std::to_string(window) + "->" + std::to_string(clip_length) + "x" + std::to_string(segments);
}

void SamplingScheme::validate() const {
  if (segments == 0 || clip_length == 0) throw SamplingError("sampling: segment count and clip length must be positive");
  if (window < clip_length || window % clip_length != 0) {
    throw SamplingError("sampling: window must be a positive multiple of the clip length");
  }
  if (kind == SchemeKind::FramesPerSegment && (clip_length != 1 || window != 1)) {
    throw SamplingError("sampling: frames-per-segment schemes take one frame per segment");
  }
  if (height == 0 || width == 0) throw SamplingError("sampling: empty resolution");
}

SamplingScheme parse_scheme(const std::string& raw, std::size_t height, std::size_t width) {
  const std::string s = ascii_scheme(raw);
  SamplingScheme scheme;
  scheme.height = height;
  scheme.width = width;
  try {
    const auto arrow = s.find("->");
    if (arrow == std::string::npos) {
      const auto x = s.find('x');
      if (x == std::string::npos) throw SamplingError("");
      const std::size_t a = std::stoul(s.substr(0, x)), b = std::stoul(s.substr(x + 1));
      if (b == 1) {
        scheme.kind = SchemeKind::FramesPerSegment;
        scheme.segments = a;
        scheme.clip_length = scheme.window = 1;
      } else {
        scheme.kind = SchemeKind::Clips;
        scheme.segments = a;
        scheme.clip_length = scheme.window = b;
      }
    } else {
      scheme.kind = SchemeKind::Clips;
      scheme.window = std::stoul(s.substr(0, arrow));
      const std::string rest = s.substr(arrow + 2);
      const auto x = rest.find('x');
      if (x == std::string::npos) {
        scheme.segments = 1;
        scheme.clip_length = std::stoul(rest);
      } else {
        scheme.clip_length = std::stoul(rest.substr(0, x));
        scheme.segments = std::stoul(rest.substr(x + 1));
      }
    }
  } catch (const std::logic_error&) {
    throw SamplingError("sampling: cannot parse scheme '" + raw + "'");
  }
  scheme.validate();
  return scheme;
}

std::size_t segment_begin(std::size_t frames, std::size_t count, std::size_t k) { return k * (frames / count); }

std::size_t segment_end(std::size_t frames, std::size_t count, std::size_t k) {
  return k + 1 == count ? frames : (k + 1) * (frames / count);
}

std::vector<std::size_t> appearance_indices(std::size_t frames, const SamplingScheme& scheme, Rng& rng) {
  if (scheme.kind != SchemeKind::FramesPerSegment) throw SamplingError("sampling: appearance view needs an Fx1 scheme");
  const std::size_t f = scheme.segments;
  if (frames < f) {
    throw SamplingError("sampling: video has " + std::to_string(frames) + " frames, scheme " + scheme.name() + " needs " +
                        std::to_string(f));
  }
  std::vector<std::size_t> idx(f);
  for (std::size_t k = 0; k < f; ++k) {
    const std::size_t lo = segment_begin(frames, f, k), hi = segment_end(frames, f, k);
    idx[k] = lo + uniform_index(rng, hi - lo);
  }
  return idx;
}

std::vector<std::size_t> action_indices(std::size_t frames, const SamplingScheme& scheme, Rng& rng) {
  if (scheme.kind != SchemeKind::Clips) throw SamplingError("sampling: action view needs a clip scheme");
  const std::size_t s = scheme.segments;
  if (frames < s) throw SamplingError("sampling: fewer frames than segments");
  std::vector<std::size_t> idx;
  idx.reserve(scheme.frames());
  for (std::size_t k = 0; k < s; ++k) {
    const std::size_t lo = segment_begin(frames, s, k), hi = segment_end(frames, s, k);
    if (hi - lo < scheme.window) {
      throw SamplingError("sampling: segment of " + std::to_string(hi - lo) + " frames is shorter than the " +
                          std::to_string(scheme.window) + "-frame window of scheme " + scheme.name());
    }
    const std::size_t start = lo + uniform_index(rng, hi - lo - scheme.window + 1);
    for (std::size_t j = 0; j < scheme.clip_length; ++j) idx.push_back(start + j * scheme.stride());
  }
  return idx;
}

Frames gather_frames(const VideoTensor& video, const std::vector<std::size_t>& indices) {
  Frames f{indices.size(), video.channels, video.height, video.width, {}};
  const std::size_t n = f.frame_size();
  f.data.resize(indices.size() * n);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= video.frames) throw SamplingError("sampling: frame index out of range");
    std::copy_n(video.frame(indices[k]), n, f.data.begin() + static_cast<std::ptrdiff_t>(k * n));
  }
  return f;
}

View sample_appearance_view(const VideoTensor& video, const SamplingScheme& scheme, Rng& rng) {
  View v;
  v.indices = appearance_indices(video.frames, scheme, rng);
  v.frames = resize(gather_frames(video, v.indices), scheme.height, scheme.width);
  return v;
}

View sample_action_view(const VideoTensor& video, const SamplingScheme& scheme, Rng& rng) {
  View v;
  v.indices = action_indices(video.frames, scheme, rng);
  v.frames = resize(gather_frames(video, v.indices), scheme.height, scheme.width);
  return v;
}

View make_view(const VideoTensor& video, const SamplingScheme& scheme, const AugmentationConfig& aug, Rng& rng) {
  View v;
  v.indices = scheme.kind == SchemeKind::FramesPerSegment ? appearance_indices(video.frames, scheme, rng)
                                                          : action_indices(video.frames, scheme, rng);
  v.params = draw_augment_params(aug, video.channels, video.height, video.width, rng);
  v.frames = apply_augment(gather_frames(video, v.indices), v.params, scheme.height, scheme.width);
  return v;
}

}  // namespace muvfs::synthvid
