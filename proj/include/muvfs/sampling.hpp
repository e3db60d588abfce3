#pragma once

// Temporal sampling schemes for the two streams.

#include <cstddef>
#include <string>
#include <vector>

#include "muvfs/augment.hpp"
#include "muvfs/random.hpp"
#include "muvfs/synthvid.hpp"

namespace muvfs::synthvid {

enum class SchemeKind { FramesPerSegment, Clips };

struct SamplingScheme {
  SchemeKind kind = SchemeKind::FramesPerSegment;
  std::size_t segments = 8;  // F for FramesPerSegment, S for Clips
  std::size_t clip_length = 1;  // L
  // Contiguous window drawn per segment before temporal striding; equals L
  // unless the scheme downsamples (e.g. 32 -> 16 uses a window of 32).
  std::size_t window = 1;
  std::size_t height = 16, width = 16;

  std::size_t frames() const { return segments * clip_length; }
  std::size_t stride() const { return window / clip_length; }
  std::string name() const;
  void validate() const;
};

// "4x1", "8x1", "16x1", "4x4", "32->16", "8->4x4" (the unicode spellings
// with x and arrow signs are accepted as well).
SamplingScheme parse_scheme(const std::string& name, std::size_t height, std::size_t width);

class SamplingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Start of segment k out of `count` equal segments over T frames; the last
// segment absorbs the remainder.
std::size_t segment_begin(std::size_t frames, std::size_t count, std::size_t k);
std::size_t segment_end(std::size_t frames, std::size_t count, std::size_t k);  // exclusive

std::vector<std::size_t> appearance_indices(std::size_t frames, const SamplingScheme& scheme, Rng& rng);
std::vector<std::size_t> action_indices(std::size_t frames, const SamplingScheme& scheme, Rng& rng);

Frames gather_frames(const VideoTensor& video, const std::vector<std::size_t>& indices);

struct View {
  Frames frames;
  std::vector<std::size_t> indices;
  AugmentParams params;
};

// Unaugmented views resized to the scheme resolution.
View sample_appearance_view(const VideoTensor& video, const SamplingScheme& scheme, Rng& rng);
View sample_action_view(const VideoTensor& video, const SamplingScheme& scheme, Rng& rng);

// Temporal draw followed by one augmentation draw for the whole view.
View make_view(const VideoTensor& video, const SamplingScheme& scheme, const AugmentationConfig& aug, Rng& rng);

}  // namespace muvfs::synthvid
