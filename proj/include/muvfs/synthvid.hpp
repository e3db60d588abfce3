#pragma once

// Synthetic labeled videos. The appearance factor is a fine background
// texture (type and contrast); the motion factor is the trajectory of an
// additively blended disc. Colors, texture phase, start position and the
// disc polarity are per-video nuisances.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "muvfs/random.hpp"

namespace muvfs::synthvid {

enum class Split { UnlabeledTrain, NovelTest };

std::string to_string(Split split);
Split parse_split(const std::string& name);

struct DatasetSpec {
  int appearance_classes = 8;
  int motion_classes = 8;
  int videos_per_class = 10;
  std::size_t frames = 32;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  // Joint classes whose appearance or motion index falls in the last
  // `novel_tail` values form the novel-test split.
  int novel_tail = 2;
  double noise = 0.02;
  // Shutter span in frames; the disc is averaged over it (0 renders it sharp).
  double exposure = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  int joint_classes() const { return appearance_classes * motion_classes; }
  int joint_class(int appearance, int motion) const { return appearance * motion_classes + motion; }
  bool is_novel(int appearance, int motion) const;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ManifestEntry {
  std::int64_t video_id = 0;
  std::string file;
  std::uint64_t offset = 0;
  int appearance_class = 0;
  int motion_class = 0;
  int joint_class = 0;
  Split split = Split::UnlabeledTrain;
};

struct DatasetManifest {
  DatasetSpec spec;
  std::vector<ManifestEntry> videos;
  std::string config_digest;  // written only when set

  std::vector<ManifestEntry> entries(Split split) const;
  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text);
};

struct VideoTensor {
  std::int64_t video_id = 0;
  int appearance_class = 0;
  int motion_class = 0;
  int joint_class = 0;
  std::size_t frames = 0, channels = 0, height = 0, width = 0;
  std::vector<float> data;  // T x C x H x W, values in [0, 1]

  float at(std::size_t t, std::size_t c, std::size_t y, std::size_t x) const {
    return data[((t * channels + c) * height + y) * width + x];
  }
  const float* frame(std::size_t t) const { return data.data() + t * channels * height * width; }
};

// Manifest without pixels: ids are assigned joint class by joint class.
DatasetManifest make_manifest(const DatasetSpec& spec);

// Deterministic in (spec.seed, entry.video_id).
VideoTensor render_video(const DatasetSpec& spec, const ManifestEntry& entry);

// Writes manifest.json plus v<id>.muvt (f32) per video into `dir`, which is
// created if its parent exists.
DatasetManifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& dir,
                                 const std::string& config_digest = "");

// Videos held in memory, either rendered directly or read from a dataset dir.
class VideoStore {
 public:
  static VideoStore synthesize(const DatasetSpec& spec);
  static VideoStore load(const std::filesystem::path& dir);

  const DatasetManifest& manifest() const { return manifest_; }
  const VideoTensor& video(std::int64_t video_id) const;
  std::vector<std::int64_t> ids(Split split) const;
  const ManifestEntry& entry(std::int64_t video_id) const;

 private:
  DatasetManifest manifest_;
  std::vector<std::shared_ptr<const VideoTensor>> videos_;
  std::map<std::int64_t, std::size_t> index_;
};

// Per-frame pixel mean and variance over all channels (diagnostic statistics).
struct FrameStats {
  double mean = 0.0;
  double variance = 0.0;
};
FrameStats frame_stats(const VideoTensor& video, std::size_t t);
// Mean squared difference between consecutive frames.
double temporal_difference_energy(const VideoTensor& video);

}  // namespace muvfs::synthvid
