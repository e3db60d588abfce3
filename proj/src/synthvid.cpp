#include "muvfs/synthvid.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "muvfs/tensor_io.hpp"

namespace muvfs::synthvid {

namespace {

using nlohmann::json;

constexpr double kDiscPolarity = 0.22;
constexpr int kExposureTaps = 5;
constexpr double kDiscRadius = 5.0;  // pixels on a 32-pixel canvas

struct Trajectory {
  double x0, y0, vx, vy;
  double amplitude, period, phase;
  int pattern;
  double direction;
};

double texture_contrast(const DatasetSpec& spec, int appearance) {
  return 0.08 + 0.28 * static_cast<double>(appearance) / static_cast<double>(spec.appearance_classes - 1);
}

// +1 / -1 pattern with a 4-pixel period.
double texture_sign(int type, std::size_t x, std::size_t y, std::size_t phase_x, std::size_t phase_y) {
  const std::size_t u = (x + phase_x) / 2;
  const std::size_t v = (y + phase_y) / 2;
  std::size_t bit = 0;
  switch (type) {
    case 0: bit = v % 2; break;
    case 1: bit = u % 2; break;
    case 2: bit = (u + v) % 2; break;
    default: bit = ((x + y + phase_x) / 2) % 2; break;
  }
  return bit ? 1.0 : -1.0;
}

Trajectory draw_trajectory(int motion, double scale, double width, double height, Rng& rng) {
  Trajectory tr{};
  tr.x0 = uniform_real(rng, 0.25 * width, 0.75 * width);
  tr.y0 = uniform_real(rng, 0.25 * height, 0.75 * height);
  tr.phase = uniform_real(rng, 0.0, 2.0 * std::numbers::pi);
  tr.direction = bernoulli(rng, 0.5) ? 1.0 : -1.0;
  const double second_sign = bernoulli(rng, 0.5) ? 1.0 : -1.0;
  tr.pattern = motion % 8;
  const double boost = 1.0 + 0.35 * static_cast<double>(motion / 8);
  const double s = scale * boost;
  switch (tr.pattern) {
    case 0: break;
    case 1: tr.vy = -1.0 * s; break;
    case 2: tr.vy = 2.0 * s; break;
    case 3: tr.vx = 2.5 * s * tr.direction; break;
    case 4:
      tr.vx = 2.0 * s * tr.direction;
      tr.vy = 2.0 * s * second_sign;
      break;
    case 5: tr.amplitude = 8.0 * s, tr.period = 8.0; break;
    case 6: tr.amplitude = 10.0 * s, tr.period = 12.0; break;
    default: tr.amplitude = 8.0 * s, tr.period = 8.0; break;
  }
  return tr;
}

void position_at(const Trajectory& tr, double t, double& cx, double& cy) {
  cx = tr.x0 + tr.vx * t;
  cy = tr.y0 + tr.vy * t;
  const double w = 2.0 * std::numbers::pi / (tr.period > 0 ? tr.period : 1.0);
  switch (tr.pattern) {
    case 5: cy += tr.amplitude * std::sin(w * t + tr.phase); break;
    case 6: cx += tr.amplitude * std::sin(w * t + tr.phase); break;
    case 7:
      cx += tr.amplitude * std::cos(tr.direction * w * t + tr.phase);
      cy += tr.amplitude * std::sin(tr.direction * w * t + tr.phase);
      break;
    default: break;
  }
}

double wrapped_delta(double a, double b, double period) {
  double d = std::fmod(std::fabs(a - b), period);
  return std::min(d, period - d);
}

json spec_to_json(const DatasetSpec& s) {
  return json{{"appearance_classes", s.appearance_classes},
              {"motion_classes", s.motion_classes},
              {"videos_per_class", s.videos_per_class},
              {"frames", s.frames},
              {"channels", s.channels},
              {"height", s.height},
              {"width", s.width},
              {"novel_tail", s.novel_tail},
              {"noise", s.noise},
              {"exposure", s.exposure},
              {"seed", s.seed}};
}

DatasetSpec spec_from_json(const json& j) {
  DatasetSpec s;
  s.appearance_classes = j.at("appearance_classes").get<int>();
  s.motion_classes = j.at("motion_classes").get<int>();
  s.videos_per_class = j.at("videos_per_class").get<int>();
  s.frames = j.at("frames").get<std::size_t>();
  s.channels = j.at("channels").get<std::size_t>();
  s.height = j.at("height").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  s.novel_tail = j.at("novel_tail").get<int>();
  s.noise = j.at("noise").get<double>();
  s.exposure = j.value("exposure", 1.0);
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

}  // namespace

std::string to_string(Split split) { return split == Split::UnlabeledTrain ? "unlabeled-train" : "novel-test"; }

Split parse_split(const std::string& name) {
  if (name == "unlabeled-train") return Split::UnlabeledTrain;
  if (name == "novel-test") return Split::NovelTest;
  throw DatasetError("unknown split tag '" + name + "'");
}

void DatasetSpec::validate() const {
  if (appearance_classes < 2 || motion_classes < 2) {
    throw DatasetError("dataset needs at least 2 appearance and 2 motion classes");
  }
  if (videos_per_class < 1) throw DatasetError("videos_per_class must be positive");
  if (height < 8 || width < 8) {
    throw DatasetError("frame size " + std::to_string(height) + "x" + std::to_string(width) +
                       " is too small to render shapes (minimum 8x8)");
  }
  if (frames < 1 || channels < 1) throw DatasetError("frames and channels must be positive");
  if (novel_tail < 0 || novel_tail >= std::min(appearance_classes, motion_classes)) {
    throw DatasetError("novel_tail must lie in [0, min(appearance_classes, motion_classes))");
  }
  if (noise < 0.0) throw DatasetError("noise must be non-negative");
  if (!(exposure >= 0.0 && exposure <= 4.0)) throw DatasetError("exposure must be in [0, 4]");
}

bool DatasetSpec::is_novel(int appearance, int motion) const {
  return appearance >= appearance_classes - novel_tail || motion >= motion_classes - novel_tail;
}

std::vector<ManifestEntry> DatasetManifest::entries(Split split) const {
  std::vector<ManifestEntry> out;
  std::copy_if(videos.begin(), videos.end(), std::back_inserter(out), [split](const ManifestEntry& e) { return e.split == split; });
  return out;
}

std::string DatasetManifest::to_json() const {
  json videos_json = json::array();
  for (const auto& e : videos) {
    videos_json.push_back(json{{"video_id", e.video_id},
                               {"file", e.file},
                               {"offset", e.offset},
                               {"appearance_class", e.appearance_class},
                               {"motion_class", e.motion_class},
                               {"joint_class", e.joint_class},
                               {"split", to_string(e.split)}});
  }
  json j{{"format", "muvfs-dataset"}, {"version", 1}, {"spec", spec_to_json(spec)}, {"videos", videos_json}};
  if (!config_digest.empty()) j["config_digest"] = config_digest;
  return j.dump(1) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
  DatasetManifest m;
  try {
    const json j = json::parse(text);
    if (j.value("format", "") != "muvfs-dataset") throw DatasetError("manifest: unexpected format tag");
    m.spec = spec_from_json(j.at("spec"));
    m.config_digest = j.value("config_digest", "");
    std::set<std::int64_t> seen;
    for (const auto& v : j.at("videos")) {
      ManifestEntry e;
      e.video_id = v.at("video_id").get<std::int64_t>();
      e.file = v.at("file").get<std::string>();
      e.offset = v.value("offset", std::uint64_t{0});
      e.appearance_class = v.at("appearance_class").get<int>();
      e.motion_class = v.at("motion_class").get<int>();
      e.joint_class = v.at("joint_class").get<int>();
      e.split = parse_split(v.at("split").get<std::string>());
      if (!seen.insert(e.video_id).second) throw DatasetError("manifest: duplicate video_id " + std::to_string(e.video_id));
      m.videos.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    throw DatasetError(std::string("manifest: ") + ex.what());
  }
  return m;
}

DatasetManifest make_manifest(const DatasetSpec& spec) {
  spec.validate();
  DatasetManifest m;
  m.spec = spec;
  std::int64_t next_id = 0;
  for (int a = 0; a < spec.appearance_classes; ++a) {
    for (int mo = 0; mo < spec.motion_classes; ++mo) {
      for (int k = 0; k < spec.videos_per_class; ++k) {
        ManifestEntry e;
        e.video_id = next_id++;
        e.file = "v" + std::to_string(e.video_id) + ".muvt";
        e.appearance_class = a;
        e.motion_class = mo;
        e.joint_class = spec.joint_class(a, mo);
        e.split = spec.is_novel(a, mo) ? Split::NovelTest : Split::UnlabeledTrain;
        m.videos.push_back(std::move(e));
      }
    }
  }
  return m;
}

VideoTensor render_video(const DatasetSpec& spec, const ManifestEntry& entry) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, {static_cast<std::uint64_t>(entry.video_id)}));
  const std::size_t T = spec.frames, C = spec.channels, H = spec.height, W = spec.width;
  const double scale = static_cast<double>(std::min(H, W)) / 32.0;

  // Nuisances first, then the trajectory, then pixel noise.
  std::vector<double> base(C);
  for (auto& b : base) b = uniform_real(rng, 0.4, 0.6);
  // Even phases keep the texture aligned to the 2-pixel grid.
  const std::size_t phase_x = 2 * uniform_index(rng, 2);
  const std::size_t phase_y = 2 * uniform_index(rng, 2);
  const double polarity = kDiscPolarity;
  const Trajectory tr = draw_trajectory(entry.motion_class, scale, static_cast<double>(W), static_cast<double>(H), rng);

  const int texture_type = entry.appearance_class % 4;
  const double contrast = texture_contrast(spec, entry.appearance_class);
  const double radius = kDiscRadius * scale;

  std::vector<double> background(C * H * W);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        background[(c * H + y) * W + x] = base[c] + 0.5 * contrast * texture_sign(texture_type, x, y, phase_x, phase_y);
      }
    }
  }

  VideoTensor v;
  v.video_id = entry.video_id;
  v.appearance_class = entry.appearance_class;
  v.motion_class = entry.motion_class;
  v.joint_class = entry.joint_class;
  v.frames = T, v.channels = C, v.height = H, v.width = W;
  v.data.resize(T * C * H * W);
  std::normal_distribution<double> noise(0.0, spec.noise > 0 ? spec.noise : 1.0);
  std::vector<double> mask(H * W);
  const int taps = spec.exposure > 0.0 ? kExposureTaps : 1;
  for (std::size_t t = 0; t < T; ++t) {
    std::fill(mask.begin(), mask.end(), 0.0);
    for (int k = 0; k < taps; ++k) {
      const double offset = taps > 1 ? spec.exposure * (static_cast<double>(k) / (taps - 1) - 0.5) : 0.0;
      double cx = 0, cy = 0;
      position_at(tr, static_cast<double>(t) + offset, cx, cy);
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
          const double dx = wrapped_delta(static_cast<double>(x) + 0.5, cx, static_cast<double>(W));
          const double dy = wrapped_delta(static_cast<double>(y) + 0.5, cy, static_cast<double>(H));
          mask[y * W + x] += std::clamp(radius + 0.5 - std::sqrt(dx * dx + dy * dy), 0.0, 1.0) / taps;
        }
      }
    }
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t p = 0; p < H * W; ++p) {
        double value = background[c * H * W + p] + polarity * mask[p];
        if (spec.noise > 0) value += noise(rng);
        v.data[(t * C + c) * H * W + p] = static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
    }
  }
  return v;
}

DatasetManifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& dir,
                                 const std::string& config_digest) {
  DatasetManifest manifest = make_manifest(spec);
  manifest.config_digest = config_digest;
  std::error_code ec;
  if (!dir.parent_path().empty() && !std::filesystem::exists(dir.parent_path())) {
    throw TensorFileError(TensorFileErrorKind::Io, "parent directory does not exist: " + dir.parent_path().string());
  }
  std::filesystem::create_directories(dir, ec);
  if (ec) throw TensorFileError(TensorFileErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  for (const auto& entry : manifest.videos) {
    const VideoTensor v = render_video(spec, entry);
    std::vector<double> values(v.data.begin(), v.data.end());
    write_tensor_file(dir / entry.file, {v.frames, v.channels, v.height, v.width}, values, DType::F32);
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) throw TensorFileError(TensorFileErrorKind::Io, "cannot write " + (dir / "manifest.json").string());
  out << manifest.to_json();
  return manifest;
}

VideoStore VideoStore::synthesize(const DatasetSpec& spec) {
  VideoStore store;
  store.manifest_ = make_manifest(spec);
  for (const auto& e : store.manifest_.videos) {
    store.index_[e.video_id] = store.videos_.size();
    store.videos_.push_back(std::make_shared<const VideoTensor>(render_video(spec, e)));
  }
  return store;
}

VideoStore VideoStore::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw TensorFileError(TensorFileErrorKind::Io, "cannot open " + (dir / "manifest.json").string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  VideoStore store;
  store.manifest_ = DatasetManifest::from_json(buffer.str());
  for (const auto& e : store.manifest_.videos) {
    TensorBlob blob = read_tensor_blob(dir / e.file);
    if (blob.shape.size() != 4) throw DatasetError(e.file + ": expected a T x C x H x W tensor");
    auto v = std::make_shared<VideoTensor>();
    v->video_id = e.video_id;
    v->appearance_class = e.appearance_class;
    v->motion_class = e.motion_class;
    v->joint_class = e.joint_class;
    v->frames = blob.shape[0], v->channels = blob.shape[1], v->height = blob.shape[2], v->width = blob.shape[3];
    v->data.assign(blob.values.begin(), blob.values.end());
    store.index_[e.video_id] = store.videos_.size();
    store.videos_.push_back(std::move(v));
  }
  return store;
}

const VideoTensor& VideoStore::video(std::int64_t video_id) const {
  auto it = index_.find(video_id);
  if (it == index_.end()) throw DatasetError("unknown video_id " + std::to_string(video_id));
  return *videos_[it->second];
}

const ManifestEntry& VideoStore::entry(std::int64_t video_id) const {
  auto it = index_.find(video_id);
  if (it == index_.end()) throw DatasetError("unknown video_id " + std::to_string(video_id));
  return manifest_.videos[it->second];
}

std::vector<std::int64_t> VideoStore::ids(Split split) const {
  std::vector<std::int64_t> out;
  for (const auto& e : manifest_.videos) {
    if (e.split == split) out.push_back(e.video_id);
  }
  return out;
}

FrameStats frame_stats(const VideoTensor& video, std::size_t t) {
  const std::size_t n = video.channels * video.height * video.width;
  const float* f = video.frame(t);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += f[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += (f[i] - mean) * (f[i] - mean);
  return {mean, var / static_cast<double>(n)};
}

double temporal_difference_energy(const VideoTensor& video) {
  if (video.frames < 2) return 0.0;
  const std::size_t n = video.channels * video.height * video.width;
  double total = 0.0;
  for (std::size_t t = 1; t < video.frames; ++t) {
    const float* a = video.frame(t - 1);
    const float* b = video.frame(t);
    for (std::size_t i = 0; i < n; ++i) total += (b[i] - a[i]) * (b[i] - a[i]);
  }
  return total / static_cast<double>(n * (video.frames - 1));
}

}  // namespace muvfs::synthvid
