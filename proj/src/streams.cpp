#include "muvfs/streams.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

#include "muvfs/tensor_io.hpp"

namespace muvfs::streams {

Mlp::Mlp(const std::vector<std::size_t>& widths, Rng& rng) {
  if (widths.size() < 2) throw std::invalid_argument("Mlp: need at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    if (widths[i] == 0 || widths[i + 1] == 0) throw std::invalid_argument("Mlp: zero width");
    const double stddev = std::sqrt(2.0 / static_cast<double>(widths[i]));
    weights_.push_back(Tensor::randn({widths[i], widths[i + 1]}, stddev, rng, true));
    biases_.push_back(Tensor::zeros({widths[i + 1]}, true));
  }
}

std::size_t Mlp::input_width() const { return weights_.empty() ? 0 : weights_.front().size(0); }
std::size_t Mlp::output_width() const { return weights_.empty() ? 0 : weights_.back().size(1); }

Tensor Mlp::forward(const Tensor& x) const {
  if (weights_.empty()) throw std::logic_error("Mlp: uninitialized");
  if (x.dim() != 2 || x.size(1) != input_width()) {
    throw ShapeError("Mlp: input " + shape_str(x.shape()) + " does not match input width " + std::to_string(input_width()));
  }
  Tensor h = x;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    h = add(matmul(h, weights_[i]), biases_[i]);
    if (i + 1 < weights_.size()) h = relu(h);
  }
  return h;
}

std::vector<Tensor> Mlp::parameters() const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    out.push_back(weights_[i]);
    out.push_back(biases_[i]);
  }
  return out;
}

void Mlp::add_named(const std::string& prefix, std::map<std::string, Tensor>& out) const {
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    out[prefix + "." + std::to_string(i) + ".weight"] = weights_[i];
    out[prefix + "." + std::to_string(i) + ".bias"] = biases_[i];
  }
}

void Mlp::load_named(const std::string& prefix, const std::map<std::string, Tensor>& in) {
  auto fetch = [&](const std::string& name, const Tensor& like) {
    auto it = in.find(name);
    if (it == in.end()) throw std::runtime_error("checkpoint: missing parameter " + name);
    if (it->second.shape() != like.shape()) {
      throw ShapeError("checkpoint: " + name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                       shape_str(like.shape()));
    }
    return Tensor(like.shape(), it->second.to_vector(), like.requires_grad());
  };
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    weights_[i] = fetch(prefix + "." + std::to_string(i) + ".weight", weights_[i]);
    biases_[i] = fetch(prefix + "." + std::to_string(i) + ".bias", biases_[i]);
  }
}

synthvid::SamplingScheme StreamsConfig::appearance() const {
  return synthvid::parse_scheme(appearance_scheme, appearance_resolution, appearance_resolution);
}

synthvid::SamplingScheme StreamsConfig::action() const {
  return synthvid::parse_scheme(action_scheme, action_resolution, action_resolution);
}

std::size_t StreamsConfig::appearance_input() const { return channels * appearance_resolution * appearance_resolution; }

std::size_t StreamsConfig::action_input() const {
  return action().frames() * channels * action_resolution * action_resolution;
}

TwoStreamModel::TwoStreamModel(const StreamsConfig& config, Rng& rng) : config_(config) {
  auto widths = [&](std::size_t in) {
    std::vector<std::size_t> w{in};
    w.insert(w.end(), config.hidden.begin(), config.hidden.end());
    w.push_back(config.embed_dim);
    return w;
  };
  const std::size_t ph = config.proj_hidden ? config.proj_hidden : config.embed_dim;
  appearance = Mlp(widths(config.appearance_input()), rng);
  action = Mlp(widths(config.action_input()), rng);
  head_ap = Mlp({config.embed_dim, ph, config.proj_dim}, rng);
  head_act = Mlp({config.embed_dim, ph, config.proj_dim}, rng);
  if (config.joint_head) head_joint = Mlp({2 * config.embed_dim, 2 * ph, config.proj_dim}, rng);
}

std::vector<Tensor> TwoStreamModel::parameters() const {
  std::vector<Tensor> out;
  for (const Mlp* m : {&appearance, &action, &head_ap, &head_act, &head_joint}) {
    auto p = m->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::map<std::string, Tensor> TwoStreamModel::named_parameters() const {
  std::map<std::string, Tensor> out;
  appearance.add_named("appearance", out);
  action.add_named("action", out);
  head_ap.add_named("head_ap", out);
  head_act.add_named("head_act", out);
  head_joint.add_named("head_joint", out);
  return out;
}

void TwoStreamModel::load_named(const std::map<std::string, Tensor>& params) {
  appearance.load_named("appearance", params);
  action.load_named("action", params);
  head_ap.load_named("head_ap", params);
  head_act.load_named("head_act", params);
  head_joint.load_named("head_joint", params);
}

void TwoStreamModel::set_requires_grad(bool value) {
  for (Mlp* m : {&appearance, &action, &head_ap, &head_act, &head_joint}) {
    for (auto& w : m->weights()) w.requires_grad_(value);
    for (auto& b : m->biases()) b.requires_grad_(value);
  }
}

namespace {

Tensor pack(const std::vector<const synthvid::Frames*>& views, bool per_frame_rows, const InputNorm& norm) {
  if (views.empty()) throw ShapeError("pack: no views");
  const auto& first = *views.front();
  const std::size_t per_view = first.data.size();
  std::vector<double> data;
  data.reserve(views.size() * per_view);
  for (const auto* v : views) {
    if (v->count != first.count || v->frame_size() != first.frame_size()) {
      throw ShapeError("pack: views differ in frame count or size");
    }
    if (!norm.per_frame) {
      for (double x : v->data) data.push_back((x - norm.mean) / norm.stddev);
      continue;
    }
    const std::size_t plane = v->height * v->width;
    for (std::size_t p = 0; p < v->count * v->channels; ++p) {
      const double* x = v->data.data() + p * plane;
      double mu = 0, var = 0;
      for (std::size_t i = 0; i < plane; ++i) mu += x[i];
      mu /= static_cast<double>(plane);
      for (std::size_t i = 0; i < plane; ++i) var += (x[i] - mu) * (x[i] - mu);
      const double inv = 1.0 / std::sqrt(var / static_cast<double>(plane) + 1e-4);
      for (std::size_t i = 0; i < plane; ++i) data.push_back((x[i] - mu) * inv);
    }
  }
  if (per_frame_rows) return Tensor({views.size() * first.count, first.frame_size()}, std::move(data));
  return Tensor({views.size(), per_view}, std::move(data));
}

}  // namespace

InputNorm input_norm(const StreamsConfig& c) { return {c.per_frame_norm, c.input_mean, c.input_std}; }

Tensor pack_frames(const std::vector<const synthvid::Frames*>& views, const InputNorm& norm) { return pack(views, true, norm); }
Tensor pack_clips(const std::vector<const synthvid::Frames*>& views, const InputNorm& norm) { return pack(views, false, norm); }

AppearanceOut encode_appearance(const Mlp& encoder, const Tensor& frames, std::size_t batch, std::size_t per_video) {
  if (per_video == 0) throw ShapeError("encode_appearance: F must be at least 1");
  if (frames.dim() != 2 || frames.size(0) != batch * per_video) {
    throw ShapeError("encode_appearance: frames " + shape_str(frames.shape()) + " do not hold " + std::to_string(batch) +
                     " x " + std::to_string(per_video) + " rows");
  }
  const Tensor h = encoder.forward(frames);
  AppearanceOut out;
  out.frames = reshape(h, {batch, per_video, encoder.output_width()});
  out.mean = mean(out.frames, 1);
  return out;
}

Tensor encode_action(const Mlp& encoder, const Tensor& clips, std::size_t expected_frames) {
  if (clips.dim() != 2 || expected_frames == 0 || clips.size(1) % expected_frames != 0 ||
      clips.size(1) != encoder.input_width()) {
    throw ShapeError("encode_action: clip input " + shape_str(clips.shape()) + " does not match " +
                     std::to_string(expected_frames) + " frames of encoder width " + std::to_string(encoder.input_width()));
  }
  return encoder.forward(clips);
}

Tensor project(const Mlp& head, const Tensor& h) {
  if (h.dim() != 2 || h.size(1) != head.input_width()) {
    throw ShapeError("project: input " + shape_str(h.shape()) + " does not match head width " +
                     std::to_string(head.input_width()));
  }
  return head.forward(h);
}

StreamEmbeddings embed(const TwoStreamModel& model, const std::vector<const synthvid::Frames*>& ap_views,
                       const std::vector<const synthvid::Frames*>& act_views) {
  if (ap_views.size() != act_views.size()) throw ShapeError("embed: stream batch sizes differ");
  StreamEmbeddings e;
  const auto& c = model.config();
  const auto ap = encode_appearance(model.appearance, pack_frames(ap_views, input_norm(c)), ap_views.size(),
                                    ap_views.front()->count);
  e.ap_frames = ap.frames;
  e.ap_mean = ap.mean;
  e.act = encode_action(model.action, pack_clips(act_views, input_norm(c)), act_views.front()->count);
  return e;
}

void save_checkpoint(const std::filesystem::path& dir, const std::map<std::string, Tensor>& params,
                     const std::map<std::string, std::string>& meta) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw TensorFileError(TensorFileErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json index{{"format", "muvfs-checkpoint"}, {"version", 1}};
  nlohmann::json files = nlohmann::json::object();
  for (const auto& [name, t] : params) {
    const std::string file = name + ".muvt";
    write_tensor_file(dir / file, t, DType::F64);
    files[name] = file;
  }
  index["params"] = files;
  index["meta"] = meta;
  std::ofstream out(dir / "index.json", std::ios::binary | std::ios::trunc);
  if (!out) throw TensorFileError(TensorFileErrorKind::Io, "cannot write " + (dir / "index.json").string());
  out << index.dump(1) << "\n";
}

std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& dir, std::map<std::string, std::string>* meta) {
  std::ifstream in(dir / "index.json", std::ios::binary);
  if (!in) throw TensorFileError(TensorFileErrorKind::Io, "cannot open " + (dir / "index.json").string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  std::map<std::string, Tensor> out;
  try {
    const auto index = nlohmann::json::parse(buffer.str());
    if (index.value("format", "") != "muvfs-checkpoint") throw std::runtime_error("checkpoint: unexpected format tag");
    for (const auto& [name, file] : index.at("params").items()) out[name] = read_tensor_file(dir / file.get<std::string>());
    if (meta && index.contains("meta")) *meta = index["meta"].get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: ") + e.what());
  }
  return out;
}

}  // namespace muvfs::streams
