#include "muvfs/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace muvfs::config {
namespace {

using Setter = std::function<void(RunConfig&, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Key {
  Setter set;
  Getter get;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& what, const std::string& value) {
  throw ConfigError("expected " + what + ", got '" + value + "'");
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (v.empty() || ec != std::errc() || p != end) bad("a non-negative integer", v);
  return out;
}

std::size_t to_size(const std::string& v) { return static_cast<std::size_t>(to_u64(v)); }

int to_int(const std::string& v) {
  int out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (v.empty() || ec != std::errc() || p != end) bad("an integer", v);
  return out;
}

double to_double(const std::string& v) {
  double out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (v.empty() || ec != std::errc() || p != end || !std::isfinite(out)) bad("a finite number", v);
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad("true or false", v);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) bad("a comma-separated list", v);
    out.push_back(item);
  }
  return out;
}

std::vector<std::size_t> to_sizes(const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& s : split_list(v)) out.push_back(to_size(s));
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(int v) { return std::to_string(v); }

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, std::string>) {
      out += xs[i];
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

// Wraps library parse errors so they surface as config errors.
template <typename F>
auto checked(F&& f, const std::string& v) {
  try {
    return f(v);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

const std::map<std::string, Key>& registry() {
  static const std::map<std::string, Key> keys = [] {
    std::map<std::string, Key> k;
#define SIZE_KEY(name, field) \
  k[name] = {[](RunConfig& c, const std::string& v) { c.field = to_size(v); }, [](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(c.field)); }}
#define INT_KEY(name, field) \
  k[name] = {[](RunConfig& c, const std::string& v) { c.field = to_int(v); }, [](const RunConfig& c) { return fmt(c.field); }}
#define DOUBLE_KEY(name, field) \
  k[name] = {[](RunConfig& c, const std::string& v) { c.field = to_double(v); }, [](const RunConfig& c) { return fmt(c.field); }}
#define BOOL_KEY(name, field) \
  k[name] = {[](RunConfig& c, const std::string& v) { c.field = to_bool(v); }, [](const RunConfig& c) { return fmt(c.field); }}
#define STRING_KEY(name, field) \
  k[name] = {[](RunConfig& c, const std::string& v) { c.field = v; }, [](const RunConfig& c) { return c.field; }}

    k["run.seed"] = {[](RunConfig& c, const std::string& v) { c.seed = to_u64(v); }, [](const RunConfig& c) { return fmt(c.seed); }};
    STRING_KEY("paths.out", paths.out);
    STRING_KEY("paths.dataset", paths.dataset);
    STRING_KEY("paths.pretrain", paths.pretrain);
    STRING_KEY("paths.meta", paths.meta);
    STRING_KEY("paths.eval", paths.eval);

    INT_KEY("data.appearance_classes", data.appearance_classes);
    INT_KEY("data.motion_classes", data.motion_classes);
    INT_KEY("data.videos_per_class", data.videos_per_class);
    SIZE_KEY("data.frames", data.frames);
    SIZE_KEY("data.channels", data.channels);
    SIZE_KEY("data.height", data.height);
    SIZE_KEY("data.width", data.width);
    INT_KEY("data.novel_tail", data.novel_tail);
    DOUBLE_KEY("data.noise", data.noise);
    DOUBLE_KEY("data.exposure", data.exposure);

    k["streams.appearance_scheme"] = {
        [](RunConfig& c, const std::string& v) {
          checked([](const std::string& s) { return synthvid::parse_scheme(s, 1, 1); }, v);
          c.streams.appearance_scheme = v;
        },
        [](const RunConfig& c) { return c.streams.appearance_scheme; }};
    k["streams.action_scheme"] = {
        [](RunConfig& c, const std::string& v) {
          checked([](const std::string& s) { return synthvid::parse_scheme(s, 1, 1); }, v);
          c.streams.action_scheme = v;
        },
        [](const RunConfig& c) { return c.streams.action_scheme; }};
    SIZE_KEY("streams.appearance_resolution", streams.appearance_resolution);
    SIZE_KEY("streams.action_resolution", streams.action_resolution);
    k["streams.hidden"] = {[](RunConfig& c, const std::string& v) { c.streams.hidden = to_sizes(v); },
                           [](const RunConfig& c) { return join(c.streams.hidden); }};
    SIZE_KEY("streams.embed_dim", streams.embed_dim);
    SIZE_KEY("streams.proj_hidden", streams.proj_hidden);
    SIZE_KEY("streams.proj_dim", streams.proj_dim);
    BOOL_KEY("streams.per_frame_norm", streams.per_frame_norm);
    DOUBLE_KEY("streams.input_mean", streams.input_mean);
    DOUBLE_KEY("streams.input_std", streams.input_std);

    DOUBLE_KEY("augment.crop_min", augment.crop_min);
    DOUBLE_KEY("augment.crop_max", augment.crop_max);
    DOUBLE_KEY("augment.hflip_prob", augment.hflip_prob);
    DOUBLE_KEY("augment.jitter_prob", augment.jitter_prob);
    DOUBLE_KEY("augment.jitter_strength", augment.jitter_strength);
    DOUBLE_KEY("augment.grayscale_prob", augment.grayscale_prob);
    DOUBLE_KEY("augment.blur_prob", augment.blur_prob);

    SIZE_KEY("pretrain.epochs", pretrain.epochs);
    SIZE_KEY("pretrain.batch_size", pretrain.batch_size);
    DOUBLE_KEY("pretrain.tau", pretrain.tau);
    DOUBLE_KEY("pretrain.peak_lr", pretrain.peak_lr);
    DOUBLE_KEY("pretrain.final_lr", pretrain.final_lr);
    SIZE_KEY("pretrain.warmup_epochs", pretrain.warmup_epochs);
    k["pretrain.optimizer"] = {
        [](RunConfig& c, const std::string& v) { c.pretrain.optimizer.kind = checked(parse_optimizer_kind, v); },
        [](const RunConfig& c) { return to_string(c.pretrain.optimizer.kind); }};
    DOUBLE_KEY("pretrain.momentum", pretrain.optimizer.momentum);
    BOOL_KEY("pretrain.joint_loss", pretrain.joint_loss);
    BOOL_KEY("pretrain.skl_loss", pretrain.skl_loss);
    BOOL_KEY("pretrain.shared_augmentation", pretrain.shared_augmentation);

    SIZE_KEY("a3m.d_k", a3m.d_k);
    SIZE_KEY("a3m.d_v", a3m.d_v);
    BOOL_KEY("a3m.bias", a3m.bias);

    SIZE_KEY("mining.n", mining.n);
    SIZE_KEY("mining.mining_batch", mining.mining_batch);
    DOUBLE_KEY("mining.exploration_fraction", mining.exploration_fraction);
    SIZE_KEY("mining.way", mining.way);
    SIZE_KEY("mining.shots", mining.shots);
    SIZE_KEY("mining.queries", mining.queries);

    DOUBLE_KEY("meta.alpha", meta.alpha);
    DOUBLE_KEY("meta.beta", meta.beta);
    SIZE_KEY("meta.episodes_per_iter", meta.episodes_per_iter);
    SIZE_KEY("meta.iterations", meta.iterations);
    SIZE_KEY("meta.inner_steps", meta.inner_steps);
    k["meta.order"] = {[](RunConfig& c, const std::string& v) { c.meta.order = checked(metalearn::parse_meta_order, v); },
                       [](const RunConfig& c) { return metalearn::to_string(c.meta.order); }};
    k["meta.optimizer"] = {
        [](RunConfig& c, const std::string& v) { c.meta.optimizer.kind = checked(parse_optimizer_kind, v); },
        [](const RunConfig& c) { return to_string(c.meta.optimizer.kind); }};
    DOUBLE_KEY("meta.final_lr_ratio", meta.final_lr_ratio);
    k["meta.objective"] = {[](RunConfig& c, const std::string& v) {
                             const auto l = checked(metalearn::parse_learner, v);
                             if (l == metalearn::Learner::BaselinePP) throw ConfigError("baselinepp is a test-time learner only");
                             c.meta.objective = l;
                           },
                           [](const RunConfig& c) { return metalearn::to_string(c.meta.objective); }};
    BOOL_KEY("meta.hard_episodes", hard_episodes);
    k["meta.mode"] = {[](RunConfig& c, const std::string& v) { c.meta_mode = checked(metalearn::parse_feature_mode, v); },
                      [](const RunConfig& c) { return metalearn::to_string(c.meta_mode); }};

    k["eval.learner"] = {[](RunConfig& c, const std::string& v) { c.eval.learner = checked(metalearn::parse_learner, v); },
                         [](const RunConfig& c) { return metalearn::to_string(c.eval.learner); }};
    DOUBLE_KEY("eval.finetune_lr", eval.finetune_lr);
    SIZE_KEY("eval.finetune_epochs", eval.finetune_epochs);
    DOUBLE_KEY("eval.baseline_scale", eval.baseline_scale);
    SIZE_KEY("eval.episodes", eval.episodes);
    k["eval.ways"] = {[](RunConfig& c, const std::string& v) { c.eval.ways = to_sizes(v); },
                      [](const RunConfig& c) { return join(c.eval.ways); }};
    SIZE_KEY("eval.shot", eval.shot);
    SIZE_KEY("eval.queries", eval.queries);
    k["eval.ablation"] = {[](RunConfig& c, const std::string& v) { c.eval.ablation = checked(parse_ablation, v); },
                          [](const RunConfig& c) { return to_string(c.eval.ablation); }};
    k["eval.separable"] = {[](RunConfig& c, const std::string& v) { c.eval.separable = checked(parse_separable, v); },
                           [](const RunConfig& c) { return to_string(c.eval.separable); }};

    SIZE_KEY("gradcheck.seeds", gradcheck.seeds);
    DOUBLE_KEY("gradcheck.step", gradcheck.step);
    DOUBLE_KEY("gradcheck.tolerance", gradcheck.tolerance);
    DOUBLE_KEY("gradcheck.double_tolerance", gradcheck.double_tolerance);
    k["gradcheck.only"] = {[](RunConfig& c, const std::string& v) { c.gradcheck.only = split_list(v); },
                           [](const RunConfig& c) { return join(c.gradcheck.only); }};
    STRING_KEY("gradcheck.inject_fault", gradcheck.inject_fault);
#undef SIZE_KEY
#undef INT_KEY
#undef DOUBLE_KEY
#undef BOOL_KEY
#undef STRING_KEY
    return k;
  }();
  return keys;
}

std::filesystem::path stage_dir(const std::string& explicit_dir, const std::string& out, const char* stage) {
  return explicit_dir.empty() ? std::filesystem::path(out) / stage : std::filesystem::path(explicit_dir);
}

}  // namespace

Ablation parse_ablation(const std::string& name) {
  if (name == "full") return Ablation::Full;
  if (name == "action-only") return Ablation::ActionOnly;
  if (name == "appearance-only") return Ablation::AppearanceOnly;
  if (name == "concat-no-a3m") return Ablation::ConcatNoA3M;
  if (name == "no-hard-episodes") return Ablation::NoHardEpisodes;
  throw std::invalid_argument("unknown ablation '" + name +
                              "' (expected full, action-only, appearance-only, concat-no-a3m or no-hard-episodes)");
}

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::Full: return "full";
    case Ablation::ActionOnly: return "action-only";
    case Ablation::AppearanceOnly: return "appearance-only";
    case Ablation::ConcatNoA3M: return "concat-no-a3m";
    case Ablation::NoHardEpisodes: return "no-hard-episodes";
  }
  return "full";
}

Separable parse_separable(const std::string& name) {
  if (name == "any") return Separable::Any;
  if (name == "motion") return Separable::Motion;
  if (name == "appearance") return Separable::Appearance;
  throw std::invalid_argument("unknown separable '" + name + "' (expected any, motion or appearance)");
}

std::string to_string(Separable s) {
  switch (s) {
    case Separable::Any: return "any";
    case Separable::Motion: return "motion";
    case Separable::Appearance: return "appearance";
  }
  return "any";
}

std::filesystem::path Paths::dataset_dir() const { return stage_dir(dataset, out, "dataset"); }
std::filesystem::path Paths::pretrain_dir() const { return stage_dir(pretrain, out, "pretrain"); }
std::filesystem::path Paths::meta_dir() const { return stage_dir(meta, out, "meta"); }
std::filesystem::path Paths::eval_dir() const { return stage_dir(eval, out, "eval"); }

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const auto& [name, _] : registry()) out.push_back(name);
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& keys = registry();
  const auto it = keys.find(key);
  if (it == keys.end()) throw ConfigError("unknown key '" + key + "'");
  try {
    it->second.set(*this, trim(value));
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
  explicit_keys.insert(key);
}

std::string RunConfig::get(const std::string& key) const {
  const auto& keys = registry();
  const auto it = keys.find(key);
  if (it == keys.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second.get(*this);
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto where = origin + ":" + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      c.set(key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void RunConfig::validate() const {
  auto wrap = [](auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  };
  wrap([&] { dataset_spec().validate(); });
  wrap([&] { augment.validate(); });
  wrap([&] {
    const auto s = streams_config();
    if (s.hidden.empty()) throw ConfigError("streams.hidden must list at least one width");
    for (auto w : s.hidden) {
      if (w == 0) throw ConfigError("streams.hidden widths must be positive");
    }
    if (s.embed_dim == 0 || s.proj_dim == 0) throw ConfigError("streams widths must be positive");
    if (!s.per_frame_norm && !(s.input_std > 0.0)) throw ConfigError("streams.input_std must be positive");
    s.appearance().validate();
    s.action().validate();
    if (s.appearance().window > data.frames / s.appearance().segments ||
        s.action().window > data.frames / s.action().segments) {
      throw ConfigError("sampling schemes need more frames per segment than data.frames provides");
    }
  });
  wrap([&] { pretrain_config().validate(); });
  wrap([&] { mining.validate(); });
  wrap([&] { meta.validate(); });
  if (a3m.d_k == 0 || a3m.d_v == 0) throw ConfigError("a3m widths must be positive");
  if (eval.ways.empty()) throw ConfigError("eval.ways must list at least one way");
  for (auto w : eval.ways) {
    if (w < 2) throw ConfigError("eval.ways entries must be at least 2");
  }
  if (eval.shot == 0 || eval.queries == 0 || eval.episodes == 0) throw ConfigError("eval shot, queries and episodes must be positive");
  if (!(eval.finetune_lr >= 0.0)) throw ConfigError("eval.finetune_lr must be non-negative");
  if (!(eval.baseline_scale > 0.0)) throw ConfigError("eval.baseline_scale must be positive");
  if (gradcheck.seeds == 0 || !(gradcheck.step > 0.0)) throw ConfigError("gradcheck seeds and step must be positive");
  const auto names = gradcheck::check_names();
  auto known = [&](const std::string& n) { return std::find(names.begin(), names.end(), n) != names.end(); };
  for (const auto& n : gradcheck.only) {
    if (!known(n)) throw ConfigError("gradcheck.only: unknown check '" + n + "'");
  }
  if (!gradcheck.inject_fault.empty() && !known(gradcheck.inject_fault)) {
    throw ConfigError("gradcheck.inject_fault: unknown check '" + gradcheck.inject_fault + "'");
  }
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [name, key] : registry()) out += name + " = " + key.get(*this) + "\n";
  return out;
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string RunConfig::digest() const {
  std::string text;
  for (const auto& [name, key] : registry()) {
    if (name.rfind("paths.", 0) == 0) continue;
    text += name + " = " + key.get(*this) + "\n";
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

synthvid::DatasetSpec RunConfig::dataset_spec() const {
  auto s = data;
  s.seed = seed;
  return s;
}

streams::StreamsConfig RunConfig::streams_config() const {
  auto s = streams;
  s.channels = data.channels;
  s.joint_head = pretrain.joint_loss;
  return s;
}

contrastive::PretrainConfig RunConfig::pretrain_config() const {
  auto p = pretrain;
  p.augmentation = augment;
  p.seed = seed;
  return p;
}

a3m::A3MConfig RunConfig::head_config() const {
  auto h = a3m;
  h.embed_dim = streams.embed_dim;
  h.way = mining.way;
  return h;
}

metalearn::MetaTrainConfig RunConfig::meta_train_config() const {
  metalearn::MetaTrainConfig m;
  m.meta = meta;
  m.mining = mining;
  m.augmentation = augment;
  m.hard_episodes = hard_episodes;
  m.mode = meta_mode;
  m.head = head_config();
  m.seed = seed;
  return m;
}

metalearn::TestProtocol RunConfig::test_protocol() const {
  metalearn::TestProtocol p;
  p.learner = eval.learner;
  p.finetune_lr = eval.finetune_lr;
  p.finetune_epochs = eval.finetune_epochs;
  p.baseline_scale = eval.baseline_scale;
  p.seed = seed;
  return p;
}

}  // namespace muvfs::config
