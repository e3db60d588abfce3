#include "muvfs/commands.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "muvfs/contrastive.hpp"
#include "muvfs/gradcheck.hpp"
#include "muvfs/mining.hpp"
#include "muvfs/parallel.hpp"
#include "muvfs/streams.hpp"
#include "muvfs/synthvid.hpp"
#include "muvfs/tensor_io.hpp"

namespace muvfs::commands {
namespace fs = std::filesystem;
using config::RunConfig;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TensorFileError(TensorFileErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw TensorFileError(TensorFileErrorKind::Io, "write failed: " + path.string());
}

void ensure_dir(const fs::path& dir) {
  if (dir.has_parent_path() && !fs::exists(dir.parent_path())) {
    throw TensorFileError(TensorFileErrorKind::Io, "parent directory does not exist: " + dir.parent_path().string());
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw TensorFileError(TensorFileErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
}

// Stage directories default to <out>/<stage>; the out root is created when
// its own parent exists.
void prepare_out_root(const RunConfig& c, const std::string& explicit_stage) {
  if (explicit_stage.empty()) ensure_dir(fs::path(c.paths.out));
}

// Timestamps live here and nowhere else, so primary outputs stay byte-stable.
void write_sidecar(const fs::path& dir, const std::string& command, const RunConfig& c, const std::string& started,
                   double seconds) {
  nlohmann::json j{{"command", command},
                   {"config_digest", c.digest()},
                   {"seed", c.seed},
                   {"version", kVersion},
                   {"threads", worker_count()},
                   {"started_utc", started},
                   {"finished_utc", utc_now()},
                   {"duration_seconds", seconds}};
  write_text(dir / "run_meta.json", j.dump(1) + "\n");
}

synthvid::VideoStore open_dataset(const RunConfig& c) {
  const fs::path dir = c.paths.dataset_dir();
  if (!fs::exists(dir / "manifest.json")) {
    throw TensorFileError(TensorFileErrorKind::Io, "no dataset at " + dir.string() + " (run generate first)");
  }
  return synthvid::VideoStore::load(dir);
}

streams::TwoStreamModel fresh_model(const RunConfig& c) {
  Rng rng(derive_seed(c.seed, {0x6d6f64656cULL}));
  return streams::TwoStreamModel(c.streams_config(), rng);
}

streams::TwoStreamModel open_model(const RunConfig& c) {
  const fs::path dir = c.paths.pretrain_dir();
  if (!fs::exists(dir / "index.json")) {
    throw TensorFileError(TensorFileErrorKind::Io, "no pretrained checkpoint at " + dir.string() + " (run pretrain first)");
  }
  auto model = fresh_model(c);
  try {
    model.load_named(streams::load_checkpoint(dir));
  } catch (const std::invalid_argument& e) {
    throw config::ConfigError(std::string("pretrained checkpoint does not match streams.* settings: ") + e.what());
  }
  model.set_requires_grad(false);
  return model;
}

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::vector<mining::TestItem> grouped_items(const synthvid::VideoStore& store, config::Separable separable) {
  auto items = mining::novel_items(store.manifest());
  for (auto& it : items) {
    const auto& e = store.entry(it.video_id);
    // Classes that share an appearance differ only in motion, and vice versa.
    it.group = separable == config::Separable::Motion ? e.appearance_class
               : separable == config::Separable::Appearance ? e.motion_class
                                                            : 0;
  }
  return items;
}

}  // namespace

void save_head(const fs::path& dir, const metalearn::Head& head, std::map<std::string, std::string> meta) {
  std::map<std::string, Tensor> named;
  const auto& p = head.params;
  if (p.K.defined()) named["head.K"] = p.K, named["head.V"] = p.V, named["head.Q"] = p.Q;
  named["head.W"] = p.W;
  if (p.b.defined()) named["head.b"] = p.b;
  meta["mode"] = metalearn::to_string(head.mode);
  streams::save_checkpoint(dir, named, meta);
}

metalearn::Head load_head(const fs::path& dir, std::map<std::string, std::string>* meta_out) {
  if (!fs::exists(dir / "index.json")) {
    throw TensorFileError(TensorFileErrorKind::Io, "no meta-trained checkpoint at " + dir.string() + " (run metatrain first)");
  }
  std::map<std::string, std::string> meta;
  auto named = streams::load_checkpoint(dir, &meta);
  metalearn::Head head;
  head.mode = metalearn::parse_feature_mode(meta.count("mode") ? meta["mode"] : "a3m");
  auto take = [&](const char* key) {
    auto it = named.find(key);
    if (it == named.end()) return Tensor();
    Tensor t = it->second;
    t.requires_grad_(true);
    return t;
  };
  head.params.K = take("head.K"), head.params.V = take("head.V"), head.params.Q = take("head.Q");
  head.params.W = take("head.W"), head.params.b = take("head.b");
  if (!head.params.W.defined()) throw std::runtime_error("meta checkpoint: missing head.W");
  if ((head.mode == metalearn::FeatureMode::A3M) != head.params.K.defined()) {
    throw std::runtime_error("meta checkpoint: attention heads do not match mode " + metalearn::to_string(head.mode));
  }
  if (meta_out) *meta_out = meta;
  return head;
}

std::vector<std::string> ignored_parameter_warnings(const RunConfig& c) {
  std::vector<std::string> out;
  if (c.eval.learner == metalearn::Learner::ProtoNet) {
    for (const char* key : {"eval.finetune_epochs", "eval.finetune_lr", "eval.baseline_scale"}) {
      if (c.is_explicit(key)) out.push_back(std::string("ignored parameter: ") + key + " has no effect with eval.learner=protonet");
    }
  } else if (c.eval.learner != metalearn::Learner::BaselinePP && c.is_explicit("eval.baseline_scale")) {
    out.push_back("ignored parameter: eval.baseline_scale only applies to eval.learner=baselinepp");
  }
  return out;
}

CommandResult cmd_generate(const RunConfig& c) {
  const auto t0 = Clock::now();
  const std::string started = utc_now();
  const fs::path dir = c.paths.dataset_dir();
  prepare_out_root(c, c.paths.dataset);
  const auto manifest = synthvid::generate_dataset(c.dataset_spec(), dir, c.digest());
  write_sidecar(dir, "generate", c, started, since(t0));
  CommandResult r;
  const auto train = manifest.entries(synthvid::Split::UnlabeledTrain).size();
  const auto novel = manifest.entries(synthvid::Split::NovelTest).size();
  r.message = "generated " + std::to_string(manifest.videos.size()) + " videos (" + std::to_string(train) + " unlabeled-train, " +
              std::to_string(novel) + " novel-test) in " + dir.string();
  r.summary = {{"dataset", dir.string()}, {"videos", manifest.videos.size()}, {"train", train}, {"novel", novel}};
  return r;
}

CommandResult cmd_pretrain(const RunConfig& c) {
  const auto t0 = Clock::now();
  const std::string started = utc_now();
  const auto store = open_dataset(c);
  const fs::path dir = c.paths.pretrain_dir();
  prepare_out_root(c, c.paths.pretrain);
  ensure_dir(dir);
  const auto pc = c.pretrain_config();
  auto result = contrastive::pretrain(store, fresh_model(c), pc);
  streams::save_checkpoint(dir, result.model.named_parameters(),
                           {{"kind", "pretrain"}, {"config_digest", c.digest()}, {"epochs", std::to_string(pc.epochs)}});
  write_text(dir / "pretrain_log.csv", contrastive::log_csv(result.log, pc.joint_loss, pc.skl_loss));
  write_sidecar(dir, "pretrain", c, started, since(t0));
  CommandResult r;
  std::ostringstream msg;
  msg << "pretrained " << pc.epochs << " epochs into " << dir.string();
  if (!result.log.empty()) {
    msg << std::fixed << std::setprecision(4) << " (final loss_ap " << result.log.back().loss_ap << ", loss_act "
        << result.log.back().loss_act << ")";
  }
  r.message = msg.str();
  r.summary = {{"checkpoint", dir.string()}, {"epochs", pc.epochs}};
  return r;
}

CommandResult cmd_metatrain(const RunConfig& c) {
  const auto t0 = Clock::now();
  const std::string started = utc_now();
  const auto store = open_dataset(c);
  const auto model = open_model(c);
  const fs::path dir = c.paths.meta_dir();
  prepare_out_root(c, c.paths.meta);
  ensure_dir(dir);
  const auto mc = c.meta_train_config();
  Rng rng(derive_seed(c.seed, {0x68656164ULL}));
  auto result = metalearn::meta_train(store, model, metalearn::Head::init(mc.mode, mc.head, rng), mc);
  save_head(dir, result.head,
            {{"kind", "meta"},
             {"config_digest", c.digest()},
             {"hard_episodes", mc.hard_episodes ? "true" : "false"},
             {"objective", metalearn::to_string(mc.meta.objective)},
             {"order", metalearn::to_string(mc.meta.order)}});
  write_text(dir / "metatrain_log.csv", metalearn::iteration_log_csv(result.log));
  write_sidecar(dir, "metatrain", c, started, since(t0));
  CommandResult r;
  r.message = "meta-trained " + std::to_string(mc.meta.iterations) + " iterations (" +
              (mc.hard_episodes ? "hard" : "random") + " episodes) into " + dir.string();
  r.summary = {{"checkpoint", dir.string()}, {"iterations", mc.meta.iterations}};
  return r;
}

CommandResult cmd_evaluate(const RunConfig& c) {
  const auto t0 = Clock::now();
  const std::string started = utc_now();
  CommandResult r;
  r.warnings = ignored_parameter_warnings(c);
  const auto store = open_dataset(c);
  const auto model = open_model(c);

  metalearn::Head head;
  using config::Ablation;
  switch (c.eval.ablation) {
    case Ablation::Full:
    case Ablation::NoHardEpisodes: {
      std::map<std::string, std::string> meta;
      head = load_head(c.paths.meta_dir(), &meta);
      const bool want_hard = c.eval.ablation == Ablation::Full;
      if (head.mode != metalearn::FeatureMode::A3M) {
        throw config::ConfigError("eval.ablation=" + config::to_string(c.eval.ablation) + " needs an a3m meta checkpoint");
      }
      if ((meta["hard_episodes"] == "true") != want_hard) {
        throw config::ConfigError("eval.ablation=" + config::to_string(c.eval.ablation) + " needs a checkpoint meta-trained with " +
                                  (want_hard ? "hard" : "random") + " episodes (meta.hard_episodes=" + (want_hard ? "true" : "false") +
                                  ")");
      }
      break;
    }
    default: {
      const auto mode = c.eval.ablation == Ablation::ActionOnly       ? metalearn::FeatureMode::ActionOnly
                        : c.eval.ablation == Ablation::AppearanceOnly ? metalearn::FeatureMode::AppearanceOnly
                                                                       : metalearn::FeatureMode::Concat;
      Rng rng(derive_seed(c.seed, {0x68656164ULL}));
      head = metalearn::Head::init(mode, c.head_config(), rng);
      break;
    }
  }

  const auto novel = store.ids(synthvid::Split::NovelTest);
  const auto table = metalearn::embed_test_videos(store, model, novel, c.seed);
  const auto items = grouped_items(store, c.eval.separable);
  const auto protocol = c.test_protocol();
  const fs::path dir = c.paths.eval_dir();
  prepare_out_root(c, c.paths.eval);
  ensure_dir(dir);

  std::string csv = metalearn::EvalReport::csv_header();
  nlohmann::json reports = nlohmann::json::array();
  std::ostringstream msg;
  for (std::size_t way : c.eval.ways) {
    mining::TestSampling ts;
    ts.way = way, ts.shot = c.eval.shot, ts.queries = c.eval.queries, ts.episodes = c.eval.episodes;
    ts.grouped = c.eval.separable != config::Separable::Any;
    Rng rng(derive_seed(c.seed, {0x65706973ULL, way}));
    const auto episodes = mining::sample_test_episodes(items, ts, rng);
    auto report = metalearn::meta_test(head, table, episodes, protocol);
    report.ablation = config::to_string(c.eval.ablation);
    report.config_digest = c.digest();
    if (report.classifier_reinitialized) {
      r.warnings.push_back("classifier re-initialized: meta-trained way " + std::to_string(head.params.way()) +
                           " differs from evaluation way " + std::to_string(way));
    }
    csv += report.csv_row();
    reports.push_back(nlohmann::json::parse(report.to_json()));
    msg << report.ablation << " " << report.learner << " " << way << "-way " << report.shot << "-shot ("
        << config::to_string(c.eval.separable) << "): " << metalearn::AccuracyCI{report.mean_acc, report.ci95}.format() << "\n";
  }
  nlohmann::json out{{"config_digest", c.digest()}, {"separable", config::to_string(c.eval.separable)}, {"reports", reports}};
  write_text(dir / "eval.json", out.dump(1) + "\n");
  write_text(dir / "eval.csv", csv);
  write_sidecar(dir, "evaluate", c, started, since(t0));
  r.message = msg.str();
  if (!r.message.empty() && r.message.back() == '\n') r.message.pop_back();
  r.summary = out;
  return r;
}

CommandResult cmd_gradcheck(const RunConfig& c) {
  auto opts = c.gradcheck;
  opts.base_seed = c.seed;
  const auto report = gradcheck::run(opts);
  CommandResult r;
  r.summary = report.to_json();
  r.message = report.to_text();
  if (report.passed()) {
    r.message += "all " + std::to_string(report.checks.size()) + " gradient checks passed";
  } else {
    std::string names;
    for (const auto& n : report.failing()) names += (names.empty() ? "" : ", ") + n;
    r.message += "gradient check failed: " + names;
    r.exit_code = kVerificationFailure;
  }
  return r;
}

std::vector<std::string> command_names() { return {"generate", "pretrain", "metatrain", "evaluate", "gradcheck"}; }

int run_command(const std::string& name, const RunConfig& c, std::ostream& out, std::ostream& err) {
  CommandResult r;
  try {
    if (name == "generate") r = cmd_generate(c);
    else if (name == "pretrain") r = cmd_pretrain(c);
    else if (name == "metatrain") r = cmd_metatrain(c);
    else if (name == "evaluate") r = cmd_evaluate(c);
    else if (name == "gradcheck") r = cmd_gradcheck(c);
    else throw config::ConfigError("unknown command '" + name + "'");
  } catch (const config::ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const TensorFileError& e) {
    err << e.what() << "\n";
    return kIoError;
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << "\n";
    return kIoError;
  } catch (const synthvid::DatasetError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kVerificationFailure;
  }
  for (const auto& w : r.warnings) err << "warning: " << w << "\n";
  if (!r.message.empty()) (r.exit_code == kOk ? out : err) << r.message << "\n";
  return r.exit_code;
}

}  // namespace muvfs::commands
