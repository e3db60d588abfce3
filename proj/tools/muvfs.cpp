// muvfs command-line entry point.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "muvfs/commands.hpp"
#include "muvfs/config.hpp"

using muvfs::config::ConfigError;
using muvfs::config::RunConfig;

namespace {

struct Common {
  std::string config_path;
  std::string out;
  std::vector<std::string> sets;
  long long seed = -1;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "config file with section.key = value lines");
  sub->add_option("--seed", c.seed, "seed (overrides run.seed)")->check(CLI::NonNegativeNumber);
  sub->add_option("--out", c.out, "output root (overrides paths.out)");
  sub->add_option("--set", c.sets, "override one key, e.g. --set pretrain.epochs=5")->take_all();
}

RunConfig build_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : RunConfig::load(c.config_path);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed >= 0) cfg.set("run.seed", std::to_string(c.seed));
  if (!c.out.empty()) cfg.set("paths.out", c.out);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"muvfs: unsupervised few-shot action recognition on synthetic video"};
  app.require_subcommand(1);

  Common common;
  std::vector<std::pair<std::string, std::string>> commands = {
      {"generate", "render the synthetic dataset"},
      {"pretrain", "contrastive pretraining of both streams"},
      {"metatrain", "episodic meta-training of the attention head"},
      {"evaluate", "few-shot meta-testing on novel classes"},
      {"gradcheck", "finite-difference verification of every gradient"},
      {"config", "print the resolved configuration and its digest"},
  };
  for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help), common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : muvfs::commands::kConfigError;
  }
  const std::string name = app.get_subcommands().front()->get_name();

  RunConfig cfg;
  try {
    cfg = build_config(common);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return muvfs::commands::kConfigError;
  }
  if (name == "config") {
    std::cout << cfg.canonical() << "# digest " << cfg.digest() << "\n";
    return 0;
  }
  return muvfs::commands::run_command(name, cfg, std::cout, std::cerr);
}
