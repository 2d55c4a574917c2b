// energyflow command-line driver.
//
// Exit codes: 0 ok, 1 a --strict check failed, 2 I/O error, 3 invalid
// configuration, 4 missing input artifact, 5 numerical divergence.

#include "commands.hpp"

#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <optional>

namespace {

using energyflow::cli::Context;

enum ExitCode { kOk = 0, kIo = 2, kConfig = 3, kMissing = 4, kDiverged = 5 };

struct Flags {
  std::optional<std::string> config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  bool strict = false;
  // per-subcommand shortcuts for common keys
  std::vector<std::pair<std::string, std::optional<std::string>>> shortcuts;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config_file, "key = value config file");
  sub->add_option("--set", f.sets, "override one key (key=value); repeatable");
  sub->add_option("--seed", f.seed, "global seed");
  sub->add_option("--out", f.out, "output directory");
  sub->add_option("--threads", f.threads, "worker threads");
  sub->add_flag("--strict", f.strict, "exit 1 when a reported check fails");
}

void add_shortcut(CLI::App* sub, Flags& f, const std::string& flag, const std::string& key, const std::string& help) {
  f.shortcuts.emplace_back(key, std::nullopt);
  // the vector never reallocates after setup: shortcuts are registered up front
  sub->add_option(flag, f.shortcuts.back().second, help + " (" + key + ")");
}

Context resolve(const Flags& f, const std::string& command) {
  Context ctx;
  if (f.config_file) ctx.cfg.load_file(*f.config_file);
  for (const auto& kv : f.sets) ctx.cfg.apply_assignment(kv);
  for (const auto& [key, value] : f.shortcuts) {
    if (value && key.rfind(command + "/", 0) == 0) ctx.cfg.set(key.substr(command.size() + 1), *value);
  }
  if (f.seed) ctx.cfg.set("seed", std::to_string(*f.seed));
  if (f.out) ctx.cfg.set("out", *f.out);
  if (f.threads) ctx.cfg.set("threads", std::to_string(*f.threads));
  ctx.strict = f.strict;
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = energyflow::cli;
  CLI::App app{"EnergyFlow: energy-parameterized diffusion policies and their checks"};
  app.require_subcommand(1);
  Flags flags;
  flags.shortcuts.reserve(16);

  const std::vector<std::pair<std::string, std::function<int(const Context&)>>> commands{
      {"gen-demos", cli::cmd_gen_demos}, {"train", cli::cmd_train}, {"sample", cli::cmd_sample},
      {"reward", cli::cmd_reward},       {"rl", cli::cmd_rl},       {"theory", cli::cmd_theory}};
  const std::map<std::string, std::string> help{
      {"gen-demos", "draw a demonstration dataset"},
      {"train", "fit an energy network by denoising score matching"},
      {"sample", "draw actions from a trained network"},
      {"reward", "score demonstrations and report ranking fidelity across gamma"},
      {"rl", "train SAC on the goal task under each reward arm"},
      {"theory", "conservative vs unconstrained sweep, or the property suite"}};

  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, fn] : commands) {
    subs[name] = app.add_subcommand(name, help.at(name));
    add_common(subs[name], flags);
  }
  add_shortcut(subs["gen-demos"], flags, "--expert", "gen-demos/expert.kind", "gaussian | mixture2");
  add_shortcut(subs["gen-demos"], flags, "--n", "gen-demos/demos.n", "demonstrations");
  add_shortcut(subs["gen-demos"], flags, "--source", "gen-demos/demos.source", "expert | mdp");
  add_shortcut(subs["train"], flags, "--steps", "train/train.steps", "training steps");
  add_shortcut(subs["sample"], flags, "--n", "sample/sample.n", "samples");
  add_shortcut(subs["sample"], flags, "--state", "sample/sample.state", "raw state, comma separated");
  add_shortcut(subs["rl"], flags, "--arms", "rl/sac.arms", "comma-separated reward arms");
  add_shortcut(subs["rl"], flags, "--steps", "rl/sac.steps", "environment steps per run");
  add_shortcut(subs["theory"], flags, "--suite", "theory/theory.suite", "sweep | property");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  for (const auto& [name, fn] : commands) {
    if (!subs[name]->parsed()) continue;
    try {
      return fn(resolve(flags, name));
    } catch (const cli::config_error& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return kConfig;
    } catch (const cli::missing_artifact& e) {
      std::cerr << "missing input: " << e.what() << "\n";
      return kMissing;
    } catch (const energyflow::divergence_error& e) {
      std::cerr << "diverged: " << e.what() << "\n";
      return kDiverged;
    } catch (const std::ios_base::failure& e) {
      std::cerr << "I/O error: " << e.what() << "\n";
      return kIo;
    } catch (const std::invalid_argument& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return kConfig;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kIo;
    }
  }
  return kOk;
}
