#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "modulenet/pipeline.hpp"

int main(int argc, char** argv) {
  using namespace modulenet;
  CLI::App app{"modulenet: knowledge-inherited architecture search over frozen modules"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir = "run";
  std::optional<uint64_t> seed;
  int workers = 1;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "rng seed (overrides config)");
  app.add_option("--workers", workers, "concurrent evaluations")->check(CLI::PositiveNumber);
  app.add_option("--set", sets, "override any config key, KEY=VALUE (repeatable)");

  // One flag per config key, e.g. --gen 10 or --synth.noise 2.5.
  std::map<std::string, std::string> mirrored;
  for (const auto& [key, def] : config_defaults()) {
    if (key == "seed") continue;
    app.add_option("--" + key, mirrored[key], "config key (default " + (def.empty() ? std::string("empty") : def) + ")");
  }

  const std::vector<std::pair<std::string, std::string>> cmds = {
      {"train-seeds", "train the seed architectures and save their weights"},
      {"build-kb", "decompose trained seeds into the module knowledge base"},
      {"search", "evolutionary search with frozen modules and trainable heads"},
      {"finetune", "fully fine-tune the final population (plus a pool drawn from the run)"},
      {"report", "ranking by score and score/test-error rank correlation"},
      {"ablate-adapters", "re-score the fine-tuned population with conv1x1 adapters"},
      {"all", "run every command in order"},
  };
  for (const auto& [name, help] : cmds) app.add_subcommand(name, help);

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::from_file(config_path);
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& [k, v] : mirrored) {
      if (app.count("--" + k)) overrides.emplace_back(k, v);
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects KEY=VALUE, got '" + s + "'");
      overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    if (seed) overrides.emplace_back("seed", std::to_string(*seed));
    cfg.apply(overrides);
    cfg.validate();
    Pipeline p(cfg, out_dir, workers);
    p.run(app.get_subcommands().front()->get_name());
  } catch (const MissingPrerequisite& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
