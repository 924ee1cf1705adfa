#pragma once

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dcnas/workflows.hpp"

namespace dcnas {

// Exit codes: 0 ok, 1 internal, 2 config, 3 data, 4 numeric failure.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

namespace detail {

struct ConfigArgs {
  std::string config_path;
  std::string preset = "desk";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

inline void add_config_flags(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.config_path, "Path to a full run-config JSON document");
  cmd->add_option("--preset", args.preset, "Built-in preset: desk, desk-planted, paper-scale");
  cmd->add_option("--seed", args.seed, "Override the config seed")->each([&args](const std::string&) {
    args.seed_set = true;
  });
}

inline RunConfig resolve_config(const ConfigArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) {
    cfg = config_from_json(read_json_file(args.config_path));
  } else {
    cfg = preset_config(args.preset);
  }
  if (args.seed_set) {
    cfg.seed = args.seed;
    cfg.task.seed = derive_seed(cfg.seed, "task");
  }
  return cfg;
}

inline fs::path default_out_dir(const char* kind, const RunConfig& cfg) {
  return fs::path("runs") /
         (std::string(kind) + "_" + cfg.preset + "_seed" + std::to_string(cfg.seed));
}

}  // namespace detail

inline int cli_main(std::vector<std::string> args) {
  CLI::App app{"dcnas: differentiable architecture search over Conformer-style cells"};
  app.require_subcommand(1);

  detail::ConfigArgs cfg_args;
  std::string out_dir;
  std::string alpha_path;
  std::string arch_path;
  std::string ckpt_path;

  CLI::App* search = app.add_subcommand("search", "Run the bi-level architecture search");
  detail::add_config_flags(search, cfg_args);
  search->add_option("--out", out_dir, "Output directory");

  CLI::App* derive = app.add_subcommand("derive", "Discretize searched alpha into an architecture");
  derive->add_option("--alpha", alpha_path, "alpha_final.json from a search run")->required();
  derive->add_option("--out", out_dir, "Output descriptor path (default: arch.json beside alpha)");

  CLI::App* train = app.add_subcommand("train", "Retrain a derived architecture from scratch");
  detail::add_config_flags(train, cfg_args);
  train->add_option("--arch", arch_path, "Architecture descriptor JSON")->required();
  train->add_option("--out", out_dir, "Output directory");

  CLI::App* eval = app.add_subcommand("eval", "Greedy-CTC token error rate on held-out data");
  eval->add_option("--ckpt", ckpt_path, "checkpoint_final.json from a train run")->required();
  eval->add_option("--out", out_dir, "Output eval.json path");

  CLI::App* export_traj = app.add_subcommand("export-trajectory",
                                             "Rebuild the trajectory CSV from alpha snapshots");
  export_traj->add_option("--ckpt", ckpt_path, "Search run directory")->required();
  export_traj->add_option("--out", out_dir, "Output CSV path (default: stdout)");

  CLI::App* show = app.add_subcommand("show-arch", "Render an architecture and its parameter table");
  detail::add_config_flags(show, cfg_args);
  show->add_option("--arch", arch_path, "Architecture descriptor JSON")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (search->parsed()) {
      RunConfig cfg = detail::resolve_config(cfg_args);
      const fs::path dir = out_dir.empty() ? detail::default_out_dir("search", cfg) : fs::path(out_dir);
      SearchArtifacts artifacts = run_search_workflow(cfg, dir);
      ArchDescriptor desc = run_derive_workflow(artifacts.alpha_final, fs::path());
      std::cout << "search complete: " << artifacts.out_dir.string() << "\n"
                << render_architecture(desc);
    } else if (derive->parsed()) {
      const fs::path out =
          out_dir.empty() ? fs::path(alpha_path).parent_path() / "arch.json" : fs::path(out_dir);
      ArchDescriptor desc = run_derive_workflow(alpha_path, out);
      std::cout << "descriptor written to " << out.string() << "\n" << render_architecture(desc);
    } else if (train->parsed()) {
      RunConfig cfg = detail::resolve_config(cfg_args);
      ArchDescriptor desc = descriptor_from_json(read_json_file(arch_path));
      const fs::path dir = out_dir.empty() ? detail::default_out_dir("train", cfg) : fs::path(out_dir);
      const fs::path ckpt = run_train_workflow(cfg, desc, dir);
      std::cout << "train complete: " << ckpt.string() << "\n";
    } else if (eval->parsed()) {
      const fs::path out = out_dir.empty() ? fs::path() : fs::path(out_dir);
      EvalReport report = run_eval_workflow(ckpt_path, out);
      std::cout << report.to_json().dump(2) << "\n";
    } else if (export_traj->parsed()) {
      const std::string csv = export_trajectory_csv(ckpt_path);
      if (out_dir.empty()) {
        std::cout << csv;
      } else {
        write_text_file(out_dir, csv);
        std::cout << "trajectory written to " << out_dir << "\n";
      }
    } else if (show->parsed()) {
      RunConfig cfg = detail::resolve_config(cfg_args);
      std::cout << show_arch_text(arch_path, cfg);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitOk;
}

}  // namespace dcnas
