#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dcnas/engine.hpp"
#include "dcnas/serialize.hpp"

#ifndef DCNAS_VERSION
#define DCNAS_VERSION "unknown"
#endif

namespace dcnas {

namespace fs = std::filesystem;

// Shortest round-trippable decimal form keeps the CSVs bitwise reproducible.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json read_json_file(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_run_manifest(const fs::path& dir, const RunConfig& cfg, const char* kind) {
  nlohmann::json manifest;
  manifest["tool"] = "dcnas";
  manifest["version"] = DCNAS_VERSION;
  manifest["kind"] = kind;
  manifest["seed"] = cfg.seed;
  manifest["config_hash"] = config_hash(cfg);
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  write_text_file(dir / "config.json", config_to_json(cfg).dump(2) + "\n");
}

inline nlohmann::json checkpoint_meta(const RunConfig& cfg, std::size_t epoch) {
  nlohmann::json meta;
  meta["config"] = config_to_json(cfg);
  meta["config_hash"] = config_hash(cfg);
  meta["epoch"] = epoch;
  meta["rng_state"] = {{"init", derive_seed(cfg.seed, "search-init")},
                       {"train_data", derive_seed(cfg.seed, "search-train-data")},
                       {"val_data", derive_seed(cfg.seed, "search-val-data")}};
  return meta;
}

inline std::map<std::string, Tensor> to_array_map(const NamedParams& params) {
  std::map<std::string, Tensor> arrays;
  for (const auto& [name, tensor] : params) arrays.emplace(name, tensor);
  return arrays;
}

// ---------------------------------------------------------------------------
// trajectory CSV
// ---------------------------------------------------------------------------

inline std::string trajectory_csv_header() { return "epoch,edge_id,candidate,weight\n"; }

inline std::string trajectory_rows_csv(const std::vector<TrajectorySample>& samples,
                                       std::size_t epoch) {
  std::string out;
  for (const TrajectorySample& s : samples) {
    if (s.epoch != epoch) continue;
    out += std::to_string(s.epoch) + "," + s.edge_id + "," + s.candidate + "," +
           format_double(s.weight) + "\n";
  }
  return out;
}

inline std::vector<TrajectorySample> parse_trajectory_csv(const std::string& text) {
  std::vector<TrajectorySample> samples;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "epoch,edge_id,candidate,weight") {
    throw DataError("trajectory csv: bad header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    TrajectorySample s;
    std::string field;
    if (!std::getline(row, field, ',')) throw DataError("trajectory csv: bad row " + line);
    s.epoch = std::stoul(field);
    if (!std::getline(row, s.edge_id, ',')) throw DataError("trajectory csv: bad row " + line);
    if (!std::getline(row, s.candidate, ',')) throw DataError("trajectory csv: bad row " + line);
    if (!std::getline(row, field)) throw DataError("trajectory csv: bad row " + line);
    s.weight = std::stod(field);
    samples.push_back(std::move(s));
  }
  return samples;
}

// ---------------------------------------------------------------------------
// search
// ---------------------------------------------------------------------------

struct SearchArtifacts {
  fs::path out_dir;
  fs::path alpha_final;
  fs::path checkpoint_final;
  fs::path trajectory_csv;
  fs::path metrics_csv;
  fs::path alpha_history_dir;
};

inline SearchArtifacts run_search_workflow(const RunConfig& cfg, const fs::path& out_dir) {
  SearchArtifacts paths;
  paths.out_dir = out_dir;
  paths.alpha_final = out_dir / "alpha_final.json";
  paths.checkpoint_final = out_dir / "checkpoint_final.json";
  paths.trajectory_csv = out_dir / "trajectory.csv";
  paths.metrics_csv = out_dir / "metrics.csv";
  paths.alpha_history_dir = out_dir / "alpha_history";
  fs::create_directories(paths.alpha_history_dir);
  write_run_manifest(out_dir, cfg, "search");
  write_text_file(out_dir / "search_space.json",
                  search_space_to_json(cfg.cell_options()).dump(2) + "\n");

  SearchLoop loop(cfg);
  loop.set_dump_path(out_dir / "nan_dump.json");

  const auto snapshot_alpha = [&](const std::string& stem, std::size_t epoch) {
    save_named_arrays(paths.alpha_history_dir / (stem + ".json"),
                      to_array_map(loop.alphas().named_params()), checkpoint_meta(cfg, epoch));
  };
  snapshot_alpha("epoch_init", 0);

  std::ofstream trajectory(paths.trajectory_csv, std::ios::trunc);
  trajectory << trajectory_csv_header();
  trajectory.flush();

  std::ofstream metrics(paths.metrics_csv, std::ios::trunc);
  metrics << "epoch,train_loss,val_loss";
  for (const auto& [id, entry] : loop.alphas().entries()) metrics << ",entropy_" << id;
  metrics << "\n";
  metrics.flush();

  loop.run([&](const EpochMetrics& m) {
    trajectory << trajectory_rows_csv(loop.trajectory(), m.epoch);
    trajectory.flush();
    metrics << m.epoch << "," << format_double(m.train_loss) << "," << format_double(m.val_loss);
    for (const auto& [id, h] : m.alpha_entropy) metrics << "," << format_double(h);
    metrics << "\n";
    metrics.flush();
    char stem[32];
    std::snprintf(stem, sizeof(stem), "epoch_%03zu", m.epoch);
    snapshot_alpha(stem, m.epoch + 1);
  });

  save_named_arrays(paths.alpha_final, to_array_map(loop.alphas().named_params()),
                    checkpoint_meta(cfg, cfg.search.epochs));
  NamedParams full = loop.network().named_weight_params();
  for (const auto& [id, tensor] : loop.alphas().named_params()) {
    full.emplace_back("alpha." + id, tensor);
  }
  save_named_arrays(paths.checkpoint_final, to_array_map(full), checkpoint_meta(cfg, cfg.search.epochs));
  return paths;
}

// ---------------------------------------------------------------------------
// derive
// ---------------------------------------------------------------------------

inline RunConfig config_from_checkpoint_meta(const NamedArrays& stored) {
  if (!stored.meta.contains("config")) {
    throw DataError("checkpoint manifest carries no embedded config");
  }
  return config_from_json(stored.meta.at("config"));
}

inline AlphaStore load_alpha_store(const fs::path& alpha_manifest, RunConfig* cfg_out = nullptr) {
  NamedArrays stored = load_named_arrays(alpha_manifest);
  RunConfig cfg = config_from_checkpoint_meta(stored);
  AlphaStore store;
  register_dc_cell_alphas(store, cfg.cell_options());
  for (const auto& [id, entry] : store.entries()) {
    auto it = stored.arrays.find(id);
    if (it == stored.arrays.end()) throw DataError("alpha checkpoint is missing edge " + id);
    if (it->second.shape() != entry.logits.shape()) {
      throw DataError("alpha edge " + id + " has shape " + shape_str(it->second.shape()) +
                      ", expected " + shape_str(entry.logits.shape()));
    }
    Tensor t = entry.logits;
    t.values() = it->second.values();
  }
  if (cfg_out) *cfg_out = cfg;
  return store;
}

inline ArchDescriptor run_derive_workflow(const fs::path& alpha_manifest, const fs::path& out_path) {
  AlphaStore store = load_alpha_store(alpha_manifest);
  ArchDescriptor desc = derive_architecture(store);
  if (!out_path.empty()) {
    fs::create_directories(out_path.parent_path().empty() ? "." : out_path.parent_path());
    write_text_file(out_path, descriptor_to_json(desc).dump(2) + "\n");
  }
  return desc;
}

// ---------------------------------------------------------------------------
// train / eval
// ---------------------------------------------------------------------------

inline fs::path run_train_workflow(const RunConfig& cfg, const ArchDescriptor& desc,
                                   const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_run_manifest(out_dir, cfg, "train");
  write_text_file(out_dir / "arch.json", descriptor_to_json(desc).dump(2) + "\n");

  TrainLoop loop(cfg, desc);
  loop.set_dump_path(out_dir / "nan_dump.json");
  std::ofstream metrics(out_dir / "metrics.csv", std::ios::trunc);
  metrics << "epoch,train_loss,val_loss\n";
  loop.run([&](const EpochMetrics& m) {
    metrics << m.epoch << "," << format_double(m.train_loss) << "," << format_double(m.val_loss)
            << "\n";
    metrics.flush();
  });

  const fs::path ckpt = out_dir / "checkpoint_final.json";
  nlohmann::json meta = checkpoint_meta(cfg, cfg.train.epochs);
  meta["arch"] = descriptor_to_json(desc);
  save_named_arrays(ckpt, to_array_map(loop.model().named_params()), meta);
  return ckpt;
}

inline StackedEncoder load_trained_model(const fs::path& ckpt_path, RunConfig* cfg_out = nullptr,
                                         ArchDescriptor* desc_out = nullptr) {
  NamedArrays stored = load_named_arrays(ckpt_path);
  RunConfig cfg = config_from_checkpoint_meta(stored);
  if (!stored.meta.contains("arch")) throw DataError("checkpoint carries no architecture");
  ArchDescriptor desc = descriptor_from_json(stored.meta.at("arch"));
  Rng rng(derive_seed(cfg.seed, "train-init"));
  StackedEncoder model(desc, cfg.encoder_config(), rng);
  restore_named_arrays(stored, model.named_params());
  if (cfg_out) *cfg_out = cfg;
  if (desc_out) *desc_out = desc;
  return model;
}

inline EvalReport run_eval_workflow(const fs::path& ckpt_path, const fs::path& out_path) {
  RunConfig cfg;
  StackedEncoder model = load_trained_model(ckpt_path, &cfg);
  EvalReport report = evaluate_model(model, cfg);
  if (!out_path.empty()) {
    fs::create_directories(out_path.parent_path().empty() ? "." : out_path.parent_path());
    write_text_file(out_path, report.to_json().dump(2) + "\n");
  }
  return report;
}

// ---------------------------------------------------------------------------
// export-trajectory / show-arch
// ---------------------------------------------------------------------------

// Rebuild the trajectory CSV from the per-epoch alpha snapshots of a search
// run directory.
inline std::string export_trajectory_csv(const fs::path& search_run_dir) {
  const fs::path history = search_run_dir / "alpha_history";
  if (!fs::exists(history)) throw DataError("no alpha_history under " + search_run_dir.string());
  std::string csv = trajectory_csv_header();
  for (std::size_t epoch = 0;; ++epoch) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "epoch_%03zu.json", epoch);
    const fs::path snap = history / stem;
    if (!fs::exists(snap)) break;
    RunConfig cfg;
    AlphaStore store = load_alpha_store(snap, &cfg);
    std::vector<TrajectorySample> samples;
    for (const auto& [id, entry] : store.entries()) {
      const auto weights = store.weights(id);
      for (std::size_t c = 0; c < weights.size(); ++c) {
        samples.push_back({epoch, id, entry.candidate_names[c], weights[c]});
      }
    }
    csv += trajectory_rows_csv(samples, epoch);
  }
  return csv;
}

inline std::string show_arch_text(const fs::path& arch_path, const RunConfig& cfg) {
  ArchDescriptor desc = descriptor_from_json(read_json_file(arch_path));
  Rng rng(derive_seed(cfg.seed, "train-init"));
  StackedEncoder model(desc, cfg.encoder_config(), rng);
  std::string out = render_architecture(desc);
  out += "\nstacked encoder: " + std::to_string(cfg.model.train_layers) + " layers\n";
  out += param_table(model.named_params());
  return out;
}

}  // namespace dcnas
