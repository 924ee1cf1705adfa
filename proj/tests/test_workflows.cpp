#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>

#include "dcnas/cli.hpp"
#include "dcnas/workflows.hpp"

using namespace dcnas;

namespace {

RunConfig micro_config() {
  RunConfig cfg = preset_config("desk");
  cfg.preset = "micro";
  cfg.model.d_model = 8;
  cfg.model.d_hidden = 12;
  cfg.model.head_menu = {2, 4};
  cfg.model.kernel_menu = {3, 5};
  cfg.model.train_layers = 1;
  cfg.task.vocab_size = 3;
  cfg.task.d_in = 4;
  cfg.task.min_length = 8;
  cfg.task.max_length = 12;
  cfg.task.min_tokens = 1;
  cfg.task.max_tokens = 3;
  cfg.task.noise = 0.05;
  cfg.task.seed = derive_seed(cfg.seed, "task");
  cfg.search.epochs = 5;
  cfg.search.steps_per_epoch = 4;
  cfg.search.batch_size = 2;
  cfg.search.freeze_epochs = 2;
  cfg.train.epochs = 2;
  cfg.train.steps_per_epoch = 4;
  cfg.train.batch_size = 2;
  cfg.eval.utterances = 12;
  validate_config(cfg);
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("dcnas_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("preset files on disk match the embedded presets") {
  for (const std::string name : {"desk", "desk-planted", "paper-scale"}) {
    const nlohmann::json embedded = nlohmann::json::parse(preset_text(name));
    const nlohmann::json on_disk =
        read_json_file(fs::path(DCNAS_SOURCE_DIR) / "data" / "presets" / (name + ".json"));
    REQUIRE(embedded == on_disk);
    REQUIRE_NOTHROW(config_from_json(on_disk));
  }
  REQUIRE_THROWS_AS(preset_config("nope"), ConfigError);
}

TEST_CASE("config parsing is strict about fields and values") {
  nlohmann::json base = nlohmann::json::parse(preset_text("desk"));
  REQUIRE_NOTHROW(config_from_json(base));

  nlohmann::json unknown = base;
  unknown["model"]["bogus"] = 1;
  REQUIRE_THROWS_AS(config_from_json(unknown), ConfigError);

  nlohmann::json missing = base;
  missing["search"].erase("alpha_lr");
  REQUIRE_THROWS_AS(config_from_json(missing), ConfigError);

  nlohmann::json bad_heads = base;
  bad_heads["model"]["head_menu"] = {3};
  REQUIRE_THROWS_AS(config_from_json(bad_heads), ConfigError);

  nlohmann::json bad_weights = base;
  bad_weights["loss"]["ctc_weight"] = 0.5;
  REQUIRE_THROWS_AS(config_from_json(bad_weights), ConfigError);

  nlohmann::json bad_alpha_loss = base;
  bad_alpha_loss["search"]["alpha_loss"] = "nails";
  REQUIRE_THROWS_AS(config_from_json(bad_alpha_loss), ConfigError);
}

TEST_CASE("config hash is stable and seed-sensitive") {
  RunConfig a = preset_config("desk");
  RunConfig b = preset_config("desk");
  REQUIRE(config_hash(a) == config_hash(b));
  b.seed = 2;
  REQUIRE(config_hash(a) != config_hash(b));
  REQUIRE(config_from_json(config_to_json(a)).seed == a.seed);
}

TEST_CASE("search workflow writes a complete, reproducible run directory") {
  RunConfig cfg = micro_config();
  const fs::path dir1 = fresh_dir("search1");
  const fs::path dir2 = fresh_dir("search2");
  SearchArtifacts a1 = run_search_workflow(cfg, dir1);
  SearchArtifacts a2 = run_search_workflow(cfg, dir2);

  for (const char* name : {"config.json", "manifest.json", "trajectory.csv", "metrics.csv",
                           "alpha_final.json", "alpha_final.bin", "checkpoint_final.json",
                           "checkpoint_final.bin"}) {
    CAPTURE(name);
    REQUIRE(fs::exists(dir1 / name));
    REQUIRE(read_text_file(dir1 / name) == read_text_file(dir2 / name));
  }
  REQUIRE(fs::exists(a1.alpha_history_dir / "epoch_init.json"));
  REQUIRE(fs::exists(a1.alpha_history_dir / "epoch_004.json"));

  // Trajectory CSV parses back and matches the snapshot-rebuilt export.
  const std::string live = read_text_file(a1.trajectory_csv);
  // 9 input edges x 2 candidates plus 7 op candidates = 25 rows per epoch
  const auto samples = parse_trajectory_csv(live);
  REQUIRE(samples.size() == cfg.search.epochs * 25);
  REQUIRE(export_trajectory_csv(dir1) == live);

  // Metrics CSV has one row per epoch plus a header.
  std::istringstream metrics(read_text_file(a1.metrics_csv));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(metrics, line)) {
    if (!line.empty()) ++rows;
  }
  REQUIRE(rows == cfg.search.epochs + 1);

  // Derive from the stored alpha and re-derive from the in-memory store.
  ArchDescriptor from_file = run_derive_workflow(a1.alpha_final, dir1 / "arch.json");
  REQUIRE(fs::exists(dir1 / "arch.json"));
  ArchDescriptor reparsed = descriptor_from_json(read_json_file(dir1 / "arch.json"));
  REQUIRE(from_file == reparsed);

  // The continuous search space ships in the run directory under the same
  // node schema the descriptor uses.
  nlohmann::json space = read_json_file(dir1 / "search_space.json");
  REQUIRE(space.at("kind") == "search_space");
  REQUIRE(space.at("nodes").size() == 4);
  REQUIRE(space.at("nodes")[1].at("input_candidates") == nlohmann::json({0, 1, 2}));
  REQUIRE(space.at("nodes")[1].at("n_chosen") == 2);
  REQUIRE(space.at("nodes")[2].at("op_menu").size() == cfg.model.kernel_menu.size());

  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("deriving from a one-hot alpha checkpoint yields the forced architecture") {
  RunConfig cfg = micro_config();
  const fs::path dir = fresh_dir("onehot");

  AlphaStore store;
  register_dc_cell_alphas(store, cfg.cell_options());
  auto one_hot = [&](const std::string& id, std::size_t winner) {
    Tensor t = store.at(id).logits;
    for (double& v : t.values()) v = -40.0;
    t.values()[winner] = 40.0;
  };
  one_hot("mac.in0", 1);  // skip
  one_hot("mac.in1", 0);  // zero
  one_hot("mac.op", 0);   // ff_half
  one_hot("mha.in0", 1);
  one_hot("mha.in1", 0);
  one_hot("mha.in2", 1);
  one_hot("mha.op", 1);  // heads4 in the micro menu {2,4}
  one_hot("cnn.in1", 1);
  one_hot("cnn.in2", 0);
  one_hot("cnn.in3", 1);
  one_hot("cnn.op", 0);  // kernel3 in the micro menu {3,5}
  one_hot("ffc.in4", 1);
  one_hot("ffc.op", 0);

  nlohmann::json meta;
  meta["config"] = config_to_json(cfg);
  save_named_arrays(dir / "alpha.json", to_array_map(store.named_params()), meta);

  const std::string cli = DCNAS_CLI_PATH;
  const std::string cmd = cli + " derive --alpha " + (dir / "alpha.json").string() + " --out " +
                          (dir / "arch.json").string() + " > /dev/null 2>&1";
  REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  ArchDescriptor desc = descriptor_from_json(read_json_file(dir / "arch.json"));
  REQUIRE(desc.node("mac").inputs == std::vector<std::size_t>{0});
  REQUIRE(desc.node("mac").op.kind == "ff");
  REQUIRE(desc.node("mha").inputs == std::vector<std::size_t>{0, 2});
  REQUIRE(desc.node("mha").op.heads == 4);
  REQUIRE(desc.node("cnn").inputs == std::vector<std::size_t>{1, 3});
  REQUIRE(desc.node("cnn").op.kernel == 3);
  fs::remove_all(dir);
}

TEST_CASE("train and eval workflows round-trip through checkpoints") {
  RunConfig cfg = micro_config();
  const fs::path dir = fresh_dir("train");
  ArchDescriptor desc;
  desc.nodes = {
      {"mac", {0}, {.kind = "ff", .half_step = true}},
      {"mha", {0, 2}, {.kind = "mhsa", .heads = 2}},
      {"cnn", {1, 3}, {.kind = "conv", .kernel = 3}},
      {"ffc", {4}, {.kind = "ff", .half_step = true}},
  };
  const fs::path ckpt = run_train_workflow(cfg, desc, dir);
  REQUIRE(fs::exists(ckpt));
  REQUIRE(fs::exists(dir / "metrics.csv"));

  RunConfig loaded_cfg;
  ArchDescriptor loaded_desc;
  StackedEncoder model = load_trained_model(ckpt, &loaded_cfg, &loaded_desc);
  REQUIRE(loaded_desc == desc);
  REQUIRE(config_hash(loaded_cfg) == config_hash(cfg));

  EvalReport report = run_eval_workflow(ckpt, dir / "eval.json");
  REQUIRE(fs::exists(dir / "eval.json"));
  REQUIRE(report.token_error_rate >= 0.0);
  REQUIRE(report.token_error_rate <= 1.0);
  REQUIRE(report.baseline_blank_ter == 1.0);

  // Restored models are bitwise identical functions of their checkpoint.
  EvalReport again = run_eval_workflow(ckpt, fs::path());
  REQUIRE(again.token_error_rate == report.token_error_rate);
  fs::remove_all(dir);
}

TEST_CASE("cli maps error classes to documented exit codes") {
  const std::string cli = DCNAS_CLI_PATH;
  auto run = [&](const std::string& args) {
    const std::string cmd = cli + " " + args + " > /dev/null 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
  };
  REQUIRE(run("search --preset bogus") == 2);
  REQUIRE(run("derive --alpha /nonexistent/alpha.json") == 3);
  REQUIRE(run("eval --ckpt /nonexistent/ckpt.json") == 3);
  REQUIRE(run("export-trajectory --ckpt /nonexistent") == 3);
  REQUIRE(run("frobnicate") == 2);
}

TEST_CASE("cli pipeline: search, derive, train, eval, show-arch, export-trajectory") {
  const std::string cli = DCNAS_CLI_PATH;
  const fs::path dir = fresh_dir("cli");
  const fs::path cfg_path = dir / "config.json";
  RunConfig cfg = micro_config();
  write_text_file(cfg_path, config_to_json(cfg).dump(2));

  auto run = [&](const std::string& args) {
    const std::string cmd = cli + " " + args + " > /dev/null 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
  };

  const fs::path s1 = dir / "run1";
  const fs::path s2 = dir / "run2";
  REQUIRE(run("search --config " + cfg_path.string() + " --out " + s1.string()) == 0);
  REQUIRE(run("search --config " + cfg_path.string() + " --out " + s2.string()) == 0);
  REQUIRE(read_text_file(s1 / "alpha_final.bin") == read_text_file(s2 / "alpha_final.bin"));
  REQUIRE(read_text_file(s1 / "metrics.csv") == read_text_file(s2 / "metrics.csv"));

  REQUIRE(run("derive --alpha " + (s1 / "alpha_final.json").string() + " --out " +
              (dir / "arch.json").string()) == 0);
  REQUIRE(run("derive --alpha " + (s2 / "alpha_final.json").string() + " --out " +
              (dir / "arch2.json").string()) == 0);
  REQUIRE(read_text_file(dir / "arch.json") == read_text_file(dir / "arch2.json"));

  REQUIRE(run("train --config " + cfg_path.string() + " --arch " + (dir / "arch.json").string() +
              " --out " + (dir / "trained").string()) == 0);
  REQUIRE(run("eval --ckpt " + (dir / "trained" / "checkpoint_final.json").string() + " --out " +
              (dir / "eval.json").string()) == 0);
  REQUIRE(fs::exists(dir / "eval.json"));

  REQUIRE(run("show-arch --config " + cfg_path.string() + " --arch " +
              (dir / "arch.json").string()) == 0);
  REQUIRE(run("export-trajectory --ckpt " + s1.string() + " --out " +
              (dir / "traj.csv").string()) == 0);
  REQUIRE(read_text_file(dir / "traj.csv") == read_text_file(s1 / "trajectory.csv"));

  // A seed override must flow into the artifacts.
  const fs::path s3 = dir / "run3";
  REQUIRE(run("search --config " + cfg_path.string() + " --seed 9 --out " + s3.string()) == 0);
  REQUIRE(read_text_file(s3 / "alpha_final.bin") != read_text_file(s1 / "alpha_final.bin"));
  fs::remove_all(dir);
}
