#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcnas/cell.hpp"
#include "dcnas/encoder.hpp"
#include "dcnas/synth.hpp"

namespace dcnas {

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t d_hidden = 64;
  std::vector<std::size_t> head_menu = {2, 4, 8};
  std::vector<std::size_t> kernel_menu = {15, 23, 31};
  bool use_positional_encoding = true;
  bool cell_final_norm = true;
  double ln_eps = 1e-5;
  std::size_t search_layers = 1;
  std::size_t train_layers = 2;
};

struct SearchSection {
  std::size_t epochs = 20;
  std::size_t steps_per_epoch = 100;
  std::size_t batch_size = 8;
  std::size_t freeze_epochs = 3;
  double alpha_lr = 0.0002;
  double weights_lr = 0.0003;
  double inner_step_size = 0.0;  // 0 selects the first-order approximation
  std::string alpha_loss = "mixed";
  double grad_clip_norm = 5.0;
};

struct TrainSection {
  std::size_t epochs = 10;
  std::size_t steps_per_epoch = 100;
  std::size_t batch_size = 8;
  double lr = 0.0003;
  double grad_clip_norm = 5.0;
};

struct EvalSection {
  std::size_t utterances = 128;
};

struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 1;
  ModelConfig model;
  SyntheticTaskSpec task;  // task.seed is derived from the run seed
  SearchSection search;
  TrainSection train;
  LossWeights loss;
  EvalSection eval;

  DcCellOptions cell_options() const {
    return {model.d_model, model.d_hidden, model.head_menu, model.kernel_menu,
            model.cell_final_norm, model.ln_eps};
  }

  SupernetConfig supernet_config() const {
    SupernetConfig cfg;
    cfg.d_in = task.d_in;
    cfg.vocab_size = task.vocab_size;
    cfg.n_cells = model.search_layers;
    cfg.use_positional_encoding = model.use_positional_encoding;
    cfg.cell = cell_options();
    return cfg;
  }

  EncoderConfig encoder_config() const {
    EncoderConfig cfg;
    cfg.d_in = task.d_in;
    cfg.vocab_size = task.vocab_size;
    cfg.n_layers = model.train_layers;
    cfg.use_positional_encoding = model.use_positional_encoding;
    cfg.cell = cell_options();
    return cfg;
  }
};

namespace detail {

inline const nlohmann::json& require_section(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_object()) {
    throw ConfigError(std::string("config: missing section \"") + key + "\"");
  }
  return j.at(key);
}

template <typename T>
T require_field(const nlohmann::json& j, const std::string& section, const char* key) {
  if (!j.contains(key)) {
    throw ConfigError("config: missing " + section + "." + key);
  }
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: bad value for " + section + "." + key);
  }
}

inline void reject_unknown(const nlohmann::json& j, const std::string& section,
                           std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("config: unknown key " + section + "." + key);
  }
}

}  // namespace detail

inline void validate_config(const RunConfig& cfg) {
  if (cfg.model.d_model == 0 || cfg.model.d_hidden == 0) {
    throw ConfigError("config: model dimensions must be positive");
  }
  if (cfg.model.d_model % 2 != 0) {
    throw ConfigError("config: d_model must be even for sinusoidal positions");
  }
  if (cfg.model.head_menu.empty() || cfg.model.kernel_menu.empty()) {
    throw ConfigError("config: operation menus must be non-empty");
  }
  for (std::size_t heads : cfg.model.head_menu) {
    if (heads == 0 || cfg.model.d_model % heads != 0) {
      throw ConfigError("config: d_model " + std::to_string(cfg.model.d_model) +
                        " is not divisible by menu head count " + std::to_string(heads));
    }
  }
  for (std::size_t kernel : cfg.model.kernel_menu) {
    if (kernel % 2 == 0) {
      throw ConfigError("config: kernel menu entries must be odd, got " + std::to_string(kernel));
    }
  }
  if (cfg.model.search_layers < 1 || cfg.model.train_layers < 1) {
    throw ConfigError("config: layer counts must be >= 1");
  }
  if (cfg.search.epochs < 1 || cfg.search.steps_per_epoch < 1 || cfg.search.batch_size < 1 ||
      cfg.train.epochs < 1 || cfg.train.steps_per_epoch < 1 || cfg.train.batch_size < 1) {
    throw ConfigError("config: epochs, steps and batch sizes must be >= 1");
  }
  if (cfg.search.alpha_lr <= 0.0 || cfg.search.weights_lr <= 0.0 || cfg.train.lr <= 0.0) {
    throw ConfigError("config: learning rates must be positive");
  }
  if (cfg.search.inner_step_size < 0.0) {
    throw ConfigError("config: inner_step_size must be >= 0");
  }
  if (cfg.search.alpha_loss != "mixed" && cfg.search.alpha_loss != "ctc") {
    throw ConfigError("config: alpha_loss must be \"mixed\" or \"ctc\"");
  }
  if (cfg.search.grad_clip_norm <= 0.0 || cfg.train.grad_clip_norm <= 0.0) {
    throw ConfigError("config: grad clip norms must be positive");
  }
  if (cfg.eval.utterances < 1) throw ConfigError("config: eval.utterances must be >= 1");
  validate_task(cfg.task);
  validate_loss_weights(cfg.loss);
}

inline nlohmann::json config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["preset"] = cfg.preset;
  j["seed"] = cfg.seed;
  j["model"] = {{"d_model", cfg.model.d_model},
                {"d_hidden", cfg.model.d_hidden},
                {"head_menu", cfg.model.head_menu},
                {"kernel_menu", cfg.model.kernel_menu},
                {"use_positional_encoding", cfg.model.use_positional_encoding},
                {"cell_final_norm", cfg.model.cell_final_norm},
                {"ln_eps", cfg.model.ln_eps},
                {"search_layers", cfg.model.search_layers},
                {"train_layers", cfg.model.train_layers}};
  j["task"] = {{"generator", to_string(cfg.task.kind)},
               {"vocab_size", cfg.task.vocab_size},
               {"d_in", cfg.task.d_in},
               {"min_length", cfg.task.min_length},
               {"max_length", cfg.task.max_length},
               {"min_tokens", cfg.task.min_tokens},
               {"max_tokens", cfg.task.max_tokens},
               {"noise", cfg.task.noise},
               {"planted_kernel", cfg.task.planted_kernel},
               {"pool_epochs", cfg.task.pool_epochs}};
  j["search"] = {{"epochs", cfg.search.epochs},
                 {"steps_per_epoch", cfg.search.steps_per_epoch},
                 {"batch_size", cfg.search.batch_size},
                 {"freeze_epochs", cfg.search.freeze_epochs},
                 {"alpha_lr", cfg.search.alpha_lr},
                 {"weights_lr", cfg.search.weights_lr},
                 {"inner_step_size", cfg.search.inner_step_size},
                 {"alpha_loss", cfg.search.alpha_loss},
                 {"grad_clip_norm", cfg.search.grad_clip_norm}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"steps_per_epoch", cfg.train.steps_per_epoch},
                {"batch_size", cfg.train.batch_size},
                {"lr", cfg.train.lr},
                {"grad_clip_norm", cfg.train.grad_clip_norm}};
  j["loss"] = {{"ctc_weight", cfg.loss.ctc_weight}, {"ce_weight", cfg.loss.ce_weight}};
  j["eval"] = {{"utterances", cfg.eval.utterances}};
  return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: document must be a JSON object");
  detail::reject_unknown(j, "",
                         {"preset", "seed", "model", "task", "search", "train", "loss", "eval"});
  RunConfig cfg;
  cfg.preset = detail::require_field<std::string>(j, "", "preset");
  cfg.seed = detail::require_field<std::uint64_t>(j, "", "seed");

  const auto& m = detail::require_section(j, "model");
  detail::reject_unknown(m, "model",
                         {"d_model", "d_hidden", "head_menu", "kernel_menu",
                          "use_positional_encoding", "cell_final_norm", "ln_eps", "search_layers",
                          "train_layers"});
  cfg.model.d_model = detail::require_field<std::size_t>(m, "model", "d_model");
  cfg.model.d_hidden = detail::require_field<std::size_t>(m, "model", "d_hidden");
  cfg.model.head_menu = detail::require_field<std::vector<std::size_t>>(m, "model", "head_menu");
  cfg.model.kernel_menu = detail::require_field<std::vector<std::size_t>>(m, "model", "kernel_menu");
  cfg.model.use_positional_encoding =
      detail::require_field<bool>(m, "model", "use_positional_encoding");
  cfg.model.cell_final_norm = detail::require_field<bool>(m, "model", "cell_final_norm");
  cfg.model.ln_eps = detail::require_field<double>(m, "model", "ln_eps");
  cfg.model.search_layers = detail::require_field<std::size_t>(m, "model", "search_layers");
  cfg.model.train_layers = detail::require_field<std::size_t>(m, "model", "train_layers");

  const auto& t = detail::require_section(j, "task");
  detail::reject_unknown(t, "task",
                         {"generator", "vocab_size", "d_in", "min_length", "max_length",
                          "min_tokens", "max_tokens", "noise", "planted_kernel", "pool_epochs"});
  cfg.task.kind = generator_kind_from_string(detail::require_field<std::string>(t, "task", "generator"));
  cfg.task.vocab_size = detail::require_field<std::size_t>(t, "task", "vocab_size");
  cfg.task.d_in = detail::require_field<std::size_t>(t, "task", "d_in");
  cfg.task.min_length = detail::require_field<std::size_t>(t, "task", "min_length");
  cfg.task.max_length = detail::require_field<std::size_t>(t, "task", "max_length");
  cfg.task.min_tokens = detail::require_field<std::size_t>(t, "task", "min_tokens");
  cfg.task.max_tokens = detail::require_field<std::size_t>(t, "task", "max_tokens");
  cfg.task.noise = detail::require_field<double>(t, "task", "noise");
  cfg.task.planted_kernel = detail::require_field<std::size_t>(t, "task", "planted_kernel");
  cfg.task.pool_epochs = detail::require_field<std::size_t>(t, "task", "pool_epochs");
  cfg.task.seed = derive_seed(cfg.seed, "task");

  const auto& s = detail::require_section(j, "search");
  detail::reject_unknown(s, "search",
                         {"epochs", "steps_per_epoch", "batch_size", "freeze_epochs", "alpha_lr",
                          "weights_lr", "inner_step_size", "alpha_loss", "grad_clip_norm"});
  cfg.search.epochs = detail::require_field<std::size_t>(s, "search", "epochs");
  cfg.search.steps_per_epoch = detail::require_field<std::size_t>(s, "search", "steps_per_epoch");
  cfg.search.batch_size = detail::require_field<std::size_t>(s, "search", "batch_size");
  cfg.search.freeze_epochs = detail::require_field<std::size_t>(s, "search", "freeze_epochs");
  cfg.search.alpha_lr = detail::require_field<double>(s, "search", "alpha_lr");
  cfg.search.weights_lr = detail::require_field<double>(s, "search", "weights_lr");
  cfg.search.inner_step_size = detail::require_field<double>(s, "search", "inner_step_size");
  cfg.search.alpha_loss = detail::require_field<std::string>(s, "search", "alpha_loss");
  cfg.search.grad_clip_norm = detail::require_field<double>(s, "search", "grad_clip_norm");

  const auto& tr = detail::require_section(j, "train");
  detail::reject_unknown(tr, "train",
                         {"epochs", "steps_per_epoch", "batch_size", "lr", "grad_clip_norm"});
  cfg.train.epochs = detail::require_field<std::size_t>(tr, "train", "epochs");
  cfg.train.steps_per_epoch = detail::require_field<std::size_t>(tr, "train", "steps_per_epoch");
  cfg.train.batch_size = detail::require_field<std::size_t>(tr, "train", "batch_size");
  cfg.train.lr = detail::require_field<double>(tr, "train", "lr");
  cfg.train.grad_clip_norm = detail::require_field<double>(tr, "train", "grad_clip_norm");

  const auto& l = detail::require_section(j, "loss");
  detail::reject_unknown(l, "loss", {"ctc_weight", "ce_weight"});
  cfg.loss.ctc_weight = detail::require_field<double>(l, "loss", "ctc_weight");
  cfg.loss.ce_weight = detail::require_field<double>(l, "loss", "ce_weight");

  const auto& e = detail::require_section(j, "eval");
  detail::reject_unknown(e, "eval", {"utterances"});
  cfg.eval.utterances = detail::require_field<std::size_t>(e, "eval", "utterances");

  validate_config(cfg);
  return cfg;
}

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

inline std::string config_hash(const RunConfig& cfg) {
  return fnv1a_hex(config_to_json(cfg).dump());
}

// ---------------------------------------------------------------------------
// presets (the same documents ship under data/presets/)
// ---------------------------------------------------------------------------

inline const char* preset_text(const std::string& name) {
  if (name == "desk") {
    return R"json({
  "preset": "desk",
  "seed": 1,
  "model": {"d_model": 32, "d_hidden": 64, "head_menu": [2, 4, 8], "kernel_menu": [15, 23, 31],
            "use_positional_encoding": true, "cell_final_norm": true, "ln_eps": 1e-5,
            "search_layers": 1, "train_layers": 2},
  "task": {"generator": "pattern-ctc", "vocab_size": 4, "d_in": 8, "min_length": 12,
           "max_length": 20, "min_tokens": 2, "max_tokens": 4, "noise": 0.1, "planted_kernel": 31,
           "pool_epochs": 20},
  "search": {"epochs": 20, "steps_per_epoch": 100, "batch_size": 8, "freeze_epochs": 3,
             "alpha_lr": 0.002, "weights_lr": 0.003, "inner_step_size": 0.0,
             "alpha_loss": "mixed", "grad_clip_norm": 5.0},
  "train": {"epochs": 10, "steps_per_epoch": 100, "batch_size": 8, "lr": 0.003,
            "grad_clip_norm": 5.0},
  "loss": {"ctc_weight": 0.7, "ce_weight": 0.3},
  "eval": {"utterances": 128}
})json";
  }
  if (name == "desk-planted") {
    return R"json({
  "preset": "desk-planted",
  "seed": 1,
  "model": {"d_model": 32, "d_hidden": 64, "head_menu": [2, 4, 8], "kernel_menu": [15, 23, 31],
            "use_positional_encoding": false, "cell_final_norm": true, "ln_eps": 1e-5,
            "search_layers": 1, "train_layers": 2},
  "task": {"generator": "planted-filter", "vocab_size": 2, "d_in": 3, "min_length": 34,
           "max_length": 40, "min_tokens": 1, "max_tokens": 6, "noise": 0.02, "planted_kernel": 31,
           "pool_epochs": 20},
  "search": {"epochs": 20, "steps_per_epoch": 100, "batch_size": 8, "freeze_epochs": 3,
             "alpha_lr": 0.002, "weights_lr": 0.003, "inner_step_size": 0.0,
             "alpha_loss": "mixed", "grad_clip_norm": 5.0},
  "train": {"epochs": 10, "steps_per_epoch": 100, "batch_size": 8, "lr": 0.003,
            "grad_clip_norm": 5.0},
  "loss": {"ctc_weight": 0.7, "ce_weight": 0.3},
  "eval": {"utterances": 128}
})json";
  }
  if (name == "paper-scale") {
    return R"json({
  "preset": "paper-scale",
  "seed": 1,
  "model": {"d_model": 256, "d_hidden": 512, "head_menu": [2, 4, 8], "kernel_menu": [15, 23, 31],
            "use_positional_encoding": true, "cell_final_norm": true, "ln_eps": 1e-5,
            "search_layers": 1, "train_layers": 6},
  "task": {"generator": "pattern-ctc", "vocab_size": 64, "d_in": 83, "min_length": 80,
           "max_length": 160, "min_tokens": 4, "max_tokens": 16, "noise": 0.3, "planted_kernel": 31,
           "pool_epochs": 1},
  "search": {"epochs": 30, "steps_per_epoch": 1600, "batch_size": 48, "freeze_epochs": 3,
             "alpha_lr": 0.0002, "weights_lr": 0.0003, "inner_step_size": 0.0,
             "alpha_loss": "mixed", "grad_clip_norm": 5.0},
  "train": {"epochs": 65, "steps_per_epoch": 1600, "batch_size": 48, "lr": 0.0003,
            "grad_clip_norm": 5.0},
  "loss": {"ctc_weight": 0.7, "ce_weight": 0.3},
  "eval": {"utterances": 1024}
})json";
  }
  throw ConfigError("unknown preset " + name + " (available: desk, desk-planted, paper-scale)");
}

inline RunConfig preset_config(const std::string& name) {
  return config_from_json(nlohmann::json::parse(preset_text(name)));
}

}  // namespace dcnas
