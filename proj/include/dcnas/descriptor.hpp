#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcnas/cell.hpp"

namespace dcnas {

struct OpChoice {
  std::string kind;        // "ff" | "identity" | "mhsa" | "conv"
  bool half_step = false;  // ff
  std::size_t heads = 0;   // mhsa
  std::size_t kernel = 0;  // conv

  bool operator==(const OpChoice&) const = default;

  std::string pretty() const {
    if (kind == "ff") return half_step ? "ff(half_step)" : "ff";
    if (kind == "identity") return "identity";
    if (kind == "mhsa") return "mhsa(heads=" + std::to_string(heads) + ")";
    if (kind == "conv") return "conv(kernel=" + std::to_string(kernel) + ")";
    return kind;
  }
};

struct NodeChoice {
  std::string name;
  std::vector<std::size_t> inputs;  // ascending
  OpChoice op;

  bool operator==(const NodeChoice&) const = default;
};

struct ArchDescriptor {
  int format_version = 1;
  std::vector<NodeChoice> nodes;  // mac, mha, cnn, ffc

  bool operator==(const ArchDescriptor&) const = default;

  const NodeChoice& node(const std::string& name) const {
    for (const NodeChoice& n : nodes) {
      if (n.name == name) return n;
    }
    throw ConfigError("descriptor has no node " + name);
  }
};

// Map a supernet menu candidate name to the discrete operation it stands for.
inline OpChoice op_choice_from_candidate(const std::string& candidate) {
  if (candidate == "identity") return {.kind = "identity"};
  if (candidate == "ff_half" || candidate == "ff") return {.kind = "ff", .half_step = true};
  if (candidate.rfind("heads", 0) == 0) {
    return {.kind = "mhsa", .heads = static_cast<std::size_t>(std::stoul(candidate.substr(5)))};
  }
  if (candidate.rfind("kernel", 0) == 0) {
    return {.kind = "conv", .kernel = static_cast<std::size_t>(std::stoul(candidate.substr(6)))};
  }
  throw ConfigError("unknown op candidate " + candidate);
}

// ---------------------------------------------------------------------------
// JSON schema (shared between the search space export and derived
// descriptors; the derived form carries chosen_inputs / chosen_op).
// ---------------------------------------------------------------------------

inline nlohmann::json op_choice_to_json(const OpChoice& op) {
  nlohmann::json j;
  j["kind"] = op.kind;
  if (op.kind == "ff") j["half_step"] = op.half_step;
  if (op.kind == "mhsa") j["heads"] = op.heads;
  if (op.kind == "conv") j["kernel"] = op.kernel;
  return j;
}

inline OpChoice op_choice_from_json(const nlohmann::json& j) {
  OpChoice op;
  op.kind = j.at("kind").get<std::string>();
  if (op.kind == "ff") {
    op.half_step = j.value("half_step", true);
  } else if (op.kind == "mhsa") {
    op.heads = j.at("heads").get<std::size_t>();
    if (op.heads == 0) throw ConfigError("descriptor: mhsa heads must be positive");
  } else if (op.kind == "conv") {
    op.kernel = j.at("kernel").get<std::size_t>();
    if (op.kernel == 0 || op.kernel % 2 == 0) {
      throw ConfigError("descriptor: conv kernel must be odd, got " + std::to_string(op.kernel));
    }
  } else if (op.kind != "identity") {
    throw ConfigError("descriptor: unknown op kind " + op.kind);
  }
  return op;
}

inline void validate_descriptor(const ArchDescriptor& desc) {
  const auto& topology = dc_cell_topology();
  if (desc.nodes.size() != topology.size()) {
    throw ConfigError("descriptor must list exactly " + std::to_string(topology.size()) + " nodes");
  }
  for (std::size_t i = 0; i < topology.size(); ++i) {
    const NodeSpec& spec = topology[i];
    const NodeChoice& choice = desc.nodes[i];
    if (choice.name != spec.name) {
      throw ConfigError("descriptor node " + std::to_string(i) + " should be " + spec.name +
                        ", got " + choice.name);
    }
    if (choice.inputs.empty() || choice.inputs.size() > spec.input_candidates.size()) {
      throw ConfigError("descriptor node " + spec.name + ": bad input count");
    }
    if (!std::is_sorted(choice.inputs.begin(), choice.inputs.end()) ||
        std::adjacent_find(choice.inputs.begin(), choice.inputs.end()) != choice.inputs.end()) {
      throw ConfigError("descriptor node " + spec.name + ": inputs must be ascending and unique");
    }
    for (std::size_t src : choice.inputs) {
      if (std::find(spec.input_candidates.begin(), spec.input_candidates.end(), src) ==
          spec.input_candidates.end()) {
        throw ConfigError("descriptor node " + spec.name + ": input " + std::to_string(src) +
                          " is not a candidate");
      }
    }
    const bool kind_ok = (spec.name == "mac" && (choice.op.kind == "ff" || choice.op.kind == "identity")) ||
                         (spec.name == "mha" && choice.op.kind == "mhsa") ||
                         (spec.name == "cnn" && choice.op.kind == "conv") ||
                         (spec.name == "ffc" && choice.op.kind == "ff");
    if (!kind_ok) {
      throw ConfigError("descriptor node " + spec.name + ": op kind " + choice.op.kind +
                        " not allowed here");
    }
  }
}

inline nlohmann::json descriptor_to_json(const ArchDescriptor& desc) {
  nlohmann::json j;
  j["format_version"] = desc.format_version;
  j["kind"] = "derived";
  nlohmann::json nodes = nlohmann::json::array();
  for (std::size_t i = 0; i < desc.nodes.size(); ++i) {
    const NodeSpec& spec = dc_cell_topology()[i];
    nlohmann::json n;
    n["index"] = spec.index;
    n["name"] = spec.name;
    n["input_candidates"] = spec.input_candidates;
    n["n_chosen"] = spec.n_chosen;
    n["chosen_inputs"] = desc.nodes[i].inputs;
    n["chosen_op"] = op_choice_to_json(desc.nodes[i].op);
    nodes.push_back(n);
  }
  j["nodes"] = nodes;
  return j;
}

inline ArchDescriptor descriptor_from_json(const nlohmann::json& j) {
  ArchDescriptor desc;
  desc.format_version = j.at("format_version").get<int>();
  if (desc.format_version != 1) {
    throw ConfigError("descriptor: unsupported format_version " +
                      std::to_string(desc.format_version));
  }
  for (const auto& n : j.at("nodes")) {
    NodeChoice choice;
    choice.name = n.at("name").get<std::string>();
    choice.inputs = n.at("chosen_inputs").get<std::vector<std::size_t>>();
    choice.op = op_choice_from_json(n.at("chosen_op"));
    desc.nodes.push_back(std::move(choice));
  }
  validate_descriptor(desc);
  return desc;
}

// Continuous search-space export: same node schema without selections.
inline nlohmann::json search_space_to_json(const DcCellOptions& options) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["kind"] = "search_space";
  nlohmann::json nodes = nlohmann::json::array();
  for (const NodeSpec& spec : dc_cell_topology()) {
    nlohmann::json n;
    n["index"] = spec.index;
    n["name"] = spec.name;
    n["input_candidates"] = spec.input_candidates;
    n["n_chosen"] = spec.n_chosen;
    nlohmann::json menu = nlohmann::json::array();
    if (spec.name == "mac") {
      menu.push_back(op_choice_to_json({.kind = "ff", .half_step = true}));
      menu.push_back(op_choice_to_json({.kind = "identity"}));
    } else if (spec.name == "mha") {
      for (std::size_t heads : options.head_menu) {
        menu.push_back(op_choice_to_json({.kind = "mhsa", .heads = heads}));
      }
    } else if (spec.name == "cnn") {
      for (std::size_t kernel : options.kernel_menu) {
        menu.push_back(op_choice_to_json({.kind = "conv", .kernel = kernel}));
      }
    } else {
      menu.push_back(op_choice_to_json({.kind = "ff", .half_step = true}));
    }
    n["op_menu"] = menu;
    nodes.push_back(n);
  }
  j["nodes"] = nodes;
  return j;
}

// ---------------------------------------------------------------------------
// derivation
// ---------------------------------------------------------------------------

// Discretize searched logits: per node keep the n_chosen inputs with the
// largest skip softmax weight and the argmax menu operation. Ties break
// toward the lowest candidate index so derivation is a total deterministic
// function of alpha.
inline ArchDescriptor derive_architecture(const AlphaStore& alphas) {
  ArchDescriptor desc;
  for (const NodeSpec& spec : dc_cell_topology()) {
    NodeChoice choice;
    choice.name = spec.name;

    std::vector<std::pair<double, std::size_t>> strengths;
    for (std::size_t src : spec.input_candidates) {
      const auto w = alphas.weights(spec.name + ".in" + std::to_string(src));
      strengths.emplace_back(w[1], src);
    }
    std::sort(strengths.begin(), strengths.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::size_t i = 0; i < spec.n_chosen; ++i) choice.inputs.push_back(strengths[i].second);
    std::sort(choice.inputs.begin(), choice.inputs.end());

    const auto& op_entry = alphas.at(spec.name + ".op");
    const auto op_weights = alphas.weights(spec.name + ".op");
    std::size_t best = 0;
    for (std::size_t i = 1; i < op_weights.size(); ++i) {
      if (op_weights[i] > op_weights[best]) best = i;
    }
    choice.op = op_choice_from_candidate(op_entry.candidate_names[best]);
    desc.nodes.push_back(std::move(choice));
  }
  validate_descriptor(desc);
  return desc;
}

// Text DAG rendering for show-arch.
inline std::string render_architecture(const ArchDescriptor& desc) {
  std::string out;
  out += "input -> nodes 0,1 (shared activation)\n";
  for (const NodeChoice& n : desc.nodes) {
    std::string inputs;
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      if (i) inputs += ", ";
      inputs += std::to_string(n.inputs[i]);
    }
    std::string pad(std::max<std::size_t>(1, 5 - n.name.size()), ' ');
    out += "  " + n.name + pad + "<- {" + inputs + "}" + "  op: " + n.op.pretty() + "\n";
  }
  out += "output <- ffc (node 5)\n";
  return out;
}

}  // namespace dcnas
