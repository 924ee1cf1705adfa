#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dcnas/blocks.hpp"
#include "dcnas/ops.hpp"
#include "dcnas/serialize.hpp"

namespace dcnas {

// Node layout of the DC-cell. Indices 0 and 1 are both aliases of the cell
// input; 2..5 are the computed nodes in fixed topological order.
struct NodeSpec {
  std::size_t index;
  std::string name;
  std::vector<std::size_t> input_candidates;
  std::size_t n_chosen;
};

inline const std::vector<NodeSpec>& dc_cell_topology() {
  static const std::vector<NodeSpec> nodes = {
      {2, "mac", {0, 1}, 1},
      {3, "mha", {0, 1, 2}, 2},
      {4, "cnn", {1, 2, 3}, 2},
      {5, "ffc", {4}, 1},
  };
  return nodes;
}

constexpr std::size_t kDcCellNodeCount = 6;  // 2 inputs + 4 computed

struct DcCellOptions {
  std::size_t d_model = 32;
  std::size_t d_hidden = 64;
  std::vector<std::size_t> head_menu = {2, 4, 8};
  std::vector<std::size_t> kernel_menu = {15, 23, 31};
  bool final_norm = true;
  double ln_eps = 1e-5;
};

// All architecture logits, keyed by edge id. Input edges hold a 2-vector over
// {zero, skip}; operation edges hold one logit per menu candidate. Logits are
// created as exact zeros so every fresh mixture is uniform.
class AlphaStore {
 public:
  struct Entry {
    Tensor logits;
    std::vector<std::string> candidate_names;
  };

  Tensor create_or_get(const std::string& edge_id, std::vector<std::string> candidate_names) {
    auto it = entries_.find(edge_id);
    if (it != entries_.end()) {
      if (it->second.candidate_names != candidate_names) {
        throw ConfigError("alpha edge " + edge_id + " redefined with different candidates");
      }
      return it->second.logits;
    }
    if (candidate_names.empty()) {
      throw ConfigError("alpha edge " + edge_id + " has an empty candidate list");
    }
    Tensor logits = Tensor::zeros({candidate_names.size()}, true);
    entries_.emplace(edge_id, Entry{logits, std::move(candidate_names)});
    return logits;
  }

  const Entry& at(const std::string& edge_id) const {
    auto it = entries_.find(edge_id);
    if (it == entries_.end()) throw ConfigError("unknown alpha edge " + edge_id);
    return it->second;
  }

  bool contains(const std::string& edge_id) const { return entries_.count(edge_id) != 0; }

  const std::map<std::string, Entry>& entries() const { return entries_; }

  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }

  std::vector<Tensor> params() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& [id, entry] : entries_) out.push_back(entry.logits);
    return out;
  }

  NamedParams named_params() const {
    NamedParams out;
    for (const auto& [id, entry] : entries_) out.emplace_back(id, entry.logits);
    return out;
  }

  // Softmax weights of one edge, computed off-tape.
  std::vector<double> weights(const std::string& edge_id) const {
    const auto& entry = at(edge_id);
    NoGradGuard no_grad;
    return softmax(entry.logits).values();
  }

  std::string signature_bytes() const { return serialize_bytes(named_params()); }

 private:
  std::map<std::string, Entry> entries_;
  bool frozen_ = false;
};

inline std::vector<std::string> menu_candidate_names(const std::string& node_name,
                                                     const DcCellOptions& options) {
  std::vector<std::string> names;
  if (node_name == "mac") {
    names = {"ff_half", "identity"};
  } else if (node_name == "mha") {
    for (std::size_t heads : options.head_menu) names.push_back("heads" + std::to_string(heads));
  } else if (node_name == "cnn") {
    for (std::size_t kernel : options.kernel_menu) names.push_back("kernel" + std::to_string(kernel));
  } else if (node_name == "ffc") {
    names = {"ff"};
  } else {
    throw ConfigError("unknown node " + node_name);
  }
  return names;
}

// Create the full edge set of the DC-cell in a store, without building any
// operation weights; lets alpha checkpoints be reloaded standalone.
inline void register_dc_cell_alphas(AlphaStore& store, const DcCellOptions& options) {
  for (const NodeSpec& spec : dc_cell_topology()) {
    for (std::size_t src : spec.input_candidates) {
      store.create_or_get(spec.name + ".in" + std::to_string(src), {"zero", "skip"});
    }
    store.create_or_get(spec.name + ".op", menu_candidate_names(spec.name, options));
  }
}

struct InputCandidateEdge {
  std::size_t source = 0;
  std::string edge_id;
  Tensor alpha;  // [2] logits over {zero, skip}
};

struct OperationEdge {
  std::string edge_id;
  std::vector<NodeOp> candidates;
  Tensor alpha;  // [M] logits over the menu
};

struct SupernetNode {
  NodeSpec spec;
  std::vector<InputCandidateEdge> inputs;
  OperationEdge op;
};

// Softmax-mixed operation output (the continuous relaxation): the mixture
// weights stay on the tape so gradient reaches both alpha and every
// candidate's own weights.
inline Tensor mixed_op_forward(const OperationEdge& edge, const Tensor& x, const FrameMask& mask) {
  if (edge.candidates.empty()) {
    throw ConfigError("mixed op " + edge.edge_id + " has no candidates");
  }
  Tensor weights = softmax(edge.alpha);
  Tensor acc;
  for (std::size_t i = 0; i < edge.candidates.size(); ++i) {
    Tensor term = scale_by_weight(edge.candidates[i].forward(x, mask), weights, i);
    acc = acc.defined() ? add(acc, term) : term;
  }
  return acc;
}

// Gather a node's candidate inputs, each scaled by its skip softmax weight,
// and sum them.
inline Tensor node_input_forward(const SupernetNode& node, const std::vector<Tensor>& values) {
  Tensor acc;
  for (const auto& edge : node.inputs) {
    if (edge.source >= values.size() || !values[edge.source].defined()) {
      throw ContractError("node " + node.spec.name + ": predecessor " +
                          std::to_string(edge.source) + " not computed yet");
    }
    Tensor weights = softmax(edge.alpha);
    Tensor term = scale_by_weight(values[edge.source], weights, 1);
    acc = acc.defined() ? add(acc, term) : term;
  }
  return acc;
}

inline Tensor node_forward(const SupernetNode& node, const std::vector<Tensor>& values,
                           const FrameMask& mask) {
  return mixed_op_forward(node.op, node_input_forward(node, values), mask);
}

// The DC-cell supernet: four mixed-op nodes over the Table-1 topology, with
// candidate weights owned by the cell and architecture logits shared through
// an AlphaStore (stacked supernet cells reuse the same logits).
class DcSupernetCell {
 public:
  DcSupernetCell(const DcCellOptions& options, AlphaStore& alphas, Rng& rng) : options_(options) {
    for (const NodeSpec& spec : dc_cell_topology()) {
      SupernetNode node;
      node.spec = spec;
      for (std::size_t source : spec.input_candidates) {
        InputCandidateEdge edge;
        edge.source = source;
        edge.edge_id = spec.name + ".in" + std::to_string(source);
        edge.alpha = alphas.create_or_get(edge.edge_id, {"zero", "skip"});
        node.inputs.push_back(std::move(edge));
      }
      node.op.edge_id = spec.name + ".op";
      std::vector<std::string> names;
      for (NodeOp& candidate : build_menu(spec.name, rng)) {
        names.push_back(candidate.name());
        node.op.candidates.push_back(std::move(candidate));
      }
      node.op.alpha = alphas.create_or_get(node.op.edge_id, names);
      nodes_.push_back(std::move(node));
    }
    if (options_.final_norm) {
      final_norm_ = LayerNormParams(options_.d_model, options_.ln_eps);
    }
  }

  // Values of every node, index 0..5; entry [5] is pre-final-norm.
  std::vector<Tensor> node_values(const Tensor& x, const FrameMask& mask) const {
    std::vector<Tensor> values(kDcCellNodeCount);
    values[0] = x;
    values[1] = x;
    for (const SupernetNode& node : nodes_) {
      values[node.spec.index] = node_forward(node, values, mask);
    }
    return values;
  }

  Tensor forward(const Tensor& x, const FrameMask& mask) const {
    Tensor out = node_values(x, mask).back();
    return options_.final_norm ? final_norm_.forward(out) : out;
  }

  const std::vector<SupernetNode>& nodes() const { return nodes_; }
  std::vector<SupernetNode>& nodes_mutable() { return nodes_; }
  const LayerNormParams& final_norm() const { return final_norm_; }
  const DcCellOptions& options() const { return options_; }

  void named_params(const std::string& prefix, NamedParams& out) const {
    for (const SupernetNode& node : nodes_) {
      for (const NodeOp& candidate : node.op.candidates) {
        candidate.named_params(prefix + "." + node.spec.name + "." + candidate.name(), out);
      }
    }
    if (options_.final_norm) final_norm_.named_params(prefix + ".final_norm", out);
  }

 private:
  std::vector<NodeOp> build_menu(const std::string& node_name, Rng& rng) const {
    std::vector<NodeOp> menu;
    if (node_name == "mac") {
      menu.emplace_back("ff_half", FeedForward(options_.d_model, options_.d_hidden, true,
                                               options_.ln_eps, rng));
      menu.emplace_back("identity", IdentityOp{});
    } else if (node_name == "mha") {
      for (std::size_t heads : options_.head_menu) {
        menu.emplace_back("heads" + std::to_string(heads),
                          MultiHeadSelfAttention(options_.d_model, heads, options_.ln_eps, rng));
      }
    } else if (node_name == "cnn") {
      for (std::size_t kernel : options_.kernel_menu) {
        menu.emplace_back("kernel" + std::to_string(kernel),
                          ConvBlock(options_.d_model, kernel, options_.ln_eps, rng));
      }
    } else if (node_name == "ffc") {
      menu.emplace_back("ff", FeedForward(options_.d_model, options_.d_hidden, true,
                                          options_.ln_eps, rng));
    } else {
      throw ConfigError("unknown node " + node_name);
    }
    return menu;
  }

  DcCellOptions options_;
  std::vector<SupernetNode> nodes_;
  LayerNormParams final_norm_;
};

struct SupernetConfig {
  std::size_t d_in = 8;
  std::size_t vocab_size = 4;  // outputs are vocab_size + 1 classes, blank first
  std::size_t n_cells = 1;
  bool use_positional_encoding = true;
  DcCellOptions cell;
};

class SupernetEncoder {
 public:
  SupernetEncoder(const SupernetConfig& config, Rng& rng) : config_(config) {
    input_proj_ = LinearLayer(config.d_in, config.cell.d_model, rng);
    cells_.reserve(config.n_cells);
    for (std::size_t i = 0; i < config.n_cells; ++i) {
      cells_.emplace_back(config.cell, alphas_, rng);
    }
    output_proj_ = LinearLayer(config.cell.d_model, config.vocab_size + 1, rng);
  }

  // x: [T, d_in] -> logits [T, vocab+1]
  Tensor forward(const Tensor& x, const FrameMask& mask) const {
    Tensor h = input_proj_.forward(x);
    if (config_.use_positional_encoding) {
      h = add(h, sinusoidal_positions(h.dim(0), config_.cell.d_model));
    }
    for (const DcSupernetCell& cell : cells_) h = cell.forward(h, mask);
    return output_proj_.forward(h);
  }

  AlphaStore& alphas() { return alphas_; }
  const AlphaStore& alphas() const { return alphas_; }
  const std::vector<DcSupernetCell>& cells() const { return cells_; }
  std::vector<DcSupernetCell>& cells_mutable() { return cells_; }
  const SupernetConfig& config() const { return config_; }
  const LinearLayer& input_proj() const { return input_proj_; }
  const LinearLayer& output_proj() const { return output_proj_; }

  NamedParams named_weight_params() const {
    NamedParams out;
    input_proj_.named_params("input_proj", out);
    for (std::size_t i = 0; i < cells_.size(); ++i) {
      cells_[i].named_params("cell" + std::to_string(i), out);
    }
    output_proj_.named_params("output_proj", out);
    return out;
  }

  std::vector<Tensor> weight_params() const { return param_tensors(named_weight_params()); }

 private:
  SupernetConfig config_;
  AlphaStore alphas_;
  LinearLayer input_proj_;
  std::vector<DcSupernetCell> cells_;
  LinearLayer output_proj_;
};

}  // namespace dcnas
