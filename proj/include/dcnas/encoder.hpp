#pragma once

#include <map>
#include <string>
#include <vector>

#include "dcnas/descriptor.hpp"

namespace dcnas {

namespace detail {

inline NodeOp build_discrete_op(const OpChoice& op, const DcCellOptions& options, Rng& rng) {
  if (op.kind == "identity") return NodeOp("identity", IdentityOp{});
  if (op.kind == "ff") {
    return NodeOp(op.half_step ? "ff_half" : "ff",
                  FeedForward(options.d_model, options.d_hidden, op.half_step, options.ln_eps, rng));
  }
  if (op.kind == "mhsa") {
    return NodeOp("heads" + std::to_string(op.heads),
                  MultiHeadSelfAttention(options.d_model, op.heads, options.ln_eps, rng));
  }
  if (op.kind == "conv") {
    return NodeOp("kernel" + std::to_string(op.kernel),
                  ConvBlock(options.d_model, op.kernel, options.ln_eps, rng));
  }
  throw ConfigError("unknown op kind " + op.kind);
}

}  // namespace detail

// One derived cell: only the selected edges and operations, inputs summed,
// no softmax mixing anywhere.
class DiscreteCell {
 public:
  DiscreteCell(const ArchDescriptor& desc, const DcCellOptions& options, Rng& rng)
      : options_(options) {
    validate_descriptor(desc);
    for (std::size_t i = 0; i < desc.nodes.size(); ++i) {
      nodes_.push_back(DiscreteNode{dc_cell_topology()[i].index, desc.nodes[i],
                                    detail::build_discrete_op(desc.nodes[i].op, options, rng)});
    }
    if (options_.final_norm) final_norm_ = LayerNormParams(options_.d_model, options_.ln_eps);
  }

  // Transplant construction: the chosen candidate blocks (and the final norm)
  // are shared with the supernet cell, which is what the one-hot equivalence
  // checks exercise.
  DiscreteCell(const ArchDescriptor& desc, const DcSupernetCell& supernet)
      : options_(supernet.options()) {
    validate_descriptor(desc);
    for (std::size_t i = 0; i < desc.nodes.size(); ++i) {
      const NodeChoice& choice = desc.nodes[i];
      const SupernetNode& su_node = supernet.nodes()[i];
      const NodeOp* found = nullptr;
      for (const NodeOp& candidate : su_node.op.candidates) {
        if (op_choice_from_candidate(candidate.name()) == choice.op) {
          found = &candidate;
          break;
        }
      }
      if (!found) {
        throw ConfigError("descriptor op " + choice.op.pretty() + " is not in the supernet menu of " +
                          choice.name);
      }
      nodes_.push_back(DiscreteNode{su_node.spec.index, choice, *found});
    }
    if (options_.final_norm) final_norm_ = supernet.final_norm();
  }

  Tensor forward(const Tensor& x, const FrameMask& mask) const {
    std::vector<Tensor> values(kDcCellNodeCount);
    values[0] = x;
    values[1] = x;
    for (const DiscreteNode& node : nodes_) {
      Tensor gathered;
      for (std::size_t src : node.choice.inputs) {
        gathered = gathered.defined() ? add(gathered, values[src]) : values[src];
      }
      values[node.index] = node.op.forward(gathered, mask);
    }
    Tensor out = values.back();
    return options_.final_norm ? final_norm_.forward(out) : out;
  }

  void named_params(const std::string& prefix, NamedParams& out) const {
    for (const DiscreteNode& node : nodes_) {
      node.op.named_params(prefix + "." + node.choice.name, out);
    }
    if (options_.final_norm) final_norm_.named_params(prefix + ".final_norm", out);
  }

  const NodeOp& node_op(const std::string& name) const {
    for (const DiscreteNode& node : nodes_) {
      if (node.choice.name == name) return node.op;
    }
    throw ConfigError("discrete cell has no node " + name);
  }

  const LayerNormParams& final_norm() const { return final_norm_; }

  const DcCellOptions& options() const { return options_; }

 private:
  struct DiscreteNode {
    std::size_t index;
    NodeChoice choice;
    NodeOp op;
  };

  DcCellOptions options_;
  std::vector<DiscreteNode> nodes_;
  LayerNormParams final_norm_;
};

struct EncoderConfig {
  std::size_t d_in = 8;
  std::size_t vocab_size = 4;
  std::size_t n_layers = 1;
  bool use_positional_encoding = true;
  DcCellOptions cell;
};

// Input projection, n_layers independently initialized copies of the derived
// cell, and the output head producing vocab+1 logits.
class StackedEncoder {
 public:
  StackedEncoder(const ArchDescriptor& desc, const EncoderConfig& config, Rng& rng)
      : descriptor_(desc), config_(config) {
    if (config.n_layers < 1) throw ConfigError("stacked encoder needs n_layers >= 1");
    input_proj_ = LinearLayer(config.d_in, config.cell.d_model, rng);
    layers_.reserve(config.n_layers);
    for (std::size_t i = 0; i < config.n_layers; ++i) layers_.emplace_back(desc, config.cell, rng);
    output_proj_ = LinearLayer(config.cell.d_model, config.vocab_size + 1, rng);
  }

  // x: [T, d_in] -> logits [T, vocab+1]
  Tensor forward(const Tensor& x, const FrameMask& mask) const {
    Tensor h = input_proj_.forward(x);
    if (config_.use_positional_encoding) {
      h = add(h, sinusoidal_positions(h.dim(0), config_.cell.d_model));
    }
    for (const DiscreteCell& layer : layers_) h = layer.forward(h, mask);
    return output_proj_.forward(h);
  }

  NamedParams named_params() const {
    NamedParams out;
    input_proj_.named_params("input_proj", out);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i].named_params("layer" + std::to_string(i), out);
    }
    output_proj_.named_params("output_proj", out);
    return out;
  }

  std::vector<Tensor> params() const { return param_tensors(named_params()); }

  const ArchDescriptor& descriptor() const { return descriptor_; }
  const EncoderConfig& config() const { return config_; }
  const std::vector<DiscreteCell>& layers() const { return layers_; }

 private:
  ArchDescriptor descriptor_;
  EncoderConfig config_;
  LinearLayer input_proj_;
  std::vector<DiscreteCell> layers_;
  LinearLayer output_proj_;
};

// Exact scalar parameter counts, total and grouped by name prefix.
inline std::size_t count_params(const NamedParams& params) { return param_count(params); }

inline std::map<std::string, std::size_t> param_breakdown(const NamedParams& params) {
  std::map<std::string, std::size_t> groups;
  for (const auto& [name, tensor] : params) {
    const std::size_t dot = name.find('.');
    groups[name.substr(0, dot)] += tensor.numel();
  }
  return groups;
}

inline std::string param_table(const NamedParams& params) {
  std::string out = "module            params\n";
  for (const auto& [group, count] : param_breakdown(params)) {
    std::string pad(group.size() < 18 ? 18 - group.size() : 1, ' ');
    out += group + pad + std::to_string(count) + "\n";
  }
  out += "total             " + std::to_string(count_params(params)) + "\n";
  return out;
}

}  // namespace dcnas
