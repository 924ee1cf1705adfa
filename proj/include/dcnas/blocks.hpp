#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dcnas/ops.hpp"
#include "dcnas/rng.hpp"
#include "dcnas/tensor.hpp"

namespace dcnas {

// Prefix length mask over a padded [T, d] sequence: frames < valid_length are
// real, the rest are padding.
struct FrameMask {
  std::size_t padded_length = 0;
  std::size_t valid_length = 0;

  static FrameMask all(std::size_t t) { return {t, t}; }

  FrameMask() = default;
  FrameMask(std::size_t padded, std::size_t valid) : padded_length(padded), valid_length(valid) {
    if (valid_length == 0 || valid_length > padded_length) {
      throw ShapeError("mask: valid length " + std::to_string(valid) + " out of padded " +
                       std::to_string(padded));
    }
  }

  bool has_padding() const { return valid_length < padded_length; }

  std::vector<double> row_weights() const {
    std::vector<double> w(padded_length, 0.0);
    for (std::size_t t = 0; t < valid_length; ++t) w[t] = 1.0;
    return w;
  }
};

namespace detail {

template <class... Fs>
struct overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

inline void check_block_input(const Tensor& x, std::size_t d_model, const char* block) {
  if (x.rank() != 2 || x.dim(1) != d_model) {
    throw ShapeError(std::string(block) + ": expected [T, " + std::to_string(d_model) + "], got " +
                     shape_str(x.shape()));
  }
}

}  // namespace detail

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

struct LinearLayer {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  LinearLayer() = default;
  LinearLayer(std::size_t in, std::size_t out, Rng& rng)
      : weight(glorot_uniform({in, out}, in, out, rng)), bias(Tensor::zeros({out}, true)) {}

  Tensor forward(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }

  void named_params(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  LayerNormParams() = default;
  LayerNormParams(std::size_t d, double eps_in)
      : gamma(Tensor::full({d}, 1.0, true)), beta(Tensor::zeros({d}, true)), eps(eps_in) {}

  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }

  void named_params(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

// Pre-norm residual feed-forward: x + s * W2(swish(W1(LN(x)))), with the
// Macaron half-step scaling s = 0.5 when enabled.
struct FeedForward {
  std::size_t d_model = 0;
  std::size_t d_hidden = 0;
  bool half_step = false;
  LayerNormParams norm;
  LinearLayer inner;
  LinearLayer outer;

  FeedForward() = default;
  FeedForward(std::size_t d_model_in, std::size_t d_hidden_in, bool half_step_in, double ln_eps,
              Rng& rng)
      : d_model(d_model_in),
        d_hidden(d_hidden_in),
        half_step(half_step_in),
        norm(d_model_in, ln_eps),
        inner(d_model_in, d_hidden_in, rng),
        outer(d_hidden_in, d_model_in, rng) {}

  Tensor forward(const Tensor& x) const {
    detail::check_block_input(x, d_model, "feed_forward");
    Tensor h = outer.forward(swish(inner.forward(norm.forward(x))));
    return add(x, half_step ? scale(h, 0.5) : h);
  }

  void named_params(const std::string& prefix, NamedParams& out) const {
    norm.named_params(prefix + ".ln", out);
    inner.named_params(prefix + ".w1", out);
    outer.named_params(prefix + ".w2", out);
  }
};

// Pre-norm residual multi-head self-attention. Padded key positions receive
// -inf scores; the branch output at padded query rows is zeroed.
struct MultiHeadSelfAttention {
  std::size_t d_model = 0;
  std::size_t n_heads = 0;
  LayerNormParams norm;
  LinearLayer wq, wk, wv, wo;

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(std::size_t d_model_in, std::size_t n_heads_in, double ln_eps, Rng& rng)
      : d_model(d_model_in), n_heads(n_heads_in), norm(d_model_in, ln_eps) {
    if (n_heads == 0 || d_model % n_heads != 0) {
      throw ConfigError("mhsa: d_model " + std::to_string(d_model) + " not divisible by " +
                        std::to_string(n_heads) + " heads");
    }
    wq = LinearLayer(d_model, d_model, rng);
    wk = LinearLayer(d_model, d_model, rng);
    wv = LinearLayer(d_model, d_model, rng);
    wo = LinearLayer(d_model, d_model, rng);
  }

  Tensor forward(const Tensor& x, const FrameMask& mask) const {
    detail::check_block_input(x, d_model, "mhsa");
    if (x.dim(0) != mask.padded_length) {
      throw ShapeError("mhsa: mask covers " + std::to_string(mask.padded_length) + " frames, input " +
                       shape_str(x.shape()));
    }
    const std::size_t head_dim = d_model / n_heads;
    Tensor h = norm.forward(x);
    Tensor q = split_heads(wq.forward(h), n_heads);
    Tensor k = split_heads(wk.forward(h), n_heads);
    Tensor v = split_heads(wv.forward(h), n_heads);
    Tensor scores = scale(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(head_dim)));
    if (mask.has_padding()) scores = add(scores, key_bias(mask));
    Tensor attn = softmax(scores, -1);
    Tensor branch = wo.forward(merge_heads(matmul(attn, v)));
    if (mask.has_padding()) branch = scale_rows(branch, mask.row_weights());
    return add(x, branch);
  }

  Tensor key_bias(const FrameMask& mask) const {
    const std::size_t t_len = mask.padded_length;
    Tensor bias({n_heads, t_len, t_len}, false);
    double* bv = bias.values().data();
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t qp = 0; qp < t_len; ++qp) {
        for (std::size_t kp = 0; kp < t_len; ++kp) {
          bv[(h * t_len + qp) * t_len + kp] = kp < mask.valid_length ? 0.0 : neg_inf();
        }
      }
    }
    return bias;
  }

  void named_params(const std::string& prefix, NamedParams& out) const {
    norm.named_params(prefix + ".ln", out);
    wq.named_params(prefix + ".wq", out);
    wk.named_params(prefix + ".wk", out);
    wv.named_params(prefix + ".wv", out);
    wo.named_params(prefix + ".wo", out);
  }
};

// Conformer convolution module:
//   x + PW2(swish(LN(DW(GLU(PW1(LN(x)))))))
// Padded frames are zeroed before the depthwise conv so real frames never see
// padding garbage through the receptive field.
struct ConvBlock {
  std::size_t d_model = 0;
  std::size_t kernel_size = 0;
  LayerNormParams norm_in;
  LinearLayer pointwise_in;  // d -> 2d, gated down to d
  Tensor depthwise_kernel;   // [K, d]
  LayerNormParams norm_mid;
  LinearLayer pointwise_out;  // d -> d

  ConvBlock() = default;
  ConvBlock(std::size_t d_model_in, std::size_t kernel_in, double ln_eps, Rng& rng)
      : d_model(d_model_in), kernel_size(kernel_in), norm_in(d_model_in, ln_eps) {
    if (kernel_size % 2 == 0) {
      throw ConfigError("conv block: kernel size must be odd, got " + std::to_string(kernel_size));
    }
    pointwise_in = LinearLayer(d_model, 2 * d_model, rng);
    depthwise_kernel = glorot_uniform({kernel_size, d_model}, kernel_size, kernel_size, rng);
    norm_mid = LayerNormParams(d_model, ln_eps);
    pointwise_out = LinearLayer(d_model, d_model, rng);
  }

  Tensor forward(const Tensor& x, const FrameMask& mask) const {
    detail::check_block_input(x, d_model, "conv block");
    Tensor h = glu(pointwise_in.forward(norm_in.forward(x)));
    if (mask.has_padding()) h = scale_rows(h, mask.row_weights());
    h = conv1d_depthwise(h, depthwise_kernel);
    h = pointwise_out.forward(swish(norm_mid.forward(h)));
    return add(x, h);
  }

  void named_params(const std::string& prefix, NamedParams& out) const {
    norm_in.named_params(prefix + ".ln", out);
    pointwise_in.named_params(prefix + ".pw1", out);
    out.emplace_back(prefix + ".dw.kernel", depthwise_kernel);
    norm_mid.named_params(prefix + ".norm", out);
    pointwise_out.named_params(prefix + ".pw2", out);
  }
};

struct IdentityOp {};

// One candidate operation on a node edge.
class NodeOp {
 public:
  using Impl = std::variant<IdentityOp, FeedForward, MultiHeadSelfAttention, ConvBlock>;

  NodeOp(std::string name, Impl impl) : name_(std::move(name)), impl_(std::move(impl)) {}

  const std::string& name() const { return name_; }
  const Impl& impl() const { return impl_; }

  Tensor forward(const Tensor& x, const FrameMask& mask) const {
    return std::visit(detail::overloaded{
                          [&](const IdentityOp&) { return x; },
                          [&](const FeedForward& ff) { return ff.forward(x); },
                          [&](const MultiHeadSelfAttention& mha) { return mha.forward(x, mask); },
                          [&](const ConvBlock& conv) { return conv.forward(x, mask); },
                      },
                      impl_);
  }

  void named_params(const std::string& prefix, NamedParams& out) const {
    std::visit(detail::overloaded{
                   [&](const IdentityOp&) {},
                   [&](const FeedForward& ff) { ff.named_params(prefix, out); },
                   [&](const MultiHeadSelfAttention& mha) { mha.named_params(prefix, out); },
                   [&](const ConvBlock& conv) { conv.named_params(prefix, out); },
               },
               impl_);
  }

 private:
  std::string name_;
  Impl impl_;
};

inline std::size_t param_count(const NamedParams& params) {
  std::size_t n = 0;
  for (const auto& [name, tensor] : params) n += tensor.numel();
  return n;
}

inline std::vector<Tensor> param_tensors(const NamedParams& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& [name, tensor] : params) out.push_back(tensor);
  return out;
}

}  // namespace dcnas
