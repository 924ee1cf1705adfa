#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "dcnas/tensor.hpp"

namespace dcnas {

using LossFn = std::function<Tensor()>;

namespace detail {

inline std::vector<std::vector<double>> eval_gradients(const LossFn& loss_fn,
                                                       const std::vector<Tensor>& wrt,
                                                       const std::vector<Tensor>& also_zero) {
  Tape& tape = Tape::active();
  tape.clear();
  for (Tensor p : wrt) p.zero_grad();
  for (Tensor p : also_zero) p.zero_grad();
  Tensor loss = loss_fn();
  tape.backward(loss);
  std::vector<std::vector<double>> grads;
  grads.reserve(wrt.size());
  for (Tensor p : wrt) grads.push_back(p.grad());
  tape.clear();
  return grads;
}

inline double l2_norm(const std::vector<std::vector<double>>& vecs) {
  double sq = 0.0;
  for (const auto& v : vecs) {
    for (double x : v) sq += x * x;
  }
  return std::sqrt(sq);
}

}  // namespace detail

// Architecture gradient with the weights held fixed (the xi = 0 case).
inline std::vector<std::vector<double>> alpha_grad_first_order(const std::vector<Tensor>& alpha,
                                                               const LossFn& val_loss) {
  return detail::eval_gradients(val_loss, alpha, {});
}

// Approximate architecture gradient after one virtual inner step
//   w' = w - xi * dW L_train(w, alpha):
//   dAlpha L_val(w', alpha) - xi * H_{alpha,w} L_train(w, alpha) * dW' L_val(w', alpha)
// The Hessian-vector product is realized by symmetric finite differences
// w +- r*v with r = 0.01 / ||v||; a zero ||v|| drops the second term. The
// weights are restored bitwise before returning.
inline std::vector<std::vector<double>> alpha_grad_second_order(const std::vector<Tensor>& weights,
                                                                const std::vector<Tensor>& alpha,
                                                                const LossFn& train_loss,
                                                                const LossFn& val_loss, double xi) {
  if (xi == 0.0) return alpha_grad_first_order(alpha, val_loss);

  std::vector<std::vector<double>> saved;
  saved.reserve(weights.size());
  for (const Tensor& w : weights) saved.push_back(w.values());

  const auto train_grad_w = detail::eval_gradients(train_loss, weights, alpha);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    Tensor w = weights[i];
    for (std::size_t j = 0; j < w.numel(); ++j) w.values()[j] -= xi * train_grad_w[i][j];
  }

  // One backward at w' yields both the direct alpha term and v = dW' L_val.
  Tape& tape = Tape::active();
  tape.clear();
  for (Tensor p : alpha) p.zero_grad();
  for (Tensor p : weights) p.zero_grad();
  Tensor val = val_loss();
  tape.backward(val);
  std::vector<std::vector<double>> result;
  result.reserve(alpha.size());
  for (Tensor a : alpha) result.push_back(a.grad());
  std::vector<std::vector<double>> v;
  v.reserve(weights.size());
  for (Tensor w : weights) v.push_back(w.grad());
  tape.clear();

  const double v_norm = detail::l2_norm(v);
  if (v_norm > 0.0) {
    const double r = 0.01 / v_norm;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      Tensor w = weights[i];
      for (std::size_t j = 0; j < w.numel(); ++j) w.values()[j] = saved[i][j] + r * v[i][j];
    }
    const auto plus = detail::eval_gradients(train_loss, alpha, weights);
    for (std::size_t i = 0; i < weights.size(); ++i) {
      Tensor w = weights[i];
      for (std::size_t j = 0; j < w.numel(); ++j) w.values()[j] = saved[i][j] - r * v[i][j];
    }
    const auto minus = detail::eval_gradients(train_loss, alpha, weights);
    for (std::size_t i = 0; i < alpha.size(); ++i) {
      for (std::size_t j = 0; j < result[i].size(); ++j) {
        result[i][j] -= xi * (plus[i][j] - minus[i][j]) / (2.0 * r);
      }
    }
  }

  for (std::size_t i = 0; i < weights.size(); ++i) {
    Tensor w = weights[i];
    w.values() = saved[i];
  }
  return result;
}

}  // namespace dcnas
