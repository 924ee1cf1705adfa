#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcnas/blocks.hpp"
#include "dcnas/ops.hpp"

namespace dcnas {

// ---------------------------------------------------------------------------
// Batch
// ---------------------------------------------------------------------------

// Padded feature sequences plus token targets and per-frame labels. Blank id
// is 0; vocabulary ids run 1..V. frame_labels[i] has feat_lengths[i] entries
// and may contain 0 for silence frames.
struct Batch {
  Tensor features;  // [B, T, d_in]
  std::vector<std::size_t> feat_lengths;
  std::vector<std::vector<std::size_t>> targets;
  std::vector<std::vector<std::size_t>> frame_labels;

  std::size_t size() const { return feat_lengths.size(); }
  std::size_t padded_length() const { return features.dim(1); }
  std::size_t feature_dim() const { return features.dim(2); }
  std::size_t target_length(std::size_t i) const { return targets[i].size(); }

  Tensor features_of(std::size_t i) const {
    const std::size_t t_len = padded_length();
    const std::size_t d = feature_dim();
    std::vector<double> vals(t_len * d);
    const double* src = features.values().data() + i * t_len * d;
    std::copy(src, src + t_len * d, vals.begin());
    return Tensor::from_values({t_len, d}, std::move(vals));
  }

  FrameMask mask_of(std::size_t i) const { return FrameMask(padded_length(), feat_lengths[i]); }

  void validate() const {
    if (features.rank() != 3 || feat_lengths.size() != features.dim(0) ||
        targets.size() != size() || frame_labels.size() != size()) {
      throw DataError("batch: inconsistent field sizes");
    }
    for (std::size_t i = 0; i < size(); ++i) {
      if (feat_lengths[i] == 0 || feat_lengths[i] > padded_length()) {
        throw DataError("batch: utterance " + std::to_string(i) + " has bad length");
      }
      if (frame_labels[i].size() != feat_lengths[i]) {
        throw DataError("batch: utterance " + std::to_string(i) + " frame labels do not cover it");
      }
      if (targets[i].size() > feat_lengths[i]) {
        throw DataError("batch: utterance " + std::to_string(i) + " has more tokens than frames");
      }
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["feat_lengths"] = feat_lengths;
    j["targets"] = targets;
    j["frame_labels"] = frame_labels;
    j["features_shape"] = features.shape();
    j["features"] = features.values();
    return j;
  }
};

struct LossWeights {
  double ctc_weight = 0.7;
  double ce_weight = 0.3;
};

inline void validate_loss_weights(const LossWeights& w) {
  if (w.ctc_weight < 0.0 || w.ce_weight < 0.0 || std::abs(w.ctc_weight + w.ce_weight - 1.0) > 1e-12) {
    throw ConfigError("loss weights must be nonnegative and sum to 1");
  }
}

// ---------------------------------------------------------------------------
// CTC
// ---------------------------------------------------------------------------

namespace detail {

inline double logsum2(double a, double b) {
  if (a == neg_inf()) return b;
  if (b == neg_inf()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline double logsum3(double a, double b, double c) { return logsum2(logsum2(a, b), c); }

// Minimal frame count a target needs: one frame per token plus a blank
// between adjacent repeats.
inline std::size_t ctc_min_frames(const std::vector<std::size_t>& target) {
  std::size_t repeats = 0;
  for (std::size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++repeats;
  }
  return target.size() + repeats;
}

}  // namespace detail

struct CtcResult {
  Tensor loss;
  bool feasible = true;
};

// Forward-algorithm CTC loss in log space over the blank-interleaved label
// sequence. log_probs must already be log-softmax outputs; only the first
// valid_length rows participate. The backward rule is the exact posterior:
//   d(-log p)/d lp[t][k] = -sum_{s: label(s)=k} exp(alpha[t][s]+beta[t][s]-log p)
inline CtcResult ctc_loss(const Tensor& log_probs, std::size_t valid_length,
                          const std::vector<std::size_t>& target) {
  if (log_probs.rank() != 2) throw ShapeError("ctc: log_probs must be [T, V+1]");
  const std::size_t classes = log_probs.dim(1);
  if (classes < 2) throw ShapeError("ctc: need at least blank plus one symbol");
  if (valid_length == 0 || valid_length > log_probs.dim(0)) {
    throw ShapeError("ctc: valid length " + std::to_string(valid_length) + " out of " +
                     shape_str(log_probs.shape()));
  }
  for (std::size_t id : target) {
    if (id == 0 || id >= classes) {
      throw ShapeError("ctc: target id " + std::to_string(id) + " outside vocabulary 1.." +
                       std::to_string(classes - 1));
    }
  }
  if (valid_length < detail::ctc_min_frames(target)) {
    return {Tensor::scalar(std::numeric_limits<double>::infinity()), false};
  }

  const std::size_t len = valid_length;
  const std::size_t s_len = 2 * target.size() + 1;
  std::vector<std::size_t> expanded(s_len, 0);
  for (std::size_t i = 0; i < target.size(); ++i) expanded[2 * i + 1] = target[i];

  const double* lp = log_probs.values().data();
  std::vector<double> alpha(len * s_len, neg_inf());
  alpha[0] = lp[expanded[0]];
  if (s_len > 1) alpha[1] = lp[expanded[1]];
  for (std::size_t t = 1; t < len; ++t) {
    const double* row = lp + t * classes;
    for (std::size_t s = 0; s < s_len; ++s) {
      double acc = alpha[(t - 1) * s_len + s];
      if (s >= 1) acc = detail::logsum2(acc, alpha[(t - 1) * s_len + s - 1]);
      if (s >= 2 && expanded[s] != 0 && expanded[s] != expanded[s - 2]) {
        acc = detail::logsum2(acc, alpha[(t - 1) * s_len + s - 2]);
      }
      alpha[t * s_len + s] = acc == neg_inf() ? neg_inf() : acc + row[expanded[s]];
    }
  }
  double total = alpha[(len - 1) * s_len + s_len - 1];
  if (s_len > 1) total = detail::logsum2(total, alpha[(len - 1) * s_len + s_len - 2]);
  if (total == neg_inf()) {
    return {Tensor::scalar(std::numeric_limits<double>::infinity()), false};
  }

  const bool rec = detail::should_record({&log_probs});
  Tensor loss = Tensor::from_values({}, {-total}, rec);
  if (rec) {
    Tape::active().record([lpn = log_probs.state(), on = loss.state(), alpha = std::move(alpha),
                           expanded = std::move(expanded), total, len, s_len, classes] {
      Tape& t = Tape::active();
      const auto* fo = t.flow(on.get());
      if (!fo) return;
      const double seed = (*fo)[0];
      const double* lp = lpn->value.data();

      std::vector<double> beta(len * s_len, neg_inf());
      beta[(len - 1) * s_len + s_len - 1] = 0.0;
      if (s_len > 1) beta[(len - 1) * s_len + s_len - 2] = 0.0;
      for (std::size_t ti = len - 1; ti-- > 0;) {
        const double* next_row = lp + (ti + 1) * classes;
        for (std::size_t s = 0; s < s_len; ++s) {
          double acc = beta[(ti + 1) * s_len + s] + next_row[expanded[s]];
          if (s + 1 < s_len) {
            acc = detail::logsum2(acc, beta[(ti + 1) * s_len + s + 1] + next_row[expanded[s + 1]]);
          }
          if (s + 2 < s_len && expanded[s + 2] != 0 && expanded[s + 2] != expanded[s]) {
            acc = detail::logsum2(acc, beta[(ti + 1) * s_len + s + 2] + next_row[expanded[s + 2]]);
          }
          beta[ti * s_len + s] = acc;
        }
      }

      auto& fx = t.flow_accum(lpn);
      for (std::size_t ti = 0; ti < len; ++ti) {
        for (std::size_t s = 0; s < s_len; ++s) {
          const double joint = alpha[ti * s_len + s] + beta[ti * s_len + s];
          if (joint == neg_inf()) continue;
          fx[ti * classes + expanded[s]] -= seed * std::exp(joint - total);
        }
      }
    });
  }
  return {loss, true};
}

// Mean negative log-likelihood over the labelled (unpadded) frames.
inline Tensor frame_ce_loss(const Tensor& log_probs, const std::vector<std::size_t>& frame_labels) {
  if (frame_labels.empty()) throw DataError("frame ce: no labelled frames");
  Tensor picked = take_per_row(log_probs, frame_labels);
  return scale(sum_all(picked), -1.0 / static_cast<double>(frame_labels.size()));
}

// ---------------------------------------------------------------------------
// mixed objective
// ---------------------------------------------------------------------------

struct MixedLossResult {
  Tensor total;
  double ctc_mean = 0.0;
  double ce_mean = 0.0;
  std::size_t skipped_infeasible = 0;
};

// 0.7*CTC + 0.3*CE over a batch: CTC summed over frames per utterance (the
// path likelihood), CE averaged per utterance, both batch-averaged, mixture
// applied after the batch reduction. Infeasible utterances are skipped and
// counted; an all-infeasible batch is a data error.
inline MixedLossResult mixed_loss(
    const Batch& batch, const std::function<Tensor(const Tensor&, const FrameMask&)>& model,
    const LossWeights& weights) {
  validate_loss_weights(weights);
  MixedLossResult result;
  Tensor ctc_sum;
  Tensor ce_sum;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Tensor logits = model(batch.features_of(i), batch.mask_of(i));
    Tensor lp = log_softmax(logits, -1);
    CtcResult ctc = ctc_loss(lp, batch.feat_lengths[i], batch.targets[i]);
    if (!ctc.feasible) {
      ++result.skipped_infeasible;
      continue;
    }
    Tensor ce = frame_ce_loss(lp, batch.frame_labels[i]);
    ctc_sum = ctc_sum.defined() ? add(ctc_sum, ctc.loss) : ctc.loss;
    ce_sum = ce_sum.defined() ? add(ce_sum, ce) : ce;
  }
  const std::size_t used = batch.size() - result.skipped_infeasible;
  if (used == 0) throw DataError("mixed loss: every utterance in the batch is CTC-infeasible");
  Tensor ctc_mean = scale(ctc_sum, 1.0 / static_cast<double>(used));
  Tensor ce_mean = scale(ce_sum, 1.0 / static_cast<double>(used));
  result.total = add(scale(ctc_mean, weights.ctc_weight), scale(ce_mean, weights.ce_weight));
  result.ctc_mean = ctc_mean.scalar_value();
  result.ce_mean = ce_mean.scalar_value();
  return result;
}

}  // namespace dcnas
