#pragma once

#include <algorithm>
#include <vector>

#include "dcnas/tensor.hpp"

namespace dcnas {

// CTC collapse: merge adjacent repeats, then drop blanks (id 0).
inline std::vector<std::size_t> ctc_collapse(const std::vector<std::size_t>& path) {
  std::vector<std::size_t> out;
  std::size_t prev = static_cast<std::size_t>(-1);
  for (std::size_t sym : path) {
    if (sym != prev && sym != 0) out.push_back(sym);
    prev = sym;
  }
  return out;
}

// Per-frame argmax over the first valid_length rows, collapsed.
inline std::vector<std::size_t> greedy_ctc_decode(const Tensor& log_probs,
                                                  std::size_t valid_length) {
  if (log_probs.rank() != 2) throw ShapeError("greedy decode: log_probs must be [T, V+1]");
  if (valid_length > log_probs.dim(0)) {
    throw ShapeError("greedy decode: valid length exceeds " + shape_str(log_probs.shape()));
  }
  const std::size_t classes = log_probs.dim(1);
  const double* lp = log_probs.values().data();
  std::vector<std::size_t> path(valid_length);
  for (std::size_t t = 0; t < valid_length; ++t) {
    const double* row = lp + t * classes;
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (row[c] > row[best]) best = c;
    }
    path[t] = best;
  }
  return ctc_collapse(path);
}

inline std::size_t edit_distance(const std::vector<std::size_t>& a,
                                 const std::vector<std::size_t>& b) {
  std::vector<std::size_t> prev(b.size() + 1);
  std::vector<std::size_t> cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Corpus-level token error rate: total edits over total reference length,
// clamped into [0, 1].
struct ErrorRateAccumulator {
  std::size_t edits = 0;
  std::size_t reference_tokens = 0;

  void add(const std::vector<std::size_t>& hypothesis, const std::vector<std::size_t>& reference) {
    edits += edit_distance(hypothesis, reference);
    reference_tokens += reference.size();
  }

  double token_error_rate() const {
    const double denom = static_cast<double>(std::max<std::size_t>(reference_tokens, 1));
    return std::min(1.0, static_cast<double>(edits) / denom);
  }
};

}  // namespace dcnas
