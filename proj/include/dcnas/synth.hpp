#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dcnas/losses.hpp"
#include "dcnas/rng.hpp"

namespace dcnas {

enum class GeneratorKind { PatternCtc, PlantedFilter };

inline std::string to_string(GeneratorKind kind) {
  return kind == GeneratorKind::PatternCtc ? "pattern-ctc" : "planted-filter";
}

inline GeneratorKind generator_kind_from_string(const std::string& s) {
  if (s == "pattern-ctc") return GeneratorKind::PatternCtc;
  if (s == "planted-filter") return GeneratorKind::PlantedFilter;
  throw ConfigError("unknown generator kind " + s);
}

struct SyntheticTaskSpec {
  GeneratorKind kind = GeneratorKind::PatternCtc;
  std::size_t vocab_size = 4;
  std::size_t d_in = 8;
  std::size_t min_length = 12;
  std::size_t max_length = 20;
  std::size_t min_tokens = 2;
  std::size_t max_tokens = 4;
  double noise = 0.1;
  std::size_t planted_kernel = 31;  // planted-filter mode only
  std::size_t pool_epochs = 1;      // epochs of unique data to pre-generate
  std::uint64_t seed = 1;           // shapes class means and the planted filter
};

inline void validate_task(const SyntheticTaskSpec& spec) {
  if (spec.vocab_size < 1) throw ConfigError("task: vocab_size must be >= 1");
  if (spec.kind == GeneratorKind::PlantedFilter && spec.vocab_size < 2) {
    throw ConfigError("task: planted-filter labels need vocab_size >= 2");
  }
  if (spec.d_in < 1) throw ConfigError("task: d_in must be >= 1");
  if (spec.min_tokens < 1 || spec.min_tokens > spec.max_tokens) {
    throw ConfigError("task: bad token length range");
  }
  if (spec.min_length > spec.max_length) throw ConfigError("task: bad frame length range");
  if (spec.max_length < 2 * spec.max_tokens + 1) {
    throw ConfigError("task: max_length " + std::to_string(spec.max_length) +
                      " too small for targets of up to " + std::to_string(spec.max_tokens) +
                      " tokens (needs >= 2L+1)");
  }
  if (spec.planted_kernel % 2 == 0) throw ConfigError("task: planted kernel must be odd");
  if (spec.noise < 0.0) throw ConfigError("task: noise must be nonnegative");
  if (spec.pool_epochs < 1) throw ConfigError("task: pool_epochs must be >= 1");
}

struct Utterance {
  std::size_t length = 0;
  std::vector<double> features;  // length * d_in, row-major
  std::vector<std::size_t> targets;
  std::vector<std::size_t> frame_labels;  // length entries, 0 = silence
};

// Fixed per-task class mean vectors (class 0 is silence). Derived from the
// task seed only, so train/val/eval streams share them.
inline std::vector<std::vector<double>> class_means(const SyntheticTaskSpec& spec) {
  Rng rng(derive_seed(spec.seed, "class-means"));
  std::vector<std::vector<double>> means(spec.vocab_size + 1, std::vector<double>(spec.d_in));
  for (auto& mean : means) {
    double sq = 0.0;
    for (double& v : mean) {
      v = rng.next_gaussian();
      sq += v * v;
    }
    const double inv = 1.0 / std::max(std::sqrt(sq), 1e-12);
    for (double& v : mean) v *= 2.0 * inv;  // unit direction, radius 2
  }
  return means;
}

// Planted temporal filter spanning exactly the planted kernel width, with
// deliberately heavy extreme taps so narrower kernels cannot express it.
inline std::vector<double> planted_filter_taps(const SyntheticTaskSpec& spec) {
  Rng rng(derive_seed(spec.seed, "planted-filter"));
  const std::size_t k = spec.planted_kernel;
  std::vector<double> taps(k, 0.0);
  for (double& v : taps) v = 0.05 * rng.next_gaussian();
  taps.front() = rng.next_double() < 0.5 ? 1.0 : -1.0;
  taps.back() = rng.next_double() < 0.5 ? 1.0 : -1.0;
  return taps;
}

namespace detail {

inline Utterance generate_pattern_ctc(const SyntheticTaskSpec& spec,
                                      const std::vector<std::vector<double>>& means, Rng& rng) {
  const std::size_t n_tokens = rng.uniform_int(spec.min_tokens, spec.max_tokens);
  std::vector<std::size_t> tokens(n_tokens);
  for (auto& t : tokens) t = 1 + rng.uniform_int(0, spec.vocab_size - 1);

  // Two frames per token plus a silence frame wherever a token repeats; the
  // remaining budget is sprinkled over token runs and silence slots.
  std::size_t forced_silence = 0;
  for (std::size_t i = 1; i < n_tokens; ++i) {
    if (tokens[i] == tokens[i - 1]) ++forced_silence;
  }
  const std::size_t base = 2 * n_tokens + forced_silence;
  const std::size_t floor_len = std::max({spec.min_length, 2 * n_tokens + 1, base});
  const std::size_t t_len = rng.uniform_int(floor_len, std::max(floor_len, spec.max_length));

  std::vector<std::size_t> run_len(n_tokens, 2);
  std::vector<std::size_t> silence(n_tokens + 1, 0);
  for (std::size_t i = 1; i < n_tokens; ++i) {
    if (tokens[i] == tokens[i - 1]) silence[i] = 1;
  }
  for (std::size_t extra = t_len - base; extra > 0; --extra) {
    const std::size_t slot = rng.uniform_int(0, 2 * n_tokens);
    if (slot < n_tokens) {
      ++run_len[slot];
    } else {
      ++silence[slot - n_tokens];
    }
  }

  Utterance utt;
  utt.length = t_len;
  utt.targets = tokens;
  utt.frame_labels.reserve(t_len);
  for (std::size_t i = 0; i < n_tokens; ++i) {
    for (std::size_t s = 0; s < silence[i]; ++s) utt.frame_labels.push_back(0);
    for (std::size_t r = 0; r < run_len[i]; ++r) utt.frame_labels.push_back(tokens[i]);
  }
  for (std::size_t s = 0; s < silence[n_tokens]; ++s) utt.frame_labels.push_back(0);

  utt.features.resize(t_len * spec.d_in);
  for (std::size_t t = 0; t < t_len; ++t) {
    const auto& mean = means[utt.frame_labels[t]];
    for (std::size_t j = 0; j < spec.d_in; ++j) {
      utt.features[t * spec.d_in + j] = mean[j] + spec.noise * rng.next_gaussian();
    }
  }
  return utt;
}

inline Utterance generate_planted_filter(const SyntheticTaskSpec& spec,
                                         const std::vector<double>& taps, Rng& rng) {
  const std::size_t t_len = rng.uniform_int(spec.min_length, spec.max_length);
  const std::ptrdiff_t reach = static_cast<std::ptrdiff_t>(taps.size() / 2);

  std::vector<double> driver(t_len);
  for (double& v : driver) v = rng.next_gaussian();

  double tap_sq = 0.0;
  for (double v : taps) tap_sq += v * v;
  const double threshold = 0.45 * std::sqrt(tap_sq);

  std::vector<std::size_t> labels(t_len, 0);
  for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(t_len); ++t) {
    double score = 0.0;
    for (std::size_t j = 0; j < taps.size(); ++j) {
      const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(j) - reach;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
      score += taps[j] * driver[src];
    }
    if (score > threshold) {
      labels[t] = 2;
    } else if (score < -threshold) {
      labels[t] = 1;
    }
  }

  // Erode single-frame spikes, then keep eroding the shortest run until the
  // frame budget satisfies T >= 2L+1.
  auto runs_of = [&]() {
    std::vector<std::pair<std::size_t, std::size_t>> runs;  // (start, length) of nonzero runs
    std::size_t t = 0;
    while (t < t_len) {
      if (labels[t] == 0) {
        ++t;
        continue;
      }
      std::size_t start = t;
      while (t < t_len && labels[t] == labels[start]) ++t;
      runs.emplace_back(start, t - start);
    }
    return runs;
  };
  for (auto [start, len] : runs_of()) {
    if (len < 2) {
      for (std::size_t i = 0; i < len; ++i) labels[start + i] = 0;
    }
  }
  while (true) {
    auto runs = runs_of();
    if (2 * runs.size() + 1 <= t_len) break;
    auto smallest = std::min_element(runs.begin(), runs.end(), [](const auto& a, const auto& b) {
      return a.second < b.second;
    });
    for (std::size_t i = 0; i < smallest->second; ++i) labels[smallest->first + i] = 0;
  }

  Utterance utt;
  utt.length = t_len;
  utt.frame_labels = labels;
  std::size_t prev = 0;
  for (std::size_t label : labels) {
    if (label != 0 && label != prev) utt.targets.push_back(label);
    prev = label;
  }

  utt.features.assign(t_len * spec.d_in, 0.0);
  for (std::size_t t = 0; t < t_len; ++t) {
    utt.features[t * spec.d_in] = driver[t] + spec.noise * rng.next_gaussian();
    for (std::size_t j = 1; j < spec.d_in; ++j) {
      utt.features[t * spec.d_in + j] = rng.next_gaussian();
    }
  }
  return utt;
}

}  // namespace detail

inline Utterance generate_utterance(const SyntheticTaskSpec& spec, Rng& rng) {
  validate_task(spec);
  if (spec.kind == GeneratorKind::PatternCtc) {
    return detail::generate_pattern_ctc(spec, class_means(spec), rng);
  }
  return detail::generate_planted_filter(spec, planted_filter_taps(spec), rng);
}

inline Batch pack_batch(const std::vector<Utterance>& utterances, std::size_t d_in) {
  if (utterances.empty()) throw DataError("cannot pack an empty batch");
  Batch batch;
  std::size_t t_max = 0;
  for (const auto& u : utterances) t_max = std::max(t_max, u.length);
  std::vector<double> flat(utterances.size() * t_max * d_in, 0.0);
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    const Utterance& u = utterances[i];
    std::copy(u.features.begin(), u.features.end(), flat.begin() + i * t_max * d_in);
    batch.feat_lengths.push_back(u.length);
    batch.targets.push_back(u.targets);
    batch.frame_labels.push_back(u.frame_labels);
  }
  batch.features = Tensor::from_values({utterances.size(), t_max, d_in}, std::move(flat));
  batch.validate();
  return batch;
}

// A finite pool of pre-generated utterances served as shuffled batches; the
// per-epoch order is a pure function of (seed, tag, epoch).
class DataPool {
 public:
  DataPool() = default;
  DataPool(const SyntheticTaskSpec& spec, std::size_t count, std::uint64_t stream_seed,
           std::string tag)
      : spec_(spec), tag_(std::move(tag)) {
    Rng rng(stream_seed);
    items_.reserve(count);
    for (std::size_t i = 0; i < count; ++i) items_.push_back(generate_utterance(spec, rng));
  }

  std::size_t size() const { return items_.size(); }
  const Utterance& item(std::size_t i) const { return items_[i]; }
  const SyntheticTaskSpec& spec() const { return spec_; }

  // Batches for one epoch: a seeded shuffle chopped into fixed-size groups,
  // wrapping (with reshuffles) when more steps are requested than the pool
  // holds.
  std::vector<Batch> epoch_batches(std::size_t epoch, std::size_t batch_size,
                                   std::size_t steps) const {
    if (items_.empty() || batch_size == 0) throw DataError("data pool is empty");
    std::vector<Batch> batches;
    batches.reserve(steps);
    std::vector<std::size_t> order;
    std::size_t round = 0;
    std::size_t cursor = 0;
    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<Utterance> group;
      group.reserve(batch_size);
      for (std::size_t b = 0; b < batch_size; ++b) {
        if (cursor >= order.size()) {
          order = shuffled_order(epoch, round++);
          cursor = 0;
        }
        group.push_back(items_[order[cursor++]]);
      }
      batches.push_back(pack_batch(group, spec_.d_in));
    }
    return batches;
  }

 private:
  std::vector<std::size_t> shuffled_order(std::size_t epoch, std::size_t round) const {
    std::vector<std::size_t> order(items_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(spec_.seed ^ (0x9e37u + epoch * 1315423911ull + round), tag_));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_int(0, i - 1)]);
    }
    return order;
  }

  SyntheticTaskSpec spec_;
  std::string tag_;
  std::vector<Utterance> items_;
};

}  // namespace dcnas
