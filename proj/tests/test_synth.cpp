#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dcnas/decode.hpp"
#include "dcnas/synth.hpp"
#include "oracles.hpp"

using namespace dcnas;

namespace {

SyntheticTaskSpec pattern_spec(double noise = 0.1) {
  SyntheticTaskSpec spec;
  spec.kind = GeneratorKind::PatternCtc;
  spec.vocab_size = 4;
  spec.d_in = 6;
  spec.min_length = 10;
  spec.max_length = 18;
  spec.min_tokens = 2;
  spec.max_tokens = 4;
  spec.noise = noise;
  spec.seed = 11;
  return spec;
}

SyntheticTaskSpec planted_spec() {
  SyntheticTaskSpec spec;
  spec.kind = GeneratorKind::PlantedFilter;
  spec.vocab_size = 2;
  spec.d_in = 4;
  spec.min_length = 24;
  spec.max_length = 30;
  spec.min_tokens = 1;
  spec.max_tokens = 5;
  spec.noise = 0.05;
  spec.planted_kernel = 15;
  spec.seed = 12;
  return spec;
}

std::size_t ctc_min_frames_of(const std::vector<std::size_t>& target) {
  std::size_t repeats = 0;
  for (std::size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++repeats;
  }
  return target.size() + repeats;
}

// Second, structurally different greedy decoder used as the duplicate
// implementation oracle.
std::vector<std::size_t> greedy_decode_reference(const std::vector<double>& lp, std::size_t t_len,
                                                 std::size_t classes, std::size_t valid) {
  std::vector<std::size_t> out;
  long previous = -1;
  for (std::size_t t = 0; t < valid && t < t_len; ++t) {
    std::size_t arg = 0;
    double best = lp[t * classes];
    for (std::size_t c = 1; c < classes; ++c) {
      if (lp[t * classes + c] > best) {
        best = lp[t * classes + c];
        arg = c;
      }
    }
    if (static_cast<long>(arg) != previous && arg != 0) out.push_back(arg);
    previous = static_cast<long>(arg);
  }
  return out;
}

}  // namespace

TEST_CASE("task validation rejects frame budgets too small for the targets") {
  SyntheticTaskSpec spec = pattern_spec();
  spec.max_length = 2 * spec.max_tokens;  // needs 2L+1
  REQUIRE_THROWS_AS(validate_task(spec), ConfigError);
  spec = pattern_spec();
  spec.min_tokens = 5;
  REQUIRE_THROWS_AS(validate_task(spec), ConfigError);
  spec = pattern_spec();
  spec.planted_kernel = 14;
  REQUIRE_THROWS_AS(validate_task(spec), ConfigError);
}

TEST_CASE("noiseless pattern frames are perfectly separable by class means") {
  SyntheticTaskSpec spec = pattern_spec(0.0);
  const auto means = class_means(spec);
  Rng rng(derive_seed(1, "separability"));
  for (int i = 0; i < 20; ++i) {
    Utterance utt = generate_utterance(spec, rng);
    for (std::size_t t = 0; t < utt.length; ++t) {
      std::size_t nearest = 0;
      double best = 1e300;
      for (std::size_t c = 0; c < means.size(); ++c) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < spec.d_in; ++j) {
          const double diff = utt.features[t * spec.d_in + j] - means[c][j];
          d2 += diff * diff;
        }
        if (d2 < best) {
          best = d2;
          nearest = c;
        }
      }
      REQUIRE(nearest == utt.frame_labels[t]);
    }
  }
}

TEST_CASE("generation is bitwise deterministic under a fixed seed") {
  SyntheticTaskSpec spec = pattern_spec();
  Rng a(42);
  Rng b(42);
  for (int i = 0; i < 5; ++i) {
    Utterance ua = generate_utterance(spec, a);
    Utterance ub = generate_utterance(spec, b);
    REQUIRE(ua.features == ub.features);
    REQUIRE(ua.targets == ub.targets);
    REQUIRE(ua.frame_labels == ub.frame_labels);
  }
  Rng c(43);
  REQUIRE(generate_utterance(spec, c).features != generate_utterance(spec, a).features);
}

TEST_CASE("generated utterances satisfy the CTC feasibility construction") {
  for (const SyntheticTaskSpec& spec : {pattern_spec(), planted_spec()}) {
    Rng rng(derive_seed(7, "feasibility"));
    std::size_t with_targets = 0;
    for (int i = 0; i < 50; ++i) {
      Utterance utt = generate_utterance(spec, rng);
      REQUIRE(utt.length >= spec.min_length);
      REQUIRE(utt.length <= spec.max_length);
      REQUIRE(utt.frame_labels.size() == utt.length);
      REQUIRE(utt.features.size() == utt.length * spec.d_in);
      REQUIRE(utt.length >= 2 * utt.targets.size() + 1);
      REQUIRE(utt.length >= ctc_min_frames_of(utt.targets));
      // frame labels collapse to exactly the token targets
      REQUIRE(ctc_collapse(utt.frame_labels) == utt.targets);
      for (std::size_t label : utt.frame_labels) REQUIRE(label <= spec.vocab_size);
      if (!utt.targets.empty()) ++with_targets;
    }
    REQUIRE(with_targets > 25);
  }
}

TEST_CASE("planted-filter labels depend on the driver channel through the filter") {
  SyntheticTaskSpec spec = planted_spec();
  spec.noise = 0.0;
  const auto taps = planted_filter_taps(spec);
  REQUIRE(taps.size() == spec.planted_kernel);
  REQUIRE(std::abs(taps.front()) == 1.0);
  REQUIRE(std::abs(taps.back()) == 1.0);

  Rng rng(derive_seed(3, "planted"));
  Utterance utt = generate_utterance(spec, rng);
  // With zero noise, channel 0 is the driver; recomputing the filter score
  // must agree with every nonzero label's sign.
  const std::ptrdiff_t reach = static_cast<std::ptrdiff_t>(taps.size() / 2);
  for (std::size_t t = 0; t < utt.length; ++t) {
    if (utt.frame_labels[t] == 0) continue;
    double score = 0.0;
    for (std::size_t j = 0; j < taps.size(); ++j) {
      const std::ptrdiff_t src =
          static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - reach;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(utt.length)) continue;
      score += taps[j] * utt.features[static_cast<std::size_t>(src) * spec.d_in];
    }
    REQUIRE((utt.frame_labels[t] == 2) == (score > 0.0));
  }
}

TEST_CASE("data pool serves deterministic shuffled epochs") {
  SyntheticTaskSpec spec = pattern_spec();
  DataPool pool(spec, 10, 99, "train-order");
  REQUIRE(pool.size() == 10);
  auto b1 = pool.epoch_batches(0, 3, 4);
  auto b2 = pool.epoch_batches(0, 3, 4);
  REQUIRE(b1.size() == 4);
  for (std::size_t i = 0; i < b1.size(); ++i) {
    REQUIRE(b1[i].features.values() == b2[i].features.values());
    REQUIRE(b1[i].targets == b2[i].targets);
  }
  auto b3 = pool.epoch_batches(1, 3, 4);
  bool any_diff = false;
  for (std::size_t i = 0; i < b1.size(); ++i) {
    if (b1[i].features.values() != b3[i].features.values()) any_diff = true;
  }
  REQUIRE(any_diff);
}

TEST_CASE("greedy decode collapses repeats and strips blanks") {
  // frames argmax: blank, a, a, blank, b -> [a, b]
  Tensor lp = Tensor::from_values(
      {5, 3}, {0.9, 0.05, 0.05, 0.1, 0.8, 0.1, 0.2, 0.7, 0.1, 0.6, 0.2, 0.2, 0.1, 0.2, 0.7});
  REQUIRE(greedy_ctc_decode(lp, 5) == std::vector<std::size_t>{1, 2});

  Tensor blanks = Tensor::from_values({3, 2}, {0.9, 0.1, 0.8, 0.2, 0.7, 0.3});
  REQUIRE(greedy_ctc_decode(blanks, 3).empty());
}

TEST_CASE("greedy decode agrees with an independent implementation on 1000 instances") {
  Rng rng(8);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t t_len = 1 + rng.uniform_int(0, 9);
    const std::size_t classes = 2 + rng.uniform_int(0, 3);
    const std::size_t valid = 1 + rng.uniform_int(0, t_len - 1);
    std::vector<double> vals(t_len * classes);
    for (double& v : vals) v = rng.uniform(-3.0, 3.0);
    Tensor lp = Tensor::from_values({t_len, classes}, vals);
    REQUIRE(greedy_ctc_decode(lp, valid) == greedy_decode_reference(vals, t_len, classes, valid));
  }
}

TEST_CASE("edit distance and token error rate behave") {
  REQUIRE(edit_distance({1, 2, 3}, {1, 2, 3}) == 0);
  REQUIRE(edit_distance({1, 2, 3}, {1, 3}) == 1);
  REQUIRE(edit_distance({}, {1, 2}) == 2);
  REQUIRE(edit_distance({2, 1}, {1, 2}) == 2);

  ErrorRateAccumulator acc;
  acc.add({1, 2}, {1, 2});
  REQUIRE(acc.token_error_rate() == 0.0);
  acc.add({}, {1, 2, 3});
  REQUIRE(acc.token_error_rate() == Catch::Approx(3.0 / 5.0));

  // Hypotheses longer than references clamp at 1.
  ErrorRateAccumulator wild;
  wild.add({1, 2, 1, 2, 1, 2}, {2});
  REQUIRE(wild.token_error_rate() == 1.0);

  // Scoring a model against its own outputs is exact.
  ErrorRateAccumulator self;
  std::vector<std::size_t> own{3, 1, 2};
  self.add(own, own);
  REQUIRE(self.token_error_rate() == 0.0);
}
