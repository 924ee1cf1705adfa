#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dcnas/adam.hpp"
#include "dcnas/bilevel.hpp"
#include "dcnas/config.hpp"
#include "dcnas/decode.hpp"
#include "dcnas/descriptor.hpp"
#include "dcnas/encoder.hpp"
#include "dcnas/synth.hpp"

namespace dcnas {

struct TrajectorySample {
  std::size_t epoch;
  std::string edge_id;
  std::string candidate;
  double weight;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::map<std::string, double> alpha_entropy;
};

inline double distribution_entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

// Bi-level search: freeze alpha for the first freeze_epochs while w trains,
// then alternate one alpha step on a validation batch with one w step on a
// training batch. Validation data is a held-out tenth of the synthetic pool.
class SearchLoop {
 public:
  explicit SearchLoop(const RunConfig& cfg) : cfg_(cfg) {
    Rng init_rng(derive_seed(cfg.seed, "search-init"));
    net_ = std::make_unique<SupernetEncoder>(cfg.supernet_config(), init_rng);
    const std::size_t train_count =
        cfg.search.steps_per_epoch * cfg.search.batch_size * cfg.task.pool_epochs;
    const std::size_t val_count =
        std::max<std::size_t>(cfg.search.batch_size, (train_count + 8) / 9);
    train_pool_ = DataPool(cfg.task, train_count, derive_seed(cfg.seed, "search-train-data"),
                           "train-order");
    val_pool_ = DataPool(cfg.task, val_count, derive_seed(cfg.seed, "search-val-data"), "val-order");
    opt_weights_ = AdamOptimizer(net_->weight_params(),
                                 AdamOptions{cfg.search.weights_lr, 0.9, 0.999, 1e-8});
    opt_alpha_ = AdamOptimizer(net_->alphas().params(),
                               AdamOptions{cfg.search.alpha_lr, 0.9, 0.999, 1e-8});
    net_->alphas().set_frozen(cfg.search.freeze_epochs > 0);
  }

  SupernetEncoder& network() { return *net_; }
  const SupernetEncoder& network() const { return *net_; }
  AlphaStore& alphas() { return net_->alphas(); }
  std::size_t epoch() const { return epoch_; }
  std::size_t frozen_alpha_warnings() const { return frozen_alpha_warnings_; }
  std::size_t truncated_epochs() const { return truncated_epochs_; }
  const std::vector<TrajectorySample>& trajectory() const { return trajectory_; }
  const DataPool& train_pool() const { return train_pool_; }
  const DataPool& val_pool() const { return val_pool_; }
  void set_dump_path(std::filesystem::path path) { dump_path_ = std::move(path); }

  double weights_step(const Batch& batch) {
    Tape::active().clear();
    opt_weights_.zero_grad();
    MixedLossResult r = mixed_loss(batch, model_fn(), cfg_.loss);
    ensure_finite(r.total.scalar_value(), batch);
    Tape::active().backward(r.total);
    Tape::active().clear();
    clip_grad_norm(opt_weights_.params(), cfg_.search.grad_clip_norm);
    opt_weights_.step();
    ++weight_steps_;
    return r.total.scalar_value();
  }

  // First-order (inner_step_size == 0) or Eq.-(4) second-order alpha update.
  // Frozen alpha makes this a counted no-op. The w parameters are bitwise
  // unchanged either way; alpha stays unclipped.
  double alpha_step(const Batch& val_batch, const Batch& train_batch) {
    if (net_->alphas().frozen()) {
      ++frozen_alpha_warnings_;
      return 0.0;
    }
    double loss_value = 0.0;
    if (cfg_.search.inner_step_size == 0.0) {
      Tape::active().clear();
      opt_alpha_.zero_grad();
      opt_weights_.zero_grad();
      MixedLossResult r = mixed_loss(val_batch, model_fn(), alpha_loss_weights());
      ensure_finite(r.total.scalar_value(), val_batch);
      Tape::active().backward(r.total);
      Tape::active().clear();
      loss_value = r.total.scalar_value();
    } else {
      const std::vector<Tensor> weights = opt_weights_.params();
      const std::vector<Tensor> alpha = opt_alpha_.params();
      auto grads = alpha_grad_second_order(
          weights, alpha, [&] { return mixed_loss(train_batch, model_fn(), cfg_.loss).total; },
          [&] {
            MixedLossResult r = mixed_loss(val_batch, model_fn(), alpha_loss_weights());
            loss_value = r.total.scalar_value();
            return r.total;
          },
          cfg_.search.inner_step_size);
      ensure_finite(loss_value, val_batch);
      for (std::size_t i = 0; i < alpha.size(); ++i) {
        Tensor a = alpha[i];
        a.grad() = grads[i];
      }
    }
    opt_alpha_.step();
    ++alpha_steps_;
    return loss_value;
  }

  // One epoch over pre-drawn batch lists; short lists truncate the epoch.
  EpochMetrics run_epoch_with_batches(const std::vector<Batch>& train_batches,
                                      const std::vector<Batch>& val_batches) {
    const bool warmup = epoch_ < cfg_.search.freeze_epochs;
    net_->alphas().set_frozen(warmup);
    std::size_t steps = std::min<std::size_t>(cfg_.search.steps_per_epoch, train_batches.size());
    if (!warmup) steps = std::min(steps, val_batches.size());
    if (steps < cfg_.search.steps_per_epoch) {
      ++truncated_epochs_;
      std::fprintf(stderr, "dcnas: epoch %zu truncated to %zu of %zu steps (stream exhausted)\n",
                   epoch_, steps, cfg_.search.steps_per_epoch);
    }

    double train_sum = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      if (!warmup) alpha_step(val_batches[step], train_batches[step]);
      train_sum += weights_step(train_batches[step]);
    }

    EpochMetrics metrics;
    metrics.epoch = epoch_;
    metrics.train_loss = steps ? train_sum / static_cast<double>(steps) : 0.0;
    metrics.val_loss = evaluate_validation_loss();
    for (const auto& [id, entry] : net_->alphas().entries()) {
      metrics.alpha_entropy[id] = distribution_entropy(net_->alphas().weights(id));
    }
    sample_trajectory();
    ++epoch_;
    return metrics;
  }

  EpochMetrics run_epoch() {
    const bool warmup = epoch_ < cfg_.search.freeze_epochs;
    auto train_batches =
        train_pool_.epoch_batches(epoch_, cfg_.search.batch_size, cfg_.search.steps_per_epoch);
    std::vector<Batch> val_batches;
    if (!warmup) {
      val_batches =
          val_pool_.epoch_batches(epoch_, cfg_.search.batch_size, cfg_.search.steps_per_epoch);
    }
    return run_epoch_with_batches(train_batches, val_batches);
  }

  std::vector<EpochMetrics> run(const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
    std::vector<EpochMetrics> all;
    all.reserve(cfg_.search.epochs);
    while (epoch_ < cfg_.search.epochs) {
      all.push_back(run_epoch());
      if (on_epoch) on_epoch(all.back());
    }
    return all;
  }

  // No-grad validation loss over a fixed prefix of the held-out pool.
  double evaluate_validation_loss() {
    NoGradGuard no_grad;
    const std::size_t batch_size = cfg_.search.batch_size;
    const std::size_t batches =
        std::min<std::size_t>(4, std::max<std::size_t>(1, val_pool_.size() / batch_size));
    double sum = 0.0;
    std::size_t cursor = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<Utterance> group;
      group.reserve(batch_size);
      for (std::size_t i = 0; i < batch_size; ++i) {
        group.push_back(val_pool_.item(cursor++ % val_pool_.size()));
      }
      sum += mixed_loss(pack_batch(group, cfg_.task.d_in), model_fn(), cfg_.loss).total.scalar_value();
    }
    return sum / static_cast<double>(batches);
  }

  std::function<Tensor(const Tensor&, const FrameMask&)> model_fn() const {
    return [this](const Tensor& features, const FrameMask& mask) {
      return net_->forward(features, mask);
    };
  }

 private:
  LossWeights alpha_loss_weights() const {
    return cfg_.search.alpha_loss == "ctc" ? LossWeights{1.0, 0.0} : cfg_.loss;
  }

  void sample_trajectory() {
    for (const auto& [id, entry] : net_->alphas().entries()) {
      const auto weights = net_->alphas().weights(id);
      for (std::size_t c = 0; c < weights.size(); ++c) {
        trajectory_.push_back({epoch_, id, entry.candidate_names[c], weights[c]});
      }
    }
  }

  void ensure_finite(double loss, const Batch& batch) {
    if (std::isfinite(loss)) return;
    if (!dump_path_.empty()) {
      nlohmann::json dump;
      dump["epoch"] = epoch_;
      dump["weight_steps"] = weight_steps_;
      dump["alpha_steps"] = alpha_steps_;
      dump["loss"] = "non-finite";
      dump["batch"] = batch.to_json();
      nlohmann::json alpha = nlohmann::json::object();
      for (const auto& [id, entry] : net_->alphas().entries()) {
        alpha[id] = entry.logits.values();
      }
      dump["alpha"] = alpha;
      std::ofstream out(dump_path_);
      out << dump.dump(2) << "\n";
    }
    throw NumericError("non-finite loss at epoch " + std::to_string(epoch_) +
                       (dump_path_.empty() ? "" : "; diagnostics in " + dump_path_.string()));
  }

  RunConfig cfg_;
  std::unique_ptr<SupernetEncoder> net_;
  DataPool train_pool_;
  DataPool val_pool_;
  AdamOptimizer opt_weights_;
  AdamOptimizer opt_alpha_;
  std::vector<TrajectorySample> trajectory_;
  std::filesystem::path dump_path_;
  std::size_t epoch_ = 0;
  std::size_t weight_steps_ = 0;
  std::size_t alpha_steps_ = 0;
  std::size_t frozen_alpha_warnings_ = 0;
  std::size_t truncated_epochs_ = 0;
};

// Retraining of a derived architecture from fresh weights (Algorithm 1's
// final step); same mixed objective and clipping as the search w phase.
class TrainLoop {
 public:
  TrainLoop(const RunConfig& cfg, const ArchDescriptor& desc) : cfg_(cfg) {
    Rng init_rng(derive_seed(cfg.seed, "train-init"));
    model_ = std::make_unique<StackedEncoder>(desc, cfg.encoder_config(), init_rng);
    const std::size_t train_count =
        cfg.train.steps_per_epoch * cfg.train.batch_size * cfg.task.pool_epochs;
    const std::size_t val_count =
        std::max<std::size_t>(cfg.train.batch_size, (train_count + 8) / 9);
    train_pool_ = DataPool(cfg.task, train_count, derive_seed(cfg.seed, "train-data"), "train-order");
    val_pool_ = DataPool(cfg.task, val_count, derive_seed(cfg.seed, "train-val-data"), "val-order");
    opt_ = AdamOptimizer(model_->params(), AdamOptions{cfg.train.lr, 0.9, 0.999, 1e-8});
  }

  StackedEncoder& model() { return *model_; }
  const StackedEncoder& model() const { return *model_; }
  std::size_t epoch() const { return epoch_; }
  void set_dump_path(std::filesystem::path path) { dump_path_ = std::move(path); }

  EpochMetrics run_epoch() {
    auto batches =
        train_pool_.epoch_batches(epoch_, cfg_.train.batch_size, cfg_.train.steps_per_epoch);
    double sum = 0.0;
    for (const Batch& batch : batches) {
      Tape::active().clear();
      opt_.zero_grad();
      MixedLossResult r = mixed_loss(batch, model_fn(), cfg_.loss);
      ensure_finite(r.total.scalar_value(), batch);
      Tape::active().backward(r.total);
      Tape::active().clear();
      clip_grad_norm(opt_.params(), cfg_.train.grad_clip_norm);
      opt_.step();
      sum += r.total.scalar_value();
    }
    EpochMetrics metrics;
    metrics.epoch = epoch_;
    metrics.train_loss = sum / static_cast<double>(batches.size());
    metrics.val_loss = evaluate_validation_loss();
    ++epoch_;
    return metrics;
  }

  std::vector<EpochMetrics> run(const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
    std::vector<EpochMetrics> all;
    while (epoch_ < cfg_.train.epochs) {
      all.push_back(run_epoch());
      if (on_epoch) on_epoch(all.back());
    }
    return all;
  }

  double evaluate_validation_loss() {
    NoGradGuard no_grad;
    const std::size_t batch_size = cfg_.train.batch_size;
    const std::size_t batches =
        std::min<std::size_t>(4, std::max<std::size_t>(1, val_pool_.size() / batch_size));
    double sum = 0.0;
    std::size_t cursor = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<Utterance> group;
      for (std::size_t i = 0; i < batch_size; ++i) {
        group.push_back(val_pool_.item(cursor++ % val_pool_.size()));
      }
      sum += mixed_loss(pack_batch(group, cfg_.task.d_in), model_fn(), cfg_.loss).total.scalar_value();
    }
    return sum / static_cast<double>(batches);
  }

  std::function<Tensor(const Tensor&, const FrameMask&)> model_fn() const {
    return [this](const Tensor& features, const FrameMask& mask) {
      return model_->forward(features, mask);
    };
  }

 private:
  void ensure_finite(double loss, const Batch& batch) {
    if (std::isfinite(loss)) return;
    if (!dump_path_.empty()) {
      nlohmann::json dump;
      dump["epoch"] = epoch_;
      dump["loss"] = "non-finite";
      dump["batch"] = batch.to_json();
      std::ofstream out(dump_path_);
      out << dump.dump(2) << "\n";
    }
    throw NumericError("non-finite training loss at epoch " + std::to_string(epoch_));
  }

  RunConfig cfg_;
  std::unique_ptr<StackedEncoder> model_;
  DataPool train_pool_;
  DataPool val_pool_;
  AdamOptimizer opt_;
  std::filesystem::path dump_path_;
  std::size_t epoch_ = 0;
};

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct EvalReport {
  double token_error_rate = 0.0;
  double baseline_blank_ter = 0.0;
  double baseline_uniform_ter = 0.0;
  std::size_t utterances = 0;
  std::size_t edits = 0;
  std::size_t reference_tokens = 0;

  nlohmann::json to_json() const {
    return {{"token_error_rate", token_error_rate},
            {"baseline_blank_ter", baseline_blank_ter},
            {"baseline_uniform_ter", baseline_uniform_ter},
            {"utterances", utterances},
            {"edits", edits},
            {"reference_tokens", reference_tokens}};
  }
};

// Greedy-decode token error rate on a held-out synthetic set, with all-blank
// and uniform-guess baselines for reference.
inline EvalReport evaluate_model(const StackedEncoder& model, const RunConfig& cfg) {
  NoGradGuard no_grad;
  DataPool pool(cfg.task, cfg.eval.utterances, derive_seed(cfg.seed, "eval-data"), "eval-order");
  Rng uniform_rng(derive_seed(cfg.seed, "uniform-baseline"));
  ErrorRateAccumulator model_acc;
  ErrorRateAccumulator blank_acc;
  ErrorRateAccumulator uniform_acc;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const Utterance& utt = pool.item(i);
    Tensor features = Tensor::from_values({utt.length, cfg.task.d_in}, utt.features);
    Tensor lp = log_softmax(model.forward(features, FrameMask::all(utt.length)), -1);
    model_acc.add(greedy_ctc_decode(lp, utt.length), utt.targets);
    blank_acc.add({}, utt.targets);
    std::vector<std::size_t> random_path(utt.length);
    for (auto& sym : random_path) sym = uniform_rng.uniform_int(0, cfg.task.vocab_size);
    uniform_acc.add(ctc_collapse(random_path), utt.targets);
  }
  EvalReport report;
  report.token_error_rate = model_acc.token_error_rate();
  report.baseline_blank_ter = blank_acc.token_error_rate();
  report.baseline_uniform_ter = uniform_acc.token_error_rate();
  report.utterances = pool.size();
  report.edits = model_acc.edits;
  report.reference_tokens = model_acc.reference_tokens;
  return report;
}

}  // namespace dcnas
