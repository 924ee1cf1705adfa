// Acceptance suite: runs each release criterion at its stated tolerance and
// prints one pass/fail line per criterion. Exits nonzero if any fail.
//
// Usage: acceptance_tests [path-to-dcnas-cli]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "ctc_oracle.hpp"
#include "dcnas/cli.hpp"
#include "dcnas/workflows.hpp"
#include "oracles.hpp"
#include "reference_blocks.hpp"

using namespace dcnas;

namespace {

std::string g_cli_path;

struct CriterionResult {
  bool pass = true;
  std::string detail;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("dcnas_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig tiny_supernet_config(std::uint64_t seed) {
  RunConfig cfg = preset_config("desk");
  cfg.preset = "acceptance-tiny";
  cfg.seed = seed;
  cfg.model.d_model = 8;
  cfg.model.d_hidden = 12;  // full menus stay: heads {2,4,8}, kernels {15,23,31}
  cfg.task.vocab_size = 3;
  cfg.task.d_in = 4;
  cfg.task.min_length = 8;
  cfg.task.max_length = 12;
  cfg.task.pool_epochs = 1;
  cfg.task.seed = derive_seed(seed, "task");
  cfg.search.steps_per_epoch = 2;
  cfg.search.batch_size = 2;
  validate_config(cfg);
  return cfg;
}

void set_logits(AlphaStore& store, const std::string& edge_id, const std::vector<double>& v) {
  Tensor t = store.at(edge_id).logits;
  t.values() = v;
}

void force_skip(AlphaStore& store, const std::string& edge_id, bool keep) {
  set_logits(store, edge_id,
             keep ? std::vector<double>{-40.0, 40.0} : std::vector<double>{40.0, -40.0});
}

void force_op(AlphaStore& store, const std::string& edge_id, std::size_t winner) {
  std::vector<double> v(store.at(edge_id).logits.numel(), -40.0);
  v[winner] = 40.0;
  set_logits(store, edge_id, v);
}

int run_cli(const std::string& args) {
  const std::string cmd = g_cli_path + " " + args + " > /dev/null 2>&1";
  return WEXITSTATUS(std::system(cmd.c_str()));
}

// ---------------------------------------------------------------------------
// 1. gradient suite
// ---------------------------------------------------------------------------

CriterionResult criterion_gradients() {
  CriterionResult r;
  const auto start = std::chrono::steady_clock::now();
  for (std::uint64_t seed = 1; seed <= 5 && r.pass; ++seed) {
    Rng rng(derive_seed(seed, "acceptance-grad"));

    {  // primitives, chained so one check covers the whole op set
      Tensor a = oracles::rand_tensor({3, 6}, rng);
      Tensor b = oracles::rand_tensor({6, 4}, rng);
      Tensor k = oracles::rand_tensor({3, 6}, rng);
      Tensor gamma = oracles::rand_tensor({6}, rng, true, 0.5, 1.5);
      Tensor beta = oracles::rand_tensor({6}, rng);
      Tensor bias = oracles::rand_tensor({4}, rng);
      Tensor table = oracles::rand_tensor({4, 6}, rng);
      Tensor logits = oracles::rand_tensor({2}, rng);
      auto check = oracles::check_gradients(
          [&] {
            Tensor h = layer_norm(a, gamma, beta, 1e-5);
            h = conv1d_depthwise(h, k);
            h = add(h, embedding_lookup(table, {0, 3, 1}));
            Tensor m = add_bias(matmul(softmax(h, -1), b), bias);
            m = dropout(relu(m), 0.25, seed, 1, 2);
            Tensor weights = softmax(logits);
            Tensor mixed =
                add(scale_by_weight(glu(m), weights, 0),
                    scale_by_weight(glu(swish(merge_heads(split_heads(m, 2)))), weights, 1));
            Tensor rows = take_per_row(log_softmax(mixed, -1), {1, 0, 1});
            return sum_all(mul(rows, sigmoid(rows)));
          },
          {a, b, k, gamma, beta, bias, table, logits});
      r.expect(check.max_rel_err < 1e-4, "primitive suite seed " + std::to_string(seed) + " err " +
                                             std::to_string(check.max_rel_err));
    }

    {  // individual blocks (FF, MHSA, Conv) chained under a padding mask
      FeedForward ff(8, 12, true, 1e-5, rng);
      MultiHeadSelfAttention mha(8, 4, 1e-5, rng);
      ConvBlock conv(8, 5, 1e-5, rng);
      Tensor x = oracles::rand_tensor({5, 8}, rng);
      NamedParams np;
      ff.named_params("ff", np);
      mha.named_params("mha", np);
      conv.named_params("conv", np);
      std::vector<Tensor> params = param_tensors(np);
      params.push_back(x);
      auto check = oracles::check_gradients(
          [&] {
            const FrameMask mask(5, 4);
            return oracles::projection_loss(conv.forward(mha.forward(ff.forward(x), mask), mask),
                                            seed);
          },
          params);
      r.expect(check.max_rel_err < 1e-4, "block suite seed " + std::to_string(seed) + " err " +
                                             std::to_string(check.max_rel_err));
    }

    {  // mixed op: gradient reaches alpha and every candidate's weights
      OperationEdge edge;
      edge.edge_id = "acc.op";
      edge.candidates.emplace_back("a", FeedForward(6, 8, true, 1e-5, rng));
      edge.candidates.emplace_back("b", FeedForward(6, 8, false, 1e-5, rng));
      edge.alpha = Tensor::from_values({2}, {0.3, -0.2}, true);
      Tensor x = oracles::rand_tensor({4, 6}, rng);
      NamedParams np;
      edge.candidates[0].named_params("a", np);
      edge.candidates[1].named_params("b", np);
      std::vector<Tensor> params = param_tensors(np);
      params.push_back(edge.alpha);
      params.push_back(x);
      auto check = oracles::check_gradients(
          [&] {
            return oracles::projection_loss(mixed_op_forward(edge, x, FrameMask::all(4)), seed);
          },
          params);
      r.expect(check.max_rel_err < 1e-4, "mixed-op seed " + std::to_string(seed) + " err " +
                                             std::to_string(check.max_rel_err));
    }

    {  // full DC-cell supernet through the mixed CTC+CE loss
      RunConfig cfg = tiny_supernet_config(seed);
      SearchLoop loop(cfg);
      Batch batch = loop.train_pool().epoch_batches(0, 2, 1)[0];
      std::vector<Tensor> params = loop.network().weight_params();
      for (const Tensor& a : loop.alphas().params()) params.push_back(a);
      auto check = oracles::check_gradients(
          [&] { return mixed_loss(batch, loop.model_fn(), cfg.loss).total; }, params);
      r.expect(check.max_rel_err < 1e-4, "dc-cell seed " + std::to_string(seed) + " err " +
                                             std::to_string(check.max_rel_err));
    }
  }
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.expect(elapsed < 120.0, "runtime " + std::to_string(elapsed) + "s exceeds 2min");
  return r;
}

// ---------------------------------------------------------------------------
// 2. CTC enumeration oracle over the full grid
// ---------------------------------------------------------------------------

CriterionResult criterion_ctc_grid() {
  CriterionResult r;
  const auto start = std::chrono::steady_clock::now();
  Rng rng(derive_seed(2, "acceptance-ctc"));
  for (std::size_t vocab : {2u, 3u}) {
    for (std::size_t t_len = 1; t_len <= 6; ++t_len) {
      for (std::size_t l_len = 1; l_len <= 3; ++l_len) {
        std::vector<std::vector<double>> lp(t_len, std::vector<double>(vocab + 1));
        for (auto& row : lp) {
          double mx = -1e300;
          for (double& v : row) {
            v = rng.uniform(-2.0, 2.0);
            mx = std::max(mx, v);
          }
          double denom = 0.0;
          for (double v : row) denom += std::exp(v - mx);
          const double lse = mx + std::log(denom);
          for (double& v : row) v -= lse;
        }
        std::vector<double> flat;
        for (const auto& row : lp) flat.insert(flat.end(), row.begin(), row.end());
        Tensor lpt = Tensor::from_values({t_len, vocab + 1}, flat);

        std::vector<std::size_t> target(l_len, 1);
        while (true) {
          const double expected = oracles::ctc_loss_by_enumeration(lp, target);
          CtcResult got = ctc_loss(lpt, t_len, target);
          if (std::isinf(expected)) {
            r.expect(!got.feasible && std::isinf(got.loss.scalar_value()),
                     "infeasible case mismatched");
          } else {
            r.expect(std::abs(got.loss.scalar_value() - expected) < 1e-10,
                     "grid mismatch at T=" + std::to_string(t_len) + " L=" + std::to_string(l_len));
          }
          std::size_t pos = 0;
          while (pos < l_len && ++target[pos] > vocab) {
            target[pos] = 1;
            ++pos;
          }
          if (pos == l_len) break;
        }
      }
    }
  }
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.expect(elapsed < 60.0, "runtime " + std::to_string(elapsed) + "s exceeds 1min");
  return r;
}

// ---------------------------------------------------------------------------
// 3. one-hot equivalence over all 18 op/topology configurations
// ---------------------------------------------------------------------------

CriterionResult criterion_one_hot_equivalence() {
  CriterionResult r;
  Rng rng(derive_seed(3, "acceptance-onehot"));
  DcCellOptions opts;
  opts.d_model = 8;
  opts.d_hidden = 12;
  AlphaStore alphas;
  DcSupernetCell cell(opts, alphas, rng);

  const std::vector<std::vector<std::size_t>> mha_pairs = {{0, 1}, {0, 2}, {1, 2}};
  const std::vector<std::vector<std::size_t>> cnn_pairs = {{1, 2}, {1, 3}, {2, 3}};
  for (std::size_t config = 0; config < 18; ++config) {
    const std::vector<std::size_t> mac_in = {config % 2};
    const auto& mha_in = mha_pairs[(config / 2) % 3];
    const auto& cnn_in = cnn_pairs[(config / 6) % 3];
    for (std::size_t src : {0, 1}) {
      force_skip(alphas, "mac.in" + std::to_string(src), mac_in[0] == src);
    }
    for (std::size_t src : {0, 1, 2}) {
      force_skip(alphas, "mha.in" + std::to_string(src),
                 std::find(mha_in.begin(), mha_in.end(), src) != mha_in.end());
    }
    for (std::size_t src : {1, 2, 3}) {
      force_skip(alphas, "cnn.in" + std::to_string(src),
                 std::find(cnn_in.begin(), cnn_in.end(), src) != cnn_in.end());
    }
    force_skip(alphas, "ffc.in4", true);
    force_op(alphas, "mac.op", config % 2);
    force_op(alphas, "mha.op", (config / 2) % 3);
    force_op(alphas, "cnn.op", (config / 6) % 3);
    force_op(alphas, "ffc.op", 0);

    ArchDescriptor desc = derive_architecture(alphas);
    DiscreteCell discrete(desc, cell);
    Tensor x = oracles::rand_tensor({7, opts.d_model}, rng, false);
    NoGradGuard no_grad;
    const FrameMask mask(7, 6);
    const double diff = oracles::max_abs_diff(cell.forward(x, mask).values(),
                                              discrete.forward(x, mask).values());
    r.expect(diff < 1e-10, "config " + std::to_string(config) + " diff " + std::to_string(diff));
  }
  return r;
}

// ---------------------------------------------------------------------------
// 4. Eq.-(4) consistency
// ---------------------------------------------------------------------------

CriterionResult criterion_second_order() {
  CriterionResult r;

  {  // xi -> 0 on the full supernet loss
    RunConfig cfg = tiny_supernet_config(4);
    SearchLoop loop(cfg);
    Batch train = loop.train_pool().epoch_batches(0, 2, 1)[0];
    Batch val = loop.val_pool().epoch_batches(0, 2, 1)[0];
    auto train_loss = [&] { return mixed_loss(train, loop.model_fn(), cfg.loss).total; };
    auto val_loss = [&] { return mixed_loss(val, loop.model_fn(), cfg.loss).total; };
    const auto first = alpha_grad_first_order(loop.alphas().params(), val_loss);
    const auto tiny = alpha_grad_second_order(loop.network().weight_params(),
                                              loop.alphas().params(), train_loss, val_loss, 1e-8);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < first.size(); ++i) {
      for (std::size_t j = 0; j < first[i].size(); ++j) {
        max_diff = std::max(max_diff, std::abs(first[i][j] - tiny[i][j]));
      }
    }
    r.expect(max_diff < 1e-6, "xi=1e-8 vs first-order diff " + std::to_string(max_diff));
  }

  {  // analytic toy: L_train = (w-alpha)^2, L_val = w'^2 -> hypergradient 4 xi w'
    const double w0 = 1.5, a0 = 0.4, xi = 0.1;
    Tensor w = Tensor::scalar(w0, true);
    Tensor alpha = Tensor::scalar(a0, true);
    auto train_loss = [&] {
      Tensor d = sub(w, alpha);
      return mul(d, d);
    };
    auto val_loss = [&] { return mul(w, w); };
    const auto grads = alpha_grad_second_order({w}, {alpha}, train_loss, val_loss, xi);
    const double w_prime = w0 - 2.0 * xi * (w0 - a0);
    r.expect(std::abs(grads[0][0] - 4.0 * xi * w_prime) < 1e-6,
             "analytic hypergradient diff " +
                 std::to_string(std::abs(grads[0][0] - 4.0 * xi * w_prime)));
    r.expect(w.scalar_value() == w0, "weights not restored");
  }
  return r;
}

// ---------------------------------------------------------------------------
// 5. freeze contract on the desk preset
// ---------------------------------------------------------------------------

CriterionResult criterion_freeze() {
  CriterionResult r;
  RunConfig cfg = preset_config("desk");  // freeze_epochs = 3
  SearchLoop loop(cfg);
  const std::string initial = loop.alphas().signature_bytes();
  std::vector<std::string> after_epoch;
  for (std::size_t epoch = 0; epoch < 5; ++epoch) {
    loop.run_epoch();
    after_epoch.push_back(loop.alphas().signature_bytes());
  }
  r.expect(after_epoch[0] == initial, "alpha changed during epoch 0");
  r.expect(after_epoch[1] == initial, "alpha changed during epoch 1");
  r.expect(after_epoch[2] == initial, "alpha changed during epoch 2");
  r.expect(after_epoch[4] != initial, "alpha still at initialization by epoch 4");
  return r;
}

// ---------------------------------------------------------------------------
// 6. planted-filter search recovers the planted kernel
// ---------------------------------------------------------------------------

CriterionResult criterion_planted_search() {
  CriterionResult r;
  const auto start = std::chrono::steady_clock::now();
  const RunConfig base = preset_config("desk-planted");
  std::size_t hits = 0;
  std::size_t weight_ok = 0;
  std::string outcomes;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    RunConfig cfg = base;
    cfg.seed = seed;
    cfg.task.seed = derive_seed(seed, "task");
    SearchLoop loop(cfg);
    loop.run();
    ArchDescriptor desc = derive_architecture(loop.alphas());
    const std::size_t kernel = desc.node("cnn").op.kernel;
    if (!outcomes.empty()) outcomes += ",";
    outcomes += std::to_string(kernel);
    if (kernel != cfg.task.planted_kernel) continue;
    ++hits;
    // Fig.-3-style evidence: the winning candidate's final-epoch trajectory
    // weight strictly exceeds 1/M.
    const std::size_t menu = loop.alphas().at("cnn.op").candidate_names.size();
    double final_weight = 0.0;
    for (const TrajectorySample& s : loop.trajectory()) {
      if (s.epoch == cfg.search.epochs - 1 && s.edge_id == "cnn.op" &&
          s.candidate == "kernel" + std::to_string(kernel)) {
        final_weight = s.weight;
      }
    }
    if (final_weight > 1.0 / static_cast<double>(menu)) ++weight_ok;
  }
  r.expect(hits >= 4, "planted kernel found in only " + std::to_string(hits) + "/5 seeds");
  r.expect(weight_ok == hits, "a winning candidate's final weight did not exceed 1/M");
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.expect(elapsed < 1800.0, "runtime " + std::to_string(elapsed) + "s exceeds 30min");
  r.detail += (r.detail.empty() ? "" : "; ") + std::string("kernels: ") + outcomes + ", " +
              std::to_string(static_cast<int>(elapsed)) + "s";
  return r;
}

// ---------------------------------------------------------------------------
// 7. end-to-end pipeline beats the trivial baselines
// ---------------------------------------------------------------------------

CriterionResult criterion_pipeline() {
  CriterionResult r;
  const fs::path dir = fresh_dir("pipeline");
  RunConfig cfg = preset_config("desk");
  try {
    SearchArtifacts search = run_search_workflow(cfg, dir / "search");
    ArchDescriptor desc = run_derive_workflow(search.alpha_final, dir / "arch.json");
    const fs::path ckpt = run_train_workflow(cfg, desc, dir / "train");
    EvalReport report = run_eval_workflow(ckpt, dir / "eval.json");
    const double baseline = std::min(report.baseline_blank_ter, report.baseline_uniform_ter);
    r.expect(report.token_error_rate <= 0.5 * baseline,
             "ter " + std::to_string(report.token_error_rate) + " vs baseline " +
                 std::to_string(baseline));
    r.detail = "ter " + std::to_string(report.token_error_rate) + ", baseline " +
               std::to_string(baseline);
  } catch (const std::exception& e) {
    r.expect(false, std::string("pipeline failed: ") + e.what());
  }
  fs::remove_all(dir);
  return r;
}

// ---------------------------------------------------------------------------
// 8. bitwise determinism through the CLI
// ---------------------------------------------------------------------------

CriterionResult criterion_determinism() {
  CriterionResult r;
  const fs::path dir = fresh_dir("determinism");
  RunConfig cfg = preset_config("desk");
  cfg.preset = "acceptance-determinism";
  cfg.task.pool_epochs = 4;
  cfg.search.epochs = 4;
  cfg.search.steps_per_epoch = 10;
  cfg.search.batch_size = 4;
  cfg.search.freeze_epochs = 2;
  cfg.train.epochs = 2;
  cfg.train.steps_per_epoch = 10;
  cfg.train.batch_size = 4;
  cfg.eval.utterances = 32;
  validate_config(cfg);
  const fs::path cfg_path = dir / "config.json";
  write_text_file(cfg_path, config_to_json(cfg).dump(2));

  auto same_file = [&](const fs::path& a, const fs::path& b) {
    return read_text_file(a) == read_text_file(b);
  };

  r.expect(run_cli("search --config " + cfg_path.string() + " --out " + (dir / "s1").string()) == 0,
           "search run 1 failed");
  r.expect(run_cli("search --config " + cfg_path.string() + " --out " + (dir / "s2").string()) == 0,
           "search run 2 failed");
  for (const char* f : {"alpha_final.json", "alpha_final.bin", "metrics.csv", "trajectory.csv",
                        "checkpoint_final.bin"}) {
    r.expect(same_file(dir / "s1" / f, dir / "s2" / f), std::string("search mismatch in ") + f);
  }

  r.expect(run_cli("derive --alpha " + (dir / "s1" / "alpha_final.json").string() + " --out " +
                   (dir / "a1.json").string()) == 0,
           "derive run 1 failed");
  r.expect(run_cli("derive --alpha " + (dir / "s2" / "alpha_final.json").string() + " --out " +
                   (dir / "a2.json").string()) == 0,
           "derive run 2 failed");
  r.expect(same_file(dir / "a1.json", dir / "a2.json"), "descriptor mismatch");

  r.expect(run_cli("train --config " + cfg_path.string() + " --arch " + (dir / "a1.json").string() +
                   " --out " + (dir / "t1").string()) == 0,
           "train run 1 failed");
  r.expect(run_cli("train --config " + cfg_path.string() + " --arch " + (dir / "a1.json").string() +
                   " --out " + (dir / "t2").string()) == 0,
           "train run 2 failed");
  for (const char* f : {"metrics.csv", "checkpoint_final.bin"}) {
    r.expect(same_file(dir / "t1" / f, dir / "t2" / f), std::string("train mismatch in ") + f);
  }
  fs::remove_all(dir);
  return r;
}

// ---------------------------------------------------------------------------
// 9. golden searched architecture
// ---------------------------------------------------------------------------

CriterionResult criterion_golden() {
  CriterionResult r;
  const fs::path golden_path = fs::path(DCNAS_SOURCE_DIR) / "data" / "golden" / "fig4_arch.json";
  ArchDescriptor golden = descriptor_from_json(read_json_file(golden_path));
  r.expect(golden.node("cnn").op.kernel == 15, "kernel is not 15");
  r.expect(golden.node("mha").op.heads == 4, "heads is not 4");
  r.expect(golden.node("mha").inputs == std::vector<std::size_t>{0, 2},
           "missing the extra raw-input MHA edge");
  r.expect(golden.node("cnn").inputs == std::vector<std::size_t>{1, 3},
           "missing the extra raw-input CNN edge");
  r.expect(golden.node("mac").op.kind == "ff" && golden.node("mac").op.half_step,
           "macaron feed-forward not retained");

  const std::string rendered = render_architecture(golden);
  r.expect(rendered.find("conv(kernel=15)") != std::string::npos, "render lacks the conv op");
  r.expect(rendered.find("mhsa(heads=4)") != std::string::npos, "render lacks the mhsa op");

  EncoderConfig cfg;
  cfg.d_in = 8;
  cfg.vocab_size = 4;
  cfg.n_layers = 6;
  cfg.cell.d_model = 16;
  cfg.cell.d_hidden = 24;
  Rng rng(derive_seed(9, "acceptance-golden"));
  StackedEncoder encoder(golden, cfg, rng);
  r.expect(encoder.layers().size() == 6, "not six layers");
  NoGradGuard no_grad;
  for (std::size_t t_len : {1u, 9u, 24u}) {
    Tensor x = oracles::rand_tensor({t_len, 8}, rng, false);
    Tensor y = encoder.forward(x, FrameMask::all(t_len));
    r.expect(y.shape() == Shape{t_len, 5}, "bad output shape at T=" + std::to_string(t_len));
  }
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  g_cli_path = argc > 1 ? argv[1] : "./dcnas";

  struct Criterion {
    int number;
    const char* name;
    std::function<CriterionResult()> fn;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient suite (FD rel err < 1e-4, 5 seeds, < 2min)", criterion_gradients},
      {2, "CTC forward equals exhaustive enumeration (grid, < 1min)", criterion_ctc_grid},
      {3, "one-hot supernet/discrete equivalence (18 configs, 1e-10)",
       criterion_one_hot_equivalence},
      {4, "second-order gradient consistency (1e-6)", criterion_second_order},
      {5, "alpha freeze contract on the desk preset (e_w = 3)", criterion_freeze},
      {6, "planted-filter search recovers the kernel (>= 4/5 seeds)", criterion_planted_search},
      {7, "end-to-end pipeline beats baselines by >= 50%", criterion_pipeline},
      {8, "bitwise determinism of CLI artifacts", criterion_determinism},
      {9, "golden searched architecture loads, renders, stacks x6", criterion_golden},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    CriterionResult result;
    try {
      result = c.fn();
    } catch (const std::exception& e) {
      result.pass = false;
      result.detail = std::string("exception: ") + e.what();
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] criterion %d: %s (%.1fs)%s%s\n", result.pass ? "PASS" : "FAIL", c.number,
                c.name, elapsed, result.detail.empty() ? "" : " -- ", result.detail.c_str());
    std::fflush(stdout);
    if (!result.pass) ++failures;
  }
  if (failures) {
    std::printf("%d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
