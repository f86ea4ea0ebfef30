// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails. Trained checkpoints are cached in --work-dir.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "atnbreak/harness.hpp"
#include "atnbreak/io.hpp"
#include "atnbreak/parallel.hpp"
#include "commands.hpp"
#include "grad_cases.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace atnbreak;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const Verdict& v) {
  if (!v.pass) ++failures;
  std::cout << "CRITERION " << id << ' ' << (v.pass ? "PASS" : "FAIL") << "  " << title << "  ["
            << v.detail << "]" << std::endl;
}

void check_line(const std::string& title, bool pass, const std::string& detail) {
  std::cout << "CHECK " << (pass ? "PASS" : "FAIL") << "  " << title << "  [" << detail << "]"
            << std::endl;
}

template <typename F>
Verdict guarded(F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "atnbreak");
  return cli::run(args);
}

// ---- 1: gradients ----

Verdict gradient_suite() {
  const auto start = Clock::now();
  double worst_op = 0.0;
  std::string worst_name;
  for (const auto& op : testing::gradient_ops()) {
    const double e = testing::worst_op_error(op, 2024);
    if (e > worst_op) {
      worst_op = e;
      worst_name = op.name;
    }
  }
  const double model = testing::model_gradient_error(7);
  const double elapsed = seconds_since(start);
  return {worst_op < testing::kOpGradTolerance && model < testing::kModelGradTolerance &&
              elapsed < 60.0,
          std::to_string(testing::gradient_ops().size()) + " ops x " +
              std::to_string(testing::kGradCasesPerOp) + " cases, worst op " + sci(worst_op) +
              " (" + worst_name + "), model " + sci(model) + ", " + fmt(elapsed, 1) + " s"};
}

// ---- 2: attention-loss oracle ----

DiffArray random_attention(Rng& rng, std::size_t heads, std::size_t tokens) {
  std::vector<double> v(heads * tokens * tokens);
  for (std::size_t r = 0; r < heads * tokens; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < tokens; ++c) s += v[r * tokens + c] = std::exp(rng.uniform(-3.0, 3.0));
    for (std::size_t c = 0; c < tokens; ++c) v[r * tokens + c] /= s;
  }
  return DiffArray({heads, tokens, tokens}, std::move(v));
}

double naive_attention_loss(const DiffArray& gt, const DiffArray& adv) {
  const std::size_t h = gt.shape()[0], n = gt.shape()[1];
  double total = 0.0;
  for (std::size_t k = 0; k < h; ++k) {
    double acc = 0.0;
    for (std::size_t i = 1; i < n; ++i)
      for (std::size_t j = 1; j < n; ++j) {
        const std::size_t at = (k * n + i) * n + j;
        acc += gt.at(at) * adv.at(at);
      }
    total += acc / static_cast<double>((n - 1) * (n - 1));
  }
  return total;
}

Verdict attention_oracle() {
  Rng rng(41);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const DiffArray a = random_attention(rng, 4, 17), b = random_attention(rng, 4, 17);
    worst = std::max(worst, std::abs(attention_loss(a, b).item() - naive_attention_loss(a, b)));
  }
  const DiffArray u = DiffArray::filled({2, 3, 3}, 1.0 / 3.0);
  const double uniform = attention_loss(u, u).item();
  return {worst <= 1e-12 && std::abs(uniform - 2.0 / 9.0) <= 1e-15,
          "50 stacks [4,17,17], max |diff| " + sci(worst) + "; uniform N_h=2,N_t=3 gives " +
              fmt(uniform, 17) + " (2/9 = " + fmt(2.0 / 9.0, 17) + ")"};
}

// ---- 3 and 4: invariants ----

double relative_balance_error(const TraceEntry& t, double alpha) {
  const double lhs = std::abs(alpha * t.l_atn), rhs = std::abs(t.beta * t.l_emb);
  return std::abs(lhs - rhs) / std::max({lhs, rhs, 1e-300});
}

struct Invariants {
  Verdict budget;
  Verdict balance;
};

Invariants attack_invariants(const ViTModel& model, std::size_t jobs) {
  // Random images with a share of saturated pixels so the [0, 1] bound binds.
  std::vector<DiffArray> images;
  Rng rng(303);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> v(model.config.image_size * model.config.image_size * model.config.channels);
    for (double& x : v) {
      const double u = rng.uniform(0.0, 1.0);
      x = u < 0.1 ? 0.0 : u > 0.9 ? 1.0 : rng.uniform(0.0, 1.0);
    }
    images.emplace_back(model.config.image_shape(), std::move(v));
  }
  const double eps = 8.0 / 255.0;
  struct Job {
    LossMode mode;
    std::size_t image;
  };
  std::vector<Job> work;
  for (LossMode m : kLossModes)
    for (std::size_t i = 0; i < images.size(); ++i) work.push_back({m, i});

  std::vector<double> worst_excess(work.size(), 0.0), worst_range(work.size(), 0.0),
      worst_balance(work.size(), 0.0);
  std::vector<std::size_t> iterates(work.size(), 0), balanced(work.size(), 0);
  std::vector<std::string> errors(work.size());
  parallel_for(work.size(), jobs, [&](std::size_t w) {
    AttackConfig cfg;
    cfg.loss_mode = work[w].mode;
    cfg.epsilon = eps;
    cfg.seed = derive_seed({17, w});
    const DiffArray& x = images[work[w].image];
    try {
      const AttackResult r = attack(x, model, cfg, [&](std::size_t, std::span<const double> z) {
        ++iterates[w];
        for (std::size_t k = 0; k < z.size(); ++k) {
          worst_excess[w] = std::max(worst_excess[w], std::abs(z[k]) - eps);
          const double p = x.at(k) + z[k];
          worst_range[w] = std::max({worst_range[w], -p, p - 1.0});
        }
      });
      if (cfg.loss_mode == LossMode::comb)
        for (const TraceEntry& t : r.trace)
          if (std::abs(t.l_emb) > kBalanceFloor) {
            ++balanced[w];
            worst_balance[w] = std::max(worst_balance[w], relative_balance_error(t, cfg.alpha));
          }
    } catch (const std::exception& e) {
      errors[w] = e.what();
    }
  });

  for (const auto& e : errors)
    if (!e.empty()) return {{false, "attack failed: " + e}, {false, "attack failed: " + e}};
  const double excess = *std::max_element(worst_excess.begin(), worst_excess.end());
  const double range = *std::max_element(worst_range.begin(), worst_range.end());
  std::size_t total = 0, checked = 0;
  for (std::size_t n : iterates) total += n;
  for (std::size_t n : balanced) checked += n;
  const double balance = *std::max_element(worst_balance.begin(), worst_balance.end());

  Invariants out;
  out.budget = {total == work.size() * 250 && excess <= 1e-12 && range <= 0.0,
                std::to_string(images.size()) + " images x 3 modes, " + std::to_string(total) +
                    " iterates; max(|z|-eps) " + sci(excess) + ", max [0,1] violation " +
                    sci(std::max(range, 0.0))};
  out.balance = {checked > 0 && balance <= 1e-9,
                 std::to_string(checked) + " comb trace entries with |L_emb| > 1e-12, max rel err " +
                     sci(balance)};
  return out;
}

Verdict trace_balance(std::span<const AttackResult> results, double alpha, Verdict prior) {
  std::size_t checked = 0;
  double worst = 0.0;
  for (const auto& r : results)
    for (const TraceEntry& t : r.trace)
      if (std::abs(t.l_emb) > kBalanceFloor) {
        ++checked;
        worst = std::max(worst, relative_balance_error(t, alpha));
      }
  return {prior.pass && checked > 0 && worst <= 1e-9,
          prior.detail + "; eval-set comb traces: " + std::to_string(checked) +
              " entries, max rel err " + sci(worst)};
}

// ---- 8: determinism through the CLI ----

std::vector<std::pair<std::string, std::vector<std::uint8_t>>> snapshot(const fs::path& dir) {
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.emplace_back(fs::relative(e.path(), dir).string(), read_file(e.path()));
  std::sort(out.begin(), out.end());
  return out;
}

Verdict cli_determinism(const fs::path& work, std::size_t jobs) {
  const fs::path root = work / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const json cfg = {{"seed", 11},
                    {"dataset", {{"train_size", 64}, {"val_size", 16}, {"test_size", 16}}},
                    {"train", {{"epochs", 1}, {"batch_size", 16}, {"warmup_steps", 2}}},
                    {"attack", {{"iterations", 25}}}};
  write_file_atomic(root / "config.json", cfg.dump(2));
  const std::string config = (root / "config.json").string();
  const std::string j = std::to_string(jobs);

  std::size_t files = 0;
  for (int run = 0; run < 2; ++run) {
    const fs::path out = root / ("run" + std::to_string(run));
    const std::string ckpt = (out / "model.ckpt").string();
    const std::vector<std::vector<std::string>> commands{
        {"train", "--config", config, "--out", ckpt, "--jobs", j},
        {"attack", "--model", ckpt, "--dataset", "test", "--count", "3", "--loss", "comb", "--out",
         (out / "attack").string(), "--jobs", j},
        {"eval", "--model", ckpt, "--task", "dense", "--count", "6", "--out",
         (out / "dense.json").string(), "--jobs", j},
        {"eval", "--model", ckpt, "--task", "retrieval", "--gallery", "10", "--out",
         (out / "retrieval.json").string(), "--jobs", j}};
    for (const auto& c : commands) {
      std::vector<std::string> args = c;
      if (c.front() == "eval") args.insert(args.end(), {"--config", config});
      if (const int code = run_cli(args); code != cli::kExitOk)
        return {false, c.front() + " exited with " + std::to_string(code)};
    }
  }
  const auto a = snapshot(root / "run0"), b = snapshot(root / "run1");
  files = a.size();
  if (a.size() != b.size()) return {false, "runs wrote different file sets"};
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return {false, "differs: " + a[i].first};
  return {files > 0, "train, attack and eval run twice; " + std::to_string(files) +
                         " artifacts byte-identical"};
}

// ---- 9: persistence ----

Verdict persistence(const std::string& io_tests) {
  if (io_tests.empty() || !fs::exists(io_tests)) return {false, "io test binary not found"};
  const std::string cmd = "\"" + io_tests + "\" --gtest_brief=1 > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return {status == 0, fs::path(io_tests).filename().string() + " exit status " + std::to_string(status)};
}

// ---- models ----

struct TrainedModel {
  ViTModel model;
  double val_accuracy = 0.0;
  double train_seconds = 0.0;
  bool cached = false;
};

TrainedModel trained_model(const fs::path& work, std::uint64_t seed, std::size_t jobs) {
  cli::RunConfig rc;
  rc.seed = seed;
  const std::string key = cli::to_json(rc).dump();
  std::ostringstream name;
  name << "model_s" << seed << '_' << std::hex
       << crc32(std::span(reinterpret_cast<const std::uint8_t*>(key.data()), key.size())) << ".ckpt";
  const fs::path ckpt = work / name.str();

  TrainedModel out;
  if (fs::exists(ckpt)) {
    out.cached = true;
  } else {
    std::cout << "training seed " << seed << " -> " << ckpt.string() << std::endl;
    const auto start = Clock::now();
    const int code = run_cli({"train", "--seed", std::to_string(seed), "--out", ckpt.string(),
                              "--jobs", std::to_string(jobs)});
    if (code != cli::kExitOk) throw std::runtime_error("training seed " + std::to_string(seed) + " failed");
    out.train_seconds = seconds_since(start);
  }
  Checkpoint c = read_checkpoint(ckpt, rc.model);
  out.model = std::move(c.model);
  out.val_accuracy = evaluate_clean(out.model, SyntheticDataset(rc.dataset), Split::val, jobs).classification;
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::string work_dir = "acceptance_work";
  std::string io_tests;
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--work-dir", work_dir, "scratch and checkpoint cache directory");
  app.add_option("--io-tests", io_tests, "persistence test binary");
  app.add_option("--jobs", jobs, "worker threads for everything but the timed attack")
      ->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  const fs::path work = work_dir;
  fs::create_directories(work);
  const auto start = Clock::now();

  report(1, "gradient suite", guarded(gradient_suite));
  report(2, "attention loss oracle", guarded(attention_oracle));

  TrainedModel a, b;
  try {
    a = trained_model(work, 1, jobs);
    b = trained_model(work, 2, jobs);
  } catch (const std::exception& e) {
    for (int id = 3; id <= 10; ++id) report(id, "model training", {false, e.what()});
    return 1;
  }
  std::cout << "models: seed 1 val " << fmt(a.val_accuracy) << (a.cached ? " (cached)" : "")
            << ", seed 2 val " << fmt(b.val_accuracy) << (b.cached ? " (cached)" : "") << std::endl;

  const cli::RunConfig rc;
  const SyntheticDataset data(rc.dataset);
  const Invariants inv = [&] {
    try {
      return attack_invariants(a.model, jobs);
    } catch (const std::exception& e) {
      return Invariants{{false, e.what()}, {false, e.what()}};
    }
  }();
  report(3, "budget invariant", inv.budget);

  // One set of perturbations per mode on 100 eligible test images; the comb
  // attack runs single-threaded and is timed.
  AttackConfig base = rc.attack;
  EvalSet set;
  std::array<std::vector<AttackResult>, 3> results;
  std::array<std::vector<Perturbation>, 3> crafted;
  double comb_seconds = 0.0;
  std::string setup_error;
  try {
    set = select_correct(a.model, data, Split::test, 100);
    for (std::size_t m = 0; m < kLossModes.size(); ++m) {
      AttackConfig cfg = base;
      cfg.loss_mode = kLossModes[m];
      const bool timed = cfg.loss_mode == LossMode::comb;
      const auto t0 = Clock::now();
      results[m] = run_attacks(a.model, set.images, cfg, timed ? 1 : jobs);
      if (timed) comb_seconds = seconds_since(t0);
      for (const auto& r : results[m]) crafted[m].push_back(r.z_star);
    }
  } catch (const std::exception& e) {
    setup_error = e.what();
  }
  if (!setup_error.empty()) {
    report(4, "balance invariant", inv.balance);
    for (int id = 5; id <= 7; ++id) report(id, "attack evaluation", {false, setup_error});
  } else {
    report(4, "balance invariant", trace_balance(results[2], base.alpha, inv.balance));
    const auto control = control_perturbations(set.images, base.epsilon, base.seed);
    AttackConfig comb_cfg = base;
    comb_cfg.loss_mode = LossMode::comb;

    report(5, "classification attack", guarded([&]() -> Verdict {
             const auto r = evaluate_classification(a.model, set, crafted[2], control,
                                                    fingerprint(a.model, comb_cfg), jobs);
             const bool ok = a.val_accuracy >= 0.95 && set.size() == 100 && r.attacked.value >= 0.95 &&
                             r.control.value < 0.30 && comb_seconds < 1800.0;
             return {ok, "val acc " + fmt(a.val_accuracy) + ", comb ASR " + fmt(r.attacked.value) +
                             " on " + std::to_string(r.attacked.n) + ", sign-noise control " +
                             fmt(r.control.value) + ", comb attack " + fmt(comb_seconds, 1) +
                             " s on 1 thread"};
           }));

    report(6, "retrieval attack", guarded([&]() -> Verdict {
             const std::size_t g = 64;
             const std::span<const DiffArray> gallery(set.images.data(), g);
             const std::array<std::size_t, 1> k1{1};
             auto success = [&](std::size_t m) {
               return evaluate_retrieval(a.model, gallery,
                                         std::span<const Perturbation>(crafted[m].data(), g),
                                         std::span<const Perturbation>(control.data(), g), k1, "", jobs);
             };
             const auto emb = success(1), atn = success(0);
             const double e = emb.attacked[0].value, t = atn.attacked[0].value;
             return {e >= 0.90 && e >= t, "gallery " + std::to_string(g) + ", success@1 emb " + fmt(e) +
                                              ", atn " + fmt(t) + ", control " +
                                              fmt(emb.control[0].value)};
           }));

    report(7, "dense attack and mode grid", guarded([&]() -> Verdict {
             const auto d = evaluate_dense(a.model, set, crafted[0], control, "", jobs);
             const double drop = d.clean.accuracy - d.attacked.accuracy;
             const ModeComparison cmp =
                 mode_comparison_report(a.model, set, 64, crafted, control, "", jobs);
             bool finite = true;
             for (const auto& row : cmp.degradation)
               for (double v : row) finite = finite && std::isfinite(v);
             std::cout << format_comparison(cmp);
             return {d.clean.accuracy >= 0.90 && drop >= 0.30 && finite,
                     "clean token acc " + fmt(d.clean.accuracy) + ", atn " + fmt(d.attacked.accuracy) +
                         " (drop " + fmt(drop) + "), control " + fmt(d.control.accuracy) +
                         ", grid 3x3 finite " + (finite ? "yes" : "no")};
           }));

    // Per-image comparisons against the unoptimized control.
    {
      const auto noise = control_perturbations(set.images, base.epsilon, base.seed);
      std::size_t emb_wins = 0, atn_wins = 0;
      for (std::size_t i = 0; i < set.size(); ++i) {
        const ForwardOutput clean = forward(set.images[i], a.model, true);
        const ForwardOutput noisy = forward(apply_perturbation(set.images[i], noise[i]), a.model, true);
        const std::size_t layer = base.resolved_layer(a.model.config);
        const double noise_emb = embedding_loss(clean.embedding, noisy.embedding).item();
        const double noise_atn = attention_loss(clean.attention[layer], noisy.attention[layer]).item();
        if (results[1][i].final_embedding_distance > noise_emb) ++emb_wins;
        if (results[0][i].final_attention_loss < noise_atn) ++atn_wins;
      }
      check_line("emb attack moves embeddings further than sign noise", emb_wins >= 95,
                 std::to_string(emb_wins) + "/" + std::to_string(set.size()));
      check_line("atn attack lowers attention loss below sign noise", atn_wins >= 95,
                 std::to_string(atn_wins) + "/" + std::to_string(set.size()));
      for (std::size_t m : {std::size_t{0}, std::size_t{2}}) {
        std::size_t decreased = 0;
        // trace[k] is evaluated at the k-th iterate, so trace[1] is iterate 1.
        for (const auto& r : results[m])
          if (r.trace.size() > 1 && r.final_attention_loss <= r.trace[1].l_atn) ++decreased;
        check_line(std::string(to_string(kLossModes[m])) + " attack ends with attention loss <= iterate 1",
                   decreased >= 95, std::to_string(decreased) + "/" + std::to_string(set.size()));
      }
    }
  }

  report(8, "determinism", guarded([&] { return cli_determinism(work, jobs); }));
  report(9, "persistence", guarded([&] { return persistence(io_tests); }));

  report(10, "transfer matrix", guarded([&]() -> Verdict {
           if (!setup_error.empty()) return {false, setup_error};
           AttackConfig cfg = base;
           cfg.loss_mode = LossMode::comb;
           const std::vector<ViTModel> models{a.model, b.model};
           const std::vector<std::vector<Perturbation>> source{
               crafted[2], craft_perturbations(b.model, set.images, cfg, jobs)};
           const auto t = transfer_matrix(models, models, set, source, jobs);
           bool ok = b.val_accuracy >= 0.95;
           std::string detail = "seed 2 val " + fmt(b.val_accuracy) + "; ASR";
           for (std::size_t s = 0; s < 2; ++s) {
             ok = ok && t[s][s] >= 0.95;
             for (std::size_t u = 0; u < 2; ++u) {
               if (u != s) ok = ok && t[s][u] < t[s][s];
               detail += " " + std::to_string(s) + "->" + std::to_string(u) + " " + fmt(t[s][u]);
             }
           }
           return {ok, detail};
         }));

  std::cout << "total " << fmt(seconds_since(start), 1) << " s, " << failures << " failing" << std::endl;
  return failures == 0 ? 0 : 1;
}
