// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// when any criterion fails.
//
//   acceptance [--work-dir DIR] [--reuse] [--only 1,2,3]
//
// --reuse loads trained checkpoints from DIR when present instead of training.

#include "support/gradcheck.hpp"
#include "support/reference_metrics.hpp"

#include "metapix/checkpoint.hpp"
#include "metapix/config.hpp"
#include "metapix/sweep.hpp"

#include <CLI11.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <thread>

namespace fs = std::filesystem;
using namespace metapix;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Verdict> g_verdicts;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  g_verdicts.push_back({id, name, pass, detail});
  std::printf("criterion %d %s: %s  %s\n", id, name.c_str(), pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void log(const std::string& s) {
  std::fprintf(stderr, "[acceptance] %s\n", s.c_str());
  std::fflush(stderr);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------------------
// 1. gradients

void criterion_gradients() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240601);
  double worst = 0;
  std::string worst_name;
  int cases = 0;
  for (const auto& op : testing::op_cases()) {
    for (int c = 0; c < 20; ++c, ++cases) {
      const double e = op.run(rng);
      if (e > worst) {
        worst = e;
        worst_name = op.name;
      }
    }
  }
  double gan_worst = 0;
  for (int c = 0; c < 20; ++c, ++cases) gan_worst = std::max(gan_worst, testing::gan_pair_gradient_error(rng, 12));
  const double elapsed = seconds_since(t0);
  const bool pass = worst < 1e-3 && gan_worst < 1e-3 && elapsed < 120.0;
  report(1, "gradient-suite", pass,
         fmt("%d cases, worst op error %.2e (%s), G/D pair %.2e, %.1fs", cases, worst, worst_name.c_str(), gan_worst,
             elapsed));
}

// ---------------------------------------------------------------------------
// 2. metrics against the direct reference

void criterion_metrics() {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> level(0, 255), shift(-60, 60);
  double d_mse = 0, d_psnr = 0, d_ssim = 0;
  for (int i = 0; i < 50; ++i) {
    TensorF a({3, 32, 32}), b({3, 32, 32});
    for (Index j = 0; j < a.size(); ++j) {
      const int v = level(rng);
      a[j] = float(v) / 255.0f;
      b[j] = float(std::clamp(v + shift(rng), 0, 255)) / 255.0f;
    }
    d_mse = std::max(d_mse, std::abs(mse(a, b) - testing::reference_mse(a, b)));
    d_psnr = std::max(d_psnr, std::abs(psnr(a, b) - testing::reference_psnr(a, b)));
    d_ssim = std::max(d_ssim, std::abs(ssim(a, b) - testing::reference_ssim(a, b)));
  }
  bool exact = true;
  for (int i = 0; i < 10; ++i) {
    TensorF a({3, 32, 32});
    for (Index j = 0; j < a.size(); ++j) a[j] = float(level(rng)) / 255.0f;
    exact = exact && ssim(a, a) == 1.0 && mse(a, a) == 0.0;
  }
  const bool anchor = psnr_from_mse(65025.0) == 0.0;
  const bool pass = d_mse < 1e-6 && d_psnr < 1e-6 && d_ssim < 1e-4 && exact && anchor;
  report(2, "metric-oracle", pass,
         fmt("max |diff| mse %.1e psnr %.1e dB ssim %.1e; self-identity exact: %s; psnr(65025)=0: %s", d_mse, d_psnr,
             d_ssim, exact ? "yes" : "no", anchor ? "yes" : "no"));
}

// ---------------------------------------------------------------------------
// Shared experiment state for criteria 3 to 8

struct Setup {
  int width = 16;
  int pretrain_epochs = 10;
  double lr = 0.0002;
  int meta_iterations = 300;
  std::uint64_t random_seed = 1, pretrain_seed = 11, meta_seed = 13;
  std::vector<std::uint64_t> eval_seeds{0, 1, 2, 3, 4};
};

struct World {
  Corpus corpus;
  std::vector<TaskDataset> train, heldout;
  ModelPair random, pretrained, metapix, metapix_small_eps;
  double train_seconds = 0;
};

ModelPair train_or_load(const fs::path& path, bool reuse, const std::function<ModelPair()>& train) {
  if (reuse && fs::exists(path)) {
    log("reusing " + path.string());
    return load_checkpoint(path);
  }
  ModelPair m = train();
  save_checkpoint(path, m);
  return m;
}

World build_world(const Setup& s, const fs::path& work, bool reuse) {
  World w;
  CorpusConfig cc;
  cc.seed = 7;
  w.corpus = build_corpus(25, 200, cc);
  w.train.assign(w.corpus.tasks.begin(), w.corpus.tasks.begin() + 20);
  w.heldout.assign(w.corpus.tasks.begin() + 20, w.corpus.tasks.end());
  const ModelConfig mc = ModelConfig::for_joints(8, s.width, s.width);
  const auto t0 = Clock::now();
  w.random = random_init(mc, s.random_seed);
  w.pretrained = train_or_load(work / "pretrain.ckpt", reuse, [&] {
    log("pretraining");
    return pretrain(w.random, w.train, w.corpus.skeleton, s.pretrain_epochs, s.lr, s.pretrain_seed);
  });
  log(fmt("pretrain ready (%.0fs)", seconds_since(t0)));
  Budget b;
  b.k = 5;
  b.t = 20;
  b.base_lr = s.lr;
  auto meta = [&](double eps0) {
    MetaConfig m;
    m.eps0 = eps0;
    m.meta_iterations = s.meta_iterations;
    return metatrain(w.pretrained, w.train, w.corpus.skeleton, m, b, s.meta_seed, {},
                     [&](int i, double eps, const ModelPair&) {
                       if ((i + 1) % 50 == 0) log(fmt("  eps0=%.1f meta-iteration %d eps=%.3f (%.0fs)", eps0, i + 1, eps,
                                                      seconds_since(t0)));
                     });
  };
  w.metapix = train_or_load(work / "metapix_eps1.0.ckpt", reuse, [&] { return meta(1.0); });
  w.metapix_small_eps = train_or_load(work / "metapix_eps0.1.ckpt", reuse, [&] { return meta(0.1); });
  w.train_seconds = seconds_since(t0);
  log(fmt("training done (%.0fs)", w.train_seconds));
  return w;
}

// ---------------------------------------------------------------------------
// 3. Reptile algebra

void criterion_reptile(const fs::path& work, const fs::path& cli) {
  bool ok = true;
  std::vector<std::string> notes;
  const ModelConfig mc = ModelConfig::for_joints(8, 16, 16);
  const ModelPair a = random_init(mc, 3), b = random_init(mc, 4);
  const bool e0 = reptile_update(a.gen, b.gen, 0.0).same_values(a.gen) &&
                  reptile_update(a.disc, b.disc, 0.0).same_values(a.disc);
  const bool e1 = reptile_update(a.gen, b.gen, 1.0).same_values(b.gen) &&
                  reptile_update(a.disc, b.disc, 1.0).same_values(b.disc);
  ok = ok && e0 && e1;
  notes.push_back(fmt("eps=0 exact %s, eps=1 exact %s", e0 ? "yes" : "no", e1 ? "yes" : "no"));

  CorpusConfig cc;
  cc.seed = 7;
  const Corpus corpus = build_corpus(4, 40, cc);
  MetaConfig zero;
  zero.meta_iterations = 0;
  const bool id_lib = metatrain(a, corpus.tasks, corpus.skeleton, zero, Budget{}, 1).same_values(a);

  const fs::path dir = work / "reptile";
  fs::create_directories(dir);
  save_corpus(corpus, dir / "corpus");
  save_checkpoint(dir / "init.ckpt", a);
  const std::string cmd = cli.string() + " metatrain --data " + (dir / "corpus").string() + " --init " +
                          (dir / "init.ckpt").string() + " --meta-iters 0 --out " + (dir / "meta0.ckpt").string() +
                          " > " + (dir / "log.txt").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  const bool id_cli = WIFEXITED(status) && WEXITSTATUS(status) == 0 &&
                      slurp(dir / "meta0.ckpt") == slurp(dir / "init.ckpt");
  ok = ok && id_lib && id_cli;
  notes.push_back(fmt("meta_iterations=0 identity: library %s, CLI checkpoint bytes %s", id_lib ? "yes" : "no",
                      id_cli ? "yes" : "no"));

  MetaConfig gen_only;
  gen_only.meta_iterations = 3;
  gen_only.generator_only = true;
  Budget small;
  small.t = 4;
  const ModelPair g = metatrain(a, corpus.tasks, corpus.skeleton, gen_only, small, 2);
  const bool d_same = g.disc.same_values(a.disc), g_moved = !g.gen.same_values(a.gen);
  ok = ok && d_same && g_moved;
  notes.push_back(fmt("generator-only: theta_D identical %s, theta_G moved %s", d_same ? "yes" : "no",
                      g_moved ? "yes" : "no"));
  std::string detail;
  for (const auto& n : notes) detail += (detail.empty() ? "" : "; ") + n;
  report(3, "reptile-algebra", ok, detail);
}

// ---------------------------------------------------------------------------
// 4 to 8. Held-out evaluation

std::string cell_str(const CellSummary& c) {
  return fmt("%s mse %.1f ssim %.4f", c.init.c_str(), c.median_mse, c.median_ssim);
}

void criteria_experiment(const Setup& s, const fs::path& work, bool reuse, const std::set<int>& only) {
  const auto t0 = Clock::now();
  World w = build_world(s, work, reuse);
  SweepGrid base;
  base.seeds = s.eval_seeds;
  base.n_test = 64;
  base.meta_k = 5;
  base.base_lr = s.lr;
  const int threads = sweep_threads();

  // K=5, T=20 with every init, including the eps0 = 0.1 variant.
  SweepGrid main_grid = base;
  main_grid.k = {5};
  main_grid.t = {20};
  const std::vector<LabeledInit> all{{"random", w.random},
                                     {"pretrain", w.pretrained},
                                     {"metapix", w.metapix},
                                     {"metapix_eps0.1", w.metapix_small_eps}};
  log("sweep K=5 T=20");
  const SweepResult main = run_sweep(main_grid, all, w.heldout, w.corpus.skeleton, {}, threads);
  const double main_seconds = seconds_since(t0);

  SweepGrid k_grid = base;
  k_grid.k = {1, 20};
  k_grid.t = {20};
  const std::vector<LabeledInit> two{{"pretrain", w.pretrained}, {"metapix", w.metapix}};
  log("sweep K in {1, 20}, T=20");
  const SweepResult k_sweep = run_sweep(k_grid, two, w.heldout, w.corpus.skeleton, {}, threads);

  SweepGrid t_grid = base;
  t_grid.k = {5};
  t_grid.t = {100};
  log("sweep K=5, T=100");
  const SweepResult t_sweep = run_sweep(t_grid, two, w.heldout, w.corpus.skeleton, {}, threads);

  write_json(work / "sweep_main.json", sweep_json(main));
  write_json(work / "sweep_k.json", sweep_json(k_sweep));
  write_json(work / "sweep_t.json", sweep_json(t_sweep));
  std::fputs(sweep_table(main).c_str(), stderr);
  std::fputs(sweep_table(k_sweep).c_str(), stderr);
  std::fputs(sweep_table(t_sweep).c_str(), stderr);

  const auto& rnd = main.cell(5, 20, "random");
  const auto& pre = main.cell(5, 20, "pretrain");
  const auto& met = main.cell(5, 20, "metapix");
  const auto& small = main.cell(5, 20, "metapix_eps0.1");

  if (only.empty() || only.count(4)) {
    const bool ssim_order = met.median_ssim > pre.median_ssim && pre.median_ssim > rnd.median_ssim;
    const bool mse_order = met.median_mse < pre.median_mse && pre.median_mse < rnd.median_mse;
    const unsigned cores = std::max(1u, std::thread::hardware_concurrency());
    const double budget = 45.0 * 60.0 * 4.0 / double(std::min(4u, cores));
    const bool fast = main_seconds < budget;
    report(4, "main-comparison", ssim_order && mse_order && fast && rnd.failed + pre.failed + met.failed == 0,
           fmt("K=5 T=20 medians over %zu seeds: %s | %s | %s; SSIM order %s, MSE order %s; %.0fs for train+eval "
               "(budget %.0fs at %u core%s)",
               s.eval_seeds.size(), cell_str(met).c_str(), cell_str(pre).c_str(), cell_str(rnd).c_str(),
               ssim_order ? "ok" : "violated", mse_order ? "ok" : "violated", main_seconds, budget, cores,
               cores == 1 ? "" : "s"));
  }

  const double gap1 = k_sweep.cell(1, 20, "pretrain").median_mse - k_sweep.cell(1, 20, "metapix").median_mse;
  const double gap20 = k_sweep.cell(20, 20, "pretrain").median_mse - k_sweep.cell(20, 20, "metapix").median_mse;
  if (only.empty() || only.count(5)) {
    report(5, "k-gap", gap1 > gap20, fmt("median MSE gap pretrain-metapix: K=1 %.1f, K=20 %.1f", gap1, gap20));
  }

  if (only.empty() || only.count(6)) {
    const double t100 = t_sweep.cell(5, 100, "pretrain").median_mse - t_sweep.cell(5, 100, "metapix").median_mse;
    const bool pass = gap1 > 0 && gap20 > 0 && t100 > 0;
    report(6, "cross-budget", pass,
           fmt("metapix (trained K=5 T=20) MSE advantage over pretrain: K=1 %.1f, K=20 %.1f, T=100 %.1f", gap1, gap20,
               t100));
  }

  if (only.empty() || only.count(7)) {
    report(7, "coherence-at-init", met.median_coherence_init < pre.median_coherence_init,
           fmt("median coherence before fine-tuning: metapix %.6f, pretrain %.6f, random %.6f",
               met.median_coherence_init, pre.median_coherence_init, rnd.median_coherence_init));
  }

  if (only.empty() || only.count(8)) {
    const json doc = sweep_json(main);
    int present = 0;
    for (const auto& c : doc["cells"])
      if ((c["init"] == "metapix" || c["init"] == "metapix_eps0.1") && c["failed"] == 0 &&
          c["per_seed"].size() == s.eval_seeds.size())
        ++present;
    const bool finite = std::isfinite(small.median_mse) && std::isfinite(met.median_mse);
    report(8, "meta-lr-sweep", present == 2 && finite,
           fmt("eps0=1.0: mse %.1f ssim %.4f; eps0=0.1: mse %.1f ssim %.4f", met.median_mse, met.median_ssim,
               small.median_mse, small.median_ssim));
  }
  log(fmt("experiment total %.0fs", seconds_since(t0)));
}

// ---------------------------------------------------------------------------
// 9. Re-running a stage from its report

struct Stage {
  std::string name;
  std::string args;                  // without --out
  std::string out;                   // file or directory
  std::string report;                // report path relative to work
  std::vector<std::string> products;  // byte-compared files
};

int run(const std::string& cmd, const fs::path& log_path) {
  const int status = std::system((cmd + " >> " + log_path.string() + " 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void criterion_reproducibility(const fs::path& work, const fs::path& cli) {
  const fs::path dir = work / "repro";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path log_path = dir / "log.txt";
  auto P = [&](const std::string& n) { return (dir / n).string(); };
  const std::string data = " --data " + P("corpus");
  const std::vector<Stage> stages{
      {"gen-data", "gen-data --seed 5 --tasks 3 --frames 30 --size 16", P("corpus"), P("corpus.report.json"),
       {P("corpus/corpus.json")}},
      {"pretrain", "pretrain" + data + " --width 4 --epochs 1 --seed 3", P("pre.ckpt"), P("pre.ckpt.report.json"),
       {P("pre.ckpt")}},
      {"metatrain",
       "metatrain" + data + " --init " + P("pre.ckpt") + " --meta-iters 3 --k 2 --t 3 --seed 4", P("meta.ckpt"),
       P("meta.ckpt.report.json"), {P("meta.ckpt")}},
      {"personalize", "personalize" + data + " --init " + P("meta.ckpt") + " --task 1 --k 2 --t 3 --n-test 3",
       P("pers.ckpt"), P("pers.ckpt.report.json"), {P("pers.ckpt")}},
      {"evaluate", "evaluate" + data + " --init " + P("meta.ckpt") + " --k 2 --t 2 --seeds 2 --n-test 2", P("eval"),
       P("eval/run_report.json"), {P("eval/evaluate.csv"), P("eval/evaluate.txt"), P("eval/evaluate.json")}},
      {"sweep",
       "sweep" + data + " --k 1,2 --t 2 --seeds 2 --n-test 2 --inits pretrain,metapix --pretrain " + P("pre.ckpt") +
           " --metapix " + P("meta.ckpt"),
       P("sweep"), P("sweep/run_report.json"), {P("sweep/sweep.csv"), P("sweep/sweep.json")}},
      {"render", "render" + data + " --mode finetune-trajectory --rows 2 --k 2 --init " + P("meta.ckpt"),
       P("traj.png"), P("traj.png.report.json"), {P("traj.png")}},
  };

  bool ok = true;
  std::vector<std::string> failures;
  for (const Stage& st : stages) {
    if (run(cli.string() + " " + st.args + " --out " + st.out, log_path) != 0) {
      failures.push_back(st.name + " (first run failed)");
      ok = false;
      continue;
    }
    std::vector<std::string> first;
    for (const auto& f : st.products) first.push_back(slurp(f));
    const json first_report = without_timing(read_json_file(st.report));
    const fs::path saved = dir / (st.name + ".first_report.json");
    fs::copy_file(st.report, saved, fs::copy_options::overwrite_existing);
    if (run(cli.string() + " " + st.name + " --config " + saved.string(), log_path) != 0) {
      failures.push_back(st.name + " (rerun failed)");
      ok = false;
      continue;
    }
    bool same = without_timing(read_json_file(st.report)) == first_report;
    for (std::size_t i = 0; i < st.products.size(); ++i) {
      const std::string again = slurp(st.products[i]);
      if (st.products[i].ends_with(".json")) {
        same = same && without_timing(json::parse(again)) == without_timing(json::parse(first[i]));
      } else {
        same = same && again == first[i];
      }
    }
    if (!same) {
      failures.push_back(st.name);
      ok = false;
    }
  }
  std::string detail = fmt("%zu stages re-run from their reports", stages.size());
  if (!failures.empty()) {
    detail += "; mismatched:";
    for (const auto& f : failures) detail += " " + f;
  } else {
    detail += "; checkpoints, CSV, PNG and reports (timing fields aside) identical";
  }
  report(9, "reproducibility", ok, detail);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"metapix acceptance criteria"};
  std::string work_dir = (fs::temp_directory_path() / "metapix_acceptance").string();
  bool reuse = false;
  std::vector<int> only_list;
  Setup setup;
  app.add_option("--work-dir", work_dir, "scratch directory");
  app.add_flag("--reuse", reuse, "load trained checkpoints from the work directory when present");
  app.add_option("--only", only_list, "criteria to run")->delimiter(',');
  app.add_option("--width", setup.width, "network base width");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> only(only_list.begin(), only_list.end());
  auto want = [&](int c) { return only.empty() || only.count(c) > 0; };

  const fs::path work = work_dir;
  fs::create_directories(work);
  const fs::path cli = METAPIX_CLI_PATH;
  const auto t0 = Clock::now();

  auto guarded = [&](int id, const std::string& name, const std::function<void()>& body) {
    try {
      body();
    } catch (const std::exception& e) {
      report(id, name, false, std::string("error: ") + e.what());
    }
  };
  if (want(1)) guarded(1, "gradient-suite", criterion_gradients);
  if (want(2)) guarded(2, "metric-oracle", criterion_metrics);
  if (want(3)) guarded(3, "reptile-algebra", [&] { criterion_reptile(work, cli); });
  if (want(9)) guarded(9, "reproducibility", [&] { criterion_reproducibility(work, cli); });
  if (want(4) || want(5) || want(6) || want(7) || want(8)) {
    guarded(4, "experiment", [&] { criteria_experiment(setup, work, reuse, only); });
  }

  std::sort(g_verdicts.begin(), g_verdicts.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
  json summary = json::array();
  int failed = 0;
  std::printf("\nsummary (%.0fs):\n", seconds_since(t0));
  for (const auto& v : g_verdicts) {
    std::printf("criterion %d %s: %s\n", v.id, v.name.c_str(), v.pass ? "PASS" : "FAIL");
    summary.push_back({{"criterion", v.id}, {"name", v.name}, {"pass", v.pass}, {"detail", v.detail}});
    failed += v.pass ? 0 : 1;
  }
  write_json(work / "acceptance.json", summary);
  return failed == 0 ? 0 : 1;
}
