#include "support/reference_metrics.hpp"

#include "metapix/metrics.hpp"
#include "metapix/sweep.hpp"

#include <doctest.h>

#include <cstdlib>
#include <random>
#include <sstream>

using namespace metapix;
using namespace metapix::testing;

namespace {

TensorF random_image(std::mt19937_64& rng, Index h = 32, Index w = 32) {
  std::uniform_int_distribution<int> level(0, 255);
  TensorF t({3, h, w});
  for (Index i = 0; i < t.size(); ++i) t[i] = float(level(rng)) / 255.0f;
  return t;
}

TensorF constant_image(float v, Index h = 32, Index w = 32) {
  TensorF t({3, h, w});
  t.data().setConstant(v);
  return t;
}

struct SweepWorld {
  Corpus corpus;
  std::vector<LabeledInit> inits;

  SweepWorld() {
    CorpusConfig cfg;
    cfg.seed = 5;
    cfg.height = 16;
    cfg.width = 16;
    corpus = build_corpus(2, 20, cfg);
    const ModelConfig mc = ModelConfig::for_joints(8, 4, 4, 3);
    inits = {{"random", random_init(mc, 1)}, {"other", random_init(mc, 2)}};
  }

  SweepGrid grid() const {
    SweepGrid g;
    g.k = {1, 2};
    g.t = {1, 2};
    g.seeds = {0, 1, 2};
    g.n_test = 2;
    g.batch_size = 2;
    return g;
  }
};

}  // namespace

TEST_CASE("metric anchor values") {
  const TensorF zeros = constant_image(0.0f), ones = constant_image(1.0f);
  CHECK(mse(zeros, ones) == 65025.0);
  CHECK(psnr_from_mse(65025.0) == 0.0);
  CHECK(psnr_from_mse(650.25) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr(zeros, zeros) == kPsnrCap);
  const double c1 = (0.01 * 255) * (0.01 * 255);
  CHECK(ssim(zeros, ones) == doctest::Approx(c1 / (255.0 * 255.0 + c1)).epsilon(1e-9));
  CHECK_THROWS(psnr_from_mse(-1.0));
  CHECK_THROWS(mse(zeros, constant_image(0.0f, 16, 16)));
  CHECK_THROWS(ssim(constant_image(0.0f, 8, 8), constant_image(0.0f, 8, 8)));
}

TEST_CASE("identical images give mse 0 and ssim 1 exactly") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10; ++i) {
    const TensorF a = random_image(rng);
    CHECK(mse(a, a) == 0.0);
    CHECK(ssim(a, a) == 1.0);
  }
}

TEST_CASE("psnr follows its closed form and ssim is symmetric") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const TensorF a = random_image(rng), b = random_image(rng);
    const double m = mse(a, b);
    CHECK(std::abs(psnr(a, b) - 10.0 * std::log10(255.0 * 255.0 / m)) < 1e-9);
    CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-12);
  }
}

TEST_CASE("metrics match the direct double-precision reference") {
  std::mt19937_64 rng(3);
  double worst_mse = 0, worst_psnr = 0, worst_ssim = 0;
  for (int i = 0; i < 50; ++i) {
    const TensorF a = random_image(rng);
    TensorF b = a;
    std::uniform_int_distribution<int> shift(-40, 40);
    for (Index j = 0; j < b.size(); ++j) b[j] = float(std::clamp(int(std::lround(b[j] * 255)) + shift(rng), 0, 255)) / 255.0f;
    worst_mse = std::max(worst_mse, std::abs(mse(a, b) - reference_mse(a, b)));
    worst_psnr = std::max(worst_psnr, std::abs(psnr(a, b) - reference_psnr(a, b)));
    worst_ssim = std::max(worst_ssim, std::abs(ssim(a, b) - reference_ssim(a, b)));
  }
  CHECK(worst_mse < 1e-6);
  CHECK(worst_psnr < 1e-6);
  CHECK(worst_ssim < 1e-4);
}

TEST_CASE("coherence is zero for static content") {
  CorpusConfig cfg;
  cfg.seed = 9;
  const Corpus corpus = build_corpus(1, 12, cfg);
  const TaskDataset& task = corpus.tasks[0];
  std::vector<int> frames;
  for (int f = 0; f < task.size(); ++f) frames.push_back(f);
  const auto masks = figure_masks(task, corpus.skeleton, 32, 32, frames);
  CHECK(coherence_of_frames(task.frames, masks) == 0.0);

  const ModelConfig mc = ModelConfig::for_joints(8, 4, 4, 3);
  ParamSetF gen = init_generator<float>(mc.generator, 1);
  for (auto& [_, t] : gen) t.data().setZero();
  std::vector<TensorF> heatmaps;
  for (int f : frames) heatmaps.push_back(render_heatmap(task.poses[std::size_t(f)], corpus.skeleton, 32, 32, 1.5));
  CHECK(coherence_score(gen, mc.generator, heatmaps, masks) == 0.0);
  CHECK(coherence_score(init_generator<float>(mc.generator, 1), mc.generator, heatmaps, masks) > 0.0);
  CHECK_THROWS(coherence_of_frames({}, {}));
}

TEST_CASE("median of odd and even sets") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.5);
  CHECK_THROWS(median({}));
}

TEST_CASE("sweep covers the grid, writes one CSV row per run and is deterministic") {
  const SweepWorld w;
  const SweepGrid g = w.grid();
  const SweepResult a = run_sweep(g, w.inits, w.corpus.tasks, w.corpus.skeleton, {}, 1);
  const SweepResult b = run_sweep(g, w.inits, w.corpus.tasks, w.corpus.skeleton, {}, 3);
  CHECK(a.rows.size() == 2 * 2 * 2 * 3);
  CHECK(a.cells.size() == 2 * 2 * 2);
  for (const auto& row : a.rows) CHECK(row.ok);
  CHECK(sweep_csv(a) == sweep_csv(b));

  std::istringstream csv(sweep_csv(a));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "K,T,init,seed,mse,psnr,ssim,coherence");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 24);

  const json j = sweep_json(a);
  CHECK(j.contains("grid"));
  CHECK(j.contains("seeds"));
  CHECK(j.contains("runtime_seconds"));
  CHECK(j["cells"].size() == 8);
  CHECK(j["cells"][0]["per_seed"].size() == 3);

  const CellSummary& c = a.cell(2, 1, "other");
  std::vector<double> values;
  for (const auto& row : a.rows)
    if (row.k == 2 && row.t == 1 && row.init == "other") values.push_back(row.metrics.mse);
  CHECK(c.median_mse == median(values));
  CHECK_THROWS(a.cell(3, 1, "other"));
  CHECK(sweep_table(a).find("other") != std::string::npos);
}

TEST_CASE("a single-cell sweep equals evaluate on the same seeds") {
  const SweepWorld w;
  SweepGrid g = w.grid();
  g.k = {2};
  g.t = {2};
  const SweepResult r = run_sweep(g, {w.inits[0]}, w.corpus.tasks, w.corpus.skeleton, {}, 1);
  for (const auto& row : r.rows) {
    const MetricsReport direct =
        evaluate_init(w.inits[0].model, w.corpus.tasks, w.corpus.skeleton, Budget{2, 2, 2, 0.0002}, 2, row.seed);
    CHECK(row.metrics.mse == direct.mse);
    CHECK(row.metrics.ssim == direct.ssim);
    CHECK(row.metrics.coherence == direct.coherence);
  }
}

TEST_CASE("failed rows are recorded instead of aborting the sweep") {
  const SweepWorld w;
  SweepGrid g = w.grid();
  g.k = {1, 1000};
  const SweepResult r = run_sweep(g, {w.inits[0]}, w.corpus.tasks, w.corpus.skeleton, {}, 2);
  CHECK(r.cell(1, 1, "random").failed == 0);
  CHECK(r.cell(1000, 1, "random").failed == 3);
  CHECK(sweep_csv(r).find("1000,1,random,0,failed") != std::string::npos);
}

TEST_CASE("sweep rejects empty axes and duplicate labels") {
  const SweepWorld w;
  SweepGrid g = w.grid();
  g.seeds.clear();
  CHECK_THROWS(run_sweep(g, w.inits, w.corpus.tasks, w.corpus.skeleton));
  CHECK_THROWS(run_sweep(w.grid(), {w.inits[0], w.inits[0]}, w.corpus.tasks, w.corpus.skeleton));
  CHECK_THROWS(run_sweep(w.grid(), {}, w.corpus.tasks, w.corpus.skeleton));
}

TEST_CASE("METAPIX_THREADS caps sweep parallelism") {
  ::setenv("METAPIX_THREADS", "3", 1);
  CHECK(sweep_threads() == 3);
  ::setenv("METAPIX_THREADS", "0", 1);
  CHECK_THROWS(sweep_threads());
  ::setenv("METAPIX_THREADS", "two", 1);
  CHECK_THROWS(sweep_threads());
  ::unsetenv("METAPIX_THREADS");
  CHECK(sweep_threads() >= 1);
}
