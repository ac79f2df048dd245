#pragma once

#include "metapix/config.hpp"
#include "metapix/training.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace metapix {

/// A named starting point for personalization (random, pretrain, metapix, or
/// an ablation variant such as a different meta step size).
struct LabeledInit {
  std::string label;
  ModelPair model;
};

/// Personalizes `init` on every task and averages the per-task reports.
/// Task i uses seed derive_seed(seed, task id).
MetricsReport evaluate_init(const ModelPair& init, const std::vector<TaskDataset>& tasks, const Skeleton& skeleton,
                            const Budget& budget, int n_test, std::uint64_t seed, const TrainConfig& cfg = {});

struct SweepGrid {
  std::vector<int> k{1, 3, 5, 10, 20};
  std::vector<int> t{20, 40, 100, 200};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int n_test = 64;
  int meta_k = 5;  // K used when meta-training, for labelling cross-generalization cells
  int batch_size = 8;
  double base_lr = 0.0002;
};

struct SweepRow {
  int k = 0;
  int t = 0;
  std::string init;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MetricsReport metrics;
};

struct CellSummary {
  int k = 0;
  int t = 0;
  std::string init;
  bool cross_generalization = false;
  int failed = 0;
  double median_mse = 0;
  double median_psnr = 0;
  double median_ssim = 0;
  double median_coherence = 0;
  double median_coherence_init = 0;
};

struct SweepResult {
  SweepGrid grid;
  std::vector<std::string> inits;
  std::vector<SweepRow> rows;  // K-major, then T, init, seed
  std::vector<CellSummary> cells;
  double runtime_seconds = 0;

  const CellSummary& cell(int k, int t, const std::string& init) const;
};

/// Upper bound on concurrent sweep jobs: METAPIX_THREADS when set, otherwise
/// the hardware concurrency.
int sweep_threads();

/// Fills every (K, T, init, seed) row with evaluate_init over `tasks`. Rows
/// run in parallel on private copies of the inits; a failing row is recorded
/// with its error instead of aborting the sweep.
SweepResult run_sweep(const SweepGrid& grid, const std::vector<LabeledInit>& inits,
                      const std::vector<TaskDataset>& tasks, const Skeleton& skeleton, const TrainConfig& cfg = {},
                      int threads = 0);

double median(std::vector<double> values);

json sweep_json(const SweepResult& result);
std::string sweep_csv(const SweepResult& result);
std::string sweep_table(const SweepResult& result);

}  // namespace metapix
