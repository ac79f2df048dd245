#include "metapix/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace metapix {

MetricsReport evaluate_init(const ModelPair& init, const std::vector<TaskDataset>& tasks, const Skeleton& skeleton,
                            const Budget& budget, int n_test, std::uint64_t seed, const TrainConfig& cfg) {
  if (tasks.empty()) throw std::invalid_argument("evaluate: no held-out tasks");
  MetricsReport total;
  for (const TaskDataset& task : tasks) {
    const MetricsReport r =
        personalize_and_eval(init, task, skeleton, budget, n_test, derive_seed(seed, std::uint64_t(task.id)), cfg);
    total.mse += r.mse;
    total.psnr += r.psnr;
    total.ssim += r.ssim;
    total.coherence += r.coherence;
    total.coherence_init += r.coherence_init;
    total.n_frames += r.n_frames;
    total.frame_mse.insert(total.frame_mse.end(), r.frame_mse.begin(), r.frame_mse.end());
    total.frame_psnr.insert(total.frame_psnr.end(), r.frame_psnr.begin(), r.frame_psnr.end());
    total.frame_ssim.insert(total.frame_ssim.end(), r.frame_ssim.begin(), r.frame_ssim.end());
  }
  const double n = double(tasks.size());
  total.mse /= n;
  total.psnr /= n;
  total.ssim /= n;
  total.coherence /= n;
  total.coherence_init /= n;
  return total;
}

const CellSummary& SweepResult::cell(int k, int t, const std::string& init) const {
  for (const auto& c : cells)
    if (c.k == k && c.t == t && c.init == init) return c;
  throw std::out_of_range("no sweep cell K=" + std::to_string(k) + " T=" + std::to_string(t) + " init=" + init);
}

int sweep_threads() {
  if (const char* env = std::getenv("METAPIX_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw std::invalid_argument("METAPIX_THREADS must be a positive integer");
    return int(v);
  }
  return std::max(1, int(std::thread::hardware_concurrency()));
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

SweepResult run_sweep(const SweepGrid& grid, const std::vector<LabeledInit>& inits,
                      const std::vector<TaskDataset>& tasks, const Skeleton& skeleton, const TrainConfig& cfg,
                      int threads) {
  if (grid.k.empty() || grid.t.empty() || grid.seeds.empty()) throw std::invalid_argument("sweep grid has an empty axis");
  if (inits.empty()) throw std::invalid_argument("sweep needs at least one init checkpoint");
  if (tasks.empty()) throw std::invalid_argument("sweep needs at least one held-out task");
  const auto start = std::chrono::steady_clock::now();

  SweepResult result;
  result.grid = grid;
  for (const auto& init : inits) result.inits.push_back(init.label);
  for (int k : grid.k)
    for (int t : grid.t)
      for (const auto& init : inits)
        for (std::uint64_t seed : grid.seeds) result.rows.push_back({k, t, init.label, seed, false, {}, {}});

  std::map<std::string, const ModelPair*> by_label;
  for (const auto& init : inits) {
    if (!by_label.emplace(init.label, &init.model).second) {
      throw std::invalid_argument("duplicate init label '" + init.label + "'");
    }
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < result.rows.size(); i = next++) {
      SweepRow& row = result.rows[i];
      const ModelPair local = *by_label.at(row.init);
      try {
        const Budget budget{row.k, row.t, grid.batch_size, grid.base_lr};
        row.metrics = evaluate_init(local, tasks, skeleton, budget, grid.n_test, row.seed, cfg);
        row.ok = true;
      } catch (const std::exception& e) {
        row.error = e.what();
      }
    }
  };
  const int n_threads = std::clamp(threads > 0 ? threads : sweep_threads(), 1, int(result.rows.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  for (int k : grid.k)
    for (int t : grid.t)
      for (const auto& label : result.inits) {
        CellSummary c;
        c.k = k;
        c.t = t;
        c.init = label;
        c.cross_generalization = label.starts_with("metapix") && k != grid.meta_k;
        std::vector<double> mse, psnr, ssim, coh, coh0;
        for (const auto& row : result.rows) {
          if (row.k != k || row.t != t || row.init != label) continue;
          if (!row.ok) {
            ++c.failed;
            continue;
          }
          mse.push_back(row.metrics.mse);
          psnr.push_back(row.metrics.psnr);
          ssim.push_back(row.metrics.ssim);
          coh.push_back(row.metrics.coherence);
          coh0.push_back(row.metrics.coherence_init);
        }
        if (!mse.empty()) {
          c.median_mse = median(mse);
          c.median_psnr = median(psnr);
          c.median_ssim = median(ssim);
          c.median_coherence = median(coh);
          c.median_coherence_init = median(coh0);
        }
        result.cells.push_back(c);
      }
  result.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

json sweep_json(const SweepResult& result) {
  json cells = json::array();
  for (const auto& c : result.cells) {
    json per_seed = json::array();
    for (const auto& row : result.rows) {
      if (row.k != c.k || row.t != c.t || row.init != c.init) continue;
      json r{{"seed", row.seed}, {"ok", row.ok}};
      if (row.ok) {
        r["mse"] = row.metrics.mse;
        r["psnr"] = row.metrics.psnr;
        r["ssim"] = row.metrics.ssim;
        r["coherence"] = row.metrics.coherence;
        r["coherence_init"] = row.metrics.coherence_init;
        r["n_frames"] = row.metrics.n_frames;
      } else {
        r["error"] = row.error;
      }
      per_seed.push_back(r);
    }
    cells.push_back({{"k", c.k},
                     {"t", c.t},
                     {"init", c.init},
                     {"cross_generalization", c.cross_generalization},
                     {"failed", c.failed},
                     {"median", {{"mse", c.median_mse},
                                 {"psnr", c.median_psnr},
                                 {"ssim", c.median_ssim},
                                 {"coherence", c.median_coherence},
                                 {"coherence_init", c.median_coherence_init}}},
                     {"per_seed", per_seed}});
  }
  const SweepGrid& g = result.grid;
  return json{{"grid", {{"k", g.k},
                        {"t", g.t},
                        {"inits", result.inits},
                        {"n_test", g.n_test},
                        {"meta_k", g.meta_k},
                        {"batch_size", g.batch_size},
                        {"base_lr", g.base_lr}}},
              {"seeds", g.seeds},
              {"cells", cells},
              {"runtime_seconds", result.runtime_seconds}};
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string sweep_csv(const SweepResult& result) {
  std::ostringstream out;
  out << "K,T,init,seed,mse,psnr,ssim,coherence\n";
  for (const auto& row : result.rows) {
    out << row.k << ',' << row.t << ',' << row.init << ',' << row.seed << ',';
    if (row.ok) {
      out << fmt(row.metrics.mse) << ',' << fmt(row.metrics.psnr) << ',' << fmt(row.metrics.ssim) << ','
          << fmt(row.metrics.coherence) << '\n';
    } else {
      out << "failed,failed,failed,failed\n";
    }
  }
  return out.str();
}

std::string sweep_table(const SweepResult& result) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%4s %4s  %-20s %10s %8s %8s %11s %11s\n", "K", "T", "init", "MSE", "PSNR", "SSIM",
                "coherence", "coh@init");
  out << line;
  for (const auto& c : result.cells) {
    std::snprintf(line, sizeof line, "%4d %4d  %-20s %10.2f %8.3f %8.4f %11.6f %11.6f%s\n", c.k, c.t, c.init.c_str(),
                  c.median_mse, c.median_psnr, c.median_ssim, c.median_coherence, c.median_coherence_init,
                  c.failed ? "  (failures)" : c.cross_generalization ? "  *" : "");
    out << line;
  }
  out << "medians over " << result.grid.seeds.size() << " seeds; * = meta-trained at K=" << result.grid.meta_k
      << ", tested at another K\n";
  return out.str();
}

}  // namespace metapix
