// metapix: command-line driver for data generation, training, personalization,
// evaluation sweeps and qualitative grids.

#include "metapix/checkpoint.hpp"
#include "metapix/config.hpp"
#include "metapix/image_io.hpp"
#include "metapix/sweep.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

namespace {

using namespace metapix;
namespace fs = std::filesystem;

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitCheckpointFormat = 3;
constexpr int kExitCheckpointShape = 4;

const std::vector<int> kTrajectoryColumns{0, 10, 20, 40, 80, 200};

using Override = std::function<void(AppConfig&)>;

struct Command {
  CLI::App* app = nullptr;
  std::string config_path;
  std::vector<Override> overrides;

  template <class T, class Apply>
  void option(const std::string& name, const std::string& help, Apply apply) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(name, *value, help);
    if constexpr (std::is_same_v<T, std::vector<int>> || std::is_same_v<T, std::vector<std::string>>) {
      opt->delimiter(',');
    }
    overrides.push_back([opt, value, apply](AppConfig& c) {
      if (opt->count()) apply(c, *value);
    });
  }

  template <class Apply>
  void flag(const std::string& name, const std::string& help, Apply apply) {
    CLI::Option* opt = app->add_flag(name, help);
    overrides.push_back([opt, apply](AppConfig& c) {
      if (opt->count()) apply(c);
    });
  }

  AppConfig effective_config() const {
    AppConfig c = config_path.empty() ? AppConfig{} : load_config_file(config_path);
    for (const auto& o : overrides) o(c);
    c.validate();
    return c;
  }
};

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

void require_path(const std::string& value, const char* flag) {
  if (value.empty()) throw std::invalid_argument(std::string("missing required ") + flag);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

json metrics_json(const MetricsReport& m) {
  return {{"mse", m.mse},
          {"psnr", m.psnr},
          {"ssim", m.ssim},
          {"coherence", m.coherence},
          {"coherence_init", m.coherence_init},
          {"n_frames", m.n_frames}};
}

/// Loads the corpus named by io.data and makes the data section describe it.
Corpus load_data(AppConfig& cfg) {
  require_path(cfg.io.data, "--data");
  Corpus corpus = load_corpus(cfg.io.data);
  cfg.data.seed = corpus.config.seed;
  cfg.data.size = corpus.config.height;
  cfg.data.joints = corpus.config.joints;
  cfg.data.sigma = corpus.config.sigma;
  cfg.data.split_ratio = corpus.config.split_ratio;
  cfg.data.tasks = int(corpus.tasks.size());
  cfg.data.frames = corpus.tasks.empty() ? 0 : corpus.tasks.front().size();
  cfg.validate();
  return corpus;
}

ModelPair load_model(const std::string& path, const AppConfig& cfg) {
  ModelPair m = load_checkpoint(path);
  if (m.config.generator.in_channels != cfg.data.joints) {
    throw CheckpointShapeError("checkpoint '" + path + "' expects " + std::to_string(m.config.generator.in_channels) +
                               " joints, the corpus has " + std::to_string(cfg.data.joints));
  }
  return m;
}

/// The --init checkpoint when given, otherwise a fresh random initialization.
/// The model section is synchronized with whichever network is used.
ModelPair init_model(AppConfig& cfg) {
  ModelPair m = cfg.io.init.empty() ? random_init(cfg.model_config(), cfg.seed) : load_model(cfg.io.init, cfg);
  cfg.model.gen_width = m.config.generator.base_width;
  cfg.model.disc_width = m.config.discriminator.base_width;
  cfg.model.depth = m.config.generator.depth;
  cfg.model.extractor_seed = m.config.extractor.seed;
  cfg.model.extractor_widths = m.config.extractor.widths;
  return m;
}

const TaskDataset& find_task(const Corpus& corpus, int id) {
  for (const auto& t : corpus.tasks)
    if (t.id == id) return t;
  throw std::invalid_argument("corpus has no task " + std::to_string(id));
}

void finish(const std::string& command, const AppConfig& cfg, std::uint64_t seed,
            std::chrono::steady_clock::time_point start, const fs::path& report_path, std::vector<std::string> outputs,
            json results = nullptr) {
  RunReport report{command, to_json_value(cfg), seed, seconds_since(start), std::move(outputs), std::move(results)};
  report.outputs.push_back(report_path.string());
  write_json(report_path, to_json_value(report));
  std::printf("%s: wrote %s\n", command.c_str(), report_path.string().c_str());
}

fs::path sidecar(const std::string& out) { return fs::path(out + ".report.json"); }

void cmd_gen_data(AppConfig cfg) {
  const auto start = std::chrono::steady_clock::now();
  require_path(cfg.io.out, "--out");
  const Corpus corpus = build_corpus(cfg.data.tasks, cfg.data.frames, cfg.corpus_config());
  save_corpus(corpus, cfg.io.out);
  std::printf("gen-data: %d tasks x %d frames at %dx%d -> %s\n", cfg.data.tasks, cfg.data.frames, cfg.data.size,
              cfg.data.size, cfg.io.out.c_str());
  finish("gen-data", cfg, cfg.data.seed, start, sidecar(cfg.io.out), {cfg.io.out});
}

void cmd_pretrain(AppConfig cfg) {
  const auto start = std::chrono::steady_clock::now();
  require_path(cfg.io.out, "--out");
  const Corpus corpus = load_data(cfg);
  const ModelPair init = init_model(cfg);
  const ModelPair model =
      pretrain(init, corpus.tasks, corpus.skeleton, cfg.pretrain.epochs, cfg.pretrain.lr, cfg.seed, cfg.train_config());
  save_checkpoint(cfg.io.out, model);
  finish("pretrain", cfg, cfg.seed, start, sidecar(cfg.io.out), {cfg.io.out});
}

void cmd_metatrain(AppConfig cfg) {
  const auto start = std::chrono::steady_clock::now();
  require_path(cfg.io.out, "--out");
  const Corpus corpus = load_data(cfg);
  const ModelPair init = init_model(cfg);
  const int total = cfg.meta.meta_iterations;
  const ModelPair model =
      metatrain(init, corpus.tasks, corpus.skeleton, cfg.meta, cfg.budget, cfg.seed, cfg.train_config(),
                [&](int i, double eps, const ModelPair&) {
                  if ((i + 1) % 25 == 0 || i + 1 == total) {
                    std::fprintf(stderr, "meta-iteration %d/%d eps=%.4f (%.0fs)\n", i + 1, total, eps,
                                 seconds_since(start));
                  }
                });
  save_checkpoint(cfg.io.out, model);
  finish("metatrain", cfg, cfg.seed, start, sidecar(cfg.io.out), {cfg.io.out});
}

void cmd_personalize(AppConfig cfg) {
  const auto start = std::chrono::steady_clock::now();
  require_path(cfg.io.out, "--out");
  require_path(cfg.io.init, "--init");
  const Corpus corpus = load_data(cfg);
  const ModelPair init = init_model(cfg);
  const TaskDataset& task = find_task(corpus, cfg.io.task);
  const TrainConfig tc = cfg.train_config();
  const Personalized p = personalize(init, task, corpus.skeleton, cfg.budget, cfg.seed, tc);
  save_checkpoint(cfg.io.out, p.model);
  const std::vector<int> test = test_frame_indices(task, cfg.eval.n_test, derive_seed(cfg.seed, 2));
  const MetricsReport m = evaluate_generator(p.model, task, corpus.skeleton, test, tc.heatmap_sigma);
  std::printf("personalize: task %d, K=%d, T=%d: mse %.2f psnr %.3f ssim %.4f\n", task.id, cfg.budget.k, cfg.budget.t,
              m.mse, m.psnr, m.ssim);
  finish("personalize", cfg, cfg.seed, start, sidecar(cfg.io.out), {cfg.io.out},
         {{"task", task.id}, {"pool_frames", p.pool_frames}, {"test_metrics", metrics_json(m)}});
}

SweepGrid grid_from(const AppConfig& cfg, std::vector<int> k, std::vector<int> t) {
  SweepGrid g;
  g.k = std::move(k);
  g.t = std::move(t);
  g.seeds.clear();
  for (int i = 0; i < cfg.eval.seeds; ++i) g.seeds.push_back(cfg.seed + std::uint64_t(i));
  g.n_test = cfg.eval.n_test;
  g.meta_k = cfg.sweep.cross_k;
  g.batch_size = cfg.budget.batch_size;
  g.base_lr = cfg.budget.base_lr;
  return g;
}

void emit_sweep(const std::string& command, const AppConfig& cfg, const SweepResult& result,
                std::chrono::steady_clock::time_point start) {
  const fs::path dir = cfg.io.out;
  const fs::path json_path = dir / (command + ".json");
  const fs::path csv_path = dir / (command + ".csv");
  const fs::path table_path = dir / (command + ".txt");
  json doc = sweep_json(result);
  doc["config"] = to_json_value(cfg);
  write_json(json_path, doc);
  write_text(csv_path, sweep_csv(result));
  const std::string table = sweep_table(result);
  write_text(table_path, table);
  std::fputs(table.c_str(), stdout);
  int failed = 0;
  for (const auto& row : result.rows) failed += row.ok ? 0 : 1;
  finish(command, cfg, cfg.seed, start, dir / "run_report.json",
         {json_path.string(), csv_path.string(), table_path.string()}, {{"rows", result.rows.size()}, {"failed", failed}});
  if (failed) throw std::runtime_error(std::to_string(failed) + " sweep rows failed; see " + json_path.string());
}

void cmd_evaluate(AppConfig cfg) {
  const auto start = std::chrono::steady_clock::now();
  require_path(cfg.io.out, "--out");
  require_path(cfg.io.init, "--init");
  const Corpus corpus = load_data(cfg);
  const ModelPair init = init_model(cfg);
  const SweepResult result = run_sweep(grid_from(cfg, {cfg.budget.k}, {cfg.budget.t}), {{cfg.io.label, init}},
                                       corpus.tasks, corpus.skeleton, cfg.train_config());
  emit_sweep("evaluate", cfg, result, start);
}

std::vector<LabeledInit> sweep_inits(const AppConfig& cfg) {
  std::vector<LabeledInit> inits;
  for (const auto& kind : cfg.sweep.inits) {
    const std::string& path = kind == "random" ? cfg.io.random : kind == "pretrain" ? cfg.io.pretrain : cfg.io.metapix;
    if (path.empty()) throw std::invalid_argument("missing checkpoint for init '" + kind + "' (--" + kind + ")");
    inits.push_back({kind, load_model(path, cfg)});
  }
  for (const auto& spec : cfg.io.extra) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
      throw std::invalid_argument("--extra expects label=checkpoint, got '" + spec + "'");
    }
    inits.push_back({spec.substr(0, eq), load_model(spec.substr(eq + 1), cfg)});
  }
  return inits;
}

void cmd_sweep(AppConfig cfg) {
  const auto start = std::chrono::steady_clock::now();
  require_path(cfg.io.out, "--out");
  const Corpus corpus = load_data(cfg);
  const auto inits = sweep_inits(cfg);
  const SweepResult result =
      run_sweep(grid_from(cfg, cfg.sweep.k, cfg.sweep.t), inits, corpus.tasks, corpus.skeleton, cfg.train_config());
  emit_sweep("sweep", cfg, result, start);
}

TensorF generate_one(const ModelPair& model, const TaskDataset& task, const Skeleton& skeleton, int frame,
                     double sigma) {
  const Example e = make_example(task, frame, skeleton, sigma);
  const TensorF out = generate(model.gen, model.config.generator, e.heatmap.reshaped({1, e.heatmap.dim(0),
                                                                                      e.heatmap.dim(1), e.heatmap.dim(2)}));
  return to_unit_range(out.reshaped({out.dim(1), out.dim(2), out.dim(3)}));
}

void cmd_render(AppConfig cfg) {
  const auto start = std::chrono::steady_clock::now();
  require_path(cfg.io.out, "--out");
  const Corpus corpus = load_data(cfg);
  const TaskDataset& task = find_task(corpus, cfg.io.task);
  const TrainConfig tc = cfg.train_config();
  const std::vector<int> rows = test_frame_indices(task, cfg.io.rows, derive_seed(cfg.seed, 3));

  std::vector<std::string> labels;
  std::vector<ModelPair> columns;
  if (cfg.io.mode == "models") {
    labels.push_back("ground_truth");
    for (const auto& init : sweep_inits(cfg)) {
      labels.push_back(init.label);
      columns.push_back(personalize(init.model, task, corpus.skeleton, cfg.budget, cfg.seed, tc).model);
    }
    if (columns.empty()) throw std::invalid_argument("render: no checkpoints given");
  } else {
    require_path(cfg.io.init, "--init");
    const ModelPair init = init_model(cfg);
    Budget budget = cfg.budget;
    budget.t = kTrajectoryColumns.back();
    personalize(init, task, corpus.skeleton, budget, cfg.seed, tc, [&](int step, const ModelPair& m) {
      if (std::find(kTrajectoryColumns.begin(), kTrajectoryColumns.end(), step) != kTrajectoryColumns.end()) {
        labels.push_back("iteration_" + std::to_string(step));
        columns.push_back(m);
      }
    });
  }

  std::vector<std::vector<TensorF>> grid;
  for (int f : rows) {
    std::vector<TensorF> row;
    if (cfg.io.mode == "models") row.push_back(task.frames[std::size_t(f)]);
    for (const auto& m : columns) row.push_back(generate_one(m, task, corpus.skeleton, f, tc.heatmap_sigma));
    grid.push_back(std::move(row));
  }
  const Rgb8Image image = tile_grid(grid);
  write_png(cfg.io.out, image);
  std::printf("render: %zu x %zu grid (%dx%d px) -> %s\n", grid.size(), grid.front().size(), image.width,
              image.height, cfg.io.out.c_str());
  finish("render", cfg, cfg.seed, start, sidecar(cfg.io.out), {cfg.io.out},
         {{"mode", cfg.io.mode}, {"columns", labels}, {"test_frames", rows}});
}

void add_common(Command& c, bool seeded_data = false) {
  c.app->add_option("--config", c.config_path, "JSON config or a previous run report to repeat")
      ->check(CLI::ExistingFile);
  if (seeded_data) {
    c.option<std::uint64_t>("--seed", "corpus seed", [](AppConfig& a, std::uint64_t v) { a.data.seed = v; });
  } else {
    c.option<std::uint64_t>("--seed", "run seed", [](AppConfig& a, std::uint64_t v) { a.seed = v; });
  }
  c.option<std::string>("--out", "output path", [](AppConfig& a, const std::string& v) { a.io.out = v; });
}

void add_data(Command& c) {
  c.option<std::string>("--data", "corpus directory", [](AppConfig& a, const std::string& v) { a.io.data = v; });
}

void add_init(Command& c) {
  c.option<std::string>("--init", "starting checkpoint", [](AppConfig& a, const std::string& v) { a.io.init = v; });
}

void add_budget(Command& c) {
  c.option<int>("--k", "personalization frames K", [](AppConfig& a, int v) { a.budget.k = v; });
  c.option<int>("--t", "fine-tuning iterations T", [](AppConfig& a, int v) { a.budget.t = v; });
}

void add_widths(Command& c) {
  c.option<int>("--width", "generator and discriminator base width", [](AppConfig& a, int v) {
    a.model.gen_width = v;
    a.model.disc_width = v;
  });
}

void add_eval(Command& c) {
  c.option<int>("--seeds", "number of evaluation seeds", [](AppConfig& a, int v) { a.eval.seeds = v; });
  c.option<int>("--n-test", "test frames per task", [](AppConfig& a, int v) { a.eval.n_test = v; });
}

void add_checkpoints(Command& c) {
  c.option<std::string>("--random", "random-init checkpoint", [](AppConfig& a, const std::string& v) { a.io.random = v; });
  c.option<std::string>("--pretrain", "pretrained checkpoint", [](AppConfig& a, const std::string& v) { a.io.pretrain = v; });
  c.option<std::string>("--metapix", "meta-trained checkpoint", [](AppConfig& a, const std::string& v) { a.io.metapix = v; });
  c.option<std::vector<std::string>>("--extra", "extra inits as label=checkpoint",
                                     [](AppConfig& a, const std::vector<std::string>& v) { a.io.extra = v; });
  c.option<std::vector<std::string>>("--inits", "init kinds among random,pretrain,metapix",
                                     [](AppConfig& a, const std::vector<std::string>& v) { a.sweep.inits = v; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot personalization of a pose-conditioned GAN with Reptile meta-learning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version_string());

  std::vector<std::pair<std::unique_ptr<Command>, std::function<void(AppConfig)>>> commands;
  auto add = [&](const char* name, const char* help, std::function<void(AppConfig)> run) -> Command& {
    auto c = std::make_unique<Command>();
    c->app = app.add_subcommand(name, help);
    commands.emplace_back(std::move(c), std::move(run));
    return *commands.back().first;
  };

  Command& gen = add("gen-data", "render a synthetic corpus", cmd_gen_data);
  add_common(gen, true);
  gen.option<int>("--tasks", "number of tasks", [](AppConfig& a, int v) { a.data.tasks = v; });
  gen.option<int>("--frames", "frames per task", [](AppConfig& a, int v) { a.data.frames = v; });
  gen.option<int>("--size", "image height and width", [](AppConfig& a, int v) { a.data.size = v; });
  gen.option<int>("--joints", "skeleton joints (8 or 12)", [](AppConfig& a, int v) { a.data.joints = v; });

  Command& pre = add("pretrain", "train a generic model on every task", cmd_pretrain);
  add_common(pre);
  add_data(pre);
  add_init(pre);
  add_widths(pre);
  pre.option<int>("--epochs", "passes over the corpus", [](AppConfig& a, int v) { a.pretrain.epochs = v; });
  pre.option<double>("--lr", "learning rate", [](AppConfig& a, double v) { a.pretrain.lr = v; });

  Command& meta = add("metatrain", "Reptile meta-training of both networks", cmd_metatrain);
  add_common(meta);
  add_data(meta);
  add_init(meta);
  add_widths(meta);
  add_budget(meta);
  meta.option<double>("--meta-lr", "initial meta step size eps0", [](AppConfig& a, double v) { a.meta.eps0 = v; });
  meta.option<int>("--meta-iters", "meta-iterations", [](AppConfig& a, int v) { a.meta.meta_iterations = v; });
  meta.flag("--generator-only", "keep the discriminator at its initial value",
            [](AppConfig& a) { a.meta.generator_only = true; });
  meta.flag("--literal-sign", "use the (1 + eps) theta - eps theta~ update", [](AppConfig& a) { a.meta.literal_sign = true; });

  Command& pers = add("personalize", "fine-tune a checkpoint on K frames of one task", cmd_personalize);
  add_common(pers);
  add_data(pers);
  add_init(pers);
  add_budget(pers);
  pers.option<int>("--task", "task id", [](AppConfig& a, int v) { a.io.task = v; });
  pers.option<int>("--n-test", "test frames for the summary", [](AppConfig& a, int v) { a.eval.n_test = v; });

  Command& eval = add("evaluate", "personalize and score one checkpoint on held-out tasks", cmd_evaluate);
  add_common(eval);
  add_data(eval);
  add_init(eval);
  add_budget(eval);
  add_eval(eval);
  eval.option<std::string>("--label", "init label in the report", [](AppConfig& a, const std::string& v) { a.io.label = v; });

  Command& sweep = add("sweep", "K x T x init grid over held-out tasks", cmd_sweep);
  add_common(sweep);
  add_data(sweep);
  add_eval(sweep);
  add_checkpoints(sweep);
  sweep.option<std::vector<int>>("--k", "K values", [](AppConfig& a, const std::vector<int>& v) { a.sweep.k = v; });
  sweep.option<std::vector<int>>("--t", "T values", [](AppConfig& a, const std::vector<int>& v) { a.sweep.t = v; });
  sweep.option<int>("--meta-k", "K the metapix checkpoint was trained at", [](AppConfig& a, int v) { a.sweep.cross_k = v; });

  Command& render = add("render", "PNG grid of test poses (models | finetune-trajectory)", cmd_render);
  add_common(render);
  add_data(render);
  add_init(render);
  add_budget(render);
  add_checkpoints(render);
  render.option<std::string>("--mode", "models or finetune-trajectory", [](AppConfig& a, const std::string& v) { a.io.mode = v; });
  render.option<int>("--rows", "test poses", [](AppConfig& a, int v) { a.io.rows = v; });
  render.option<int>("--task", "task id", [](AppConfig& a, int v) { a.io.task = v; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", one_line(e.what()).c_str());
    return kExitUsage;
  }

  for (auto& [command, run] : commands) {
    if (!command->app->parsed()) continue;
    try {
      run(command->effective_config());
      return 0;
    } catch (const CheckpointFormatError& e) {
      std::fprintf(stderr, "error: checkpoint format: %s\n", one_line(e.what()).c_str());
      return kExitCheckpointFormat;
    } catch (const CheckpointShapeError& e) {
      std::fprintf(stderr, "error: checkpoint shape: %s\n", one_line(e.what()).c_str());
      return kExitCheckpointShape;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: %s\n", one_line(e.what()).c_str());
      return kExitFailure;
    }
  }
  return kExitUsage;
}
