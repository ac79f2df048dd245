#include "metapix/training.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

namespace metapix {

namespace {

std::vector<int> sample_without_replacement(int population, int count, std::mt19937_64& rng) {
  if (count > population) {
    throw std::invalid_argument("cannot sample " + std::to_string(count) + " items from " +
                                std::to_string(population));
  }
  std::vector<int> items(static_cast<std::size_t>(population));
  std::iota(items.begin(), items.end(), 0);
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, population - 1);
    std::swap(items[std::size_t(i)], items[std::size_t(pick(rng))]);
  }
  items.resize(std::size_t(count));
  return items;
}

TensorF stack(const std::vector<const TensorF*>& items) {
  const TensorF& first = *items.front();
  Shape shape{Index(items.size())};
  shape.insert(shape.end(), first.shape().begin(), first.shape().end());
  TensorF out(shape);
  const Index n = first.size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i]->shape() != first.shape()) throw std::invalid_argument("stack: inconsistent item shapes");
    out.data().segment(Index(i) * n, n) = items[i]->data();
  }
  return out;
}

}  // namespace

ModelConfig ModelConfig::for_joints(int joints, int gen_width, int disc_width, int depth) {
  ModelConfig c;
  c.generator.in_channels = joints;
  c.generator.base_width = gen_width;
  c.generator.depth = depth;
  c.discriminator.in_channels = joints + 3;
  c.discriminator.base_width = disc_width;
  c.discriminator.depth = depth;
  return c;
}

ModelPair random_init(const ModelConfig& config, std::uint64_t seed) {
  ModelPair m;
  m.config = config;
  m.gen = init_generator<float>(config.generator, derive_seed(seed, 1));
  m.disc = init_discriminator<float>(config.discriminator, derive_seed(seed, 2));
  return m;
}

Example make_example(const TaskDataset& task, int frame, const Skeleton& skeleton, double sigma) {
  const TensorF& img = task.frames.at(std::size_t(frame));
  return {render_heatmap(task.poses.at(std::size_t(frame)), skeleton, int(img.dim(1)), int(img.dim(2)), sigma), img};
}

Batch make_batch(const std::vector<Example>& pool, const std::vector<int>& indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  std::vector<const TensorF*> heatmaps, frames;
  for (int i : indices) {
    const Example& e = pool.at(std::size_t(i));
    heatmaps.push_back(&e.heatmap);
    frames.push_back(&e.frame);
  }
  Batch b{stack(heatmaps), stack(frames)};
  b.images.data() = (b.images.data().array() * 2.0f - 1.0f).matrix();
  return b;
}

StepStats train_step(ModelPair& model, AdamPair& adam, const FixedFeatureExtractor<float>& extractor,
                     const Batch& batch, double lr, const TrainConfig& cfg) {
  const ModelConfig& mc = model.config;
  StepStats stats;

  Tape<float> gtape;
  const auto g = Binder<float>::trainable(gtape, model.gen);
  const Var<float> hm = gtape.reference(batch.heatmaps);
  const Var<float> real = gtape.reference(batch.images);
  const Var<float> fake = generator_forward(g, mc.generator, hm);

  {
    Tape<float> dtape;
    const auto d = Binder<float>::trainable(dtape, model.disc);
    const Var<float> dhm = dtape.reference(batch.heatmaps);
    const auto d_real = discriminator_forward(d, mc.discriminator, dhm, dtape.reference(batch.images));
    const auto d_fake = discriminator_forward(d, mc.discriminator, dhm, dtape.reference(fake.value()));
    const Var<float> loss = gan_loss(d_real.scores, d_fake.scores, GanSide::discriminator);
    stats.disc_loss = loss.value().item();
    dtape.backward(loss);
    adam_step(model.disc, adam.disc, lr);
  }

  const auto d = Binder<float>::frozen(gtape, model.disc);
  const auto d_real = discriminator_forward(d, mc.discriminator, hm, real);
  const auto d_fake = discriminator_forward(d, mc.discriminator, hm, fake);
  const auto obj = generator_objective(d_real, d_fake, extractor, real, fake, cfg.weights);
  stats.gen_loss = obj.total.value().item();
  stats.gan = obj.gan.value().item();
  stats.feature_matching = obj.feature_matching.value().item();
  stats.perceptual = obj.perceptual.value().item();
  gtape.backward(obj.total);
  adam_step(model.gen, adam.gen, lr);
  return stats;
}

std::vector<std::vector<int>> finetune_batches(int k, int batch_size, int t, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("finetune needs a non-empty pool");
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<int>> batches;
  batches.reserve(std::size_t(std::max(t, 0)));
  for (int it = 0; it < t; ++it) {
    std::vector<int> b(static_cast<std::size_t>(batch_size));
    if (k < batch_size) {
      const int offset = std::uniform_int_distribution<int>(0, k - 1)(rng);
      for (int j = 0; j < batch_size; ++j) b[std::size_t(j)] = (offset + j) % k;
    } else {
      b = sample_without_replacement(k, batch_size, rng);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

ModelPair finetune(const ModelPair& model, const std::vector<Example>& pool, const Budget& budget, std::uint64_t seed,
                   const TrainConfig& cfg, FinetuneStats* stats, const StepCallback& on_step) {
  if (pool.empty()) throw std::invalid_argument("finetune: empty pool");
  if (budget.t < 1) throw std::invalid_argument("finetune: T must be at least 1");
  const LrSchedule schedule(budget.base_lr, budget.t);
  const FixedFeatureExtractor<float> extractor(model.config.extractor);
  ModelPair adapted = model;
  AdamPair adam{AdamState<float>(cfg.adam), AdamState<float>(cfg.adam)};
  const auto batches = finetune_batches(int(pool.size()), budget.batch_size, budget.t, seed);
  StepStats last;
  if (on_step) on_step(0, adapted);
  for (int it = 0; it < budget.t; ++it) {
    last = train_step(adapted, adam, extractor, make_batch(pool, batches[std::size_t(it)]), lr_at(schedule, it), cfg);
    if (on_step) on_step(it + 1, adapted);
  }
  if (adam.gen.step != budget.t || adam.disc.step != budget.t) {
    throw std::logic_error("finetune: optimizer step count does not match the budget");
  }
  if (stats) *stats = {adam.gen.step, adam.disc.step, last};
  return adapted;
}

ModelPair pretrain(const ModelPair& init, const std::vector<TaskDataset>& tasks, const Skeleton& skeleton, int epochs,
                   double lr, std::uint64_t seed, const TrainConfig& cfg) {
  if (tasks.empty()) throw std::invalid_argument("pretrain: empty corpus");
  if (epochs < 0) throw std::invalid_argument("pretrain: negative epoch count");
  ModelPair model = init;
  if (epochs == 0) return model;

  std::vector<std::pair<int, int>> items;
  for (std::size_t t = 0; t < tasks.size(); ++t)
    for (int f = 0; f < tasks[t].pool_size(); ++f) items.emplace_back(int(t), f);
  if (items.empty()) throw std::invalid_argument("pretrain: corpus has no personalization frames");

  const FixedFeatureExtractor<float> extractor(model.config.extractor);
  AdamPair adam{AdamState<float>(cfg.adam), AdamState<float>(cfg.adam)};
  std::mt19937_64 rng(derive_seed(seed, 0x9E7A));
  const int b = cfg.batch_size;
  const std::size_t n_batches = std::max<std::size_t>(1, items.size() / std::size_t(b));
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(items.begin(), items.end(), rng);
    for (std::size_t bi = 0; bi < n_batches; ++bi) {
      std::vector<Example> examples;
      std::vector<int> idx;
      for (std::size_t j = bi * std::size_t(b); j < std::min(items.size(), (bi + 1) * std::size_t(b)); ++j) {
        examples.push_back(make_example(tasks[std::size_t(items[j].first)], items[j].second, skeleton, cfg.heatmap_sigma));
        idx.push_back(int(idx.size()));
      }
      train_step(model, adam, extractor, make_batch(examples, idx), lr, cfg);
    }
  }
  return model;
}

MetaIterationPlan plan_meta_iteration(std::uint64_t seed, int iteration, const std::vector<TaskDataset>& tasks, int k) {
  if (tasks.empty()) throw std::invalid_argument("metatrain: empty corpus");
  std::mt19937_64 rng(derive_seed(seed, std::uint64_t(iteration)));
  MetaIterationPlan plan;
  plan.task = std::uniform_int_distribution<int>(0, int(tasks.size()) - 1)(rng);
  plan.frames = sample_without_replacement(tasks[std::size_t(plan.task)].pool_size(), k, rng);
  plan.finetune_seed = rng();
  return plan;
}

ModelPair metatrain(const ModelPair& init, const std::vector<TaskDataset>& tasks, const Skeleton& skeleton,
                    const MetaConfig& meta, const Budget& budget, std::uint64_t seed, const TrainConfig& cfg,
                    const MetaCallback& on_iteration) {
  if (tasks.empty()) throw std::invalid_argument("metatrain: empty corpus");
  if (meta.meta_iterations < 0) throw std::invalid_argument("metatrain: negative iteration count");
  if (!(meta.eps0 >= 0.0 && meta.eps0 <= 1.0)) throw std::invalid_argument("metatrain: eps0 must lie in [0, 1]");
  ModelPair model = init;
  for (int i = 0; i < meta.meta_iterations; ++i) {
    const MetaIterationPlan plan = plan_meta_iteration(seed, i, tasks, budget.k);
    const TaskDataset& task = tasks[std::size_t(plan.task)];
    std::vector<Example> pool;
    for (int f : plan.frames) pool.push_back(make_example(task, f, skeleton, cfg.heatmap_sigma));
    const ModelPair adapted = finetune(model, pool, budget, plan.finetune_seed, cfg);
    const double eps = meta_lr_at(meta.eps0, i, meta.meta_iterations);
    model.gen = reptile_update(model.gen, adapted.gen, eps, meta.literal_sign);
    if (!meta.generator_only) model.disc = reptile_update(model.disc, adapted.disc, eps, meta.literal_sign);
    if (on_iteration) on_iteration(i, eps, model);
  }
  return model;
}

std::vector<int> test_frame_indices(const TaskDataset& task, int n_test, std::uint64_t seed) {
  if (task.test_size() < 1) throw std::invalid_argument("task has no test frames");
  if (n_test < 1) throw std::invalid_argument("n_test must be positive");
  std::vector<int> out;
  if (n_test >= task.test_size()) {
    for (int f = task.split_index; f < task.size(); ++f) out.push_back(f);
    return out;
  }
  std::mt19937_64 rng(seed);
  out = sample_without_replacement(task.test_size(), n_test, rng);
  std::sort(out.begin(), out.end());
  for (int& f : out) f += task.split_index;
  return out;
}

std::vector<Eigen::Array<bool, Eigen::Dynamic, 1>> figure_masks(const TaskDataset& task, const Skeleton& skeleton,
                                                                int height, int width, const std::vector<int>& frames) {
  std::vector<Eigen::Array<bool, Eigen::Dynamic, 1>> masks;
  masks.reserve(frames.size());
  for (int f : frames) masks.push_back(render(task.poses.at(std::size_t(f)), task.appearance, skeleton, height, width).figure);
  return masks;
}

MetricsReport evaluate_generator(const ModelPair& model, const TaskDataset& task, const Skeleton& skeleton,
                                 const std::vector<int>& frames, double sigma) {
  if (frames.empty()) throw std::invalid_argument("evaluate: no frames");
  const int h = int(task.frames.front().dim(1));
  const int w = int(task.frames.front().dim(2));
  MetricsReport report;
  report.n_frames = int(frames.size());
  std::vector<TensorF> generated;
  constexpr std::size_t kChunk = 16;
  for (std::size_t start = 0; start < frames.size(); start += kChunk) {
    std::vector<Example> chunk;
    std::vector<int> idx;
    for (std::size_t j = start; j < std::min(frames.size(), start + kChunk); ++j) {
      chunk.push_back(make_example(task, frames[j], skeleton, sigma));
      idx.push_back(int(idx.size()));
    }
    const TensorF out = generate(model.gen, model.config.generator, make_batch(chunk, idx).heatmaps);
    const Index per = out.size() / out.dim(0);
    for (Index i = 0; i < out.dim(0); ++i) {
      generated.push_back(to_unit_range(TensorF({out.dim(1), out.dim(2), out.dim(3)}, out.data().segment(i * per, per))));
    }
  }
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const TensorF& truth = task.frames[std::size_t(frames[i])];
    const double m = mse(generated[i], truth);
    report.frame_mse.push_back(m);
    report.frame_psnr.push_back(psnr_from_mse(m));
    report.frame_ssim.push_back(ssim(generated[i], truth));
  }
  auto avg = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); };
  report.mse = avg(report.frame_mse);
  report.psnr = avg(report.frame_psnr);
  report.ssim = avg(report.frame_ssim);
  report.coherence = coherence_of_frames(generated, figure_masks(task, skeleton, h, w, frames));
  return report;
}

Personalized personalize(const ModelPair& init, const TaskDataset& task, const Skeleton& skeleton,
                         const Budget& budget, std::uint64_t seed, const TrainConfig& cfg,
                         const StepCallback& on_step) {
  if (budget.k < 1) throw std::invalid_argument("K must be at least 1");
  if (task.pool_size() < budget.k) {
    throw std::invalid_argument("task " + std::to_string(task.id) + " has " + std::to_string(task.pool_size()) +
                                " pool frames, fewer than K = " + std::to_string(budget.k));
  }
  std::mt19937_64 rng(seed);
  Personalized out;
  out.pool_frames = sample_without_replacement(task.pool_size(), budget.k, rng);
  std::vector<Example> pool;
  for (int f : out.pool_frames) pool.push_back(make_example(task, f, skeleton, cfg.heatmap_sigma));
  out.model = finetune(init, pool, budget, derive_seed(seed, 1), cfg, nullptr, on_step);
  return out;
}

MetricsReport personalize_and_eval(const ModelPair& init, const TaskDataset& task, const Skeleton& skeleton,
                                   const Budget& budget, int n_test, std::uint64_t seed, const TrainConfig& cfg) {
  if (task.test_size() < 1) throw std::invalid_argument("task " + std::to_string(task.id) + " has no test frames");
  const ModelPair adapted = personalize(init, task, skeleton, budget, seed, cfg).model;
  const std::vector<int> test = test_frame_indices(task, n_test, derive_seed(seed, 2));
  MetricsReport report = evaluate_generator(adapted, task, skeleton, test, cfg.heatmap_sigma);
  report.coherence_init = evaluate_generator(init, task, skeleton, test, cfg.heatmap_sigma).coherence;
  return report;
}

}  // namespace metapix
