#pragma once

#include "metapix/metrics.hpp"
#include "metapix/models.hpp"
#include "metapix/optim.hpp"
#include "metapix/synthetic.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace metapix {

/// Network shapes plus the frozen perceptual extractor they are trained with.
struct ModelConfig {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  FeatureExtractorConfig extractor;

  bool operator==(const ModelConfig&) const = default;

  static ModelConfig for_joints(int joints, int gen_width = 32, int disc_width = 32, int depth = 3);
};

struct ModelPair {
  ModelConfig config;
  ParamSetF gen;
  ParamSetF disc;

  bool same_values(const ModelPair& other) const {
    return config == other.config && gen.same_values(other.gen) && disc.same_values(other.disc);
  }
};

/// Fresh uniform fan-in initialization; also the "random" baseline.
ModelPair random_init(const ModelConfig& config, std::uint64_t seed);

/// Optimization settings shared by every training regime.
struct TrainConfig {
  LossWeights weights;
  AdamConfig adam;
  int batch_size = 8;
  double heatmap_sigma = 1.5;
};

/// Personalization budget: K frames, T alternating D/G iterations.
struct Budget {
  int k = 5;
  int t = 20;
  int batch_size = 8;
  double base_lr = 0.0002;
};

struct MetaConfig {
  double eps0 = 1.0;
  int meta_iterations = 300;
  bool generator_only = false;
  bool literal_sign = false;
};

/// One supervised pair: J x H x W heatmap and 3 x H x W frame in [0, 1].
struct Example {
  TensorF heatmap;
  TensorF frame;
};

Example make_example(const TaskDataset& task, int frame, const Skeleton& skeleton, double sigma);

/// Batched inputs: heatmaps N x J x H x W, frames mapped to [-1, 1].
struct Batch {
  TensorF heatmaps;
  TensorF images;
};

Batch make_batch(const std::vector<Example>& pool, const std::vector<int>& indices);

struct AdamPair {
  AdamState<float> gen;
  AdamState<float> disc;
};

struct StepStats {
  double disc_loss = 0;
  double gen_loss = 0;
  double gan = 0;
  double feature_matching = 0;
  double perceptual = 0;
};

/// One alternating iteration: a discriminator update on real vs detached fake
/// images, then a generator update against the updated discriminator.
StepStats train_step(ModelPair& model, AdamPair& adam, const FixedFeatureExtractor<float>& extractor,
                     const Batch& batch, double lr, const TrainConfig& cfg);

/// Indices into a K-frame pool for each of `t` iterations. Pools smaller than
/// the batch are repeated cyclically; larger pools are subsampled.
std::vector<std::vector<int>> finetune_batches(int k, int batch_size, int t, std::uint64_t seed);

struct FinetuneStats {
  long gen_steps = 0;
  long disc_steps = 0;
  StepStats last;
};

using StepCallback = std::function<void(int completed_steps, const ModelPair&)>;

/// Adapts a copy of `model` to `pool` (size K) with T iterations under the
/// half-constant, half-linear-decay schedule. The input is not modified.
ModelPair finetune(const ModelPair& model, const std::vector<Example>& pool, const Budget& budget, std::uint64_t seed,
                   const TrainConfig& cfg = {}, FinetuneStats* stats = nullptr, const StepCallback& on_step = {});

/// Generic model over every task's personalization pool; `epochs` passes with
/// per-epoch shuffling at a constant learning rate.
ModelPair pretrain(const ModelPair& init, const std::vector<TaskDataset>& tasks, const Skeleton& skeleton, int epochs,
                   double lr, std::uint64_t seed, const TrainConfig& cfg = {});

/// Which task and frames a meta-iteration uses, and the fine-tuning seed.
struct MetaIterationPlan {
  int task = 0;
  std::vector<int> frames;
  std::uint64_t finetune_seed = 0;
};

MetaIterationPlan plan_meta_iteration(std::uint64_t seed, int iteration, const std::vector<TaskDataset>& tasks, int k);

using MetaCallback = std::function<void(int iteration, double eps, const ModelPair&)>;

/// First-order meta-training of both networks: fine-tune a copy on K frames of
/// a sampled task, then interpolate the meta-parameters toward the result.
ModelPair metatrain(const ModelPair& init, const std::vector<TaskDataset>& tasks, const Skeleton& skeleton,
                    const MetaConfig& meta, const Budget& budget, std::uint64_t seed, const TrainConfig& cfg = {},
                    const MetaCallback& on_iteration = {});

/// Test-frame indices (absolute) used for evaluation of a task.
std::vector<int> test_frame_indices(const TaskDataset& task, int n_test, std::uint64_t seed);

/// Metrics of a generator against a task's frames.
MetricsReport evaluate_generator(const ModelPair& model, const TaskDataset& task, const Skeleton& skeleton,
                                 const std::vector<int>& frames, double sigma);

struct Personalized {
  ModelPair model;
  std::vector<int> pool_frames;
};

/// Fine-tunes `init` on K frames drawn from the task's personalization pool.
Personalized personalize(const ModelPair& init, const TaskDataset& task, const Skeleton& skeleton,
                         const Budget& budget, std::uint64_t seed, const TrainConfig& cfg = {},
                         const StepCallback& on_step = {});

/// Samples K pool frames, fine-tunes from `init`, and reports metrics on
/// n_test test frames (all test frames when fewer are available).
MetricsReport personalize_and_eval(const ModelPair& init, const TaskDataset& task, const Skeleton& skeleton,
                                   const Budget& budget, int n_test, std::uint64_t seed, const TrainConfig& cfg = {});

/// Figure masks of a task's frames, re-rendered from the stored poses.
std::vector<Eigen::Array<bool, Eigen::Dynamic, 1>> figure_masks(const TaskDataset& task, const Skeleton& skeleton,
                                                                int height, int width, const std::vector<int>& frames);

}  // namespace metapix
