#pragma once

#include "metapix/autodiff.hpp"
#include "metapix/params.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace metapix {

inline constexpr double kLeakySlope = 0.2;

/// Encoder-decoder generator: `depth` pool+conv stages down, the same number
/// of upsample+conv stages up with additive skips, tanh output.
struct GeneratorConfig {
  int in_channels = 8;
  int base_width = 32;
  int depth = 3;
  int out_channels = 3;

  bool operator==(const GeneratorConfig&) const = default;
};

/// Patch discriminator over the channel concatenation of heatmap and image.
struct DiscriminatorConfig {
  int in_channels = 11;
  int base_width = 32;
  int depth = 3;

  bool operator==(const DiscriminatorConfig&) const = default;
};

/// Untrained convolutional features standing in for a pretrained perceptual
/// network.
struct FeatureExtractorConfig {
  std::uint64_t seed = 1234;
  std::vector<int> widths{16, 32, 32};

  bool operator==(const FeatureExtractorConfig&) const = default;
};

struct LossWeights {
  double gan = 1.0;
  double feature_matching = 1.0;
  double perceptual = 1.0;

  bool operator==(const LossWeights&) const = default;
};

/// Channel count at a pyramid level; widths double per level up to 4x base.
inline int level_width(int base, int level) { return base * std::min(1 << level, 4); }

namespace detail {

template <class Scalar>
void add_conv(ParamSet<Scalar>& params, const std::string& prefix, int c_in, int c_out, int k, bool bias,
              std::mt19937_64& rng) {
  // He-uniform for leaky-ReLU fan-in.
  const double fan_in = double(c_in * k * k);
  const double bound = std::sqrt(6.0 / ((1.0 + kLeakySlope * kLeakySlope) * fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<Scalar> kernel({c_out, c_in, k, k});
  for (Index i = 0; i < kernel.size(); ++i) kernel[i] = Scalar(dist(rng));
  params.add(prefix + ".kernel", std::move(kernel));
  if (bias) params.add(prefix + ".bias", Tensor<Scalar>::zeros({c_out}));
}

inline void check_spatial(Index h, Index w, int depth, const char* who) {
  const Index m = Index(1) << depth;
  if (h % m || w % m) {
    throw std::invalid_argument(std::string(who) + ": spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                                " is not divisible by 2^depth = " + std::to_string(m));
  }
}

}  // namespace detail

/// Resolves parameter names to tape nodes, either tracked (gradients flow into
/// the ParamSet) or frozen (read-only constants).
template <class Scalar>
class Binder {
 public:
  static Binder trainable(Tape<Scalar>& tape, ParamSet<Scalar>& params) { return Binder(tape, &params, params); }
  static Binder frozen(Tape<Scalar>& tape, const ParamSet<Scalar>& params) { return Binder(tape, nullptr, params); }

  Var<Scalar> operator()(const std::string& name) const {
    if (mutable_) return tape_->leaf(mutable_->at(name));
    return tape_->reference(params_->at(name));
  }

  Tape<Scalar>& tape() const { return *tape_; }

 private:
  Binder(Tape<Scalar>& tape, ParamSet<Scalar>* m, const ParamSet<Scalar>& p) : tape_(&tape), mutable_(m), params_(&p) {}
  Tape<Scalar>* tape_;
  ParamSet<Scalar>* mutable_;
  const ParamSet<Scalar>* params_;
};

template <class Scalar>
Var<Scalar> conv_block(const Binder<Scalar>& p, const std::string& prefix, Var<Scalar> x, bool activate = true) {
  Var<Scalar> y = add_channel_bias(conv2d(x, p(prefix + ".kernel"), 1, 1), p(prefix + ".bias"));
  return activate ? leaky_relu(y, Scalar(kLeakySlope)) : y;
}

// ---------------------------------------------------------------------------
// Generator

template <class Scalar>
ParamSet<Scalar> init_generator(const GeneratorConfig& cfg, std::uint64_t seed) {
  if (cfg.depth < 0 || cfg.base_width < 1 || cfg.in_channels < 1 || cfg.out_channels < 1) {
    throw std::invalid_argument("invalid generator config");
  }
  std::mt19937_64 rng(seed);
  ParamSet<Scalar> p;
  detail::add_conv(p, "gen.enc0", cfg.in_channels, level_width(cfg.base_width, 0), 3, true, rng);
  for (int i = 1; i <= cfg.depth; ++i) {
    detail::add_conv(p, "gen.enc" + std::to_string(i), level_width(cfg.base_width, i - 1),
                     level_width(cfg.base_width, i), 3, true, rng);
  }
  for (int i = cfg.depth - 1; i >= 0; --i) {
    detail::add_conv(p, "gen.dec" + std::to_string(i), level_width(cfg.base_width, i + 1),
                     level_width(cfg.base_width, i), 3, true, rng);
  }
  detail::add_conv(p, "gen.out", level_width(cfg.base_width, 0), cfg.out_channels, 3, true, rng);
  return p;
}

/// N x J x H x W heatmaps to N x 3 x H x W images in (-1, 1).
template <class Scalar>
Var<Scalar> generator_forward(const Binder<Scalar>& p, const GeneratorConfig& cfg, Var<Scalar> heatmaps) {
  const Shape& s = heatmaps.shape();
  detail::require_rank4(s, "generator input");
  if (s[1] != cfg.in_channels) {
    throw std::invalid_argument("generator expects " + std::to_string(cfg.in_channels) + " input channels, got " +
                                shape_str(s));
  }
  detail::check_spatial(s[2], s[3], cfg.depth, "generator");
  std::vector<Var<Scalar>> skips;
  Var<Scalar> h = conv_block(p, "gen.enc0", heatmaps);
  skips.push_back(h);
  for (int i = 1; i <= cfg.depth; ++i) {
    h = conv_block(p, "gen.enc" + std::to_string(i), avg_pool2x(h));
    skips.push_back(h);
  }
  for (int i = cfg.depth - 1; i >= 0; --i) {
    h = conv_block(p, "gen.dec" + std::to_string(i), upsample2x(h)) + skips[std::size_t(i)];
  }
  return tanh(conv_block(p, "gen.out", h, false));
}

// ---------------------------------------------------------------------------
// Discriminator

template <class Scalar>
ParamSet<Scalar> init_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  if (cfg.depth < 0 || cfg.base_width < 1 || cfg.in_channels < 1) throw std::invalid_argument("invalid discriminator config");
  std::mt19937_64 rng(seed);
  ParamSet<Scalar> p;
  detail::add_conv(p, "disc.conv0", cfg.in_channels, level_width(cfg.base_width, 0), 3, true, rng);
  for (int i = 1; i <= cfg.depth; ++i) {
    detail::add_conv(p, "disc.conv" + std::to_string(i), level_width(cfg.base_width, i - 1),
                     level_width(cfg.base_width, i), 3, true, rng);
  }
  detail::add_conv(p, "disc.score", level_width(cfg.base_width, cfg.depth), 1, 3, true, rng);
  return p;
}

template <class Scalar>
struct DiscriminatorOutput {
  Var<Scalar> scores;                  // N x 1 x H/2^depth x W/2^depth, unbounded
  std::vector<Var<Scalar>> features;   // activations of every conv stage
};

template <class Scalar>
DiscriminatorOutput<Scalar> discriminator_forward(const Binder<Scalar>& p, const DiscriminatorConfig& cfg,
                                                  Var<Scalar> heatmaps, Var<Scalar> images) {
  if (heatmaps.shape().size() != 4 || images.shape().size() != 4 || heatmaps.shape()[0] != images.shape()[0] ||
      heatmaps.shape()[2] != images.shape()[2] || heatmaps.shape()[3] != images.shape()[3]) {
    throw std::invalid_argument("discriminator inputs disagree: heatmaps " + shape_str(heatmaps.shape()) +
                                " vs images " + shape_str(images.shape()));
  }
  Var<Scalar> x = concat_channels(heatmaps, images);
  if (x.shape()[1] != cfg.in_channels) {
    throw std::invalid_argument("discriminator expects " + std::to_string(cfg.in_channels) + " channels, got " +
                                shape_str(x.shape()));
  }
  detail::check_spatial(x.shape()[2], x.shape()[3], cfg.depth, "discriminator");
  DiscriminatorOutput<Scalar> out;
  Var<Scalar> h = conv_block(p, "disc.conv0", x);
  out.features.push_back(h);
  for (int i = 1; i <= cfg.depth; ++i) {
    h = conv_block(p, "disc.conv" + std::to_string(i), avg_pool2x(h));
    out.features.push_back(h);
  }
  out.scores = conv_block(p, "disc.score", h, false);
  return out;
}

// ---------------------------------------------------------------------------
// Fixed feature extractor

template <class Scalar>
class FixedFeatureExtractor {
 public:
  explicit FixedFeatureExtractor(FeatureExtractorConfig cfg = {}) : config_(std::move(cfg)) {
    if (config_.widths.empty()) throw std::invalid_argument("feature extractor needs at least one layer");
    std::mt19937_64 rng(config_.seed);
    int c_in = 3;
    for (std::size_t i = 0; i < config_.widths.size(); ++i) {
      detail::add_conv(params_, "feat.conv" + std::to_string(i), c_in, config_.widths[i], 3, true, rng);
      c_in = config_.widths[i];
    }
  }

  const FeatureExtractorConfig& config() const { return config_; }
  const ParamSet<Scalar>& params() const { return params_; }

  /// Activations of every layer for N x 3 x H x W images in [-1, 1].
  std::vector<Var<Scalar>> features(Var<Scalar> images) const {
    const auto p = Binder<Scalar>::frozen(*images.tape, params_);
    std::vector<Var<Scalar>> out;
    Var<Scalar> h = images;
    for (std::size_t i = 0; i < config_.widths.size(); ++i) {
      if (i > 0) h = avg_pool2x(h);
      h = conv_block(p, "feat.conv" + std::to_string(i), h);
      out.push_back(h);
    }
    return out;
  }

 private:
  FeatureExtractorConfig config_;
  ParamSet<Scalar> params_;
};

// ---------------------------------------------------------------------------
// Losses

enum class GanSide { generator, discriminator };

/// Least-squares GAN objective.
template <class Scalar>
Var<Scalar> gan_loss(Var<Scalar> scores_real, Var<Scalar> scores_fake, GanSide side) {
  if (side == GanSide::generator) return squared_distance_to(scores_fake, Scalar(1));
  return squared_distance_to(scores_real, Scalar(1)) + squared_distance_to(scores_fake, Scalar(0));
}

/// Mean over layers of the mean absolute difference; `reference` is treated
/// as a constant target.
template <class Scalar>
Var<Scalar> layerwise_l1(const std::vector<Var<Scalar>>& reference, const std::vector<Var<Scalar>>& candidate) {
  if (reference.size() != candidate.size() || reference.empty()) {
    throw std::invalid_argument("layerwise_l1 needs matching non-empty feature lists");
  }
  Var<Scalar> total = l1_distance(candidate[0], detach(reference[0]));
  for (std::size_t i = 1; i < reference.size(); ++i) total = total + l1_distance(candidate[i], detach(reference[i]));
  return scale(total, Scalar(1.0 / double(reference.size())));
}

template <class Scalar>
Var<Scalar> feature_matching_loss(const Binder<Scalar>& disc, const DiscriminatorConfig& cfg, Var<Scalar> heatmaps,
                                  Var<Scalar> real, Var<Scalar> fake) {
  const auto real_out = discriminator_forward(disc, cfg, heatmaps, real);
  const auto fake_out = discriminator_forward(disc, cfg, heatmaps, fake);
  return layerwise_l1(real_out.features, fake_out.features);
}

template <class Scalar>
Var<Scalar> perceptual_loss(const FixedFeatureExtractor<Scalar>& extractor, Var<Scalar> real, Var<Scalar> fake) {
  return layerwise_l1(extractor.features(real), extractor.features(fake));
}

/// Weighted generator objective pieces for one batch.
template <class Scalar>
struct GeneratorObjective {
  Var<Scalar> total;
  Var<Scalar> gan;
  Var<Scalar> feature_matching;
  Var<Scalar> perceptual;
};

/// Generator loss given the discriminator's view of real and fake images.
/// Real-side activations are constants; gradients reach `fake` and, if
/// tracked, the discriminator parameters.
template <class Scalar>
GeneratorObjective<Scalar> generator_objective(const DiscriminatorOutput<Scalar>& d_real,
                                               const DiscriminatorOutput<Scalar>& d_fake,
                                               const FixedFeatureExtractor<Scalar>& extractor, Var<Scalar> real,
                                               Var<Scalar> fake, const LossWeights& w) {
  GeneratorObjective<Scalar> out;
  out.gan = gan_loss(d_real.scores, d_fake.scores, GanSide::generator);
  out.feature_matching = layerwise_l1(d_real.features, d_fake.features);
  out.perceptual = perceptual_loss(extractor, real, fake);
  out.total = scale(out.gan, Scalar(w.gan)) + scale(out.feature_matching, Scalar(w.feature_matching)) +
              scale(out.perceptual, Scalar(w.perceptual));
  return out;
}

template <class Scalar>
struct TotalLosses {
  Scalar generator;
  Scalar discriminator;
};

/// Both objectives on one batch of heatmaps and real images (in [-1, 1]),
/// evaluated without recording gradients for later use.
template <class Scalar>
TotalLosses<Scalar> total_losses(const ParamSet<Scalar>& gen, const GeneratorConfig& gcfg,
                                 const ParamSet<Scalar>& disc, const DiscriminatorConfig& dcfg,
                                 const FixedFeatureExtractor<Scalar>& extractor, const Tensor<Scalar>& heatmaps,
                                 const Tensor<Scalar>& real, const LossWeights& weights = {}) {
  Tape<Scalar> tape;
  const auto g = Binder<Scalar>::frozen(tape, gen);
  const auto d = Binder<Scalar>::frozen(tape, disc);
  Var<Scalar> hm = tape.constant(heatmaps);
  Var<Scalar> x = tape.constant(real);
  Var<Scalar> fake = generator_forward(g, gcfg, hm);
  const auto d_real = discriminator_forward(d, dcfg, hm, x);
  const auto d_fake = discriminator_forward(d, dcfg, hm, detach(fake));
  const auto gobj = generator_objective(d_real, discriminator_forward(d, dcfg, hm, fake), extractor, x, fake, weights);
  return {gobj.total.value().item(), gan_loss(d_real.scores, d_fake.scores, GanSide::discriminator).value().item()};
}

/// Runs the generator without a gradient tape: N x J x H x W -> N x 3 x H x W.
template <class Scalar>
Tensor<Scalar> generate(const ParamSet<Scalar>& gen, const GeneratorConfig& cfg, const Tensor<Scalar>& heatmaps) {
  Tape<Scalar> tape;
  return generator_forward(Binder<Scalar>::frozen(tape, gen), cfg, tape.constant(heatmaps)).value();
}

}  // namespace metapix
