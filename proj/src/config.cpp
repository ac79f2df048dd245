#include "metapix/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#ifndef METAPIX_VERSION
#define METAPIX_VERSION "0.1.0+unknown"
#endif

namespace metapix {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DataConfig, seed, tasks, frames, size, joints, sigma, split_ratio)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ModelWidths, gen_width, disc_width, depth, extractor_seed, extractor_widths)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LossWeights, gan, feature_matching, perceptual)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AdamConfig, beta1, beta2, epsilon)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Budget, k, t, batch_size, base_lr)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PretrainConfig, epochs, lr)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MetaConfig, eps0, meta_iterations, generator_only, literal_sign)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvalConfig, n_test, seeds)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SweepConfig, k, t, inits, cross_k)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(IoConfig, data, init, out, random, pretrain, metapix, extra, label, mode, rows, task)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AppConfig, seed, data, model, loss, adam, budget, pretrain, meta, eval, sweep, io)

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GeneratorConfig, in_channels, base_width, depth, out_channels)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DiscriminatorConfig, in_channels, base_width, depth)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(FeatureExtractorConfig, seed, widths)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ModelConfig, generator, discriminator, extractor)

namespace {

void reject_unknown_keys(const json& given, const json& reference, const std::string& path) {
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!reference.contains(it.key())) throw std::invalid_argument("unknown config key '" + key + "'");
    const json& ref = reference.at(it.key());
    if (ref.is_object()) {
      if (!it->is_object()) throw std::invalid_argument("config key '" + key + "' must be an object");
      reject_unknown_keys(*it, ref, key);
    }
  }
}

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument("invalid config: " + message);
}

}  // namespace

CorpusConfig AppConfig::corpus_config() const {
  CorpusConfig c;
  c.seed = data.seed;
  c.height = data.size;
  c.width = data.size;
  c.joints = data.joints;
  c.sigma = data.sigma;
  c.split_ratio = data.split_ratio;
  return c;
}

ModelConfig AppConfig::model_config() const {
  ModelConfig c = ModelConfig::for_joints(data.joints, model.gen_width, model.disc_width, model.depth);
  c.extractor.seed = model.extractor_seed;
  c.extractor.widths = model.extractor_widths;
  return c;
}

TrainConfig AppConfig::train_config() const {
  TrainConfig c;
  c.weights = loss;
  c.adam = adam;
  c.batch_size = budget.batch_size;
  c.heatmap_sigma = data.sigma;
  return c;
}

void AppConfig::validate() const {
  require(data.tasks >= 1, "data.tasks must be at least 1");
  require(data.frames >= 2, "data.frames must be at least 2");
  require(data.size >= 11 && data.size <= 128, "data.size must lie in [11, 128]");
  require(data.joints == 8 || data.joints == 12, "data.joints must be 8 or 12");
  require(data.sigma > 0, "data.sigma must be positive");
  require(data.split_ratio > 0 && data.split_ratio < 1, "data.split_ratio must lie in (0, 1)");
  require(model.gen_width >= 1 && model.disc_width >= 1, "network widths must be positive");
  require(model.depth >= 1 && model.depth <= 6, "model.depth must lie in [1, 6]");
  require(data.size % (1 << model.depth) == 0, "data.size must be divisible by 2^model.depth");
  require(!model.extractor_widths.empty(), "model.extractor_widths must not be empty");
  for (int w : model.extractor_widths) require(w >= 1, "extractor widths must be positive");
  require(loss.gan >= 0 && loss.feature_matching >= 0 && loss.perceptual >= 0, "loss weights must be non-negative");
  require(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1, "adam betas must lie in [0, 1)");
  require(adam.epsilon > 0, "adam.epsilon must be positive");
  require(budget.k >= 1, "budget.k must be at least 1");
  require(budget.t >= 1, "budget.t must be at least 1");
  require(budget.batch_size >= 1, "budget.batch_size must be at least 1");
  require(budget.base_lr >= 0, "budget.base_lr must be non-negative");
  require(pretrain.epochs >= 0, "pretrain.epochs must be non-negative");
  require(pretrain.lr >= 0, "pretrain.lr must be non-negative");
  require(meta.eps0 > 0 && meta.eps0 <= 1, "meta.eps0 must lie in (0, 1]");
  require(meta.meta_iterations >= 0, "meta.meta_iterations must be non-negative");
  require(eval.n_test >= 1, "eval.n_test must be at least 1");
  require(eval.seeds >= 1, "eval.seeds must be at least 1");
  require(!sweep.k.empty() && !sweep.t.empty() && !sweep.inits.empty(), "sweep axes must not be empty");
  for (int k : sweep.k) require(k >= 1, "sweep.k values must be at least 1");
  for (int t : sweep.t) require(t >= 1, "sweep.t values must be at least 1");
  for (const auto& init : sweep.inits) {
    require(init == "random" || init == "pretrain" || init == "metapix", "unknown init kind '" + init + "'");
  }
  require(sweep.cross_k >= 1, "sweep.cross_k must be at least 1");
  require(io.mode == "models" || io.mode == "finetune-trajectory", "io.mode must be models or finetune-trajectory");
  require(io.rows >= 1, "io.rows must be at least 1");
  require(io.task >= 0, "io.task must be non-negative");
}

json to_json_value(const AppConfig& config) { return json(config); }

AppConfig config_from_json(const json& overrides) {
  if (!overrides.is_object()) throw std::invalid_argument("config must be a JSON object");
  json merged = json(AppConfig{});
  reject_unknown_keys(overrides, merged, "");
  merged.merge_patch(overrides);
  AppConfig config;
  try {
    config = merged.get<AppConfig>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config has a value of the wrong type: ") + e.what());
  }
  config.validate();
  return config;
}

AppConfig load_config_file(const std::filesystem::path& path) {
  const json doc = read_json_file(path);
  if (doc.is_object() && doc.contains("command") && doc.contains("config")) return config_from_json(doc.at("config"));
  return config_from_json(doc);
}

json model_config_json(const ModelConfig& config) { return json(config); }

ModelConfig model_config_from_json(const json& j) { return j.get<ModelConfig>(); }

const char* version_string() { return METAPIX_VERSION; }

json to_json_value(const RunReport& report) {
  json out{{"command", report.command},
           {"config", report.config},
           {"version", version_string()},
           {"wall_clock_seconds", report.wall_clock_seconds},
           {"seed", report.seed},
           {"outputs", report.outputs}};
  if (!report.results.is_null()) out["results"] = report.results;
  return out;
}

json without_timing(json report) {
  if (report.is_object()) {
    report.erase("wall_clock_seconds");
    report.erase("runtime_seconds");
  }
  return report;
}

void write_json(const std::filesystem::path& path, const json& value) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << value.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return json::parse(buffer.str());
  } catch (const json::parse_error& e) {
    throw std::runtime_error("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

}  // namespace metapix
