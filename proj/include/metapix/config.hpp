#pragma once

#include "metapix/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace metapix {

using json = nlohmann::json;

struct DataConfig {
  std::uint64_t seed = 7;
  int tasks = 20;
  int frames = 200;
  int size = 32;
  int joints = 8;
  double sigma = 1.5;
  double split_ratio = 0.85;
};

struct ModelWidths {
  int gen_width = 32;
  int disc_width = 32;
  int depth = 3;
  std::uint64_t extractor_seed = 1234;
  std::vector<int> extractor_widths{16, 32, 32};
};

struct PretrainConfig {
  int epochs = 10;
  double lr = 0.0002;
};

struct EvalConfig {
  int n_test = 64;
  int seeds = 5;
};

struct SweepConfig {
  std::vector<int> k{1, 3, 5, 10, 20};
  std::vector<int> t{20, 40, 100, 200};
  std::vector<std::string> inits{"random", "pretrain", "metapix"};
  int cross_k = 5;  // K the metapix checkpoint was meta-trained at
};

/// File locations a command reads and writes. Part of the effective config so
/// a run can be repeated from its report alone.
struct IoConfig {
  std::string data;
  std::string init;
  std::string out;
  std::string random;
  std::string pretrain;
  std::string metapix;
  std::vector<std::string> extra;  // additional sweep inits as label=path
  std::string label = "init";      // init label used by evaluate
  std::string mode = "models";
  int rows = 4;
  int task = 0;
};

/// Every tunable of the pipeline. Serialized as nested JSON sections.
struct AppConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  ModelWidths model;
  LossWeights loss;
  AdamConfig adam;
  Budget budget;
  PretrainConfig pretrain;
  MetaConfig meta;
  EvalConfig eval;
  SweepConfig sweep;
  IoConfig io;

  CorpusConfig corpus_config() const;
  ModelConfig model_config() const;
  TrainConfig train_config() const;

  /// Throws if a value is outside its valid range.
  void validate() const;
};

json to_json_value(const AppConfig& config);

/// Overlays `overrides` on the defaults. Keys absent from the default layout
/// are rejected with their dotted path.
AppConfig config_from_json(const json& overrides);

/// Accepts either a bare config document or a run report carrying one.
AppConfig load_config_file(const std::filesystem::path& path);

json model_config_json(const ModelConfig& config);
ModelConfig model_config_from_json(const json& j);

/// Artifact version: release number plus the git description of the build.
const char* version_string();

struct RunReport {
  std::string command;
  json config;
  std::uint64_t seed = 0;
  double wall_clock_seconds = 0.0;
  std::vector<std::string> outputs;
  json results;  // command-specific summary, omitted when null
};

json to_json_value(const RunReport& report);

/// Drops timing fields, which legitimately differ between otherwise identical runs.
json without_timing(json report);

void write_json(const std::filesystem::path& path, const json& value);
json read_json_file(const std::filesystem::path& path);

}  // namespace metapix
