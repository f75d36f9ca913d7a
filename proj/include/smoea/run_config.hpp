#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "smoea/dataset.hpp"
#include "smoea/evolution.hpp"
#include "smoea/network.hpp"
#include "smoea/pipeline.hpp"

namespace smoea {

// Where the network comes from: a saved model directory, or a builtin
// architecture ("vgg14" or "cnn" with a layer string) initialised from `seed`.
struct ModelSource {
  std::string path;
  std::string builtin = "cnn";
  std::string layers = "8,16,M,16,16,M";
  std::uint64_t seed = 0;
};

struct DatasetSource {
  std::string kind = "synthetic";  // synthetic | cifar10-binary
  std::string path;                // cifar10-binary directory
  SyntheticParams synthetic;
  // "dataset" computes per-channel mean/std on the training split, "none"
  // leaves pixels as loaded, "fixed" uses `mean` and `stddev`.
  std::string normalization = "dataset";
  std::vector<double> mean;
  std::vector<double> stddev;
};

struct BaselineSettings {
  std::string criterion = "rand";
  // Uniform retained fraction for every planned layer, used unless
  // `match_report` names a report.json whose per-layer counts are reused.
  double fraction = 0.5;
  std::string match_report;
  std::uint64_t seed = 0;
};

struct RunConfig {
  ModelSource model;
  DatasetSource dataset;
  GroupPlan plan;
  EvolutionConfig evolution;
  FineTuneConfig finetune;
  // Initial training runs to convergence; pruning starts from a settled model.
  FineTuneConfig train = FineTuneConfig{0.01, 24, {12, 18}, 32, 0.9, 0.0, 0};
  std::size_t calibration_size = 128;
  std::uint64_t calibration_seed = 0;
  std::optional<double> target_retention;
  BaselineSettings baseline;
  std::vector<double> sweep_fractions = {0.25, 0.35, 0.45, 0.55, 0.65, 0.75};
  std::string output_dir;
  bool deterministic = true;
};

void to_json(nlohmann::json& j, const ModelSource& m);
void from_json(const nlohmann::json& j, ModelSource& m);
void to_json(nlohmann::json& j, const DatasetSource& s);
void from_json(const nlohmann::json& j, DatasetSource& s);
void to_json(nlohmann::json& j, const BaselineSettings& b);
void from_json(const nlohmann::json& j, BaselineSettings& b);
void to_json(nlohmann::json& j, const RunConfig& cfg);
void from_json(const nlohmann::json& j, RunConfig& cfg);

/// Reads a JSON config file. Missing file → io, bad syntax or types →
/// malformed-config.
RunConfig load_run_config(const std::filesystem::path& file);
/// Same, from text already in memory.
RunConfig parse_run_config(std::string_view text);

DatasetSplit load_dataset(const DatasetSource& source);
/// Input geometry and class count implied by a dataset source.
InputGeometry dataset_geometry(const DatasetSource& source);
std::size_t dataset_classes(const DatasetSource& source);

Network load_network(const ModelSource& source, const DatasetSource& data);

SmoeaOptions smoea_options(const RunConfig& cfg);

// Environment variable naming the default parent of run directories.
inline constexpr const char* kOutputRootEnv = "SMOEA_OUTPUT_ROOT";

/// A fresh output directory holding config.echo, log.txt, model/, fronts/,
/// report.json and manifest.json.
class RunDirectory {
 public:
  /// `explicit_dir` wins; otherwise <root>/<command>-<n> under the
  /// environment root (or "runs").
  RunDirectory(const std::string& command, const std::string& explicit_dir);

  const std::filesystem::path& path() const noexcept { return root_; }

  void echo_config(const RunConfig& cfg);
  void log(const std::string& line);
  void write_json(const std::string& relative, const nlohmann::json& value);
  void write_front(std::size_t ordinal, std::span<const Individual> front);
  void save_network(const Network& net);
  void record(const std::string& relative);
  /// Writes manifest.json listing every artifact and the echoed config.
  void finish(const std::string& command);

 private:
  std::filesystem::path root_;
  std::ofstream log_;
  std::vector<std::string> artifacts_;
  nlohmann::json config_;
};

}  // namespace smoea
