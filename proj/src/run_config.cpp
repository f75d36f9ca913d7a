#include "smoea/run_config.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>

#include "smoea/error.hpp"

namespace smoea {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const ModelSource& m) {
  j = json{{"path", m.path}, {"builtin", m.builtin}, {"layers", m.layers}, {"seed", m.seed}};
}

void from_json(const json& j, ModelSource& m) {
  ModelSource d;
  m.path = j.value("path", d.path);
  m.builtin = j.value("builtin", d.builtin);
  m.layers = j.value("layers", d.layers);
  m.seed = j.value("seed", d.seed);
}

void to_json(json& j, const DatasetSource& s) {
  j = json{{"kind", s.kind},
           {"path", s.path},
           {"synthetic", s.synthetic},
           {"normalization", s.normalization},
           {"mean", s.mean},
           {"stddev", s.stddev}};
}

void from_json(const json& j, DatasetSource& s) {
  DatasetSource d;
  s.kind = j.value("kind", d.kind);
  s.path = j.value("path", d.path);
  s.synthetic = j.value("synthetic", d.synthetic);
  s.normalization = j.value("normalization", d.normalization);
  s.mean = j.value("mean", d.mean);
  s.stddev = j.value("stddev", d.stddev);
}

void to_json(json& j, const BaselineSettings& b) {
  j = json{{"criterion", b.criterion},
           {"fraction", b.fraction},
           {"match_report", b.match_report},
           {"seed", b.seed}};
}

void from_json(const json& j, BaselineSettings& b) {
  BaselineSettings d;
  b.criterion = j.value("criterion", d.criterion);
  b.fraction = j.value("fraction", d.fraction);
  b.match_report = j.value("match_report", d.match_report);
  b.seed = j.value("seed", d.seed);
}

void to_json(json& j, const RunConfig& cfg) {
  j = json{{"model", cfg.model},
           {"dataset", cfg.dataset},
           {"plan", cfg.plan},
           {"evolution", cfg.evolution},
           {"finetune", cfg.finetune},
           {"train", cfg.train},
           {"calibration_size", cfg.calibration_size},
           {"calibration_seed", cfg.calibration_seed},
           {"target_retention", nullptr},
           {"baseline", cfg.baseline},
           {"sweep_fractions", cfg.sweep_fractions},
           {"output_dir", cfg.output_dir},
           {"deterministic", cfg.deterministic}};
  if (cfg.target_retention) j["target_retention"] = *cfg.target_retention;
}

void from_json(const json& j, RunConfig& cfg) {
  RunConfig d;
  cfg.model = j.value("model", d.model);
  cfg.dataset = j.value("dataset", d.dataset);
  cfg.plan = j.value("plan", d.plan);
  cfg.evolution = j.value("evolution", d.evolution);
  cfg.finetune = j.value("finetune", d.finetune);
  cfg.train = j.value("train", d.train);
  cfg.calibration_size = j.value("calibration_size", d.calibration_size);
  cfg.calibration_seed = j.value("calibration_seed", d.calibration_seed);
  cfg.target_retention.reset();
  if (j.contains("target_retention") && !j.at("target_retention").is_null()) {
    cfg.target_retention = j.at("target_retention").get<double>();
  }
  cfg.baseline = j.value("baseline", d.baseline);
  cfg.sweep_fractions = j.value("sweep_fractions", d.sweep_fractions);
  cfg.output_dir = j.value("output_dir", d.output_dir);
  cfg.deterministic = j.value("deterministic", d.deterministic);
}

RunConfig parse_run_config(std::string_view text) {
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw Error(ErrorCode::malformed_config, "config must be a JSON object");
    RunConfig cfg = j.get<RunConfig>();
    cfg.evolution.validate();
    cfg.finetune.validate();
    cfg.train.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::malformed_config, std::string("config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::invalid_argument) {
      throw Error(ErrorCode::malformed_config, std::string("config: ") + e.what());
    }
    throw;
  }
}

RunConfig load_run_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::io, "cannot open config " + file.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config(buffer.str());
}

DatasetSplit load_dataset(const DatasetSource& source) {
  DatasetSplit split;
  if (source.kind == "synthetic") {
    split = generate_synthetic(source.synthetic);
  } else if (source.kind == "cifar10-binary") {
    split = load_cifar10(source.path);
  } else {
    throw Error(ErrorCode::malformed_config, "unknown dataset kind '" + source.kind + "'");
  }
  if (source.normalization == "none") return split;
  ChannelStats stats;
  if (source.normalization == "dataset") {
    stats = compute_channel_stats(split.train);
  } else if (source.normalization == "fixed") {
    stats = {source.mean, source.stddev};
  } else {
    throw Error(ErrorCode::malformed_config,
                "unknown normalization '" + source.normalization + "'");
  }
  normalize(split.train, stats);
  normalize(split.test, stats);
  return split;
}

InputGeometry dataset_geometry(const DatasetSource& source) {
  if (source.kind == "synthetic") {
    return {source.synthetic.channels, source.synthetic.height, source.synthetic.width};
  }
  return {3, 32, 32};
}

std::size_t dataset_classes(const DatasetSource& source) {
  return source.kind == "synthetic" ? source.synthetic.classes : 10;
}

Network load_network(const ModelSource& source, const DatasetSource& data) {
  if (!source.path.empty()) return load_model(source.path);
  if (source.builtin == "vgg14") return build_vgg14(source.seed);
  if (source.builtin == "cnn") {
    return build_cnn(parse_cnn_config(source.layers), dataset_geometry(data),
                     dataset_classes(data), source.seed);
  }
  throw Error(ErrorCode::malformed_config, "unknown builtin model '" + source.builtin + "'");
}

SmoeaOptions smoea_options(const RunConfig& cfg) {
  SmoeaOptions opts;
  opts.evolution = cfg.evolution;
  opts.finetune = cfg.finetune;
  opts.calibration_size = cfg.calibration_size;
  opts.calibration_seed = cfg.calibration_seed;
  opts.selection.target_retention = cfg.target_retention;
  return opts;
}

RunDirectory::RunDirectory(const std::string& command, const std::string& explicit_dir) {
  std::error_code ec;
  if (!explicit_dir.empty()) {
    root_ = explicit_dir;
  } else {
    const char* env = std::getenv(kOutputRootEnv);
    const fs::path parent = env && *env ? fs::path(env) : fs::path("runs");
    for (std::size_t n = 1;; ++n) {
      root_ = parent / (command + "-" + std::to_string(n));
      if (!fs::exists(root_)) break;
    }
  }
  fs::create_directories(root_ / "fronts", ec);
  if (ec) throw Error(ErrorCode::io, "cannot create " + root_.string() + ": " + ec.message());
  log_.open(root_ / "log.txt");
  if (!log_) throw Error(ErrorCode::io, "cannot write " + (root_ / "log.txt").string());
  artifacts_.push_back("log.txt");
}

void RunDirectory::echo_config(const RunConfig& cfg) {
  config_ = cfg;
  std::ofstream out(root_ / "config.echo");
  out << config_.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::io, "cannot write config.echo");
  record("config.echo");
}

void RunDirectory::log(const std::string& line) { log_ << line << '\n' << std::flush; }

void RunDirectory::write_json(const std::string& relative, const json& value) {
  std::ofstream out(root_ / relative);
  out << value.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::io, "cannot write " + relative);
  record(relative);
}

void RunDirectory::write_front(std::size_t ordinal, std::span<const Individual> front) {
  const std::string relative = "fronts/layer_" + std::to_string(ordinal) + ".csv";
  std::ofstream out(root_ / relative);
  write_front_csv(out, front);
  if (!out) throw Error(ErrorCode::io, "cannot write " + relative);
  record(relative);
}

void RunDirectory::save_network(const Network& net) {
  save_model(net, root_ / "model");
  record("model/manifest.json");
}

void RunDirectory::record(const std::string& relative) {
  if (std::find(artifacts_.begin(), artifacts_.end(), relative) == artifacts_.end()) {
    artifacts_.push_back(relative);
  }
}

void RunDirectory::finish(const std::string& command) {
  json manifest{{"command", command}, {"artifacts", artifacts_}, {"config", config_}};
  std::ofstream out(root_ / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::io, "cannot write manifest.json");
}

}  // namespace smoea
