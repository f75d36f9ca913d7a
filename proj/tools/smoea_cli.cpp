// smoea: train toy models, evolve per-layer masks, run pruning pipelines and
// baselines, and export reports.

#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "smoea/error.hpp"
#include "smoea/run_config.hpp"

namespace {

using namespace smoea;
using nlohmann::json;

struct Overrides {
  std::string config;
  std::string out;
  std::string model;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::size_t> generations;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> l0;
  std::vector<std::size_t> blocks;
  bool blocks_set = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "JSON run configuration");
  cmd->add_option("-o,--out", o.out, "run directory (default: $SMOEA_OUTPUT_ROOT/<command>-<n>)");
  cmd->add_option("-m,--model", o.model, "saved model directory, overrides model.path");
  cmd->add_option("--seed", o.seed, "evolution, fine-tune and baseline seed");
  cmd->add_option("--threads", o.threads, "evaluation workers");
  cmd->add_option("--generations", o.generations, "evolution generations");
  cmd->add_option("--epochs", o.epochs, "fine-tune epochs");
  cmd->add_option("--l0", o.l0, "first pruned conv ordinal");
  cmd->add_option("--blocks", o.blocks, "blocks per group, e.g. --blocks 2 2");
}

RunConfig resolve(const Overrides& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (!o.model.empty()) cfg.model.path = o.model;
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (o.seed) {
    cfg.evolution.seed = *o.seed;
    cfg.finetune.seed = *o.seed;
    cfg.baseline.seed = *o.seed;
  }
  if (o.threads) cfg.evolution.threads = *o.threads;
  if (o.generations) cfg.evolution.generations = *o.generations;
  if (o.epochs) {
    cfg.finetune.epochs = *o.epochs;
    std::erase_if(cfg.finetune.milestones, [&](std::size_t m) { return m >= *o.epochs; });
  }
  if (o.l0) cfg.plan.l0 = *o.l0;
  if (o.blocks_set) cfg.plan.block_counts = o.blocks;
  cfg.evolution.validate();
  cfg.finetune.validate();
  return cfg;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2E", v);
  return buf;
}

struct Session {
  RunConfig cfg;
  RunDirectory dir;
  Session(const std::string& command, const Overrides& o)
      : cfg(resolve(o)), dir(command, cfg.output_dir) {
    dir.echo_config(cfg);
    dir.log("command " + command);
  }
  void say(const std::string& line) {
    std::cout << line << '\n';
    dir.log(line);
  }
};

void write_prune_outputs(Session& s, const PruneOutcome& outcome) {
  for (const LayerRecord& r : outcome.report.layers) {
    if (!r.front.empty()) s.dir.write_front(r.ordinal, r.front);
    std::ostringstream line;
    line << "conv" << r.ordinal << " group " << r.group << ": kept " << r.retained << "/"
         << r.filters << " error " << r.chosen.error;
    s.say(line.str());
  }
  for (const StageRecord& st : outcome.report.stages) {
    std::ostringstream line;
    line << "group " << st.group << ": accuracy " << st.accuracy_before_finetune << " -> "
         << st.accuracy_after_finetune << " params " << st.params;
    s.say(line.str());
  }
  s.dir.save_network(outcome.net);
  s.dir.write_json("report.json", to_json(outcome.report));
  std::ostringstream line;
  line << outcome.report.method << ": params " << outcome.report.params_before << " -> "
       << outcome.report.params_after << " (" << 100.0 * outcome.report.remained_params()
       << "%), accuracy " << outcome.report.accuracy_before << " -> "
       << outcome.report.accuracy_after;
  s.say(line.str());
}

int cmd_train(const Overrides& o) {
  Session s("train", o);
  const DatasetSplit data = load_dataset(s.cfg.dataset);
  Network net = load_network(s.cfg.model, s.cfg.dataset);
  FineTuneResult trained = finetune(std::move(net), data.train, s.cfg.train);
  for (std::size_t e = 0; e < trained.epoch_losses.size(); ++e) {
    s.dir.log("epoch " + std::to_string(e) + " loss " + std::to_string(trained.epoch_losses[e]));
  }
  const double acc = evaluate_accuracy(trained.net, data.test);
  s.dir.save_network(trained.net);
  s.dir.write_json("report.json", json{{"method", "train"},
                                       {"params", count_params(trained.net)},
                                       {"flops", count_flops(trained.net)},
                                       {"accuracy", acc},
                                       {"epoch_losses", trained.epoch_losses}});
  s.say("test accuracy " + std::to_string(acc) + ", model saved to " +
        (s.dir.path() / "model").string());
  s.dir.finish("train");
  return 0;
}

int cmd_evolve_layer(const Overrides& o, std::size_t layer, const std::string& alpha) {
  Session s("evolve-layer", o);
  if (!alpha.empty()) s.cfg.evolution.alpha_mode = parse_alpha_mode(alpha);
  const DatasetSplit data = load_dataset(s.cfg.dataset);
  const Network net = load_network(s.cfg.model, s.cfg.dataset);
  net.conv_position(layer);  // unknown-layer check before any work
  const Dataset calib = calibration_batch(data.train, s.cfg.calibration_size, s.cfg.calibration_seed);
  const Tensor map = forward(net, calib.images, {layer}).captured.at(layer);
  const EvaluationContext ctx =
      make_context(extract_subnetwork(net, layer), map, s.cfg.evolution.alpha_mode);
  const EvolutionResult result = evolve(ctx, s.cfg.evolution);
  s.dir.write_front(layer, result.front);
  s.dir.write_json("evolution.json", evolution_json(s.cfg.evolution, result));
  const Individual& knee = result.front[knee_index(result.front)];
  s.dir.write_json("report.json", json{{"method", "evolve-layer"},
                                       {"layer", layer},
                                       {"alpha_mode", to_string(s.cfg.evolution.alpha_mode)},
                                       {"front_size", result.front.size()},
                                       {"knee_filter_pct", knee.objectives.filter_pct},
                                       {"knee_error", knee.objectives.error},
                                       {"knee_mask_hex", mask_hex(knee.genes)},
                                       {"evaluations", result.evaluations}});
  std::ostringstream line;
  line << "conv" << layer << ": " << result.front.size() << " front members, knee keeps "
       << knee.retained() << "/" << knee.genes.size() << " error " << knee.objectives.error;
  s.say(line.str());
  s.dir.finish("evolve-layer");
  return 0;
}

int cmd_prune(const Overrides& o) {
  Session s("prune", o);
  const DatasetSplit data = load_dataset(s.cfg.dataset);
  const Network net = load_network(s.cfg.model, s.cfg.dataset);
  write_prune_outputs(s, smoea_prune(net, data, s.cfg.plan, smoea_options(s.cfg)));
  s.dir.finish("prune");
  return 0;
}

std::map<std::size_t, std::size_t> counts_from_report(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::io, "cannot open report " + file);
  std::map<std::size_t, std::size_t> keep;
  try {
    const json report = json::parse(in);
    for (const json& layer : report.at("layers")) {
      keep[layer.at("ordinal").get<std::size_t>()] = layer.at("retained").get<std::size_t>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::corrupt_data, file + ": " + e.what());
  }
  return keep;
}

int cmd_baseline(const Overrides& o, const std::string& criterion, std::optional<double> fraction,
                 const std::string& match) {
  Session s("baseline", o);
  if (!criterion.empty()) s.cfg.baseline.criterion = criterion;
  if (fraction) s.cfg.baseline.fraction = *fraction;
  if (!match.empty()) s.cfg.baseline.match_report = match;
  const Criterion crit = parse_criterion(s.cfg.baseline.criterion);
  const DatasetSplit data = load_dataset(s.cfg.dataset);
  const Network net = load_network(s.cfg.model, s.cfg.dataset);
  std::map<std::size_t, std::size_t> keep;
  if (!s.cfg.baseline.match_report.empty()) {
    keep = counts_from_report(s.cfg.baseline.match_report);
  } else {
    for (const auto& group : group_layers(s.cfg.plan, net.conv_count())) {
      for (std::size_t l : group) {
        keep[l] = baseline_keep_count(net.conv(l).out_channels, s.cfg.baseline.fraction);
      }
    }
  }
  write_prune_outputs(s, baseline_prune(net, data, s.cfg.plan, keep, crit, s.cfg.finetune,
                                        s.cfg.baseline.seed));
  s.dir.finish("baseline");
  return 0;
}

int cmd_sweep(const Overrides& o, const std::vector<double>& fractions) {
  Session s("sweep", o);
  if (!fractions.empty()) s.cfg.sweep_fractions = fractions;
  const DatasetSplit data = load_dataset(s.cfg.dataset);
  const Network net = load_network(s.cfg.model, s.cfg.dataset);
  const auto rows =
      sweep_uniform_retention(net, data, s.cfg.plan, s.cfg.sweep_fractions, smoea_options(s.cfg));
  std::ofstream csv(s.dir.path() / "sweep.csv");
  csv << "fraction,remained_params,accuracy\n";
  csv.precision(17);
  json table = json::array();
  for (const SweepRow& r : rows) {
    csv << r.fraction << ',' << r.remained_params << ',' << r.accuracy << '\n';
    table.push_back({{"fraction", r.fraction},
                     {"remained_params", r.remained_params},
                     {"accuracy", r.accuracy}});
    s.say("fraction " + std::to_string(r.fraction) + ": params " +
          std::to_string(100.0 * r.remained_params) + "%, accuracy " + std::to_string(r.accuracy));
  }
  if (!csv) throw Error(ErrorCode::io, "cannot write sweep.csv");
  s.dir.record("sweep.csv");
  s.dir.write_json("report.json", json{{"method", "sweep"}, {"rows", table}});
  s.dir.finish("sweep");
  return 0;
}

int cmd_report(const Overrides& o, bool with_accuracy) {
  Session s("report", o);
  const Network net = load_network(s.cfg.model, s.cfg.dataset);
  json convs = json::array();
  for (std::size_t l = 1; l <= net.conv_count(); ++l) {
    const ConvParams& c = net.conv(l);
    convs.push_back({{"ordinal", l}, {"in_channels", c.in_channels}, {"filters", c.out_channels}});
  }
  json report{{"method", "report"},
              {"params", count_params(net)},
              {"flops", count_flops(net)},
              {"conv_layers", convs}};
  if (with_accuracy) {
    report["accuracy"] = evaluate_accuracy(net, load_dataset(s.cfg.dataset).test);
  }
  s.dir.write_json("report.json", report);
  s.say("params " + std::to_string(count_params(net)) + ", FLOPs " +
        sci(static_cast<double>(count_flops(net))));
  s.dir.finish("report");
  return 0;
}

void print_error(std::string_view code, int exit, const std::string& message) {
  std::cerr << json{{"error", code}, {"exit_code", exit}, {"message", message}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evolutionary filter pruning for convolutional networks"};
  app.require_subcommand(1);

  Overrides o;
  std::size_t layer = 0;
  std::string alpha, criterion, match;
  std::optional<double> fraction;
  std::vector<double> fractions;
  bool with_accuracy = false;

  auto* train = app.add_subcommand("train", "train the configured model and save it");
  auto* evolve_layer = app.add_subcommand("evolve-layer", "evolve masks for one conv layer");
  auto* prune = app.add_subcommand("prune", "run the grouped pruning pipeline");
  auto* baseline = app.add_subcommand("baseline", "prune with rand, l2 or fpgm masks");
  auto* sweep = app.add_subcommand("sweep", "prune at several uniform retention targets");
  auto* report = app.add_subcommand("report", "parameter and FLOPs accounting");
  for (auto* cmd : {train, evolve_layer, prune, baseline, sweep, report}) add_common(cmd, o);
  evolve_layer->add_option("--layer", layer, "1-based conv ordinal")->required();
  evolve_layer->add_option("--alpha-mode", alpha, "optimized | fixed-one");
  baseline->add_option("--criterion", criterion, "rand | l2 | fpgm");
  baseline->add_option("--fraction", fraction, "uniform retained fraction");
  baseline->add_option("--match", match, "reuse per-layer retained counts of a report.json");
  sweep->add_option("--fractions", fractions, "retention targets");
  report->add_flag("--accuracy", with_accuracy, "also evaluate test accuracy");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const int code = exit_code(ErrorCode::invalid_argument);
    print_error(to_string(ErrorCode::invalid_argument), code, e.what());
    return code;
  }
  o.blocks_set = !o.blocks.empty();

  try {
    if (*train) return cmd_train(o);
    if (*evolve_layer) return cmd_evolve_layer(o, layer, alpha);
    if (*prune) return cmd_prune(o);
    if (*baseline) return cmd_baseline(o, criterion, fraction, match);
    if (*sweep) return cmd_sweep(o, fractions);
    return cmd_report(o, with_accuracy);
  } catch (const Error& e) {
    const int code = exit_code(e.code());
    print_error(to_string(e.code()), code, e.what());
    return code;
  } catch (const std::exception& e) {
    print_error("internal", 1, e.what());
    return 1;
  }
}
