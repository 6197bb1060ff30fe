#include "iop/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "iop/errors.hpp"
#include "iop/executor.hpp"

namespace iop::cli {

namespace {

const std::vector<std::string> kCompareModels{"lenet", "alexnet", "vgg11"};
const std::vector<std::string> kSweepModels{"vgg11", "vgg13", "vgg16", "vgg19"};
const std::vector<std::string> kSingleModel{"lenet"};
constexpr Strategy kAll[] = {Strategy::OC, Strategy::CoEdge, Strategy::IOP};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<Strategy> strategies_of(const RunConfig& config) {
  if (!config.strategies.empty()) return config.strategies;
  return {std::begin(kAll), std::end(kAll)};
}

// Writes to --out when set, otherwise to `out`.
void emit(const RunConfig& config, const std::string& text, std::ostream& out, std::ostream& note) {
  if (config.out.empty()) {
    out << text;
    return;
  }
  std::ofstream file(config.out, std::ios::binary);
  if (!file) throw ParseError("cannot write '" + config.out + "'");
  file << text;
  note << "wrote " << config.out << "\n";
}

std::string join(const std::vector<std::uint64_t>& values, char sep) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += sep;
    s += std::to_string(values[i]);
  }
  return s;
}

CostOptions cost_options(const RunConfig& config) { return {.serial_links = config.serial_links, .require_memory = true}; }

SegmenterOptions segmenter_options(const RunConfig& config) {
  SegmenterOptions o;
  o.baseline = config.baseline;
  o.cost.serial_links = config.serial_links;
  return o;
}

}  // namespace

std::string_view to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::OC:
      return "oc";
    case Strategy::CoEdge:
      return "coedge";
    case Strategy::IOP:
      return "iop";
  }
  return "?";
}

Strategy strategy_from_string(std::string_view text) {
  for (const auto s : kAll) {
    if (to_string(s) == text) return s;
  }
  throw ValidationError("unknown strategy '" + std::string(text) + "' (oc, coedge, iop)");
}

void validate_config(const RunConfig& config) {
  if (!(config.latency_step > 0)) throw ValidationError("latency step must be positive");
  if (config.latency_from > config.latency_to) throw ValidationError("latency range start exceeds its end");
  if (config.latency_from < 0) throw ValidationError("latency must be non-negative");
  if (config.trials == 0) throw ValidationError("trials must be at least 1");
  if (config.devices && *config.devices == 0) throw ValidationError("--devices must be at least 1");
  if (!config.model_file.empty() && !config.models.empty()) {
    throw ValidationError("--model and --model-file are mutually exclusive");
  }
}

std::vector<ModelSpec> resolve_models(const RunConfig& config, const std::vector<std::string>& fallback) {
  if (!config.model_file.empty()) return {load_model(read_file(config.model_file))};
  std::vector<ModelSpec> models;
  for (const auto& name : config.models.empty() ? fallback : config.models) {
    models.push_back(model_zoo(name, config.input_size));
  }
  return models;
}

ClusterSpec resolve_cluster(const RunConfig& config) {
  ClusterSpec cluster;
  if (!config.cluster_file.empty()) {
    cluster = load_cluster(read_file(config.cluster_file));
    if (config.devices && *config.devices != cluster.size()) {
      // resize by repeating the last device
      const DeviceSpec last = cluster.devices.back();
      cluster.devices.resize(*config.devices, last);
      for (std::size_t j = 0; j < cluster.devices.size(); ++j) cluster.devices[j].id = j;
    }
  } else {
    cluster = default_cluster(config.devices.value_or(defaults::kDevices));
  }
  if (config.bandwidth) cluster.bandwidth = *config.bandwidth;
  if (config.conn_latency) cluster.conn_latency = *config.conn_latency;
  validate_cluster(cluster);
  return cluster;
}

StrategyRun run_strategy(const ModelSpec& model, const ClusterSpec& cluster, Strategy strategy,
                         const RunConfig& config) {
  StrategyRun run;
  run.strategy = strategy;
  switch (strategy) {
    case Strategy::OC:
      run.plan = plan_oc(model, cluster);
      break;
    case Strategy::CoEdge:
      run.plan = plan_coedge(model, cluster);
      break;
    case Strategy::IOP:
      run.segmentation = greedy_segment(model, cluster, segmenter_options(config));
      run.plan = plan_iop(model, cluster, *run.segmentation);
      break;
  }
  run.report = evaluate(run.plan, cost_options(config));
  return run;
}

double saving_pct(double base, double improved) { return base == 0 ? 0.0 : 100.0 * (base - improved) / base; }

namespace {

struct CompareRow {
  std::string model;
  StrategyRun run;
  double time_saving = 0;
  double memory_saving = 0;
};

std::vector<CompareRow> compare_rows(const RunConfig& config) {
  const auto cluster = resolve_cluster(config);
  std::vector<CompareRow> rows;
  for (const auto& model : resolve_models(config, kCompareModels)) {
    std::vector<StrategyRun> runs;
    for (const auto s : strategies_of(config)) runs.push_back(run_strategy(model, cluster, s, config));
    std::optional<CostReport> iop;
    for (const auto& r : runs) {
      if (r.strategy == Strategy::IOP) iop = r.report;
    }
    for (auto& r : runs) {
      CompareRow row{model.name, std::move(r), 0, 0};
      if (iop) {
        // IOP's saving relative to this row's strategy
        row.time_saving = saving_pct(row.run.report.total_ms, iop->total_ms);
        row.memory_saving = saving_pct(static_cast<double>(row.run.report.peak_bytes()),
                                       static_cast<double>(iop->peak_bytes()));
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace

std::string compare_csv(const RunConfig& config) {
  std::string csv =
      "model,strategy,total_ms,round_count,peak_bytes_max,peak_bytes_per_device,time_saving_pct,memory_saving_pct\n";
  for (const auto& row : compare_rows(config)) {
    const auto& r = row.run.report;
    csv += row.model + "," + std::string(to_string(row.run.strategy)) + "," + fixed(r.total_ms, 6) + "," +
           std::to_string(r.round_count) + "," + std::to_string(r.peak_bytes()) + "," +
           join(r.per_device_peak_bytes, ';') + "," + fixed(row.time_saving, 2) + "," +
           fixed(row.memory_saving, 2) + "\n";
  }
  return csv;
}

std::string sweep_csv(const RunConfig& config) {
  const auto base = resolve_cluster(config);
  std::string csv =
      "model,strategy,conn_latency_ms,total_ms,round_count,iop_saving_vs_oc_pct,iop_saving_vs_coedge_pct\n";
  const auto steps =
      static_cast<std::size_t>(std::floor((config.latency_to - config.latency_from) / config.latency_step + 1e-9)) + 1;
  for (const auto& model : resolve_models(config, kSweepModels)) {
    for (std::size_t k = 0; k < steps; ++k) {
      ClusterSpec cluster = base;
      cluster.conn_latency = config.latency_from + static_cast<double>(k) * config.latency_step;
      double totals[3] = {0, 0, 0};
      std::vector<StrategyRun> runs;
      for (const auto s : kAll) {
        runs.push_back(run_strategy(model, cluster, s, config));
        totals[static_cast<int>(s)] = runs.back().report.total_ms;
      }
      const double vs_oc = saving_pct(totals[0], totals[2]);
      const double vs_coedge = saving_pct(totals[1], totals[2]);
      for (const auto s : strategies_of(config)) {
        const auto& r = runs[static_cast<std::size_t>(s)].report;
        csv += model.name + "," + std::string(to_string(s)) + "," + fixed(cluster.conn_latency, 3) + "," +
               fixed(r.total_ms, 6) + "," + std::to_string(r.round_count) + "," + fixed(vs_oc, 2) + "," +
               fixed(vs_coedge, 2) + "\n";
      }
    }
  }
  return csv;
}

int cmd_compare(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const std::string csv = compare_csv(config);
  emit(config, csv, out, err);
  std::ostream& summary = config.out.empty() ? err : out;
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  while (std::getline(lines, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    summary << f[0] << " " << f[1] << ": " << f[2] << " ms, " << f[3] << " rounds, peak " << f[4] << " B";
    const auto chosen = strategies_of(config);
    if (f[1] != "iop" && std::find(chosen.begin(), chosen.end(), Strategy::IOP) != chosen.end()) {
      summary << " (iop saves " << f[6] << "% time, " << f[7] << "% memory)";
    }
    summary << "\n";
  }
  return exit_code::kOk;
}

int cmd_sweep(const RunConfig& config, std::ostream& out, std::ostream& err) {
  emit(config, sweep_csv(config), out, err);
  return exit_code::kOk;
}

int cmd_verify(const RunConfig& config, std::ostream& out, std::ostream& err) {
  if (!config.plan_file.empty()) {
    const auto plan = load_plan(read_file(config.plan_file));
    const auto report = check_equivalence(plan.model, plan, config.trials, config.seed);
    err << plan.model.name << " " << config.plan_file << " m=" << plan.cluster.size() << ": "
        << (report.pass ? "pass" : "FAIL") << ", max relative error " << report.max_relative_error << "\n";
    if (!report.failure.empty()) err << "  " << report.failure << "\n";
    emit(config, equivalence_report_json(report), out, err);
    return report.pass ? exit_code::kOk : exit_code::kVerifyFailed;
  }
  const auto models = resolve_models(config, kSingleModel);
  const auto cluster = resolve_cluster(config);
  const auto strategy = config.strategies.empty() ? Strategy::IOP : config.strategies.front();
  std::string text;
  bool pass = true;
  for (const auto& model : models) {
    const auto run = run_strategy(model, cluster, strategy, config);
    const auto report = check_equivalence(model, run.plan, config.trials, config.seed);
    pass = pass && report.pass;
    text += equivalence_report_json(report);
    err << model.name << " " << to_string(strategy) << " m=" << cluster.size() << ": "
        << (report.pass ? "pass" : "FAIL") << ", max relative error " << report.max_relative_error << "\n";
    if (!report.failure.empty()) err << "  " << report.failure << "\n";
    if (!config.trace_out.empty()) {
      const auto weights = random_weights(model, config.seed);
      const auto input = random_input(model.input_shape, config.seed + 1);
      std::ofstream(config.trace_out, std::ios::binary)
          << sim_trace_json(run_partitioned(run.plan, input, weights).trace);
    }
  }
  emit(config, text, out, err);
  return pass ? exit_code::kOk : exit_code::kVerifyFailed;
}

int cmd_segment(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const auto cluster = resolve_cluster(config);
  const auto options = segmenter_options(config);
  std::ostringstream text;
  for (const auto& model : resolve_models(config, kSingleModel)) {
    const auto greedy = greedy_segment(model, cluster, options);
    const double greedy_ms = segmentation_cost(model, cluster, greedy, options.cost);
    text << model.name << " greedy   " << format_segmentation(model, greedy) << " " << fixed(greedy_ms, 6) << " ms\n";
    try {
      const auto best = exhaustive_segment(model, cluster, options, config.exhaustive_limit);
      text << model.name << " optimal  " << format_segmentation(model, best.segmentation) << " "
           << fixed(best.total_ms, 6) << " ms\n";
      text << model.name << " gap      " << fixed(greedy_ms - best.total_ms, 6) << " ms ("
           << fixed(best.total_ms > 0 ? 100.0 * (greedy_ms - best.total_ms) / best.total_ms : 0.0, 2) << "%)\n";
    } catch (const TooLarge& e) {
      text << model.name << " optimal  skipped: " << e.what() << "\n";
    }
  }
  emit(config, text.str(), out, err);
  return exit_code::kOk;
}

int cmd_show_plan(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const auto models = resolve_models(config, kSingleModel);
  const auto cluster = resolve_cluster(config);
  const auto strategy = config.strategies.empty() ? Strategy::IOP : config.strategies.front();
  std::string text;
  for (const auto& model : models) {
    const auto run = run_strategy(model, cluster, strategy, config);
    if (config.format == "csv") {
      text += cost_report_csv(run.report);
    } else if (config.format == "cost") {
      text += cost_report_json(run.report);
    } else {
      text += save_plan(run.plan, to_string(strategy), run.segmentation ? &*run.segmentation : nullptr);
    }
  }
  emit(config, text, out, err);
  return exit_code::kOk;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig config;
  std::vector<std::string> strategies;
  std::string baseline = "coedge";

  CLI::App app{"Partition planning for cooperative CNN inference", "iopart"};
  app.require_subcommand(1);
  auto* compare = app.add_subcommand("compare", "Cost every strategy under one cluster");
  auto* sweep = app.add_subcommand("sweep", "Total latency over a range of connection latencies");
  auto* verify = app.add_subcommand("verify", "Check partitioned execution against the centralized pass");
  auto* segment = app.add_subcommand("segment", "Greedy pairing and the exhaustive optimum");
  auto* show = app.add_subcommand("show-plan", "Print a plan document");

  for (auto* sub : {compare, sweep, verify, segment, show}) {
    sub->add_option("--model", config.models, "Zoo model name(s), comma separated")->delimiter(',');
    sub->add_option("--model-file", config.model_file, "Model document (JSON)");
    sub->add_option("--cluster-file", config.cluster_file, "Cluster document (JSON)");
    sub->add_option("--devices", config.devices, "Device count");
    sub->add_option("--bandwidth", config.bandwidth, "Link bandwidth, bytes/ms");
    sub->add_option("--conn-latency", config.conn_latency, "Per-round connection latency, ms");
    sub->add_option("--input-size", config.input_size, "Input height/width for zoo models");
    sub->add_option("--strategy", strategies, "oc, coedge, iop")->delimiter(',');
    sub->add_option("--seed", config.seed, "Random seed");
    sub->add_option("--out", config.out, "Output file (default stdout)");
    sub->add_option("--baseline", baseline, "Greedy comparison: coedge or oc")
        ->check(CLI::IsMember({"coedge", "oc"}));
    sub->add_flag("--serial-links", config.serial_links, "Senders share one medium");
  }
  sweep->add_option("--latency-from", config.latency_from, "First L, ms");
  sweep->add_option("--latency-to", config.latency_to, "Last L, ms");
  sweep->add_option("--latency-step", config.latency_step, "L increment, ms");
  verify->add_option("--trials", config.trials, "Random draws");
  verify->add_option("--plan-file", config.plan_file, "Plan document to check instead of building one");
  verify->add_option("--trace", config.trace_out, "Write the simulation trace (JSON)");
  segment->add_option("--exhaustive-limit", config.exhaustive_limit, "Largest conv/fc count for the exhaustive search");
  show->add_option("--format", config.format, "json (plan), cost (summary) or csv (per operator)")
      ->check(CLI::IsMember({"json", "cost", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_code::kOk : exit_code::kUsage;
  }

  try {
    for (const auto& s : strategies) config.strategies.push_back(strategy_from_string(s));
    config.baseline = baseline == "oc" ? Baseline::OC : Baseline::CoEdge;
    validate_config(config);
    if (compare->parsed()) return cmd_compare(config, out, err);
    if (sweep->parsed()) return cmd_sweep(config, out, err);
    if (verify->parsed()) return cmd_verify(config, out, err);
    if (segment->parsed()) return cmd_segment(config, out, err);
    return cmd_show_plan(config, out, err);
  } catch (const InfeasibleMemory& e) {
    err << "infeasible plan: " << e.what() << "\n";
    return exit_code::kInfeasible;
  } catch (const PairingError& e) {
    err << "infeasible plan: " << e.what() << "\n";
    return exit_code::kInfeasible;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kUsage;
  }
}

}  // namespace iop::cli
