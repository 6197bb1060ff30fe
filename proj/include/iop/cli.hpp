#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "iop/cluster.hpp"
#include "iop/cost_model.hpp"
#include "iop/model_ir.hpp"
#include "iop/partitioner.hpp"
#include "iop/segmenter.hpp"

namespace iop::cli {

enum class Strategy { OC, CoEdge, IOP };

std::string_view to_string(Strategy strategy);
Strategy strategy_from_string(std::string_view text);

struct RunConfig {
  std::vector<std::string> models;  // zoo names; empty = the command's default set
  std::string model_file;
  std::string cluster_file;
  std::string plan_file;  // verify: check a saved plan document instead of building one
  std::optional<std::size_t> devices;
  std::optional<double> bandwidth;
  std::optional<double> conn_latency;
  std::optional<std::int64_t> input_size;  // spatial override for zoo models
  std::vector<Strategy> strategies;        // empty = all three
  double latency_from = 1.0;
  double latency_to = 8.0;
  double latency_step = 1.0;
  std::uint64_t seed = 42;
  std::size_t trials = 10;
  std::string out;
  std::string trace_out;
  std::string format = "json";
  Baseline baseline = Baseline::CoEdge;
  bool serial_links = false;
  std::size_t exhaustive_limit = kExhaustiveLimit;
};

// Throws ValidationError on an empty or reversed sweep range.
void validate_config(const RunConfig& config);

// Models named by the config (zoo names or the model file).
std::vector<ModelSpec> resolve_models(const RunConfig& config, const std::vector<std::string>& fallback);
ClusterSpec resolve_cluster(const RunConfig& config);

struct StrategyRun {
  Strategy strategy = Strategy::OC;
  PartitionPlan plan;
  CostReport report;
  std::optional<Segmentation> segmentation;  // IOP only
};

// Builds and costs one strategy. Throws InfeasibleMemory.
StrategyRun run_strategy(const ModelSpec& model, const ClusterSpec& cluster, Strategy strategy,
                         const RunConfig& config);

// Percent saved going from `base` to `improved`, from unrounded totals.
double saving_pct(double base, double improved);

std::string compare_csv(const RunConfig& config);
std::string sweep_csv(const RunConfig& config);

// Subcommands. Each returns the process exit code.
int cmd_compare(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_sweep(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_verify(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_segment(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_show_plan(const RunConfig& config, std::ostream& out, std::ostream& err);

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kInfeasible = 2;
inline constexpr int kVerifyFailed = 3;
}  // namespace exit_code

// Parses argv and dispatches; maps library errors to exit codes.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace iop::cli
