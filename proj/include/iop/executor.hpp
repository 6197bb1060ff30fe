#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "iop/model_ir.hpp"
#include "iop/partitioner.hpp"

namespace iop {

// Dense CHW activation in double precision.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(TensorShape shape, double fill = 0.0);

  const TensorShape& shape() const { return shape_; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  double& at(std::int64_t c, std::int64_t h, std::int64_t w) { return values_[offset(c, h, w)]; }
  double at(std::int64_t c, std::int64_t h, std::int64_t w) const { return values_[offset(c, h, w)]; }
  double* row(std::int64_t c, std::int64_t h) { return values_.data() + offset(c, h, 0); }
  const double* row(std::int64_t c, std::int64_t h) const { return values_.data() + offset(c, h, 0); }

  bool operator==(const Tensor&) const = default;

 private:
  std::size_t offset(std::int64_t c, std::int64_t h, std::int64_t w) const {
    return static_cast<std::size_t>((c * shape_.height + h) * shape_.width + w);
  }

  TensorShape shape_;
  std::vector<double> values_;
};

// Kernel laid out [c_out][c_in][kernel_h][kernel_w]; empty for pool/relu.
struct OperatorWeights {
  std::vector<double> kernel;
  std::vector<double> bias;
};

struct WeightSet {
  std::vector<OperatorWeights> per_operator;
};

// He-uniform kernels, small uniform biases, deterministic in `seed`.
WeightSet random_weights(const ModelSpec& model, std::uint64_t seed);
Tensor random_input(const TensorShape& shape, std::uint64_t seed);

// Single-device forward pass: the numerical oracle.
Tensor run_centralized(const ModelSpec& model, const Tensor& input, const WeightSet& weights);

struct TraceCompute {
  std::size_t device = 0;
  std::size_t operator_index = 0;
  std::string dim;  // OC, IC, H, rep
  std::int64_t extent = 0;
};

struct TraceRound {
  std::size_t after_operator = 0;
  RoundKind kind = RoundKind::BroadcastConcat;
  std::vector<std::uint64_t> per_device_send_bytes;  // bytes actually moved, at 4 B per element
};

struct SimTrace {
  std::vector<TraceCompute> computations;
  std::vector<TraceRound> rounds;

  // Round kinds, positions and byte counts agree with the plan.
  bool matches(const PartitionPlan& plan) const;
};

struct PartitionedRun {
  Tensor output;  // device 1's final activation
  SimTrace trace;
};

// Simulates the plan device by device on one host. Each device only sees
// data it computed or received; anything else reads as NaN, so a plan that
// under-communicates cannot match the centralized result. Partial sums are
// reduced in ascending device order.
PartitionedRun run_partitioned(const PartitionPlan& plan, const Tensor& input, const WeightSet& weights);

// ||got - want||_inf / ||want||_inf (NaN anywhere gives +inf).
double relative_error(const Tensor& got, const Tensor& want);

struct EquivalenceReport {
  std::size_t trials = 0;
  std::uint64_t seed = 0;
  double tolerance = 0;
  double max_relative_error = 0;
  bool trace_matches = true;
  bool pass = false;
  std::string failure;  // first execution error, if any
};

inline constexpr double kEquivalenceTolerance = 1e-6;

EquivalenceReport check_equivalence(const ModelSpec& model, const PartitionPlan& plan, std::size_t trials,
                                    std::uint64_t seed, double tolerance = kEquivalenceTolerance);

std::string equivalence_report_json(const EquivalenceReport& report);
std::string sim_trace_json(const SimTrace& trace);

}  // namespace iop
