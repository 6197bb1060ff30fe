#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iop/cluster.hpp"
#include "iop/model_ir.hpp"
#include "iop/partitioner.hpp"

namespace iop {

// Modeled element width: activations and weights are f32.
inline constexpr std::uint64_t kElementBytes = 4;

struct MemoryFootprint {
  std::uint64_t weight_bytes = 0;
  std::uint64_t activation_bytes = 0;
};

// MACs for one slice. Pool/elementwise count one op per output element.
std::uint64_t compute_workload(const OperatorSpec& op, const Slice& slice, const TensorShape& out_shape);
std::uint64_t unsliced_workload(const OperatorSpec& op, const TensorShape& out_shape);

// ω and a for one slice. IC slices hold a full-shape partial sum and carry
// the bias only on device 1 (index 0).
MemoryFootprint memory_bytes(const OperatorSpec& op, const Slice& slice, const TensorShape& out_shape);
MemoryFootprint unsliced_memory(const OperatorSpec& op, const TensorShape& out_shape);

double compute_delay(std::uint64_t workload, const DeviceSpec& device);

struct CostOptions {
  // Senders share one medium and transmit one after another.
  bool serial_links = false;
  // evaluate() rejects plans whose peak memory exceeds a device. What-if
  // window costing turns this off.
  bool require_memory = true;
};

// Per-device communication time of a round: L + bytes_j / b (or the sum of
// all senders' bytes with serial links).
std::vector<double> comm_delays(const CommRound& round, const ClusterSpec& cluster, const CostOptions& options = {});
double comm_delay(const CommRound& round, const ClusterSpec& cluster, const CostOptions& options = {});

struct OperatorCost {
  std::size_t index = 0;   // 0 = rounds on the input before operator 1
  std::string dim;         // OC, IC, H, rep1, rep*, input
  double compute_ms = 0;   // max over devices of T^c
  double comm_ms = 0;      // duration of the round after this operator
  double total_ms = 0;     // max over devices of (T^c + T^g)
  double cumulative_ms = 0;
};

struct CostReport {
  std::vector<OperatorCost> per_operator;
  double total_ms = 0;
  std::vector<std::uint64_t> per_device_peak_bytes;
  std::size_t round_count = 0;

  std::uint64_t peak_bytes() const;
};

// Σ_i max_j (T^c_ij + T^g_ij). Throws InvalidPlan when validation fails.
CostReport evaluate(const PartitionPlan& plan, const CostOptions& options = {});

// Σ_i ω_ij + max_i a_ij for every device.
std::vector<std::uint64_t> peak_memory(const PartitionPlan& plan);

std::string cost_report_csv(const CostReport& report);
std::string cost_report_json(const CostReport& report);

}  // namespace iop
