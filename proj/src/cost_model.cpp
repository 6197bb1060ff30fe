#include "iop/cost_model.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "iop/errors.hpp"

namespace iop {

namespace {

std::uint64_t u64(std::int64_t v) { return v > 0 ? static_cast<std::uint64_t>(v) : 0; }

}  // namespace

std::uint64_t compute_workload(const OperatorSpec& op, const Slice& slice, const TensorShape& out) {
  const std::uint64_t extent = u64(slice.dim == PartitionDim::H ? slice.computed_rows() : slice.extent);
  const std::uint64_t window = u64(op.kernel_h * op.kernel_w);
  if (op.partitionable()) {
    switch (slice.dim) {
      case PartitionDim::OC:
        return extent * u64(out.height * out.width) * window * u64(op.c_in);
      case PartitionDim::IC:
        return u64(op.c_out) * u64(out.height * out.width) * window * extent;
      case PartitionDim::H:
        return u64(op.c_out) * extent * u64(out.width) * window * u64(op.c_in);
    }
  }
  if (slice.dim == PartitionDim::H) return u64(out.channels) * extent * u64(out.width);
  return extent * u64(out.height * out.width);
}

std::uint64_t unsliced_workload(const OperatorSpec& op, const TensorShape& out) {
  if (op.partitionable()) {
    return u64(op.c_out) * u64(out.height * out.width) * u64(op.kernel_h * op.kernel_w) * u64(op.c_in);
  }
  return u64(out.elements());
}

MemoryFootprint memory_bytes(const OperatorSpec& op, const Slice& slice, const TensorShape& out) {
  const std::uint64_t extent = u64(slice.dim == PartitionDim::H ? slice.computed_rows() : slice.extent);
  const std::uint64_t window = u64(op.kernel_h * op.kernel_w);
  std::uint64_t weights = 0;
  std::uint64_t activations = 0;
  switch (slice.dim) {
    case PartitionDim::OC:
      if (op.partitionable()) weights = extent * u64(op.c_in) * window + (op.has_bias ? extent : 0);
      activations = extent * u64(out.height * out.width);
      break;
    case PartitionDim::IC: {
      const bool holds_bias = op.has_bias && slice.device == 0;
      if (op.partitionable()) weights = u64(op.c_out) * extent * window + (holds_bias ? u64(op.c_out) : 0);
      activations = (extent > 0 || holds_bias) ? u64(out.elements()) : 0;
      break;
    }
    case PartitionDim::H:
      weights = u64(op.weight_count()) + u64(op.bias_count());
      activations = u64(out.channels) * extent * u64(out.width);
      break;
  }
  return {weights * kElementBytes, activations * kElementBytes};
}

MemoryFootprint unsliced_memory(const OperatorSpec& op, const TensorShape& out) {
  return {(u64(op.weight_count()) + u64(op.bias_count())) * kElementBytes, u64(out.elements()) * kElementBytes};
}

double compute_delay(std::uint64_t workload, const DeviceSpec& device) {
  return static_cast<double>(workload) / device.compute;
}

std::vector<double> comm_delays(const CommRound& round, const ClusterSpec& cluster, const CostOptions& options) {
  std::vector<double> delays(cluster.size(), cluster.conn_latency);
  if (options.serial_links) {
    std::uint64_t total = 0;
    for (const auto b : round.per_device_send_bytes) total += b;
    for (auto& d : delays) d += static_cast<double>(total) / cluster.bandwidth;
  } else {
    for (std::size_t j = 0; j < delays.size() && j < round.per_device_send_bytes.size(); ++j) {
      delays[j] += static_cast<double>(round.per_device_send_bytes[j]) / cluster.bandwidth;
    }
  }
  return delays;
}

double comm_delay(const CommRound& round, const ClusterSpec& cluster, const CostOptions& options) {
  const auto delays = comm_delays(round, cluster, options);
  return *std::max_element(delays.begin(), delays.end());
}

std::uint64_t CostReport::peak_bytes() const {
  return per_device_peak_bytes.empty() ? 0 : *std::max_element(per_device_peak_bytes.begin(), per_device_peak_bytes.end());
}

std::vector<std::uint64_t> peak_memory(const PartitionPlan& plan) {
  const std::size_t m = plan.cluster.size();
  std::vector<std::uint64_t> weights(m, 0);
  std::vector<std::uint64_t> peak_activation(m, 0);
  for (std::size_t index = 1; index <= plan.model.size(); ++index) {
    const OperatorSpec& op = plan.model.op(index);
    const TensorShape& out = plan.shapes.at(index - 1);
    const Assignment& a = plan.assignment(index);
    if (const auto* rep = std::get_if<Replicated>(&a)) {
      const auto mem = unsliced_memory(op, out);
      for (std::size_t j = 0; j < m; ++j) {
        if (rep->placement == Placement::DeviceOne && j != 0) continue;
        weights[j] += mem.weight_bytes;
        peak_activation[j] = std::max(peak_activation[j], mem.activation_bytes);
      }
    } else {
      for (const auto& slice : std::get<Partitioned>(a).slices) {
        if (slice.device >= m) continue;
        const auto mem = memory_bytes(op, slice, out);
        weights[slice.device] += mem.weight_bytes;
        peak_activation[slice.device] = std::max(peak_activation[slice.device], mem.activation_bytes);
      }
    }
  }
  std::vector<std::uint64_t> peaks(m);
  for (std::size_t j = 0; j < m; ++j) peaks[j] = weights[j] + peak_activation[j];
  return peaks;
}

namespace {

std::string dim_label(const Assignment& a) {
  if (const auto* rep = std::get_if<Replicated>(&a)) {
    return rep->placement == Placement::DeviceOne ? "rep1" : "rep*";
  }
  return std::string(to_string(std::get<Partitioned>(a).dim));
}

}  // namespace

CostReport evaluate(const PartitionPlan& plan, const CostOptions& options) {
  const auto validation = validate_plan(plan);
  if (!validation.structurally_ok() || (options.require_memory && !validation.ok())) {
    throw InvalidPlan("cannot evaluate plan: " + validation.summary());
  }

  const ClusterSpec& cluster = plan.cluster;
  const std::size_t m = cluster.size();
  CostReport report;
  report.round_count = plan.rounds.size();
  report.per_device_peak_bytes = peak_memory(plan);

  double cumulative = 0.0;
  auto add_row = [&](std::size_t index, std::string dim, const std::vector<double>& compute) {
    OperatorCost row{index, std::move(dim), 0, 0, 0, 0};
    std::vector<double> comm(m, 0.0);
    if (const CommRound* round = plan.round_after(index)) {
      comm = comm_delays(*round, cluster, options);
      row.comm_ms = *std::max_element(comm.begin(), comm.end());
    }
    for (std::size_t j = 0; j < m; ++j) {
      row.compute_ms = std::max(row.compute_ms, compute[j]);
      row.total_ms = std::max(row.total_ms, compute[j] + comm[j]);
    }
    cumulative += row.total_ms;
    row.cumulative_ms = cumulative;
    report.per_operator.push_back(std::move(row));
  };

  if (plan.round_after(0) != nullptr) add_row(0, "input", std::vector<double>(m, 0.0));

  for (std::size_t index = 1; index <= plan.model.size(); ++index) {
    const OperatorSpec& op = plan.model.op(index);
    const TensorShape& out = plan.shapes.at(index - 1);
    const Assignment& a = plan.assignment(index);
    std::vector<double> compute(m, 0.0);
    if (const auto* rep = std::get_if<Replicated>(&a)) {
      const auto work = unsliced_workload(op, out);
      for (std::size_t j = 0; j < m; ++j) {
        if (rep->placement == Placement::AllDevices || j == 0) compute[j] = compute_delay(work, cluster.devices[j]);
      }
    } else {
      for (const auto& slice : std::get<Partitioned>(a).slices) {
        compute[slice.device] = compute_delay(compute_workload(op, slice, out), cluster.devices[slice.device]);
      }
    }
    add_row(index, dim_label(a), compute);
  }
  report.total_ms = cumulative;
  return report;
}

std::string cost_report_csv(const CostReport& report) {
  std::ostringstream out;
  out << "operator,dim,t_compute_ms,t_comm_ms,cumulative_ms\n";
  char buf[160];
  for (const auto& row : report.per_operator) {
    std::snprintf(buf, sizeof(buf), "%zu,%s,%.6f,%.6f,%.6f\n", row.index, row.dim.c_str(), row.compute_ms,
                  row.comm_ms, row.cumulative_ms);
    out << buf;
  }
  return out.str();
}

}  // namespace iop
