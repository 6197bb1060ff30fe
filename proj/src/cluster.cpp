#include "iop/cluster.hpp"

#include <algorithm>
#include <numeric>

#include "iop/errors.hpp"

namespace iop {

std::vector<double> ClusterSpec::compute_weights() const {
  std::vector<double> weights;
  weights.reserve(devices.size());
  for (const auto& d : devices) weights.push_back(d.compute);
  return weights;
}

void validate_cluster(const ClusterSpec& cluster) {
  if (cluster.devices.empty()) throw ValidationError("devices: cluster needs at least one device");
  for (std::size_t j = 0; j < cluster.devices.size(); ++j) {
    const auto& d = cluster.devices[j];
    const std::string where = "devices[" + std::to_string(j) + "]";
    if (d.id != j) throw ValidationError(where + ".id: expected " + std::to_string(j));
    if (!(d.compute > 0.0)) throw ValidationError(where + ".compute must be > 0");
    if (d.memory == 0) throw ValidationError(where + ".memory must be > 0");
  }
  if (!(cluster.bandwidth > 0.0)) throw ValidationError("bandwidth must be > 0");
  if (!(cluster.conn_latency >= 0.0)) throw ValidationError("conn_latency must be >= 0");
}

ClusterSpec uniform_cluster(std::size_t devices, double compute, std::uint64_t memory, double bandwidth,
                            double conn_latency) {
  ClusterSpec cluster;
  cluster.bandwidth = bandwidth;
  cluster.conn_latency = conn_latency;
  for (std::size_t j = 0; j < devices; ++j) cluster.devices.push_back({j, compute, memory});
  validate_cluster(cluster);
  return cluster;
}

ClusterSpec default_cluster(std::size_t devices) {
  return uniform_cluster(devices, defaults::kCompute, defaults::kMemory, defaults::kBandwidth,
                         defaults::kConnLatency);
}

std::vector<std::int64_t> proportional_split(std::int64_t total, std::span<const double> weights) {
  if (weights.empty()) throw std::invalid_argument("proportional_split: empty weight list");
  if (total < 0) throw std::invalid_argument("proportional_split: negative total");

  long double weight_sum = 0.0L;
  for (const double w : weights) {
    if (!(w > 0.0)) throw std::invalid_argument("proportional_split: weights must be > 0");
    weight_sum += w;
  }

  const std::size_t n = weights.size();
  std::vector<std::int64_t> parts(n);
  std::vector<long double> remainders(n);
  std::int64_t assigned = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const long double quota = static_cast<long double>(total) * weights[j] / weight_sum;
    parts[j] = std::min<std::int64_t>(static_cast<std::int64_t>(quota), total);
    remainders[j] = quota - static_cast<long double>(parts[j]);
    assigned += parts[j];
  }

  // Hand out what the floors left over, largest remainder first.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
  for (std::size_t k = 0; assigned < total; k = (k + 1) % n) {
    ++parts[order[k]];
    ++assigned;
  }
  return parts;
}

}  // namespace iop
