#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace iop {

struct DeviceSpec {
  std::size_t id = 0;         // 0-based; reports print id + 1
  double compute = 1.0;       // f: MACs per millisecond
  std::uint64_t memory = 1;   // r: bytes

  bool operator==(const DeviceSpec&) const = default;
};

// The device set with one shared link bandwidth and a fixed set-up cost paid
// once per communication round.
struct ClusterSpec {
  std::vector<DeviceSpec> devices;
  double bandwidth = 1.0;     // b: bytes per millisecond
  double conn_latency = 0.0;  // L: milliseconds per round

  std::size_t size() const { return devices.size(); }
  std::vector<double> compute_weights() const;

  bool operator==(const ClusterSpec&) const = default;
};

// Throws ValidationError on m == 0, non-positive f/r/b, negative L or
// ids that are not 0..m-1 in order.
void validate_cluster(const ClusterSpec& cluster);

ClusterSpec uniform_cluster(std::size_t devices, double compute, std::uint64_t memory, double bandwidth,
                            double conn_latency);

// Documented defaults (docs/defaults.md).
namespace defaults {
inline constexpr std::size_t kDevices = 3;
inline constexpr double kCompute = 5.0e7;              // MAC/ms (50 GMAC/s)
inline constexpr std::uint64_t kMemory = 1ULL << 30;   // 1 GiB
inline constexpr double kBandwidth = 1.25e7;           // bytes/ms (100 Gbit/s)
inline constexpr double kConnLatency = 4.0;            // ms
}  // namespace defaults

ClusterSpec default_cluster(std::size_t devices = defaults::kDevices);

// Largest-remainder apportionment of `total` units in proportion to
// `weights`. Parts always sum to `total`; remainder ties go to the lowest
// index.
std::vector<std::int64_t> proportional_split(std::int64_t total, std::span<const double> weights);

// Cluster document (JSON); see docs/model-spec.md.
ClusterSpec load_cluster(std::string_view text);
std::string save_cluster(const ClusterSpec& cluster);

}  // namespace iop
