#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "iop/cluster.hpp"
#include "iop/model_ir.hpp"
#include "iop/segmentation.hpp"

namespace iop {

// The one-hot partition dimension (H, IC, OC) of a partitioned operator.
enum class PartitionDim { H, IC, OC };

std::string_view to_string(PartitionDim dim);

// The part of operator `operator_index` that runs on `device`.
struct Slice {
  std::size_t operator_index = 0;
  std::size_t device = 0;
  PartitionDim dim = PartitionDim::OC;
  std::int64_t extent = 0;  // rows, input channels or output channels
  // H only: rows computed on either side of the owned block so that a
  // following window (an overlapping pool) needs no exchange.
  std::int64_t overlap_before = 0;
  std::int64_t overlap_after = 0;
  std::uint64_t weight_bytes = 0;
  std::uint64_t activation_bytes = 0;

  std::int64_t computed_rows() const { return extent + overlap_before + overlap_after; }
  bool operator==(const Slice&) const = default;
};

enum class Placement {
  DeviceOne,   // unpartitioned, runs on device 1 only
  AllDevices,  // unpartitioned, every device computes the full operator
};

struct Replicated {
  Placement placement = Placement::DeviceOne;
  bool operator==(const Replicated&) const = default;
};

struct Partitioned {
  PartitionDim dim = PartitionDim::OC;
  std::vector<Slice> slices;  // one per device, in device order

  std::vector<std::int64_t> extents() const;
  bool operator==(const Partitioned&) const = default;
};

using Assignment = std::variant<Replicated, Partitioned>;

enum class RoundKind { BroadcastConcat, HaloExchange, GatherToOne, AllExchangeSum };

std::string_view to_string(RoundKind kind);

// Rows [row_begin, row_end) of every channel move from one device to another.
struct RowTransfer {
  std::size_t from = 0;
  std::size_t to = 0;
  std::int64_t row_begin = 0;
  std::int64_t row_end = 0;

  bool operator==(const RowTransfer&) const = default;
};

// Bytes each device sends in an all-exchange-and-sum of a full-shape
// partial result: every contributor scatters the chunks owned by its peers,
// then every device sends its reduced chunk to each peer. Chunks follow
// proportional_split of the elements by `weights`.
std::vector<std::uint64_t> all_exchange_bytes(std::int64_t elements, const std::vector<bool>& contributors,
                                              std::span<const double> weights);

// One synchronized exchange phase. `after_operator` is the operator whose
// output moves (0 = the model input). Byte counts are what each device puts
// on its link; links are point to point, so a broadcast sends the payload
// once per peer.
struct CommRound {
  std::size_t after_operator = 0;
  RoundKind kind = RoundKind::BroadcastConcat;
  std::vector<std::uint64_t> per_device_send_bytes;
  std::vector<RowTransfer> transfers;  // HaloExchange only

  bool operator==(const CommRound&) const = default;
};

struct PartitionPlan {
  ModelSpec model;
  ClusterSpec cluster;
  std::vector<TensorShape> shapes;  // output shape per operator
  // Rows of the input image held by each device; empty when every device
  // starts with the whole input.
  std::vector<std::int64_t> input_row_extents;
  std::vector<Assignment> assignments;  // one per operator
  std::vector<CommRound> rounds;        // ordered by after_operator

  const Assignment& assignment(std::size_t index) const { return assignments.at(index - 1); }
  const CommRound* round_after(std::size_t index) const;

  bool operator==(const PartitionPlan&) const = default;
};

// Where the final activation must end up.
enum class Terminal {
  DeviceOne,   // the result consumer; full models end here
  AllDevices,  // hand-off to a following segment that needs the full tensor
};

struct PlanOptions {
  Terminal terminal = Terminal::DeviceOne;
};

// Every conv/fc split by output channels in proportion to device compute;
// the output is broadcast and concatenated before each following conv/fc.
PartitionPlan plan_oc(const ModelSpec& model, const ClusterSpec& cluster, PlanOptions options = {});

// Feature-map rows split across devices with boundary-row exchange; the
// fully connected stage runs unpartitioned on device 1 after a gather.
PartitionPlan plan_coedge(const ModelSpec& model, const ClusterSpec& cluster, PlanOptions options = {});

// Interleaved pairs: the first member is split by output channels and feeds
// the second, split by the same input channels, with no exchange between
// them; one all-exchange-and-sum closes the pair. Singles run as in plan_oc.
PartitionPlan plan_iop(const ModelSpec& model, const ClusterSpec& cluster, const Segmentation& segmentation,
                       PlanOptions options = {});

// The plan_* functions throw InfeasibleMemory when a device's peak exceeds its
// capacity. These skip that check (used for cost-only what-if windows).
PartitionPlan build_oc(const ModelSpec& model, const ClusterSpec& cluster, PlanOptions options = {});
PartitionPlan build_coedge(const ModelSpec& model, const ClusterSpec& cluster, PlanOptions options = {});
PartitionPlan build_iop(const ModelSpec& model, const ClusterSpec& cluster, const Segmentation& segmentation,
                        PlanOptions options = {});

enum class Constraint {
  Memory,           // Σω + max a <= r per device
  SingleDimension,  // exactly one of H/IC/OC per partitioned operator
  ConservationH,
  ConservationIC,
  ConservationOC,
  Alignment,        // IC slices match the producer's OC slices
  SliceCount,       // one slice per device
};

std::string_view to_string(Constraint constraint);

struct Violation {
  Constraint constraint = Constraint::Memory;
  std::optional<std::size_t> operator_index;
  std::optional<std::size_t> device;
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  bool passes(Constraint c) const;
  // Everything except Memory.
  bool structurally_ok() const;
  std::string summary() const;
};

ValidationReport validate_plan(const PartitionPlan& plan);

// Plan document (JSON): model, cluster, per-operator dim and extents, rounds.
// `strategy` and `segmentation` are recorded when given.
std::string save_plan(const PartitionPlan& plan, std::string_view strategy = {},
                      const Segmentation* segmentation = nullptr);
// Rebuilds slices and byte counts from the stored extents. Throws ParseError
// or ValidationError.
PartitionPlan load_plan(std::string_view text);

}  // namespace iop
