#include "iop/partitioner.hpp"

#include <algorithm>
#include <numeric>

#include "iop/cost_model.hpp"
#include "iop/errors.hpp"

namespace iop {

std::string_view to_string(PartitionDim dim) {
  switch (dim) {
    case PartitionDim::H:
      return "H";
    case PartitionDim::IC:
      return "IC";
    case PartitionDim::OC:
      return "OC";
  }
  return "?";
}

std::string_view to_string(RoundKind kind) {
  switch (kind) {
    case RoundKind::BroadcastConcat:
      return "broadcast_concat";
    case RoundKind::HaloExchange:
      return "halo_exchange";
    case RoundKind::GatherToOne:
      return "gather_to_one";
    case RoundKind::AllExchangeSum:
      return "all_exchange_sum";
  }
  return "?";
}

std::vector<std::int64_t> Partitioned::extents() const {
  std::vector<std::int64_t> out;
  out.reserve(slices.size());
  for (const auto& s : slices) out.push_back(s.extent);
  return out;
}

std::vector<std::uint64_t> all_exchange_bytes(std::int64_t elements, const std::vector<bool>& contributors,
                                              std::span<const double> weights) {
  const auto chunks = proportional_split(elements, weights);
  const std::size_t m = chunks.size();
  std::vector<std::uint64_t> bytes(m, 0);
  for (std::size_t j = 0; j < m; ++j) {
    const auto own = static_cast<std::uint64_t>(chunks[j]);
    if (contributors.at(j)) bytes[j] += static_cast<std::uint64_t>(elements) - own;
    bytes[j] += (m - 1) * own;
    bytes[j] *= kElementBytes;
  }
  return bytes;
}

const CommRound* PartitionPlan::round_after(std::size_t index) const {
  for (const auto& r : rounds) {
    if (r.after_operator == index) return &r;
  }
  return nullptr;
}

namespace {

// Where the most recent activation lives, as seen by the next operator.
struct Everywhere {};
struct OnDeviceOne {};
struct Channels {
  std::vector<std::int64_t> extents;
};
struct RowRange {
  std::int64_t begin = 0;
  std::int64_t end = 0;
  bool contains(std::int64_t row) const { return row >= begin && row < end; }
};
struct Rows {
  std::vector<std::int64_t> extents;  // owned blocks
  std::vector<RowRange> held;         // owned plus overlap rows
};

std::vector<RowRange> held_ranges(const Partitioned& part) {
  std::vector<RowRange> held;
  std::int64_t offset = 0;
  for (const auto& s : part.slices) {
    held.push_back({offset - s.overlap_before, offset + s.extent + s.overlap_after});
    offset += s.extent;
  }
  return held;
}

std::vector<RowRange> blocks(const std::vector<std::int64_t>& extents) {
  std::vector<RowRange> held;
  std::int64_t offset = 0;
  for (const auto e : extents) {
    held.push_back({offset, offset + e});
    offset += e;
  }
  return held;
}
struct Partial {
  std::vector<bool> contributors;
};
using State = std::variant<Everywhere, OnDeviceOne, Channels, Rows, Partial>;

std::vector<std::int64_t> prefix_offsets(const std::vector<std::int64_t>& extents) {
  std::vector<std::int64_t> offsets(extents.size() + 1, 0);
  std::partial_sum(extents.begin(), extents.end(), offsets.begin() + 1);
  return offsets;
}

std::string op_name(const OperatorSpec& op) {
  return "operator " + std::to_string(op.index) + " (" + std::string(to_string(op.kind)) + ")";
}

class PlanBuilder {
 public:
  PlanBuilder(const ModelSpec& model, const ClusterSpec& cluster, std::vector<std::int64_t> input_rows) {
    validate_model(model);
    validate_cluster(cluster);
    plan_.model = model;
    plan_.cluster = cluster;
    plan_.shapes = infer_shapes(model);
    plan_.input_row_extents = std::move(input_rows);
    shape_ = model.input_shape;
    if (plan_.input_row_extents.empty()) {
      state_ = Everywhere{};
    } else {
      state_ = Rows{plan_.input_row_extents, blocks(plan_.input_row_extents)};
    }
  }

  std::size_t devices() const { return plan_.cluster.size(); }
  const ModelSpec& model() const { return plan_.model; }
  const OperatorSpec& next_op() const { return plan_.model.operators.at(plan_.assignments.size()); }
  const TensorShape& next_out_shape() const { return plan_.shapes.at(plan_.assignments.size()); }
  bool done() const { return plan_.assignments.size() == plan_.model.size(); }

  std::vector<std::int64_t> split(std::int64_t total) const {
    const auto weights = plan_.cluster.compute_weights();
    return proportional_split(total, weights);
  }

  Partitioned partitioned(PartitionDim dim, const std::vector<std::int64_t>& extents,
                          const std::vector<std::int64_t>& before = {},
                          const std::vector<std::int64_t>& after = {}) const {
    const OperatorSpec& op = next_op();
    Partitioned p{dim, {}};
    for (std::size_t j = 0; j < extents.size(); ++j) {
      Slice s{op.index, j, dim, extents[j]};
      if (!before.empty()) s.overlap_before = before[j];
      if (!after.empty()) s.overlap_after = after[j];
      const auto mem = memory_bytes(op, s, next_out_shape());
      s.weight_bytes = mem.weight_bytes;
      s.activation_bytes = mem.activation_bytes;
      p.slices.push_back(s);
    }
    return p;
  }

  // A channel-local operator follows whatever distribution its input has.
  Assignment inherit() const {
    return std::visit(
        [&](const auto& s) -> Assignment {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Channels>) {
            return partitioned(PartitionDim::OC, s.extents);
          } else if constexpr (std::is_same_v<T, Rows>) {
            return partitioned(PartitionDim::H, split(next_out_shape().height));
          } else if constexpr (std::is_same_v<T, OnDeviceOne>) {
            return Replicated{Placement::DeviceOne};
          } else {
            // Everywhere, or partial sums that have to be reduced first.
            return Replicated{Placement::AllDevices};
          }
        },
        state_);
  }

  void place(Assignment assignment) {
    const OperatorSpec& op = next_op();
    if (const auto* rep = std::get_if<Replicated>(&assignment)) {
      if (rep->placement == Placement::DeviceOne) {
        require_device_one();
        state_ = OnDeviceOne{};
      } else {
        require_everywhere();
        state_ = Everywhere{};
      }
    } else {
      const auto& part = std::get<Partitioned>(assignment);
      const auto extents = part.extents();
      switch (part.dim) {
        case PartitionDim::OC:
          if (op.partitionable()) {
            require_everywhere();
          } else {
            require_channels(extents, op);
          }
          state_ = Channels{extents};
          break;
        case PartitionDim::IC: {
          if (!op.partitionable()) throw InvalidPlan(op_name(op) + ": only conv/fc can be split by input channels");
          require_channels(extents, op);
          std::vector<bool> contributors(devices());
          for (std::size_t j = 0; j < devices(); ++j) {
            contributors[j] = extents[j] > 0 || (j == 0 && op.has_bias);
          }
          state_ = Partial{std::move(contributors)};
          break;
        }
        case PartitionDim::H:
          require_rows(part, op);
          state_ = Rows{extents, held_ranges(part)};
          break;
      }
    }
    shape_ = next_out_shape();
    plan_.assignments.push_back(std::move(assignment));
  }

  PartitionPlan finish(Terminal terminal) {
    if (!done()) throw std::logic_error("PlanBuilder::finish before every operator was placed");
    if (terminal == Terminal::DeviceOne) {
      require_device_one();
    } else {
      require_everywhere();
    }
    return std::move(plan_);
  }

 private:
  std::size_t last_placed() const { return plan_.assignments.size(); }

  std::uint64_t full_bytes() const { return static_cast<std::uint64_t>(shape_.elements()) * kElementBytes; }

  // Bytes of the current activation that each device produced itself.
  std::vector<std::uint64_t> owned_bytes() const {
    std::vector<std::uint64_t> bytes(devices(), 0);
    const auto plane = static_cast<std::uint64_t>(shape_.height * shape_.width) * kElementBytes;
    const auto row = static_cast<std::uint64_t>(shape_.channels * shape_.width) * kElementBytes;
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Channels>) {
            for (std::size_t j = 0; j < devices(); ++j) bytes[j] = static_cast<std::uint64_t>(s.extents[j]) * plane;
          } else if constexpr (std::is_same_v<T, Rows>) {
            for (std::size_t j = 0; j < devices(); ++j) {
              bytes[j] = static_cast<std::uint64_t>(std::max<std::int64_t>(s.held[j].end - s.held[j].begin, 0)) * row;
            }
          } else if constexpr (std::is_same_v<T, Partial>) {
            for (std::size_t j = 0; j < devices(); ++j) bytes[j] = s.contributors[j] ? full_bytes() : 0;
          } else if constexpr (std::is_same_v<T, OnDeviceOne>) {
            bytes[0] = full_bytes();
          } else {
            for (auto& b : bytes) b = full_bytes();
          }
        },
        state_);
    return bytes;
  }

  void emit(RoundKind kind, std::vector<std::uint64_t> bytes, std::vector<RowTransfer> transfers = {}) {
    plan_.rounds.push_back({last_placed(), kind, std::move(bytes), std::move(transfers)});
  }

  void require_everywhere() {
    if (std::holds_alternative<Everywhere>(state_)) return;
    if (devices() > 1) {
      if (const auto* partial = std::get_if<Partial>(&state_)) {
        emit(RoundKind::AllExchangeSum,
             all_exchange_bytes(shape_.elements(), partial->contributors, plan_.cluster.compute_weights()));
      } else {
        auto bytes = owned_bytes();
        for (auto& b : bytes) b *= devices() - 1;
        emit(RoundKind::BroadcastConcat, std::move(bytes));
      }
    }
    state_ = Everywhere{};
  }

  void require_device_one() {
    if (std::holds_alternative<Everywhere>(state_) || std::holds_alternative<OnDeviceOne>(state_)) return;
    if (devices() > 1) {
      auto bytes = owned_bytes();
      bytes[0] = 0;
      if (const auto* rows = std::get_if<Rows>(&state_)) {
        // each missing row comes from the lowest-numbered device holding it
        const auto row = static_cast<std::uint64_t>(shape_.channels * shape_.width) * kElementBytes;
        std::vector<bool> have(static_cast<std::size_t>(shape_.height), false);
        for (std::int64_t h = rows->held[0].begin; h < rows->held[0].end; ++h) have[static_cast<std::size_t>(h)] = true;
        for (std::size_t j = 1; j < devices(); ++j) {
          bytes[j] = 0;
          for (std::int64_t h = rows->held[j].begin; h < rows->held[j].end; ++h) {
            if (have[static_cast<std::size_t>(h)]) continue;
            have[static_cast<std::size_t>(h)] = true;
            bytes[j] += row;
          }
        }
      }
      emit(RoundKind::GatherToOne, std::move(bytes));
    }
    state_ = OnDeviceOne{};
  }

  void require_channels(const std::vector<std::int64_t>& extents, const OperatorSpec& op) {
    if (std::holds_alternative<Everywhere>(state_) || devices() == 1) return;
    if (const auto* ch = std::get_if<Channels>(&state_); ch != nullptr && ch->extents == extents) return;
    throw PairingError(op_name(op) +
                       ": channel slices do not line up with the producer's output-channel slices");
  }

  // Boundary rows that each device is missing before computing its output
  // rows of `op`.
  void require_rows(const Partitioned& part, const OperatorSpec& op) {
    if (std::holds_alternative<Everywhere>(state_) || devices() == 1) return;
    const auto* held = std::get_if<Rows>(&state_);
    if (held == nullptr) throw InvalidPlan(op_name(op) + ": H partitioning needs a row-distributed input");

    const auto owners = prefix_offsets(held->extents);
    const auto computed = held_ranges(part);
    const std::int64_t in_rows = shape_.height;
    const auto row_bytes = static_cast<std::uint64_t>(shape_.channels * shape_.width) * kElementBytes;

    std::vector<RowTransfer> transfers;
    std::vector<std::uint64_t> bytes(devices(), 0);
    for (std::size_t j = 0; j < devices(); ++j) {
      const std::int64_t first = computed[j].begin;
      const std::int64_t last = computed[j].end;
      if (first >= last) continue;
      const std::int64_t lo = std::max<std::int64_t>(0, first * op.stride - op.padding);
      const std::int64_t hi = std::min<std::int64_t>(in_rows, (last - 1) * op.stride - op.padding + op.kernel_h);
      std::int64_t row = lo;
      while (row < hi) {
        if (held->held[j].contains(row)) {
          row = held->held[j].end;
          continue;
        }
        const auto owner = static_cast<std::size_t>(
            std::upper_bound(owners.begin(), owners.end(), row) - owners.begin() - 1);
        std::int64_t end = std::min(hi, owners[owner + 1]);
        if (row < held->held[j].begin) end = std::min(end, held->held[j].begin);
        transfers.push_back({owner, j, row, end});
        bytes[owner] += static_cast<std::uint64_t>(end - row) * row_bytes;
        row = end;
      }
    }
    if (!transfers.empty()) emit(RoundKind::HaloExchange, std::move(bytes), std::move(transfers));
  }

  PartitionPlan plan_;
  State state_;
  TensorShape shape_;
};

void check_memory(const PartitionPlan& plan, std::string_view strategy) {
  const auto report = validate_plan(plan);
  if (!report.structurally_ok()) {
    throw std::logic_error(std::string(strategy) + " planner produced an inconsistent plan: " + report.summary());
  }
  if (!report.passes(Constraint::Memory)) {
    throw InfeasibleMemory(std::string(strategy) + " plan does not fit: " + report.summary());
  }
}

}  // namespace

PartitionPlan build_oc(const ModelSpec& model, const ClusterSpec& cluster, PlanOptions options) {
  PlanBuilder builder(model, cluster, {});
  while (!builder.done()) {
    const OperatorSpec& op = builder.next_op();
    if (op.partitionable()) {
      builder.place(builder.partitioned(PartitionDim::OC, builder.split(op.c_out)));
    } else {
      builder.place(builder.inherit());
    }
  }
  return builder.finish(options.terminal);
}

namespace {

struct RowLayout {
  std::vector<std::int64_t> extents;
  std::vector<std::int64_t> before;
  std::vector<std::int64_t> after;
};

// Row split of every operator output in the feature stage (before the first
// fc); entry 0 is the input. A conv output, the input, and the last feature
// map are split by compute weight. Any other output is split at the rows
// where its consumer's blocks start, and each device also computes the rows
// its consumer's windows reach past that block.
std::vector<RowLayout> coedge_layout(const ModelSpec& model, const std::vector<TensorShape>& shapes,
                                     const ClusterSpec& cluster) {
  const auto weights = cluster.compute_weights();
  const std::size_t m = cluster.size();
  std::size_t features = 0;
  while (features < model.size() && model.operators[features].kind != OpKind::FullyConnected) ++features;
  std::vector<RowLayout> rows(features + 1);
  auto height = [&](std::size_t i) { return i == 0 ? model.input_shape.height : shapes[i - 1].height; };

  for (std::size_t i = features + 1; i-- > 0;) {
    RowLayout& layout = rows[i];
    layout.before.assign(m, 0);
    layout.after.assign(m, 0);
    const OperatorSpec* consumer = i > 0 && i < features ? &model.operators[i] : nullptr;
    if (consumer == nullptr || consumer->partitionable()) {
      layout.extents = proportional_split(height(i), weights);
      continue;
    }
    const RowLayout& next = rows[i + 1];
    const std::int64_t h = height(i);
    const auto next_off = prefix_offsets(next.extents);
    std::vector<std::int64_t> cut(m + 1, h);
    cut[0] = 0;
    for (std::size_t j = 1; j < m; ++j) {
      cut[j] = std::clamp<std::int64_t>(next_off[j] * consumer->stride - consumer->padding, cut[j - 1], h);
    }
    for (std::size_t j = 0; j < m; ++j) {
      layout.extents.push_back(cut[j + 1] - cut[j]);
      const std::int64_t first = next_off[j] - next.before[j];
      const std::int64_t last = next_off[j + 1] + next.after[j];
      if (first >= last) continue;
      const std::int64_t lo = std::max<std::int64_t>(0, first * consumer->stride - consumer->padding);
      const std::int64_t hi = std::min(h, (last - 1) * consumer->stride - consumer->padding + consumer->kernel_h);
      if (cut[j] < cut[j + 1]) {
        layout.before[j] = std::max<std::int64_t>(0, cut[j] - lo);
        layout.after[j] = std::max<std::int64_t>(0, hi - cut[j + 1]);
      } else if (lo < hi) {
        // nothing owned: compute the window as overlap past the empty block
        layout.before[j] = std::max<std::int64_t>(0, cut[j] - lo);
        layout.after[j] = std::max<std::int64_t>(0, hi - cut[j]);
      }
    }
  }
  return rows;
}

}  // namespace

PartitionPlan build_coedge(const ModelSpec& model, const ClusterSpec& cluster, PlanOptions options) {
  validate_model(model);
  validate_cluster(cluster);
  const auto rows = coedge_layout(model, infer_shapes(model), cluster);
  PlanBuilder builder(model, cluster, rows[0].extents);
  std::size_t i = 0;
  while (!builder.done()) {
    ++i;
    if (i < rows.size()) {
      builder.place(builder.partitioned(PartitionDim::H, rows[i].extents, rows[i].before, rows[i].after));
    } else {
      builder.place(Replicated{Placement::DeviceOne});
    }
  }
  return builder.finish(options.terminal);
}

PartitionPlan build_iop(const ModelSpec& model, const ClusterSpec& cluster, const Segmentation& segmentation,
                        PlanOptions options) {
  validate_segmentation(model, segmentation);
  enum class Role { Single, Lead, Follow };
  std::vector<Role> roles(model.size() + 1, Role::Single);
  std::vector<std::size_t> partner(model.size() + 1, 0);
  for (const auto& seg : segmentation.segments) {
    if (seg.is_pair()) {
      roles[seg.first] = Role::Lead;
      roles[*seg.second] = Role::Follow;
      partner[*seg.second] = seg.first;
    }
  }

  PlanBuilder builder(model, cluster, {});
  std::vector<std::vector<std::int64_t>> oc_extents(model.size() + 1);
  while (!builder.done()) {
    const OperatorSpec& op = builder.next_op();
    if (!op.partitionable()) {
      builder.place(builder.inherit());
      continue;
    }
    if (roles[op.index] == Role::Follow) {
      builder.place(builder.partitioned(PartitionDim::IC, oc_extents[partner[op.index]]));
    } else {
      oc_extents[op.index] = builder.split(op.c_out);
      builder.place(builder.partitioned(PartitionDim::OC, oc_extents[op.index]));
    }
  }
  return builder.finish(options.terminal);
}

PartitionPlan plan_oc(const ModelSpec& model, const ClusterSpec& cluster, PlanOptions options) {
  auto plan = build_oc(model, cluster, options);
  check_memory(plan, "oc");
  return plan;
}

PartitionPlan plan_coedge(const ModelSpec& model, const ClusterSpec& cluster, PlanOptions options) {
  auto plan = build_coedge(model, cluster, options);
  check_memory(plan, "coedge");
  return plan;
}

PartitionPlan plan_iop(const ModelSpec& model, const ClusterSpec& cluster, const Segmentation& segmentation,
                       PlanOptions options) {
  auto plan = build_iop(model, cluster, segmentation, options);
  check_memory(plan, "iop");
  return plan;
}

}  // namespace iop
