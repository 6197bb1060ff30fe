#include <sstream>

#include "iop/cost_model.hpp"
#include "iop/errors.hpp"
#include "iop/partitioner.hpp"

namespace iop {

std::string_view to_string(Constraint constraint) {
  switch (constraint) {
    case Constraint::Memory:
      return "memory";
    case Constraint::SingleDimension:
      return "single-dimension";
    case Constraint::ConservationH:
      return "conservation-H";
    case Constraint::ConservationIC:
      return "conservation-IC";
    case Constraint::ConservationOC:
      return "conservation-OC";
    case Constraint::Alignment:
      return "alignment";
    case Constraint::SliceCount:
      return "slice-count";
  }
  return "?";
}

bool ValidationReport::passes(Constraint c) const {
  for (const auto& v : violations) {
    if (v.constraint == c) return false;
  }
  return true;
}

bool ValidationReport::structurally_ok() const {
  for (const auto& v : violations) {
    if (v.constraint != Constraint::Memory) return false;
  }
  return true;
}

std::string ValidationReport::summary() const {
  if (violations.empty()) return "ok";
  std::ostringstream out;
  for (std::size_t k = 0; k < violations.size(); ++k) {
    const auto& v = violations[k];
    if (k > 0) out << "; ";
    out << to_string(v.constraint);
    if (v.operator_index) out << " @operator " << *v.operator_index;
    if (v.device) out << " @device " << *v.device + 1;
    if (!v.detail.empty()) out << ": " << v.detail;
  }
  return out.str();
}

namespace {

Constraint conservation_for(PartitionDim dim) {
  switch (dim) {
    case PartitionDim::H:
      return Constraint::ConservationH;
    case PartitionDim::IC:
      return Constraint::ConservationIC;
    case PartitionDim::OC:
      return Constraint::ConservationOC;
  }
  return Constraint::ConservationOC;
}

std::int64_t full_extent(const OperatorSpec& op, const TensorShape& out, PartitionDim dim) {
  switch (dim) {
    case PartitionDim::H:
      return out.height;
    case PartitionDim::IC:
      return op.c_in;
    case PartitionDim::OC:
      return op.c_out;
  }
  return 0;
}

// Channel slices an operator reads must be the ones its producer wrote.
void check_alignment(const PartitionPlan& plan, std::size_t index, const Partitioned& part,
                     ValidationReport& report) {
  const OperatorSpec& op = plan.model.op(index);
  const bool reads_channel_slices = part.dim == PartitionDim::IC || (part.dim == PartitionDim::OC && op.channel_local());
  if (!reads_channel_slices || index == 1) return;
  const Assignment& prev = plan.assignment(index - 1);
  if (const auto* rep = std::get_if<Replicated>(&prev); rep != nullptr && rep->placement == Placement::AllDevices) {
    return;
  }
  const auto* prev_part = std::get_if<Partitioned>(&prev);
  if (prev_part == nullptr || prev_part->dim != PartitionDim::OC) {
    report.violations.push_back(
        {Constraint::Alignment, index, std::nullopt, "input is not split by output channels"});
    return;
  }
  if (prev_part->extents() != part.extents()) {
    report.violations.push_back(
        {Constraint::Alignment, index, std::nullopt, "channel slices differ from the producer's"});
  }
}

}  // namespace

ValidationReport validate_plan(const PartitionPlan& plan) {
  ValidationReport report;
  const std::size_t m = plan.cluster.size();
  std::vector<TensorShape> shapes;
  try {
    shapes = infer_shapes(plan.model);
  } catch (const ShapeError& e) {
    report.violations.push_back({Constraint::SliceCount, std::nullopt, std::nullopt, e.what()});
    return report;
  }
  if (plan.assignments.size() != plan.model.size()) {
    report.violations.push_back({Constraint::SliceCount, std::nullopt, std::nullopt,
                                 "plan has " + std::to_string(plan.assignments.size()) + " assignments for " +
                                     std::to_string(plan.model.size()) + " operators"});
    return report;
  }

  for (std::size_t index = 1; index <= plan.model.size(); ++index) {
    const auto* part = std::get_if<Partitioned>(&plan.assignment(index));
    if (part == nullptr) continue;
    const OperatorSpec& op = plan.model.op(index);
    if (part->slices.size() != m) {
      report.violations.push_back({Constraint::SliceCount, index, std::nullopt,
                                   std::to_string(part->slices.size()) + " slices for " + std::to_string(m) +
                                       " devices"});
      continue;
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (part->slices[j].dim != part->dim) {
        report.violations.push_back({Constraint::SingleDimension, index, j,
                                     "slice uses " + std::string(to_string(part->slices[j].dim)) + ", operator uses " +
                                         std::string(to_string(part->dim))});
      }
    }
    const Constraint conservation = conservation_for(part->dim);
    const std::int64_t full = full_extent(op, shapes[index - 1], part->dim);
    std::int64_t sum = 0;
    for (std::size_t j = 0; j < m; ++j) {
      const std::int64_t extent = part->slices[j].extent;
      if (extent < 0) {
        report.violations.push_back({conservation, index, j, "negative extent " + std::to_string(extent)});
      }
      const auto& slice = part->slices[j];
      if (slice.overlap_before < 0 || slice.overlap_after < 0 ||
          ((slice.overlap_before > 0 || slice.overlap_after > 0) && part->dim != PartitionDim::H)) {
        report.violations.push_back({conservation, index, j, "overlap rows outside an H split"});
      }
      sum += extent;
    }
    std::int64_t offset = 0;
    for (std::size_t j = 0; j < m && part->dim == PartitionDim::H; ++j) {
      const auto& slice = part->slices[j];
      if (offset - slice.overlap_before < 0 || offset + slice.extent + slice.overlap_after > full) {
        report.violations.push_back({conservation, index, j, "overlap rows run past the feature map"});
      }
      offset += std::max<std::int64_t>(slice.extent, 0);
    }
    if (sum != full) {
      report.violations.push_back({conservation, index, std::nullopt,
                                   "extents sum to " + std::to_string(sum) + ", dimension is " + std::to_string(full)});
    }
    check_alignment(plan, index, *part, report);
  }

  if (!report.structurally_ok()) return report;

  const auto peaks = peak_memory(plan);
  for (std::size_t j = 0; j < m; ++j) {
    if (peaks[j] > plan.cluster.devices[j].memory) {
      report.violations.push_back({Constraint::Memory, std::nullopt, j,
                                   "peak " + std::to_string(peaks[j]) + " B exceeds capacity " +
                                       std::to_string(plan.cluster.devices[j].memory) + " B"});
    }
  }
  return report;
}

}  // namespace iop
