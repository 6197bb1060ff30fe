#pragma once

#include <optional>
#include <string>
#include <vector>

#include "iop/model_ir.hpp"

namespace iop {

// A unit of the model: one conv/fc operator, or two consecutive ones run as
// an interleaved pair (first split by output channels, second by input
// channels). Indices are 1-based operator positions in the model; channel-
// local operators between and after the members belong to the segment.
struct Segment {
  std::size_t first = 0;
  std::optional<std::size_t> second;

  bool is_pair() const { return second.has_value(); }
  static Segment single(std::size_t i) { return {i, std::nullopt}; }
  static Segment pair(std::size_t i, std::size_t k) { return {i, k}; }

  auto operator<=>(const Segment&) const = default;
};

struct Segmentation {
  std::vector<Segment> segments;

  std::size_t pair_count() const;
  bool operator==(const Segmentation&) const = default;
};

// 1-based positions of the conv/fc operators, in model order.
std::vector<std::size_t> partitionable_positions(const ModelSpec& model);

// Every conv/fc operator covered exactly once, in order, pairs only between
// consecutive conv/fc operators. Throws PairingError otherwise.
void validate_segmentation(const ModelSpec& model, const Segmentation& segmentation);

Segmentation all_singles(const ModelSpec& model);

// Prints Γ over conv/fc ordinals, e.g. "[(1,2), 3, (4,5)]".
std::string format_segmentation(const ModelSpec& model, const Segmentation& segmentation);

}  // namespace iop
