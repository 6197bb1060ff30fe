#pragma once

#include <cstddef>
#include <vector>

#include "iop/cluster.hpp"
#include "iop/cost_model.hpp"
#include "iop/model_ir.hpp"
#include "iop/segmentation.hpp"

namespace iop {

// What an unpaired window is compared against in the greedy pass.
enum class Baseline { CoEdge, OC };

struct SegmenterOptions {
  Baseline baseline = Baseline::CoEdge;
  CostOptions cost{.serial_links = false, .require_memory = false};
};

// Operators [first, last] (1-based, inclusive) as a standalone model whose
// input is the activation feeding `first`.
ModelSpec window_model(const ModelSpec& model, std::size_t first, std::size_t last);

struct GreedyStep {
  std::size_t first = 0;   // operator positions of the candidate pair
  std::size_t second = 0;
  double iop_ms = 0;       // window cost with the pair interleaved
  double baseline_ms = 0;  // window cost under the baseline strategy
  bool paired = false;
};

struct GreedyResult {
  Segmentation segmentation;
  std::vector<GreedyStep> steps;
};

// Left-to-right pairing pass: a conv/fc operator is paired with its
// successor whenever the interleaved window is no slower than the baseline
// window (ties pair), otherwise it stays single.
GreedyResult greedy_segment_traced(const ModelSpec& model, const ClusterSpec& cluster,
                                   const SegmenterOptions& options = {});
Segmentation greedy_segment(const ModelSpec& model, const ClusterSpec& cluster, const SegmenterOptions& options = {});

struct ExhaustiveResult {
  Segmentation segmentation;
  double total_ms = 0;
};

inline constexpr std::size_t kExhaustiveLimit = 20;

// Minimum-cost segmentation over every legal pairing, by dynamic programming
// over prefixes (the full-model cost is a sum of per-segment window costs).
// Ties go to fewer pairs, then to the lexicographically smaller Γ. Throws
// TooLarge beyond `limit` conv/fc operators.
ExhaustiveResult exhaustive_segment(const ModelSpec& model, const ClusterSpec& cluster,
                                    const SegmenterOptions& options = {}, std::size_t limit = kExhaustiveLimit);

// Full-model cost of the interleaved plan for `segmentation`.
double segmentation_cost(const ModelSpec& model, const ClusterSpec& cluster, const Segmentation& segmentation,
                         const CostOptions& options = {.serial_links = false, .require_memory = false});

}  // namespace iop
