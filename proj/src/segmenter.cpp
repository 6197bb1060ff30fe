#include "iop/segmenter.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include "iop/errors.hpp"
#include "iop/partitioner.hpp"

namespace iop {

std::size_t Segmentation::pair_count() const {
  return static_cast<std::size_t>(
      std::count_if(segments.begin(), segments.end(), [](const Segment& s) { return s.is_pair(); }));
}

std::vector<std::size_t> partitionable_positions(const ModelSpec& model) {
  std::vector<std::size_t> positions;
  for (const auto& op : model.operators) {
    if (op.partitionable()) positions.push_back(op.index);
  }
  return positions;
}

void validate_segmentation(const ModelSpec& model, const Segmentation& segmentation) {
  const auto positions = partitionable_positions(model);
  std::size_t k = 0;
  for (const auto& seg : segmentation.segments) {
    if (k >= positions.size() || seg.first != positions[k]) {
      throw PairingError("segment starting at operator " + std::to_string(seg.first) +
                         " is not the next conv/fc operator");
    }
    if (seg.is_pair()) {
      if (k + 1 >= positions.size() || *seg.second != positions[k + 1]) {
        throw PairingError("pair (" + std::to_string(seg.first) + "," + std::to_string(*seg.second) +
                           ") does not join consecutive conv/fc operators");
      }
      k += 2;
    } else {
      k += 1;
    }
  }
  if (k != positions.size()) {
    throw PairingError("segmentation covers " + std::to_string(k) + " of " + std::to_string(positions.size()) +
                       " conv/fc operators");
  }
}

Segmentation all_singles(const ModelSpec& model) {
  Segmentation seg;
  for (const auto p : partitionable_positions(model)) seg.segments.push_back(Segment::single(p));
  return seg;
}

std::string format_segmentation(const ModelSpec& model, const Segmentation& segmentation) {
  const auto positions = partitionable_positions(model);
  auto ordinal = [&](std::size_t position) {
    const auto it = std::find(positions.begin(), positions.end(), position);
    return static_cast<std::size_t>(it - positions.begin()) + 1;
  };
  std::ostringstream out;
  out << '[';
  for (std::size_t k = 0; k < segmentation.segments.size(); ++k) {
    const auto& seg = segmentation.segments[k];
    if (k > 0) out << ", ";
    if (seg.is_pair()) {
      out << '(' << ordinal(seg.first) << ',' << ordinal(*seg.second) << ')';
    } else {
      out << ordinal(seg.first);
    }
  }
  out << ']';
  return out.str();
}

ModelSpec window_model(const ModelSpec& model, std::size_t first, std::size_t last) {
  if (first < 1 || last < first || last > model.size()) throw std::out_of_range("window_model: bad range");
  const auto shapes = infer_shapes(model);
  ModelSpec window;
  window.name = model.name + "[" + std::to_string(first) + ":" + std::to_string(last) + "]";
  window.input_shape = input_shape_of(model, shapes, first);
  for (std::size_t i = first; i <= last; ++i) {
    OperatorSpec op = model.op(i);
    op.index = i - first + 1;
    window.operators.push_back(op);
  }
  return window;
}

namespace {

// Conv/fc positions plus the window (first op, last op) a segment of
// `length` members starting at positions[k] occupies.
struct Windows {
  const ModelSpec& model;
  std::vector<std::size_t> positions;

  std::size_t last_of(std::size_t k, std::size_t length) const {
    return k + length < positions.size() ? positions[k + length] - 1 : model.size();
  }
};

double window_iop_cost(const Windows& w, const ClusterSpec& cluster, std::size_t k, std::size_t length,
                       const CostOptions& cost) {
  const std::size_t first = w.positions[k];
  const std::size_t last = w.last_of(k, length);
  const ModelSpec window = window_model(w.model, first, last);
  Segmentation seg;
  seg.segments.push_back(length == 2 ? Segment::pair(1, w.positions[k + 1] - first + 1) : Segment::single(1));
  const PlanOptions options{last == w.model.size() ? Terminal::DeviceOne : Terminal::AllDevices};
  return evaluate(build_iop(window, cluster, seg, options), cost).total_ms;
}

double window_baseline_cost(const Windows& w, const ClusterSpec& cluster, std::size_t k, Baseline baseline,
                            const CostOptions& cost) {
  const std::size_t first = w.positions[k];
  const std::size_t last = w.last_of(k, 2);
  const ModelSpec window = window_model(w.model, first, last);
  const PlanOptions options{last == w.model.size() ? Terminal::DeviceOne : Terminal::AllDevices};
  const PartitionPlan plan =
      baseline == Baseline::CoEdge ? build_coedge(window, cluster, options) : build_oc(window, cluster, options);
  return evaluate(plan, cost).total_ms;
}

}  // namespace

GreedyResult greedy_segment_traced(const ModelSpec& model, const ClusterSpec& cluster,
                                   const SegmenterOptions& options) {
  validate_model(model);
  validate_cluster(cluster);
  const Windows w{model, partitionable_positions(model)};
  GreedyResult result;
  std::size_t k = 0;
  while (k < w.positions.size()) {
    if (k + 1 >= w.positions.size()) {
      result.segmentation.segments.push_back(Segment::single(w.positions[k]));
      break;
    }
    GreedyStep step{w.positions[k], w.positions[k + 1], 0, 0, false};
    step.iop_ms = window_iop_cost(w, cluster, k, 2, options.cost);
    step.baseline_ms = window_baseline_cost(w, cluster, k, options.baseline, options.cost);
    step.paired = step.iop_ms <= step.baseline_ms;
    result.steps.push_back(step);
    if (step.paired) {
      result.segmentation.segments.push_back(Segment::pair(step.first, step.second));
      k += 2;
    } else {
      result.segmentation.segments.push_back(Segment::single(step.first));
      k += 1;
    }
  }
  return result;
}

Segmentation greedy_segment(const ModelSpec& model, const ClusterSpec& cluster, const SegmenterOptions& options) {
  return greedy_segment_traced(model, cluster, options).segmentation;
}

ExhaustiveResult exhaustive_segment(const ModelSpec& model, const ClusterSpec& cluster,
                                    const SegmenterOptions& options, std::size_t limit) {
  validate_model(model);
  validate_cluster(cluster);
  const Windows w{model, partitionable_positions(model)};
  const std::size_t n = w.positions.size();
  if (n > limit) {
    throw TooLarge("exhaustive segmentation limited to " + std::to_string(limit) + " conv/fc operators, model has " +
                   std::to_string(n));
  }

  struct Best {
    double cost = std::numeric_limits<double>::infinity();
    std::size_t pairs = 0;
    std::vector<Segment> segments;

    bool better_than(const Best& other) const {
      if (cost != other.cost) return cost < other.cost;
      if (pairs != other.pairs) return pairs < other.pairs;
      return segments < other.segments;
    }
  };

  std::vector<Best> best(n + 1);
  best[0].cost = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    Best single = best[k - 1];
    single.cost += window_iop_cost(w, cluster, k - 1, 1, options.cost);
    single.segments.push_back(Segment::single(w.positions[k - 1]));
    best[k] = std::move(single);
    if (k >= 2) {
      Best paired = best[k - 2];
      paired.cost += window_iop_cost(w, cluster, k - 2, 2, options.cost);
      paired.pairs += 1;
      paired.segments.push_back(Segment::pair(w.positions[k - 2], w.positions[k - 1]));
      if (paired.better_than(best[k])) best[k] = std::move(paired);
    }
  }

  ExhaustiveResult result;
  result.segmentation.segments = std::move(best[n].segments);
  result.total_ms = segmentation_cost(model, cluster, result.segmentation, options.cost);
  return result;
}

double segmentation_cost(const ModelSpec& model, const ClusterSpec& cluster, const Segmentation& segmentation,
                         const CostOptions& options) {
  return evaluate(build_iop(model, cluster, segmentation), options).total_ms;
}

}  // namespace iop
