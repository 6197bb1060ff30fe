#include "iop/executor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "iop/cost_model.hpp"
#include "iop/errors.hpp"
#include "iop/kernels.hpp"

namespace iop {

Tensor::Tensor(TensorShape shape, double fill)
    : shape_(shape), values_(static_cast<std::size_t>(shape.elements()), fill) {}

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

// Uniform in [-1, 1) from the top 53 bits; identical on every platform.
class Uniform {
 public:
  explicit Uniform(std::uint64_t seed) : engine_(seed) {}
  double operator()() { return static_cast<double>(engine_() >> 11) * 0x1.0p-52 - 1.0; }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Range {
  std::int64_t begin = 0;
  std::int64_t end = 0;
  bool empty() const { return begin >= end; }
  std::int64_t size() const { return end - begin; }
};

// Input rows read when producing output rows `rows`.
Range input_rows(const OperatorSpec& op, Range rows, std::int64_t in_height) {
  if (rows.empty()) return {0, 0};
  return {std::max<std::int64_t>(0, rows.begin * op.stride - op.padding),
          std::min<std::int64_t>(in_height, (rows.end - 1) * op.stride - op.padding + op.kernel_h)};
}

void conv_region(const OperatorSpec& op, const Tensor& in, const OperatorWeights& w, bool add_bias, Tensor& out,
                 Range oc, Range ic, Range rows) {
  const TensorShape& is = in.shape();
  const TensorShape& os = out.shape();
  const std::int64_t kh = op.kernel_h;
  const std::int64_t kw = op.kernel_w;
  const std::int64_t s = op.stride;
  const std::int64_t p = op.padding;
  const bool dense = os.height == 1 && os.width == 1 && kh == is.height && kw == is.width && p == 0;

  if (dense) {
    // Input channels [ic.begin, ic.end) are one contiguous run of the CHW
    // buffer and match one contiguous run of each kernel row.
    const std::int64_t plane = is.height * is.width;
    const auto n = static_cast<std::size_t>(ic.size() * plane);
    for (std::int64_t o = oc.begin; o < oc.end; ++o) {
      const double* wrow = w.kernel.data() + (o * op.c_in + ic.begin) * plane;
      const double base = add_bias ? w.bias[static_cast<std::size_t>(o)] : 0.0;
      out.at(o, 0, 0) = base + kernels::dot(wrow, in.row(ic.begin, 0), n);
    }
    return;
  }

  // One output row at a time: lay the row's receptive fields out as
  // [column][c][y][x] (zeros where the window hangs over the padding), then
  // every output element is one dot with the kernel's [c][y][x] run.
  const std::int64_t k = ic.size() * kh * kw;
  std::vector<double> patch(static_cast<std::size_t>(os.width * k));
  for (std::int64_t r = rows.begin; r < rows.end; ++r) {
    double* dst = patch.data();
    for (std::int64_t col = 0; col < os.width; ++col) {
      for (std::int64_t c = ic.begin; c < ic.end; ++c) {
        for (std::int64_t y = 0; y < kh; ++y) {
          const std::int64_t ih = r * s - p + y;
          if (ih < 0 || ih >= is.height) {
            dst = std::fill_n(dst, kw, 0.0);
            continue;
          }
          const double* irow = in.row(c, ih);
          for (std::int64_t x = 0; x < kw; ++x) {
            const std::int64_t iw = col * s - p + x;
            *dst++ = iw < 0 || iw >= is.width ? 0.0 : irow[iw];
          }
        }
      }
    }
    for (std::int64_t o = oc.begin; o < oc.end; ++o) {
      const double* wrow = w.kernel.data() + (o * op.c_in + ic.begin) * kh * kw;
      const double base = add_bias ? w.bias[static_cast<std::size_t>(o)] : 0.0;
      double* orow = out.row(o, r);
      for (std::int64_t col = 0; col < os.width; ++col) {
        orow[col] = base + kernels::dot(wrow, patch.data() + col * k, static_cast<std::size_t>(k));
      }
    }
  }
}

void channel_local_region(const OperatorSpec& op, const Tensor& in, Tensor& out, Range channels, Range rows) {
  const TensorShape& is = in.shape();
  const TensorShape& os = out.shape();
  for (std::int64_t c = channels.begin; c < channels.end; ++c) {
    for (std::int64_t r = rows.begin; r < rows.end; ++r) {
      double* orow = out.row(c, r);
      if (op.kind == OpKind::Elementwise) {
        std::copy_n(in.row(c, r), os.width, orow);
        kernels::relu(orow, static_cast<std::size_t>(os.width));
        continue;
      }
      for (std::int64_t ow = 0; ow < os.width; ++ow) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::int64_t y = 0; y < op.kernel_h; ++y) {
          const std::int64_t ih = r * op.stride - op.padding + y;
          if (ih < 0 || ih >= is.height) continue;
          for (std::int64_t x = 0; x < op.kernel_w; ++x) {
            const std::int64_t iw = ow * op.stride - op.padding + x;
            if (iw < 0 || iw >= is.width) continue;
            const double v = in.at(c, ih, iw);
            if (std::isnan(v) || v > best) best = v;
            if (std::isnan(best)) break;
          }
        }
        orow[ow] = best;
      }
    }
  }
}

void run_region(const OperatorSpec& op, const Tensor& in, const OperatorWeights& w, bool add_bias, Tensor& out,
                Range oc, Range ic, Range rows) {
  if (op.partitionable()) {
    conv_region(op, in, w, add_bias, out, oc, ic, rows);
  } else {
    channel_local_region(op, in, out, oc, rows);
  }
}

// One device's view of the current activation.
struct DeviceBuffer {
  Tensor data;
  std::vector<std::uint8_t> held;  // channels x rows
  bool partial = false;
  bool contributes = false;

  explicit DeviceBuffer(const TensorShape& shape)
      : data(shape, kMissing), held(static_cast<std::size_t>(shape.channels * shape.height), 0) {}

  const TensorShape& shape() const { return data.shape(); }
  bool has(std::int64_t c, std::int64_t h) const {
    return held[static_cast<std::size_t>(c * shape().height + h)] != 0;
  }
  void mark(Range channels, Range rows) {
    for (std::int64_t c = channels.begin; c < channels.end; ++c) {
      for (std::int64_t h = rows.begin; h < rows.end; ++h) held[static_cast<std::size_t>(c * shape().height + h)] = 1;
    }
  }
  void mark_all() { std::fill(held.begin(), held.end(), 1); }
  std::uint64_t held_rows() const { return static_cast<std::uint64_t>(std::count(held.begin(), held.end(), 1)); }
};

std::string where(const OperatorSpec& op, std::size_t device) {
  return "operator " + std::to_string(op.index) + " on device " + std::to_string(device + 1);
}

void require_held(const DeviceBuffer& buf, const OperatorSpec& op, std::size_t device, Range channels, Range rows) {
  for (std::int64_t c = channels.begin; c < channels.end; ++c) {
    for (std::int64_t h = rows.begin; h < rows.end; ++h) {
      if (!buf.has(c, h)) {
        throw PlanExecutionError(where(op, device) + ": input channel " + std::to_string(c) + " row " +
                                 std::to_string(h) + " was never received");
      }
    }
  }
}

std::vector<Range> ranges_of(const std::vector<std::int64_t>& extents) {
  std::vector<Range> ranges;
  std::int64_t offset = 0;
  for (const auto e : extents) {
    ranges.push_back({offset, offset + std::max<std::int64_t>(e, 0)});
    offset += std::max<std::int64_t>(e, 0);
  }
  return ranges;
}

std::uint64_t row_bytes(const TensorShape& shape) { return static_cast<std::uint64_t>(shape.width) * kElementBytes; }

class Simulation {
 public:
  Simulation(const PartitionPlan& plan, const Tensor& input, const WeightSet& weights)
      : plan_(plan), weights_(weights), m_(plan.cluster.size()) {
    const TensorShape& shape = plan.model.input_shape;
    if (input.shape() != shape) {
      throw ShapeError("input is " + to_string(input.shape()) + ", model expects " + to_string(shape));
    }
    const auto rows = plan.input_row_extents.empty() ? std::vector<Range>(m_, Range{0, shape.height})
                                                     : ranges_of(plan.input_row_extents);
    if (rows.size() != m_) throw PlanExecutionError("input row split does not cover every device");
    for (std::size_t j = 0; j < m_; ++j) {
      DeviceBuffer buf(shape);
      for (std::int64_t c = 0; c < shape.channels; ++c) {
        for (std::int64_t h = rows[j].begin; h < rows[j].end; ++h) std::copy_n(input.row(c, h), shape.width, buf.data.row(c, h));
      }
      buf.mark({0, shape.channels}, rows[j]);
      buffers_.push_back(std::move(buf));
    }
  }

  PartitionedRun run() {
    run_round(0);
    for (std::size_t index = 1; index <= plan_.model.size(); ++index) {
      step(index);
      run_round(index);
    }
    const DeviceBuffer& result = buffers_[0];
    if (result.partial || result.held_rows() != result.held.size()) {
      throw PlanExecutionError("final activation is not fully assembled on device 1");
    }
    return {result.data, std::move(trace_)};
  }

 private:
  void step(std::size_t index) {
    const OperatorSpec& op = plan_.model.op(index);
    const TensorShape& out_shape = plan_.shapes.at(index - 1);
    const TensorShape& in_shape = buffers_[0].shape();
    const OperatorWeights& w = weights_.per_operator.at(index - 1);
    const Range all_out{0, out_shape.channels};
    const Range all_in{0, in_shape.channels};
    const Range all_rows{0, out_shape.height};

    std::vector<DeviceBuffer> next;
    next.reserve(m_);
    for (std::size_t j = 0; j < m_; ++j) next.emplace_back(out_shape);

    auto consume = [&](std::size_t j, Range channels, Range rows, bool allow_partial) -> const DeviceBuffer& {
      const DeviceBuffer& in = buffers_[j];
      if (in.partial && !allow_partial) {
        throw PlanExecutionError(where(op, j) + ": reads a partial sum that was never reduced");
      }
      require_held(in, op, j, channels, input_rows(op, rows, in_shape.height));
      return in;
    };

    if (const auto* rep = std::get_if<Replicated>(&plan_.assignment(index))) {
      for (std::size_t j = 0; j < m_; ++j) {
        if (rep->placement == Placement::DeviceOne && j != 0) continue;
        const DeviceBuffer& in = consume(j, all_in, all_rows, op.channel_local());
        run_region(op, in.data, w, op.has_bias, next[j].data, all_out, all_in, all_rows);
        next[j].mark_all();
        next[j].partial = in.partial;
        next[j].contributes = in.contributes;
        trace_.computations.push_back({j, index, "rep", out_shape.channels});
      }
    } else {
      const auto& part = std::get<Partitioned>(plan_.assignment(index));
      if (part.slices.size() != m_) throw PlanExecutionError(where(op, 0) + ": slice count differs from device count");
      const auto ranges = ranges_of(part.extents());
      for (std::size_t j = 0; j < m_; ++j) {
        const Range r = ranges[j];
        switch (part.dim) {
          case PartitionDim::OC: {
            const Range in_channels = op.partitionable() ? all_in : r;
            const DeviceBuffer& in = consume(j, in_channels, all_rows, op.channel_local());
            if (!r.empty()) run_region(op, in.data, w, op.has_bias, next[j].data, r, all_in, all_rows);
            next[j].mark(r, all_rows);
            next[j].partial = in.partial;
            break;
          }
          case PartitionDim::IC: {
            if (!op.partitionable()) throw PlanExecutionError(where(op, j) + ": IC split of a channel-local operator");
            const bool bias = op.has_bias && j == 0;
            next[j].contributes = !r.empty() || bias;
            // a lone device's partial sum is already the whole sum
            next[j].partial = m_ > 1;
            std::fill(next[j].data.values().begin(), next[j].data.values().end(), 0.0);
            if (next[j].contributes) {
              const DeviceBuffer& in = consume(j, r, all_rows, false);
              run_region(op, in.data, w, bias, next[j].data, all_out, r, all_rows);
            }
            next[j].mark_all();
            break;
          }
          case PartitionDim::H: {
            const Range channels = op.partitionable() ? all_in : all_out;
            const Slice& slice = part.slices[j];
            const Range rows{r.begin - slice.overlap_before, r.end + slice.overlap_after};
            if (rows.begin < 0 || rows.end > out_shape.height) {
              throw PlanExecutionError(where(op, j) + ": overlap rows run past the feature map");
            }
            if (!rows.empty()) {
              const DeviceBuffer& in = consume(j, channels, rows, op.channel_local());
              run_region(op, in.data, w, op.has_bias, next[j].data, all_out, all_in, rows);
              next[j].partial = in.partial;
            }
            next[j].mark(all_out, rows);
            break;
          }
        }
        trace_.computations.push_back({j, index, std::string(to_string(part.dim)), r.size()});
      }
    }
    buffers_ = std::move(next);
  }

  void run_round(std::size_t after) {
    const CommRound* round = plan_.round_after(after);
    if (round == nullptr) return;
    TraceRound record{after, round->kind, std::vector<std::uint64_t>(m_, 0)};
    switch (round->kind) {
      case RoundKind::BroadcastConcat:
        broadcast(record);
        break;
      case RoundKind::AllExchangeSum:
        exchange_sum(record);
        break;
      case RoundKind::GatherToOne:
        gather(record);
        break;
      case RoundKind::HaloExchange:
        halo(*round, record);
        break;
    }
    trace_.rounds.push_back(std::move(record));
  }

  void copy_held(const DeviceBuffer& from, const std::vector<std::uint8_t>& mask, DeviceBuffer& to) {
    const TensorShape& shape = from.shape();
    for (std::int64_t c = 0; c < shape.channels; ++c) {
      for (std::int64_t h = 0; h < shape.height; ++h) {
        if (!mask[static_cast<std::size_t>(c * shape.height + h)]) continue;
        std::copy_n(from.data.row(c, h), shape.width, to.data.row(c, h));
        to.held[static_cast<std::size_t>(c * shape.height + h)] = 1;
      }
    }
  }

  std::uint64_t mask_bytes(const std::vector<std::uint8_t>& mask) const {
    return static_cast<std::uint64_t>(std::count(mask.begin(), mask.end(), 1)) * row_bytes(buffers_[0].shape());
  }

  void broadcast(TraceRound& record) {
    std::vector<std::vector<std::uint8_t>> owned;
    for (const auto& b : buffers_) {
      if (b.partial) throw PlanExecutionError("broadcast after operator " + std::to_string(record.after_operator) +
                                              " would concatenate partial sums");
      owned.push_back(b.held);
    }
    for (std::size_t j = 0; j < m_; ++j) {
      for (std::size_t k = 0; k < m_; ++k) {
        if (k == j) continue;
        record.per_device_send_bytes[j] += mask_bytes(owned[j]);
        copy_held(buffers_[j], owned[j], buffers_[k]);
      }
    }
  }

  void check_partial(const TraceRound& record) const {
    for (std::size_t j = 0; j < m_; ++j) {
      if (!buffers_[j].partial) {
        throw PlanExecutionError("reduction after operator " + std::to_string(record.after_operator) +
                                 ": device " + std::to_string(j + 1) + " holds no partial sum");
      }
    }
  }

  // Sum of the contributors' partials over [begin, end), ascending device order.
  void reduce_into(Tensor& sum, std::size_t begin, std::size_t end) const {
    for (const auto& b : buffers_) {
      if (!b.contributes) continue;
      kernels::accumulate(b.data.values().data() + begin, sum.values().data() + begin, end - begin);
    }
  }

  // Reduce-scatter then all-gather: device k owns chunk k of the flattened
  // tensor, receives that chunk from every other contributor, sums it and
  // sends the result to every peer.
  void exchange_sum(TraceRound& record) {
    check_partial(record);
    Tensor sum(buffers_[0].shape(), 0.0);
    const auto chunks = proportional_split(sum.shape().elements(), plan_.cluster.compute_weights());
    std::size_t begin = 0;
    for (std::size_t k = 0; k < m_; ++k) {
      const auto n = static_cast<std::size_t>(chunks[k]);
      for (std::size_t j = 0; j < m_; ++j) {
        if (j != k && buffers_[j].contributes) record.per_device_send_bytes[j] += n * kElementBytes;
      }
      record.per_device_send_bytes[k] += (m_ - 1) * n * kElementBytes;
      reduce_into(sum, begin, begin + n);
      begin += n;
    }
    for (auto& b : buffers_) {
      b.data = sum;
      b.mark_all();
      b.partial = false;
      b.contributes = false;
    }
  }

  void gather(TraceRound& record) {
    if (buffers_[0].partial) {
      check_partial(record);
      Tensor sum(buffers_[0].shape(), 0.0);
      const auto n = static_cast<std::size_t>(sum.shape().elements());
      for (std::size_t j = 1; j < m_; ++j) {
        if (buffers_[j].contributes) record.per_device_send_bytes[j] = n * kElementBytes;
      }
      reduce_into(sum, 0, n);
      buffers_[0].data = sum;
      buffers_[0].mark_all();
      buffers_[0].partial = false;
      return;
    }
    // each missing row comes from the lowest-numbered device holding it
    for (std::size_t j = 1; j < m_; ++j) {
      if (buffers_[j].partial) throw PlanExecutionError("gather mixes partial sums and slices");
      auto mask = buffers_[j].held;
      for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = mask[k] && !buffers_[0].held[k];
      record.per_device_send_bytes[j] = mask_bytes(mask);
      copy_held(buffers_[j], mask, buffers_[0]);
    }
  }

  void halo(const CommRound& round, TraceRound& record) {
    const TensorShape& shape = buffers_[0].shape();
    for (const auto& t : round.transfers) {
      if (t.from >= m_ || t.to >= m_) throw PlanExecutionError("halo transfer names an unknown device");
      std::vector<std::uint8_t> mask(buffers_[0].held.size(), 0);
      for (std::int64_t c = 0; c < shape.channels; ++c) {
        for (std::int64_t h = t.row_begin; h < t.row_end; ++h) {
          if (!buffers_[t.from].has(c, h)) {
            throw PlanExecutionError("halo after operator " + std::to_string(round.after_operator) + ": device " +
                                     std::to_string(t.from + 1) + " does not hold row " + std::to_string(h));
          }
          mask[static_cast<std::size_t>(c * shape.height + h)] = 1;
        }
      }
      record.per_device_send_bytes[t.from] += mask_bytes(mask);
      copy_held(buffers_[t.from], mask, buffers_[t.to]);
    }
  }

  const PartitionPlan& plan_;
  const WeightSet& weights_;
  std::size_t m_;
  std::vector<DeviceBuffer> buffers_;
  SimTrace trace_;
};

}  // namespace

WeightSet random_weights(const ModelSpec& model, std::uint64_t seed) {
  WeightSet set;
  Uniform draw(seed);
  for (const auto& op : model.operators) {
    OperatorWeights w;
    if (op.partitionable()) {
      const double scale = std::sqrt(6.0 / static_cast<double>(op.c_in * op.kernel_h * op.kernel_w));
      w.kernel.resize(static_cast<std::size_t>(op.weight_count()));
      for (auto& v : w.kernel) v = scale * draw();
      w.bias.resize(static_cast<std::size_t>(op.bias_count()));
      for (auto& v : w.bias) v = 0.1 * draw();
    }
    set.per_operator.push_back(std::move(w));
  }
  return set;
}

Tensor random_input(const TensorShape& shape, std::uint64_t seed) {
  Tensor t(shape);
  Uniform draw(seed);
  for (auto& v : t.values()) v = draw();
  return t;
}

Tensor run_centralized(const ModelSpec& model, const Tensor& input, const WeightSet& weights) {
  if (input.shape() != model.input_shape) {
    throw ShapeError("input is " + to_string(input.shape()) + ", model expects " + to_string(model.input_shape));
  }
  if (weights.per_operator.size() != model.size()) throw ShapeError("weight set does not match the model");
  const auto shapes = infer_shapes(model);
  Tensor current = input;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const OperatorSpec& op = model.operators[i];
    const OperatorWeights& w = weights.per_operator[i];
    if (op.partitionable() && w.kernel.size() != static_cast<std::size_t>(op.weight_count())) {
      throw ShapeError("operator " + std::to_string(op.index) + ": kernel has " + std::to_string(w.kernel.size()) +
                       " values, expected " + std::to_string(op.weight_count()));
    }
    Tensor next(shapes[i]);
    run_region(op, current, w, op.has_bias, next, {0, shapes[i].channels}, {0, op.c_in}, {0, shapes[i].height});
    current = std::move(next);
  }
  return current;
}

PartitionedRun run_partitioned(const PartitionPlan& plan, const Tensor& input, const WeightSet& weights) {
  const auto report = validate_plan(plan);
  if (!report.structurally_ok()) throw PlanExecutionError("plan fails validation: " + report.summary());
  if (weights.per_operator.size() != plan.model.size()) throw ShapeError("weight set does not match the model");
  return Simulation(plan, input, weights).run();
}

bool SimTrace::matches(const PartitionPlan& plan) const {
  if (rounds.size() != plan.rounds.size()) return false;
  for (std::size_t k = 0; k < rounds.size(); ++k) {
    const auto& got = rounds[k];
    const auto& want = plan.rounds[k];
    if (got.after_operator != want.after_operator || got.kind != want.kind ||
        got.per_device_send_bytes != want.per_device_send_bytes) {
      return false;
    }
  }
  return true;
}

double relative_error(const Tensor& got, const Tensor& want) {
  if (got.shape() != want.shape()) return std::numeric_limits<double>::infinity();
  double diff = 0.0;
  double scale = 0.0;
  const auto g = got.values();
  const auto w = want.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (std::isnan(g[i]) || std::isnan(w[i])) return std::numeric_limits<double>::infinity();
    diff = std::max(diff, std::abs(g[i] - w[i]));
    scale = std::max(scale, std::abs(w[i]));
  }
  if (scale == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return diff / scale;
}

EquivalenceReport check_equivalence(const ModelSpec& model, const PartitionPlan& plan, std::size_t trials,
                                    std::uint64_t seed, double tolerance) {
  EquivalenceReport report;
  report.trials = trials;
  report.seed = seed;
  report.tolerance = tolerance;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto weights = random_weights(model, mix(seed + 2 * t));
    const auto input = random_input(model.input_shape, mix(seed + 2 * t + 1));
    const Tensor want = run_centralized(model, input, weights);
    try {
      const auto run = run_partitioned(plan, input, weights);
      report.max_relative_error = std::max(report.max_relative_error, relative_error(run.output, want));
      report.trace_matches = report.trace_matches && run.trace.matches(plan);
    } catch (const Error& e) {
      report.failure = e.what();
      report.max_relative_error = std::numeric_limits<double>::infinity();
      break;
    }
  }
  report.pass = trials > 0 && report.failure.empty() && report.trace_matches &&
                report.max_relative_error <= tolerance;
  return report;
}

}  // namespace iop
