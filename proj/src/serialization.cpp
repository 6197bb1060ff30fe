#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <string>

#include <json.hpp>

#include "iop/cluster.hpp"
#include "iop/cost_model.hpp"
#include "iop/errors.hpp"
#include "iop/executor.hpp"
#include "iop/model_ir.hpp"
#include "iop/partitioner.hpp"

namespace iop {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::size_t line_of(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

json parse(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    // e.byte points one past the offending character
    std::string what = e.what();
    const auto colon = what.rfind(": ");
    if (colon != std::string::npos) what = what.substr(colon + 2);
    throw ParseError(what, line_of(text, e.byte == 0 ? 0 : e.byte - 1));
  }
}

// Rejects keys that are not in `allowed` and objects missing a `required` key.
void check_fields(const json& obj, const std::string& where, std::initializer_list<std::string_view> required,
                  std::initializer_list<std::string_view> optional = {}) {
  if (!obj.is_object()) throw ParseError(where + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    const bool known = std::find(required.begin(), required.end(), key) != required.end() ||
                       std::find(optional.begin(), optional.end(), key) != optional.end();
    if (!known) throw ParseError(where + ": unknown field '" + key + "'");
  }
  for (const auto key : required) {
    if (!obj.contains(key)) throw ParseError(where + ": missing field '" + std::string(key) + "'");
  }
}

template <typename T>
T get(const json& obj, std::string_view key, const std::string& where) {
  const json& v = obj.at(key);
  const std::string field = where + "." + std::string(key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ParseError(field + ": expected true or false");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ParseError(field + ": expected a string");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ParseError(field + ": expected an integer");
    if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned()) {
      throw ParseError(field + ": expected a non-negative integer");
    }
  } else {
    if (!v.is_number()) throw ParseError(field + ": expected a number");
  }
  return v.get<T>();
}

const json& array_field(const json& obj, std::string_view key, const std::string& where) {
  const json& v = obj.at(key);
  if (!v.is_array()) throw ParseError(where + "." + std::string(key) + ": expected an array");
  return v;
}

ordered_json shape_json(const TensorShape& s) { return {{"channels", s.channels}, {"height", s.height}, {"width", s.width}}; }

TensorShape shape_from(const json& j, const std::string& where) {
  check_fields(j, where, {"channels", "height", "width"});
  return {get<std::int64_t>(j, "channels", where), get<std::int64_t>(j, "height", where),
          get<std::int64_t>(j, "width", where)};
}

ordered_json model_json(const ModelSpec& model) {
  ordered_json ops = ordered_json::array();
  for (const auto& op : model.operators) {
    ordered_json o;
    o["index"] = op.index;
    o["kind"] = to_string(op.kind);
    o["c_in"] = op.c_in;
    o["c_out"] = op.c_out;
    o["kernel_w"] = op.kernel_w;
    o["kernel_h"] = op.kernel_h;
    o["stride"] = op.stride;
    o["padding"] = op.padding;
    o["has_bias"] = op.has_bias;
    ops.push_back(std::move(o));
  }
  return {{"name", model.name}, {"input_shape", shape_json(model.input_shape)}, {"operators", std::move(ops)}};
}

ModelSpec model_from(const json& doc) {
  check_fields(doc, "model", {"name", "input_shape", "operators"});
  ModelSpec model;
  model.name = get<std::string>(doc, "name", "model");
  model.input_shape = shape_from(doc.at("input_shape"), "model.input_shape");
  const json& ops = array_field(doc, "operators", "model");
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const std::string where = "operators[" + std::to_string(i) + "]";
    const json& o = ops[i];
    check_fields(o, where, {"kind", "c_in", "c_out"},
                 {"index", "kernel_w", "kernel_h", "stride", "padding", "has_bias"});
    OperatorSpec op;
    op.index = o.contains("index") ? get<std::size_t>(o, "index", where) : i + 1;
    try {
      op.kind = op_kind_from_string(get<std::string>(o, "kind", where));
    } catch (const ParseError& e) {
      throw ParseError(where + ".kind: " + e.what());
    }
    op.c_in = get<std::int64_t>(o, "c_in", where);
    op.c_out = get<std::int64_t>(o, "c_out", where);
    if (o.contains("kernel_w")) op.kernel_w = get<std::int64_t>(o, "kernel_w", where);
    if (o.contains("kernel_h")) op.kernel_h = get<std::int64_t>(o, "kernel_h", where);
    if (o.contains("stride")) op.stride = get<std::int64_t>(o, "stride", where);
    if (o.contains("padding")) op.padding = get<std::int64_t>(o, "padding", where);
    if (o.contains("has_bias")) op.has_bias = get<bool>(o, "has_bias", where);
    if (op.kind == OpKind::FullyConnected) {
      // fc kernels may be left out; a flattened c_in is folded back to channels
      ModelSpec prefix = model;
      const auto shapes = prefix.operators.empty() ? std::vector<TensorShape>{} : infer_shapes(prefix);
      const TensorShape in = shapes.empty() ? model.input_shape : shapes.back();
      if (!o.contains("kernel_w")) op.kernel_w = in.width;
      if (!o.contains("kernel_h")) op.kernel_h = in.height;
      if (op.c_in == in.elements() && in.elements() != in.channels) op.c_in = in.channels;
    }
    model.operators.push_back(op);
  }
  validate_model(model);
  return model;
}

ordered_json cluster_json(const ClusterSpec& cluster) {
  ordered_json devices = ordered_json::array();
  for (const auto& d : cluster.devices) devices.push_back({{"compute", d.compute}, {"memory", d.memory}});
  return {{"devices", std::move(devices)}, {"bandwidth", cluster.bandwidth}, {"conn_latency", cluster.conn_latency}};
}

ClusterSpec cluster_from(const json& doc) {
  check_fields(doc, "cluster", {"devices", "bandwidth", "conn_latency"});
  ClusterSpec cluster;
  const json& devices = array_field(doc, "devices", "cluster");
  for (std::size_t j = 0; j < devices.size(); ++j) {
    const std::string where = "devices[" + std::to_string(j) + "]";
    check_fields(devices[j], where, {"compute", "memory"});
    cluster.devices.push_back(
        {j, get<double>(devices[j], "compute", where), get<std::uint64_t>(devices[j], "memory", where)});
  }
  cluster.bandwidth = get<double>(doc, "bandwidth", "cluster");
  cluster.conn_latency = get<double>(doc, "conn_latency", "cluster");
  validate_cluster(cluster);
  return cluster;
}

template <typename Enum, std::size_t N>
Enum enum_from(const std::string& text, const Enum (&values)[N], const std::string& where) {
  for (const auto v : values) {
    if (to_string(v) == text) return v;
  }
  throw ParseError(where + ": unknown value '" + text + "'");
}

}  // namespace

ModelSpec load_model(std::string_view text) {
  try {
    return model_from(parse(text));
  } catch (const ShapeError& e) {
    throw ValidationError(e.what());
  }
}

std::string save_model(const ModelSpec& model) { return model_json(model).dump(2) + "\n"; }

ClusterSpec load_cluster(std::string_view text) { return cluster_from(parse(text)); }

std::string save_cluster(const ClusterSpec& cluster) { return cluster_json(cluster).dump(2) + "\n"; }

std::string save_plan(const PartitionPlan& plan, std::string_view strategy, const Segmentation* segmentation) {
  ordered_json doc;
  if (!strategy.empty()) doc["strategy"] = strategy;
  doc["model"] = model_json(plan.model);
  doc["cluster"] = cluster_json(plan.cluster);
  if (segmentation != nullptr) {
    ordered_json segs = ordered_json::array();
    for (const auto& s : segmentation->segments) {
      if (s.is_pair()) {
        segs.push_back({s.first, *s.second});
      } else {
        segs.push_back({s.first});
      }
    }
    doc["segmentation"] = std::move(segs);
  }
  if (!plan.input_row_extents.empty()) doc["input_rows"] = plan.input_row_extents;
  ordered_json ops = ordered_json::array();
  for (std::size_t i = 1; i <= plan.model.size(); ++i) {
    ordered_json o;
    o["operator"] = i;
    if (const auto* rep = std::get_if<Replicated>(&plan.assignment(i))) {
      o["dim"] = "none";
      o["placement"] = rep->placement == Placement::DeviceOne ? "device1" : "all";
    } else {
      const auto& part = std::get<Partitioned>(plan.assignment(i));
      o["dim"] = to_string(part.dim);
      o["extents"] = part.extents();
      const bool overlapped = std::ranges::any_of(
          part.slices, [](const Slice& sl) { return sl.overlap_before != 0 || sl.overlap_after != 0; });
      if (overlapped) {
        ordered_json ov = ordered_json::array();
        for (const auto& sl : part.slices) ov.push_back({sl.overlap_before, sl.overlap_after});
        o["overlap"] = std::move(ov);
      }
    }
    ops.push_back(std::move(o));
  }
  doc["assignments"] = std::move(ops);
  ordered_json rounds = ordered_json::array();
  for (const auto& r : plan.rounds) {
    ordered_json o;
    o["after_operator"] = r.after_operator;
    o["kind"] = to_string(r.kind);
    o["send_bytes"] = r.per_device_send_bytes;
    if (!r.transfers.empty()) {
      ordered_json t = ordered_json::array();
      for (const auto& x : r.transfers) t.push_back({x.from, x.to, x.row_begin, x.row_end});
      o["transfers"] = std::move(t);
    }
    rounds.push_back(std::move(o));
  }
  doc["rounds"] = std::move(rounds);
  return doc.dump(2) + "\n";
}

PartitionPlan load_plan(std::string_view text) {
  const json doc = parse(text);
  check_fields(doc, "plan", {"model", "cluster", "assignments", "rounds"}, {"strategy", "segmentation", "input_rows"});
  PartitionPlan plan;
  plan.model = model_from(doc.at("model"));
  plan.cluster = cluster_from(doc.at("cluster"));
  plan.shapes = infer_shapes(plan.model);
  if (doc.contains("input_rows")) {
    for (const auto& v : array_field(doc, "input_rows", "plan")) {
      if (!v.is_number_integer()) throw ParseError("plan.input_rows: expected integers");
      plan.input_row_extents.push_back(v.get<std::int64_t>());
    }
  }
  const json& ops = array_field(doc, "assignments", "plan");
  if (ops.size() != plan.model.size()) {
    throw ValidationError("plan has " + std::to_string(ops.size()) + " assignments for " +
                          std::to_string(plan.model.size()) + " operators");
  }
  static constexpr PartitionDim kDims[] = {PartitionDim::H, PartitionDim::IC, PartitionDim::OC};
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const std::string where = "assignments[" + std::to_string(i) + "]";
    const json& o = ops[i];
    check_fields(o, where, {"operator", "dim"}, {"placement", "extents", "overlap"});
    if (get<std::size_t>(o, "operator", where) != i + 1) throw ValidationError(where + ": operators out of order");
    const auto dim = get<std::string>(o, "dim", where);
    if (dim == "none") {
      const auto placement = o.contains("placement") ? get<std::string>(o, "placement", where) : "device1";
      if (placement != "device1" && placement != "all") throw ParseError(where + ".placement: expected device1 or all");
      plan.assignments.emplace_back(Replicated{placement == "all" ? Placement::AllDevices : Placement::DeviceOne});
      continue;
    }
    Partitioned part{enum_from(dim, kDims, where + ".dim"), {}};
    const OperatorSpec& op = plan.model.operators[i];
    std::size_t j = 0;
    if (!o.contains("extents")) throw ParseError(where + ": missing field 'extents'");
    for (const auto& e : array_field(o, "extents", where)) {
      if (!e.is_number_integer()) throw ParseError(where + ".extents: expected integers");
      Slice s{op.index, j++, part.dim, e.get<std::int64_t>(), 0, 0};
      if (s.extent >= 0) {
        const auto mem = memory_bytes(op, s, plan.shapes[i]);
        s.weight_bytes = mem.weight_bytes;
        s.activation_bytes = mem.activation_bytes;
      }
      part.slices.push_back(s);
    }
    if (o.contains("overlap")) {
      const json& ov = array_field(o, "overlap", where);
      if (ov.size() != part.slices.size()) throw ParseError(where + ".overlap: one [before, after] pair per extent");
      for (std::size_t d = 0; d < ov.size(); ++d) {
        if (!ov[d].is_array() || ov[d].size() != 2 || !ov[d][0].is_number_integer() || !ov[d][1].is_number_integer()) {
          throw ParseError(where + ".overlap: expected [before, after] integer pairs");
        }
        Slice& sl = part.slices[d];
        sl.overlap_before = ov[d][0].get<std::int64_t>();
        sl.overlap_after = ov[d][1].get<std::int64_t>();
        if (sl.extent >= 0 && sl.computed_rows() >= 0) {
          const auto mem = memory_bytes(op, sl, plan.shapes[i]);
          sl.weight_bytes = mem.weight_bytes;
          sl.activation_bytes = mem.activation_bytes;
        }
      }
    }
    plan.assignments.emplace_back(std::move(part));
  }
  static constexpr RoundKind kKinds[] = {RoundKind::BroadcastConcat, RoundKind::HaloExchange, RoundKind::GatherToOne,
                                         RoundKind::AllExchangeSum};
  const json& rounds = array_field(doc, "rounds", "plan");
  for (std::size_t k = 0; k < rounds.size(); ++k) {
    const std::string where = "rounds[" + std::to_string(k) + "]";
    const json& o = rounds[k];
    check_fields(o, where, {"after_operator", "kind", "send_bytes"}, {"transfers"});
    CommRound r;
    r.after_operator = get<std::size_t>(o, "after_operator", where);
    r.kind = enum_from(get<std::string>(o, "kind", where), kKinds, where + ".kind");
    for (const auto& b : array_field(o, "send_bytes", where)) {
      if (!b.is_number_unsigned()) throw ParseError(where + ".send_bytes: expected non-negative integers");
      r.per_device_send_bytes.push_back(b.get<std::uint64_t>());
    }
    if (o.contains("transfers")) {
      for (const auto& t : array_field(o, "transfers", where)) {
        if (!t.is_array() || t.size() != 4) throw ParseError(where + ".transfers: expected [from, to, begin, end]");
        r.transfers.push_back({t[0].get<std::size_t>(), t[1].get<std::size_t>(), t[2].get<std::int64_t>(),
                               t[3].get<std::int64_t>()});
      }
    }
    plan.rounds.push_back(std::move(r));
  }
  return plan;
}

std::string cost_report_json(const CostReport& report) {
  ordered_json doc;
  doc["total_ms"] = report.total_ms;
  doc["round_count"] = report.round_count;
  doc["per_device_peak_bytes"] = report.per_device_peak_bytes;
  return doc.dump(2) + "\n";
}

std::string equivalence_report_json(const EquivalenceReport& report) {
  ordered_json doc;
  doc["trials"] = report.trials;
  doc["seed"] = report.seed;
  doc["tolerance"] = report.tolerance;
  // JSON has no infinity
  if (std::isfinite(report.max_relative_error)) {
    doc["max_relative_error"] = report.max_relative_error;
  } else {
    doc["max_relative_error"] = nullptr;
  }
  doc["trace_matches"] = report.trace_matches;
  doc["pass"] = report.pass;
  if (!report.failure.empty()) doc["failure"] = report.failure;
  return doc.dump(2) + "\n";
}

std::string sim_trace_json(const SimTrace& trace) {
  ordered_json comps = ordered_json::array();
  for (const auto& c : trace.computations) {
    comps.push_back({{"device", c.device + 1}, {"operator", c.operator_index}, {"dim", c.dim}, {"extent", c.extent}});
  }
  ordered_json rounds = ordered_json::array();
  for (const auto& r : trace.rounds) {
    rounds.push_back({{"after_operator", r.after_operator}, {"kind", to_string(r.kind)}, {"send_bytes", r.per_device_send_bytes}});
  }
  ordered_json doc;
  doc["computations"] = std::move(comps);
  doc["rounds"] = std::move(rounds);
  return doc.dump(2) + "\n";
}

}  // namespace iop
