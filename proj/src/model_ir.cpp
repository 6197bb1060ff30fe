#include "iop/model_ir.hpp"

#include <algorithm>

#include "iop/errors.hpp"

namespace iop {

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::Conv:
      return "conv";
    case OpKind::FullyConnected:
      return "fc";
    case OpKind::Pool:
      return "pool";
    case OpKind::Elementwise:
      return "relu";
  }
  return "?";
}

OpKind op_kind_from_string(std::string_view text) {
  if (text == "conv") return OpKind::Conv;
  if (text == "fc") return OpKind::FullyConnected;
  if (text == "pool") return OpKind::Pool;
  if (text == "relu") return OpKind::Elementwise;
  throw ParseError("unknown operator kind '" + std::string(text) + "'");
}

std::string to_string(const TensorShape& shape) {
  return std::to_string(shape.channels) + "x" + std::to_string(shape.height) + "x" +
         std::to_string(shape.width);
}

std::int64_t OperatorSpec::weight_count() const {
  return partitionable() ? c_out * c_in * kernel_h * kernel_w : 0;
}

std::size_t ModelSpec::count(OpKind kind) const {
  return static_cast<std::size_t>(std::count_if(operators.begin(), operators.end(),
                                                [kind](const OperatorSpec& op) { return op.kind == kind; }));
}

namespace {

std::string op_label(const OperatorSpec& op) {
  return "operator " + std::to_string(op.index) + " (" + std::string(to_string(op.kind)) + ")";
}

std::int64_t sliding_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride, std::int64_t padding) {
  const std::int64_t span = in + 2 * padding - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

TensorShape output_shape(const OperatorSpec& op, const TensorShape& in) {
  if (in.channels != op.c_in) {
    throw ShapeError(op_label(op) + ": expects " + std::to_string(op.c_in) + " input channels, producer gives " +
                     std::to_string(in.channels));
  }
  switch (op.kind) {
    case OpKind::FullyConnected:
      if (op.kernel_h != in.height || op.kernel_w != in.width || op.stride != 1 || op.padding != 0) {
        throw ShapeError(op_label(op) + ": fully connected kernel must cover the " + to_string(in) +
                         " input with stride 1 and no padding");
      }
      return {op.c_out, 1, 1};
    case OpKind::Elementwise:
      return in;
    case OpKind::Conv:
    case OpKind::Pool: {
      const TensorShape out{op.c_out, sliding_extent(in.height, op.kernel_h, op.stride, op.padding),
                            sliding_extent(in.width, op.kernel_w, op.stride, op.padding)};
      if (out.height < 1 || out.width < 1) {
        throw ShapeError(op_label(op) + ": kernel " + std::to_string(op.kernel_h) + "x" +
                         std::to_string(op.kernel_w) + " does not fit the " + to_string(in) + " input");
      }
      return out;
    }
  }
  return in;
}

}  // namespace

std::vector<TensorShape> infer_shapes(const ModelSpec& model) {
  std::vector<TensorShape> shapes;
  shapes.reserve(model.operators.size());
  TensorShape current = model.input_shape;
  for (const auto& op : model.operators) {
    current = output_shape(op, current);
    shapes.push_back(current);
  }
  return shapes;
}

TensorShape input_shape_of(const ModelSpec& model, const std::vector<TensorShape>& shapes, std::size_t index) {
  return index <= 1 ? model.input_shape : shapes.at(index - 2);
}

void validate_model(const ModelSpec& model) {
  if (model.input_shape.channels < 1 || model.input_shape.height < 1 || model.input_shape.width < 1) {
    throw ValidationError("input_shape: every extent must be >= 1, got " + to_string(model.input_shape));
  }
  if (model.operators.empty()) throw ValidationError("operators: model has no operators");
  for (std::size_t pos = 0; pos < model.operators.size(); ++pos) {
    const auto& op = model.operators[pos];
    if (op.index != pos + 1) {
      throw ValidationError("operators[" + std::to_string(pos) + "].index: expected " + std::to_string(pos + 1) +
                            ", got " + std::to_string(op.index));
    }
    if (op.c_in < 1 || op.c_out < 1) throw ValidationError(op_label(op) + ": c_in and c_out must be >= 1");
    if (op.kernel_w < 1 || op.kernel_h < 1) throw ValidationError(op_label(op) + ": kernel extents must be >= 1");
    if (op.stride < 1) throw ValidationError(op_label(op) + ": stride must be >= 1");
    if (op.padding < 0) throw ValidationError(op_label(op) + ": padding must be >= 0");
    if (op.channel_local() && op.c_in != op.c_out) {
      throw ValidationError(op_label(op) + ": pool/elementwise operators need c_out == c_in");
    }
    if (op.channel_local() && op.has_bias) throw ValidationError(op_label(op) + ": only conv/fc carry a bias");
    if (op.kind == OpKind::Elementwise && (op.kernel_h != 1 || op.kernel_w != 1 || op.stride != 1 || op.padding != 0)) {
      throw ValidationError(op_label(op) + ": elementwise operators use kernel 1, stride 1, padding 0");
    }
    const std::int64_t producer = pos == 0 ? model.input_shape.channels : model.operators[pos - 1].c_out;
    if (op.c_in != producer) {
      throw ValidationError(op_label(op) + ": c_in " + std::to_string(op.c_in) + " does not chain with producer c_out " +
                            std::to_string(producer));
    }
  }
  try {
    (void)infer_shapes(model);
  } catch (const ShapeError& e) {
    throw ValidationError(std::string("shape inference: ") + e.what());
  }
}

ModelBuilder::ModelBuilder(std::string name, TensorShape input) : current_(input) {
  model_.name = std::move(name);
  model_.input_shape = input;
}

ModelBuilder& ModelBuilder::push(OperatorSpec op) {
  op.index = model_.operators.size() + 1;
  current_ = output_shape(op, current_);
  model_.operators.push_back(op);
  return *this;
}

ModelBuilder& ModelBuilder::conv(std::int64_t c_out, std::int64_t kernel, std::int64_t stride, std::int64_t padding,
                                 bool bias) {
  return push({.kind = OpKind::Conv,
               .c_in = current_.channels,
               .c_out = c_out,
               .kernel_w = kernel,
               .kernel_h = kernel,
               .stride = stride,
               .padding = padding,
               .has_bias = bias});
}

ModelBuilder& ModelBuilder::pool(std::int64_t kernel, std::int64_t stride, std::int64_t padding) {
  return push({.kind = OpKind::Pool,
               .c_in = current_.channels,
               .c_out = current_.channels,
               .kernel_w = kernel,
               .kernel_h = kernel,
               .stride = stride,
               .padding = padding});
}

ModelBuilder& ModelBuilder::relu() {
  return push({.kind = OpKind::Elementwise, .c_in = current_.channels, .c_out = current_.channels});
}

ModelBuilder& ModelBuilder::fc(std::int64_t c_out, bool bias) {
  return push({.kind = OpKind::FullyConnected,
               .c_in = current_.channels,
               .c_out = c_out,
               .kernel_w = current_.width,
               .kernel_h = current_.height,
               .has_bias = bias});
}

ModelSpec ModelBuilder::build() const { return model_; }

}  // namespace iop
