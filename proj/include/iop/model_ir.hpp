#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace iop {

enum class OpKind { Conv, FullyConnected, Pool, Elementwise };

std::string_view to_string(OpKind kind);
OpKind op_kind_from_string(std::string_view text);

struct TensorShape {
  std::int64_t channels = 1;
  std::int64_t height = 1;
  std::int64_t width = 1;

  std::int64_t elements() const { return channels * height * width; }
  bool operator==(const TensorShape&) const = default;
};

std::string to_string(const TensorShape& shape);

// One operator of a sequential CNN.
// 
// A fully connected operator is stored as a convolution whose kernel covers
// the whole input feature map (stride 1, no padding), so `c_in` is the
// producer's channel count rather than the flattened feature count. Pool
// (max) and Elementwise (ReLU) are channel-local: `c_out == c_in`.
struct OperatorSpec {
  std::size_t index = 0;  // 1-based position in the model
  OpKind kind = OpKind::Conv;
  std::int64_t c_in = 1;
  std::int64_t c_out = 1;
  std::int64_t kernel_w = 1;
  std::int64_t kernel_h = 1;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  bool has_bias = false;

  // Conv and FullyConnected carry weights and can be channel partitioned.
  bool partitionable() const { return kind == OpKind::Conv || kind == OpKind::FullyConnected; }
  bool channel_local() const { return !partitionable(); }
  std::int64_t weight_count() const;
  std::int64_t bias_count() const { return has_bias && partitionable() ? c_out : 0; }

  bool operator==(const OperatorSpec&) const = default;
};

struct ModelSpec {
  std::string name;
  TensorShape input_shape;
  std::vector<OperatorSpec> operators;

  std::size_t size() const { return operators.size(); }
  const OperatorSpec& op(std::size_t index) const { return operators.at(index - 1); }
  std::size_t count(OpKind kind) const;

  bool operator==(const ModelSpec&) const = default;
};

// Output shape of every operator, in order. Throws ShapeError when a spatial
// extent would drop below one or channels do not chain.
std::vector<TensorShape> infer_shapes(const ModelSpec& model);

// Input shape of the operator at 1-based `index`.
TensorShape input_shape_of(const ModelSpec& model, const std::vector<TensorShape>& shapes,
                           std::size_t index);

// Checks field ranges, index numbering and chaining. Throws ValidationError
// naming the first violated invariant.
void validate_model(const ModelSpec& model);

// Fluent construction of sequential models. Input channels and the kernel of
// fully connected layers are derived from the running shape.
class ModelBuilder {
 public:
  ModelBuilder(std::string name, TensorShape input);

  ModelBuilder& conv(std::int64_t c_out, std::int64_t kernel, std::int64_t stride = 1,
                     std::int64_t padding = 0, bool bias = true);
  ModelBuilder& pool(std::int64_t kernel, std::int64_t stride, std::int64_t padding = 0);
  ModelBuilder& relu();
  ModelBuilder& fc(std::int64_t c_out, bool bias = true);

  ModelSpec build() const;

 private:
  ModelBuilder& push(OperatorSpec op);

  ModelSpec model_;
  TensorShape current_;
};

// Built-in models: lenet, alexnet, vgg11, vgg13, vgg16, vgg19. `spatial`
// overrides the input height and width (fully connected kernels follow).
ModelSpec model_zoo(std::string_view name, std::optional<std::int64_t> spatial = std::nullopt);
std::vector<std::string> zoo_names();

// Model-spec document (JSON). load_model throws ParseError or ValidationError.
ModelSpec load_model(std::string_view text);
std::string save_model(const ModelSpec& model);

}  // namespace iop
