#include <array>

#include "iop/errors.hpp"
#include "iop/model_ir.hpp"

namespace iop {

namespace {

constexpr std::int64_t kPool = 0;  // marker in VGG layer lists

ModelSpec lenet(std::int64_t spatial) {
  // LeNet-5, 28x28 input; first conv padded by 2 -> 16x5x5 into the fc stack
  return ModelBuilder("lenet", {1, spatial, spatial})
      .conv(6, 5, 1, 2)
      .relu()
      .pool(2, 2)
      .conv(16, 5)
      .relu()
      .pool(2, 2)
      .fc(120)
      .relu()
      .fc(84)
      .relu()
      .fc(10)
      .build();
}

ModelSpec alexnet(std::int64_t spatial) {
  return ModelBuilder("alexnet", {3, spatial, spatial})
      .conv(96, 11, 4, 2)
      .relu()
      .pool(3, 2)
      .conv(256, 5, 1, 2)
      .relu()
      .pool(3, 2)
      .conv(384, 3, 1, 1)
      .relu()
      .conv(384, 3, 1, 1)
      .relu()
      .conv(256, 3, 1, 1)
      .relu()
      .pool(3, 2)
      .fc(4096)
      .relu()
      .fc(4096)
      .relu()
      .fc(1000)
      .build();
}

template <std::size_t N>
ModelSpec vgg(std::string name, const std::array<std::int64_t, N>& layers, std::int64_t spatial) {
  ModelBuilder builder(std::move(name), {3, spatial, spatial});
  for (const std::int64_t channels : layers) {
    if (channels == kPool) {
      builder.pool(2, 2);
    } else {
      builder.conv(channels, 3, 1, 1).relu();
    }
  }
  return builder.fc(4096).relu().fc(4096).relu().fc(1000).build();
}

constexpr std::array<std::int64_t, 13> kVgg11{64, kPool, 128, kPool, 256, 256, kPool, 512, 512, kPool, 512, 512, kPool};
constexpr std::array<std::int64_t, 15> kVgg13{64,  64,  kPool, 128, 128, kPool, 256, 256,
                                              kPool, 512, 512, kPool, 512, 512, kPool};
constexpr std::array<std::int64_t, 18> kVgg16{64,  64,  kPool, 128, 128, kPool, 256, 256, 256,
                                              kPool, 512, 512, 512, kPool, 512, 512, 512, kPool};
constexpr std::array<std::int64_t, 21> kVgg19{64,  64,  kPool, 128, 128, kPool, 256, 256, 256, 256, kPool,
                                              512, 512, 512, 512, kPool, 512, 512, 512, 512, kPool};

}  // namespace

std::vector<std::string> zoo_names() { return {"lenet", "alexnet", "vgg11", "vgg13", "vgg16", "vgg19"}; }

ModelSpec model_zoo(std::string_view name, std::optional<std::int64_t> spatial) {
  try {
    if (name == "lenet") return lenet(spatial.value_or(28));
    if (name == "alexnet") return alexnet(spatial.value_or(224));
    if (name == "vgg11") return vgg("vgg11", kVgg11, spatial.value_or(224));
    if (name == "vgg13") return vgg("vgg13", kVgg13, spatial.value_or(224));
    if (name == "vgg16") return vgg("vgg16", kVgg16, spatial.value_or(224));
    if (name == "vgg19") return vgg("vgg19", kVgg19, spatial.value_or(224));
  } catch (const ShapeError& e) {
    throw ShapeError(std::string(name) + " at input size " + std::to_string(*spatial) + ": " + e.what());
  }
  throw UnknownModel(std::string(name));
}

}  // namespace iop
