#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "iop/errors.hpp"
#include "iop/executor.hpp"
#include "iop/kernels.hpp"
#include "iop/partitioner.hpp"
#include "iop/segmenter.hpp"
#include "support/random_models.hpp"

using namespace iop;

namespace {

ClusterSpec equal_devices(std::size_t m) { return uniform_cluster(m, 1e6, 1ULL << 30, 1e5, 2.0); }

std::size_t kind_count(const SimTrace& trace, RoundKind kind) {
  return static_cast<std::size_t>(std::count_if(trace.rounds.begin(), trace.rounds.end(),
                                                [&](const TraceRound& r) { return r.kind == kind; }));
}

struct ScalarIsa {
  kernels::Isa saved = kernels::active_isa();
  ScalarIsa() { kernels::set_isa(kernels::Isa::Scalar); }
  ~ScalarIsa() { kernels::set_isa(saved); }
};

}  // namespace

TEST_CASE("1x1 identity conv passes the input through") {
  const auto m = ModelBuilder("id", {3, 5, 7}).conv(3, 1, 1, 0, true).build();
  WeightSet w;
  w.per_operator.resize(1);
  w.per_operator[0].kernel.assign(9, 0.0);
  for (int c = 0; c < 3; ++c) w.per_operator[0].kernel[static_cast<std::size_t>(c * 3 + c)] = 1.0;
  w.per_operator[0].bias.assign(3, 0.0);
  const auto input = random_input(m.input_shape, 1);
  CHECK(run_centralized(m, input, w) == input);
}

TEST_CASE("zero weights give zero logits") {
  const auto lenet = model_zoo("lenet");
  auto w = random_weights(lenet, 9);
  for (auto& op : w.per_operator) {
    std::fill(op.kernel.begin(), op.kernel.end(), 0.0);
    std::fill(op.bias.begin(), op.bias.end(), 0.0);
  }
  const auto out = run_centralized(lenet, random_input(lenet.input_shape, 2), w);
  CHECK(out.shape() == TensorShape{10, 1, 1});
  for (const double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("hand-checked conv, pool and relu") {
  // 1x3x3 input 1..9, 2x2 kernel of ones, bias -20, then relu and 2x2 pool
  const auto m = ModelBuilder("hand", {1, 3, 3}).conv(1, 2).relu().pool(2, 1).build();
  WeightSet w;
  w.per_operator.resize(3);
  w.per_operator[0].kernel.assign(4, 1.0);
  w.per_operator[0].bias = {-20.0};
  Tensor in({1, 3, 3});
  for (int i = 0; i < 9; ++i) in.values()[static_cast<std::size_t>(i)] = i + 1;
  // window sums 12 16 24 28 -> -8 -4 4 8 -> relu 0 0 4 8 -> max 8
  const auto out = run_centralized(m, in, w);
  CHECK(out.shape() == TensorShape{1, 1, 1});
  CHECK(out.values()[0] == 8.0);
  CHECK_THROWS_AS(run_centralized(m, Tensor({1, 4, 4}), w), ShapeError);
}

TEST_CASE("golden lenet output") {
  std::ifstream file(std::string(IOP_GOLDEN_DIR) + "/lenet_seed42.json");
  REQUIRE(file.good());
  const auto golden = nlohmann::json::parse(file);
  ScalarIsa scalar;
  const auto lenet = model_zoo("lenet");
  const auto out = run_centralized(lenet, random_input(lenet.input_shape, golden["input_seed"].get<std::uint64_t>()),
                                   random_weights(lenet, golden["weights_seed"].get<std::uint64_t>()));
  const auto want = golden["output"].get<std::vector<double>>();
  REQUIRE(out.values().size() == want.size());
  double sum = 0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(out.values()[i] == doctest::Approx(want[i]).epsilon(1e-12));
    sum += out.values()[i];
  }
  CHECK(sum == doctest::Approx(golden["sum"].get<double>()).epsilon(1e-12));
}

TEST_CASE("one device reproduces the centralized pass bit for bit") {
  const auto lenet = model_zoo("lenet");
  const auto c = equal_devices(1);
  const auto w = random_weights(lenet, 4);
  const auto in = random_input(lenet.input_shape, 5);
  const auto want = run_centralized(lenet, in, w);
  for (const auto& plan : {plan_oc(lenet, c), plan_coedge(lenet, c), plan_iop(lenet, c, greedy_segment(lenet, c))}) {
    const auto run = run_partitioned(plan, in, w);
    CHECK(run.output == want);
    CHECK(run.trace.rounds.empty());
  }
}

TEST_CASE("interleaved pair of convs on three devices") {
  const auto m = ModelBuilder("pair", {3, 10, 10}).conv(7, 3, 1, 1).relu().pool(2, 2).conv(5, 3, 1, 1).build();
  const auto plan = plan_iop(m, equal_devices(3), Segmentation{{Segment::pair(1, 4)}});
  const auto w = random_weights(m, 21);
  const auto in = random_input(m.input_shape, 22);
  const auto run = run_partitioned(plan, in, w);
  CHECK(relative_error(run.output, run_centralized(m, in, w)) <= 1e-9);
  CHECK(run.trace.rounds.size() == 1);
  CHECK(run.trace.matches(plan));
  // three devices each compute their share of both convs
  std::size_t ic = 0;
  for (const auto& t : run.trace.computations) ic += t.dim == "IC" ? 1 : 0;
  CHECK(ic == 3);
}

TEST_CASE("oc lenet trace") {
  const auto lenet = model_zoo("lenet");
  const auto plan = plan_oc(lenet, equal_devices(3));
  const auto run = run_partitioned(plan, random_input(lenet.input_shape, 1), random_weights(lenet, 2));
  CHECK(kind_count(run.trace, RoundKind::BroadcastConcat) == 4);
  CHECK(kind_count(run.trace, RoundKind::GatherToOne) == 1);
  CHECK(run.trace.matches(plan));
  CHECK(check_equivalence(lenet, plan, 10, 42).pass);
}

TEST_CASE("coedge 3x3 stride 1 conv") {
  const auto m = ModelBuilder("h", {2, 17, 9}).conv(4, 3, 1, 1).relu().conv(3, 3, 1, 0).build();
  for (std::size_t d = 2; d <= 4; ++d) {
    const auto report = check_equivalence(m, plan_coedge(m, equal_devices(d)), 10, 8);
    CHECK(report.pass);
    CHECK(report.trace_matches);
  }
}

TEST_CASE("relu between an ic split and its sum breaks equivalence") {
  const auto m = ModelBuilder("relu", {2, 6, 6}).conv(4, 3, 1, 1).conv(3, 3, 1, 1).relu().build();
  const auto c = equal_devices(3);
  auto plan = plan_iop(m, c, Segmentation{{Segment::pair(1, 2)}});
  REQUIRE(check_equivalence(m, plan, 5, 1).pass);
  REQUIRE(plan.rounds.size() == 1);
  REQUIRE(plan.rounds[0].after_operator == 2);
  // every device applies relu to its partial, then the partials are summed
  plan.assignments[2] = Replicated{Placement::AllDevices};
  plan.rounds[0].after_operator = 3;
  CHECK(validate_plan(plan).ok());
  const auto report = check_equivalence(m, plan, 5, 1);
  CHECK_FALSE(report.pass);
  CHECK(report.max_relative_error > 1e-3);
}

TEST_CASE("a missing round is caught") {
  const auto lenet = model_zoo("lenet");
  auto plan = plan_oc(lenet, equal_devices(3));
  plan.rounds.erase(plan.rounds.begin() + 1);
  const auto report = check_equivalence(lenet, plan, 2, 3);
  CHECK_FALSE(report.pass);
  CHECK_FALSE(report.failure.empty());
  CHECK_THROWS_AS(run_partitioned(plan, random_input(lenet.input_shape, 1), random_weights(lenet, 1)),
                  PlanExecutionError);
}

TEST_CASE("shrunken halo is caught") {
  const auto m = ModelBuilder("h", {1, 12, 6}).conv(2, 3, 1, 1).relu().conv(2, 3, 1, 1).build();
  auto plan = plan_coedge(m, equal_devices(3));
  auto halo = std::find_if(plan.rounds.begin(), plan.rounds.end(),
                            [](const CommRound& r) { return r.kind == RoundKind::HaloExchange; });
  REQUIRE(halo != plan.rounds.end());
  REQUIRE(halo->transfers.size() > 1);
  halo->transfers.pop_back();
  CHECK_FALSE(check_equivalence(m, plan, 1, 1).pass);
}

TEST_CASE("halo rows reproduce centralized rows exactly") {
  std::mt19937_64 rng(23);
  for (int t = 0; t < 60; ++t) {
    const auto model = testing::random_model(rng, {.min_partitionable = 1, .max_partitionable = 4, .allow_fc = false});
    const auto cluster = testing::random_cluster(rng);
    const auto plan = plan_coedge(model, cluster);
    const auto w = random_weights(model, static_cast<std::uint64_t>(t));
    const auto in = random_input(model.input_shape, static_cast<std::uint64_t>(t) + 100);
    const auto run = run_partitioned(plan, in, w);
    CHECK(run.output == run_centralized(model, in, w));
    CHECK(run.trace.matches(plan));
  }
}

TEST_CASE("random models under every strategy") {
  std::mt19937_64 rng(29);
  for (int t = 0; t < 40; ++t) {
    const auto model = testing::random_model(rng);
    const auto cluster = testing::random_cluster(rng, 1, 4);
    const auto seg = greedy_segment(model, cluster);
    for (const auto& plan : {plan_oc(model, cluster), plan_coedge(model, cluster), plan_iop(model, cluster, seg)}) {
      const auto report = check_equivalence(model, plan, 2, static_cast<std::uint64_t>(t));
      CHECK_MESSAGE(report.pass, model.name << ": " << report.failure);
      CHECK(report.trace_matches);
    }
  }
}

TEST_CASE("trace bytes equal plan bytes") {
  for (const auto& name : {"lenet", "alexnet", "vgg11"}) {
    const auto model = std::string(name) == "lenet" ? model_zoo(name) : model_zoo(name, std::string(name) == "alexnet" ? 63 : 32);
    const auto c = equal_devices(3);
    for (const auto& plan : {plan_oc(model, c), plan_coedge(model, c), plan_iop(model, c, greedy_segment(model, c))}) {
      const auto run = run_partitioned(plan, random_input(model.input_shape, 1), random_weights(model, 1));
      REQUIRE(run.trace.rounds.size() == plan.rounds.size());
      for (std::size_t k = 0; k < plan.rounds.size(); ++k) {
        CHECK(run.trace.rounds[k].kind == plan.rounds[k].kind);
        CHECK(run.trace.rounds[k].per_device_send_bytes == plan.rounds[k].per_device_send_bytes);
      }
    }
  }
}

TEST_CASE("relative error") {
  Tensor a({1, 1, 2});
  a.values()[0] = 2.0;
  a.values()[1] = -4.0;
  Tensor b = a;
  CHECK(relative_error(a, b) == 0.0);
  b.values()[1] = -3.0;
  CHECK(relative_error(b, a) == doctest::Approx(0.25));
  b.values()[0] = std::nan("");
  CHECK(std::isinf(relative_error(b, a)));
}

TEST_CASE("deterministic draws") {
  const auto lenet = model_zoo("lenet");
  CHECK(random_weights(lenet, 3).per_operator[0].kernel == random_weights(lenet, 3).per_operator[0].kernel);
  CHECK(random_input(lenet.input_shape, 3) == random_input(lenet.input_shape, 3));
  CHECK_FALSE(random_input(lenet.input_shape, 3) == random_input(lenet.input_shape, 4));
  const auto plan = plan_iop(lenet, equal_devices(3), greedy_segment(lenet, equal_devices(3)));
  const auto a = check_equivalence(lenet, plan, 3, 77);
  const auto b = check_equivalence(lenet, plan, 3, 77);
  CHECK(a.max_relative_error == b.max_relative_error);
}
