#include <doctest.h>

#include <algorithm>
#include <random>

#include "iop/cost_model.hpp"
#include "iop/errors.hpp"
#include "iop/partitioner.hpp"
#include "iop/segmenter.hpp"
#include "support/random_models.hpp"

using namespace iop;

namespace {

ClusterSpec equal_devices(std::size_t m) { return uniform_cluster(m, 1e6, 1ULL << 30, 1e5, 2.0); }

std::size_t count_kind(const PartitionPlan& plan, RoundKind kind) {
  return static_cast<std::size_t>(
      std::count_if(plan.rounds.begin(), plan.rounds.end(), [&](const CommRound& r) { return r.kind == kind; }));
}

const Partitioned& part(const PartitionPlan& plan, std::size_t i) { return std::get<Partitioned>(plan.assignment(i)); }

std::vector<PartitionPlan> all_strategy_plans(const ModelSpec& model, const ClusterSpec& cluster) {
  return {plan_oc(model, cluster), plan_coedge(model, cluster),
          plan_iop(model, cluster, greedy_segment(model, cluster))};
}

ModelSpec small_zoo(const std::string& name) {
  if (name == "lenet") return model_zoo(name);
  return model_zoo(name, name == "alexnet" ? 63 : 32);
}

}  // namespace

TEST_CASE("oc plan for lenet") {
  const auto lenet = model_zoo("lenet");
  const auto plan = plan_oc(lenet, equal_devices(3));
  CHECK(plan.rounds.size() == 5);
  CHECK(count_kind(plan, RoundKind::BroadcastConcat) == 4);
  CHECK(count_kind(plan, RoundKind::GatherToOne) == 1);
  CHECK(plan.rounds.back().after_operator == lenet.size());
  // conv2 has 16 output channels
  CHECK(part(plan, 4).dim == PartitionDim::OC);
  CHECK(part(plan, 4).extents() == std::vector<std::int64_t>{6, 5, 5});
  // pool after conv2 keeps the same channel slices
  CHECK(part(plan, 6).extents() == std::vector<std::int64_t>{6, 5, 5});
  for (std::size_t i = 1; i <= lenet.size(); ++i) {
    CHECK(std::holds_alternative<Partitioned>(plan.assignment(i)));
  }
}

TEST_CASE("one device means no communication") {
  for (const auto& name : {"lenet", "alexnet", "vgg11"}) {
    const auto model = small_zoo(name);
    for (const auto& plan : all_strategy_plans(model, equal_devices(1))) {
      CHECK(plan.rounds.empty());
      CHECK(validate_plan(plan).ok());
    }
  }
  const auto plan = plan_oc(model_zoo("lenet"), equal_devices(1));
  CHECK(part(plan, 1).extents() == std::vector<std::int64_t>{6});
}

TEST_CASE("coedge halo rows per boundary") {
  SUBCASE("3x3 stride 1 over [8,8,8]") {
    const auto m = ModelBuilder("halo", {2, 24, 10}).conv(3, 3, 1, 1).build();
    const auto plan = plan_coedge(m, equal_devices(3));
    CHECK(plan.input_row_extents == std::vector<std::int64_t>{8, 8, 8});
    CHECK(part(plan, 1).extents() == std::vector<std::int64_t>{8, 8, 8});
    const CommRound* halo = plan.round_after(0);
    REQUIRE(halo != nullptr);
    CHECK(halo->kind == RoundKind::HaloExchange);
    // two internal boundaries, k - s = 2 rows across each (one per side)
    std::int64_t rows = 0;
    for (const auto& t : halo->transfers) rows += t.row_end - t.row_begin;
    CHECK(rows == 4);
    const std::vector<RowTransfer> want{{1, 0, 8, 9}, {0, 1, 7, 8}, {2, 1, 16, 17}, {1, 2, 15, 16}};
    CHECK(halo->transfers == want);
    const std::uint64_t row_bytes = 2 * 10 * 4;
    CHECK(halo->per_device_send_bytes == std::vector<std::uint64_t>{row_bytes, 2 * row_bytes, row_bytes});
  }
  SUBCASE("1x1 conv needs no halo") {
    const auto m = ModelBuilder("pointwise", {4, 24, 10}).conv(3, 1).build();
    const auto plan = plan_coedge(m, equal_devices(3));
    CHECK(plan.round_after(0) == nullptr);
    CHECK(count_kind(plan, RoundKind::HaloExchange) == 0);
    REQUIRE(plan.rounds.size() == 1);
    CHECK(plan.rounds[0].kind == RoundKind::GatherToOne);
  }
  SUBCASE("stride 2 3x3 without padding") {
    // output rows [4,4,4] read input rows [8b, 8b+9): one row past each block
    const auto m = ModelBuilder("strided", {1, 25, 25}).conv(2, 3, 2).build();
    const auto plan = plan_coedge(m, equal_devices(3));
    CHECK(part(plan, 1).extents() == std::vector<std::int64_t>{4, 4, 4});
    const CommRound* halo = plan.round_after(0);
    REQUIRE(halo != nullptr);
    for (const auto& t : halo->transfers) CHECK(t.row_end - t.row_begin == 1);
  }
}

TEST_CASE("coedge keeps the fc stage whole on device 1") {
  const auto lenet = model_zoo("lenet");
  const auto plan = plan_coedge(lenet, equal_devices(3));
  for (std::size_t i = 1; i <= 6; ++i) CHECK(part(plan, i).dim == PartitionDim::H);
  for (std::size_t i = 7; i <= lenet.size(); ++i) {
    const auto* rep = std::get_if<Replicated>(&plan.assignment(i));
    REQUIRE(rep != nullptr);
    CHECK(rep->placement == Placement::DeviceOne);
  }
  const CommRound* gather = plan.round_after(6);
  REQUIRE(gather != nullptr);
  CHECK(gather->kind == RoundKind::GatherToOne);
  CHECK(gather->per_device_send_bytes[0] == 0);

  const auto peaks = peak_memory(plan);
  const auto shapes = infer_shapes(lenet);
  std::uint64_t fc_weights = 0;
  for (std::size_t i = 7; i <= lenet.size(); ++i) fc_weights += unsliced_memory(lenet.op(i), shapes[i - 1]).weight_bytes;
  CHECK(fc_weights == 192480 + (120 * 84 + 84) * 4 + (84 * 10 + 10) * 4);
  CHECK(peaks[0] > fc_weights);
  CHECK(peaks[1] < fc_weights);
  CHECK(peaks[2] < fc_weights);
}

TEST_CASE("iop pair saves one round") {
  const auto m = ModelBuilder("pair", {3, 12, 12}).conv(16, 3, 1, 1).relu().conv(8, 3, 1, 1).build();
  const auto cluster = equal_devices(3);
  const Segmentation pair{{Segment::pair(1, 3)}};
  const auto iop = plan_iop(m, cluster, pair);
  const auto oc = plan_oc(m, cluster);
  CHECK(iop.rounds.size() == 1);
  CHECK(oc.rounds.size() == 2);
  CHECK(part(iop, 1).dim == PartitionDim::OC);
  CHECK(part(iop, 2).dim == PartitionDim::OC);
  CHECK(part(iop, 3).dim == PartitionDim::IC);
  CHECK(part(iop, 3).extents() == std::vector<std::int64_t>{6, 5, 5});
  CHECK(part(iop, 3).extents() == part(iop, 1).extents());
  CHECK(iop.rounds[0].after_operator == 3);
}

TEST_CASE("iop with only singles is the oc plan") {
  for (const auto& name : {"lenet", "alexnet", "vgg11"}) {
    const auto model = small_zoo(name);
    for (std::size_t m = 1; m <= 4; ++m) {
      const auto cluster = equal_devices(m);
      CHECK(plan_iop(model, cluster, all_singles(model)) == plan_oc(model, cluster));
    }
  }
}

TEST_CASE("pair members must be consecutive conv/fc operators") {
  const auto lenet = model_zoo("lenet");
  const auto cluster = equal_devices(3);
  CHECK_THROWS_AS(plan_iop(lenet, cluster, Segmentation{{Segment::pair(1, 7), Segment::single(4),
                                                          Segment::single(9), Segment::single(11)}}),
                  PairingError);
  CHECK_THROWS_AS(plan_iop(lenet, cluster, Segmentation{{Segment::pair(1, 4)}}), PairingError);
  CHECK_THROWS_AS(plan_iop(lenet, cluster, Segmentation{{Segment::pair(2, 4), Segment::single(7),
                                                          Segment::single(9), Segment::single(11)}}),
                  PairingError);
}

TEST_CASE("ic slices line up with the lead's oc slices") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 50; ++t) {
    const auto model = testing::random_model(rng);
    const auto cluster = testing::random_cluster(rng);
    const auto seg = greedy_segment(model, cluster);
    const auto plan = build_iop(model, cluster, seg);
    for (const auto& s : seg.segments) {
      if (!s.is_pair()) continue;
      CHECK(part(plan, *s.second).dim == PartitionDim::IC);
      CHECK(part(plan, *s.second).extents() == part(plan, s.first).extents());
    }
  }
}

TEST_CASE("validate_plan") {
  const auto m = ModelBuilder("v", {3, 8, 8}).conv(16, 3, 1, 1).relu().conv(4, 3, 1, 1).build();
  const auto cluster = equal_devices(3);
  auto plan = plan_oc(m, cluster);
  CHECK(validate_plan(plan).ok());

  SUBCASE("conservation") {
    std::get<Partitioned>(plan.assignments[0]).slices[2].extent = 4;
    const auto report = validate_plan(plan);
    CHECK_FALSE(report.passes(Constraint::ConservationOC));
    bool named = false;
    for (const auto& v : report.violations) {
      named = named || (v.constraint == Constraint::ConservationOC && v.operator_index == std::size_t{1});
    }
    CHECK(named);
  }
  SUBCASE("memory") {
    plan.cluster.devices[1].memory = 1;
    const auto report = validate_plan(plan);
    CHECK_FALSE(report.passes(Constraint::Memory));
    CHECK(report.structurally_ok());
    REQUIRE(report.violations.size() == 1);
    CHECK(report.violations[0].device == std::size_t{1});
    CHECK_THROWS_AS(evaluate(plan), InvalidPlan);
  }
  SUBCASE("slice count") {
    std::get<Partitioned>(plan.assignments[2]).slices.pop_back();
    CHECK_FALSE(validate_plan(plan).passes(Constraint::SliceCount));
  }
  SUBCASE("mixed dimensions") {
    std::get<Partitioned>(plan.assignments[0]).slices[1].dim = PartitionDim::H;
    CHECK_FALSE(validate_plan(plan).passes(Constraint::SingleDimension));
  }
  SUBCASE("ic misaligned with its producer") {
    auto iop = plan_iop(m, cluster, Segmentation{{Segment::pair(1, 3)}});
    auto& follower = std::get<Partitioned>(iop.assignments[2]);
    follower.slices[0].extent -= 1;
    follower.slices[1].extent += 1;
    const auto report = validate_plan(iop);
    CHECK(report.passes(Constraint::ConservationIC));
    CHECK_FALSE(report.passes(Constraint::Alignment));
  }
  SUBCASE("overlap past the map") {
    auto coedge = plan_coedge(m, cluster);
    std::get<Partitioned>(coedge.assignments[0]).slices[2].overlap_after = 1;
    CHECK_FALSE(validate_plan(coedge).passes(Constraint::ConservationH));
  }
}

TEST_CASE("infeasible memory is reported by the planners") {
  auto cluster = equal_devices(3);
  for (auto& d : cluster.devices) d.memory = 1 << 10;
  const auto lenet = model_zoo("lenet");
  CHECK_THROWS_AS(plan_oc(lenet, cluster), InfeasibleMemory);
  CHECK_THROWS_AS(plan_coedge(lenet, cluster), InfeasibleMemory);
  CHECK_THROWS_AS(plan_iop(lenet, cluster, all_singles(lenet)), InfeasibleMemory);
  CHECK_NOTHROW(build_oc(lenet, cluster));
}

TEST_CASE("every strategy's plan is self-consistent") {
  for (const auto& name : zoo_names()) {
    const auto model = name.starts_with("vgg") || name == "alexnet" ? small_zoo(name) : model_zoo(name);
    for (std::size_t m = 1; m <= 4; ++m) {
      for (const auto& plan : all_strategy_plans(model, equal_devices(m))) {
        CAPTURE(name);
        CAPTURE(m);
        CHECK(validate_plan(plan).ok());
      }
    }
  }
}

TEST_CASE("heterogeneous devices get proportional slices") {
  auto cluster = equal_devices(3);
  cluster.devices[0].compute = 2e6;
  const auto lenet = model_zoo("lenet");
  const auto plan = plan_oc(lenet, cluster);
  CHECK(part(plan, 7).extents() == std::vector<std::int64_t>{60, 30, 30});
  const auto coedge = plan_coedge(lenet, cluster);
  CHECK(coedge.input_row_extents == std::vector<std::int64_t>{14, 7, 7});
}

TEST_CASE("all-exchange bytes") {
  // reduce-scatter then all-gather of 12 elements over 3 equal devices:
  // 8 elements out to the two other chunk owners, then the own chunk of 4 twice
  const std::vector<double> w{1, 1, 1};
  CHECK(all_exchange_bytes(12, {true, true, true}, w) == std::vector<std::uint64_t>{64, 64, 64});
  // a device without a partial only takes part in the all-gather
  CHECK(all_exchange_bytes(12, {true, true, false}, w) == std::vector<std::uint64_t>{64, 64, 32});
}
