#include <doctest.h>

#include <numeric>
#include <random>

#include "iop/cluster.hpp"
#include "iop/errors.hpp"

using namespace iop;

namespace {

std::vector<std::int64_t> split(std::int64_t total, std::vector<double> w) { return proportional_split(total, w); }

}  // namespace

TEST_CASE("proportional_split examples") {
  CHECK(split(16, {1, 1, 1}) == std::vector<std::int64_t>{6, 5, 5});
  CHECK(split(10, {3, 1}) == std::vector<std::int64_t>{8, 2});
  CHECK(split(5, {1, 1, 1, 1, 1, 1}) == std::vector<std::int64_t>{1, 1, 1, 1, 1, 0});
  CHECK(split(0, {2, 1}) == std::vector<std::int64_t>{0, 0});
  CHECK(split(7, {1}) == std::vector<std::int64_t>{7});
}

TEST_CASE("proportional_split properties") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::int64_t> total(0, 5000);
  std::uniform_int_distribution<std::size_t> count(1, 9);
  std::uniform_real_distribution<double> weight(0.05, 10.0);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> w(count(rng));
    for (auto& x : w) x = weight(rng);
    const auto n = total(rng);
    const auto parts = proportional_split(n, w);
    REQUIRE(parts.size() == w.size());
    CHECK(std::accumulate(parts.begin(), parts.end(), std::int64_t{0}) == n);
    const double sum_w = std::accumulate(w.begin(), w.end(), 0.0);
    for (std::size_t j = 0; j < w.size(); ++j) {
      CHECK(parts[j] >= 0);
      // largest remainder never strays a whole unit from the quota
      CHECK(std::abs(static_cast<double>(parts[j]) - n * w[j] / sum_w) < 1.0 + 1e-9);
    }
    // a heavier device never gets less
    const std::size_t k = t % w.size();
    auto heavier = w;
    heavier[k] *= 1.5;
    CHECK(proportional_split(n, heavier)[k] >= parts[k]);
  }
}

TEST_CASE("equal weights and divisible totals give equal parts") {
  for (std::size_t m = 1; m <= 6; ++m) {
    const std::vector<double> w(m, 2.5);
    for (std::int64_t q = 0; q < 20; ++q) {
      const auto parts = proportional_split(q * static_cast<std::int64_t>(m), w);
      CHECK(parts == std::vector<std::int64_t>(m, q));
    }
  }
}

TEST_CASE("cluster validation and documents") {
  const auto c = default_cluster();
  CHECK(c.size() == defaults::kDevices);
  CHECK_NOTHROW(validate_cluster(c));
  CHECK(load_cluster(save_cluster(c)) == c);

  auto bad = c;
  bad.bandwidth = 0;
  CHECK_THROWS_AS(validate_cluster(bad), ValidationError);
  bad = c;
  bad.conn_latency = -1;
  CHECK_THROWS_AS(validate_cluster(bad), ValidationError);
  bad = c;
  bad.devices.clear();
  CHECK_THROWS_AS(validate_cluster(bad), ValidationError);
  bad = c;
  bad.devices[1].compute = 0;
  CHECK_THROWS_AS(validate_cluster(bad), ValidationError);

  CHECK_THROWS_AS(load_cluster("{\"devices\": [}"), ParseError);
  CHECK_THROWS_AS(load_cluster(R"({"devices": [{"compute": 1, "memory": 1}], "bandwidth": 1})"), ParseError);
  CHECK_THROWS_AS(load_cluster(R"({"devices": [], "bandwidth": 1, "conn_latency": 0})"), ValidationError);
}

TEST_CASE("compute weights follow f") {
  auto c = uniform_cluster(3, 10.0, 1 << 20, 1.0, 0.0);
  c.devices[2].compute = 30.0;
  CHECK(proportional_split(50, c.compute_weights()) == std::vector<std::int64_t>{10, 10, 30});
}
