#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "iop/executor.hpp"
#include "iop/kernels.hpp"
#include "iop/partitioner.hpp"
#include "iop/segmenter.hpp"

using namespace iop;
using kernels::Isa;

namespace {

std::vector<double> draw(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

std::vector<const kernels::KernelTable*> vector_tables() {
  std::vector<const kernels::KernelTable*> out;
  if (kernels::avx2_table() != nullptr && kernels::isa_supported(Isa::Avx2)) out.push_back(kernels::avx2_table());
  if (kernels::neon_table() != nullptr && kernels::isa_supported(Isa::Neon)) out.push_back(kernels::neon_table());
  return out;
}

}  // namespace

TEST_CASE("vector kernels agree with scalar") {
  const auto& ref = kernels::scalar_table();
  const auto tables = vector_tables();
  if (tables.empty()) MESSAGE("no vector ISA on this machine; only the scalar path is exercised");
  std::mt19937_64 rng(1);
  for (const auto* t : tables) {
    for (std::size_t n = 0; n <= 67; ++n) {
      CAPTURE(n);
      const auto a = draw(rng, n);
      const auto b = draw(rng, n);

      double scale = 0;
      for (std::size_t i = 0; i < n; ++i) scale += std::abs(a[i] * b[i]);
      CHECK(std::abs(t->dot(a.data(), b.data(), n) - ref.dot(a.data(), b.data(), n)) <= 1e-14 * (scale + 1));

      auto y0 = b;
      auto y1 = b;
      ref.accumulate(a.data(), y0.data(), n);
      t->accumulate(a.data(), y1.data(), n);
      CHECK(y0 == y1);

      y0 = a;
      y1 = a;
      ref.relu(y0.data(), n);
      t->relu(y1.data(), n);
      CHECK(y0 == y1);
    }
  }
}

TEST_CASE("relu keeps NaN and clears negatives") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<const kernels::KernelTable*> tables{&kernels::scalar_table()};
  for (const auto* t : vector_tables()) tables.push_back(t);
  for (const auto* t : tables) {
    std::vector<double> v{-1.0, nan, 2.0, -0.0, nan, -3.0, 4.0, nan, -5.0};
    t->relu(v.data(), v.size());
    CHECK(v[0] == 0.0);
    CHECK(std::isnan(v[1]));
    CHECK(v[2] == 2.0);
    CHECK(std::isnan(v[4]));
    CHECK(std::isnan(v[7]));
    CHECK(v[8] == 0.0);
  }
}

TEST_CASE("isa selection") {
  CHECK(kernels::isa_supported(Isa::Scalar));
  CHECK(kernels::isa_supported(kernels::detected_isa()));
  const Isa saved = kernels::active_isa();
  kernels::set_isa(Isa::Scalar);
  CHECK(kernels::active_isa() == Isa::Scalar);
  for (const Isa isa : {Isa::Avx2, Isa::Neon}) {
    if (!kernels::isa_supported(isa)) CHECK_THROWS_AS(kernels::set_isa(isa), std::invalid_argument);
  }
  kernels::set_isa(saved);
  CHECK(kernels::to_string(Isa::Avx2) == "avx2");
}

TEST_CASE("whole-model passes agree across ISAs") {
  const auto model = model_zoo("vgg11", 32);
  const auto w = random_weights(model, 5);
  const auto in = random_input(model.input_shape, 6);
  const Isa saved = kernels::active_isa();
  kernels::set_isa(Isa::Scalar);
  const auto ref = run_centralized(model, in, w);
  const auto c = uniform_cluster(3, 1e6, 1ULL << 30, 1e5, 2.0);
  const auto plan = plan_iop(model, c, greedy_segment(model, c));
  const auto ref_part = run_partitioned(plan, in, w).output;
  for (const Isa isa : {Isa::Avx2, Isa::Neon}) {
    if (!kernels::isa_supported(isa)) continue;
    kernels::set_isa(isa);
    CHECK(relative_error(run_centralized(model, in, w), ref) <= 1e-12);
    CHECK(relative_error(run_partitioned(plan, in, w).output, ref_part) <= 1e-12);
  }
  kernels::set_isa(saved);
}
