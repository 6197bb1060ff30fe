#pragma once

// Inner loops of the reference executor. Every kernel has a scalar
// reference; AVX2 (x86-64) and NEON (aarch64) variants are picked at runtime
// when the CPU supports them. Vector variants reassociate sums and may fuse
// multiply-adds, so results agree with the scalar path to rounding only.

#include <cstddef>
#include <string_view>

namespace iop::kernels {

enum class Isa { Scalar, Avx2, Neon };

std::string_view to_string(Isa isa);

bool isa_supported(Isa isa);
// Best ISA the running CPU supports.
Isa detected_isa();
Isa active_isa();
// Pins the dispatch target (tests compare variants this way). Throws
// std::invalid_argument for an ISA the CPU cannot run.
void set_isa(Isa isa);

// Σ a[i] * b[i]
double dot(const double* a, const double* b, std::size_t n);
// y[i] += x[i]
void accumulate(const double* x, double* y, std::size_t n);
// y[i] = max(y[i], 0)
void relu(double* y, std::size_t n);

struct KernelTable {
  double (*dot)(const double*, const double*, std::size_t);
  void (*accumulate)(const double*, double*, std::size_t);
  void (*relu)(double*, std::size_t);
};

const KernelTable& scalar_table();
// nullptr when the variant is not compiled into this build.
const KernelTable* avx2_table();
const KernelTable* neon_table();

}  // namespace iop::kernels
