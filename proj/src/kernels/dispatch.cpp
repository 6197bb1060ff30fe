#include <atomic>
#include <stdexcept>
#include <string>

#include "iop/kernels.hpp"

namespace iop::kernels {

#if !defined(IOP_HAVE_AVX2)
const KernelTable* avx2_table() { return nullptr; }
#endif
#if !defined(IOP_HAVE_NEON)
const KernelTable* neon_table() { return nullptr; }
#endif

std::string_view to_string(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
    case Isa::Neon:
      return "neon";
  }
  return "?";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#if defined(IOP_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::Neon:
#if defined(IOP_HAVE_NEON)
      return true;  // mandatory on aarch64
#else
      return false;
#endif
  }
  return false;
}

Isa detected_isa() {
  if (isa_supported(Isa::Avx2)) return Isa::Avx2;
  if (isa_supported(Isa::Neon)) return Isa::Neon;
  return Isa::Scalar;
}

namespace {

const KernelTable* table_for(Isa isa) {
  switch (isa) {
    case Isa::Avx2:
      return avx2_table();
    case Isa::Neon:
      return neon_table();
    case Isa::Scalar:
      break;
  }
  return &scalar_table();
}

struct Active {
  std::atomic<const KernelTable*> table{nullptr};
  std::atomic<Isa> isa{Isa::Scalar};
};

Active& active() {
  static Active state;
  static const bool initialized = [] {
    const Isa isa = detected_isa();
    state.isa.store(isa);
    state.table.store(table_for(isa));
    return true;
  }();
  (void)initialized;
  return state;
}

const KernelTable& current() { return *active().table.load(std::memory_order_relaxed); }

}  // namespace

Isa active_isa() { return active().isa.load(); }

void set_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::invalid_argument("kernel ISA '" + std::string(to_string(isa)) + "' is not available on this CPU");
  }
  active().isa.store(isa);
  active().table.store(table_for(isa));
}

double dot(const double* a, const double* b, std::size_t n) { return current().dot(a, b, n); }
void accumulate(const double* x, double* y, std::size_t n) { current().accumulate(x, y, n); }
void relu(double* y, std::size_t n) { current().relu(y, n); }

}  // namespace iop::kernels
