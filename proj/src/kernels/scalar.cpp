#include "iop/kernels.hpp"

namespace iop::kernels {

namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void accumulate_scalar(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}

void relu_scalar(double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] < 0.0 ? 0.0 : y[i];
}

constexpr KernelTable kScalar{dot_scalar, accumulate_scalar, relu_scalar};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

}  // namespace iop::kernels
