#pragma once

#include <cstddef>

namespace hop::kernels::detail {

struct KernelTable {
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  double (*scaled_squared_distance)(const double* x, double scale, const double* mu, std::size_t n);
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  void (*axpby)(double a, const double* x, double b, const double* y, double* out, std::size_t n);
  void (*clamped_offset_row)(const double* off, double c, double upper, double* out, std::size_t n);
  double (*clamped_residual_row)(const double* off, double c, double upper, const double* target, std::size_t n);
};

const KernelTable& scalar_table();
#if defined(HOP_HAVE_AVX2_TU)
const KernelTable& avx2_table();
#endif

}  // namespace hop::kernels::detail
