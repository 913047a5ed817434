#include <algorithm>

#include "table.hpp"

namespace hop::kernels::detail {
namespace {

double squared_distance(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double scaled_squared_distance(const double* x, double scale, const double* mu, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - scale * mu[i];
    s += d * d;
  }
  return s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void axpby(double a, const double* x, double b, const double* y, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i] + b * y[i];
}

void clamped_offset_row(const double* off, double c, double upper, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::min(off[i] + c, upper);
}

double clamped_residual_row(const double* off, double c, double upper, const double* target, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = std::min(off[i] + c, upper) - target[i];
    s += r * r;
  }
  return s;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{squared_distance, scaled_squared_distance, axpy,
                                 axpby, clamped_offset_row, clamped_residual_row};
  return table;
}

}  // namespace hop::kernels::detail
