#include <immintrin.h>

#include <algorithm>

#include "table.hpp"

namespace hop::kernels::detail {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    const __m256d d1 = _mm256_sub_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4));
    acc0 = _mm256_fmadd_pd(d0, d0, acc0);
    acc1 = _mm256_fmadd_pd(d1, d1, acc1);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double scaled_squared_distance(const double* x, double scale, const double* mu, std::size_t n) {
  const __m256d sv = _mm256_set1_pd(scale);
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d d0 = _mm256_fnmadd_pd(sv, _mm256_loadu_pd(mu + i), _mm256_loadu_pd(x + i));
    const __m256d d1 = _mm256_fnmadd_pd(sv, _mm256_loadu_pd(mu + i + 4), _mm256_loadu_pd(x + i + 4));
    acc0 = _mm256_fmadd_pd(d0, d0, acc0);
    acc1 = _mm256_fmadd_pd(d1, d1, acc1);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) {
    const double d = x[i] - scale * mu[i];
    s += d * d;
  }
  return s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

void axpby(double a, const double* x, double b, const double* y, double* out, std::size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  const __m256d bv = _mm256_set1_pd(b);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d by = _mm256_mul_pd(bv, _mm256_loadu_pd(y + i));
    _mm256_storeu_pd(out + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), by));
  }
  for (; i < n; ++i) out[i] = a * x[i] + b * y[i];
}

void clamped_offset_row(const double* off, double c, double upper, double* out, std::size_t n) {
  const __m256d cv = _mm256_set1_pd(c);
  const __m256d uv = _mm256_set1_pd(upper);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_min_pd(_mm256_add_pd(_mm256_loadu_pd(off + i), cv), uv));
  for (; i < n; ++i) out[i] = std::min(off[i] + c, upper);
}

double clamped_residual_row(const double* off, double c, double upper, const double* target, std::size_t n) {
  const __m256d cv = _mm256_set1_pd(c);
  const __m256d uv = _mm256_set1_pd(upper);
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d h = _mm256_min_pd(_mm256_add_pd(_mm256_loadu_pd(off + i), cv), uv);
    const __m256d r = _mm256_sub_pd(h, _mm256_loadu_pd(target + i));
    acc = _mm256_fmadd_pd(r, r, acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    const double r = std::min(off[i] + c, upper) - target[i];
    s += r * r;
  }
  return s;
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{squared_distance, scaled_squared_distance, axpy,
                                 axpby, clamped_offset_row, clamped_residual_row};
  return table;
}

}  // namespace hop::kernels::detail
