#pragma once

// Data-parallel inner loops with a scalar reference implementation and an
// AVX2/FMA variant chosen at runtime. Both variants are exercised by the
// equivalence tests; results agree to rounding (reductions are reassociated
// in the vector path).

#include <cstddef>
#include <span>
#include <string_view>

namespace hop::kernels {

enum class Isa { Scalar, Avx2 };

bool isa_supported(Isa isa);
Isa active_isa();
/// Forces a kernel set (tests, benchmarking). Throws if unsupported.
void set_isa(Isa isa);
std::string_view isa_name(Isa isa);

/// sum_i (a_i - b_i)^2
double squared_distance(std::span<const double> a, std::span<const double> b);
/// sum_i (x_i - scale * mu_i)^2
double scaled_squared_distance(std::span<const double> x, double scale, std::span<const double> mu);
/// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);
/// out = a * x + b * y
void axpby(double a, std::span<const double> x, double b, std::span<const double> y, std::span<double> out);
/// out_u = min(offsets_sq_u + row_const, upper)
void clamped_offset_row(std::span<const double> offsets_sq, double row_const, double upper, std::span<double> out);
/// sum_u (min(offsets_sq_u + row_const, upper) - target_u)^2
double clamped_residual_row(std::span<const double> offsets_sq, double row_const, double upper,
                            std::span<const double> target);

}  // namespace hop::kernels
