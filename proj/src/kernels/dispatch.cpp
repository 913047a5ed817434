#include <atomic>
#include <cstdlib>
#include <string>

#include "hop/error.hpp"
#include "hop/kernels.hpp"
#include "table.hpp"

namespace hop::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(HOP_HAVE_AVX2_TU) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const detail::KernelTable& table_for(Isa isa) {
#if defined(HOP_HAVE_AVX2_TU)
  if (isa == Isa::Avx2) return detail::avx2_table();
#endif
  (void)isa;
  return detail::scalar_table();
}

Isa initial_isa() {
  // HOP_KERNELS=scalar pins the reference path.
  if (const char* env = std::getenv("HOP_KERNELS"); env && std::string(env) == "scalar") return Isa::Scalar;
  return cpu_has_avx2() ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<const detail::KernelTable*> g_table{nullptr};
std::atomic<Isa> g_isa{Isa::Scalar};

const detail::KernelTable& table() {
  const detail::KernelTable* t = g_table.load(std::memory_order_acquire);
  if (t == nullptr) {
    const Isa isa = initial_isa();
    g_isa.store(isa);
    t = &table_for(isa);
    g_table.store(t, std::memory_order_release);
  }
  return *t;
}

}  // namespace

bool isa_supported(Isa isa) { return isa == Isa::Scalar || cpu_has_avx2(); }

Isa active_isa() {
  table();
  return g_isa.load();
}

void set_isa(Isa isa) {
  require(isa_supported(isa), ErrorCode::InvalidArgument, "requested kernel ISA is not supported on this CPU");
  g_isa.store(isa);
  g_table.store(&table_for(isa), std::memory_order_release);
}

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

double squared_distance(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::ShapeMismatch, "squared_distance: length mismatch");
  return table().squared_distance(a.data(), b.data(), a.size());
}

double scaled_squared_distance(std::span<const double> x, double scale, std::span<const double> mu) {
  require(x.size() == mu.size(), ErrorCode::ShapeMismatch, "scaled_squared_distance: length mismatch");
  return table().scaled_squared_distance(x.data(), scale, mu.data(), x.size());
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  require(x.size() == y.size(), ErrorCode::ShapeMismatch, "axpy: length mismatch");
  table().axpy(a, x.data(), y.data(), x.size());
}

void axpby(double a, std::span<const double> x, double b, std::span<const double> y, std::span<double> out) {
  require(x.size() == y.size() && x.size() == out.size(), ErrorCode::ShapeMismatch, "axpby: length mismatch");
  table().axpby(a, x.data(), b, y.data(), out.data(), x.size());
}

void clamped_offset_row(std::span<const double> offsets_sq, double row_const, double upper, std::span<double> out) {
  require(offsets_sq.size() == out.size(), ErrorCode::ShapeMismatch, "clamped_offset_row: length mismatch");
  table().clamped_offset_row(offsets_sq.data(), row_const, upper, out.data(), out.size());
}

double clamped_residual_row(std::span<const double> offsets_sq, double row_const, double upper,
                            std::span<const double> target) {
  require(offsets_sq.size() == target.size(), ErrorCode::ShapeMismatch, "clamped_residual_row: length mismatch");
  return table().clamped_residual_row(offsets_sq.data(), row_const, upper, target.data(), target.size());
}

}  // namespace hop::kernels
