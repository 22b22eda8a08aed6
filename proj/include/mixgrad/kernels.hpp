#pragma once

#include <cstddef>

// Double-precision inner-loop kernels. Every kernel has a scalar reference
// implementation; on x86-64 an AVX2 variant is selected at process start when
// the CPU supports it. Set MIXGRAD_KERNEL=scalar (or =avx2) to force a lane.
//
// Elementwise kernels (mix2, relu, relu_grad, sgd_update) produce identical
// values in both lanes. Reductions (dot) may differ in the last few ulps
// because the vector lane sums in a different order; the equivalence tests
// check them with a tight relative tolerance.

namespace mixgrad::kernels {

enum class Isa { scalar, avx2 };

// Lane chosen for this process (fixed after first call).
Isa active_isa();
const char* isa_name(Isa isa);

double dot(const double* a, const double* b, std::size_t n);
// y += a * x
void axpy(double a, const double* x, double* y, std::size_t n);
// out = ca * a + cb * b
void mix2(double ca, const double* a, double cb, const double* b, double* out, std::size_t n);
// out = max(0, x)
void relu(const double* x, double* out, std::size_t n);
// out = (x > 0) ? up : 0
void relu_grad(const double* x, const double* up, double* out, std::size_t n);
// w -= lr * (g + wd * w)
void sgd_update(double* w, const double* g, double lr, double wd, std::size_t n);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void mix2(double ca, const double* a, double cb, const double* b, double* out, std::size_t n);
void relu(const double* x, double* out, std::size_t n);
void relu_grad(const double* x, const double* up, double* out, std::size_t n);
void sgd_update(double* w, const double* g, double lr, double wd, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define MIXGRAD_HAVE_AVX2_LANE 1
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void mix2(double ca, const double* a, double cb, const double* b, double* out, std::size_t n);
void relu(const double* x, double* out, std::size_t n);
void relu_grad(const double* x, const double* up, double* out, std::size_t n);
void sgd_update(double* w, const double* g, double lr, double wd, std::size_t n);
}  // namespace avx2
#else
#define MIXGRAD_HAVE_AVX2_LANE 0
#endif

// True when the running CPU can execute the AVX2 lane.
bool cpu_has_avx2();

}  // namespace mixgrad::kernels
