#include "mixgrad/kernels.hpp"

#if MIXGRAD_HAVE_AVX2_LANE

#include <immintrin.h>

// Compiled with -mavx2 and without -mfma: mul/add stay separate instructions,
// so the elementwise kernels are bit-identical to the scalar lane.

namespace mixgrad::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d swapped = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

}  // namespace

double dot(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
        acc1 = _mm256_add_pd(
            acc1, _mm256_mul_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4)));
    }
    if (i + 4 <= n) {
        acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
        i += 4;
    }
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_add_pd(vy, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void mix2(double ca, const double* a, double cb, const double* b, double* out, std::size_t n) {
    const __m256d vca = _mm256_set1_pd(ca);
    const __m256d vcb = _mm256_set1_pd(cb);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d va = _mm256_mul_pd(vca, _mm256_loadu_pd(a + i));
        __m256d vb = _mm256_mul_pd(vcb, _mm256_loadu_pd(b + i));
        _mm256_storeu_pd(out + i, _mm256_add_pd(va, vb));
    }
    for (; i < n; ++i) out[i] = ca * a[i] + cb * b[i];
}

void relu(const double* x, double* out, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_loadu_pd(x + i);
        __m256d mask = _mm256_cmp_pd(v, zero, _CMP_GT_OQ);
        _mm256_storeu_pd(out + i, _mm256_and_pd(v, mask));
    }
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_grad(const double* x, const double* up, double* out, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
        _mm256_storeu_pd(out + i, _mm256_and_pd(_mm256_loadu_pd(up + i), mask));
    }
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? up[i] : 0.0;
}

void sgd_update(double* w, const double* g, double lr, double wd, std::size_t n) {
    const __m256d vlr = _mm256_set1_pd(lr);
    const __m256d vwd = _mm256_set1_pd(wd);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vw = _mm256_loadu_pd(w + i);
        __m256d step = _mm256_add_pd(_mm256_loadu_pd(g + i), _mm256_mul_pd(vwd, vw));
        _mm256_storeu_pd(w + i, _mm256_sub_pd(vw, _mm256_mul_pd(vlr, step)));
    }
    for (; i < n; ++i) w[i] -= lr * (g[i] + wd * w[i]);
}

}  // namespace mixgrad::kernels::avx2

#endif  // MIXGRAD_HAVE_AVX2_LANE
