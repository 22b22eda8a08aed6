#include "mixgrad/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace mixgrad::kernels {

namespace scalar {

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void mix2(double ca, const double* a, double cb, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = ca * a[i] + cb * b[i];
}

void relu(const double* x, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_grad(const double* x, const double* up, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? up[i] : 0.0;
}

void sgd_update(double* w, const double* g, double lr, double wd, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) w[i] -= lr * (g[i] + wd * w[i]);
}

}  // namespace scalar

bool cpu_has_avx2() {
#if MIXGRAD_HAVE_AVX2_LANE
    return __builtin_cpu_supports("avx2") != 0;
#else
    return false;
#endif
}

namespace {

Isa choose_isa() {
    if (const char* env = std::getenv("MIXGRAD_KERNEL")) {
        if (std::strcmp(env, "scalar") == 0) return Isa::scalar;
        if (std::strcmp(env, "avx2") == 0 && cpu_has_avx2()) return Isa::avx2;
    }
    return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

struct Dispatch {
    double (*dot)(const double*, const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    void (*mix2)(double, const double*, double, const double*, double*, std::size_t);
    void (*relu)(const double*, double*, std::size_t);
    void (*relu_grad)(const double*, const double*, double*, std::size_t);
    void (*sgd_update)(double*, const double*, double, double, std::size_t);
};

const Dispatch& table() {
    static const Dispatch d = [] {
#if MIXGRAD_HAVE_AVX2_LANE
        if (choose_isa() == Isa::avx2)
            return Dispatch{avx2::dot,  avx2::axpy,      avx2::mix2,
                            avx2::relu, avx2::relu_grad, avx2::sgd_update};
#endif
        return Dispatch{scalar::dot,  scalar::axpy,      scalar::mix2,
                        scalar::relu, scalar::relu_grad, scalar::sgd_update};
    }();
    return d;
}

}  // namespace

Isa active_isa() {
    static const Isa isa = choose_isa();
    return isa;
}

const char* isa_name(Isa isa) {
    return isa == Isa::avx2 ? "avx2" : "scalar";
}

double dot(const double* a, const double* b, std::size_t n) { return table().dot(a, b, n); }

void axpy(double a, const double* x, double* y, std::size_t n) { table().axpy(a, x, y, n); }

void mix2(double ca, const double* a, double cb, const double* b, double* out, std::size_t n) {
    table().mix2(ca, a, cb, b, out, n);
}

void relu(const double* x, double* out, std::size_t n) { table().relu(x, out, n); }

void relu_grad(const double* x, const double* up, double* out, std::size_t n) {
    table().relu_grad(x, up, out, n);
}

void sgd_update(double* w, const double* g, double lr, double wd, std::size_t n) {
    table().sgd_update(w, g, lr, wd, n);
}

}  // namespace mixgrad::kernels
