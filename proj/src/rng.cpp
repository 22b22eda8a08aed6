#include "mixgrad/rng.hpp"

namespace mixgrad {

double gamma_sample(Rng& rng, double alpha) {
    if (!(alpha > 0.0)) throw ValidationError("gamma_sample: alpha must be > 0");
    if (alpha < 1.0) {
        double u = rng.uniform01();
        while (u == 0.0) u = rng.uniform01();
        return gamma_sample(rng, alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = rng.normal01();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.uniform01();
        const double x2 = x * x;
        if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
        if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
    }
}

double beta_symmetric(Rng& rng, double alpha) {
    if (!(alpha > 0.0)) throw ValidationError("beta_symmetric: alpha must be > 0");
    const double g1 = gamma_sample(rng, alpha);
    const double g2 = gamma_sample(rng, alpha);
    return g1 / (g1 + g2);
}

MixDraw dirichlet_symmetric(Rng& rng, double alpha, int k) {
    if (!(alpha > 0.0)) throw ValidationError("dirichlet_symmetric: alpha must be > 0");
    if (k < 2) throw ValidationError("dirichlet_symmetric: k must be >= 2");
    MixDraw draw;
    draw.weights.resize(static_cast<std::size_t>(k));
    double sum = 0.0;
    for (auto& w : draw.weights) {
        w = gamma_sample(rng, alpha);
        sum += w;
    }
    for (auto& w : draw.weights) w /= sum;
    return draw;
}

}  // namespace mixgrad
