#include "mixgrad/mix.hpp"

#include <cmath>

#include "mixgrad/kernels.hpp"

namespace mixgrad {

namespace {

void validate_draw(const MixDraw& draw) {
    if (draw.weights.empty()) throw ValidationError("MixDraw: empty weight vector");
    double sum = 0.0;
    for (double w : draw.weights) {
        if (w < 0.0 || w > 1.0) throw ValidationError("MixDraw: weight outside [0,1]");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("MixDraw: weights do not sum to 1");
}

}  // namespace

Tensor mix2(const Tensor& a, const Tensor& b, double lambda) {
    require_same_shape(a, b, "mix2");
    if (lambda < 0.0 || lambda > 1.0) throw ValidationError("mix2: lambda must be in [0,1]");
    if (lambda == 1.0) return a;
    if (lambda == 0.0) return b;
    Tensor out(a.shape);
    kernels::mix2(lambda, a.data.data(), 1.0 - lambda, b.data.data(), out.data.data(), a.size());
    return out;
}

Tensor mixk(std::span<const Tensor> inputs, const MixDraw& draw) {
    if (inputs.size() != draw.arity())
        throw ValidationError("mixk: " + std::to_string(inputs.size()) + " inputs vs " +
                              std::to_string(draw.arity()) + " weights");
    validate_draw(draw);
    for (std::size_t i = 1; i < inputs.size(); ++i)
        require_same_shape(inputs[0], inputs[i], "mixk");

    // A lone unit weight reproduces that input exactly.
    for (std::size_t i = 0; i < inputs.size(); ++i)
        if (draw.weights[i] == 1.0) return inputs[i];

    if (inputs.size() == 2) {
        Tensor out(inputs[0].shape);
        kernels::mix2(draw.weights[0], inputs[0].data.data(), draw.weights[1],
                      inputs[1].data.data(), out.data.data(), out.size());
        return out;
    }
    Tensor out(inputs[0].shape);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (draw.weights[i] == 0.0) continue;
        kernels::axpy(draw.weights[i], inputs[i].data.data(), out.data.data(), out.size());
    }
    return out;
}

std::vector<double> mix_labels(std::span<const std::vector<double>> targets,
                               const MixDraw& draw) {
    if (targets.size() != draw.arity())
        throw ValidationError("mix_labels: " + std::to_string(targets.size()) + " targets vs " +
                              std::to_string(draw.arity()) + " weights");
    validate_draw(draw);
    const std::size_t classes = targets[0].size();
    for (const auto& t : targets) {
        if (t.size() != classes) throw ValidationError("mix_labels: target rows differ in length");
        double sum = 0.0;
        for (double v : t) {
            if (v < 0.0 || v > 1.0)
                throw ValidationError("mix_labels: target entry outside [0,1]");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw ValidationError("mix_labels: target row does not sum to 1");
    }

    for (std::size_t i = 0; i < targets.size(); ++i)
        if (draw.weights[i] == 1.0) return targets[i];

    std::vector<double> out(classes, 0.0);
    if (targets.size() == 2) {
        kernels::mix2(draw.weights[0], targets[0].data(), draw.weights[1], targets[1].data(),
                      out.data(), classes);
        return out;
    }
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (draw.weights[i] == 0.0) continue;
        kernels::axpy(draw.weights[i], targets[i].data(), out.data(), classes);
    }
    return out;
}

}  // namespace mixgrad
