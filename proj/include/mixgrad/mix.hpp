#pragma once

#include <span>
#include <vector>

#include "mixgrad/rng.hpp"
#include "mixgrad/tensor.hpp"

namespace mixgrad {

// Where and how to mix: split layer 0 = input images, 1 = after conv block 1's
// activation, 2 = after conv block 2's activation; arity 2 (Beta) or 3
// (Dirichlet); alpha is the concentration.
struct MixSpec {
    int split_layer = 0;
    int arity = 2;
    double alpha = 1.0;

    void validate() const {
        if (split_layer < 0 || split_layer > 2)
            throw ValidationError("MixSpec: split_layer must be in {0,1,2}");
        if (arity != 2 && arity != 3) throw ValidationError("MixSpec: arity must be 2 or 3");
        if (!(alpha > 0.0)) throw ValidationError("MixSpec: alpha must be > 0");
    }
};

// lambda * a + (1 - lambda) * b. lambda = 1 returns a exactly, lambda = 0
// returns b exactly.
Tensor mix2(const Tensor& a, const Tensor& b, double lambda);

// Sum of u_i * input_i over the draw's weights.
Tensor mixk(std::span<const Tensor> inputs, const MixDraw& draw);

// Convex combination of soft-label rows under the same draw as the features.
std::vector<double> mix_labels(std::span<const std::vector<double>> targets, const MixDraw& draw);

}  // namespace mixgrad
