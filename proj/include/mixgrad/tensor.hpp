#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mixgrad/errors.hpp"

namespace mixgrad {

struct Shape4 {
    std::size_t n = 0, c = 0, h = 0, w = 0;

    std::size_t count() const { return n * c * h * w; }
    bool operator==(const Shape4&) const = default;

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
};

// Rank-4 array in contiguous row-major (n, c, h, w) order. Holds images,
// feature maps, and flattened activations (as (n, f, 1, 1)).
struct Tensor {
    Shape4 shape{};
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w)
        : shape{n, c, h, w}, data(n * c * h * w, 0.0) {}
    explicit Tensor(Shape4 s) : shape(s), data(s.count(), 0.0) {}

    std::size_t size() const { return data.size(); }

    std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return ((n * shape.c + c) * shape.h + h) * shape.w + w;
    }
    double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data[index(n, c, h, w)];
    }
    double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data[index(n, c, h, w)];
    }

    // Per-sample contiguous slice.
    double* sample(std::size_t n) { return data.data() + n * shape.c * shape.h * shape.w; }
    const double* sample(std::size_t n) const {
        return data.data() + n * shape.c * shape.h * shape.w;
    }
    std::size_t sample_size() const { return shape.c * shape.h * shape.w; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    // Same data, new shape; counts must agree.
    Tensor reshaped(Shape4 s) const {
        if (s.count() != shape.count())
            throw DimensionError("reshape " + shape.str() + " -> " + s.str() +
                                 ": element counts differ");
        Tensor t;
        t.shape = s;
        t.data = data;
        return t;
    }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!(a.shape == b.shape))
        throw DimensionError(std::string(what) + ": shapes " + a.shape.str() + " vs " +
                             b.shape.str() + " differ");
}

}  // namespace mixgrad
