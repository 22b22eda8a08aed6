#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mixgrad/tensor.hpp"

namespace mixgrad {

struct ConvParams {
    Tensor weights;            // (out_channels, in_channels, kh, kw)
    std::vector<double> bias;  // out_channels
    int pad = 0;
    int stride = 1;

    std::size_t out_channels() const { return weights.shape.n; }
    std::size_t in_channels() const { return weights.shape.c; }
};

struct LinearParams {
    std::size_t out_features = 0;
    std::size_t in_features = 0;
    std::vector<double> weights;  // row-major (out_features x in_features)
    std::vector<double> bias;     // out_features

    LinearParams() = default;
    LinearParams(std::size_t out_f, std::size_t in_f)
        : out_features(out_f), in_features(in_f), weights(out_f * in_f, 0.0), bias(out_f, 0.0) {}
};

struct ConvGrads {
    Tensor dweights;
    std::vector<double> dbias;
    Tensor dinput;
};

struct LinearGrads {
    std::vector<double> dweights;
    std::vector<double> dbias;
    Tensor dinput;
};

Tensor conv2d_forward(const Tensor& input, const ConvParams& p);
ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& upstream);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& upstream);

// 2x2 non-overlapping max pool. argmax holds, per output cell, the flat index
// of the winning input element; ties go to the first element in row-major
// window order.
struct PoolResult {
    Tensor out;
    std::vector<std::uint64_t> argmax;
    Shape4 input_shape;
};
PoolResult maxpool2_forward(const Tensor& x);
Tensor maxpool2_backward(const std::vector<std::uint64_t>& argmax, const Tensor& upstream,
                         Shape4 input_shape);

// x is (n, in_features, 1, 1); output (n, out_features, 1, 1).
Tensor linear_forward(const Tensor& x, const LinearParams& p);
LinearGrads linear_backward(const Tensor& x, const LinearParams& p, const Tensor& upstream);

// Soft-label cross-entropy over logits (n, classes, 1, 1) with targets of the
// same shape. Loss is averaged over the batch; dlogits carries the 1/n factor.
struct XentResult {
    double loss;
    Tensor dlogits;
};
XentResult softmax_xent_soft(const Tensor& logits, const Tensor& targets);

// w -= lr * (g + wd * w). Pass wd = 0 for bias arrays.
void sgd_update_array(std::vector<double>& w, const std::vector<double>& g, double lr, double wd);
void sgd_update_array(Tensor& w, const Tensor& g, double lr, double wd);

// 0.01 through epoch 100, then 0.001 (single x0.1 step).
double lr_at_epoch(int epoch);

}  // namespace mixgrad
