#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mixgrad/rng.hpp"
#include "mixgrad/tensor.hpp"

namespace mixgrad {

struct Dataset {
    Tensor images;            // (n, 3, 32, 32)
    std::vector<int> labels;  // class indices < num_classes
    std::string name;
    int num_classes = 10;

    std::size_t size() const { return labels.size(); }
};

struct NormStats {
    double mean[3] = {0, 0, 0};
    double stddev[3] = {1, 1, 1};
};

// CIFAR-10 binary files: 3073-byte records, 1 label byte then 1024 R, 1024 G,
// 1024 B bytes row-major. Pixels are scaled to [0,1].
Dataset load_cifar10_bin(const std::vector<std::filesystem::path>& paths);

// Exactly per_class samples per class, drawn uniformly without replacement
// from the seeded stream; relative order within a class is preserved.
Dataset subsample_per_class(const Dataset& ds, std::size_t per_class, Rng& rng);

NormStats compute_norm_stats(const Dataset& ds);
Dataset normalize(const Dataset& ds, const NormStats& stats);

std::vector<double> one_hot(int label, int classes = 10);

// Build an images/teacher pair for the listed sample indices.
struct LabeledBatch {
    Tensor images;
    Tensor targets;  // (n, classes, 1, 1) soft-label rows
};
LabeledBatch gather_batch(const Dataset& ds, const std::vector<std::size_t>& indices,
                          int classes = 10);

// CI-speed stand-in: each class is a distinct mean color plus N(0, 0.1) pixel
// noise, linearly separable by channel means. classes must be in [2, 8].
Dataset gen_synthetic(Rng& rng, int classes = 3, std::size_t per_class = 200);

// Write a dataset as CIFAR-10 binary records (pixels clamped to [0,1] and
// quantized to bytes).
void write_cifar10_bin(const Dataset& ds, const std::filesystem::path& path);

}  // namespace mixgrad
