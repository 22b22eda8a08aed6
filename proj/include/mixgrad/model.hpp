#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "mixgrad/layers.hpp"
#include "mixgrad/mix.hpp"
#include "mixgrad/rng.hpp"
#include "mixgrad/tensor.hpp"

namespace mixgrad {

// Reference architecture on 32x32x3 inputs:
//   conv1 3->32 3x3 pad 1, ReLU, 2x2 pool
//   conv2 32->64 3x3 pad 1, ReLU, 2x2 pool
//   fc1 4096->512, ReLU
//   fc2 512->10
// The mix point for split layer L sits after block L's ReLU, before its pool.
struct ModelParams {
    ConvParams conv1;
    ConvParams conv2;
    LinearParams fc1;
    LinearParams fc2;
};

struct ModelGrads {
    Tensor dconv1_w;
    std::vector<double> dconv1_b;
    Tensor dconv2_w;
    std::vector<double> dconv2_b;
    std::vector<double> dfc1_w, dfc1_b;
    std::vector<double> dfc2_w, dfc2_b;
};

ModelParams make_reference_model();
ModelGrads zero_grads(const ModelParams& m);

// He-normal weights (std = sqrt(2 / fan_in)) via Box-Muller on the seeded
// stream, biases zero. Draw order: conv1.w, conv2.w, fc1.w, fc2.w.
ModelParams init_model(Rng& rng);

// Activations recorded by one stem pass, enough to backpropagate through it.
struct StemCache {
    int split_layer = 0;
    Tensor x;
    Tensor conv1_pre;  // L >= 1
    PoolResult pool1;  // L == 2
    Tensor pool1_out;
    Tensor conv2_pre;  // L == 2
};

// Activations recorded by one trunk pass.
struct TrunkCache {
    int split_layer = 0;
    Tensor x;          // L == 0: conv1 input
    Tensor conv1_pre;  // L == 0
    PoolResult pool1;  // L <= 1 (indices + pre-pool shape)
    Tensor pool1_out;  // L <= 1: conv2 input
    Tensor conv2_pre;  // L <= 1
    PoolResult pool2;
    Tensor flat;  // fc1 input
    Tensor fc1_pre;
    Tensor fc1_act;  // fc2 input
};

// Layers up to and including the mix point. L=0 returns x unchanged.
Tensor stem_forward(const ModelParams& m, const Tensor& x, int split_layer,
                    StemCache* cache = nullptr);

// Remaining layers from the mix point to the logits.
Tensor trunk_forward(const ModelParams& m, const Tensor& f, int split_layer,
                     TrunkCache* cache = nullptr);

// Backward through the trunk; accumulates parameter gradients into g and
// returns the gradient at the trunk input.
Tensor trunk_backward(const ModelParams& m, const TrunkCache& cache, const Tensor& dlogits,
                      ModelGrads& g);

// Backward through one stem branch, accumulating into g.
void stem_backward(const ModelParams& m, const StemCache& cache, const Tensor& dfeature,
                   ModelGrads& g);

// Fused single-network class prediction; ties go to the lowest class index.
std::vector<int> predict(const ModelParams& m, const Tensor& x);

// One mixed step with explicit per-sample draws (weights[j] has k entries for
// sample j of every branch batch). Loss is the batch mean. Exposed so tests
// can fix the draws; train_step_mixed samples them.
double mixed_loss_and_grads(const ModelParams& m, std::span<const Tensor> xs,
                            std::span<const Tensor> ts, int split_layer,
                            std::span<const MixDraw> draws, ModelGrads& g);

// Forward-only variant for finite-difference checks.
double mixed_loss(const ModelParams& m, std::span<const Tensor> xs, std::span<const Tensor> ts,
                  int split_layer, std::span<const MixDraw> draws);

void sgd_step(ModelParams& m, const ModelGrads& g, double lr, double weight_decay);

double train_step_mixed_with_draws(ModelParams& m, std::span<const Tensor> xs,
                                   std::span<const Tensor> ts, int split_layer,
                                   std::span<const MixDraw> draws, double lr,
                                   double weight_decay);

// Draws one MixDraw per sample (Beta for arity 2, Dirichlet for 3), then runs
// the mixed step and applies SGD. Returns the batch mean loss.
double train_step_mixed(ModelParams& m, std::span<const Tensor> xs, std::span<const Tensor> ts,
                        const MixSpec& spec, Rng& rng, double lr, double weight_decay);

// Ordinary supervised step; identical to a mixed step whose draw is the unit
// weight on a single branch.
double train_step_plain(ModelParams& m, const Tensor& x, const Tensor& t, double lr,
                        double weight_decay);

// Checkpoint: magic "MIXGRAD1", then per array: u64 name length, name bytes,
// u64 rank, u64 dims, raw little-endian f64 data.
void save_checkpoint(const ModelParams& m, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace mixgrad
