#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mixgrad/data.hpp"
#include "mixgrad/mix.hpp"
#include "mixgrad/model.hpp"

namespace mixgrad {

enum class Variant {
    original,
    mixup,
    mixup3,
    conv1_mixup,
    conv2_mixup,
    conv1_mixup3,
    conv2_mixup3,
};

const std::vector<std::string>& variant_names();
Variant variant_from_string(const std::string& name);
std::string variant_to_string(Variant v);

// Mix placement for a variant; original has no mix (nullopt).
std::optional<MixSpec> variant_mix_spec(Variant v, double alpha);

// Per-variant weight decay defaults: 0.04 for the plain CNN, 0.02 for all
// two-way mixes and the three-way conv2 mix, 0.01 for the three-way input and
// conv1 mixes.
double default_weight_decay(Variant v);

struct RunConfig {
    Variant variant = Variant::original;
    double alpha = 1.0;
    std::optional<double> weight_decay;  // default_weight_decay(variant) if unset
    int epochs = 150;
    int batch = 64;
    std::uint64_t seed = 1;
    std::string data = "synthetic";  // CIFAR-10 directory or "synthetic"
    std::size_t per_class = 500;     // 0 = keep the full training split
    std::filesystem::path out_dir = "run-out";

    double resolved_weight_decay() const {
        return weight_decay ? *weight_decay : default_weight_decay(variant);
    }
    void validate() const;
};

// Flags (--variant, --alpha, --wd, --epochs, --batch, --seed, --data,
// --per-class, --out, --config <json>). Flag values override config-file
// values; unknown JSON keys are rejected.
RunConfig parse_config(const std::vector<std::string>& args);

double evaluate(const ModelParams& m, const Dataset& test);

struct TrainResult {
    ModelParams model;
    double final_test_accuracy = 0.0;
    double final_train_loss = 0.0;
    std::filesystem::path metrics_csv;
    std::filesystem::path checkpoint;
};

// Full training protocol: per-epoch zipped shuffles, lr_at_epoch schedule,
// per-epoch test evaluation, metrics.csv + run.json + final checkpoint under
// cfg.out_dir. Deterministic for a fixed (config, seed).
TrainResult train_run(const RunConfig& cfg);

// Loads the dataset named by cfg.data: synthetic train/test splits, or the
// CIFAR-10 binary batches under a directory. Training split is subsampled
// per class when per_class > 0 (never the test split).
struct SplitData {
    Dataset train;
    Dataset test;
};
SplitData load_splits(const RunConfig& cfg);

// First-conv feature maps for each image x channel: raw f64 dump with a text
// sidecar (shape + min/max) and a min-max normalized 8-bit P5 PGM named
// img{i}_ch{c}.pgm.
void export_feature_maps(const ModelParams& m, const Tensor& images,
                         const std::filesystem::path& outdir);

// Quantization used for the PGM bytes: floor(255 * (v - min) / (max - min)),
// 0 everywhere when min == max.
unsigned char quantize_pgm(double v, double min_v, double max_v);

NormStats norm_stats_from_run_json(const std::filesystem::path& run_json);

}  // namespace mixgrad
