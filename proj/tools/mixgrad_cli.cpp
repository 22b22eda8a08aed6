#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mixgrad/harness.hpp"
#include "mixgrad/kernels.hpp"

namespace fs = std::filesystem;
using namespace mixgrad;

namespace {

int cmd_train(const std::vector<std::string>& args) {
    const RunConfig cfg = parse_config(args);
    std::cout << "variant=" << variant_to_string(cfg.variant) << " alpha=" << cfg.alpha
              << " wd=" << cfg.resolved_weight_decay() << " epochs=" << cfg.epochs
              << " seed=" << cfg.seed << " data=" << cfg.data
              << " kernels=" << kernels::isa_name(kernels::active_isa()) << "\n";
    const TrainResult r = train_run(cfg);
    std::cout << "final train loss " << r.final_train_loss << ", test accuracy "
              << r.final_test_accuracy << "\n"
              << "metrics: " << r.metrics_csv.string() << "\n"
              << "checkpoint: " << r.checkpoint.string() << "\n";
    return 0;
}

Dataset load_eval_data(const std::string& data, const std::string& stats_json,
                       std::uint64_t seed) {
    Dataset test;
    NormStats stats;
    if (data == "synthetic") {
        Rng test_rng(seed + 1);
        test = gen_synthetic(test_rng, 3, 100);
        if (stats_json.empty()) {
            Rng train_rng(seed);
            stats = compute_norm_stats(gen_synthetic(train_rng, 3, 200));
        } else {
            stats = norm_stats_from_run_json(stats_json);
        }
    } else {
        test = load_cifar10_bin({fs::path(data) / "test_batch.bin"});
        if (stats_json.empty()) {
            std::vector<fs::path> train_files;
            for (int i = 1; i <= 5; ++i)
                train_files.push_back(fs::path(data) / ("data_batch_" + std::to_string(i) + ".bin"));
            stats = compute_norm_stats(load_cifar10_bin(train_files));
        } else {
            stats = norm_stats_from_run_json(stats_json);
        }
    }
    return normalize(test, stats);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hidden-layer feature-map mixup trainer"};
    app.require_subcommand(1);

    // train takes the full flag set; pass everything through to parse_config.
    auto* train = app.add_subcommand("train", "train one model variant");
    train->allow_extras(true);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    std::string eval_ckpt, eval_data = "synthetic", eval_stats;
    std::uint64_t eval_seed = 1;
    eval->add_option("--checkpoint", eval_ckpt)->required();
    eval->add_option("--data", eval_data);
    eval->add_option("--stats", eval_stats)
        ->description("run.json holding the training normalization stats");
    eval->add_option("--seed", eval_seed)->description("seed for synthetic test data");

    auto* maps = app.add_subcommand("export-maps", "dump first-conv feature maps");
    std::string maps_ckpt, maps_data = "synthetic", maps_stats, maps_out = "feature-maps";
    std::uint64_t maps_seed = 1;
    int maps_count = 8;
    maps->add_option("--checkpoint", maps_ckpt)->required();
    maps->add_option("--data", maps_data);
    maps->add_option("--stats", maps_stats);
    maps->add_option("--out", maps_out);
    maps->add_option("--count", maps_count)->check(CLI::PositiveNumber);
    maps->add_option("--seed", maps_seed);

    auto* synth = app.add_subcommand("gen-synth", "write a synthetic CIFAR-format dataset");
    std::string synth_out = "synthetic.bin";
    int synth_classes = 3;
    std::uint64_t synth_per_class = 200, synth_seed = 1;
    synth->add_option("--out", synth_out);
    synth->add_option("--classes", synth_classes);
    synth->add_option("--per-class", synth_per_class);
    synth->add_option("--seed", synth_seed);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(train->remaining());

        if (eval->parsed()) {
            const ModelParams m = load_checkpoint(eval_ckpt);
            const Dataset test = load_eval_data(eval_data, eval_stats, eval_seed);
            std::printf("test accuracy: %.4f (%zu samples)\n", evaluate(m, test), test.size());
            return 0;
        }

        if (maps->parsed()) {
            const ModelParams m = load_checkpoint(maps_ckpt);
            const Dataset test = load_eval_data(maps_data, maps_stats, maps_seed);
            const std::size_t count =
                std::min<std::size_t>(static_cast<std::size_t>(maps_count), test.size());
            Tensor images(count, 3, 32, 32);
            for (std::size_t i = 0; i < count; ++i)
                std::copy_n(test.images.sample(i), images.sample_size(), images.sample(i));
            export_feature_maps(m, images, maps_out);
            std::cout << "wrote " << count * 32 << " channel maps under " << maps_out << "\n";
            return 0;
        }

        if (synth->parsed()) {
            Rng rng(synth_seed);
            const Dataset ds = gen_synthetic(rng, synth_classes, synth_per_class);
            write_cifar10_bin(ds, synth_out);
            std::cout << "wrote " << ds.size() << " records to " << synth_out << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
