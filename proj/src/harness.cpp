#include "mixgrad/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mixgrad/kernels.hpp"
#include "mixgrad/layers.hpp"

namespace mixgrad {

namespace {

using nlohmann::json;

const std::vector<std::pair<std::string, Variant>>& variant_table() {
    static const std::vector<std::pair<std::string, Variant>> t = {
        {"original", Variant::original},         {"mixup", Variant::mixup},
        {"mixup3", Variant::mixup3},             {"conv1-mixup", Variant::conv1_mixup},
        {"conv2-mixup", Variant::conv2_mixup},   {"conv1-mixup3", Variant::conv1_mixup3},
        {"conv2-mixup3", Variant::conv2_mixup3},
    };
    return t;
}

}  // namespace

const std::vector<std::string>& variant_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& [name, _] : variant_table()) v.push_back(name);
        return v;
    }();
    return names;
}

Variant variant_from_string(const std::string& name) {
    for (const auto& [n, v] : variant_table())
        if (n == name) return v;
    throw ValidationError("unknown model variant: " + name);
}

std::string variant_to_string(Variant v) {
    for (const auto& [n, vv] : variant_table())
        if (vv == v) return n;
    throw ValidationError("unknown model variant value");
}

std::optional<MixSpec> variant_mix_spec(Variant v, double alpha) {
    switch (v) {
        case Variant::original:
            return std::nullopt;
        case Variant::mixup:
            return MixSpec{0, 2, alpha};
        case Variant::mixup3:
            return MixSpec{0, 3, alpha};
        case Variant::conv1_mixup:
            return MixSpec{1, 2, alpha};
        case Variant::conv2_mixup:
            return MixSpec{2, 2, alpha};
        case Variant::conv1_mixup3:
            return MixSpec{1, 3, alpha};
        case Variant::conv2_mixup3:
            return MixSpec{2, 3, alpha};
    }
    throw ValidationError("unknown model variant value");
}

double default_weight_decay(Variant v) {
    switch (v) {
        case Variant::original:
            return 0.04;
        case Variant::mixup:
        case Variant::conv1_mixup:
        case Variant::conv2_mixup:
        case Variant::conv2_mixup3:
            return 0.02;
        case Variant::mixup3:
        case Variant::conv1_mixup3:
            return 0.01;
    }
    throw ValidationError("unknown model variant value");
}

void RunConfig::validate() const {
    if (!(alpha > 0.0)) throw ValidationError("config: alpha must be > 0");
    if (weight_decay && *weight_decay < 0.0)
        throw ValidationError("config: weight decay must be >= 0");
    if (epochs < 1) throw ValidationError("config: epochs must be >= 1");
    if (batch < 1) throw ValidationError("config: batch must be >= 1");
    if (data.empty()) throw ValidationError("config: missing data path");
    if (const auto spec = variant_mix_spec(variant, alpha)) spec->validate();
}

RunConfig parse_config(const std::vector<std::string>& args) {
    CLI::App app{"mixgrad train"};
    app.allow_extras(false);

    std::string variant = "original";
    double alpha = 1.0;
    double wd = 0.0;
    int epochs = 150;
    int batch = 64;
    std::uint64_t seed = 1;
    std::string data = "synthetic";
    std::uint64_t per_class = 500;
    std::string out_dir = "run-out";
    std::string config_path;

    auto* o_variant = app.add_option("--variant", variant)->check(CLI::IsMember(variant_names()));
    auto* o_alpha = app.add_option("--alpha", alpha);
    auto* o_wd = app.add_option("--wd", wd);
    auto* o_epochs = app.add_option("--epochs", epochs);
    auto* o_batch = app.add_option("--batch", batch);
    auto* o_seed = app.add_option("--seed", seed);
    auto* o_data = app.add_option("--data", data);
    auto* o_per_class = app.add_option("--per-class", per_class);
    auto* o_out = app.add_option("--out", out_dir);
    app.add_option("--config", config_path);

    std::vector<const char*> argv;
    argv.push_back("mixgrad");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }

    if (!config_path.empty()) {
        std::ifstream is(config_path);
        if (!is) throw IoError("cannot open config file: " + config_path);
        json j;
        try {
            is >> j;
        } catch (const json::exception& e) {
            throw FormatError("config file " + config_path + ": " + e.what());
        }
        for (const auto& [key, value] : j.items()) {
            try {
                if (key == "variant") {
                    if (!o_variant->count()) variant = value.get<std::string>();
                } else if (key == "alpha") {
                    if (!o_alpha->count()) alpha = value.get<double>();
                } else if (key == "wd") {
                    if (!o_wd->count()) {
                        wd = value.get<double>();
                        o_wd->add_result(std::to_string(wd));
                    }
                } else if (key == "epochs") {
                    if (!o_epochs->count()) epochs = value.get<int>();
                } else if (key == "batch") {
                    if (!o_batch->count()) batch = value.get<int>();
                } else if (key == "seed") {
                    if (!o_seed->count()) seed = value.get<std::uint64_t>();
                } else if (key == "data") {
                    if (!o_data->count()) data = value.get<std::string>();
                } else if (key == "per_class") {
                    if (!o_per_class->count()) per_class = value.get<std::uint64_t>();
                } else if (key == "out") {
                    if (!o_out->count()) out_dir = value.get<std::string>();
                } else {
                    throw ValidationError("config file " + config_path + ": unknown key '" + key +
                                          "'");
                }
            } catch (const json::exception& e) {
                throw FormatError("config file " + config_path + ", key '" + key +
                                  "': " + e.what());
            }
        }
    }

    RunConfig cfg;
    cfg.variant = variant_from_string(variant);
    cfg.alpha = alpha;
    if (o_wd->count()) cfg.weight_decay = wd;
    cfg.epochs = epochs;
    cfg.batch = batch;
    cfg.seed = seed;
    cfg.data = data;
    cfg.per_class = per_class;
    cfg.out_dir = out_dir;
    cfg.validate();
    return cfg;
}

double evaluate(const ModelParams& m, const Dataset& test) {
    if (test.size() == 0) throw ValidationError("evaluate: empty test set");
    constexpr std::size_t kChunk = 500;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < test.size(); start += kChunk) {
        const std::size_t count = std::min(kChunk, test.size() - start);
        Tensor chunk(count, 3, 32, 32);
        for (std::size_t i = 0; i < count; ++i)
            std::copy_n(test.images.sample(start + i), chunk.sample_size(), chunk.sample(i));
        const std::vector<int> pred = predict(m, chunk);
        for (std::size_t i = 0; i < count; ++i)
            if (pred[i] == test.labels[start + i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

SplitData load_splits(const RunConfig& cfg) {
    SplitData sd;
    if (cfg.data == "synthetic") {
        Rng train_rng(cfg.seed);
        Rng test_rng(cfg.seed + 1);
        const std::size_t per_class = cfg.per_class > 0 ? cfg.per_class : 200;
        sd.train = gen_synthetic(train_rng, 3, per_class);
        sd.test = gen_synthetic(test_rng, 3, 100);
        return sd;
    }
    const std::filesystem::path dir(cfg.data);
    std::vector<std::filesystem::path> train_files;
    for (int i = 1; i <= 5; ++i) train_files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    sd.train = load_cifar10_bin(train_files);
    sd.test = load_cifar10_bin({dir / "test_batch.bin"});
    if (cfg.per_class > 0) {
        Rng sub_rng(cfg.seed);
        sd.train = subsample_per_class(sd.train, cfg.per_class, sub_rng);
    }
    return sd;
}

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const std::size_t j = i + rng.next_below(n - i);
        std::swap(idx[i], idx[j]);
    }
    return idx;
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}

json config_json(const RunConfig& cfg) {
    return json{{"variant", variant_to_string(cfg.variant)},
                {"alpha", cfg.alpha},
                {"wd", cfg.resolved_weight_decay()},
                {"epochs", cfg.epochs},
                {"batch", cfg.batch},
                {"seed", cfg.seed},
                {"data", cfg.data},
                {"per_class", cfg.per_class},
                {"out", cfg.out_dir.string()}};
}

}  // namespace

TrainResult train_run(const RunConfig& cfg) {
    cfg.validate();
    SplitData sd = load_splits(cfg);
    const NormStats stats = compute_norm_stats(sd.train);
    sd.train = normalize(sd.train, stats);
    sd.test = normalize(sd.test, stats);

    std::filesystem::create_directories(cfg.out_dir);

    json run = config_json(cfg);
    run["norm_stats"] = {{"mean", {stats.mean[0], stats.mean[1], stats.mean[2]}},
                         {"std", {stats.stddev[0], stats.stddev[1], stats.stddev[2]}}};
    run["kernel_isa"] = kernels::isa_name(kernels::active_isa());
    run["train_samples"] = sd.train.size();
    run["test_samples"] = sd.test.size();
    {
        std::ofstream os(cfg.out_dir / "run.json");
        if (!os) throw IoError("cannot write " + (cfg.out_dir / "run.json").string());
        os << run.dump(2) << "\n";
    }

    TrainResult result;
    result.metrics_csv = cfg.out_dir / "metrics.csv";
    result.checkpoint = cfg.out_dir / "model.ckpt";

    std::ofstream csv(result.metrics_csv);
    if (!csv) throw IoError("cannot write " + result.metrics_csv.string());
    csv << "epoch,loss,test_acc,lr,secs\n";

    Rng rng(cfg.seed);
    ModelParams model = init_model(rng);

    const auto spec = variant_mix_spec(cfg.variant, cfg.alpha);
    const std::size_t k = spec ? static_cast<std::size_t>(spec->arity) : 1;
    const double wd = cfg.resolved_weight_decay();
    const std::size_t n_train = sd.train.size();
    const std::size_t batch = static_cast<std::size_t>(cfg.batch);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        const double lr = lr_at_epoch(epoch);

        // k independent shuffles zipped together: every sample appears once
        // per branch per epoch.
        std::vector<std::vector<std::size_t>> orders(k);
        for (auto& o : orders) o = shuffled_indices(n_train, rng);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n_train; start += batch) {
            const std::size_t count = std::min(batch, n_train - start);
            std::vector<Tensor> xs(k), ts(k);
            for (std::size_t i = 0; i < k; ++i) {
                std::vector<std::size_t> idx(orders[i].begin() + static_cast<std::ptrdiff_t>(start),
                                             orders[i].begin() +
                                                 static_cast<std::ptrdiff_t>(start + count));
                LabeledBatch b = gather_batch(sd.train, idx);
                xs[i] = std::move(b.images);
                ts[i] = std::move(b.targets);
            }
            double loss;
            if (spec)
                loss = train_step_mixed(model, xs, ts, *spec, rng, lr, wd);
            else
                loss = train_step_plain(model, xs[0], ts[0], lr, wd);
            if (!std::isfinite(loss))
                throw ValidationError("training diverged: non-finite loss at epoch " +
                                      std::to_string(epoch) + ", step offset " +
                                      std::to_string(start));
            loss_sum += loss * static_cast<double>(count);
        }
        const double mean_loss = loss_sum / static_cast<double>(n_train);
        const double acc = evaluate(model, sd.test);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
        csv << epoch << "," << fmt_double(mean_loss) << "," << fmt_double(acc) << ","
            << fmt_double(lr) << "," << fmt_double(secs) << "\n";
        csv.flush();
        result.final_train_loss = mean_loss;
        result.final_test_accuracy = acc;
    }

    save_checkpoint(model, result.checkpoint);
    result.model = std::move(model);
    return result;
}

unsigned char quantize_pgm(double v, double min_v, double max_v) {
    if (!(max_v > min_v)) return 0;
    const double q = std::floor(255.0 * (v - min_v) / (max_v - min_v));
    return static_cast<unsigned char>(std::clamp(q, 0.0, 255.0));
}

void export_feature_maps(const ModelParams& m, const Tensor& images,
                         const std::filesystem::path& outdir) {
    std::filesystem::create_directories(outdir);
    const Tensor feats = stem_forward(m, images, 1);
    const std::size_t plane = feats.shape.h * feats.shape.w;
    for (std::size_t i = 0; i < feats.shape.n; ++i) {
        for (std::size_t c = 0; c < feats.shape.c; ++c) {
            const double* ch = feats.sample(i) + c * plane;
            const auto [mn_it, mx_it] = std::minmax_element(ch, ch + plane);
            const double mn = *mn_it, mx = *mx_it;
            const std::string base =
                "img" + std::to_string(i) + "_ch" + std::to_string(c);

            {
                std::ofstream raw(outdir / (base + ".raw"), std::ios::binary);
                if (!raw) throw IoError("cannot write " + (outdir / (base + ".raw")).string());
                raw.write(reinterpret_cast<const char*>(ch),
                          static_cast<std::streamsize>(plane * sizeof(double)));
            }
            {
                std::ofstream hdr(outdir / (base + ".txt"));
                if (!hdr) throw IoError("cannot write " + (outdir / (base + ".txt")).string());
                hdr << "shape " << feats.shape.h << " " << feats.shape.w << "\n"
                    << "min " << fmt_double(mn) << "\n"
                    << "max " << fmt_double(mx) << "\n";
            }
            {
                std::ofstream pgm(outdir / (base + ".pgm"), std::ios::binary);
                if (!pgm) throw IoError("cannot write " + (outdir / (base + ".pgm")).string());
                pgm << "P5\n" << feats.shape.w << " " << feats.shape.h << "\n255\n";
                for (std::size_t p = 0; p < plane; ++p) {
                    const unsigned char b = quantize_pgm(ch[p], mn, mx);
                    pgm.write(reinterpret_cast<const char*>(&b), 1);
                }
            }
        }
    }
}

NormStats norm_stats_from_run_json(const std::filesystem::path& run_json) {
    std::ifstream is(run_json);
    if (!is) throw IoError("cannot open run manifest: " + run_json.string());
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw FormatError("run manifest " + run_json.string() + ": " + e.what());
    }
    if (!j.contains("norm_stats"))
        throw FormatError("run manifest " + run_json.string() + ": missing norm_stats");
    NormStats st;
    for (int c = 0; c < 3; ++c) {
        st.mean[c] = j["norm_stats"]["mean"][c].get<double>();
        st.stddev[c] = j["norm_stats"]["std"][c].get<double>();
    }
    return st;
}

}  // namespace mixgrad
