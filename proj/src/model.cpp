#include "mixgrad/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mixgrad/kernels.hpp"

namespace mixgrad {

namespace {

constexpr std::size_t kClasses = 10;
constexpr std::size_t kFlat = 64 * 8 * 8;

void fill_he_normal(Rng& rng, std::vector<double>& w, std::size_t fan_in) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : w) v = std_dev * rng.normal01();
}

void check_batch(const Tensor& x) {
    if (x.shape.c != 3 || x.shape.h != 32 || x.shape.w != 32)
        throw DimensionError("model: expected input (n,3,32,32), got " + x.shape.str());
}

// One nonzero weight equal to 1 means the mixture is that branch verbatim;
// honoring that exactly keeps the degenerate mix bitwise equal to a plain
// step.
int sole_unit_weight(const MixDraw& d) {
    int unit = -1;
    for (std::size_t i = 0; i < d.weights.size(); ++i) {
        if (d.weights[i] == 1.0 && unit < 0)
            unit = static_cast<int>(i);
        else if (d.weights[i] != 0.0)
            return -1;
    }
    return unit;
}

}  // namespace

ModelParams make_reference_model() {
    ModelParams m;
    m.conv1.weights = Tensor(32, 3, 3, 3);
    m.conv1.bias.assign(32, 0.0);
    m.conv1.pad = 1;
    m.conv1.stride = 1;
    m.conv2.weights = Tensor(64, 32, 3, 3);
    m.conv2.bias.assign(64, 0.0);
    m.conv2.pad = 1;
    m.conv2.stride = 1;
    m.fc1 = LinearParams(512, kFlat);
    m.fc2 = LinearParams(kClasses, 512);
    return m;
}

ModelGrads zero_grads(const ModelParams& m) {
    ModelGrads g;
    g.dconv1_w = Tensor(m.conv1.weights.shape);
    g.dconv1_b.assign(m.conv1.bias.size(), 0.0);
    g.dconv2_w = Tensor(m.conv2.weights.shape);
    g.dconv2_b.assign(m.conv2.bias.size(), 0.0);
    g.dfc1_w.assign(m.fc1.weights.size(), 0.0);
    g.dfc1_b.assign(m.fc1.bias.size(), 0.0);
    g.dfc2_w.assign(m.fc2.weights.size(), 0.0);
    g.dfc2_b.assign(m.fc2.bias.size(), 0.0);
    return g;
}

ModelParams init_model(Rng& rng) {
    ModelParams m = make_reference_model();
    fill_he_normal(rng, m.conv1.weights.data, 3 * 3 * 3);
    fill_he_normal(rng, m.conv2.weights.data, 32 * 3 * 3);
    fill_he_normal(rng, m.fc1.weights, m.fc1.in_features);
    fill_he_normal(rng, m.fc2.weights, m.fc2.in_features);
    return m;
}

Tensor stem_forward(const ModelParams& m, const Tensor& x, int split_layer, StemCache* cache) {
    check_batch(x);
    if (split_layer < 0 || split_layer > 2)
        throw ValidationError("stem_forward: split_layer must be in {0,1,2}");
    if (cache) {
        *cache = StemCache{};
        cache->split_layer = split_layer;
    }
    if (split_layer == 0) return x;

    if (cache) cache->x = x;
    Tensor z1 = conv2d_forward(x, m.conv1);
    Tensor a1 = relu_forward(z1);
    if (cache) cache->conv1_pre = std::move(z1);
    if (split_layer == 1) return a1;

    PoolResult p1 = maxpool2_forward(a1);
    Tensor z2 = conv2d_forward(p1.out, m.conv2);
    Tensor a2 = relu_forward(z2);
    if (cache) {
        cache->pool1_out = p1.out;
        cache->pool1 = std::move(p1);
        cache->conv2_pre = std::move(z2);
    }
    return a2;
}

Tensor trunk_forward(const ModelParams& m, const Tensor& f, int split_layer, TrunkCache* cache) {
    if (split_layer < 0 || split_layer > 2)
        throw ValidationError("trunk_forward: split_layer must be in {0,1,2}");
    if (cache) {
        *cache = TrunkCache{};
        cache->split_layer = split_layer;
    }

    Tensor cur = f;
    if (split_layer == 0) {
        check_batch(cur);
        if (cache) cache->x = cur;
        Tensor z1 = conv2d_forward(cur, m.conv1);
        cur = relu_forward(z1);
        if (cache) cache->conv1_pre = std::move(z1);
    }
    if (split_layer <= 1) {
        if (cur.shape.c != 32 || cur.shape.h != 32 || cur.shape.w != 32)
            throw DimensionError("trunk_forward: expected feature (n,32,32,32), got " +
                                 cur.shape.str());
        PoolResult p1 = maxpool2_forward(cur);
        Tensor z2 = conv2d_forward(p1.out, m.conv2);
        cur = relu_forward(z2);
        if (cache) {
            cache->pool1_out = p1.out;
            cache->pool1 = std::move(p1);
            cache->conv2_pre = std::move(z2);
        }
    }
    if (cur.shape.c != 64 || cur.shape.h != 16 || cur.shape.w != 16)
        throw DimensionError("trunk_forward: expected feature (n,64,16,16), got " +
                             cur.shape.str());
    PoolResult p2 = maxpool2_forward(cur);
    Tensor flat = p2.out.reshaped({p2.out.shape.n, kFlat, 1, 1});
    Tensor z3 = linear_forward(flat, m.fc1);
    Tensor a3 = relu_forward(z3);
    Tensor logits = linear_forward(a3, m.fc2);
    if (cache) {
        cache->pool2 = std::move(p2);
        cache->flat = std::move(flat);
        cache->fc1_pre = std::move(z3);
        cache->fc1_act = std::move(a3);
    }
    return logits;
}

Tensor trunk_backward(const ModelParams& m, const TrunkCache& cache, const Tensor& dlogits,
                      ModelGrads& g) {
    LinearGrads lg2 = linear_backward(cache.fc1_act, m.fc2, dlogits);
    kernels::axpy(1.0, lg2.dweights.data(), g.dfc2_w.data(), g.dfc2_w.size());
    kernels::axpy(1.0, lg2.dbias.data(), g.dfc2_b.data(), g.dfc2_b.size());

    Tensor dz3 = relu_backward(cache.fc1_pre, lg2.dinput);
    LinearGrads lg1 = linear_backward(cache.flat, m.fc1, dz3);
    kernels::axpy(1.0, lg1.dweights.data(), g.dfc1_w.data(), g.dfc1_w.size());
    kernels::axpy(1.0, lg1.dbias.data(), g.dfc1_b.data(), g.dfc1_b.size());

    Tensor dpool2 = lg1.dinput.reshaped(cache.pool2.out.shape);
    Tensor dcur = maxpool2_backward(cache.pool2.argmax, dpool2, cache.pool2.input_shape);

    if (cache.split_layer <= 1) {
        Tensor dz2 = relu_backward(cache.conv2_pre, dcur);
        ConvGrads cg2 = conv2d_backward(cache.pool1_out, m.conv2, dz2);
        kernels::axpy(1.0, cg2.dweights.data.data(), g.dconv2_w.data.data(), g.dconv2_w.size());
        kernels::axpy(1.0, cg2.dbias.data(), g.dconv2_b.data(), g.dconv2_b.size());
        dcur = maxpool2_backward(cache.pool1.argmax, cg2.dinput, cache.pool1.input_shape);
    }
    if (cache.split_layer == 0) {
        Tensor dz1 = relu_backward(cache.conv1_pre, dcur);
        ConvGrads cg1 = conv2d_backward(cache.x, m.conv1, dz1);
        kernels::axpy(1.0, cg1.dweights.data.data(), g.dconv1_w.data.data(), g.dconv1_w.size());
        kernels::axpy(1.0, cg1.dbias.data(), g.dconv1_b.data(), g.dconv1_b.size());
        dcur = std::move(cg1.dinput);
    }
    return dcur;
}

void stem_backward(const ModelParams& m, const StemCache& cache, const Tensor& dfeature,
                   ModelGrads& g) {
    if (cache.split_layer == 0) return;  // identity stem, no parameters

    Tensor dcur = dfeature;
    if (cache.split_layer == 2) {
        Tensor dz2 = relu_backward(cache.conv2_pre, dcur);
        ConvGrads cg2 = conv2d_backward(cache.pool1_out, m.conv2, dz2);
        kernels::axpy(1.0, cg2.dweights.data.data(), g.dconv2_w.data.data(), g.dconv2_w.size());
        kernels::axpy(1.0, cg2.dbias.data(), g.dconv2_b.data(), g.dconv2_b.size());
        dcur = maxpool2_backward(cache.pool1.argmax, cg2.dinput, cache.pool1.input_shape);
    }
    Tensor dz1 = relu_backward(cache.conv1_pre, dcur);
    ConvGrads cg1 = conv2d_backward(cache.x, m.conv1, dz1);
    kernels::axpy(1.0, cg1.dweights.data.data(), g.dconv1_w.data.data(), g.dconv1_w.size());
    kernels::axpy(1.0, cg1.dbias.data(), g.dconv1_b.data(), g.dconv1_b.size());
}

std::vector<int> predict(const ModelParams& m, const Tensor& x) {
    Tensor logits = trunk_forward(m, x, 0);
    std::vector<int> classes(x.shape.n);
    for (std::size_t n = 0; n < x.shape.n; ++n) {
        const double* z = logits.sample(n);
        int best = 0;
        for (std::size_t j = 1; j < kClasses; ++j)
            if (z[j] > z[best]) best = static_cast<int>(j);
        classes[n] = best;
    }
    return classes;
}

namespace {

struct MixedBatch {
    Tensor features;
    Tensor targets;
};

void validate_mixed_args(std::span<const Tensor> xs, std::span<const Tensor> ts,
                         std::span<const MixDraw> draws) {
    if (xs.empty() || xs.size() != ts.size())
        throw ValidationError("mixed step: need k image batches with k label batches");
    const std::size_t n = xs[0].shape.n;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i].shape.n != n || ts[i].shape.n != n)
            throw ValidationError("mixed step: branch batches differ in size");
        if (ts[i].sample_size() != kClasses)
            throw DimensionError("mixed step: targets must have 10 classes, got " +
                                 std::to_string(ts[i].sample_size()));
    }
    if (draws.size() != n) throw ValidationError("mixed step: need one MixDraw per sample");
    for (const auto& d : draws)
        if (d.arity() != xs.size())
            throw ValidationError("mixed step: draw arity != branch count");
}

// Per-sample convex combination of the branch features and targets.
MixedBatch mix_batches(std::span<const Tensor> feats, std::span<const Tensor> ts,
                       std::span<const MixDraw> draws) {
    const std::size_t k = feats.size();
    const std::size_t n = feats[0].shape.n;
    MixedBatch out;
    out.features = Tensor(feats[0].shape);
    out.targets = Tensor(ts[0].shape);
    const std::size_t fsz = out.features.sample_size();
    for (std::size_t j = 0; j < n; ++j) {
        const MixDraw& d = draws[j];
        double* fj = out.features.sample(j);
        double* tj = out.targets.sample(j);
        const int unit = sole_unit_weight(d);
        if (unit >= 0) {
            std::copy_n(feats[unit].sample(j), fsz, fj);
            std::copy_n(ts[unit].sample(j), kClasses, tj);
        } else if (k == 2) {
            kernels::mix2(d.weights[0], feats[0].sample(j), d.weights[1], feats[1].sample(j), fj,
                          fsz);
            kernels::mix2(d.weights[0], ts[0].sample(j), d.weights[1], ts[1].sample(j), tj,
                          kClasses);
        } else {
            for (std::size_t i = 0; i < k; ++i) {
                if (d.weights[i] == 0.0) continue;
                kernels::axpy(d.weights[i], feats[i].sample(j), fj, fsz);
                kernels::axpy(d.weights[i], ts[i].sample(j), tj, kClasses);
            }
        }
    }
    return out;
}

}  // namespace

double mixed_loss_and_grads(const ModelParams& m, std::span<const Tensor> xs,
                            std::span<const Tensor> ts, int split_layer,
                            std::span<const MixDraw> draws, ModelGrads& g) {
    validate_mixed_args(xs, ts, draws);
    const std::size_t k = xs.size();
    const std::size_t n = xs[0].shape.n;

    std::vector<StemCache> caches(k);
    std::vector<Tensor> feats(k);
    for (std::size_t i = 0; i < k; ++i)
        feats[i] = stem_forward(m, xs[i], split_layer, &caches[i]);

    MixedBatch mixed = mix_batches(feats, ts, draws);

    TrunkCache tc;
    Tensor logits = trunk_forward(m, mixed.features, split_layer, &tc);
    XentResult xr = softmax_xent_soft(logits, mixed.targets);

    Tensor dfeature = trunk_backward(m, tc, xr.dlogits, g);

    // Branch i receives u_i times the gradient at the mix point; stem
    // parameter gradients from all branches accumulate into the shared set.
    if (split_layer > 0) {
        const std::size_t fsz = dfeature.sample_size();
        Tensor dbranch(dfeature.shape);
        for (std::size_t i = 0; i < k; ++i) {
            bool all_zero = true;
            bool all_unit = true;
            for (std::size_t j = 0; j < n; ++j) {
                if (draws[j].weights[i] != 0.0) all_zero = false;
                if (draws[j].weights[i] != 1.0) all_unit = false;
            }
            if (all_zero) continue;
            if (all_unit) {
                stem_backward(m, caches[i], dfeature, g);
                continue;
            }
            for (std::size_t j = 0; j < n; ++j) {
                double* dst = dbranch.sample(j);
                const double u = draws[j].weights[i];
                if (u == 0.0) {
                    std::fill_n(dst, fsz, 0.0);
                } else {
                    const double* src = dfeature.sample(j);
                    for (std::size_t e = 0; e < fsz; ++e) dst[e] = u * src[e];
                }
            }
            stem_backward(m, caches[i], dbranch, g);
        }
    }
    return xr.loss;
}

double mixed_loss(const ModelParams& m, std::span<const Tensor> xs, std::span<const Tensor> ts,
                  int split_layer, std::span<const MixDraw> draws) {
    validate_mixed_args(xs, ts, draws);
    const std::size_t k = xs.size();
    std::vector<Tensor> feats(k);
    for (std::size_t i = 0; i < k; ++i) feats[i] = stem_forward(m, xs[i], split_layer);
    MixedBatch mixed = mix_batches(feats, ts, draws);
    Tensor logits = trunk_forward(m, mixed.features, split_layer);
    return softmax_xent_soft(logits, mixed.targets).loss;
}

void sgd_step(ModelParams& m, const ModelGrads& g, double lr, double weight_decay) {
    sgd_update_array(m.conv1.weights, g.dconv1_w, lr, weight_decay);
    sgd_update_array(m.conv1.bias, g.dconv1_b, lr, 0.0);
    sgd_update_array(m.conv2.weights, g.dconv2_w, lr, weight_decay);
    sgd_update_array(m.conv2.bias, g.dconv2_b, lr, 0.0);
    sgd_update_array(m.fc1.weights, g.dfc1_w, lr, weight_decay);
    sgd_update_array(m.fc1.bias, g.dfc1_b, lr, 0.0);
    sgd_update_array(m.fc2.weights, g.dfc2_w, lr, weight_decay);
    sgd_update_array(m.fc2.bias, g.dfc2_b, lr, 0.0);
}

double train_step_mixed_with_draws(ModelParams& m, std::span<const Tensor> xs,
                                   std::span<const Tensor> ts, int split_layer,
                                   std::span<const MixDraw> draws, double lr,
                                   double weight_decay) {
    ModelGrads g = zero_grads(m);
    const double loss = mixed_loss_and_grads(m, xs, ts, split_layer, draws, g);
    sgd_step(m, g, lr, weight_decay);
    return loss;
}

double train_step_mixed(ModelParams& m, std::span<const Tensor> xs, std::span<const Tensor> ts,
                        const MixSpec& spec, Rng& rng, double lr, double weight_decay) {
    spec.validate();
    if (xs.size() != static_cast<std::size_t>(spec.arity))
        throw ValidationError("train_step_mixed: branch count != spec arity");
    const std::size_t n = xs.empty() ? 0 : xs[0].shape.n;
    std::vector<MixDraw> draws(n);
    for (auto& d : draws) {
        if (spec.arity == 2) {
            const double lambda = beta_symmetric(rng, spec.alpha);
            d.weights = {lambda, 1.0 - lambda};
        } else {
            d = dirichlet_symmetric(rng, spec.alpha, spec.arity);
        }
    }
    return train_step_mixed_with_draws(m, xs, ts, spec.split_layer, draws, lr, weight_decay);
}

double train_step_plain(ModelParams& m, const Tensor& x, const Tensor& t, double lr,
                        double weight_decay) {
    std::vector<MixDraw> draws(x.shape.n, MixDraw{{1.0}});
    const Tensor xs[1] = {x};
    const Tensor ts[1] = {t};
    return train_step_mixed_with_draws(m, xs, ts, 0, draws, lr, weight_decay);
}

namespace {

constexpr char kMagic[8] = {'M', 'I', 'X', 'G', 'R', 'A', 'D', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& is, const std::filesystem::path& path) {
    std::uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(v)))
        throw FormatError("checkpoint " + path.string() + ": truncated");
    return v;
}

void write_array(std::ostream& os, const std::string& name, std::span<const std::uint64_t> dims,
                 std::span<const double> data) {
    write_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, dims.size());
    for (auto d : dims) write_u64(os, d);
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(double)));
}

struct RawArray {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<double> data;
};

RawArray read_array(std::istream& is, const std::filesystem::path& path) {
    RawArray a;
    const std::uint64_t name_len = read_u64(is, path);
    if (name_len > 4096) throw FormatError("checkpoint " + path.string() + ": bad name length");
    a.name.resize(name_len);
    if (!is.read(a.name.data(), static_cast<std::streamsize>(name_len)))
        throw FormatError("checkpoint " + path.string() + ": truncated name");
    const std::uint64_t rank = read_u64(is, path);
    if (rank == 0 || rank > 4)
        throw FormatError("checkpoint " + path.string() + ": bad rank for " + a.name);
    std::uint64_t count = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
        a.dims.push_back(read_u64(is, path));
        count *= a.dims.back();
    }
    if (count > (std::uint64_t{1} << 28))
        throw FormatError("checkpoint " + path.string() + ": implausible array size for " +
                          a.name);
    a.data.resize(count);
    if (!is.read(reinterpret_cast<char*>(a.data.data()),
                 static_cast<std::streamsize>(count * sizeof(double))))
        throw FormatError("checkpoint " + path.string() + ": truncated data for " + a.name);
    return a;
}

void expect_dims(const RawArray& a, std::initializer_list<std::uint64_t> dims,
                 const std::filesystem::path& path) {
    if (!std::equal(a.dims.begin(), a.dims.end(), dims.begin(), dims.end()))
        throw FormatError("checkpoint " + path.string() + ": array " + a.name +
                          " has unexpected shape");
}

}  // namespace

void save_checkpoint(const ModelParams& m, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
    os.write(kMagic, sizeof(kMagic));

    const auto conv_dims = [](const ConvParams& c) {
        return std::vector<std::uint64_t>{c.weights.shape.n, c.weights.shape.c, c.weights.shape.h,
                                          c.weights.shape.w};
    };
    write_array(os, "conv1.weight", conv_dims(m.conv1), m.conv1.weights.data);
    write_array(os, "conv1.bias", std::vector<std::uint64_t>{m.conv1.bias.size()}, m.conv1.bias);
    write_array(os, "conv2.weight", conv_dims(m.conv2), m.conv2.weights.data);
    write_array(os, "conv2.bias", std::vector<std::uint64_t>{m.conv2.bias.size()}, m.conv2.bias);
    write_array(os, "fc1.weight",
                std::vector<std::uint64_t>{m.fc1.out_features, m.fc1.in_features}, m.fc1.weights);
    write_array(os, "fc1.bias", std::vector<std::uint64_t>{m.fc1.bias.size()}, m.fc1.bias);
    write_array(os, "fc2.weight",
                std::vector<std::uint64_t>{m.fc2.out_features, m.fc2.in_features}, m.fc2.weights);
    write_array(os, "fc2.bias", std::vector<std::uint64_t>{m.fc2.bias.size()}, m.fc2.bias);
    if (!os) throw IoError("write failed for checkpoint: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path.string());
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw FormatError("checkpoint " + path.string() + ": bad magic");

    ModelParams m = make_reference_model();
    for (int i = 0; i < 8; ++i) {
        RawArray a = read_array(is, path);
        if (a.name == "conv1.weight") {
            expect_dims(a, {32, 3, 3, 3}, path);
            m.conv1.weights.data = std::move(a.data);
        } else if (a.name == "conv1.bias") {
            expect_dims(a, {32}, path);
            m.conv1.bias = std::move(a.data);
        } else if (a.name == "conv2.weight") {
            expect_dims(a, {64, 32, 3, 3}, path);
            m.conv2.weights.data = std::move(a.data);
        } else if (a.name == "conv2.bias") {
            expect_dims(a, {64}, path);
            m.conv2.bias = std::move(a.data);
        } else if (a.name == "fc1.weight") {
            expect_dims(a, {512, kFlat}, path);
            m.fc1.weights = std::move(a.data);
        } else if (a.name == "fc1.bias") {
            expect_dims(a, {512}, path);
            m.fc1.bias = std::move(a.data);
        } else if (a.name == "fc2.weight") {
            expect_dims(a, {kClasses, 512}, path);
            m.fc2.weights = std::move(a.data);
        } else if (a.name == "fc2.bias") {
            expect_dims(a, {kClasses}, path);
            m.fc2.bias = std::move(a.data);
        } else {
            throw FormatError("checkpoint " + path.string() + ": unknown array " + a.name);
        }
    }
    return m;
}

}  // namespace mixgrad
