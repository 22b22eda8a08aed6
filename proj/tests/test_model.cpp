#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "mixgrad/data.hpp"
#include "mixgrad/model.hpp"
#include "testutil.hpp"

using namespace mixgrad;
using testutil::rel_err;

namespace {

bool params_equal(const ModelParams& a, const ModelParams& b) {
    return a.conv1.weights.data == b.conv1.weights.data && a.conv1.bias == b.conv1.bias &&
           a.conv2.weights.data == b.conv2.weights.data && a.conv2.bias == b.conv2.bias &&
           a.fc1.weights == b.fc1.weights && a.fc1.bias == b.fc1.bias &&
           a.fc2.weights == b.fc2.weights && a.fc2.bias == b.fc2.bias;
}

Tensor random_images(Rng& rng, std::size_t n, double scale = 1.0) {
    return testutil::random_tensor(rng, n, 3, 32, 32, scale);
}

Tensor one_hot_batch(const std::vector<int>& labels) {
    Tensor t(labels.size(), 10, 1, 1);
    for (std::size_t i = 0; i < labels.size(); ++i)
        t.at(i, static_cast<std::size_t>(labels[i]), 0, 0) = 1.0;
    return t;
}

// Monolithic composition of the tensor-core ops, ignoring the stem/trunk
// split entirely.
Tensor monolithic_forward(const ModelParams& m, const Tensor& x) {
    Tensor a1 = relu_forward(conv2d_forward(x, m.conv1));
    PoolResult p1 = maxpool2_forward(a1);
    Tensor a2 = relu_forward(conv2d_forward(p1.out, m.conv2));
    PoolResult p2 = maxpool2_forward(a2);
    Tensor flat = p2.out.reshaped({p2.out.shape.n, 64 * 8 * 8, 1, 1});
    Tensor a3 = relu_forward(linear_forward(flat, m.fc1));
    return linear_forward(a3, m.fc2);
}

}  // namespace

TEST_CASE("init_model is deterministic with zero biases and He-scaled weights") {
    Rng r1(77), r2(77);
    const ModelParams a = init_model(r1);
    const ModelParams b = init_model(r2);
    CHECK(params_equal(a, b));

    for (double v : a.conv1.bias) CHECK(v == 0.0);
    for (double v : a.fc1.bias) CHECK(v == 0.0);

    double s = 0.0, s2 = 0.0;
    for (double v : a.conv1.weights.data) {
        s += v;
        s2 += v * v;
    }
    const double n = static_cast<double>(a.conv1.weights.size());
    const double std_emp = std::sqrt(s2 / n - (s / n) * (s / n));
    const double std_expect = std::sqrt(2.0 / 27.0);
    CHECK(std::abs(std_emp - std_expect) < 0.1 * std_expect);
}

TEST_CASE("stem L=0 is the identity; zero conv1 gives zero features") {
    Rng rng(1);
    const ModelParams m = init_model(rng);
    const Tensor x = random_images(rng, 2);
    const Tensor f0 = stem_forward(m, x, 0);
    CHECK(f0.data == x.data);

    ModelParams z = make_reference_model();
    const Tensor f1 = stem_forward(z, x, 1);
    for (double v : f1.data) CHECK(v == 0.0);
}

TEST_CASE("stem L=1 matches composing the layer ops directly") {
    Rng rng(2);
    const ModelParams m = init_model(rng);
    const Tensor x = random_images(rng, 2);
    const Tensor f = stem_forward(m, x, 1);
    const Tensor o = relu_forward(conv2d_forward(x, m.conv1));
    CHECK(f.data == o.data);
    CHECK(f.shape == Shape4{2, 32, 32, 32});
}

TEST_CASE("split/fuse identity: trunk(stem(x, L), L) is bitwise the fused net") {
    Rng rng(3);
    const ModelParams m = init_model(rng);
    const Tensor x = random_images(rng, 4);
    const Tensor fused = trunk_forward(m, x, 0);
    const Tensor mono = monolithic_forward(m, x);
    CHECK(fused.data == mono.data);
    for (int L = 0; L <= 2; ++L) {
        const Tensor f = stem_forward(m, x, L);
        const Tensor logits = trunk_forward(m, f, L);
        CHECK(logits.data == fused.data);
    }
}

TEST_CASE("trunk with zero fc2 yields zero logits") {
    Rng rng(4);
    ModelParams m = init_model(rng);
    std::fill(m.fc2.weights.begin(), m.fc2.weights.end(), 0.0);
    std::fill(m.fc2.bias.begin(), m.fc2.bias.end(), 0.0);
    const Tensor x = random_images(rng, 1);
    const Tensor f = stem_forward(m, x, 2);
    const Tensor logits = trunk_forward(m, f, 2);
    for (double v : logits.data) CHECK(v == 0.0);
}

TEST_CASE("predict ties break to the lowest class index") {
    ModelParams m = make_reference_model();
    // zero weights force logits == fc2 bias; classes 2 and 7 tie on top
    m.fc2.bias[2] = 5.0;
    m.fc2.bias[7] = 5.0;
    Rng rng(5);
    const Tensor x = random_images(rng, 3);
    const auto classes = predict(m, x);
    for (int c : classes) CHECK(c == 2);
}

TEST_CASE("predict agrees with argmax over trunk(stem(x,L)) at every L") {
    Rng rng(6);
    const ModelParams m = init_model(rng);
    const Tensor x = random_images(rng, 4);
    const auto classes = predict(m, x);
    for (int L = 0; L <= 2; ++L) {
        const Tensor logits = trunk_forward(m, stem_forward(m, x, L), L);
        for (std::size_t n = 0; n < 4; ++n) {
            int best = 0;
            for (int j = 1; j < 10; ++j)
                if (logits.sample(n)[j] > logits.sample(n)[best]) best = j;
            CHECK(best == classes[n]);
        }
    }
}

TEST_CASE("plain step equals a mixed step with lambda forced to 1, bitwise") {
    for (int L = 0; L <= 2; ++L) {
        Rng rng(7);
        ModelParams plain_model = init_model(rng);
        ModelParams mixed_model = plain_model;

        Rng data_rng(8);
        const Tensor x1 = random_images(data_rng, 4, 0.5);
        const Tensor x2 = random_images(data_rng, 4, 0.5);
        const Tensor t1 = one_hot_batch({0, 3, 7, 9});
        const Tensor t2 = one_hot_batch({1, 1, 2, 5});

        const double plain_loss = train_step_plain(plain_model, x1, t1, 0.01, 0.02);

        const std::vector<MixDraw> draws(4, MixDraw{{1.0, 0.0}});
        const Tensor xs[2] = {x1, x2};
        const Tensor ts[2] = {t1, t2};
        const double mixed_loss =
            train_step_mixed_with_draws(mixed_model, xs, ts, L, draws, 0.01, 0.02);

        CHECK(plain_loss == mixed_loss);
        CHECK(params_equal(plain_model, mixed_model));
    }
}

TEST_CASE("L=0 mixed step is bitwise classic input mixup") {
    Rng model_rng(9);
    ModelParams split_model = init_model(model_rng);
    ModelParams oracle_model = split_model;

    Rng split_rng(100), oracle_rng(100);
    Rng data_rng(10);

    for (int step = 0; step < 5; ++step) {
        const Tensor x1 = random_images(data_rng, 3, 0.5);
        const Tensor x2 = random_images(data_rng, 3, 0.5);
        const Tensor t1 = one_hot_batch({0, 4, 9});
        const Tensor t2 = one_hot_batch({2, 2, 8});

        const Tensor xs[2] = {x1, x2};
        const Tensor ts[2] = {t1, t2};
        const MixSpec spec{0, 2, 1.0};
        const double split_loss =
            train_step_mixed(split_model, xs, ts, spec, split_rng, 0.01, 0.02);

        // independent classic input mixup: mix images and teachers first,
        // then run one ordinary supervised step
        std::vector<MixDraw> draws(3);
        for (auto& d : draws) {
            const double lam = beta_symmetric(oracle_rng, 1.0);
            d.weights = {lam, 1.0 - lam};
        }
        Tensor xm(x1.shape), tm(t1.shape);
        for (std::size_t j = 0; j < 3; ++j) {
            Tensor a(1, 3, 32, 32), b(1, 3, 32, 32);
            std::copy_n(x1.sample(j), a.size(), a.data.begin());
            std::copy_n(x2.sample(j), b.size(), b.data.begin());
            const Tensor mixed = mixk(std::vector<Tensor>{a, b}, draws[j]);
            std::copy_n(mixed.data.begin(), mixed.size(), xm.sample(j));
            const std::vector<std::vector<double>> rows = {
                {t1.sample(j), t1.sample(j) + 10}, {t2.sample(j), t2.sample(j) + 10}};
            const auto trow = mix_labels(rows, draws[j]);
            std::copy_n(trow.begin(), 10, tm.sample(j));
        }
        const double oracle_loss = train_step_plain(oracle_model, xm, tm, 0.01, 0.02);

        CHECK(split_loss == oracle_loss);
        CHECK(params_equal(split_model, oracle_model));
    }
}

TEST_CASE("end-to-end mixed step matches finite differences per parameter group") {
    Rng rng(11);
    ModelParams m = init_model(rng);
    Rng data_rng(12);
    const Tensor x1 = random_images(data_rng, 1, 0.5);
    const Tensor x2 = random_images(data_rng, 1, 0.5);
    const Tensor t1 = one_hot_batch({3});
    const Tensor t2 = one_hot_batch({8});
    const std::vector<Tensor> xs = {x1, x2};
    const std::vector<Tensor> ts = {t1, t2};
    const std::vector<MixDraw> draws = {MixDraw{{0.35, 0.65}}};
    const int L = 1;

    ModelGrads g = zero_grads(m);
    mixed_loss_and_grads(m, xs, ts, L, draws, g);
    const auto loss_fn = [&] { return mixed_loss(m, xs, ts, L, draws); };

    Rng pick(13);
    const auto check_group = [&](std::vector<double>& params, const std::vector<double>& grad) {
        const auto entries = testutil::sampled_entries(pick, params.size(), 8);
        CHECK(testutil::fd_check(params, loss_fn, grad, entries) < 1e-6);
    };
    check_group(m.conv1.weights.data, g.dconv1_w.data);
    check_group(m.conv1.bias, g.dconv1_b);
    check_group(m.conv2.weights.data, g.dconv2_w.data);
    check_group(m.conv2.bias, g.dconv2_b);
    check_group(m.fc1.weights, g.dfc1_w);
    check_group(m.fc1.bias, g.dfc1_b);
    check_group(m.fc2.weights, g.dfc2_w);
    check_group(m.fc2.bias, g.dfc2_b);
}

TEST_CASE("stem gradient scales linearly in the branch weight") {
    Rng rng(14);
    const ModelParams m = init_model(rng);
    const Tensor x = random_images(rng, 2, 0.5);
    StemCache cache;
    stem_forward(m, x, 2, &cache);
    Tensor probe = testutil::random_tensor(rng, 2, 64, 16, 16, 0.1);

    ModelGrads g1 = zero_grads(m);
    stem_backward(m, cache, probe, g1);
    Tensor probe2 = probe;
    for (auto& v : probe2.data) v *= 2.0;
    ModelGrads g2 = zero_grads(m);
    stem_backward(m, cache, probe2, g2);

    // doubling the injected gradient doubles every stem parameter gradient
    for (std::size_t i = 0; i < g1.dconv1_w.size(); ++i)
        CHECK(g2.dconv1_w.data[i] == 2.0 * g1.dconv1_w.data[i]);
    for (std::size_t i = 0; i < g1.dconv2_w.size(); ++i)
        CHECK(g2.dconv2_w.data[i] == 2.0 * g1.dconv2_w.data[i]);
}

TEST_CASE("first plain step at He init starts near ln(10)") {
    // small input scale keeps the init logits near zero, where softmax
    // cross-entropy against any one-hot target is ln(classes)
    for (std::uint64_t seed : {21ULL, 22ULL, 23ULL}) {
        Rng rng(seed);
        ModelParams m = init_model(rng);
        Rng data_rng(seed + 100);
        const Tensor x = random_images(data_rng, 8, 0.1);
        const Tensor t = one_hot_batch({0, 1, 2, 3, 4, 5, 6, 7});
        const double loss = train_step_plain(m, x, t, 0.01, 0.04);
        CHECK(std::abs(loss - std::log(10.0)) < 0.3);
    }
}

TEST_CASE("lr = 0 leaves parameters unchanged") {
    Rng rng(15);
    ModelParams m = init_model(rng);
    const ModelParams before = m;
    const Tensor x = random_images(rng, 2, 0.5);
    const Tensor t = one_hot_batch({1, 2});
    train_step_plain(m, x, t, 0.0, 0.04);
    train_step_plain(m, x, t, 0.0, 0.04);
    CHECK(params_equal(m, before));
}

TEST_CASE("weight sharing: one parameter set after a mixed step") {
    Rng rng(16);
    ModelParams m = init_model(rng);
    Rng step_rng(17);
    const Tensor x1 = random_images(rng, 2, 0.5);
    const Tensor x2 = random_images(rng, 2, 0.5);
    const Tensor x3 = random_images(rng, 2, 0.5);
    const Tensor t1 = one_hot_batch({0, 1});
    const Tensor t2 = one_hot_batch({2, 3});
    const Tensor t3 = one_hot_batch({4, 5});
    const Tensor xs[3] = {x1, x2, x3};
    const Tensor ts[3] = {t1, t2, t3};
    const MixSpec spec{1, 3, 1.0};
    train_step_mixed(m, xs, ts, spec, step_rng, 0.01, 0.01);
    // stem branches read the same ModelParams by construction; the step must
    // leave a single, finite parameter set
    CHECK(m.conv1.weights.all_finite());
    CHECK(m.conv2.weights.all_finite());
}

TEST_CASE("loss trends down over the first training steps") {
    Rng data_rng(31);
    Dataset ds = gen_synthetic(data_rng, 3, 40);
    const NormStats st = compute_norm_stats(ds);
    ds = normalize(ds, st);

    Rng rng(32);
    ModelParams m = init_model(rng);
    std::vector<std::size_t> idx(16);
    std::vector<double> losses;
    for (int step = 0; step < 10; ++step) {
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = (step * 16 + i) % ds.size();
        const LabeledBatch b = gather_batch(ds, idx);
        losses.push_back(train_step_plain(m, b.images, b.targets, 0.001, 0.04));
        CHECK(std::isfinite(losses.back()));
    }
    // batches differ step to step, so compare window means, not neighbors
    const double head = (losses[0] + losses[1] + losses[2]) / 3.0;
    const double tail = (losses[7] + losses[8] + losses[9]) / 3.0;
    CHECK(tail < head);
}

TEST_CASE("checkpoint round-trips bitwise and validates shapes") {
    Rng rng(18);
    const ModelParams m = init_model(rng);
    const auto path = std::filesystem::temp_directory_path() / "mixgrad_test.ckpt";
    save_checkpoint(m, path);
    const ModelParams loaded = load_checkpoint(path);
    CHECK(params_equal(m, loaded));

    // corrupt the magic
    {
        std::FILE* f = std::fopen(path.c_str(), "r+b");
        REQUIRE(f);
        std::fputc('X', f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
}
