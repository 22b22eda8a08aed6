#include "mixgrad/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace mixgrad {

namespace {

constexpr std::size_t kRecordBytes = 3073;
constexpr std::size_t kPixelBytes = 3072;

}  // namespace

Dataset load_cifar10_bin(const std::vector<std::filesystem::path>& paths) {
    if (paths.empty()) throw ValidationError("load_cifar10_bin: no files given");

    std::size_t total = 0;
    std::vector<std::vector<char>> blobs;
    for (const auto& p : paths) {
        std::ifstream is(p, std::ios::binary | std::ios::ate);
        if (!is) throw IoError("cannot open dataset file: " + p.string());
        const auto bytes = static_cast<std::size_t>(is.tellg());
        if (bytes == 0 || bytes % kRecordBytes != 0)
            throw FormatError("dataset file " + p.string() + ": size " + std::to_string(bytes) +
                              " is not a multiple of 3073");
        is.seekg(0);
        std::vector<char> blob(bytes);
        if (!is.read(blob.data(), static_cast<std::streamsize>(bytes)))
            throw IoError("read failed for dataset file: " + p.string());
        total += bytes / kRecordBytes;
        blobs.push_back(std::move(blob));
    }

    Dataset ds;
    ds.images = Tensor(total, 3, 32, 32);
    ds.labels.resize(total);
    ds.name = paths[0].filename().string();

    std::size_t rec = 0;
    for (std::size_t f = 0; f < blobs.size(); ++f) {
        const auto& blob = blobs[f];
        for (std::size_t off = 0; off < blob.size(); off += kRecordBytes, ++rec) {
            const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data() + off);
            if (bytes[0] >= 10)
                throw FormatError("dataset file " + paths[f].string() + ": record " +
                                  std::to_string(off / kRecordBytes) + " has label byte " +
                                  std::to_string(bytes[0]));
            ds.labels[rec] = bytes[0];
            double* img = ds.images.sample(rec);
            for (std::size_t i = 0; i < kPixelBytes; ++i)
                img[i] = static_cast<double>(bytes[1 + i]) / 255.0;
        }
    }
    return ds;
}

Dataset subsample_per_class(const Dataset& ds, std::size_t per_class, Rng& rng) {
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

    std::vector<std::size_t> chosen;
    for (int c = 0; c < ds.num_classes; ++c) {
        auto& idx = by_class[c];
        if (idx.size() < per_class)
            throw ValidationError("subsample_per_class: class " + std::to_string(c) + " has " +
                                  std::to_string(idx.size()) + " samples, need " +
                                  std::to_string(per_class));
        // Partial Fisher-Yates, then restore original order among the chosen.
        for (std::size_t i = 0; i < per_class; ++i) {
            const std::size_t j = i + rng.next_below(idx.size() - i);
            std::swap(idx[i], idx[j]);
        }
        std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(per_class));
        chosen.insert(chosen.end(), idx.begin(),
                      idx.begin() + static_cast<std::ptrdiff_t>(per_class));
    }

    Dataset out;
    out.num_classes = ds.num_classes;
    out.name = ds.name + "/subsampled";
    out.images = Tensor(chosen.size(), 3, 32, 32);
    out.labels.resize(chosen.size());
    for (std::size_t i = 0; i < chosen.size(); ++i) {
        std::copy_n(ds.images.sample(chosen[i]), ds.images.sample_size(), out.images.sample(i));
        out.labels[i] = ds.labels[chosen[i]];
    }
    return out;
}

NormStats compute_norm_stats(const Dataset& ds) {
    if (ds.size() == 0) throw ValidationError("compute_norm_stats: empty dataset");
    NormStats st;
    const std::size_t plane = 32 * 32;
    const double count = static_cast<double>(ds.size() * plane);
    for (int c = 0; c < 3; ++c) {
        double sum = 0.0;
        for (std::size_t n = 0; n < ds.size(); ++n) {
            const double* ch = ds.images.sample(n) + static_cast<std::size_t>(c) * plane;
            for (std::size_t i = 0; i < plane; ++i) sum += ch[i];
        }
        st.mean[c] = sum / count;
        double sq = 0.0;
        for (std::size_t n = 0; n < ds.size(); ++n) {
            const double* ch = ds.images.sample(n) + static_cast<std::size_t>(c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = ch[i] - st.mean[c];
                sq += d * d;
            }
        }
        st.stddev[c] = std::sqrt(sq / count);
        if (!(st.stddev[c] > 0.0))
            throw ValidationError("compute_norm_stats: channel " + std::to_string(c) +
                                  " has zero standard deviation");
    }
    return st;
}

Dataset normalize(const Dataset& ds, const NormStats& stats) {
    for (int c = 0; c < 3; ++c)
        if (!(stats.stddev[c] > 0.0))
            throw ValidationError("normalize: channel " + std::to_string(c) + " has zero std");
    Dataset out = ds;
    const std::size_t plane = 32 * 32;
    for (std::size_t n = 0; n < out.size(); ++n) {
        double* img = out.images.sample(n);
        for (int c = 0; c < 3; ++c) {
            double* ch = img + static_cast<std::size_t>(c) * plane;
            for (std::size_t i = 0; i < plane; ++i) ch[i] = (ch[i] - stats.mean[c]) / stats.stddev[c];
        }
    }
    return out;
}

std::vector<double> one_hot(int label, int classes) {
    if (label < 0 || label >= classes)
        throw ValidationError("one_hot: label " + std::to_string(label) + " out of range for " +
                              std::to_string(classes) + " classes");
    std::vector<double> row(classes, 0.0);
    row[label] = 1.0;
    return row;
}

LabeledBatch gather_batch(const Dataset& ds, const std::vector<std::size_t>& indices,
                          int classes) {
    LabeledBatch b;
    b.images = Tensor(indices.size(), 3, 32, 32);
    b.targets = Tensor(indices.size(), static_cast<std::size_t>(classes), 1, 1);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        std::copy_n(ds.images.sample(indices[i]), ds.images.sample_size(), b.images.sample(i));
        b.targets.at(i, static_cast<std::size_t>(ds.labels[indices[i]]), 0, 0) = 1.0;
    }
    return b;
}

Dataset gen_synthetic(Rng& rng, int classes, std::size_t per_class) {
    if (classes < 2 || classes > 8)
        throw ValidationError("gen_synthetic: classes must be in [2,8]");
    // Corners of the [0.1, 0.9]^3 color cube: any two differ by 0.8 in some
    // channel.
    static constexpr double kLo = 0.1, kHi = 0.9;
    Dataset ds;
    ds.num_classes = classes;
    ds.name = "synthetic";
    ds.images = Tensor(static_cast<std::size_t>(classes) * per_class, 3, 32, 32);
    ds.labels.resize(ds.images.shape.n);
    const std::size_t plane = 32 * 32;
    std::size_t rec = 0;
    for (int c = 0; c < classes; ++c) {
        const double mean[3] = {(c & 1) ? kHi : kLo, (c & 2) ? kHi : kLo, (c & 4) ? kHi : kLo};
        for (std::size_t s = 0; s < per_class; ++s, ++rec) {
            ds.labels[rec] = c;
            double* img = ds.images.sample(rec);
            for (int ch = 0; ch < 3; ++ch)
                for (std::size_t i = 0; i < plane; ++i)
                    img[static_cast<std::size_t>(ch) * plane + i] =
                        mean[ch] + 0.1 * rng.normal01();
        }
    }
    return ds;
}

void write_cifar10_bin(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    std::vector<unsigned char> record(kRecordBytes);
    for (std::size_t n = 0; n < ds.size(); ++n) {
        record[0] = static_cast<unsigned char>(ds.labels[n]);
        const double* img = ds.images.sample(n);
        for (std::size_t i = 0; i < kPixelBytes; ++i) {
            const double v = std::clamp(img[i], 0.0, 1.0);
            record[1 + i] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        os.write(reinterpret_cast<const char*>(record.data()),
                 static_cast<std::streamsize>(record.size()));
    }
    if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace mixgrad
