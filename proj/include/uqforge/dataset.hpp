#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "uqforge/array.hpp"
#include "uqforge/common.hpp"
#include "uqforge/rng.hpp"

namespace uqforge {

/// A labelled classification dataset. Image inputs are flattened and scaled
/// to [0,1]; synthetic inputs are raw feature vectors.
struct Dataset {
    Array2 inputs;            // N x D
    std::vector<int> labels;  // N values in [0, num_classes)
    int num_classes = 0;
    std::string name;

    std::size_t size() const { return inputs.rows(); }
    std::size_t dim() const { return inputs.cols(); }
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    in.seekg(0, std::ios::end);
    const auto len = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(len));
    if (len > 0) in.read(reinterpret_cast<char*>(bytes.data()), len);
    if (!in) throw IoError("failed reading " + path);
    return bytes;
}

inline std::uint32_t be32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
           std::uint32_t(p[3]);
}

}  // namespace detail

/// Parse a big-endian IDX image/label file pair (the MNIST container).
/// Pixels are scaled by 1/255; D = rows * cols.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto img = detail::read_file_bytes(images_path);
    const auto lbl = detail::read_file_bytes(labels_path);

    if (img.size() < 16 || detail::be32(img.data()) != 0x00000803u)
        throw IoError(images_path + ": bad IDX image magic");
    if (lbl.size() < 8 || detail::be32(lbl.data()) != 0x00000801u)
        throw IoError(labels_path + ": bad IDX label magic");

    const std::size_t n = detail::be32(img.data() + 4);
    const std::size_t rows = detail::be32(img.data() + 8);
    const std::size_t cols = detail::be32(img.data() + 12);
    const std::size_t n_lbl = detail::be32(lbl.data() + 4);
    if (n != n_lbl)
        throw IoError("IDX count mismatch: " + std::to_string(n) + " images vs " +
                      std::to_string(n_lbl) + " labels");
    const std::size_t pixels = n * rows * cols;
    if (img.size() < 16 + pixels) throw IoError(images_path + ": truncated pixel data");
    if (lbl.size() < 8 + n) throw IoError(labels_path + ": truncated label data");

    Dataset ds;
    ds.inputs = Array2(n, rows * cols);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < pixels; ++i)
        ds.inputs.data()[i] = static_cast<double>(img[16 + i]) / 255.0;
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = lbl[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = max_label + 1;
    ds.name = images_path;
    return ds;
}

/// Parse CIFAR-10 binary batches: 3073-byte records, one label byte then
/// 3072 RGB-plane bytes. Multiple batch files are concatenated in order.
inline Dataset load_cifar10(const std::vector<std::string>& batch_paths) {
    constexpr std::size_t kRecord = 3073;
    Dataset ds;
    ds.num_classes = 10;
    std::vector<double> pixels;
    for (const auto& path : batch_paths) {
        const auto bytes = detail::read_file_bytes(path);
        if (bytes.empty()) {
            std::cerr << "warning: " << path << " is empty, contributes no records\n";
            continue;
        }
        if (bytes.size() % kRecord != 0)
            throw IoError(path + ": length " + std::to_string(bytes.size()) +
                          " is not a multiple of 3073");
        const std::size_t n = bytes.size() / kRecord;
        for (std::size_t r = 0; r < n; ++r) {
            const unsigned char* rec = bytes.data() + r * kRecord;
            if (rec[0] >= 10)
                throw IoError(path + ": label byte " + std::to_string(int(rec[0])) + " >= 10");
            ds.labels.push_back(rec[0]);
            for (std::size_t j = 1; j < kRecord; ++j)
                pixels.push_back(static_cast<double>(rec[j]) / 255.0);
        }
    }
    ds.inputs = Array2(ds.labels.size(), 3072);
    std::copy(pixels.begin(), pixels.end(), ds.inputs.data());
    ds.name = batch_paths.empty() ? "cifar10" : batch_paths.front();
    return ds;
}

namespace detail {

inline Dataset take_rows(const Dataset& ds, const std::vector<std::size_t>& idx) {
    Dataset out;
    out.inputs = Array2(idx.size(), ds.dim());
    out.labels.resize(idx.size());
    out.num_classes = ds.num_classes;
    out.name = ds.name;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto src = ds.inputs.row(idx[i]);
        std::copy(src.begin(), src.end(), out.inputs.row(i).begin());
        out.labels[i] = ds.labels[idx[i]];
    }
    return out;
}

}  // namespace detail

/// Sample n examples without replacement, deterministically per (seed, n).
/// Stratified mode draws floor(n/C) per class and fills the remainder from
/// the leftover pool; plain mode draws uniformly.
inline Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed, bool stratify = true) {
    if (n < 1 || n > ds.size())
        throw DomainError("subset: n=" + std::to_string(n) + " outside [1, " +
                          std::to_string(ds.size()) + "]");
    Rng rng(mix_seed(seed, n));
    std::vector<std::size_t> chosen;
    chosen.reserve(n);

    if (!stratify) {
        std::vector<std::size_t> all(ds.size());
        std::iota(all.begin(), all.end(), 0);
        rng.shuffle(all);
        chosen.assign(all.begin(), all.begin() + n);
    } else {
        const std::size_t c = static_cast<std::size_t>(ds.num_classes);
        const std::size_t quota = n / c;
        std::vector<std::vector<std::size_t>> by_class(c);
        for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

        std::vector<std::size_t> leftovers;
        for (std::size_t cls = 0; cls < c; ++cls) {
            auto& pool = by_class[cls];
            if (pool.size() < quota)
                throw DomainError("subset: class " + std::to_string(cls) + " has only " +
                                  std::to_string(pool.size()) + " examples, quota is " +
                                  std::to_string(quota));
            rng.shuffle(pool);
            chosen.insert(chosen.end(), pool.begin(), pool.begin() + quota);
            leftovers.insert(leftovers.end(), pool.begin() + quota, pool.end());
        }
        rng.shuffle(leftovers);
        const std::size_t remainder = n - quota * c;
        chosen.insert(chosen.end(), leftovers.begin(), leftovers.begin() + remainder);
    }
    rng.shuffle(chosen);
    return detail::take_rows(ds, chosen);
}

/// Pairwise-equidistant class centers: rows of the Helmert basis scaled so
/// every center pair sits exactly `separation` apart. Needs dim >= c-1.
inline std::vector<std::vector<double>> simplex_centers(int c, std::size_t dim, double separation) {
    if (c < 2) throw DomainError("simplex_centers: need c >= 2");
    if (dim + 1 < static_cast<std::size_t>(c))
        throw DomainError("simplex_centers: dim=" + std::to_string(dim) +
                          " too small for c=" + std::to_string(c) + " equidistant centers");
    const double scale = separation / std::sqrt(2.0);
    std::vector<std::vector<double>> centers(c, std::vector<double>(dim, 0.0));
    for (int k = 1; k < c; ++k) {
        const double norm = 1.0 / std::sqrt(double(k) * (k + 1));
        for (int i = 0; i < c; ++i) {
            double h = 0.0;
            if (i < k) h = norm;
            else if (i == k) h = -double(k) * norm;
            centers[i][k - 1] = scale * h;
        }
    }
    return centers;
}

/// Isotropic unit-variance Gaussian clusters on the simplex centers above,
/// n_per_class points each, shuffled.
inline Dataset synth_blobs(int c, std::size_t n_per_class, std::size_t dim, double separation,
                           std::uint64_t seed) {
    const auto centers = simplex_centers(c, dim, separation);
    const std::size_t n = n_per_class * static_cast<std::size_t>(c);
    Rng rng(seed);
    Dataset ds;
    ds.inputs = Array2(n, dim);
    ds.labels.resize(n);
    ds.num_classes = c;
    ds.name = "blobs(c=" + std::to_string(c) + ",sep=" + std::to_string(separation) + ")";
    std::size_t row = 0;
    for (int cls = 0; cls < c; ++cls) {
        for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
            auto r = ds.inputs.row(row);
            for (std::size_t d = 0; d < dim; ++d) r[d] = centers[cls][d] + rng.normal();
            ds.labels[row] = cls;
        }
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    return detail::take_rows(ds, order);
}

/// Translate every input by `distance` along the last feature axis. Used to
/// manufacture OOD variants of a dataset. The last axis is the off-manifold
/// direction for blob data: simplex_centers spans the first c-1 coordinates,
/// so for dim >= c the shift moves points orthogonally to the whole class
/// structure instead of into some class's extended decision region (a
/// translate inside the class span lands in territory every trained model
/// labels identically and confidently, which erases the model-disagreement
/// signal the shift is meant to expose).
inline Dataset shifted(const Dataset& ds, double distance) {
    Dataset out = ds;
    if (ds.dim() == 0) return out;
    const std::size_t last = ds.dim() - 1;
    for (std::size_t i = 0; i < out.inputs.rows(); ++i) out.inputs(i, last) += distance;
    out.name = ds.name + "+shift" + std::to_string(distance);
    return out;
}

}  // namespace uqforge
