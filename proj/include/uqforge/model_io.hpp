#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "uqforge/common.hpp"
#include "uqforge/mlp.hpp"

namespace uqforge {

// Weight file layout, all little-endian:
//   "UQF1" | u32 layer count | per layer: u32 out, u32 in
//   | per layer: out*in f64 weights (row-major), out f64 biases

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& os, double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError(path + ": truncated weight file");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

inline double get_f64(std::istream& is, const std::string& path) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError(path + ": truncated weight file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
}

}  // namespace detail

inline void save_params(const std::string& path, const ModelParams& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    os.write("UQF1", 4);
    detail::put_u32(os, static_cast<std::uint32_t>(params.weights.size()));
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        detail::put_u32(os, static_cast<std::uint32_t>(params.weights[l].rows()));
        detail::put_u32(os, static_cast<std::uint32_t>(params.weights[l].cols()));
    }
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        for (std::size_t i = 0; i < params.weights[l].size(); ++i)
            detail::put_f64(os, params.weights[l].data()[i]);
        for (double b : params.biases[l]) detail::put_f64(os, b);
    }
    if (!os) throw IoError("failed writing " + path);
}

inline ModelParams load_params(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != "UQF1")
        throw IoError(path + ": bad magic, expected UQF1");
    const std::uint32_t layers = detail::get_u32(is, path);
    if (layers == 0 || layers > 1024) throw IoError(path + ": implausible layer count");
    std::vector<std::pair<std::uint32_t, std::uint32_t>> dims(layers);
    for (auto& [out, in] : dims) {
        out = detail::get_u32(is, path);
        in = detail::get_u32(is, path);
        if (out == 0 || in == 0) throw IoError(path + ": zero layer dimension");
    }
    ModelParams p;
    for (auto [out, in] : dims) {
        Array2 w(out, in);
        for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = detail::get_f64(is, path);
        std::vector<double> b(out);
        for (double& v : b) v = detail::get_f64(is, path);
        p.weights.push_back(std::move(w));
        p.biases.push_back(std::move(b));
    }
    return p;
}

}  // namespace uqforge
