#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "uqforge/common.hpp"

namespace uqforge {

/// Dense row-major matrix of f64. The only array type in the project;
/// problem sizes never call for sparsity or higher ranks.
class Array2 {
public:
    Array2() = default;
    Array2(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Array2 from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        Array2 a(rows.size(), rows.size() ? rows.begin()->size() : 0);
        std::size_t i = 0;
        for (const auto& r : rows) {
            if (r.size() != a.cols_) throw ShapeError("from_rows: ragged rows");
            std::copy(r.begin(), r.end(), a.row(i).begin());
            ++i;
        }
        return a;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const Array2& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

/// Bitwise equality; used by determinism tests.
inline bool bit_equal(const Array2& a, const Array2& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.data()[i] != b.data()[i]) return false;
    return true;
}

/// Standard matrix product, row-major. ikj loop order keeps the inner
/// traversal contiguous in both b and out.
inline Array2 matmul(const Array2& a, const Array2& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: " + std::to_string(a.cols()) + " != " + std::to_string(b.rows()));
    Array2 out(a.rows(), b.cols());
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t i = 0; i < n; ++i) {
        double* out_row = out.data() + i * m;
        const double* a_row = a.data() + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a_row[p];
            const double* b_row = b.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) out_row[j] += av * b_row[j];
        }
    }
    return out;
}

/// a * b^T. Dot-product form; both operands are walked row-wise.
inline Array2 matmul_nt(const Array2& a, const Array2& b) {
    if (a.cols() != b.cols())
        throw ShapeError("matmul_nt: " + std::to_string(a.cols()) + " != " + std::to_string(b.cols()));
    Array2 out(a.rows(), b.rows());
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    for (std::size_t i = 0; i < n; ++i) {
        const double* a_row = a.data() + i * k;
        for (std::size_t j = 0; j < m; ++j) {
            const double* b_row = b.data() + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
            out(i, j) = acc;
        }
    }
    return out;
}

/// a^T * b.
inline Array2 matmul_tn(const Array2& a, const Array2& b) {
    if (a.rows() != b.rows())
        throw ShapeError("matmul_tn: " + std::to_string(a.rows()) + " != " + std::to_string(b.rows()));
    Array2 out(a.cols(), b.cols());
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t p = 0; p < n; ++p) {
        const double* a_row = a.data() + p * k;
        const double* b_row = b.data() + p * m;
        for (std::size_t i = 0; i < k; ++i) {
            double* out_row = out.data() + i * m;
            const double av = a_row[i];
            for (std::size_t j = 0; j < m; ++j) out_row[j] += av * b_row[j];
        }
    }
    return out;
}

inline Array2 transpose(const Array2& a) {
    Array2 out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

/// Index of the largest element; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
    if (v.empty()) throw ShapeError("argmax: empty span");
    std::size_t best = 0;
    for (std::size_t j = 1; j < v.size(); ++j)
        if (v[j] > v[best]) best = j;
    return best;
}

/// p * ln p with the 0 ln 0 = 0 convention. Accepts 1e-9 of slack around
/// [0, 1] for accumulated float noise; anything beyond is a caller bug.
inline double xlogx(double p) {
    constexpr double kSlack = 1e-9;
    if (p < -kSlack || p > 1.0 + kSlack)
        throw DomainError("xlogx: probability outside [0,1]: " + std::to_string(p));
    p = std::clamp(p, 0.0, 1.0);
    if (p == 0.0) return 0.0;
    return p * std::log(p);
}

/// Row-wise softmax with max subtraction, so any finite logits are safe.
/// Each output row sums to 1 within 1e-12 and preserves the input order.
inline Array2 softmax_rows(const Array2& logits) {
    Array2 out(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto in = logits.row(i);
        auto o = out.row(i);
        double m = in[0];
        for (double v : in) m = std::max(m, v);
        double sum = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = std::exp(in[j] - m);
            sum += o[j];
        }
        for (std::size_t j = 0; j < in.size(); ++j) o[j] /= sum;
    }
    return out;
}

}  // namespace uqforge
