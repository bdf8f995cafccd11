#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "uqforge/array.hpp"
#include "uqforge/bayes.hpp"
#include "uqforge/common.hpp"

namespace uqforge {

/// Shannon entropy in nats of one distribution. The input must be a
/// probability vector: entries in [0,1] and summing to 1, both within 1e-9.
inline double entropy(std::span<const double> p) {
    if (p.empty()) throw ShapeError("entropy: empty distribution");
    double sum = 0.0;
    for (double v : p) sum += v;
    if (std::abs(sum - 1.0) > 1e-9)
        throw DomainError("entropy: probabilities sum to " + std::to_string(sum));
    double h = 0.0;
    for (double v : p) h -= xlogx(v);
    return h;
}

inline std::vector<double> entropy_rows(const Array2& p) {
    std::vector<double> out(p.rows());
    for (std::size_t i = 0; i < p.rows(); ++i) out[i] = entropy(p.row(i));
    return out;
}

/// Entropy of the posterior predictive mean, per sample.
inline std::vector<double> total_uncertainty(const PosteriorSamples& samples) {
    return entropy_rows(predictive_mean(samples));
}

/// Mean over the K slices of the per-slice entropy, per sample. Extended-
/// precision accumulation keeps the mean of identical entropies bit-equal
/// to the per-slice value (same argument as predictive_mean).
inline std::vector<double> aleatoric_uncertainty(const PosteriorSamples& samples) {
    std::vector<std::vector<double>> per_slice(samples.k());
    for (std::size_t s = 0; s < samples.k(); ++s) per_slice[s] = entropy_rows(samples.slice(s));
    std::vector<double> out(samples.n());
    for (std::size_t i = 0; i < samples.n(); ++i) {
        long double acc = 0.0L;
        for (std::size_t s = 0; s < samples.k(); ++s) acc += per_slice[s][i];
        out[i] = static_cast<double>(acc / static_cast<long double>(samples.k()));
    }
    return out;
}

/// total - aleatoric, the mutual information between prediction and model.
/// Jensen guarantees it is nonnegative up to float noise: a tiny negative is
/// rounded to zero, anything below -1e-6 means the inputs are inconsistent.
inline std::vector<double> epistemic_uncertainty(const std::vector<double>& total,
                                                 const std::vector<double>& aleatoric) {
    if (total.size() != aleatoric.size())
        throw ShapeError("epistemic_uncertainty: length mismatch");
    std::vector<double> out(total.size());
    for (std::size_t i = 0; i < total.size(); ++i) {
        double e = total[i] - aleatoric[i];
        if (e < -1e-6)
            throw InternalError("epistemic uncertainty " + std::to_string(e) +
                                " below -1e-6; decomposition inputs inconsistent");
        out[i] = e < 0.0 ? 0.0 : e;
    }
    return out;
}

inline std::vector<double> epistemic_uncertainty(const PosteriorSamples& samples) {
    return epistemic_uncertainty(total_uncertainty(samples), aleatoric_uncertainty(samples));
}

/// Scale entropies from [0, ln c] to [0, 1]. Undefined for c < 2 (ln 1 = 0).
inline std::vector<double> normalize_uncertainty(std::vector<double> values, std::size_t num_classes) {
    if (num_classes < 2)
        throw DomainError("normalize_uncertainty: need >= 2 classes, got " +
                          std::to_string(num_classes));
    const double ln_c = std::log(static_cast<double>(num_classes));
    for (double& v : values) v /= ln_c;
    return values;
}

struct UncertaintyRow {
    std::size_t sample_id = 0;
    double total = 0.0;
    double aleatoric = 0.0;
    double epistemic = 0.0;
    int label = -1;      // -1 when no labels were supplied
    int predicted = -1;
    bool correct = false;
};

struct UncertaintyReport {
    std::vector<UncertaintyRow> rows;
    std::size_t num_classes = 0;
    bool normalized = true;

    double mean_total() const { return mean_of(&UncertaintyRow::total); }
    double mean_aleatoric() const { return mean_of(&UncertaintyRow::aleatoric); }
    double mean_epistemic() const { return mean_of(&UncertaintyRow::epistemic); }
    double accuracy() const {
        if (rows.empty()) throw ShapeError("UncertaintyReport: no rows");
        std::size_t hits = 0;
        for (const auto& r : rows) hits += r.correct ? 1 : 0;
        return static_cast<double>(hits) / static_cast<double>(rows.size());
    }

private:
    double mean_of(double UncertaintyRow::* field) const {
        if (rows.empty()) throw ShapeError("UncertaintyReport: no rows");
        long double acc = 0.0L;
        for (const auto& r : rows) acc += r.*field;
        return static_cast<double>(acc / static_cast<long double>(rows.size()));
    }
};

/// Full per-sample decomposition. Labels are optional; when present they must
/// match the sample count and stay within [0, C).
inline UncertaintyReport make_report(const PosteriorSamples& samples,
                                     const std::vector<int>& labels = {},
                                     bool normalized = true) {
    if (!labels.empty() && labels.size() != samples.n())
        throw ShapeError("make_report: label count does not match sample count");
    const Array2 mean = predictive_mean(samples);
    std::vector<double> total = entropy_rows(mean);
    std::vector<double> aleatoric = aleatoric_uncertainty(samples);
    std::vector<double> epistemic = epistemic_uncertainty(total, aleatoric);
    if (normalized) {
        total = normalize_uncertainty(std::move(total), samples.c());
        aleatoric = normalize_uncertainty(std::move(aleatoric), samples.c());
        epistemic = normalize_uncertainty(std::move(epistemic), samples.c());
    }
    UncertaintyReport rep;
    rep.num_classes = samples.c();
    rep.normalized = normalized;
    rep.rows.resize(samples.n());
    for (std::size_t i = 0; i < samples.n(); ++i) {
        auto& r = rep.rows[i];
        r.sample_id = i;
        r.total = total[i];
        r.aleatoric = aleatoric[i];
        r.epistemic = epistemic[i];
        r.predicted = static_cast<int>(argmax(mean.row(i)));
        if (!labels.empty()) {
            if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= samples.c())
                throw DomainError("make_report: label " + std::to_string(labels[i]) +
                                  " outside [0," + std::to_string(samples.c()) + ")");
            r.label = labels[i];
            r.correct = r.predicted == r.label;
        }
    }
    return rep;
}

/// CSV with six significant digits on the uncertainty columns; `correct`
/// serializes as 0/1 and missing labels as -1.
inline void write_report_csv(const std::string& path, const UncertaintyReport& rep) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << "sample_id,total,aleatoric,epistemic,label,predicted,correct\n";
    char buf[160];
    for (const auto& r : rep.rows) {
        std::snprintf(buf, sizeof(buf), "%zu,%.6g,%.6g,%.6g,%d,%d,%d\n", r.sample_id, r.total,
                      r.aleatoric, r.epistemic, r.label, r.predicted, r.correct ? 1 : 0);
        os << buf;
    }
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace uqforge
