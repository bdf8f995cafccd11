#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "uqforge/array.hpp"
#include "uqforge/bayes.hpp"
#include "uqforge/common.hpp"
#include "uqforge/rng.hpp"
#include "uqforge/uncertainty.hpp"

namespace uqforge {

/// Fraction of samples whose predictive-mean argmax matches the label.
/// Ties go to the lowest class index.
inline double accuracy(const Array2& mean_probs, const std::vector<int>& labels) {
    if (mean_probs.rows() == 0) throw ShapeError("accuracy: empty input");
    if (mean_probs.rows() != labels.size())
        throw ShapeError("accuracy: rows/labels mismatch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < mean_probs.rows(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= mean_probs.cols())
            throw DomainError("accuracy: label " + std::to_string(labels[i]) + " out of range");
        hits += argmax(mean_probs.row(i)) == static_cast<std::size_t>(labels[i]) ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(mean_probs.rows());
}

/// Hazen quantile (midpoint convention): h = n*p + 1/2 over the sorted data,
/// linearly interpolated, clamped to the extremes. {1,2,3,4} @ .25/.5/.75
/// gives 1.5 / 2.5 / 3.5.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw ShapeError("quantile_sorted: empty data");
    if (p < 0.0 || p > 1.0) throw DomainError("quantile_sorted: p outside [0,1]");
    const double n = static_cast<double>(sorted.size());
    const double h = std::clamp(n * p + 0.5, 1.0, n);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h)) - 1;
    const double frac = h - std::floor(h);
    if (frac == 0.0 || lo + 1 >= sorted.size()) return sorted[lo];
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

/// Five-number summary plus mean. count == 0 marks an absent group; its
/// summary fields stay NaN.
struct GroupStats {
    std::size_t count = 0;
    double mean = std::numeric_limits<double>::quiet_NaN();
    double min = std::numeric_limits<double>::quiet_NaN();
    double q1 = std::numeric_limits<double>::quiet_NaN();
    double median = std::numeric_limits<double>::quiet_NaN();
    double q3 = std::numeric_limits<double>::quiet_NaN();
    double max = std::numeric_limits<double>::quiet_NaN();
};

inline GroupStats group_stats(std::vector<double> values) {
    GroupStats g;
    g.count = values.size();
    if (values.empty()) return g;
    std::sort(values.begin(), values.end());
    long double acc = 0.0L;
    for (double v : values) acc += v;
    g.mean = static_cast<double>(acc / static_cast<long double>(values.size()));
    g.min = values.front();
    g.q1 = quantile_sorted(values, 0.25);
    g.median = quantile_sorted(values, 0.5);
    g.q3 = quantile_sorted(values, 0.75);
    g.max = values.back();
    return g;
}

/// Box-plot statistics of the epistemic column split by correctness of the
/// predictive-mean argmax: everything / correctly classified / misclassified.
struct SplitStats {
    GroupStats id_all;
    GroupStats id_good;
    GroupStats id_mis;
};

inline SplitStats split_stats(const UncertaintyReport& report, const Array2& mean_probs,
                              const std::vector<int>& labels) {
    if (report.rows.size() != mean_probs.rows() || labels.size() != mean_probs.rows())
        throw ShapeError("split_stats: report/probs/labels lengths disagree");
    std::vector<double> all, good, mis;
    all.reserve(report.rows.size());
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= mean_probs.cols())
            throw DomainError("split_stats: label out of range");
        const double e = report.rows[i].epistemic;
        all.push_back(e);
        if (argmax(mean_probs.row(i)) == static_cast<std::size_t>(labels[i]))
            good.push_back(e);
        else
            mis.push_back(e);
    }
    return SplitStats{group_stats(std::move(all)), group_stats(std::move(good)),
                      group_stats(std::move(mis))};
}

namespace detail {

// Midranks (1-based) of a pooled sample; ties share the average rank.
inline std::vector<double> midranks(const std::vector<double>& pooled) {
    std::vector<std::size_t> order(pooled.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
    std::vector<double> rank(pooled.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && pooled[order[j + 1]] == pooled[order[i]]) ++j;
        const double shared = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = shared;
        i = j + 1;
    }
    return rank;
}

}  // namespace detail

/// Mann–Whitney AUC with OOD as the positive class: over all (id, ood)
/// pairs, credit 1 when ood > id, 0.5 on ties. Computed via midranks, so the
/// numerator is a half-integer and roc_auc(a,b) + roc_auc(b,a) == 1 exactly.
inline double roc_auc(const std::vector<double>& scores_id, const std::vector<double>& scores_ood) {
    if (scores_id.empty() || scores_ood.empty()) throw ShapeError("roc_auc: empty score list");
    for (double v : scores_id)
        if (!std::isfinite(v)) throw DomainError("roc_auc: non-finite id score");
    for (double v : scores_ood)
        if (!std::isfinite(v)) throw DomainError("roc_auc: non-finite ood score");
    std::vector<double> pooled = scores_id;
    pooled.insert(pooled.end(), scores_ood.begin(), scores_ood.end());
    const std::vector<double> rank = detail::midranks(pooled);
    double rank_sum_ood = 0.0;
    for (std::size_t i = scores_id.size(); i < pooled.size(); ++i) rank_sum_ood += rank[i];
    const double n_ood = static_cast<double>(scores_ood.size());
    const double n_id = static_cast<double>(scores_id.size());
    const double u = rank_sum_ood - n_ood * (n_ood + 1.0) / 2.0;
    return u / (n_id * n_ood);
}

/// Spearman rank correlation (midranks, Pearson on ranks). Returns 0 when
/// either side is constant — no monotone trend is detectable there.
inline double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ShapeError("spearman_rho: length mismatch");
    if (x.size() < 2) throw ShapeError("spearman_rho: need at least 2 points");
    const std::vector<double> rx = detail::midranks(x);
    const std::vector<double> ry = detail::midranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

/// ID-vs-OOD epistemic comparison: mean scores, their gap, and the AUC of
/// epistemic uncertainty as an OOD detector.
struct OodComparison {
    double mean_id = 0.0;
    double mean_ood = 0.0;
    double delta = 0.0;  // mean_ood - mean_id, exactly
    double auc = 0.5;
    std::size_t n_id = 0;
    std::size_t n_ood = 0;
    std::uint64_t seed = 0;
};

namespace detail {

inline Array2 subsample_rows(const Array2& x, std::size_t m, Rng& rng) {
    std::vector<std::size_t> idx(x.rows());
    std::iota(idx.begin(), idx.end(), std::size_t(0));
    rng.shuffle(idx);
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    Array2 out(m, x.cols());
    for (std::size_t i = 0; i < m; ++i)
        std::copy(x.row(idx[i]).begin(), x.row(idx[i]).end(), out.row(i).begin());
    return out;
}

inline std::vector<double> normalized_epistemic_scores(const BayesModel& model, const Array2& x,
                                                       std::uint64_t sample_seed) {
    const PosteriorSamples samples = sample_posterior_predictive(model, x, sample_seed);
    return normalize_uncertainty(epistemic_uncertainty(samples), samples.c());
}

}  // namespace detail

/// Samples the posterior predictive on both sets and compares normalized
/// epistemic uncertainty. `seed` pins the MC-dropout mask streams (ensembles
/// ignore it) and the `balance` subsampling; balance truncates the larger set
/// to the smaller before scoring. AUC uses every (id, ood) pair.
inline OodComparison ood_compare(const BayesModel& model, Array2 id_inputs, Array2 ood_inputs,
                                 std::uint64_t seed = 0, bool balance = false) {
    if (id_inputs.rows() == 0 || ood_inputs.rows() == 0)
        throw ShapeError("ood_compare: both input sets must be nonempty");
    if (id_inputs.cols() != ood_inputs.cols())
        throw ShapeError("ood_compare: feature dimensions disagree");
    if (id_inputs.cols() != model_spec(model).input_dim)
        throw ShapeError("ood_compare: inputs do not match model input_dim");
    if (balance && id_inputs.rows() != ood_inputs.rows()) {
        const std::size_t m = std::min(id_inputs.rows(), ood_inputs.rows());
        Rng rng(mix_seed(seed, 0xba1a9ce));
        if (id_inputs.rows() > m) id_inputs = detail::subsample_rows(id_inputs, m, rng);
        if (ood_inputs.rows() > m) ood_inputs = detail::subsample_rows(ood_inputs, m, rng);
    }
    const std::vector<double> id_scores =
        detail::normalized_epistemic_scores(model, id_inputs, mix_seed(seed, 1));
    const std::vector<double> ood_scores =
        detail::normalized_epistemic_scores(model, ood_inputs, mix_seed(seed, 2));

    auto mean = [](const std::vector<double>& v) {
        long double acc = 0.0L;
        for (double s : v) acc += s;
        return static_cast<double>(acc / static_cast<long double>(v.size()));
    };
    OodComparison cmp;
    cmp.mean_id = mean(id_scores);
    cmp.mean_ood = mean(ood_scores);
    cmp.delta = cmp.mean_ood - cmp.mean_id;
    cmp.auc = roc_auc(id_scores, ood_scores);
    cmp.n_id = id_scores.size();
    cmp.n_ood = ood_scores.size();
    cmp.seed = seed;
    return cmp;
}

inline void write_ood_report(const std::string& path, const OodComparison& cmp) {
    nlohmann::json j{{"mean_id", cmp.mean_id}, {"mean_ood", cmp.mean_ood}, {"delta", cmp.delta},
                     {"auc", cmp.auc},         {"n_id", cmp.n_id},         {"n_ood", cmp.n_ood},
                     {"seed", cmp.seed}};
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << j.dump(2) << "\n";
}

}  // namespace uqforge
