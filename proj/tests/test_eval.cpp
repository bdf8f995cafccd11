#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "uqforge/bayes.hpp"
#include "uqforge/dataset.hpp"
#include "uqforge/eval.hpp"
#include "uqforge/uncertainty.hpp"

using namespace uqforge;
namespace fs = std::filesystem;

namespace {

// All (id, ood) pairs: 1 for ood > id, 0.5 for ties. The quadratic-time
// definition the rank computation must reproduce.
double pair_counting_auc(const std::vector<double>& id, const std::vector<double>& ood) {
    double credit = 0.0;
    for (double o : ood)
        for (double i : id) credit += o > i ? 1.0 : (o == i ? 0.5 : 0.0);
    return credit / (double(id.size()) * double(ood.size()));
}

std::vector<double> random_tie_heavy_scores(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = double(rng.below(10)) / 10.0;  // coarse grid forces ties
    return v;
}

}  // namespace

TEST_CASE("accuracy: perfect, always-miss, hand-counted 2/3", "[eval]") {
    const Array2 onehot = Array2::from_rows({{1, 0}, {0, 1}, {1, 0}});
    CHECK(accuracy(onehot, {0, 1, 0}) == 1.0);
    CHECK(accuracy(onehot, {1, 0, 1}) == 0.0);

    const Array2 toy = Array2::from_rows({{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}});
    CHECK(accuracy(toy, {0, 1, 1}) == Catch::Approx(2.0 / 3.0).margin(1e-15));

    // argmax ties break toward the lowest class index
    const Array2 tie = Array2::from_rows({{0.5, 0.5}});
    CHECK(accuracy(tie, {0}) == 1.0);
    CHECK(accuracy(tie, {1}) == 0.0);

    CHECK_THROWS_AS(accuracy(Array2(0, 2), {}), ShapeError);
    CHECK_THROWS_AS(accuracy(tie, {2}), DomainError);
    CHECK_THROWS_AS(accuracy(tie, {0, 1}), ShapeError);
}

TEST_CASE("quantiles: midpoint convention on {1,2,3,4}", "[eval]") {
    const std::vector<double> v{1, 2, 3, 4};
    CHECK(quantile_sorted(v, 0.25) == Catch::Approx(1.5).margin(1e-12));
    CHECK(quantile_sorted(v, 0.5) == Catch::Approx(2.5).margin(1e-12));
    CHECK(quantile_sorted(v, 0.75) == Catch::Approx(3.5).margin(1e-12));
    CHECK(quantile_sorted(v, 0.0) == 1.0);
    CHECK(quantile_sorted(v, 1.0) == 4.0);

    const std::vector<double> one{7.0};
    for (double p : {0.0, 0.25, 0.5, 0.75, 1.0}) CHECK(quantile_sorted(one, p) == 7.0);

    CHECK_THROWS_AS(quantile_sorted({}, 0.5), ShapeError);
    CHECK_THROWS_AS(quantile_sorted(v, 1.5), DomainError);
}

TEST_CASE("group_stats: empty marker and single element", "[eval]") {
    const GroupStats none = group_stats({});
    CHECK(none.count == 0);
    CHECK(std::isnan(none.mean));
    CHECK(std::isnan(none.median));

    const GroupStats one = group_stats({3.25});
    CHECK(one.count == 1);
    CHECK(one.mean == 3.25);
    CHECK(one.min == 3.25);
    CHECK(one.q1 == 3.25);
    CHECK(one.median == 3.25);
    CHECK(one.q3 == 3.25);
    CHECK(one.max == 3.25);

    const GroupStats four = group_stats({4, 1, 3, 2});
    CHECK(four.mean == 2.5);
    CHECK(four.q1 == 1.5);
    CHECK(four.median == 2.5);
    CHECK(four.q3 == 3.5);
}

TEST_CASE("split_stats partitions by correctness and preserves the weighted mean", "[eval]") {
    // Build a report by hand around a 1-slice stack (epistemic all zero),
    // then overwrite the epistemic column to known values.
    const Array2 probs = Array2::from_rows(
        {{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}, {0.3, 0.7}, {0.8, 0.2}});
    const std::vector<int> labels{0, 1, 1, 1, 0};  // rows 0,1,3,4 correct; row 2 wrong
    const PosteriorSamples s = PosteriorSamples::from_slices({probs});
    UncertaintyReport rep = make_report(s, labels);
    const std::vector<double> epi{0.1, 0.2, 0.9, 0.3, 0.4};
    for (std::size_t i = 0; i < epi.size(); ++i) rep.rows[i].epistemic = epi[i];

    const SplitStats split = split_stats(rep, probs, labels);
    CHECK(split.id_all.count == 5);
    CHECK(split.id_good.count == 4);
    CHECK(split.id_mis.count == 1);
    CHECK(split.id_good.count + split.id_mis.count == split.id_all.count);
    CHECK(split.id_mis.mean == 0.9);
    CHECK(split.id_good.mean == Catch::Approx(0.25).margin(1e-15));

    const double weighted = (split.id_good.mean * 4 + split.id_mis.mean * 1) / 5.0;
    CHECK(split.id_all.mean == Catch::Approx(weighted).margin(1e-12));

    // quartiles are ordered within every nonempty group
    for (const GroupStats* g : {&split.id_all, &split.id_good, &split.id_mis}) {
        REQUIRE(g->min <= g->q1);
        REQUIRE(g->q1 <= g->median);
        REQUIRE(g->median <= g->q3);
        REQUIRE(g->q3 <= g->max);
    }

    // all-correct: the misclassified group is empty, marked by count 0
    const std::vector<int> all_right{0, 1, 0, 1, 0};
    const UncertaintyReport rep2 = make_report(s, all_right);
    const SplitStats split2 = split_stats(rep2, probs, all_right);
    CHECK(split2.id_mis.count == 0);
    CHECK(std::isnan(split2.id_mis.mean));

    CHECK_THROWS_AS(split_stats(rep, probs, {0, 1}), ShapeError);
}

TEST_CASE("roc_auc: perfect separation, all ties, derived 0.75", "[eval]") {
    CHECK(roc_auc({0.1, 0.2}, {0.3, 0.4}) == 1.0);
    CHECK(roc_auc({0.5, 0.5, 0.5}, {0.5, 0.5}) == 0.5);
    // pairs: (.2>.1) (.2>.2? tie) (.2>.3? no) (.4>all three) -> 4.5/6
    CHECK(roc_auc({0.1, 0.2, 0.3}, {0.2, 0.4}) == 0.75);

    CHECK_THROWS_AS(roc_auc({}, {0.1}), ShapeError);
    CHECK_THROWS_AS(roc_auc({0.1}, {}), ShapeError);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(roc_auc({nan}, {0.1}), DomainError);
    CHECK_THROWS_AS(roc_auc({0.1}, {nan}), DomainError);
}

TEST_CASE("roc_auc equals pair counting exactly and is symmetric", "[eval]") {
    Rng rng(606);
    for (int trial = 0; trial < 200; ++trial) {
        const auto id = random_tie_heavy_scores(rng, 1 + rng.below(30));
        const auto ood = random_tie_heavy_scores(rng, 1 + rng.below(30));
        const double auc = roc_auc(id, ood);
        REQUIRE(auc == pair_counting_auc(id, ood));       // exact: both are half-integer / n*m
        REQUIRE(auc + roc_auc(ood, id) == 1.0);           // pair-credit symmetry, exact
        REQUIRE(auc >= 0.0);
        REQUIRE(auc <= 1.0);
    }
}

TEST_CASE("roc_auc is invariant under strictly increasing transforms", "[eval]") {
    Rng rng(707);
    for (int trial = 0; trial < 50; ++trial) {
        const auto id = random_tie_heavy_scores(rng, 5 + rng.below(20));
        const auto ood = random_tie_heavy_scores(rng, 5 + rng.below(20));
        auto warp = [](std::vector<double> v) {
            for (double& x : v) x = std::exp(2.0 * x) - 3.0;
            return v;
        };
        REQUIRE(roc_auc(id, ood) == roc_auc(warp(id), warp(ood)));
    }
}

TEST_CASE("spearman_rho: monotone, anti-monotone, constant", "[eval]") {
    CHECK(spearman_rho({1, 2, 3, 4}, {10, 20, 25, 90}) == Catch::Approx(1.0).margin(1e-12));
    CHECK(spearman_rho({1, 2, 3, 4}, {9, 7, 5, 3}) == Catch::Approx(-1.0).margin(1e-12));
    CHECK(spearman_rho({1, 2, 3}, {5, 5, 5}) == 0.0);
    CHECK_THROWS_AS(spearman_rho({1, 2}, {1}), ShapeError);
    CHECK_THROWS_AS(spearman_rho({1}, {1}), ShapeError);
}

TEST_CASE("ood_compare: identical sets give delta 0 and auc 0.5", "[eval]") {
    const Dataset data = synth_blobs(3, 20, 3, 6.0, 44);
    const MlpSpec spec = make_mlp_spec(3, 4, 0.1, 3);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.seed = 9;
    const BayesModel model = train_ensemble(spec, data, cfg, 3);

    const OodComparison same = ood_compare(model, data.inputs, data.inputs, 5);
    CHECK(same.delta == 0.0);
    CHECK(same.auc == 0.5);
    CHECK(same.n_id == data.size());
    CHECK(same.n_ood == data.size());
    CHECK(same.seed == 5);
}

TEST_CASE("ood_compare: single-member ensemble scores everything zero", "[eval]") {
    const Dataset data = synth_blobs(3, 15, 3, 6.0, 45);
    const MlpSpec spec = make_mlp_spec(3, 4, 0.1, 3);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 16;
    const BayesModel model = train_ensemble(spec, data, cfg, 1);

    const Dataset far = shifted(data, 25.0);
    const OodComparison cmp = ood_compare(model, data.inputs, far.inputs);
    CHECK(cmp.mean_id == 0.0);
    CHECK(cmp.mean_ood == 0.0);
    CHECK(cmp.delta == 0.0);
    CHECK(cmp.auc == 0.5);  // all ties
}

TEST_CASE("ood_compare auc equals the pair-counting oracle on emitted scores", "[eval]") {
    const Dataset data = synth_blobs(3, 20, 4, 6.0, 46);
    const MlpSpec spec = make_mlp_spec(4, 6, 0.1, 3);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.seed = 2;
    const BayesModel model = train_ensemble(spec, data, cfg, 5);
    const Dataset far = shifted(data, 10.0);

    const std::uint64_t seed = 77;
    const OodComparison cmp = ood_compare(model, data.inputs, far.inputs, seed);

    // Recompute the scores through the same public path the comparison uses.
    auto scores = [&](const Array2& x, std::uint64_t tag) {
        const PosteriorSamples s = sample_posterior_predictive(model, x, mix_seed(seed, tag));
        return normalize_uncertainty(epistemic_uncertainty(s), s.c());
    };
    const auto id_scores = scores(data.inputs, 1);
    const auto ood_scores = scores(far.inputs, 2);
    CHECK(cmp.auc == pair_counting_auc(id_scores, ood_scores));

    long double acc = 0.0L;
    for (double v : ood_scores) acc += v;
    CHECK(cmp.mean_ood == Catch::Approx(double(acc / (long double)ood_scores.size())).margin(1e-15));
    CHECK(cmp.delta == Catch::Approx(cmp.mean_ood - cmp.mean_id).margin(1e-15));
}

TEST_CASE("ood_compare validates shapes and supports balancing", "[eval]") {
    const Dataset data = synth_blobs(2, 15, 2, 8.0, 47);
    const MlpSpec spec = make_mlp_spec(2, 4, 0.1, 2);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 16;
    const BayesModel model = train_ensemble(spec, data, cfg, 2);

    CHECK_THROWS_AS(ood_compare(model, Array2(0, 2), data.inputs), ShapeError);
    CHECK_THROWS_AS(ood_compare(model, data.inputs, Array2(3, 5)), ShapeError);

    Array2 small(10, 2);
    for (std::size_t i = 0; i < small.rows(); ++i) {
        small(i, 0) = data.inputs(i, 0) + 4.0;
        small(i, 1) = data.inputs(i, 1) + 4.0;
    }
    const OodComparison balanced = ood_compare(model, data.inputs, small, 3, true);
    CHECK(balanced.n_id == 10);
    CHECK(balanced.n_ood == 10);
    const OodComparison unbalanced = ood_compare(model, data.inputs, small, 3, false);
    CHECK(unbalanced.n_id == 30);
    CHECK(unbalanced.n_ood == 10);
    // balancing is seed-deterministic
    const OodComparison again = ood_compare(model, data.inputs, small, 3, true);
    CHECK(balanced.mean_id == again.mean_id);
    CHECK(balanced.auc == again.auc);
}

TEST_CASE("write_ood_report emits the documented JSON fields", "[eval]") {
    OodComparison cmp;
    cmp.mean_id = 0.125;
    cmp.mean_ood = 0.5;
    cmp.delta = 0.375;
    cmp.auc = 0.9;
    cmp.n_id = 20;
    cmp.n_ood = 10;
    cmp.seed = 4;
    const fs::path path = fs::temp_directory_path() / "uqforge_ood_report.json";
    write_ood_report(path.string(), cmp);

    std::ifstream in(path);
    nlohmann::json j;
    in >> j;
    CHECK(j.at("mean_id").get<double>() == 0.125);
    CHECK(j.at("mean_ood").get<double>() == 0.5);
    CHECK(j.at("delta").get<double>() == 0.375);
    CHECK(j.at("auc").get<double>() == 0.9);
    CHECK(j.at("n_id").get<std::size_t>() == 20);
    CHECK(j.at("n_ood").get<std::size_t>() == 10);
    CHECK(j.at("seed").get<std::uint64_t>() == 4);
}
