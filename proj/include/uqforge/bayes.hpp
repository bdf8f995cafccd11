#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "uqforge/array.hpp"
#include "uqforge/common.hpp"
#include "uqforge/dataset.hpp"
#include "uqforge/mlp.hpp"
#include "uqforge/model_io.hpp"
#include "uqforge/rng.hpp"

namespace uqforge {

// Reference configuration for the two predictor families.
inline constexpr std::size_t kDefaultEnsembleSize = 10;
inline constexpr std::size_t kDefaultMcPasses = 30;
inline constexpr double kEnsembleDropoutRate = 0.1;
inline constexpr double kMcDropoutRate = 0.5;

/// K sampled predictive distributions: a K x N x C stack where every N x C
/// slice is row-stochastic. Immutable after construction.
class PosteriorSamples {
public:
    static PosteriorSamples from_slices(std::vector<Array2> slices) {
        if (slices.empty()) throw DomainError("PosteriorSamples: need k >= 1");
        const std::size_t n = slices.front().rows(), c = slices.front().cols();
        if (c < 1) throw ShapeError("PosteriorSamples: zero classes");
        for (const auto& s : slices) {
            if (s.rows() != n || s.cols() != c)
                throw ShapeError("PosteriorSamples: slices disagree on shape");
            for (std::size_t i = 0; i < n; ++i) {
                double sum = 0.0;
                for (double v : s.row(i)) {
                    if (v < -1e-9 || v > 1.0 + 1e-9)
                        throw DomainError("PosteriorSamples: entry outside [0,1]");
                    sum += v;
                }
                if (std::abs(sum - 1.0) > 1e-9)
                    throw DomainError("PosteriorSamples: row sums to " + std::to_string(sum));
            }
        }
        return PosteriorSamples(std::move(slices));
    }

    std::size_t k() const { return slices_.size(); }
    std::size_t n() const { return slices_.front().rows(); }
    std::size_t c() const { return slices_.front().cols(); }
    const Array2& slice(std::size_t i) const { return slices_[i]; }

private:
    explicit PosteriorSamples(std::vector<Array2> slices) : slices_(std::move(slices)) {}
    std::vector<Array2> slices_;
};

/// K independently trained networks treated as posterior samples.
struct EnsembleModel {
    MlpSpec spec;
    std::vector<ModelParams> members;
    std::vector<std::uint64_t> member_seeds;
};

/// One network evaluated with dropout kept stochastic; each forward pass is
/// a posterior sample.
struct McDropoutModel {
    MlpSpec spec;
    ModelParams params;
    std::size_t passes = kDefaultMcPasses;
};

/// Train k members independently. Member i runs with seed base+i, which
/// separates both its initialization and its shuffle stream. Members may
/// train concurrently (`workers` > 1); results are ordered by index either way.
inline EnsembleModel train_ensemble(const MlpSpec& spec, const Dataset& data,
                                    const TrainConfig& cfg, std::size_t k,
                                    std::size_t workers = 1) {
    if (k < 1) throw DomainError("train_ensemble: k must be >= 1");
    EnsembleModel model;
    model.spec = spec;
    model.members.resize(k);
    model.member_seeds.resize(k);
    for (std::size_t i = 0; i < k; ++i) model.member_seeds[i] = cfg.seed + i;

    auto train_member = [&](std::size_t i) {
        TrainConfig member_cfg = cfg;
        member_cfg.seed = model.member_seeds[i];
        model.members[i] = train(spec, data, member_cfg).params;
    };

    workers = std::min(workers == 0 ? std::size_t(1) : workers, k);
    if (workers <= 1) {
        for (std::size_t i = 0; i < k; ++i) train_member(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < k; i = next.fetch_add(1))
                    train_member(i);
            });
        for (auto& t : pool) t.join();
    }
    return model;
}

/// One eval-mode pass per member, softmaxed; slice order is member order.
inline PosteriorSamples sample_posterior_predictive(const EnsembleModel& model, const Array2& x) {
    std::vector<Array2> slices;
    slices.reserve(model.members.size());
    for (const auto& member : model.members)
        slices.push_back(softmax_rows(forward(member, model.spec, x, RunMode::kEval)));
    return PosteriorSamples::from_slices(std::move(slices));
}

/// K stochastic-dropout passes with fresh masks from a stream seeded here;
/// slice order is pass order, so one seed pins the whole stack.
inline PosteriorSamples sample_posterior_predictive(const McDropoutModel& model, const Array2& x,
                                                    std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Array2> slices;
    slices.reserve(model.passes);
    for (std::size_t pass = 0; pass < model.passes; ++pass)
        slices.push_back(softmax_rows(forward(model.params, model.spec, x, RunMode::kMcDropout, &rng)));
    return PosteriorSamples::from_slices(std::move(slices));
}

/// Elementwise mean over the K slices. Accumulation in extended precision:
/// for k <= 2^11 the column sum of identical values is exact, so identical
/// slices yield a mean bit-equal to the slice and downstream epistemic
/// uncertainty collapses to exactly zero, as the definitions require.
inline Array2 predictive_mean(const PosteriorSamples& samples) {
    Array2 mean(samples.n(), samples.c());
    for (std::size_t i = 0; i < samples.n(); ++i) {
        for (std::size_t j = 0; j < samples.c(); ++j) {
            long double acc = 0.0L;
            for (std::size_t s = 0; s < samples.k(); ++s) acc += samples.slice(s)(i, j);
            mean(i, j) = static_cast<double>(acc / static_cast<long double>(samples.k()));
        }
    }
    return mean;
}

// --- persistence: a model is a directory of UQF1 weight files plus manifest.json ---

namespace detail {

inline nlohmann::json spec_to_json(const MlpSpec& spec) {
    nlohmann::json hidden = nlohmann::json::array();
    for (const auto& h : spec.hidden)
        hidden.push_back({{"width", h.width}, {"dropout", h.dropout_rate}});
    return {{"input_dim", spec.input_dim}, {"hidden", hidden}, {"output_dim", spec.output_dim}};
}

inline MlpSpec spec_from_json(const nlohmann::json& j) {
    MlpSpec spec;
    spec.input_dim = j.at("input_dim").get<std::size_t>();
    spec.output_dim = j.at("output_dim").get<std::size_t>();
    for (const auto& h : j.at("hidden"))
        spec.hidden.push_back({h.at("width").get<std::size_t>(), h.at("dropout").get<double>()});
    spec.validate();
    return spec;
}

}  // namespace detail

using BayesModel = std::variant<EnsembleModel, McDropoutModel>;

inline PosteriorSamples sample_posterior_predictive(const BayesModel& model, const Array2& x,
                                                    std::uint64_t seed) {
    if (const auto* ens = std::get_if<EnsembleModel>(&model))
        return sample_posterior_predictive(*ens, x);
    return sample_posterior_predictive(std::get<McDropoutModel>(model), x, seed);
}

inline const MlpSpec& model_spec(const BayesModel& model) {
    if (const auto* ens = std::get_if<EnsembleModel>(&model)) return ens->spec;
    return std::get<McDropoutModel>(model).spec;
}

inline void save_model(const std::string& dir, const BayesModel& model) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["format"] = "uqforge-model";
    manifest["version"] = 1;
    if (const auto* ens = std::get_if<EnsembleModel>(&model)) {
        manifest["method"] = "ensemble";
        manifest["k"] = ens->members.size();
        manifest["seeds"] = ens->member_seeds;
        manifest["spec"] = detail::spec_to_json(ens->spec);
        std::vector<std::string> files;
        for (std::size_t i = 0; i < ens->members.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "member_%03zu.uqf", i);
            save_params((fs::path(dir) / name).string(), ens->members[i]);
            files.emplace_back(name);
        }
        manifest["members"] = files;
    } else {
        const auto& mc = std::get<McDropoutModel>(model);
        manifest["method"] = "mc_dropout";
        manifest["k"] = mc.passes;
        manifest["spec"] = detail::spec_to_json(mc.spec);
        manifest["weights"] = "model.uqf";
        save_params((fs::path(dir) / "model.uqf").string(), mc.params);
    }
    std::ofstream os(fs::path(dir) / "manifest.json");
    if (!os) throw IoError("cannot write manifest in " + dir);
    os << manifest.dump(2) << "\n";
}

inline BayesModel load_model(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto manifest_path = fs::path(dir) / "manifest.json";
    std::ifstream is(manifest_path);
    if (!is) throw IoError("cannot open " + manifest_path.string());
    nlohmann::json manifest;
    try {
        is >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(manifest_path.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "uqforge-model")
        throw IoError(manifest_path.string() + ": not a uqforge model manifest");
    const MlpSpec spec = detail::spec_from_json(manifest.at("spec"));
    const std::string method = manifest.at("method").get<std::string>();
    if (method == "ensemble") {
        EnsembleModel ens;
        ens.spec = spec;
        for (const auto& f : manifest.at("members")) {
            ens.members.push_back(load_params((fs::path(dir) / f.get<std::string>()).string()));
            if (!ens.members.back().matches(spec))
                throw IoError(dir + ": member weights do not match manifest spec");
        }
        if (manifest.contains("seeds"))
            ens.member_seeds = manifest["seeds"].get<std::vector<std::uint64_t>>();
        if (ens.members.empty()) throw IoError(dir + ": ensemble manifest lists no members");
        return ens;
    }
    if (method == "mc_dropout") {
        McDropoutModel mc;
        mc.spec = spec;
        mc.passes = manifest.at("k").get<std::size_t>();
        mc.params = load_params((fs::path(dir) / manifest.at("weights").get<std::string>()).string());
        if (!mc.params.matches(spec)) throw IoError(dir + ": weights do not match manifest spec");
        return mc;
    }
    throw IoError(dir + ": unknown method '" + method + "'");
}

}  // namespace uqforge
