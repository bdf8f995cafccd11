#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "uqforge/array.hpp"
#include "uqforge/bayes.hpp"
#include "uqforge/common.hpp"
#include "uqforge/dataset.hpp"
#include "uqforge/eval.hpp"
#include "uqforge/mlp.hpp"
#include "uqforge/rng.hpp"
#include "uqforge/uncertainty.hpp"

namespace uqforge {

enum class Method { kEnsemble, kMcDropout };

inline std::string method_name(Method m) {
    return m == Method::kEnsemble ? "ensemble" : "mc_dropout";
}

inline Method parse_method(const std::string& s) {
    if (s == "ensemble") return Method::kEnsemble;
    if (s == "mc_dropout") return Method::kMcDropout;
    throw ConfigError("unknown method '" + s + "' (expected ensemble or mc_dropout)");
}

/// Loadable reference to a dataset: synthetic blobs or files on disk.
/// `shift` adds a constant offset of that Euclidean norm after loading,
/// which is how configs express "same blobs, moved off-distribution".
struct DatasetRef {
    std::string kind;  // "synth" | "idx" | "cifar10"
    // synth
    std::size_t c = 3;
    std::size_t n_per_class = 100;
    std::size_t dim = 2;
    double separation = 6.0;
    std::uint64_t seed = 0;
    // idx
    std::string images, labels;
    // cifar10
    std::vector<std::string> batches;
    // any kind
    double shift = 0.0;
};

/// Accepts "c,n,dim,sep,seed" with an optional ",shift" sixth field.
inline DatasetRef parse_synth_spec(const std::string& spec) {
    DatasetRef ref;
    ref.kind = "synth";
    std::vector<double> fields;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t used = 0;
            fields.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ConfigError("bad --synth field '" + tok + "' in '" + spec + "'");
        }
    }
    if (fields.size() < 5 || fields.size() > 6)
        throw ConfigError("--synth wants c,n,dim,sep,seed[,shift], got '" + spec + "'");
    if (fields[0] < 2 || fields[1] < 1 || fields[2] < 1)
        throw ConfigError("--synth needs c >= 2, n >= 1, dim >= 1");
    ref.c = static_cast<std::size_t>(fields[0]);
    ref.n_per_class = static_cast<std::size_t>(fields[1]);
    ref.dim = static_cast<std::size_t>(fields[2]);
    ref.separation = fields[3];
    ref.seed = static_cast<std::uint64_t>(fields[4]);
    if (fields.size() == 6) ref.shift = fields[5];
    return ref;
}

inline Dataset load(const DatasetRef& ref) {
    Dataset ds;
    if (ref.kind == "synth") {
        ds = synth_blobs(ref.c, ref.n_per_class, ref.dim, ref.separation, ref.seed);
    } else if (ref.kind == "idx") {
        ds = load_idx(ref.images, ref.labels);
    } else if (ref.kind == "cifar10") {
        ds = load_cifar10(ref.batches);
    } else {
        throw ConfigError("unknown dataset kind '" + ref.kind + "'");
    }
    if (ref.shift != 0.0) ds = shifted(ds, ref.shift);
    return ds;
}

namespace detail {

inline nlohmann::json ref_to_json(const DatasetRef& r) {
    nlohmann::json j{{"kind", r.kind}};
    if (r.kind == "synth") {
        j["c"] = r.c;
        j["n_per_class"] = r.n_per_class;
        j["dim"] = r.dim;
        j["separation"] = r.separation;
        j["seed"] = r.seed;
    } else if (r.kind == "idx") {
        j["images"] = r.images;
        j["labels"] = r.labels;
    } else if (r.kind == "cifar10") {
        j["batches"] = r.batches;
    }
    if (r.shift != 0.0) j["shift"] = r.shift;
    return j;
}

inline DatasetRef ref_from_json(const nlohmann::json& j) {
    DatasetRef r;
    try {
        r.kind = j.at("kind").get<std::string>();
        if (r.kind == "synth") {
            r.c = j.at("c").get<std::size_t>();
            r.n_per_class = j.at("n_per_class").get<std::size_t>();
            r.dim = j.at("dim").get<std::size_t>();
            r.separation = j.at("separation").get<double>();
            r.seed = j.value("seed", std::uint64_t(0));
        } else if (r.kind == "idx") {
            r.images = j.at("images").get<std::string>();
            r.labels = j.at("labels").get<std::string>();
        } else if (r.kind == "cifar10") {
            r.batches = j.at("batches").get<std::vector<std::string>>();
        } else {
            throw ConfigError("unknown dataset kind '" + r.kind + "'");
        }
        r.shift = j.value("shift", 0.0);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad dataset ref: ") + e.what());
    }
    return r;
}

}  // namespace detail

/// The two-axis sweep: hidden width x training-set size, `repeats` runs per
/// cell, one Bayesian method throughout.
struct GridConfig {
    std::vector<std::size_t> widths{16, 32, 64, 128, 256, 512};
    std::vector<std::size_t> train_sizes{100, 250, 500, 1000, 2500, 5000, 10000};
    Method method = Method::kEnsemble;
    std::size_t k = 0;       // 0 = method default (10 members / 30 passes)
    double dropout = -1.0;   // <0 = method default (0.1 ensemble / 0.5 mc)
    std::size_t repeats = 1;
    std::uint64_t seed = 0;
    bool stratify = true;
    TrainConfig train_cfg;
    DatasetRef train, test_id, test_ood;

    std::size_t resolved_k() const {
        if (k > 0) return k;
        return method == Method::kEnsemble ? kDefaultEnsembleSize : kDefaultMcPasses;
    }
    double resolved_dropout() const {
        if (dropout >= 0.0) return dropout;
        return method == Method::kEnsemble ? kEnsembleDropoutRate : kMcDropoutRate;
    }

    void validate() const {
        if (widths.empty() || train_sizes.empty())
            throw ConfigError("grid: widths and train_sizes must be nonempty");
        for (std::size_t w : widths)
            if (w < 1) throw ConfigError("grid: width must be >= 1");
        for (std::size_t s : train_sizes)
            if (s < 1) throw ConfigError("grid: train_size must be >= 1");
        if (repeats < 1) throw ConfigError("grid: repeats must be >= 1");
        if (dropout > 1.0) throw ConfigError("grid: dropout must be < 1");
        train_cfg.validate();
    }
};

inline GridConfig parse_grid_config(const nlohmann::json& j) {
    GridConfig cfg;
    try {
        if (j.contains("widths")) cfg.widths = j["widths"].get<std::vector<std::size_t>>();
        if (j.contains("train_sizes"))
            cfg.train_sizes = j["train_sizes"].get<std::vector<std::size_t>>();
        if (j.contains("method")) cfg.method = parse_method(j["method"].get<std::string>());
        cfg.k = j.value("k", std::size_t(0));
        cfg.dropout = j.value("dropout", -1.0);
        cfg.repeats = j.value("repeats", std::size_t(1));
        cfg.seed = j.value("seed", std::uint64_t(0));
        cfg.stratify = j.value("stratify", true);
        cfg.train_cfg.epochs = j.value("epochs", cfg.train_cfg.epochs);
        cfg.train_cfg.learning_rate = j.value("lr", cfg.train_cfg.learning_rate);
        cfg.train_cfg.momentum = j.value("momentum", cfg.train_cfg.momentum);
        cfg.train_cfg.batch_size = j.value("batch", cfg.train_cfg.batch_size);
        cfg.train_cfg.weight_decay = j.value("weight_decay", cfg.train_cfg.weight_decay);
        cfg.train = detail::ref_from_json(j.at("train"));
        cfg.test_id = detail::ref_from_json(j.at("test_id"));
        cfg.test_ood = detail::ref_from_json(j.at("test_ood"));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad grid config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline GridConfig load_grid_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open grid config " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return parse_grid_config(j);
}

inline nlohmann::json grid_config_to_json(const GridConfig& cfg) {
    return nlohmann::json{{"widths", cfg.widths},
                          {"train_sizes", cfg.train_sizes},
                          {"method", method_name(cfg.method)},
                          {"k", cfg.resolved_k()},
                          {"dropout", cfg.resolved_dropout()},
                          {"repeats", cfg.repeats},
                          {"seed", cfg.seed},
                          {"stratify", cfg.stratify},
                          {"epochs", cfg.train_cfg.epochs},
                          {"lr", cfg.train_cfg.learning_rate},
                          {"momentum", cfg.train_cfg.momentum},
                          {"batch", cfg.train_cfg.batch_size},
                          {"weight_decay", cfg.train_cfg.weight_decay},
                          {"train", detail::ref_to_json(cfg.train)},
                          {"test_id", detail::ref_to_json(cfg.test_id)},
                          {"test_ood", detail::ref_to_json(cfg.test_ood)}};
}

/// One grid cell's metrics. Uncertainty columns are normalized means over the
/// test set; `delta` is epistemic_ood - epistemic_id by construction.
/// wall_time_s is measurement, not result: it goes to the timings sidecar and
/// never into the canonical results file, which must be byte-reproducible.
struct CellRecord {
    std::size_t width = 0;
    std::size_t train_size = 0;
    std::size_t repeat = 0;
    double epistemic_id = 0, aleatoric_id = 0, total_id = 0;
    double epistemic_ood = 0, aleatoric_ood = 0, total_ood = 0;
    double accuracy = 0;
    double delta = 0;
    double auc = 0.5;
    double wall_time_s = 0;
    std::uint64_t seed = 0;
};

using GridResult = std::vector<CellRecord>;

/// Stable per-cell seed: chained avalanche of the base seed and the cell
/// coordinates, so reordering the axes never changes any cell's stream.
inline std::uint64_t cell_seed(std::uint64_t base, std::size_t width, std::size_t train_size,
                               std::size_t repeat) {
    return mix_seed(mix_seed(mix_seed(base, width), train_size), repeat);
}

inline constexpr std::array<const char*, 9> kMetricNames{
    "epistemic_id", "aleatoric_id", "total_id",  "epistemic_ood", "aleatoric_ood",
    "total_ood",    "accuracy",     "delta",     "auc"};

inline double metric_value(const CellRecord& r, const std::string& metric) {
    if (metric == "epistemic_id") return r.epistemic_id;
    if (metric == "aleatoric_id") return r.aleatoric_id;
    if (metric == "total_id") return r.total_id;
    if (metric == "epistemic_ood") return r.epistemic_ood;
    if (metric == "aleatoric_ood") return r.aleatoric_ood;
    if (metric == "total_ood") return r.total_ood;
    if (metric == "accuracy") return r.accuracy;
    if (metric == "delta") return r.delta;
    if (metric == "auc") return r.auc;
    std::string valid;
    for (const char* m : kMetricNames) valid += std::string(" ") + m;
    throw ConfigError("unknown metric '" + metric + "'; valid:" + valid);
}

namespace detail {

inline nlohmann::json record_to_json(const CellRecord& r) {
    // nlohmann objects serialize keys alphabetically, which keeps the
    // canonical file stable without any effort here.
    return nlohmann::json{{"width", r.width},
                          {"train_size", r.train_size},
                          {"repeat", r.repeat},
                          {"epistemic_id", r.epistemic_id},
                          {"aleatoric_id", r.aleatoric_id},
                          {"total_id", r.total_id},
                          {"epistemic_ood", r.epistemic_ood},
                          {"aleatoric_ood", r.aleatoric_ood},
                          {"total_ood", r.total_ood},
                          {"accuracy", r.accuracy},
                          {"delta", r.delta},
                          {"auc", r.auc},
                          {"seed", r.seed}};
}

inline CellRecord record_from_json(const nlohmann::json& j) {
    CellRecord r;
    r.width = j.at("width").get<std::size_t>();
    r.train_size = j.at("train_size").get<std::size_t>();
    r.repeat = j.at("repeat").get<std::size_t>();
    r.epistemic_id = j.at("epistemic_id").get<double>();
    r.aleatoric_id = j.at("aleatoric_id").get<double>();
    r.total_id = j.at("total_id").get<double>();
    r.epistemic_ood = j.at("epistemic_ood").get<double>();
    r.aleatoric_ood = j.at("aleatoric_ood").get<double>();
    r.total_ood = j.at("total_ood").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.delta = j.at("delta").get<double>();
    r.auc = j.at("auc").get<double>();
    r.seed = j.value("seed", std::uint64_t(0));
    return r;
}

using CellKey = std::tuple<std::size_t, std::size_t, std::size_t>;  // size, width, repeat

inline CellKey key_of(const CellRecord& r) { return {r.train_size, r.width, r.repeat}; }

}  // namespace detail

/// Parse an NDJSON results file. A partial final line (interrupted append) is
/// dropped silently; damage anywhere else is an error.
inline GridResult read_records(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) lines.push_back(line);
    GridResult out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        try {
            out.push_back(detail::record_from_json(nlohmann::json::parse(lines[i])));
        } catch (const nlohmann::json::exception& e) {
            if (i + 1 == lines.size()) break;  // truncated tail from a crash
            throw IoError(path + " line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return out;
}

inline void sort_records(GridResult& records) {
    std::sort(records.begin(), records.end(), [](const CellRecord& a, const CellRecord& b) {
        return detail::key_of(a) < detail::key_of(b);
    });
}

/// Grid values for one metric, averaged over repeats. Rows follow ascending
/// train sizes, columns ascending widths; absent cells stay NaN.
struct HeatmapMatrix {
    std::vector<std::size_t> widths;
    std::vector<std::size_t> train_sizes;
    Array2 values{0, 0};
};

inline HeatmapMatrix heatmap_matrix(const GridResult& records, const std::string& metric) {
    if (records.empty()) throw ShapeError("heatmap_matrix: no records");
    HeatmapMatrix hm;
    for (const auto& r : records) {
        hm.widths.push_back(r.width);
        hm.train_sizes.push_back(r.train_size);
    }
    auto uniq = [](std::vector<std::size_t>& v) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    uniq(hm.widths);
    uniq(hm.train_sizes);
    hm.values = Array2(hm.train_sizes.size(), hm.widths.size());
    Array2 counts(hm.train_sizes.size(), hm.widths.size());
    for (const auto& r : records) {
        const std::size_t i =
            std::lower_bound(hm.train_sizes.begin(), hm.train_sizes.end(), r.train_size) -
            hm.train_sizes.begin();
        const std::size_t j =
            std::lower_bound(hm.widths.begin(), hm.widths.end(), r.width) - hm.widths.begin();
        hm.values(i, j) += metric_value(r, metric);
        counts(i, j) += 1.0;
    }
    for (std::size_t i = 0; i < hm.values.rows(); ++i)
        for (std::size_t j = 0; j < hm.values.cols(); ++j)
            hm.values(i, j) = counts(i, j) > 0.0
                                  ? hm.values(i, j) / counts(i, j)
                                  : std::numeric_limits<double>::quiet_NaN();
    return hm;
}

/// Trend diagnostics over mean ID epistemic uncertainty: rank correlation
/// along each axis, aggregate pass flags for the two theoretically expected
/// monotonicities, and the "hole" signature (big model + little data landing
/// below the grid median instead of above it).
struct TrendReport {
    std::vector<std::size_t> widths;
    std::vector<std::size_t> train_sizes;
    std::vector<double> rho_vs_size;   // one per width: epistemic vs train size
    std::vector<double> rho_vs_width;  // one per train size: epistemic vs width
    double mean_rho_vs_size = 0.0;
    double mean_rho_vs_width = 0.0;
    bool data_size_pass = false;  // expected: decreasing in train size
    bool width_pass = false;      // expected: increasing in width
    bool hole_flag = false;       // corner (max width, min size) below grid median
    double corner_value = std::numeric_limits<double>::quiet_NaN();
    double grid_median = std::numeric_limits<double>::quiet_NaN();
};

inline TrendReport trend_check(const GridResult& records) {
    const HeatmapMatrix hm = heatmap_matrix(records, "epistemic_id");
    if (hm.widths.size() < 2 || hm.train_sizes.size() < 2)
        throw ShapeError("trend_check: need >= 2 values per axis");
    TrendReport rep;
    rep.widths = hm.widths;
    rep.train_sizes = hm.train_sizes;

    auto finite_pairs_rho = [](const std::vector<double>& axis, const std::vector<double>& vals) {
        std::vector<double> a, v;
        for (std::size_t i = 0; i < vals.size(); ++i)
            if (std::isfinite(vals[i])) {
                a.push_back(axis[i]);
                v.push_back(vals[i]);
            }
        if (a.size() < 2) return std::numeric_limits<double>::quiet_NaN();
        return spearman_rho(a, v);
    };

    std::vector<double> size_axis(hm.train_sizes.begin(), hm.train_sizes.end());
    std::vector<double> width_axis(hm.widths.begin(), hm.widths.end());
    for (std::size_t j = 0; j < hm.widths.size(); ++j) {
        std::vector<double> column(hm.train_sizes.size());
        for (std::size_t i = 0; i < hm.train_sizes.size(); ++i) column[i] = hm.values(i, j);
        rep.rho_vs_size.push_back(finite_pairs_rho(size_axis, column));
    }
    for (std::size_t i = 0; i < hm.train_sizes.size(); ++i) {
        std::vector<double> row(hm.values.row(i).begin(), hm.values.row(i).end());
        rep.rho_vs_width.push_back(finite_pairs_rho(width_axis, row));
    }

    auto mean_finite = [](const std::vector<double>& v) {
        double acc = 0.0;
        std::size_t n = 0;
        for (double x : v)
            if (std::isfinite(x)) {
                acc += x;
                ++n;
            }
        return n ? acc / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
    };
    rep.mean_rho_vs_size = mean_finite(rep.rho_vs_size);
    rep.mean_rho_vs_width = mean_finite(rep.rho_vs_width);
    rep.data_size_pass = std::isfinite(rep.mean_rho_vs_size) && rep.mean_rho_vs_size < 0.0;
    rep.width_pass = std::isfinite(rep.mean_rho_vs_width) && rep.mean_rho_vs_width > 0.0;

    std::vector<double> cells;
    for (std::size_t i = 0; i < hm.values.rows(); ++i)
        for (std::size_t j = 0; j < hm.values.cols(); ++j)
            if (std::isfinite(hm.values(i, j))) cells.push_back(hm.values(i, j));
    if (!cells.empty()) {
        std::sort(cells.begin(), cells.end());
        rep.grid_median = quantile_sorted(cells, 0.5);
        rep.corner_value = hm.values(0, hm.widths.size() - 1);  // min size, max width
        rep.hole_flag = std::isfinite(rep.corner_value) && rep.corner_value < rep.grid_median;
    }
    return rep;
}

inline nlohmann::json trend_report_to_json(const TrendReport& rep) {
    return nlohmann::json{{"widths", rep.widths},
                          {"train_sizes", rep.train_sizes},
                          {"rho_vs_size", rep.rho_vs_size},
                          {"rho_vs_width", rep.rho_vs_width},
                          {"mean_rho_vs_size", rep.mean_rho_vs_size},
                          {"mean_rho_vs_width", rep.mean_rho_vs_width},
                          {"data_size_pass", rep.data_size_pass},
                          {"width_pass", rep.width_pass},
                          {"hole_flag", rep.hole_flag},
                          {"corner_value", rep.corner_value},
                          {"grid_median", rep.grid_median}};
}

/// Concurrency cap: UQFORGE_WORKERS when set, else the hardware count.
inline std::size_t workers_from_env() {
    const char* env = std::getenv("UQFORGE_WORKERS");
    if (env && *env) {
        char* end = nullptr;
        const unsigned long v = std::strtoul(env, &end, 10);
        if (!end || *end != '\0' || v < 1)
            throw ConfigError(std::string("UQFORGE_WORKERS must be a positive integer, got '") +
                              env + "'");
        return static_cast<std::size_t>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

/// Writes <dir>/metric_<name>.csv for every metric: header row of widths,
/// one row per train size, 6 significant digits, "nan" for absent cells.
inline void write_metric_csvs(const std::string& dir, const GridResult& records) {
    namespace fs = std::filesystem;
    for (const char* metric : kMetricNames) {
        const HeatmapMatrix hm = heatmap_matrix(records, metric);
        std::ofstream os(fs::path(dir) / (std::string("metric_") + metric + ".csv"));
        if (!os) throw IoError("cannot write metric CSV in " + dir);
        os << "train_size";
        for (std::size_t w : hm.widths) os << ",w" << w;
        os << "\n";
        char buf[32];
        for (std::size_t i = 0; i < hm.train_sizes.size(); ++i) {
            os << hm.train_sizes[i];
            for (std::size_t j = 0; j < hm.widths.size(); ++j) {
                std::snprintf(buf, sizeof(buf), "%.6g", hm.values(i, j));
                os << ',' << buf;
            }
            os << "\n";
        }
    }
}

namespace detail {

struct CellOutcome {
    CellRecord record;
    bool ok = false;
    std::string error;
};

inline CellRecord run_cell(const GridConfig& cfg, const Dataset& train_full,
                           const Dataset& test_id, const Dataset& test_ood, std::size_t width,
                           std::size_t train_size, std::size_t repeat) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t seed = cell_seed(cfg.seed, width, train_size, repeat);

    const Dataset train_set = subset(train_full, train_size, seed, cfg.stratify);
    const MlpSpec spec = make_mlp_spec(train_full.inputs.cols(), width, cfg.resolved_dropout(),
                                       train_full.num_classes);
    TrainConfig tc = cfg.train_cfg;
    tc.seed = seed;

    BayesModel model;
    if (cfg.method == Method::kEnsemble) {
        model = train_ensemble(spec, train_set, tc, cfg.resolved_k());
    } else {
        McDropoutModel mc;
        mc.spec = spec;
        mc.passes = cfg.resolved_k();
        mc.params = train(spec, train_set, tc).params;
        model = std::move(mc);
    }

    const PosteriorSamples id_samples =
        sample_posterior_predictive(model, test_id.inputs, mix_seed(seed, 101));
    const PosteriorSamples ood_samples =
        sample_posterior_predictive(model, test_ood.inputs, mix_seed(seed, 102));
    const UncertaintyReport id_rep = make_report(id_samples, test_id.labels, true);
    const UncertaintyReport ood_rep = make_report(ood_samples, {}, true);

    CellRecord r;
    r.width = width;
    r.train_size = train_size;
    r.repeat = repeat;
    r.seed = seed;
    r.epistemic_id = id_rep.mean_epistemic();
    r.aleatoric_id = id_rep.mean_aleatoric();
    r.total_id = id_rep.mean_total();
    r.epistemic_ood = ood_rep.mean_epistemic();
    r.aleatoric_ood = ood_rep.mean_aleatoric();
    r.total_ood = ood_rep.mean_total();
    r.accuracy = id_rep.accuracy();
    r.delta = r.epistemic_ood - r.epistemic_id;
    std::vector<double> id_scores(id_rep.rows.size()), ood_scores(ood_rep.rows.size());
    for (std::size_t i = 0; i < id_rep.rows.size(); ++i) id_scores[i] = id_rep.rows[i].epistemic;
    for (std::size_t i = 0; i < ood_rep.rows.size(); ++i)
        ood_scores[i] = ood_rep.rows[i].epistemic;
    r.auc = roc_auc(id_scores, ood_scores);
    r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

}  // namespace detail

/// Run (or resume) the sweep. Completed cells found in <out_dir>/results.ndjson
/// are skipped; fresh records are appended as they finish (a crash costs at
/// most the in-flight cells) and the file is rewritten in canonical order at
/// the end, so an interrupted-then-resumed run converges to the same bytes as
/// an uninterrupted one. Per-cell failures land in errors.log and the sweep
/// carries on. Returns the canonical record list.
inline GridResult run_grid(const GridConfig& cfg, const std::string& out_dir,
                           std::size_t workers = 1, std::ostream* progress = nullptr) {
    namespace fs = std::filesystem;
    cfg.validate();
    fs::create_directories(out_dir);
    const std::string results_path = (fs::path(out_dir) / "results.ndjson").string();
    const std::string timings_path = (fs::path(out_dir) / "timings.ndjson").string();
    const std::string errors_path = (fs::path(out_dir) / "errors.log").string();

    const Dataset train_full = load(cfg.train);
    const Dataset test_id = load(cfg.test_id);
    const Dataset test_ood = load(cfg.test_ood);
    if (test_id.inputs.cols() != train_full.inputs.cols() ||
        test_ood.inputs.cols() != train_full.inputs.cols())
        throw ConfigError("grid: train/test feature dimensions disagree");
    for (std::size_t s : cfg.train_sizes)
        if (s > train_full.inputs.rows())
            throw ConfigError("grid: train_size " + std::to_string(s) + " exceeds train set (" +
                              std::to_string(train_full.inputs.rows()) + ")");

    // Resume: keep prior records that belong to the current grid, first wins.
    std::map<detail::CellKey, CellRecord> done;
    if (fs::exists(results_path)) {
        for (const auto& r : read_records(results_path)) {
            const bool on_grid =
                std::find(cfg.widths.begin(), cfg.widths.end(), r.width) != cfg.widths.end() &&
                std::find(cfg.train_sizes.begin(), cfg.train_sizes.end(), r.train_size) !=
                    cfg.train_sizes.end() &&
                r.repeat < cfg.repeats;
            if (on_grid) done.emplace(detail::key_of(r), r);
        }
    }

    struct Job {
        std::size_t width, train_size, repeat;
    };
    std::vector<Job> jobs;
    for (std::size_t s : cfg.train_sizes)
        for (std::size_t w : cfg.widths)
            for (std::size_t rep = 0; rep < cfg.repeats; ++rep)
                if (!done.count({s, w, rep})) jobs.push_back({w, s, rep});

    std::ofstream results_out(results_path, std::ios::app);
    std::ofstream timings_out(timings_path, std::ios::app);
    if (!results_out || !timings_out) throw IoError("cannot open output files in " + out_dir);
    std::mutex sink_mu;
    std::atomic<std::size_t> next{0};
    std::vector<std::pair<detail::CellKey, std::string>> failures;

    auto worker_loop = [&] {
        for (std::size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1)) {
            const Job& job = jobs[i];
            detail::CellOutcome outcome;
            try {
                outcome.record = detail::run_cell(cfg, train_full, test_id, test_ood, job.width,
                                                  job.train_size, job.repeat);
                outcome.ok = true;
            } catch (const std::exception& e) {
                outcome.error = e.what();
            }
            std::lock_guard<std::mutex> lock(sink_mu);
            if (outcome.ok) {
                const auto& r = outcome.record;
                results_out << detail::record_to_json(r).dump() << "\n" << std::flush;
                timings_out << nlohmann::json{{"width", r.width},
                                              {"train_size", r.train_size},
                                              {"repeat", r.repeat},
                                              {"wall_time_s", r.wall_time_s}}
                                   .dump()
                            << "\n"
                            << std::flush;
                done.emplace(detail::key_of(r), r);
                if (progress)
                    *progress << "cell width=" << r.width << " size=" << r.train_size
                              << " repeat=" << r.repeat << " acc=" << r.accuracy
                              << " epi_id=" << r.epistemic_id << " auc=" << r.auc << " ("
                              << r.wall_time_s << "s)\n";
            } else {
                failures.emplace_back(detail::CellKey{job.train_size, job.width, job.repeat},
                                      outcome.error);
                if (progress)
                    *progress << "cell width=" << job.width << " size=" << job.train_size
                              << " repeat=" << job.repeat << " FAILED: " << outcome.error << "\n";
            }
        }
    };

    workers = std::max<std::size_t>(1, std::min(workers, jobs.empty() ? 1 : jobs.size()));
    if (workers == 1) {
        worker_loop();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker_loop);
        for (auto& t : pool) t.join();
    }
    results_out.close();
    timings_out.close();

    if (!failures.empty()) {
        std::sort(failures.begin(), failures.end());
        std::ofstream errs(errors_path, std::ios::app);
        for (const auto& [key, msg] : failures)
            errs << "width=" << std::get<1>(key) << " train_size=" << std::get<0>(key)
                 << " repeat=" << std::get<2>(key) << ": " << msg << "\n";
    }

    GridResult records;
    records.reserve(done.size());
    for (const auto& [key, r] : done) records.push_back(r);  // map order == canonical order

    std::ofstream rewrite(results_path, std::ios::trunc);
    if (!rewrite) throw IoError("cannot rewrite " + results_path);
    for (const auto& r : records) rewrite << detail::record_to_json(r).dump() << "\n";
    rewrite.close();

    if (!records.empty()) write_metric_csvs(out_dir, records);
    return records;
}

}  // namespace uqforge
