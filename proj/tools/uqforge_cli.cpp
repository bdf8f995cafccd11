// Command-line front end: train / eval-ood / grid / report.
// Exit codes: 0 success, 1 runtime failure, 2 configuration error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "uqforge/uqforge.hpp"

namespace fs = std::filesystem;
using namespace uqforge;

namespace {

struct DataDirLayout {
    DatasetRef train;
    DatasetRef test;
};

// A dataset directory is either MNIST-style IDX (train/t10k pairs) or
// CIFAR-10 binary batches (data_batch_1..5.bin + test_batch.bin).
DataDirLayout detect_data_dir(const std::string& dir) {
    if (!fs::is_directory(dir)) throw ConfigError("--data-dir " + dir + " is not a directory");
    const fs::path p(dir);
    if (fs::exists(p / "train-images-idx3-ubyte")) {
        DataDirLayout layout;
        layout.train.kind = "idx";
        layout.train.images = (p / "train-images-idx3-ubyte").string();
        layout.train.labels = (p / "train-labels-idx1-ubyte").string();
        layout.test.kind = "idx";
        layout.test.images = (p / "t10k-images-idx3-ubyte").string();
        layout.test.labels = (p / "t10k-labels-idx1-ubyte").string();
        return layout;
    }
    if (fs::exists(p / "data_batch_1.bin")) {
        DataDirLayout layout;
        layout.train.kind = "cifar10";
        for (int i = 1; i <= 5; ++i) {
            const fs::path b = p / ("data_batch_" + std::to_string(i) + ".bin");
            if (fs::exists(b)) layout.train.batches.push_back(b.string());
        }
        layout.test.kind = "cifar10";
        layout.test.batches.push_back((p / "test_batch.bin").string());
        return layout;
    }
    throw ConfigError("--data-dir " + dir +
                      ": found neither train-images-idx3-ubyte nor data_batch_1.bin");
}

// Synthetic runs draw their ID test split from the same blob family with a
// derived seed, so train/test never share samples.
DatasetRef synth_test_ref(DatasetRef train_ref) {
    train_ref.seed = mix_seed(train_ref.seed, 0x7e57);
    return train_ref;
}

struct CommonDataFlags {
    std::string data_dir;
    std::string synth;

    // Returns {train_ref, test_ref}.
    DataDirLayout resolve() const {
        if (data_dir.empty() == synth.empty())
            throw ConfigError("give exactly one of --data-dir or --synth");
        if (!data_dir.empty()) return detect_data_dir(data_dir);
        DataDirLayout layout;
        layout.train = parse_synth_spec(synth);
        layout.test = synth_test_ref(layout.train);
        return layout;
    }
};

void echo_config(const std::string& cmd, const nlohmann::json& resolved) {
    std::cout << cmd << " config: " << resolved.dump() << "\n";
}

int cmd_train(const CommonDataFlags& data_flags, const std::string& method_str, std::size_t k,
              std::size_t width, std::size_t train_size, std::size_t epochs, double lr,
              double momentum, std::size_t batch, double dropout, std::uint64_t seed,
              const std::string& out_dir, bool no_stratify) {
    const Method method = parse_method(method_str);
    const DataDirLayout layout = data_flags.resolve();
    const std::size_t resolved_k =
        k > 0 ? k : (method == Method::kEnsemble ? kDefaultEnsembleSize : kDefaultMcPasses);
    const double resolved_dropout =
        dropout >= 0.0 ? dropout
                       : (method == Method::kEnsemble ? kEnsembleDropoutRate : kMcDropoutRate);

    TrainConfig tc;
    tc.epochs = epochs;
    tc.learning_rate = lr;
    tc.momentum = momentum;
    tc.batch_size = batch;
    tc.seed = seed;
    tc.validate();
    if (resolved_dropout >= 1.0) throw ConfigError("--dropout must be < 1");

    echo_config("train", {{"method", method_name(method)},
                          {"k", resolved_k},
                          {"width", width},
                          {"train_size", train_size},
                          {"epochs", epochs},
                          {"lr", lr},
                          {"momentum", momentum},
                          {"batch", batch},
                          {"dropout", resolved_dropout},
                          {"seed", seed},
                          {"stratify", !no_stratify},
                          {"out", out_dir}});

    Dataset train_set = load(layout.train);
    const Dataset test_set = load(layout.test);
    if (train_size > 0) train_set = subset(train_set, train_size, seed, !no_stratify);

    const MlpSpec spec =
        make_mlp_spec(train_set.inputs.cols(), width, resolved_dropout, train_set.num_classes);
    BayesModel model;
    if (method == Method::kEnsemble) {
        model = train_ensemble(spec, train_set, tc, resolved_k);
    } else {
        McDropoutModel mc;
        mc.spec = spec;
        mc.passes = resolved_k;
        mc.params = train(spec, train_set, tc).params;
        model = std::move(mc);
    }
    save_model(out_dir, model);

    const PosteriorSamples samples =
        sample_posterior_predictive(model, test_set.inputs, mix_seed(seed, 1001));
    const UncertaintyReport rep = make_report(samples, test_set.labels, true);
    write_report_csv((fs::path(out_dir) / "uncertainty.csv").string(), rep);

    const nlohmann::json metrics{{"accuracy", rep.accuracy()},
                                 {"mean_total", rep.mean_total()},
                                 {"mean_aleatoric", rep.mean_aleatoric()},
                                 {"mean_epistemic", rep.mean_epistemic()},
                                 {"n_test", rep.rows.size()},
                                 {"seed", seed}};
    std::ofstream metrics_os(fs::path(out_dir) / "metrics.json");
    if (!metrics_os) throw IoError("cannot write metrics.json in " + out_dir);
    metrics_os << metrics.dump(2) << "\n";

    std::cout << "accuracy: " << rep.accuracy() << "\n";
    std::cout << "mean total uncertainty: " << rep.mean_total() << "\n";
    std::cout << "mean aleatoric uncertainty: " << rep.mean_aleatoric() << "\n";
    std::cout << "mean epistemic uncertainty: " << rep.mean_epistemic() << "\n";
    std::cout << "model written to " << out_dir << "\n";
    return 0;
}

int cmd_eval_ood(const std::string& model_dir, const CommonDataFlags& id_flags,
                 const std::string& ood_dir, const std::string& ood_synth, std::uint64_t seed,
                 bool balance, const std::string& out_path) {
    if (!fs::exists(fs::path(model_dir) / "manifest.json"))
        throw ConfigError("--model " + model_dir + " has no manifest.json");
    DatasetRef ood_ref;
    if (ood_dir.empty() == ood_synth.empty())
        throw ConfigError("give exactly one of --ood-dir or --ood-synth");
    if (!ood_dir.empty())
        ood_ref = detect_data_dir(ood_dir).test;
    else
        ood_ref = parse_synth_spec(ood_synth);

    const DataDirLayout id_layout = id_flags.resolve();
    echo_config("eval-ood", {{"model", model_dir},
                             {"seed", seed},
                             {"balance", balance},
                             {"out", out_path}});

    const BayesModel model = load_model(model_dir);
    const Dataset id_set = load(id_layout.test);
    const Dataset ood_set = load(ood_ref);
    const OodComparison cmp =
        ood_compare(model, id_set.inputs, ood_set.inputs, seed, balance);
    write_ood_report(out_path, cmp);
    std::cout << "delta: " << cmp.delta << "\n";
    std::cout << "auc: " << cmp.auc << "\n";
    std::cout << "report written to " << out_path << "\n";
    return 0;
}

int cmd_grid(const std::string& config_path, const std::string& out_dir, std::uint64_t seed,
             bool seed_given) {
    GridConfig cfg = load_grid_config(config_path);
    if (seed_given) cfg.seed = seed;
    const std::size_t workers = workers_from_env();
    nlohmann::json resolved = grid_config_to_json(cfg);
    resolved["workers"] = workers;
    resolved["out"] = out_dir;
    echo_config("grid", resolved);

    const GridResult records = run_grid(cfg, out_dir, workers, &std::cout);
    std::cout << records.size() << " records in " << (fs::path(out_dir) / "results.ndjson").string()
              << "\n";
    return 0;
}

int cmd_report(const std::string& results, const std::string& out_dir,
               const std::string& metric) {
    std::string results_file = results;
    if (fs::is_directory(results)) results_file = (fs::path(results) / "results.ndjson").string();
    if (!fs::exists(results_file)) throw ConfigError("no results file at " + results_file);
    const std::string dest = out_dir.empty() ? fs::path(results_file).parent_path().string()
                                             : out_dir;
    fs::create_directories(dest);
    echo_config("report", {{"results", results_file},
                           {"out", dest},
                           {"metric", metric.empty() ? "all" : metric}});

    const GridResult records = read_records(results_file);
    if (records.empty()) throw ConfigError(results_file + " holds no records");

    std::optional<TrendReport> trend;
    try {
        trend = trend_check(records);
    } catch (const ShapeError&) {
        // degenerate axis: render heatmaps without the trend block
    }

    std::vector<std::string> metrics;
    if (metric.empty())
        metrics.assign(kMetricNames.begin(), kMetricNames.end());
    else
        metrics.push_back(metric);

    for (const std::string& m : metrics) {
        const HeatmapMatrix hm = heatmap_matrix(records, m);
        std::ofstream csv(fs::path(dest) / ("metric_" + m + ".csv"));
        if (!csv) throw IoError("cannot write CSV in " + dest);
        csv << "train_size";
        for (std::size_t w : hm.widths) csv << ",w" << w;
        csv << "\n";
        char buf[32];
        for (std::size_t i = 0; i < hm.train_sizes.size(); ++i) {
            csv << hm.train_sizes[i];
            for (std::size_t j = 0; j < hm.widths.size(); ++j) {
                std::snprintf(buf, sizeof(buf), "%.6g", hm.values(i, j));
                csv << ',' << buf;
            }
            csv << "\n";
        }
        write_heatmap_svg((fs::path(dest) / ("heatmap_" + m + ".svg")).string(), hm, m,
                          trend ? &*trend : nullptr);
    }
    if (trend) {
        std::ofstream tj(fs::path(dest) / "trend.json");
        tj << trend_report_to_json(*trend).dump(2) << "\n";
        std::cout << "trend: rho_vs_size=" << trend->mean_rho_vs_size
                  << " (decreasing " << (trend->data_size_pass ? "PASS" : "FAIL")
                  << "), rho_vs_width=" << trend->mean_rho_vs_width << " (increasing "
                  << (trend->width_pass ? "PASS" : "FAIL") << "), hole "
                  << (trend->hole_flag ? "RAISED" : "clear") << "\n";
    }
    std::cout << metrics.size() << " metric(s) rendered to " << dest << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian uncertainty lab: ensembles & MC-dropout, "
                 "uncertainty decomposition, OOD evaluation, grid sweeps"};
    app.require_subcommand(1);

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a model and report uncertainties");
    CommonDataFlags train_data;
    std::string method = "ensemble", train_out = "model_out";
    std::size_t k = 0, width = 64, train_size = 0, epochs = 100, batch = 128;
    double lr = 0.01, momentum = 0.9, dropout = -1.0;
    std::uint64_t seed = 0;
    bool no_stratify = false;
    train_cmd->add_option("--data-dir", train_data.data_dir,
                          "Dataset directory (IDX or CIFAR-10 batches)");
    train_cmd->add_option("--synth", train_data.synth, "Synthetic blobs: c,n,dim,sep,seed[,shift]");
    train_cmd->add_option("--method", method, "ensemble | mc_dropout")->capture_default_str();
    train_cmd->add_option("--k", k, "Ensemble members / MC passes (0 = method default)");
    train_cmd->add_option("--width", width, "Hidden width (both layers)")->capture_default_str();
    train_cmd->add_option("--train-size", train_size, "Stratified subset size (0 = all)");
    train_cmd->add_option("--epochs", epochs, "Training epochs")->capture_default_str();
    train_cmd->add_option("--lr", lr, "Learning rate")->capture_default_str();
    train_cmd->add_option("--momentum", momentum, "SGD momentum")->capture_default_str();
    train_cmd->add_option("--batch", batch, "Batch size")->capture_default_str();
    train_cmd->add_option("--dropout", dropout, "Dropout rate (<0 = method default)");
    train_cmd->add_option("--seed", seed, "Base RNG seed")->capture_default_str();
    train_cmd->add_option("--out", train_out, "Output model directory")->capture_default_str();
    train_cmd->add_flag("--no-stratify", no_stratify, "Plain random subsets instead of stratified");

    // eval-ood
    auto* eval_cmd = app.add_subcommand("eval-ood", "Compare ID vs OOD epistemic uncertainty");
    CommonDataFlags eval_data;
    std::string model_dir, ood_dir, ood_synth, ood_out = "ood_report.json";
    std::uint64_t eval_seed = 0;
    bool balance = false;
    eval_cmd->add_option("--model", model_dir, "Trained model directory")->required();
    eval_cmd->add_option("--data-dir", eval_data.data_dir, "ID dataset directory");
    eval_cmd->add_option("--synth", eval_data.synth, "ID synthetic blobs: c,n,dim,sep,seed[,shift]");
    eval_cmd->add_option("--ood-dir", ood_dir, "OOD dataset directory");
    eval_cmd->add_option("--ood-synth", ood_synth, "OOD synthetic blobs: c,n,dim,sep,seed[,shift]");
    eval_cmd->add_option("--seed", eval_seed, "Sampling seed")->capture_default_str();
    eval_cmd->add_flag("--balance", balance, "Subsample the larger set to the smaller");
    eval_cmd->add_option("--out", ood_out, "Report path")->capture_default_str();

    // grid
    auto* grid_cmd = app.add_subcommand("grid", "Run the width x train-size sweep");
    std::string grid_config, grid_out = "grid_out";
    std::uint64_t grid_seed = 0;
    grid_cmd->add_option("--config", grid_config, "GridConfig JSON file")->required();
    grid_cmd->add_option("--out", grid_out, "Output directory")->capture_default_str();
    auto* grid_seed_opt = grid_cmd->add_option("--seed", grid_seed, "Override the config's seed");

    // report
    auto* report_cmd = app.add_subcommand("report", "Render heatmap CSV + SVG from grid results");
    std::string results = "grid_out", report_out, metric;
    report_cmd->add_option("--results", results, "results.ndjson file or its directory")
        ->capture_default_str();
    report_cmd->add_option("--out", report_out, "Output directory (default: alongside results)");
    report_cmd->add_option("--metric", metric, "Single metric to render (default: all)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exits 0
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (*train_cmd)
            return cmd_train(train_data, method, k, width, train_size, epochs, lr, momentum,
                             batch, dropout, seed, train_out, no_stratify);
        if (*eval_cmd)
            return cmd_eval_ood(model_dir, eval_data, ood_dir, ood_synth, eval_seed, balance,
                                ood_out);
        if (*grid_cmd) return cmd_grid(grid_config, grid_out, grid_seed, grid_seed_opt->count() > 0);
        if (*report_cmd) return cmd_report(results, report_out, metric);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
