#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "uqforge/array.hpp"
#include "uqforge/common.hpp"
#include "uqforge/dataset.hpp"
#include "uqforge/mlp.hpp"
#include "uqforge/model_io.hpp"
#include "uqforge/rng.hpp"

using namespace uqforge;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
    const fs::path dir = fs::temp_directory_path() / (std::string("uqforge_mlp_") + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("MlpSpec validation and layer dims", "[mlp]") {
    const MlpSpec spec = make_mlp_spec(784, 64, 0.1, 10);
    REQUIRE(spec.hidden.size() == 2);
    CHECK(spec.hidden[0].width == 64);
    CHECK(spec.hidden[1].dropout_rate == 0.1);
    const auto dims = spec.layer_dims();
    REQUIRE(dims.size() == 3);
    CHECK(dims[0] == std::pair<std::size_t, std::size_t>{64, 784});
    CHECK(dims[1] == std::pair<std::size_t, std::size_t>{64, 64});
    CHECK(dims[2] == std::pair<std::size_t, std::size_t>{10, 64});

    CHECK_THROWS_AS((MlpSpec{0, {}, 3}.validate()), DomainError);
    CHECK_THROWS_AS((MlpSpec{4, {{0, 0.0}}, 3}.validate()), DomainError);
    CHECK_THROWS_AS((MlpSpec{4, {{2, 1.0}}, 3}.validate()), DomainError);
    CHECK_THROWS_AS((MlpSpec{4, {{2, -0.1}}, 3}.validate()), DomainError);
}

TEST_CASE("param_count counts weights plus biases", "[mlp]") {
    const MlpSpec spec{4, {{2, 0.0}}, 3};
    Rng rng(1);
    const ModelParams p = init_params(spec, rng);
    // (2*4 + 2) + (3*2 + 3)
    CHECK(p.param_count() == 19);
    CHECK(p.matches(spec));
    CHECK_FALSE(p.matches(make_mlp_spec(4, 2, 0.0, 3)));
}

TEST_CASE("init_params is Glorot-bounded, zero-biased, seed-deterministic", "[mlp]") {
    const MlpSpec spec = make_mlp_spec(6, 5, 0.0, 4);
    Rng a(42), b(42), c(43);
    const ModelParams pa = init_params(spec, a);
    const ModelParams pb = init_params(spec, b);
    const ModelParams pc = init_params(spec, c);
    CHECK(bit_equal(pa, pb));
    CHECK_FALSE(bit_equal(pa, pc));
    for (std::size_t l = 0; l < pa.weights.size(); ++l) {
        const auto& w = pa.weights[l];
        const double bound = std::sqrt(6.0 / double(w.rows() + w.cols()));
        for (std::size_t i = 0; i < w.size(); ++i) {
            REQUIRE(std::abs(w.data()[i]) <= bound);
        }
        for (double bias : pa.biases[l]) REQUIRE(bias == 0.0);
    }
}

TEST_CASE("zero parameters give uniform softmax output", "[mlp]") {
    const MlpSpec spec = make_mlp_spec(3, 4, 0.0, 10);
    const ModelParams zeros = ModelParams::zeros(spec);
    const Array2 x = Array2::from_rows({{0.5, -1.0, 2.0}});
    const Array2 logits = forward(zeros, spec, x, RunMode::kEval);
    for (std::size_t j = 0; j < 10; ++j) REQUIRE(logits(0, j) == 0.0);
    const Array2 probs = softmax_rows(logits);
    for (std::size_t j = 0; j < 10; ++j) REQUIRE(probs(0, j) == Catch::Approx(0.1).margin(1e-15));
}

TEST_CASE("rate-0 dropout is bit-identical to eval mode", "[mlp]") {
    const MlpSpec spec = make_mlp_spec(5, 8, 0.0, 3);
    Rng init(7);
    const ModelParams p = init_params(spec, init);
    Array2 x(4, 5);
    Rng data(8);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = data.uniform(-1.0, 1.0);

    const Array2 eval_logits = forward(p, spec, x, RunMode::kEval);
    Rng rng_train(9), rng_mc(10);
    CHECK(bit_equal(forward(p, spec, x, RunMode::kTrain, &rng_train), eval_logits));
    CHECK(bit_equal(forward(p, spec, x, RunMode::kMcDropout, &rng_mc), eval_logits));
    // rate 0 layers draw nothing: the streams are untouched
    CHECK(rng_train.next_u64() == Rng(9).next_u64());
}

TEST_CASE("mc_dropout forward is deterministic given the rng state", "[mlp]") {
    const MlpSpec spec = make_mlp_spec(5, 8, 0.4, 3);
    Rng init(7);
    const ModelParams p = init_params(spec, init);
    Array2 x(2, 5);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = 0.3 * double(i) - 0.5;

    Rng r1(99), r2(99);
    const Array2 a = forward(p, spec, x, RunMode::kMcDropout, &r1);
    const Array2 b = forward(p, spec, x, RunMode::kMcDropout, &r2);
    CHECK(bit_equal(a, b));
    // and a different mask stream gives different logits
    Rng r3(100);
    CHECK_FALSE(bit_equal(forward(p, spec, x, RunMode::kMcDropout, &r3), a));
    // active dropout without an rng is a caller bug
    CHECK_THROWS_AS(forward(p, spec, x, RunMode::kTrain, nullptr), DomainError);
    // shape mismatch
    Array2 bad(2, 4);
    CHECK_THROWS_AS(forward(p, spec, bad, RunMode::kEval), ShapeError);
}

TEST_CASE("inverted dropout is unbiased at the dropout site", "[mlp]") {
    // E[mask * z / keep] == z holds at the unit where dropout applies
    // (pre-ReLU). Averaged over many masks the cached post-dropout values
    // must approach the eval-mode linear output within 2%.
    const MlpSpec spec{3, {{6, 0.3}}, 2};
    Rng init(5);
    const ModelParams p = init_params(spec, init);
    const Array2 x = Array2::from_rows({{1.0, -0.7, 0.4}});

    ForwardCache eval_cache;
    forward(p, spec, x, RunMode::kEval, nullptr, &eval_cache);
    const Array2& eval_pre = eval_cache.pre_relu[0];

    const int passes = 30000;
    Array2 mean(1, 6);
    Rng rng(12345);
    for (int t = 0; t < passes; ++t) {
        ForwardCache cache;
        forward(p, spec, x, RunMode::kTrain, &rng, &cache);
        for (std::size_t j = 0; j < 6; ++j) mean(0, j) += cache.pre_relu[0](0, j);
    }
    for (std::size_t j = 0; j < 6; ++j) {
        mean(0, j) /= passes;
        REQUIRE(std::abs(eval_pre(0, j)) > 1e-3);  // fixture sanity: units are live
        REQUIRE(mean(0, j) == Catch::Approx(eval_pre(0, j)).epsilon(0.02));
    }
}

TEST_CASE("cross_entropy of the uniform output is ln C", "[mlp]") {
    Array2 logits(4, 10);  // all-zero logits = uniform softmax
    const std::vector<int> labels{0, 3, 7, 9};
    CHECK(cross_entropy(logits, labels) == Catch::Approx(2.302585092994046).margin(1e-12));

    // perfect prediction: huge margin drives the loss to 0
    Array2 sharp(1, 3);
    sharp(0, 1) = 1000.0;
    CHECK(cross_entropy(sharp, {1}) == Catch::Approx(0.0).margin(1e-9));

    CHECK_THROWS_AS(cross_entropy(logits, {0, 1}), ShapeError);
    CHECK_THROWS_AS(cross_entropy(Array2(0, 3), {}), ShapeError);
    CHECK_THROWS_AS(cross_entropy(logits, std::vector<int>{0, 3, 7, 10}), DomainError);
}

TEST_CASE("backprop matches central finite differences on a 4-2-3 net", "[mlp]") {
    const MlpSpec spec{4, {{2, 0.0}}, 3};
    Rng init(77);
    ModelParams p = init_params(spec, init);
    Array2 x(3, 4);
    Rng data(78);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = data.uniform(-1.5, 1.5);
    const std::vector<int> labels{0, 2, 1};

    const LossGrads lg = loss_and_grads(p, spec, x, labels, nullptr, RunMode::kEval);
    const double eps = 1e-5;
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        for (std::size_t i = 0; i < p.weights[l].size(); ++i) {
            double& w = p.weights[l].data()[i];
            const double keep = w;
            w = keep + eps;
            const double up = loss_and_grads(p, spec, x, labels, nullptr, RunMode::kEval).loss;
            w = keep - eps;
            const double dn = loss_and_grads(p, spec, x, labels, nullptr, RunMode::kEval).loss;
            w = keep;
            const double fd = (up - dn) / (2 * eps);
            const double analytic = lg.grads.weights[l].data()[i];
            const double tol = std::max(1e-7, 1e-4 * std::abs(fd));
            REQUIRE(std::abs(analytic - fd) <= tol);
        }
        for (std::size_t i = 0; i < p.biases[l].size(); ++i) {
            double& b = p.biases[l][i];
            const double keep = b;
            b = keep + eps;
            const double up = loss_and_grads(p, spec, x, labels, nullptr, RunMode::kEval).loss;
            b = keep - eps;
            const double dn = loss_and_grads(p, spec, x, labels, nullptr, RunMode::kEval).loss;
            b = keep;
            const double fd = (up - dn) / (2 * eps);
            const double tol = std::max(1e-7, 1e-4 * std::abs(fd));
            REQUIRE(std::abs(lg.grads.biases[l][i] - fd) <= tol);
        }
    }
}

TEST_CASE("backprop through active dropout checks out with replayed masks", "[mlp]") {
    const MlpSpec spec{3, {{4, 0.25}}, 2};
    Rng init(55);
    ModelParams p = init_params(spec, init);
    const Array2 x = Array2::from_rows({{0.4, -1.2, 0.9}, {1.1, 0.2, -0.3}});
    const std::vector<int> labels{1, 0};

    const Rng mask_state(314);  // copied before every evaluation: same masks each time
    Rng g = mask_state;
    const LossGrads lg = loss_and_grads(p, spec, x, labels, &g, RunMode::kTrain);
    const double eps = 1e-5;
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        for (std::size_t i = 0; i < p.weights[l].size(); ++i) {
            double& w = p.weights[l].data()[i];
            const double keep = w;
            Rng up_rng = mask_state;
            w = keep + eps;
            const double up = loss_and_grads(p, spec, x, labels, &up_rng, RunMode::kTrain).loss;
            Rng dn_rng = mask_state;
            w = keep - eps;
            const double dn = loss_and_grads(p, spec, x, labels, &dn_rng, RunMode::kTrain).loss;
            w = keep;
            const double fd = (up - dn) / (2 * eps);
            const double tol = std::max(1e-7, 1e-4 * std::abs(fd));
            REQUIRE(std::abs(lg.grads.weights[l].data()[i] - fd) <= tol);
        }
    }
}

TEST_CASE("sgd_step: plain step, zero grads, two-step momentum oracle", "[mlp]") {
    const MlpSpec spec{1, {}, 1};
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.momentum = 0.0;

    ModelParams w = ModelParams::zeros(spec);
    ModelParams v = ModelParams::zeros(spec);
    ModelParams g = ModelParams::zeros(spec);
    g.weights[0](0, 0) = 2.0;
    sgd_step(w, v, g, cfg);
    CHECK(w.weights[0](0, 0) == Catch::Approx(-0.02).margin(1e-15));

    // zero grads forever -> params frozen
    ModelParams z = ModelParams::zeros(spec);
    for (int i = 0; i < 5; ++i) sgd_step(w, v, z, cfg);
    CHECK(w.weights[0](0, 0) == Catch::Approx(-0.02).margin(1e-15));
    CHECK(w.biases[0][0] == 0.0);

    // two steps, g = 1 each, momentum 0.9: dw = -0.01 * (1 + 1.9) = -0.029
    cfg.momentum = 0.9;
    ModelParams w2 = ModelParams::zeros(spec);
    ModelParams v2 = ModelParams::zeros(spec);
    ModelParams g1 = ModelParams::zeros(spec);
    g1.weights[0](0, 0) = 1.0;
    g1.biases[0][0] = 1.0;
    sgd_step(w2, v2, g1, cfg);
    sgd_step(w2, v2, g1, cfg);
    CHECK(w2.weights[0](0, 0) == Catch::Approx(-0.029).margin(1e-15));
    CHECK(w2.biases[0][0] == Catch::Approx(-0.029).margin(1e-15));
}

TEST_CASE("train: epochs=0 returns the initialization, same seed is bit-identical", "[mlp]") {
    const Dataset data = synth_blobs(2, 40, 2, 8.0, 91);
    const MlpSpec spec = make_mlp_spec(2, 4, 0.0, 2);
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.seed = 5;
    const TrainResult r = train(spec, data, cfg);
    CHECK(r.epoch_losses.empty());
    Rng init(5);
    CHECK(bit_equal(r.params, init_params(spec, init)));

    cfg.epochs = 3;
    cfg.batch_size = 16;
    const TrainResult a = train(spec, data, cfg);
    const TrainResult b = train(spec, data, cfg);
    CHECK(bit_equal(a.params, b.params));
    CHECK(a.epoch_losses == b.epoch_losses);

    CHECK_THROWS_AS(train(spec, Dataset{}, cfg), ShapeError);
}

TEST_CASE("train separates 2 well-separated blobs to >= 0.99", "[mlp]") {
    const Dataset data = synth_blobs(2, 100, 2, 20.0, 13);
    const MlpSpec spec = make_mlp_spec(2, 16, 0.0, 2);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 32;
    cfg.seed = 3;
    const TrainResult r = train(spec, data, cfg);

    const Array2 probs = softmax_rows(forward(r.params, spec, data.inputs, RunMode::kEval));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < probs.rows(); ++i)
        hits += argmax(probs.row(i)) == std::size_t(data.labels[i]) ? 1 : 0;
    CHECK(double(hits) / double(probs.rows()) >= 0.99);
}

TEST_CASE("mean epoch loss decreases over the first 5 epochs, seed-averaged", "[mlp]") {
    const Dataset data = synth_blobs(3, 200, 4, 8.0, 17);
    const MlpSpec spec = make_mlp_spec(4, 16, 0.1, 3);
    std::vector<double> avg(5, 0.0);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        TrainConfig cfg;  // default lr/momentum/batch
        cfg.epochs = 5;
        cfg.seed = seed;
        const TrainResult r = train(spec, data, cfg);
        REQUIRE(r.epoch_losses.size() == 5);
        for (int e = 0; e < 5; ++e) avg[e] += r.epoch_losses[e] / 5.0;
    }
    for (int e = 0; e + 1 < 5; ++e) REQUIRE(avg[e + 1] < avg[e]);
}

TEST_CASE("UQF1 weight files round-trip bit-exactly", "[mlp]") {
    const fs::path dir = temp_dir("io");
    const MlpSpec spec = make_mlp_spec(7, 5, 0.0, 4);
    Rng init(101);
    const ModelParams p = init_params(spec, init);
    const std::string path = (dir / "weights.uqf").string();
    save_params(path, p);
    const ModelParams q = load_params(path);
    CHECK(bit_equal(p, q));
    CHECK(q.matches(spec));
}

TEST_CASE("UQF1 loader rejects damage", "[mlp]") {
    const fs::path dir = temp_dir("io_bad");
    CHECK_THROWS_AS(load_params((dir / "missing.uqf").string()), IoError);

    const std::string garbage = (dir / "garbage.uqf").string();
    std::ofstream(garbage) << "not a weight file";
    CHECK_THROWS_AS(load_params(garbage), IoError);

    // valid file cut short
    const MlpSpec spec{3, {{2, 0.0}}, 2};
    Rng init(9);
    const std::string full = (dir / "full.uqf").string();
    save_params(full, init_params(spec, init));
    std::ifstream in(full, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const std::string cut = (dir / "cut.uqf").string();
    std::ofstream(cut, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size() / 2));
    CHECK_THROWS_AS(load_params(cut), IoError);
}
