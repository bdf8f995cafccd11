#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "uqforge/array.hpp"
#include "uqforge/common.hpp"
#include "uqforge/dataset.hpp"
#include "uqforge/rng.hpp"

namespace uqforge {

struct HiddenLayer {
    std::size_t width = 0;
    double dropout_rate = 0.0;
};

/// Architecture of the MLP stack Lin(h1)-Drop(p1)-ReLU-...-Lin(C).
struct MlpSpec {
    std::size_t input_dim = 0;
    std::vector<HiddenLayer> hidden;
    std::size_t output_dim = 0;

    void validate() const {
        if (input_dim == 0 || output_dim == 0) throw DomainError("MlpSpec: zero input/output dim");
        for (const auto& h : hidden) {
            if (h.width < 1) throw DomainError("MlpSpec: hidden width must be >= 1");
            if (h.dropout_rate < 0.0 || h.dropout_rate >= 1.0)
                throw DomainError("MlpSpec: dropout rate must be in [0,1)");
        }
    }

    /// (out, in) of every linear layer, output layer included.
    std::vector<std::pair<std::size_t, std::size_t>> layer_dims() const {
        std::vector<std::pair<std::size_t, std::size_t>> dims;
        std::size_t in = input_dim;
        for (const auto& h : hidden) {
            dims.emplace_back(h.width, in);
            in = h.width;
        }
        dims.emplace_back(output_dim, in);
        return dims;
    }
};

/// Two equal hidden layers of the given width, one dropout rate on both.
inline MlpSpec make_mlp_spec(std::size_t input_dim, std::size_t width, double dropout_rate,
                             std::size_t output_dim) {
    return MlpSpec{input_dim, {{width, dropout_rate}, {width, dropout_rate}}, output_dim};
}

/// Weights and biases of every linear layer.
struct ModelParams {
    std::vector<Array2> weights;               // out x in
    std::vector<std::vector<double>> biases;   // out

    std::size_t param_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
        return n;
    }

    static ModelParams zeros(const MlpSpec& spec) {
        ModelParams p;
        for (auto [out, in] : spec.layer_dims()) {
            p.weights.emplace_back(out, in);
            p.biases.emplace_back(out, 0.0);
        }
        return p;
    }

    bool matches(const MlpSpec& spec) const {
        const auto dims = spec.layer_dims();
        if (weights.size() != dims.size() || biases.size() != dims.size()) return false;
        for (std::size_t l = 0; l < dims.size(); ++l) {
            if (weights[l].rows() != dims[l].first || weights[l].cols() != dims[l].second)
                return false;
            if (biases[l].size() != dims[l].first) return false;
        }
        return true;
    }
};

inline bool bit_equal(const ModelParams& a, const ModelParams& b) {
    if (a.weights.size() != b.weights.size()) return false;
    for (std::size_t l = 0; l < a.weights.size(); ++l) {
        if (!bit_equal(a.weights[l], b.weights[l])) return false;
        if (a.biases[l].size() != b.biases[l].size()) return false;
        for (std::size_t i = 0; i < a.biases[l].size(); ++i)
            if (a.biases[l][i] != b.biases[l][i]) return false;
    }
    return true;
}

/// Glorot-uniform weights, zero biases. Draw order is fixed (layer by layer,
/// weights row-major, then bias), so a seed pins the whole initialization.
inline ModelParams init_params(const MlpSpec& spec, Rng& rng) {
    spec.validate();
    ModelParams p = ModelParams::zeros(spec);
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        auto& w = p.weights[l];
        const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
        for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
    }
    return p;
}

enum class RunMode { kTrain, kEval, kMcDropout };

/// Per-layer intermediates kept for backpropagation.
struct ForwardCache {
    std::vector<Array2> layer_inputs;  // activation entering each linear layer
    std::vector<Array2> pre_relu;      // hidden layers: post-dropout linear output
    std::vector<Array2> drop_scale;    // hidden layers: 0 or 1/(1-p) per unit; empty if no dropout
};

namespace detail {

inline Array2 linear(const Array2& x, const Array2& w, const std::vector<double>& b) {
    Array2 z = matmul_nt(x, w);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        auto r = z.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
    }
    return z;
}

}  // namespace detail

/// Run the stack. `kTrain` and `kMcDropout` apply inverted dropout (mask by
/// Bernoulli(1-p), kept units scaled by 1/(1-p)); `kEval` applies none.
/// Layers with rate 0 draw nothing from the rng, so they are bit-identical
/// to eval mode. Pass `cache` to keep what backward() needs.
inline Array2 forward(const ModelParams& params, const MlpSpec& spec, const Array2& x,
                      RunMode mode, Rng* rng = nullptr, ForwardCache* cache = nullptr) {
    if (x.cols() != spec.input_dim)
        throw ShapeError("forward: input dim " + std::to_string(x.cols()) + " != " +
                         std::to_string(spec.input_dim));
    if (!params.matches(spec)) throw ShapeError("forward: params do not match spec");

    Array2 a = x;
    for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
        if (cache) cache->layer_inputs.push_back(a);
        Array2 z = detail::linear(a, params.weights[l], params.biases[l]);

        const double rate = spec.hidden[l].dropout_rate;
        const bool drop = mode != RunMode::kEval && rate > 0.0;
        Array2 scale;
        if (drop) {
            if (!rng) throw DomainError("forward: dropout is active but no rng was given");
            const double keep = 1.0 - rate;
            const double boost = 1.0 / keep;
            scale = Array2(z.rows(), z.cols());
            for (std::size_t i = 0; i < z.size(); ++i) {
                scale.data()[i] = rng->bernoulli(keep) ? boost : 0.0;
                z.data()[i] *= scale.data()[i];
            }
        }
        if (cache) {
            cache->pre_relu.push_back(z);
            cache->drop_scale.push_back(std::move(scale));
        }
        for (std::size_t i = 0; i < z.size(); ++i) z.data()[i] = std::max(z.data()[i], 0.0);
        a = std::move(z);
    }
    if (cache) cache->layer_inputs.push_back(a);
    return detail::linear(a, params.weights.back(), params.biases.back());
}

/// Mean cross-entropy of the labels under row-wise softmax of the logits,
/// computed through log-sum-exp.
inline double cross_entropy(const Array2& logits, const std::vector<int>& labels) {
    if (logits.rows() != labels.size()) throw ShapeError("cross_entropy: batch size mismatch");
    if (logits.rows() == 0) throw ShapeError("cross_entropy: empty batch");
    double total = 0.0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto r = logits.row(i);
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= r.size())
            throw DomainError("cross_entropy: label " + std::to_string(y) + " out of range");
        double m = r[0];
        for (double v : r) m = std::max(m, v);
        double sum = 0.0;
        for (double v : r) sum += std::exp(v - m);
        total += m + std::log(sum) - r[y];
    }
    return total / static_cast<double>(logits.rows());
}

struct LossGrads {
    double loss = 0.0;
    ModelParams grads;
};

/// Loss plus full-parameter gradients by backpropagation through the cache.
/// Dropout masks (train/mc modes) are drawn from `rng` exactly as forward()
/// draws them, so copying the rng reproduces the same stochastic loss.
inline LossGrads loss_and_grads(const ModelParams& params, const MlpSpec& spec, const Array2& x,
                                const std::vector<int>& labels, Rng* rng = nullptr,
                                RunMode mode = RunMode::kTrain) {
    if (x.rows() == 0) throw ShapeError("loss_and_grads: empty batch");
    if (x.rows() != labels.size()) throw ShapeError("loss_and_grads: batch size mismatch");

    ForwardCache cache;
    const Array2 logits = forward(params, spec, x, mode, rng, &cache);
    LossGrads out;
    out.loss = cross_entropy(logits, labels);
    out.grads = ModelParams::zeros(spec);

    const double inv_n = 1.0 / static_cast<double>(x.rows());
    Array2 dz = softmax_rows(logits);
    for (std::size_t i = 0; i < dz.rows(); ++i) {
        dz(i, labels[i]) -= 1.0;
        auto r = dz.row(i);
        for (double& v : r) v *= inv_n;
    }

    for (std::size_t l = params.weights.size(); l-- > 0;) {
        const Array2& a_in = cache.layer_inputs[l];
        out.grads.weights[l] = matmul_tn(dz, a_in);
        auto& db = out.grads.biases[l];
        for (std::size_t i = 0; i < dz.rows(); ++i) {
            const auto r = dz.row(i);
            for (std::size_t j = 0; j < r.size(); ++j) db[j] += r[j];
        }
        if (l == 0) break;
        Array2 da = matmul(dz, params.weights[l]);

        const Array2& pre = cache.pre_relu[l - 1];
        const Array2& scale = cache.drop_scale[l - 1];
        for (std::size_t i = 0; i < da.size(); ++i) {
            double g = pre.data()[i] > 0.0 ? da.data()[i] : 0.0;
            if (scale.size() > 0) g *= scale.data()[i];
            da.data()[i] = g;
        }
        dz = std::move(da);
    }
    return out;
}

/// Optimizer settings; the defaults are the training recipe used throughout.
struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::size_t batch_size = 128;
    std::size_t epochs = 100;
    std::uint64_t seed = 0;
    double weight_decay = 0.0;

    void validate() const {
        if (learning_rate <= 0.0) throw DomainError("TrainConfig: learning_rate must be > 0");
        if (momentum < 0.0 || momentum >= 1.0) throw DomainError("TrainConfig: momentum in [0,1)");
        if (batch_size < 1) throw DomainError("TrainConfig: batch_size must be >= 1");
    }
};

/// Heavy-ball SGD: v <- momentum*v + g, w <- w - lr*v. Weight decay, when
/// set, enters the effective gradient as g + wd*w.
inline void sgd_step(ModelParams& params, ModelParams& velocity, const ModelParams& grads,
                     const TrainConfig& cfg) {
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        auto* w = params.weights[l].data();
        auto* v = velocity.weights[l].data();
        const auto* g = grads.weights[l].data();
        for (std::size_t i = 0; i < params.weights[l].size(); ++i) {
            v[i] = cfg.momentum * v[i] + g[i] + cfg.weight_decay * w[i];
            w[i] -= cfg.learning_rate * v[i];
        }
        auto& b = params.biases[l];
        auto& vb = velocity.biases[l];
        const auto& gb = grads.biases[l];
        for (std::size_t i = 0; i < b.size(); ++i) {
            vb[i] = cfg.momentum * vb[i] + gb[i] + cfg.weight_decay * b[i];
            b[i] -= cfg.learning_rate * vb[i];
        }
    }
}

struct TrainResult {
    ModelParams params;
    std::vector<double> epoch_losses;  // mean batch loss per epoch
};

/// Full training run: fresh shuffle every epoch, last partial batch kept,
/// dropout active in train mode. Deterministic given (seed, dataset order).
inline TrainResult train(const MlpSpec& spec, const Dataset& data, const TrainConfig& cfg) {
    spec.validate();
    cfg.validate();
    if (data.size() == 0) throw ShapeError("train: empty dataset");
    if (data.dim() != spec.input_dim) throw ShapeError("train: dataset dim != spec.input_dim");

    Rng rng(cfg.seed);
    TrainResult result;
    result.params = init_params(spec, rng);
    ModelParams velocity = ModelParams::zeros(spec);

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t len = std::min(cfg.batch_size, order.size() - start);
            Array2 xb(len, data.dim());
            std::vector<int> yb(len);
            for (std::size_t i = 0; i < len; ++i) {
                const auto src = data.inputs.row(order[start + i]);
                std::copy(src.begin(), src.end(), xb.row(i).begin());
                yb[i] = data.labels[order[start + i]];
            }
            const LossGrads lg = loss_and_grads(result.params, spec, xb, yb, &rng);
            sgd_step(result.params, velocity, lg.grads, cfg);
            loss_sum += lg.loss;
            ++batches;
        }
        result.epoch_losses.push_back(loss_sum / static_cast<double>(batches));
    }
    return result;
}

}  // namespace uqforge
