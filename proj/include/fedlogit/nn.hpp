#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "fedlogit/binary_io.hpp"
#include "fedlogit/errors.hpp"
#include "fedlogit/matrix.hpp"
#include "fedlogit/numeric.hpp"
#include "fedlogit/rng.hpp"

namespace fedlogit {

enum class Activation { Relu, Tanh };

inline std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "tanh"; }

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    throw ConfigError("unknown activation: " + s);
}

// Fully connected classifier: input -> hidden... -> C logits. Hidden layers
// use the configured activation, the output layer is identity (raw logits).
struct Model {
    std::vector<std::size_t> layer_sizes;
    std::vector<Matrix> weights;  // weights[l]: layer_sizes[l] x layer_sizes[l+1]
    std::vector<Matrix> biases;   // biases[l]:  1 x layer_sizes[l+1]
    Activation activation = Activation::Relu;

    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t output_dim() const { return layer_sizes.back(); }
    std::size_t num_layers() const { return weights.size(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& w : weights) n += w.data.size();
        for (const auto& b : biases) n += b.data.size();
        return n;
    }
};

// Glorot-style uniform init in +-sqrt(6 / (fan_in + fan_out)); biases start at zero.
inline Model make_mlp(std::vector<std::size_t> layer_sizes, Activation activation, Rng& rng) {
    if (layer_sizes.size() < 2) throw ConfigError("make_mlp: need at least input and output sizes");
    for (std::size_t s : layer_sizes)
        if (s == 0) throw ConfigError("make_mlp: zero layer size");
    Model model;
    model.layer_sizes = std::move(layer_sizes);
    model.activation = activation;
    for (std::size_t l = 0; l + 1 < model.layer_sizes.size(); ++l) {
        std::size_t fan_in = model.layer_sizes[l];
        std::size_t fan_out = model.layer_sizes[l + 1];
        double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Matrix w(fan_in, fan_out);
        for (double& v : w.data) v = rng.uniform(-limit, limit);
        model.weights.push_back(std::move(w));
        model.biases.emplace_back(1, fan_out);
    }
    return model;
}

namespace detail {

inline void apply_activation(Matrix& m, Activation act) {
    if (act == Activation::Relu) {
        for (double& v : m.data) v = v > 0.0 ? v : 0.0;
    } else {
        for (double& v : m.data) v = std::tanh(v);
    }
}

// Derivative expressed through the post-activation value.
inline double activation_grad(double post, Activation act) {
    return act == Activation::Relu ? (post > 0.0 ? 1.0 : 0.0) : (1.0 - post * post);
}

}  // namespace detail

// Post-activation outputs per layer; activations[0] is the input batch and
// activations.back() holds the raw logits.
struct ForwardCache {
    std::vector<Matrix> activations;
};

inline ForwardCache forward_cached(const Model& model, const Matrix& inputs) {
    if (inputs.cols != model.input_dim())
        throw ConfigError("forward: input dimension " + std::to_string(inputs.cols) +
                          " does not match model input " + std::to_string(model.input_dim()));
    ForwardCache cache;
    cache.activations.reserve(model.num_layers() + 1);
    cache.activations.push_back(inputs);
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        Matrix z = matmul(cache.activations.back(), model.weights[l]);
        for (std::size_t i = 0; i < z.rows; ++i)
            for (std::size_t j = 0; j < z.cols; ++j) z(i, j) += model.biases[l](0, j);
        if (l + 1 < model.num_layers()) detail::apply_activation(z, model.activation);
        cache.activations.push_back(std::move(z));
    }
    require_finite(cache.activations.back(), "forward output");
    return cache;
}

// Raw logits for a batch, n x C.
inline Matrix forward(const Model& model, const Matrix& inputs) {
    return forward_cached(model, inputs).activations.back();
}

struct LossGrad {
    double loss = 0.0;
    Matrix grad;  // d loss / d logits
};

// Mean cross-entropy of softmax(logits) against target distributions.
// Targets may be one-hot or soft; each row must sum to 1.
inline LossGrad cross_entropy(const Matrix& logits, const Matrix& targets) {
    if (!logits.same_shape(targets)) throw InputError("cross_entropy: shape mismatch");
    if (logits.rows == 0) throw InputError("cross_entropy: empty batch");
    for (std::size_t i = 0; i < targets.rows; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < targets.cols; ++j) {
            if (targets(i, j) < -1e-12) throw InputError("cross_entropy: negative target entry");
            sum += targets(i, j);
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw InputError("cross_entropy: target row " + std::to_string(i) + " sums to " +
                             std::to_string(sum) + ", expected 1");
    }
    const double n = static_cast<double>(logits.rows);
    Matrix lsm = log_softmax(logits);
    double loss = 0.0;
    for (std::size_t i = 0; i < logits.rows; ++i)
        for (std::size_t j = 0; j < logits.cols; ++j)
            if (targets(i, j) != 0.0) loss -= targets(i, j) * lsm(i, j);
    loss /= n;

    LossGrad out;
    out.loss = loss;
    out.grad = softmax(logits);
    for (std::size_t i = 0; i < logits.rows; ++i)
        for (std::size_t j = 0; j < logits.cols; ++j)
            out.grad(i, j) = (out.grad(i, j) - targets(i, j)) / n;
    return out;
}

struct Gradients {
    std::vector<Matrix> weights;
    std::vector<Matrix> biases;
};

// Analytic gradients of the cross-entropy loss w.r.t. every parameter,
// by backpropagation through the fixed MLP structure.
inline std::pair<double, Gradients> loss_and_gradients(const Model& model, const Matrix& inputs,
                                                       const Matrix& targets) {
    ForwardCache cache = forward_cached(model, inputs);
    LossGrad lg = cross_entropy(cache.activations.back(), targets);

    Gradients grads;
    grads.weights.resize(model.num_layers());
    grads.biases.resize(model.num_layers());

    Matrix delta = std::move(lg.grad);  // d loss / d z for the current layer
    for (std::size_t l = model.num_layers(); l-- > 0;) {
        grads.weights[l] = matmul_at_b(cache.activations[l], delta);
        grads.biases[l] = column_sums(delta);
        if (l > 0) {
            Matrix prev = matmul_a_bt(delta, model.weights[l]);
            const Matrix& post = cache.activations[l];
            for (std::size_t i = 0; i < prev.rows; ++i)
                for (std::size_t j = 0; j < prev.cols; ++j)
                    prev(i, j) *= detail::activation_grad(post(i, j), model.activation);
            delta = std::move(prev);
        }
    }
    return {lg.loss, std::move(grads)};
}

// Adam moment accumulators, one slot per parameter matrix.
struct AdamState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t step = 0;
    std::vector<Matrix> m_weights, v_weights;
    std::vector<Matrix> m_biases, v_biases;
};

inline AdamState make_adam(const Model& model, double learning_rate = 1e-3, double beta1 = 0.9,
                           double beta2 = 0.999, double epsilon = 1e-8) {
    AdamState s;
    s.learning_rate = learning_rate;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.epsilon = epsilon;
    for (const auto& w : model.weights) {
        s.m_weights.emplace_back(w.rows, w.cols);
        s.v_weights.emplace_back(w.rows, w.cols);
    }
    for (const auto& b : model.biases) {
        s.m_biases.emplace_back(b.rows, b.cols);
        s.v_biases.emplace_back(b.rows, b.cols);
    }
    return s;
}

// One bias-corrected Adam update of a single parameter matrix. state.step
// must already be advanced for the current iteration.
inline void adam_update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v,
                        const AdamState& state) {
    if (!param.same_shape(grad) || !param.same_shape(m) || !param.same_shape(v))
        throw ConfigError("adam_update: accumulator shape does not match parameter shape");
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < param.data.size(); ++i) {
        const double g = grad.data[i];
        m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * g;
        v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * g * g;
        const double m_hat = m.data[i] / bc1;
        const double v_hat = v.data[i] / bc2;
        param.data[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
}

// One training step: backprop then Adam. Returns the pre-update loss.
inline double backward_and_step(Model& model, const Matrix& inputs, const Matrix& targets,
                                AdamState& opt) {
    if (opt.m_weights.size() != model.weights.size() || opt.m_biases.size() != model.biases.size())
        throw ConfigError("backward_and_step: optimizer state does not match model layout");
    auto [loss, grads] = loss_and_gradients(model, inputs, targets);
    ++opt.step;
    for (std::size_t l = 0; l < model.weights.size(); ++l)
        adam_update(model.weights[l], grads.weights[l], opt.m_weights[l], opt.v_weights[l], opt);
    for (std::size_t l = 0; l < model.biases.size(); ++l)
        adam_update(model.biases[l], grads.biases[l], opt.m_biases[l], opt.v_biases[l], opt);
    return loss;
}

// Minibatch training with a fresh shuffle each epoch. Deterministic for a
// given rng stream; epochs == 0 leaves the model untouched.
inline void train_epochs(Model& model, const Matrix& features, const Matrix& targets, int epochs,
                         std::size_t batch_size, AdamState& opt, Rng& rng) {
    if (features.rows == 0) throw InputError("train_epochs: empty dataset");
    if (features.rows != targets.rows) throw InputError("train_epochs: feature/target row mismatch");
    if (batch_size == 0) throw ConfigError("train_epochs: batch size must be positive");

    std::vector<std::size_t> order(features.rows);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            std::size_t count = std::min(batch_size, order.size() - start);
            std::span<const std::size_t> idx(order.data() + start, count);
            Matrix xb = gather_rows(features, idx);
            Matrix tb = gather_rows(targets, idx);
            backward_and_step(model, xb, tb, opt);
        }
    }
}

// Checkpoint format "FLM1": activation tag, layer sizes, then per layer the
// weight matrix followed by the bias row, all little-endian f64.
inline void save_model_stream(const Model& model, std::ostream& out) {
    io::write_magic(out, "FLM1");
    io::write_u32(out, model.activation == Activation::Relu ? 0u : 1u);
    io::write_u32(out, static_cast<std::uint32_t>(model.layer_sizes.size()));
    for (std::size_t s : model.layer_sizes) io::write_u64(out, s);
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        for (double v : model.weights[l].data) io::write_f64(out, v);
        for (double v : model.biases[l].data) io::write_f64(out, v);
    }
}

inline void save_model(const Model& model, const std::string& path) {
    auto out = io::open_output(path);
    save_model_stream(model, out);
    if (!out) throw IoError("write failed: " + path);
}

inline Model load_model_stream(std::istream& in) {
    io::expect_magic(in, "FLM1", "model file");
    std::uint32_t act = io::read_u32(in, "model activation");
    if (act > 1) throw FormatError("model file: unknown activation tag");
    std::uint32_t n_sizes = io::read_u32(in, "model layer count");
    if (n_sizes < 2) throw FormatError("model file: fewer than two layer sizes");
    Model model;
    model.activation = act == 0 ? Activation::Relu : Activation::Tanh;
    for (std::uint32_t i = 0; i < n_sizes; ++i)
        model.layer_sizes.push_back(io::read_u64(in, "model layer size"));
    for (std::size_t l = 0; l + 1 < model.layer_sizes.size(); ++l) {
        Matrix w(model.layer_sizes[l], model.layer_sizes[l + 1]);
        for (double& v : w.data) v = io::read_f64(in, "model weights");
        Matrix b(1, model.layer_sizes[l + 1]);
        for (double& v : b.data) v = io::read_f64(in, "model biases");
        model.weights.push_back(std::move(w));
        model.biases.push_back(std::move(b));
    }
    return model;
}

inline Model load_model(const std::string& path) {
    auto in = io::open_input(path);
    return load_model_stream(in);
}

}  // namespace fedlogit
