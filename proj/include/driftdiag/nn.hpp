#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "driftdiag/errors.hpp"
#include "driftdiag/matrix.hpp"
#include "driftdiag/rng.hpp"

namespace driftdiag {

enum class Activation : std::uint8_t { ReLU = 0, Identity = 1 };

// One fully connected layer. Weights are out_dim x in_dim so that both the
// forward pass and the weight-gradient accumulation run over contiguous rows.
template <typename T>
struct DenseLayer {
    Mat<T> weights;       // out_dim x in_dim
    std::vector<T> bias;  // out_dim
    Activation activation = Activation::ReLU;

    std::size_t in_dim() const { return weights.cols; }
    std::size_t out_dim() const { return weights.rows; }

    void validate() const {
        if (weights.rows == 0 || weights.cols == 0) throw ShapeError("DenseLayer: empty weight matrix");
        if (bias.size() != weights.rows) throw ShapeError("DenseLayer: bias size does not match out_dim");
        if (!weights.all_finite()) throw NumericError("DenseLayer: non-finite weights");
        for (const T& v : bias) {
            if (!std::isfinite(static_cast<double>(v))) throw NumericError("DenseLayer: non-finite bias");
        }
    }
};

template <typename T>
struct MlpNetwork {
    std::vector<DenseLayer<T>> layers;

    std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
    std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

    void validate() const {
        if (layers.empty()) throw ShapeError("MlpNetwork: no layers");
        for (const auto& l : layers) l.validate();
        for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
            if (layers[i].out_dim() != layers[i + 1].in_dim()) {
                throw ShapeError("MlpNetwork: layer " + std::to_string(i) + " out_dim " +
                                 std::to_string(layers[i].out_dim()) + " != layer " +
                                 std::to_string(i + 1) + " in_dim " +
                                 std::to_string(layers[i + 1].in_dim()));
            }
        }
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.weights.size() + l.bias.size();
        return n;
    }
};

// Builds an MLP from a dim chain [d0, d1, ..., dn]. Hidden layers use ReLU,
// the last layer emits raw logits through an identity activation. Weights use
// Kaiming-uniform fan-in scaling for ReLU layers and +-1/sqrt(fan_in) for
// identity layers; biases start at zero.
template <typename T>
inline MlpNetwork<T> make_mlp(const std::vector<std::size_t>& dims, Rng& rng) {
    if (dims.size() < 2) throw ShapeError("make_mlp: need at least input and output dims");
    MlpNetwork<T> net;
    net.layers.reserve(dims.size() - 1);
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        DenseLayer<T> layer;
        layer.activation = (i + 2 < dims.size()) ? Activation::ReLU : Activation::Identity;
        layer.weights = Mat<T>(dims[i + 1], dims[i]);
        layer.bias.assign(dims[i + 1], T(0));
        const double fan_in = static_cast<double>(dims[i]);
        const double bound = layer.activation == Activation::ReLU ? std::sqrt(6.0 / fan_in)
                                                                  : 1.0 / std::sqrt(fan_in);
        for (T& w : layer.weights.data) w = static_cast<T>(rng.uniform(-bound, bound));
        net.layers.push_back(std::move(layer));
    }
    net.validate();
    return net;
}

// Per-layer activations cached by forward for use by backward. The dims
// signature lets backward reject a tape produced by a different network
// structure or batch.
template <typename T>
struct GradTape {
    std::vector<Mat<T>> inputs;           // input to each layer, B x in_dim
    std::vector<Mat<T>> pre_activations;  // W*x + b before the nonlinearity
    std::vector<std::pair<std::size_t, std::size_t>> layer_dims;
    std::size_t batch = 0;
};

template <typename T>
struct ForwardResult {
    Mat<T> output;
    GradTape<T> tape;
};

namespace detail {

// Dot product with eight independent accumulator lanes. The lane-wise order
// is fixed, so results are deterministic while still vectorizing under
// strict floating-point semantics.
template <typename T>
inline T dot_lanes(const T* __restrict a, const T* __restrict b, std::size_t n) {
    T lanes[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (std::size_t l = 0; l < 8; ++l) lanes[l] += a[i + l] * b[i + l];
    }
    T tail = T(0);
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
           ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail;
}

template <typename T>
inline void axpy(T coef, const T* __restrict src, T* __restrict dst, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += coef * src[i];
}

template <typename T>
inline void affine_forward(const DenseLayer<T>& layer, const Mat<T>& x, Mat<T>& pre) {
    const std::size_t batch = x.rows, in = layer.in_dim(), out = layer.out_dim();
    pre = Mat<T>(batch, out);
    for (std::size_t b = 0; b < batch; ++b) {
        const T* xr = x.data.data() + b * in;
        T* pr = pre.data.data() + b * out;
        for (std::size_t o = 0; o < out; ++o) {
            pr[o] = layer.bias[o] + dot_lanes(layer.weights.data.data() + o * in, xr, in);
        }
    }
}

template <typename T>
inline void apply_activation(Activation act, const Mat<T>& pre, Mat<T>& out) {
    out = pre;
    if (act == Activation::ReLU) {
        for (T& v : out.data) v = v > T(0) ? v : T(0);
    }
}

}  // namespace detail

template <typename T>
inline ForwardResult<T> forward(const MlpNetwork<T>& net, const Mat<T>& batch) {
    net.validate();
    if (batch.rows == 0) throw ShapeError("forward: empty batch");
    if (batch.cols != net.input_dim()) {
        throw ShapeError("forward: batch has " + std::to_string(batch.cols) +
                         " columns, network expects " + std::to_string(net.input_dim()));
    }
    require_finite(batch, "forward: input");

    ForwardResult<T> res;
    res.tape.batch = batch.rows;
    Mat<T> cur = batch;
    for (const auto& layer : net.layers) {
        res.tape.inputs.push_back(cur);
        res.tape.layer_dims.emplace_back(layer.in_dim(), layer.out_dim());
        Mat<T> pre;
        detail::affine_forward(layer, cur, pre);
        res.tape.pre_activations.push_back(pre);
        detail::apply_activation(layer.activation, pre, cur);
    }
    res.output = std::move(cur);
    return res;
}

// Forward without a tape, for inference paths.
template <typename T>
inline Mat<T> forward_nograd(const MlpNetwork<T>& net, const Mat<T>& batch) {
    if (batch.cols != net.input_dim()) {
        throw ShapeError("forward_nograd: batch has " + std::to_string(batch.cols) +
                         " columns, network expects " + std::to_string(net.input_dim()));
    }
    Mat<T> cur = batch;
    for (const auto& layer : net.layers) {
        Mat<T> pre;
        detail::affine_forward(layer, cur, pre);
        detail::apply_activation(layer.activation, pre, cur);
    }
    return cur;
}

// Gradients of every parameter in an MlpNetwork, laid out layer by layer.
template <typename T>
struct NetGradients {
    std::vector<Mat<T>> dweights;
    std::vector<std::vector<T>> dbias;

    static NetGradients zeros_like(const MlpNetwork<T>& net) {
        NetGradients g;
        g.dweights.reserve(net.layers.size());
        g.dbias.reserve(net.layers.size());
        for (const auto& l : net.layers) {
            g.dweights.emplace_back(l.out_dim(), l.in_dim());
            g.dbias.emplace_back(l.out_dim(), T(0));
        }
        return g;
    }

    void scale(T s) {
        for (auto& m : dweights)
            for (T& v : m.data) v *= s;
        for (auto& b : dbias)
            for (T& v : b) v *= s;
    }

    void add(const NetGradients& other) {
        for (std::size_t l = 0; l < dweights.size(); ++l) {
            for (std::size_t i = 0; i < dweights[l].data.size(); ++i) dweights[l].data[i] += other.dweights[l].data[i];
            for (std::size_t i = 0; i < dbias[l].size(); ++i) dbias[l][i] += other.dbias[l][i];
        }
    }
};

template <typename T>
struct BackwardResult {
    NetGradients<T> grads;
    Mat<T> dinput;
};

// Backpropagates dout (gradient of some scalar loss with respect to the
// network output) through the network whose forward pass produced `tape`.
template <typename T>
inline BackwardResult<T> backward(const MlpNetwork<T>& net, const GradTape<T>& tape, const Mat<T>& dout) {
    if (tape.layer_dims.size() != net.layers.size()) {
        throw ContractError("backward: tape layer count does not match network");
    }
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (tape.layer_dims[i].first != net.layers[i].in_dim() ||
            tape.layer_dims[i].second != net.layers[i].out_dim()) {
            throw ContractError("backward: tape layer " + std::to_string(i) +
                                " dims do not match network");
        }
    }
    if (dout.rows != tape.batch || dout.cols != net.output_dim()) {
        throw ShapeError("backward: dout shape " + std::to_string(dout.rows) + "x" +
                         std::to_string(dout.cols) + " does not match batch " +
                         std::to_string(tape.batch) + " x output " + std::to_string(net.output_dim()));
    }

    BackwardResult<T> res;
    res.grads = NetGradients<T>::zeros_like(net);

    Mat<T> delta = dout;  // gradient w.r.t. current layer's post-activation output
    for (std::size_t li = net.layers.size(); li-- > 0;) {
        const auto& layer = net.layers[li];
        const Mat<T>& x = tape.inputs[li];
        const Mat<T>& pre = tape.pre_activations[li];
        const std::size_t batch = tape.batch, in = layer.in_dim(), out = layer.out_dim();

        // delta through the activation
        if (layer.activation == Activation::ReLU) {
            for (std::size_t i = 0; i < delta.data.size(); ++i) {
                if (pre.data[i] <= T(0)) delta.data[i] = T(0);
            }
        }

        Mat<T>& dw = res.grads.dweights[li];
        std::vector<T>& db = res.grads.dbias[li];
        Mat<T> dx(batch, in);
        for (std::size_t b = 0; b < batch; ++b) {
            const T* dr = delta.data.data() + b * out;
            const T* xr = x.data.data() + b * in;
            T* dxr = dx.data.data() + b * in;
            for (std::size_t o = 0; o < out; ++o) {
                const T coef = dr[o];
                db[o] += coef;
                if (coef == T(0)) continue;
                detail::axpy(coef, xr, dw.data.data() + o * in, in);
                detail::axpy(coef, layer.weights.data.data() + o * in, dxr, in);
            }
        }
        delta = std::move(dx);
    }
    res.dinput = std::move(delta);
    return res;
}

template <typename T>
inline Mat<T> softmax_rows(const Mat<T>& logits) {
    Mat<T> probs(logits.rows, logits.cols);
    for (std::size_t b = 0; b < logits.rows; ++b) {
        const T* lr = logits.data.data() + b * logits.cols;
        T* pr = probs.data.data() + b * logits.cols;
        T mx = lr[0];
        for (std::size_t c = 1; c < logits.cols; ++c) mx = std::max(mx, lr[c]);
        T sum = T(0);
        for (std::size_t c = 0; c < logits.cols; ++c) {
            pr[c] = std::exp(lr[c] - mx);
            sum += pr[c];
        }
        for (std::size_t c = 0; c < logits.cols; ++c) pr[c] /= sum;
    }
    return probs;
}

template <typename T>
struct CrossEntropyResult {
    T loss = T(0);
    Mat<T> dlogits;
};

// Batch-mean negative log-likelihood with a fused, max-shifted log-softmax.
// dlogits = (softmax - one_hot) / B, the gradient of the mean loss.
template <typename T>
inline CrossEntropyResult<T> softmax_cross_entropy(const Mat<T>& logits, std::span<const int> targets) {
    if (logits.rows == 0) throw ShapeError("softmax_cross_entropy: empty batch");
    if (targets.size() != logits.rows) {
        throw ShapeError("softmax_cross_entropy: got " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(logits.rows) + " rows");
    }
    const std::size_t batch = logits.rows, classes = logits.cols;
    for (std::size_t b = 0; b < batch; ++b) {
        if (targets[b] < 0 || static_cast<std::size_t>(targets[b]) >= classes) {
            throw IndexError("softmax_cross_entropy: target " + std::to_string(targets[b]) +
                             " out of range [0, " + std::to_string(classes) + ") at row " +
                             std::to_string(b));
        }
    }

    CrossEntropyResult<T> res;
    res.dlogits = softmax_rows(logits);
    const T inv_batch = T(1) / static_cast<T>(batch);
    T loss_acc = T(0);
    for (std::size_t b = 0; b < batch; ++b) {
        const T* lr = logits.data.data() + b * classes;
        T* dr = res.dlogits.data.data() + b * classes;
        T mx = lr[0];
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, lr[c]);
        T sum = T(0);
        for (std::size_t c = 0; c < classes; ++c) sum += std::exp(lr[c] - mx);
        const std::size_t t = static_cast<std::size_t>(targets[b]);
        loss_acc += std::log(sum) - (lr[t] - mx);
        dr[t] -= T(1);
        for (std::size_t c = 0; c < classes; ++c) dr[c] *= inv_batch;
    }
    res.loss = loss_acc * inv_batch;
    return res;
}

// Gradient reversal at the feature/discriminator seam: the forward path is
// the identity, the backward path scales by -lambda. Applied to the gradient
// flowing from the discriminator branch toward the feature extractor.
template <typename T>
inline Mat<T> grad_reverse(const Mat<T>& dfeature, T lambda) {
    if (!(lambda >= T(0) && lambda <= T(1))) {
        throw ContractError("grad_reverse: lambda must lie in [0, 1]");
    }
    require_finite(dfeature, "grad_reverse: input");
    Mat<T> out(dfeature.rows, dfeature.cols);
    const T scale = -lambda;
    for (std::size_t i = 0; i < dfeature.data.size(); ++i) out.data[i] = scale * dfeature.data[i];
    return out;
}

template <typename T>
struct AdamState {
    T learning_rate = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T epsilon = T(1e-8);
    std::uint64_t step_count = 0;
    NetGradients<T> first_moment;
    NetGradients<T> second_moment;

    static AdamState for_network(const MlpNetwork<T>& net, T lr) {
        AdamState s;
        s.learning_rate = lr;
        s.first_moment = NetGradients<T>::zeros_like(net);
        s.second_moment = NetGradients<T>::zeros_like(net);
        return s;
    }
};

namespace detail {

template <typename T>
inline void adam_update_span(std::span<T> params, std::span<const T> grads, std::span<T> m,
                             std::span<T> v, const AdamState<T>& s, T corr1, T corr2) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = s.beta1 * m[i] + (T(1) - s.beta1) * grads[i];
        v[i] = s.beta2 * v[i] + (T(1) - s.beta2) * grads[i] * grads[i];
        const T m_hat = m[i] / corr1;
        const T v_hat = v[i] / corr2;
        params[i] -= s.learning_rate * m_hat / (std::sqrt(v_hat) + s.epsilon);
    }
}

}  // namespace detail

// One bias-corrected Adam update over every parameter of the network.
template <typename T>
inline void adam_step(MlpNetwork<T>& net, const NetGradients<T>& grads, AdamState<T>& state) {
    if (grads.dweights.size() != net.layers.size()) {
        throw ShapeError("adam_step: gradient layer count does not match network");
    }
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        if (!grads.dweights[l].same_shape(net.layers[l].weights) ||
            grads.dbias[l].size() != net.layers[l].bias.size()) {
            throw ShapeError("adam_step: gradient shape mismatch at layer " + std::to_string(l));
        }
    }
    state.step_count += 1;
    const T corr1 = T(1) - std::pow(state.beta1, static_cast<T>(state.step_count));
    const T corr2 = T(1) - std::pow(state.beta2, static_cast<T>(state.step_count));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        detail::adam_update_span<T>(std::span<T>(net.layers[l].weights.data),
                                    std::span<const T>(grads.dweights[l].data),
                                    std::span<T>(state.first_moment.dweights[l].data),
                                    std::span<T>(state.second_moment.dweights[l].data), state, corr1, corr2);
        detail::adam_update_span<T>(std::span<T>(net.layers[l].bias),
                                    std::span<const T>(grads.dbias[l]),
                                    std::span<T>(state.first_moment.dbias[l]),
                                    std::span<T>(state.second_moment.dbias[l]), state, corr1, corr2);
    }
}

// FNV-1a over the raw parameter bytes; used to assert that a model did or
// did not change.
template <typename T>
inline std::uint64_t param_hash(const MlpNetwork<T>& net, std::uint64_t h = 14695981039346656037ull) {
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* bytes = static_cast<const std::uint8_t*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& l : net.layers) {
        mix(l.weights.data.data(), l.weights.data.size() * sizeof(T));
        mix(l.bias.data(), l.bias.size() * sizeof(T));
    }
    return h;
}

}  // namespace driftdiag
