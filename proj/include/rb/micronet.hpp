#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rb/detail/parallel.hpp"
#include "rb/detail/rand.hpp"
#include "rb/errors.hpp"
#include "rb/patcher.hpp"

namespace rb {

/// Dense row-major value container. Activations use (h, w, c) with the channel
/// index fastest; conv kernels use (kh, kw, ci, co); flat vectors use (len).
struct Tensor {
    std::vector<int> dims;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> shape) : dims(std::move(shape)) {
        std::size_t len = 1;
        for (int d : dims) {
            if (d < 1)
                throw ShapeMismatch("Tensor: dimensions must be positive");
            len *= static_cast<std::size_t>(d);
        }
        v.assign(len, 0.0);
    }

    std::size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }
};

enum class LayerKind { Conv, Relu, MaxPool, FullyConnected, Softmax };

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    int kernel_h = 0;       // Conv
    int kernel_w = 0;       // Conv
    int out_channels = 0;   // Conv
    int stride = 1;         // Conv; MaxPool is fixed 2x2 non-overlapping
    int out_units = 0;      // FullyConnected
};

struct Shape3 {
    int h = 0, w = 0, c = 0;
    bool operator==(const Shape3&) const = default;
};

// ---------------------------------------------------------------------------
// Layer parameter arithmetic

/// Learnable parameters of a convolution layer: ((w*h*lf)+1)*cf.
inline long long layer_param_count(int w, int h, int lf, int cf) {
    if (w < 1 || h < 1 || lf < 1 || cf < 1)
        throw ShapeMismatch("layer_param_count: arguments must be positive");
    return (static_cast<long long>(w) * h * lf + 1) * cf;
}

/// Learnable parameters of a fully connected / softmax layer: cf*pf + cf.
inline long long fc_param_count(int pf, int cf) {
    if (pf < 1 || cf < 1)
        throw ShapeMismatch("fc_param_count: arguments must be positive");
    return static_cast<long long>(cf) * pf + cf;
}

struct ParamTableRow {
    std::string layer;
    std::vector<int> activation_shape;
    long long activation_size = 0;
    long long parameter_value = 0;
};

/// The reference CNN parameter table, all ten rows. Activation sizes are the
/// products of the listed shapes. The conv-2 and conv-3 rows carry the
/// reference figures w*h*lf*cf, which leave out the bias term that
/// layer_param_count includes.
inline std::vector<ParamTableRow> reference_param_table() {
    auto size_of = [](const std::vector<int>& shape) {
        long long p = 1;
        for (int d : shape) p *= d;
        return p;
    };
    std::vector<ParamTableRow> rows;
    auto add = [&](std::string name, std::vector<int> shape, long long params) {
        long long size = size_of(shape);
        rows.push_back({std::move(name), std::move(shape), size, params});
    };
    add("Input", {64, 64, 64}, 0);
    add("Convolution Layer 1", {24, 24, 8}, layer_param_count(5, 5, 1, 8));
    add("Maxpool Layer 1", {2, 2, 8}, 0);
    add("Convolution Layer 2", {32, 32, 8}, 3 * 3 * 24 * 16);
    add("Maxpool Layer 2", {2, 2, 8}, 0);
    add("Convolution Layer 3", {48, 48, 8}, 3 * 3 * 32 * 32);
    add("Maxpool Layer 3", {2, 2, 8}, 0);
    add("Fully connected Layer 3", {110, 1}, fc_param_count(70, 110));
    add("Fully connected Layer 4", {70, 1}, fc_param_count(110, 70));
    add("Softmax Layer", {10, 1}, fc_param_count(70, 10));
    return rows;
}

// ---------------------------------------------------------------------------
// Layer forward passes

/// Valid (unpadded) convolution. x is (h,w,c), kernels (kh,kw,ci,co) with
/// ci == c, bias (co). Output is ((h-kh)/stride+1, (w-kw)/stride+1, co).
inline Tensor conv_forward(const Tensor& x, const Tensor& kernels, const Tensor& bias,
                           int stride = 1) {
    if (x.dims.size() != 3 || kernels.dims.size() != 4 || bias.dims.size() != 1)
        throw ShapeMismatch("conv_forward: expected (h,w,c) input and (kh,kw,ci,co) kernels");
    const int h = x.dims[0], w = x.dims[1], c = x.dims[2];
    const int kh = kernels.dims[0], kw = kernels.dims[1];
    const int ci = kernels.dims[2], co = kernels.dims[3];
    if (ci != c)
        throw ShapeMismatch("conv_forward: kernel depth does not match input channels");
    if (bias.dims[0] != co)
        throw ShapeMismatch("conv_forward: bias length does not match kernel count");
    if (stride < 1 || h < kh || w < kw)
        throw ShapeMismatch("conv_forward: input smaller than kernel");
    const int oh = (h - kh) / stride + 1;
    const int ow = (w - kw) / stride + 1;

    Tensor out({oh, ow, co});
    const double* xp = x.v.data();
    const double* kp = kernels.v.data();
    const double* bp = bias.v.data();
    double* op = out.v.data();
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            double* acc = op + (static_cast<std::size_t>(oy) * ow + ox) * co;
            for (int k = 0; k < co; ++k) acc[k] = bp[k];
            for (int ky = 0; ky < kh; ++ky) {
                const double* xrow =
                    xp + (static_cast<std::size_t>(oy * stride + ky) * w + ox * stride) * c;
                const double* krow = kp + static_cast<std::size_t>(ky) * kw * c * co;
                for (int kx = 0; kx < kw; ++kx) {
                    const double* xv = xrow + static_cast<std::size_t>(kx) * c;
                    const double* kv = krow + static_cast<std::size_t>(kx) * c * co;
                    for (int q = 0; q < c; ++q) {
                        const double value = xv[q];
                        const double* kvec = kv + static_cast<std::size_t>(q) * co;
                        for (int k = 0; k < co; ++k) acc[k] += value * kvec[k];
                    }
                }
            }
        }
    }
    return out;
}

/// Max pooling over non-overlapping 2x2 windows; halves both spatial dims.
/// Records the flat input index of each maximum for the backward pass.
inline Tensor maxpool_forward(const Tensor& x, std::vector<std::size_t>* argmax = nullptr) {
    if (x.dims.size() != 3)
        throw ShapeMismatch("maxpool_forward: expected (h,w,c) input");
    const int h = x.dims[0], w = x.dims[1], c = x.dims[2];
    if (h % 2 != 0 || w % 2 != 0)
        throw OddSpatialDim("maxpool_forward: spatial dims must be even");
    Tensor out({h / 2, w / 2, c});
    if (argmax) argmax->assign(out.size(), 0);
    for (int oy = 0; oy < h / 2; ++oy) {
        for (int ox = 0; ox < w / 2; ++ox) {
            for (int q = 0; q < c; ++q) {
                std::size_t best = (static_cast<std::size_t>(2 * oy) * w + 2 * ox) * c + q;
                double best_v = x.v[best];
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const std::size_t idx =
                            (static_cast<std::size_t>(2 * oy + dy) * w + (2 * ox + dx)) * c + q;
                        if (x.v[idx] > best_v) {
                            best_v = x.v[idx];
                            best = idx;
                        }
                    }
                }
                const std::size_t oidx = (static_cast<std::size_t>(oy) * (w / 2) + ox) * c + q;
                out.v[oidx] = best_v;
                if (argmax) (*argmax)[oidx] = best;
            }
        }
    }
    return out;
}

inline Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.v)
        if (v < 0.0) v = 0.0;
    return out;
}

/// Fully connected layer on the flattened input: y = W x + b with W (out,in).
inline Tensor fc_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.dims.size() != 2 || bias.dims.size() != 1)
        throw ShapeMismatch("fc_forward: expected (out,in) weight and (out) bias");
    const int out_units = weight.dims[0];
    const int in_units = weight.dims[1];
    if (x.size() != static_cast<std::size_t>(in_units))
        throw ShapeMismatch("fc_forward: input length does not match weight columns");
    if (bias.dims[0] != out_units)
        throw ShapeMismatch("fc_forward: bias length does not match weight rows");
    Tensor out({out_units});
    for (int o = 0; o < out_units; ++o) {
        const double* wrow = weight.v.data() + static_cast<std::size_t>(o) * in_units;
        double acc = bias.v[o];
        for (int i = 0; i < in_units; ++i) acc += wrow[i] * x.v[i];
        out.v[o] = acc;
    }
    return out;
}

/// Numerically stable softmax: shifts by the max before exponentiating.
inline Tensor softmax(const Tensor& x) {
    if (x.empty())
        throw ShapeMismatch("softmax: empty input");
    Tensor out({static_cast<int>(x.size())});
    const double m = *std::max_element(x.v.begin(), x.v.end());
    double denom = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        out.v[i] = std::exp(x.v[i] - m);
        denom += out.v[i];
    }
    for (double& v : out.v) v /= denom;
    return out;
}

// ---------------------------------------------------------------------------
// Model

struct NetConfig {
    int height = 64;
    int width = 64;
    int slices = 9;   // input channels, one per patch slice
    int classes = 2;
    std::uint64_t seed = 1;
};

struct Model {
    std::vector<LayerSpec> layers;
    std::vector<Tensor> weights;  // parallel to layers; empty when non-parametric
    std::vector<Tensor> biases;
    Shape3 input_shape;
    std::uint64_t rng_seed = 0;

    int classes() const {
        for (auto it = layers.rbegin(); it != layers.rend(); ++it)
            if (it->kind == LayerKind::FullyConnected) return it->out_units;
        return 0;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < layers.size(); ++i)
            n += weights[i].size() + biases[i].size();
        return n;
    }
};

namespace detail {

/// Output shape of one layer, validating composition.
inline Shape3 layer_output_shape(const LayerSpec& layer, Shape3 in) {
    switch (layer.kind) {
        case LayerKind::Conv: {
            if (in.h < layer.kernel_h || in.w < layer.kernel_w)
                throw ShapeUnderflow("build_network: spatial dims exhausted before FC");
            return {(in.h - layer.kernel_h) / layer.stride + 1,
                    (in.w - layer.kernel_w) / layer.stride + 1, layer.out_channels};
        }
        case LayerKind::MaxPool: {
            if (in.h < 2 || in.w < 2)
                throw ShapeUnderflow("build_network: spatial dims exhausted before FC");
            if (in.h % 2 != 0 || in.w % 2 != 0)
                throw OddSpatialDim("build_network: maxpool needs even spatial dims");
            return {in.h / 2, in.w / 2, in.c};
        }
        case LayerKind::Relu:
            return in;
        case LayerKind::FullyConnected:
            return {1, 1, layer.out_units};
        case LayerKind::Softmax:
            return in;
    }
    throw ShapeMismatch("layer_output_shape: unknown layer kind");
}

inline void init_glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : t.v) v = rng.uniform(-r, r);
}

}  // namespace detail

/// The segmentation network: Conv(24@5x5) > ReLU > MaxPool > Conv(32@3x3) >
/// ReLU > MaxPool > Conv(48@3x3) > ReLU > MaxPool > FC(16) > ReLU >
/// FC(classes) > Softmax. Weights drawn from a seeded uniform(-r, r) with
/// r = sqrt(6 / (fan_in + fan_out)); biases start at zero.
inline Model build_network(const NetConfig& cfg = {}) {
    if (cfg.height < 1 || cfg.width < 1 || cfg.slices < 1)
        throw ShapeMismatch("build_network: input dims must be positive");
    if (cfg.classes < 2)
        throw ShapeMismatch("build_network: need at least 2 classes");

    Model model;
    model.input_shape = {cfg.height, cfg.width, cfg.slices};
    model.rng_seed = cfg.seed;

    auto conv = [](int k, int out) {
        return LayerSpec{LayerKind::Conv, k, k, out, 1, 0};
    };
    auto fc = [](int units) {
        return LayerSpec{LayerKind::FullyConnected, 0, 0, 0, 1, units};
    };
    model.layers = {
        conv(5, 24),  LayerSpec{LayerKind::Relu}, LayerSpec{LayerKind::MaxPool},
        conv(3, 32),  LayerSpec{LayerKind::Relu}, LayerSpec{LayerKind::MaxPool},
        conv(3, 48),  LayerSpec{LayerKind::Relu}, LayerSpec{LayerKind::MaxPool},
        fc(16),       LayerSpec{LayerKind::Relu},
        fc(cfg.classes), LayerSpec{LayerKind::Softmax},
    };

    detail::Rng rng(cfg.seed);
    Shape3 shape = model.input_shape;
    model.weights.resize(model.layers.size());
    model.biases.resize(model.layers.size());
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& layer = model.layers[i];
        if (layer.kind == LayerKind::Conv) {
            Tensor k({layer.kernel_h, layer.kernel_w, shape.c, layer.out_channels});
            const std::size_t fan_in =
                static_cast<std::size_t>(layer.kernel_h) * layer.kernel_w * shape.c;
            const std::size_t fan_out =
                static_cast<std::size_t>(layer.kernel_h) * layer.kernel_w * layer.out_channels;
            detail::init_glorot_uniform(k, fan_in, fan_out, rng);
            model.weights[i] = std::move(k);
            model.biases[i] = Tensor({layer.out_channels});
        } else if (layer.kind == LayerKind::FullyConnected) {
            const int in_units = shape.h * shape.w * shape.c;
            Tensor w({layer.out_units, in_units});
            detail::init_glorot_uniform(w, static_cast<std::size_t>(in_units),
                                        static_cast<std::size_t>(layer.out_units), rng);
            model.weights[i] = std::move(w);
            model.biases[i] = Tensor({layer.out_units});
        }
        shape = detail::layer_output_shape(layer, shape);
    }
    return model;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct ForwardTrace {
    std::vector<Tensor> activations;                 // [0] = input, [i+1] = layer i output
    std::vector<std::vector<std::size_t>> argmax;    // per layer, maxpool only
};

inline Tensor model_forward(const Model& model, const Tensor& input,
                            ForwardTrace* trace = nullptr) {
    if (input.dims.size() != 3 || input.dims[0] != model.input_shape.h ||
        input.dims[1] != model.input_shape.w || input.dims[2] != model.input_shape.c)
        throw ShapeMismatch("model_forward: input shape does not match the model");
    if (trace) {
        trace->activations.clear();
        trace->argmax.assign(model.layers.size(), {});
        trace->activations.push_back(input);
    }
    Tensor cur = input;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& layer = model.layers[i];
        switch (layer.kind) {
            case LayerKind::Conv:
                cur = conv_forward(cur, model.weights[i], model.biases[i], layer.stride);
                break;
            case LayerKind::Relu:
                cur = relu(cur);
                break;
            case LayerKind::MaxPool:
                cur = maxpool_forward(cur, trace ? &trace->argmax[i] : nullptr);
                break;
            case LayerKind::FullyConnected:
                cur = fc_forward(cur, model.weights[i], model.biases[i]);
                break;
            case LayerKind::Softmax:
                cur = softmax(cur);
                break;
        }
        if (trace) trace->activations.push_back(cur);
    }
    return cur;
}

inline double cross_entropy(const Tensor& probs, int target) {
    if (target < 0 || static_cast<std::size_t>(target) >= probs.size())
        throw ShapeMismatch("cross_entropy: target class out of range");
    return -std::log(std::max(probs.v[static_cast<std::size_t>(target)], 1e-300));
}

struct Gradients {
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;

    void add(const Gradients& other) {
        for (std::size_t i = 0; i < weights.size(); ++i) {
            for (std::size_t j = 0; j < weights[i].size(); ++j)
                weights[i].v[j] += other.weights[i].v[j];
            for (std::size_t j = 0; j < biases[i].size(); ++j)
                biases[i].v[j] += other.biases[i].v[j];
        }
    }
    void scale(double s) {
        for (auto& t : weights)
            for (double& v : t.v) v *= s;
        for (auto& t : biases)
            for (double& v : t.v) v *= s;
    }
};

struct BackpropResult {
    Gradients grads;
    Tensor input_grad;
    double loss = 0.0;
};

namespace detail {

inline Tensor conv_backward(const Tensor& x, const Tensor& kernels, const Tensor& dy,
                            int stride, Tensor& dk, Tensor& db) {
    const int w = x.dims[1], c = x.dims[2];
    const int kh = kernels.dims[0], kw = kernels.dims[1], co = kernels.dims[3];
    const int oh = dy.dims[0], ow = dy.dims[1];

    Tensor dx(x.dims);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            const double* g = dy.v.data() + (static_cast<std::size_t>(oy) * ow + ox) * co;
            for (int k = 0; k < co; ++k) db.v[k] += g[k];
            for (int ky = 0; ky < kh; ++ky) {
                const std::size_t xbase =
                    (static_cast<std::size_t>(oy * stride + ky) * w + ox * stride) * c;
                for (int kx = 0; kx < kw; ++kx) {
                    const double* xv = x.v.data() + xbase + static_cast<std::size_t>(kx) * c;
                    double* dxv = dx.v.data() + xbase + static_cast<std::size_t>(kx) * c;
                    const std::size_t kbase =
                        (static_cast<std::size_t>(ky) * kw + kx) * c * static_cast<std::size_t>(co);
                    for (int q = 0; q < c; ++q) {
                        const double xval = xv[q];
                        const double* kvec = kernels.v.data() + kbase + static_cast<std::size_t>(q) * co;
                        double* dkvec = dk.v.data() + kbase + static_cast<std::size_t>(q) * co;
                        double acc = 0.0;
                        for (int k = 0; k < co; ++k) {
                            dkvec[k] += xval * g[k];
                            acc += kvec[k] * g[k];
                        }
                        dxv[q] += acc;
                    }
                }
            }
        }
    }
    return dx;
}

}  // namespace detail

/// Exact chain-rule gradients of the cross-entropy loss with respect to every
/// weight, bias, and the input. The model must end in a softmax layer.
inline BackpropResult backward(const Model& model, const Tensor& input, int target) {
    if (model.layers.empty() || model.layers.back().kind != LayerKind::Softmax)
        throw ShapeMismatch("backward: model must end with a softmax layer");

    ForwardTrace trace;
    const Tensor probs = model_forward(model, input, &trace);

    BackpropResult result;
    result.loss = cross_entropy(probs, target);
    result.grads.weights.resize(model.layers.size());
    result.grads.biases.resize(model.layers.size());
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        result.grads.weights[i] = Tensor();
        result.grads.weights[i].dims = model.weights[i].dims;
        result.grads.weights[i].v.assign(model.weights[i].size(), 0.0);
        result.grads.biases[i].dims = model.biases[i].dims;
        result.grads.biases[i].v.assign(model.biases[i].size(), 0.0);
    }

    // softmax + cross-entropy collapse to (p - onehot) at the softmax input
    Tensor grad = probs;
    grad.v[static_cast<std::size_t>(target)] -= 1.0;

    for (std::size_t idx = model.layers.size(); idx-- > 0;) {
        const LayerSpec& layer = model.layers[idx];
        const Tensor& x = trace.activations[idx];
        switch (layer.kind) {
            case LayerKind::Softmax:
                // handled jointly with the loss above
                break;
            case LayerKind::Relu: {
                Tensor dx = x;
                for (std::size_t i = 0; i < x.size(); ++i)
                    dx.v[i] = x.v[i] > 0.0 ? grad.v[i] : 0.0;
                grad = std::move(dx);
                break;
            }
            case LayerKind::MaxPool: {
                Tensor dx(x.dims);
                const auto& routes = trace.argmax[idx];
                for (std::size_t i = 0; i < routes.size(); ++i)
                    dx.v[routes[i]] += grad.v[i];
                grad = std::move(dx);
                break;
            }
            case LayerKind::FullyConnected: {
                const Tensor& weight = model.weights[idx];
                const int out_units = weight.dims[0];
                const int in_units = weight.dims[1];
                Tensor dx;
                dx.dims = x.dims;
                dx.v.assign(x.size(), 0.0);
                Tensor& dw = result.grads.weights[idx];
                Tensor& db = result.grads.biases[idx];
                for (int o = 0; o < out_units; ++o) {
                    const double g = grad.v[static_cast<std::size_t>(o)];
                    db.v[static_cast<std::size_t>(o)] += g;
                    const double* wrow = weight.v.data() + static_cast<std::size_t>(o) * in_units;
                    double* dwrow = dw.v.data() + static_cast<std::size_t>(o) * in_units;
                    for (int i = 0; i < in_units; ++i) {
                        dwrow[i] += g * x.v[static_cast<std::size_t>(i)];
                        dx.v[static_cast<std::size_t>(i)] += g * wrow[i];
                    }
                }
                grad = std::move(dx);
                break;
            }
            case LayerKind::Conv: {
                grad = detail::conv_backward(x, model.weights[idx], grad, layer.stride,
                                             result.grads.weights[idx],
                                             result.grads.biases[idx]);
                break;
            }
        }
    }
    result.input_grad = std::move(grad);
    return result;
}

// ---------------------------------------------------------------------------
// Training and prediction

struct TrainConfig {
    double learning_rate = 0.01;
    int epochs = 1;
    int batch_size = 16;
    std::uint64_t seed = 1;

    void validate() const {
        if (learning_rate <= 0.0)
            throw ShapeMismatch("TrainConfig: learning rate must be positive");
        if (epochs < 0)
            throw ShapeMismatch("TrainConfig: epochs must be nonnegative");
        if (batch_size < 1)
            throw ShapeMismatch("TrainConfig: batch size must be at least 1");
    }
};

inline Tensor patch_to_tensor(const Patch& patch) {
    // Patch data is already channels-last (slice fastest)
    Tensor t({patch.n, patch.n, patch.slices});
    for (std::size_t i = 0; i < patch.data.size(); ++i)
        t.v[i] = static_cast<double>(patch.data[i]);
    return t;
}

/// Minibatch SGD on cross-entropy. Per-sample gradients are computed in
/// parallel into per-index slots and reduced in index order, so the result
/// does not depend on the thread count or schedule.
inline Model train(Model model, const std::vector<Patch>& patches, const TrainConfig& cfg) {
    cfg.validate();
    if (patches.empty())
        throw SingleClassDataset("train: empty dataset");
    std::vector<int> labels(patches.size());
    for (std::size_t i = 0; i < patches.size(); ++i) {
        if (!patches[i].label)
            throw UnlabeledPatch("train: patch " + std::to_string(i) + " has no label");
        labels[i] = *patches[i].label;
        if (labels[i] < 0 || labels[i] >= model.classes())
            throw ShapeMismatch("train: label out of range for the model");
    }
    if (std::adjacent_find(labels.begin(), labels.end(), std::not_equal_to<>()) ==
            labels.end())
        throw SingleClassDataset("train: need at least one patch per class");

    std::vector<std::size_t> order(patches.size());
    std::iota(order.begin(), order.end(), 0);
    detail::Rng rng(cfg.seed);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const std::size_t batch_n = end - start;

            std::vector<Gradients> slots(batch_n);
            detail::parallel_for(batch_n, [&](std::size_t b) {
                const Patch& patch = patches[order[start + b]];
                const Tensor input = patch_to_tensor(patch);
                slots[b] = backward(model, input, *patch.label).grads;
            });

            Gradients total = std::move(slots[0]);
            for (std::size_t b = 1; b < batch_n; ++b) total.add(slots[b]);
            total.scale(cfg.learning_rate / static_cast<double>(batch_n));
            for (std::size_t i = 0; i < model.layers.size(); ++i) {
                for (std::size_t j = 0; j < model.weights[i].size(); ++j)
                    model.weights[i].v[j] -= total.weights[i].v[j];
                for (std::size_t j = 0; j < model.biases[i].size(); ++j)
                    model.biases[i].v[j] -= total.biases[i].v[j];
            }
        }
    }
    return model;
}

/// Class probabilities for one patch.
inline std::vector<double> predict(const Model& model, const Patch& patch) {
    const Tensor probs = model_forward(model, patch_to_tensor(patch));
    return probs.v;
}

/// Batched prediction; order of results matches the input order.
inline std::vector<std::vector<double>> predict_many(const Model& model,
                                                     const std::vector<Patch>& patches) {
    std::vector<std::vector<double>> out(patches.size());
    detail::parallel_for(patches.size(),
                         [&](std::size_t i) { out[i] = predict(model, patches[i]); });
    return out;
}

// ---------------------------------------------------------------------------
// Model file: "RBMODEL1\n", ASCII layer-spec header lines, then little-endian
// 32-bit float weights in layer order (kernel block then bias block per layer).

inline void save_model(const Model& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError(path + ": cannot open for writing");
    out << "RBMODEL1\n";
    out << "input " << model.input_shape.h << " " << model.input_shape.w << " "
        << model.input_shape.c << "\n";
    out << "seed " << model.rng_seed << "\n";
    out << "layers " << model.layers.size() << "\n";
    for (const LayerSpec& layer : model.layers) {
        switch (layer.kind) {
            case LayerKind::Conv:
                out << "conv " << layer.kernel_h << " " << layer.kernel_w << " "
                    << layer.out_channels << " " << layer.stride << "\n";
                break;
            case LayerKind::Relu: out << "relu\n"; break;
            case LayerKind::MaxPool: out << "maxpool\n"; break;
            case LayerKind::FullyConnected: out << "fc " << layer.out_units << "\n"; break;
            case LayerKind::Softmax: out << "softmax\n"; break;
        }
    }
    out << "weights\n";
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        for (double v : model.weights[i].v) detail::put_f32_le(out, static_cast<float>(v));
        for (double v : model.biases[i].v) detail::put_f32_le(out, static_cast<float>(v));
    }
    if (!out)
        throw IoError(path + ": write failed");
}

inline Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError(path + ": cannot open for reading");
    std::string line;
    std::getline(in, line);
    if (line != "RBMODEL1")
        throw MalformedModelFile(path + ": bad magic");

    Model model;
    long layer_count = -1;
    {
        std::getline(in, line);
        std::istringstream f(line);
        std::string tag;
        if (!(f >> tag >> model.input_shape.h >> model.input_shape.w >> model.input_shape.c) ||
            tag != "input" || model.input_shape.h < 1 || model.input_shape.w < 1 ||
            model.input_shape.c < 1)
            throw MalformedModelFile(path + ": bad input line");
        std::getline(in, line);
        std::istringstream s(line);
        if (!(s >> tag >> model.rng_seed) || tag != "seed")
            throw MalformedModelFile(path + ": bad seed line");
        std::getline(in, line);
        std::istringstream c(line);
        if (!(c >> tag >> layer_count) || tag != "layers" || layer_count < 1)
            throw MalformedModelFile(path + ": bad layer count");
    }
    for (long i = 0; i < layer_count; ++i) {
        std::getline(in, line);
        std::istringstream f(line);
        std::string kind;
        f >> kind;
        LayerSpec layer;
        if (kind == "conv") {
            layer.kind = LayerKind::Conv;
            if (!(f >> layer.kernel_h >> layer.kernel_w >> layer.out_channels >> layer.stride) ||
                layer.kernel_h < 1 || layer.kernel_w < 1 || layer.out_channels < 1 ||
                layer.stride < 1)
                throw MalformedModelFile(path + ": bad conv line");
        } else if (kind == "relu") {
            layer.kind = LayerKind::Relu;
        } else if (kind == "maxpool") {
            layer.kind = LayerKind::MaxPool;
        } else if (kind == "fc") {
            layer.kind = LayerKind::FullyConnected;
            if (!(f >> layer.out_units) || layer.out_units < 1)
                throw MalformedModelFile(path + ": bad fc line");
        } else if (kind == "softmax") {
            layer.kind = LayerKind::Softmax;
        } else {
            throw MalformedModelFile(path + ": unknown layer kind '" + kind + "'");
        }
        model.layers.push_back(layer);
    }
    std::getline(in, line);
    if (line != "weights")
        throw MalformedModelFile(path + ": missing weights marker");

    model.weights.resize(model.layers.size());
    model.biases.resize(model.layers.size());
    Shape3 shape = model.input_shape;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& layer = model.layers[i];
        if (layer.kind == LayerKind::Conv) {
            model.weights[i] = Tensor({layer.kernel_h, layer.kernel_w, shape.c,
                                       layer.out_channels});
            model.biases[i] = Tensor({layer.out_channels});
        } else if (layer.kind == LayerKind::FullyConnected) {
            model.weights[i] = Tensor({layer.out_units, shape.h * shape.w * shape.c});
            model.biases[i] = Tensor({layer.out_units});
        }
        shape = detail::layer_output_shape(layer, shape);
        auto read_block = [&](Tensor& t) {
            std::vector<std::uint8_t> raw(t.size() * 4);
            in.read(reinterpret_cast<char*>(raw.data()),
                    static_cast<std::streamsize>(raw.size()));
            if (static_cast<std::size_t>(in.gcount()) != raw.size())
                throw MalformedModelFile(path + ": truncated weight data");
            for (std::size_t j = 0; j < t.size(); ++j)
                t.v[j] = static_cast<double>(detail::get_f32_le(raw.data() + j * 4));
        };
        read_block(model.weights[i]);
        read_block(model.biases[i]);
    }
    return model;
}

}  // namespace rb
