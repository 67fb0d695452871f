#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "dcr/rng.hpp"
#include "dcr/tensor.hpp"

namespace dcr {

enum class Activation { Identity, Elu, Sigmoid };

inline double activate(Activation a, double z) {
    switch (a) {
        case Activation::Identity: return z;
        case Activation::Elu: return z >= 0.0 ? z : std::expm1(z);
        case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-z));
    }
    return z;
}

/// Derivative of the activation expressed through its output value.
/// For elu: y >= 0 iff z >= 0, and d/dz = e^z = y + 1 on the negative branch.
inline double activation_grad(Activation a, double y) {
    switch (a) {
        case Activation::Identity: return 1.0;
        case Activation::Elu: return y >= 0.0 ? 1.0 : y + 1.0;
        case Activation::Sigmoid: return y * (1.0 - y);
    }
    return 1.0;
}

/// Fully connected layer. Bias is stored as a 1 x out_dim tensor so that all
/// trainable arrays share one type.
struct DenseLayer {
    Tensor2D weight;  // in_dim x out_dim
    Tensor2D bias;    // 1 x out_dim
    Activation activation = Activation::Identity;

    std::size_t in_dim() const { return weight.rows; }
    std::size_t out_dim() const { return weight.cols; }
};

/// Parameter gradients of one layer.
struct DenseGrads {
    Tensor2D weight;
    Tensor2D bias;
};

/// Scale-preserving uniform init in +-sqrt(6/(fan_in+fan_out)); bias zero.
inline DenseLayer make_dense(std::size_t in_dim, std::size_t out_dim,
                             Activation act, Rng& rng) {
    if (in_dim == 0 || out_dim == 0)
        throw DimensionError("make_dense: zero-sized layer");
    DenseLayer layer;
    layer.weight = Tensor2D(in_dim, out_dim);
    layer.bias = Tensor2D(1, out_dim);
    layer.activation = act;
    const double limit = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
    for (double& w : layer.weight.data) w = rng.uniform(-limit, limit);
    return layer;
}

inline Tensor2D dense_forward(const DenseLayer& layer, const Tensor2D& input) {
    if (input.cols != layer.in_dim())
        throw DimensionError("dense_forward: input " + shape_str(input) +
                             " vs weight " + shape_str(layer.weight));
    Tensor2D out(input.rows, layer.out_dim());
    for (std::size_t i = 0; i < input.rows; ++i) {
        double* orow = out.data.data() + i * out.cols;
        for (std::size_t j = 0; j < out.cols; ++j) orow[j] = layer.bias(0, j);
        const double* irow = input.data.data() + i * input.cols;
        for (std::size_t k = 0; k < input.cols; ++k) {
            const double x = irow[k];
            if (x == 0.0) continue;
            const double* wrow = layer.weight.data.data() + k * layer.weight.cols;
            for (std::size_t j = 0; j < out.cols; ++j) orow[j] += x * wrow[j];
        }
        for (std::size_t j = 0; j < out.cols; ++j)
            orow[j] = activate(layer.activation, orow[j]);
    }
    if (!out.all_finite())
        throw NumericError("dense_forward: non-finite output");
    return out;
}

struct DenseBackward {
    DenseGrads params;
    Tensor2D input_grad;
};

/// Exact reverse-mode gradients of dense_forward contracted with
/// upstream_grad. cached_input/cached_output must come from the forward pass.
inline DenseBackward dense_backward(const DenseLayer& layer,
                                    const Tensor2D& cached_input,
                                    const Tensor2D& cached_output,
                                    const Tensor2D& upstream_grad) {
    const std::size_t n = cached_input.rows;
    if (cached_input.cols != layer.in_dim())
        throw DimensionError("dense_backward: cached input shape");
    if (cached_output.rows != n || cached_output.cols != layer.out_dim())
        throw DimensionError("dense_backward: cached output shape");
    if (!upstream_grad.same_shape(cached_output))
        throw DimensionError("dense_backward: upstream grad shape");

    DenseBackward r;
    r.params.weight = Tensor2D(layer.in_dim(), layer.out_dim());
    r.params.bias = Tensor2D(1, layer.out_dim());
    r.input_grad = Tensor2D(n, layer.in_dim());

    // dz = upstream * act'(output), then one pass for each of the three grads
    Tensor2D dz(n, layer.out_dim());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dz.cols; ++j)
            dz(i, j) = upstream_grad(i, j) *
                       activation_grad(layer.activation, cached_output(i, j));

    for (std::size_t i = 0; i < n; ++i) {
        const double* xrow = cached_input.data.data() + i * cached_input.cols;
        const double* zrow = dz.data.data() + i * dz.cols;
        for (std::size_t j = 0; j < dz.cols; ++j) r.params.bias(0, j) += zrow[j];
        for (std::size_t k = 0; k < cached_input.cols; ++k) {
            const double x = xrow[k];
            double* gw = r.params.weight.data.data() + k * r.params.weight.cols;
            const double* w = layer.weight.data.data() + k * layer.weight.cols;
            double gin = 0.0;
            for (std::size_t j = 0; j < dz.cols; ++j) {
                gw[j] += x * zrow[j];
                gin += w[j] * zrow[j];
            }
            r.input_grad(i, k) = gin;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Layer stacks
// ---------------------------------------------------------------------------

using DenseStack = std::vector<DenseLayer>;

/// Builds a stack where hidden layers use elu and the last layer uses
/// final_act. widths lists the output dim of every layer, last included.
inline DenseStack make_stack(std::size_t in_dim,
                             const std::vector<std::size_t>& widths,
                             Activation final_act, Rng& rng) {
    DenseStack stack;
    stack.reserve(widths.size());
    std::size_t cur = in_dim;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        const bool last = (i + 1 == widths.size());
        stack.push_back(make_dense(cur, widths[i], last ? final_act : Activation::Elu, rng));
        cur = widths[i];
    }
    return stack;
}

/// activations[0] is the input, activations[i+1] the output of layer i.
struct StackCache {
    std::vector<Tensor2D> activations;
};

inline Tensor2D forward_stack(const DenseStack& stack, const Tensor2D& input) {
    Tensor2D h = input;
    for (const auto& layer : stack) h = dense_forward(layer, h);
    return h;
}

inline const Tensor2D& forward_stack(const DenseStack& stack, const Tensor2D& input,
                                     StackCache& cache) {
    cache.activations.clear();
    cache.activations.reserve(stack.size() + 1);
    cache.activations.push_back(input);
    for (const auto& layer : stack)
        cache.activations.push_back(dense_forward(layer, cache.activations.back()));
    return cache.activations.back();
}

inline std::vector<DenseGrads> zero_grads(const DenseStack& stack) {
    std::vector<DenseGrads> g;
    g.reserve(stack.size());
    for (const auto& layer : stack)
        g.push_back({Tensor2D(layer.in_dim(), layer.out_dim()),
                     Tensor2D(1, layer.out_dim())});
    return g;
}

/// Backprop through a whole stack; parameter grads are accumulated into sink
/// (scaled by scale), the returned tensor is the gradient w.r.t. the input.
inline Tensor2D backward_stack(const DenseStack& stack, const StackCache& cache,
                               const Tensor2D& upstream,
                               std::vector<DenseGrads>& sink, double scale = 1.0) {
    if (sink.size() != stack.size())
        throw DimensionError("backward_stack: grad sink size");
    Tensor2D g = upstream;
    for (std::size_t li = stack.size(); li-- > 0;) {
        DenseBackward b = dense_backward(stack[li], cache.activations[li],
                                         cache.activations[li + 1], g);
        axpy(scale, b.params.weight, sink[li].weight);
        axpy(scale, b.params.bias, sink[li].bias);
        g = std::move(b.input_grad);
    }
    return g;
}

}  // namespace dcr
