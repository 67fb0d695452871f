#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dcr/dense.hpp"
#include "dcr/rng.hpp"
#include "dcr/tensor.hpp"

namespace dcr {

/// Architecture and seed. Width lists include the output layer of each stack
/// (classifier and outcome stacks must therefore end in 1, factor heads in
/// factor_dim). Leaving factor_dim at 0 picks factor_dim = input_dim, and an
/// empty head_layers becomes the single layer {factor_dim}.
struct ModelConfig {
    std::size_t input_dim = 0;
    std::size_t factor_dim = 0;
    std::vector<std::size_t> shared_layers = {64, 64};
    std::vector<std::size_t> head_layers = {};
    std::vector<std::size_t> classifier_layers = {32, 1};
    std::vector<std::size_t> outcome_layers = {64, 32, 1};
    std::vector<std::size_t> q_layers = {32};
    bool sfd_enabled = true;
    bool binary_outcome = false;
    std::uint64_t seed = 0;

    ModelConfig resolved() const {
        ModelConfig c = *this;
        if (c.input_dim < 1)
            throw ValidationError("ModelConfig: input_dim must be >= 1");
        if (c.factor_dim == 0) c.factor_dim = c.input_dim;
        if (c.head_layers.empty()) c.head_layers = {c.factor_dim};
        auto check_widths = [](const std::vector<std::size_t>& w, const char* name) {
            for (std::size_t x : w)
                if (x < 1)
                    throw ValidationError(std::string("ModelConfig: zero width in ") + name);
        };
        check_widths(c.shared_layers, "shared_layers");
        check_widths(c.head_layers, "head_layers");
        check_widths(c.classifier_layers, "classifier_layers");
        check_widths(c.outcome_layers, "outcome_layers");
        check_widths(c.q_layers, "q_layers");
        if (c.head_layers.back() != c.factor_dim)
            throw ValidationError("ModelConfig: head_layers must end in factor_dim");
        if (c.classifier_layers.empty() || c.classifier_layers.back() != 1)
            throw ValidationError("ModelConfig: classifier_layers must end in 1");
        if (c.outcome_layers.empty() || c.outcome_layers.back() != 1)
            throw ValidationError("ModelConfig: outcome_layers must end in 1");
        return c;
    }
};

/// Conditional-density net: diagonal Gaussian with input-dependent mean and
/// log-variance. The log-variance is saturated smoothly into [-8, 8].
struct VariationalNet {
    DenseStack trunk;       // may be empty
    DenseLayer mean_head;   // trunk_out -> m, identity
    DenseLayer logvar_head; // trunk_out -> m, identity (pre-saturation)
};

struct ModelParams {
    ModelConfig config;          // resolved
    DenseStack shared_stack;     // empty when sfd_enabled == false
    DenseStack gamma_head, delta_head, upsilon_head;
    DenseStack pi_classifier;    // on concat(gamma, delta), ends in sigmoid
    DenseStack h0_head, h1_head; // on concat(upsilon, delta)
    VariationalNet q_gd, q_du, q_ug;
};

/// Batched latent factors, one n x m matrix per factor.
struct FactorTriple {
    Tensor2D gamma, delta, upsilon;
};

namespace detail {

inline VariationalNet make_qnet(std::size_t m, const std::vector<std::size_t>& widths,
                                Rng& rng) {
    VariationalNet q;
    std::size_t cur = m;
    for (std::size_t w : widths) {
        q.trunk.push_back(make_dense(cur, w, Activation::Elu, rng));
        cur = w;
    }
    q.mean_head = make_dense(cur, m, Activation::Identity, rng);
    q.logvar_head = make_dense(cur, m, Activation::Identity, rng);
    return q;
}

}  // namespace detail

inline ModelParams init_model(const ModelConfig& config) {
    ModelParams p;
    p.config = config.resolved();
    const auto& c = p.config;
    Rng rng(c.seed);

    const Activation outcome_act =
        c.binary_outcome ? Activation::Sigmoid : Activation::Identity;
    if (c.sfd_enabled) {
        p.shared_stack = make_stack(c.input_dim, c.shared_layers, Activation::Elu, rng);
        const std::size_t enc_out =
            c.shared_layers.empty() ? c.input_dim : c.shared_layers.back();
        p.gamma_head = make_stack(enc_out, c.head_layers, Activation::Elu, rng);
        p.delta_head = make_stack(enc_out, c.head_layers, Activation::Elu, rng);
        p.upsilon_head = make_stack(enc_out, c.head_layers, Activation::Elu, rng);
    } else {
        // Three fully separate stacks of the same total depth.
        std::vector<std::size_t> widths = c.shared_layers;
        widths.insert(widths.end(), c.head_layers.begin(), c.head_layers.end());
        p.gamma_head = make_stack(c.input_dim, widths, Activation::Elu, rng);
        p.delta_head = make_stack(c.input_dim, widths, Activation::Elu, rng);
        p.upsilon_head = make_stack(c.input_dim, widths, Activation::Elu, rng);
    }
    p.pi_classifier =
        make_stack(2 * c.factor_dim, c.classifier_layers, Activation::Sigmoid, rng);
    p.h0_head = make_stack(2 * c.factor_dim, c.outcome_layers, outcome_act, rng);
    p.h1_head = make_stack(2 * c.factor_dim, c.outcome_layers, outcome_act, rng);
    // q nets are seeded after the main model so that main-parameter init does
    // not depend on whether the MI machinery is exercised.
    p.q_gd = detail::make_qnet(c.factor_dim, c.q_layers, rng);
    p.q_du = detail::make_qnet(c.factor_dim, c.q_layers, rng);
    p.q_ug = detail::make_qnet(c.factor_dim, c.q_layers, rng);
    return p;
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

struct EncodeCache {
    StackCache shared, gamma, delta, upsilon;
};

inline FactorTriple encode(const ModelParams& p, const Tensor2D& x, EncodeCache& cache) {
    if (x.cols != p.config.input_dim)
        throw DimensionError("encode: input has " + std::to_string(x.cols) +
                             " columns, model expects " +
                             std::to_string(p.config.input_dim));
    const Tensor2D* base = &x;
    if (p.config.sfd_enabled && !p.shared_stack.empty())
        base = &forward_stack(p.shared_stack, x, cache.shared);
    FactorTriple f;
    f.gamma = forward_stack(p.gamma_head, *base, cache.gamma);
    f.delta = forward_stack(p.delta_head, *base, cache.delta);
    f.upsilon = forward_stack(p.upsilon_head, *base, cache.upsilon);
    return f;
}

inline FactorTriple encode(const ModelParams& p, const Tensor2D& x) {
    EncodeCache cache;
    return encode(p, x, cache);
}

/// Gradient sink mirroring the main (non-variational) parameters.
struct ModelGrads {
    std::vector<DenseGrads> shared, gamma_head, delta_head, upsilon_head;
    std::vector<DenseGrads> pi_classifier, h0_head, h1_head;

    static ModelGrads zeros_like(const ModelParams& p) {
        ModelGrads g;
        g.shared = zero_grads(p.shared_stack);
        g.gamma_head = zero_grads(p.gamma_head);
        g.delta_head = zero_grads(p.delta_head);
        g.upsilon_head = zero_grads(p.upsilon_head);
        g.pi_classifier = zero_grads(p.pi_classifier);
        g.h0_head = zero_grads(p.h0_head);
        g.h1_head = zero_grads(p.h1_head);
        return g;
    }
};

/// Backprop (already-weighted) factor gradients through the encoder.
inline void encode_backward(const ModelParams& p, const EncodeCache& cache,
                            const Tensor2D& grad_gamma, const Tensor2D& grad_delta,
                            const Tensor2D& grad_upsilon, ModelGrads& sink) {
    Tensor2D gg = backward_stack(p.gamma_head, cache.gamma, grad_gamma, sink.gamma_head);
    Tensor2D gd = backward_stack(p.delta_head, cache.delta, grad_delta, sink.delta_head);
    Tensor2D gu = backward_stack(p.upsilon_head, cache.upsilon, grad_upsilon,
                                 sink.upsilon_head);
    if (p.config.sfd_enabled && !p.shared_stack.empty()) {
        axpy(1.0, gd, gg);
        axpy(1.0, gu, gg);
        backward_stack(p.shared_stack, cache.shared, gg, sink.shared);
    }
}

// ---------------------------------------------------------------------------
// Heads
// ---------------------------------------------------------------------------

struct PropensityCache {
    Tensor2D omega;  // concat(gamma, delta)
    StackCache stack;
};

/// Raw classifier outputs in (0,1); clamping to the log-safe range happens in
/// the losses and in predict_propensity.
inline std::vector<double> propensity_forward(const ModelParams& p,
                                              const FactorTriple& f,
                                              PropensityCache& cache) {
    cache.omega = hconcat(f.gamma, f.delta);
    const Tensor2D& out = forward_stack(p.pi_classifier, cache.omega, cache.stack);
    std::vector<double> probs(out.rows);
    for (std::size_t i = 0; i < out.rows; ++i) probs[i] = out(i, 0);
    return probs;
}

/// d(loss)/d(prob) back to factor gradients and classifier parameter grads.
inline void propensity_backward(const ModelParams& p, const PropensityCache& cache,
                                const std::vector<double>& grad_prob, double scale,
                                ModelGrads& sink, Tensor2D& grad_gamma,
                                Tensor2D& grad_delta) {
    Tensor2D upstream(grad_prob.size(), 1);
    for (std::size_t i = 0; i < grad_prob.size(); ++i) upstream(i, 0) = grad_prob[i];
    Tensor2D gomega =
        backward_stack(p.pi_classifier, cache.stack, upstream, sink.pi_classifier, scale);
    const std::size_t m = p.config.factor_dim;
    for (std::size_t i = 0; i < gomega.rows; ++i)
        for (std::size_t k = 0; k < m; ++k) {
            grad_gamma(i, k) += scale * gomega(i, k);
            grad_delta(i, k) += scale * gomega(i, m + k);
        }
}

struct OutcomeCache {
    std::vector<std::size_t> idx0, idx1;  // row indices per treatment arm
    Tensor2D phi0, phi1;                  // gathered concat(upsilon, delta) rows
    StackCache c0, c1;
};

inline void validate_binary_treatment(std::span<const double> t) {
    for (double v : t)
        if (v != 0.0 && v != 1.0)
            throw ValidationError("treatment vector must be 0/1");
}

/// Row i goes through h1 if t_i == 1 else h0, applied to concat(upsilon, delta).
inline std::vector<double> outcome_forward(const ModelParams& p, const FactorTriple& f,
                                           std::span<const double> t,
                                           OutcomeCache& cache) {
    const std::size_t n = f.upsilon.rows;
    if (t.size() != n) throw DimensionError("outcome_forward: t length");
    validate_binary_treatment(t);
    const std::size_t m = p.config.factor_dim;
    cache.idx0.clear();
    cache.idx1.clear();
    for (std::size_t i = 0; i < n; ++i)
        (t[i] == 1.0 ? cache.idx1 : cache.idx0).push_back(i);

    auto gather = [&](const std::vector<std::size_t>& idx) {
        Tensor2D phi(idx.size(), 2 * m);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const std::size_t i = idx[r];
            for (std::size_t k = 0; k < m; ++k) {
                phi(r, k) = f.upsilon(i, k);
                phi(r, m + k) = f.delta(i, k);
            }
        }
        return phi;
    };
    cache.phi0 = gather(cache.idx0);
    cache.phi1 = gather(cache.idx1);

    std::vector<double> y_hat(n, 0.0);
    if (!cache.idx0.empty()) {
        const Tensor2D& out0 = forward_stack(p.h0_head, cache.phi0, cache.c0);
        for (std::size_t r = 0; r < cache.idx0.size(); ++r)
            y_hat[cache.idx0[r]] = out0(r, 0);
    }
    if (!cache.idx1.empty()) {
        const Tensor2D& out1 = forward_stack(p.h1_head, cache.phi1, cache.c1);
        for (std::size_t r = 0; r < cache.idx1.size(); ++r)
            y_hat[cache.idx1[r]] = out1(r, 0);
    }
    return y_hat;
}

inline void outcome_backward(const ModelParams& p, const OutcomeCache& cache,
                             const std::vector<double>& grad_y_hat, double scale,
                             ModelGrads& sink, Tensor2D& grad_upsilon,
                             Tensor2D& grad_delta) {
    const std::size_t m = p.config.factor_dim;
    auto arm = [&](const DenseStack& head, const StackCache& sc,
                   const std::vector<std::size_t>& idx,
                   std::vector<DenseGrads>& head_sink) {
        if (idx.empty()) return;
        Tensor2D upstream(idx.size(), 1);
        for (std::size_t r = 0; r < idx.size(); ++r) upstream(r, 0) = grad_y_hat[idx[r]];
        Tensor2D gphi = backward_stack(head, sc, upstream, head_sink, scale);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const std::size_t i = idx[r];
            for (std::size_t k = 0; k < m; ++k) {
                grad_upsilon(i, k) += scale * gphi(r, k);
                grad_delta(i, k) += scale * gphi(r, m + k);
            }
        }
    };
    arm(p.h0_head, cache.c0, cache.idx0, sink.h0_head);
    arm(p.h1_head, cache.c1, cache.idx1, sink.h1_head);
}

// ---------------------------------------------------------------------------
// Public prediction ops
// ---------------------------------------------------------------------------

inline constexpr double kProbClampLo = 1e-7;
inline constexpr double kProbClampHi = 1.0 - 1e-7;

inline double clamp_prob(double p) {
    return p < kProbClampLo ? kProbClampLo : (p > kProbClampHi ? kProbClampHi : p);
}

inline std::vector<double> predict_propensity(const ModelParams& p,
                                              const FactorTriple& f) {
    PropensityCache cache;
    std::vector<double> probs = propensity_forward(p, f, cache);
    for (double& v : probs) v = clamp_prob(v);
    return probs;
}

inline std::vector<double> predict_outcome(const ModelParams& p, const FactorTriple& f,
                                           std::span<const double> t) {
    OutcomeCache cache;
    return outcome_forward(p, f, t, cache);
}

/// Predicted individual effect: h1(phi) - h0(phi) per row, one encoder pass.
inline std::vector<double> predict_ite(const ModelParams& p, const Tensor2D& x_batch) {
    FactorTriple f = encode(p, x_batch);
    Tensor2D phi = hconcat(f.upsilon, f.delta);
    Tensor2D y1 = forward_stack(p.h1_head, phi);
    Tensor2D y0 = forward_stack(p.h0_head, phi);
    std::vector<double> tau(x_batch.rows);
    for (std::size_t i = 0; i < tau.size(); ++i) tau[i] = y1(i, 0) - y0(i, 0);
    return tau;
}

// ---------------------------------------------------------------------------
// Input-to-factor contribution vectors
// ---------------------------------------------------------------------------

inline std::vector<const Tensor2D*> factor_path_weights(const ModelParams& p,
                                                        std::size_t factor) {
    std::vector<const Tensor2D*> ws;
    if (p.config.sfd_enabled)
        for (const auto& l : p.shared_stack) ws.push_back(&l.weight);
    const DenseStack& head =
        factor == 0 ? p.gamma_head : (factor == 1 ? p.delta_head : p.upsilon_head);
    for (const auto& l : head) ws.push_back(&l.weight);
    return ws;
}

/// Linearized input->factor map: multiply the weight matrices along each
/// factor's path (activations and biases ignored), take absolute values and
/// average over the factor dimensions. One d-vector per factor.
inline std::array<std::vector<double>, 3> contribution_vectors(const ModelParams& p) {
    std::array<std::vector<double>, 3> out;
    for (std::size_t f = 0; f < 3; ++f) {
        auto ws = factor_path_weights(p, f);
        Tensor2D eff = *ws.front();
        for (std::size_t i = 1; i < ws.size(); ++i) eff = matmul(eff, *ws[i]);
        std::vector<double> wbar(eff.rows, 0.0);
        for (std::size_t i = 0; i < eff.rows; ++i) {
            double acc = 0.0;
            for (std::size_t c = 0; c < eff.cols; ++c) acc += std::abs(eff(i, c));
            wbar[i] = acc / static_cast<double>(eff.cols);
        }
        out[f] = std::move(wbar);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Variational net evaluation
// ---------------------------------------------------------------------------

inline constexpr double kLogvarLimit = 8.0;

struct QCache {
    StackCache trunk;
    Tensor2D trunk_out;
    Tensor2D mu;
    Tensor2D logvar_raw;  // pre-saturation head output
    Tensor2D logvar;      // 8*tanh(raw/8)
};

inline void qnet_forward(const VariationalNet& q, const Tensor2D& a, QCache& cache) {
    if (q.trunk.empty()) {
        cache.trunk.activations.assign(1, a);
        cache.trunk_out = a;
    } else {
        cache.trunk_out = forward_stack(q.trunk, a, cache.trunk);
    }
    cache.mu = dense_forward(q.mean_head, cache.trunk_out);
    cache.logvar_raw = dense_forward(q.logvar_head, cache.trunk_out);
    cache.logvar = cache.logvar_raw;
    for (double& v : cache.logvar.data)
        v = kLogvarLimit * std::tanh(v / kLogvarLimit);
}

// ---------------------------------------------------------------------------
// Parameter enumeration (checkpointing, optimizers, gradient checks)
// ---------------------------------------------------------------------------

struct ParamRef {
    std::string name;
    Tensor2D* tensor;
};

namespace detail {

inline void push_stack_refs(const std::string& prefix, DenseStack& stack,
                            std::vector<ParamRef>& out) {
    for (std::size_t i = 0; i < stack.size(); ++i) {
        out.push_back({prefix + "." + std::to_string(i) + ".weight", &stack[i].weight});
        out.push_back({prefix + "." + std::to_string(i) + ".bias", &stack[i].bias});
    }
}

inline void push_qnet_refs(const std::string& prefix, VariationalNet& q,
                           std::vector<ParamRef>& out) {
    push_stack_refs(prefix + ".trunk", q.trunk, out);
    out.push_back({prefix + ".mean.weight", &q.mean_head.weight});
    out.push_back({prefix + ".mean.bias", &q.mean_head.bias});
    out.push_back({prefix + ".logvar.weight", &q.logvar_head.weight});
    out.push_back({prefix + ".logvar.bias", &q.logvar_head.bias});
}

}  // namespace detail

/// Main-model parameters in a fixed order (q nets excluded).
inline std::vector<ParamRef> main_param_refs(ModelParams& p) {
    std::vector<ParamRef> refs;
    detail::push_stack_refs("shared", p.shared_stack, refs);
    detail::push_stack_refs("gamma_head", p.gamma_head, refs);
    detail::push_stack_refs("delta_head", p.delta_head, refs);
    detail::push_stack_refs("upsilon_head", p.upsilon_head, refs);
    detail::push_stack_refs("pi", p.pi_classifier, refs);
    detail::push_stack_refs("h0", p.h0_head, refs);
    detail::push_stack_refs("h1", p.h1_head, refs);
    return refs;
}

inline std::vector<ParamRef> q_param_refs(ModelParams& p) {
    std::vector<ParamRef> refs;
    detail::push_qnet_refs("q_gd", p.q_gd, refs);
    detail::push_qnet_refs("q_du", p.q_du, refs);
    detail::push_qnet_refs("q_ug", p.q_ug, refs);
    return refs;
}

inline std::vector<ParamRef> all_param_refs(ModelParams& p) {
    std::vector<ParamRef> refs = main_param_refs(p);
    auto q = q_param_refs(p);
    refs.insert(refs.end(), q.begin(), q.end());
    return refs;
}

/// Gradient tensors in the same order as main_param_refs.
inline std::vector<const Tensor2D*> main_grad_tensors(const ModelGrads& g) {
    std::vector<const Tensor2D*> out;
    auto push = [&](const std::vector<DenseGrads>& v) {
        for (const auto& dg : v) {
            out.push_back(&dg.weight);
            out.push_back(&dg.bias);
        }
    };
    push(g.shared);
    push(g.gamma_head);
    push(g.delta_head);
    push(g.upsilon_head);
    push(g.pi_classifier);
    push(g.h0_head);
    push(g.h1_head);
    return out;
}

inline std::size_t param_count(const ModelParams& p) {
    std::size_t n = 0;
    auto& mut = const_cast<ModelParams&>(p);
    for (const auto& r : all_param_refs(mut)) n += r.tensor->size();
    return n;
}

}  // namespace dcr
