#pragma once

#include <cmath>
#include <cstddef>
#include <iostream>
#include <vector>

#include "dcr/tensor.hpp"

namespace dcr {

/// Entropic regularization is specified relative to the mean ground cost of
/// the batch at hand, so the smoothing adapts to the data scale.
struct SinkhornConfig {
    double epsilon_rel = 0.1;
    std::size_t iterations = 30;

    void validate() const {
        if (!(epsilon_rel > 0.0))
            throw ValidationError("SinkhornConfig: epsilon_rel must be > 0");
        if (iterations < 1)
            throw ValidationError("SinkhornConfig: iterations must be >= 1");
    }
};

struct IpmResult {
    double value = 0.0;
    Tensor2D grad_a;  // same shape as the first point set
    Tensor2D grad_b;
    bool degenerate = false;  // one side was empty; value forced to 0
};

namespace detail {

// Keeps the full scaling-iteration history so the backward pass can walk it
// in reverse. Sizes are (batch x batch), fine at minibatch scale.
struct SinkhornTape {
    Tensor2D cost;            // n_a x n_b, Euclidean distances
    Tensor2D kernel;          // exp(-cost/eps)
    double eps = 0.0;
    double mean_cost = 0.0;
    std::vector<std::vector<double>> u_hist;  // u_0 .. u_T
    std::vector<std::vector<double>> v_hist;  // v_1 .. v_T
    std::vector<std::vector<double>> s_hist;  // s_t = K v_t       (for u_t)
    std::vector<std::vector<double>> r_hist;  // r_t = K^T u_{t-1} (for v_t)
};

constexpr double kDistEps = 1e-12;   // keeps the sqrt differentiable at 0
constexpr double kDenFloor = 1e-300; // division guard for underflowed kernels

inline double sinkhorn_forward(const Tensor2D& a, const Tensor2D& b,
                               const SinkhornConfig& cfg, SinkhornTape* tape) {
    const std::size_t na = a.rows, nb = b.rows, m = a.cols;
    Tensor2D cost(na, nb);
    double cost_sum = 0.0;
    for (std::size_t i = 0; i < na; ++i)
        for (std::size_t j = 0; j < nb; ++j) {
            double q = kDistEps;
            for (std::size_t k = 0; k < m; ++k) {
                const double d = a(i, k) - b(j, k);
                q += d * d;
            }
            const double c = std::sqrt(q);
            cost(i, j) = c;
            cost_sum += c;
        }
    const double mean_cost = cost_sum / static_cast<double>(na * nb);
    const double eps = cfg.epsilon_rel * mean_cost;

    Tensor2D kernel(na, nb);
    for (std::size_t i = 0; i < cost.data.size(); ++i)
        kernel.data[i] = std::exp(-cost.data[i] / eps);

    const double wa = 1.0 / static_cast<double>(na);
    const double wb = 1.0 / static_cast<double>(nb);
    std::vector<double> u(na, wa), v(nb, 0.0);

    if (tape) {
        tape->cost = cost;
        tape->kernel = kernel;
        tape->eps = eps;
        tape->mean_cost = mean_cost;
        tape->u_hist.clear();
        tape->v_hist.clear();
        tape->s_hist.clear();
        tape->r_hist.clear();
        tape->u_hist.push_back(u);
    }

    std::vector<double> r(nb), s(na);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        // v = b ./ (K^T u)
        for (std::size_t j = 0; j < nb; ++j) r[j] = 0.0;
        for (std::size_t i = 0; i < na; ++i) {
            const double ui = u[i];
            const double* krow = kernel.data.data() + i * nb;
            for (std::size_t j = 0; j < nb; ++j) r[j] += krow[j] * ui;
        }
        for (std::size_t j = 0; j < nb; ++j)
            v[j] = wb / std::max(r[j], kDenFloor);
        // u = a ./ (K v)
        for (std::size_t i = 0; i < na; ++i) {
            const double* krow = kernel.data.data() + i * nb;
            double acc = 0.0;
            for (std::size_t j = 0; j < nb; ++j) acc += krow[j] * v[j];
            s[i] = acc;
            u[i] = wa / std::max(acc, kDenFloor);
        }
        if (tape) {
            tape->r_hist.push_back(r);
            tape->v_hist.push_back(v);
            tape->s_hist.push_back(s);
            tape->u_hist.push_back(u);
        }
    }

    // transport cost of the resulting plan, <P, C> with P = diag(u) K diag(v)
    double value = 0.0;
    for (std::size_t i = 0; i < na; ++i) {
        const double* krow = kernel.data.data() + i * nb;
        const double* crow = cost.data.data() + i * nb;
        double acc = 0.0;
        for (std::size_t j = 0; j < nb; ++j) acc += krow[j] * v[j] * crow[j];
        value += u[i] * acc;
    }
    if (!std::isfinite(value))
        throw NumericError("ipm_wasserstein: non-finite transport cost");
    return value;
}

}  // namespace detail

/// Entropic-regularized optimal transport cost between two point sets with
/// uniform marginals and Euclidean ground cost. An empty side is the
/// degenerate minibatch case: the value is 0 and a warning is emitted.
inline double ipm_wasserstein(const Tensor2D& a, const Tensor2D& b,
                              const SinkhornConfig& cfg = {}) {
    cfg.validate();
    if (a.rows == 0 || b.rows == 0) {
        std::cerr << "warning: ipm_wasserstein called with an empty group, "
                     "returning 0\n";
        return 0.0;
    }
    if (a.cols != b.cols)
        throw DimensionError("ipm_wasserstein: point dims " + shape_str(a) +
                             " vs " + shape_str(b));
    return detail::sinkhorn_forward(a, b, cfg, nullptr);
}

/// Same value plus exact gradients w.r.t. both point sets, obtained by
/// backpropagating through the unrolled scaling iterations (the regularizer
/// eps = epsilon_rel * mean(C) is itself a function of the inputs and is
/// differentiated through as well, so finite differences of the forward value
/// match these gradients).
inline IpmResult ipm_wasserstein_with_grad(const Tensor2D& a, const Tensor2D& b,
                                           const SinkhornConfig& cfg = {}) {
    cfg.validate();
    IpmResult res;
    res.grad_a = Tensor2D(a.rows, a.cols);
    res.grad_b = Tensor2D(b.rows, b.cols);
    if (a.rows == 0 || b.rows == 0) {
        std::cerr << "warning: ipm_wasserstein called with an empty group, "
                     "returning 0\n";
        res.degenerate = true;
        return res;
    }
    if (a.cols != b.cols)
        throw DimensionError("ipm_wasserstein: point dims " + shape_str(a) +
                             " vs " + shape_str(b));

    detail::SinkhornTape tape;
    res.value = detail::sinkhorn_forward(a, b, cfg, &tape);

    const std::size_t na = a.rows, nb = b.rows, m = a.cols;
    const std::size_t T = cfg.iterations;
    const Tensor2D& K = tape.kernel;
    const Tensor2D& C = tape.cost;
    const std::vector<double>& uT = tape.u_hist[T];
    const std::vector<double>& vT = tape.v_hist[T - 1];

    // Direct terms of value = sum_ij u_i K_ij v_j C_ij.
    std::vector<double> gu(na, 0.0), gv(nb, 0.0);
    Tensor2D gK(na, nb), gC(na, nb);
    for (std::size_t i = 0; i < na; ++i)
        for (std::size_t j = 0; j < nb; ++j) {
            const double k = K(i, j), c = C(i, j);
            gu[i] += k * vT[j] * c;
            gv[j] += uT[i] * k * c;
            gK(i, j) = uT[i] * vT[j] * c;
            gC(i, j) = uT[i] * k * vT[j];
        }

    // Reverse sweep over the iterations.
    for (std::size_t t = T; t-- > 0;) {
        const std::vector<double>& ut = tape.u_hist[t + 1];
        const std::vector<double>& vt = tape.v_hist[t];
        const std::vector<double>& st = tape.s_hist[t];
        const std::vector<double>& rt = tape.r_hist[t];
        const std::vector<double>& uprev = tape.u_hist[t];

        // u_t = wa / s_t, s_t = K v_t
        std::vector<double> gs(na);
        for (std::size_t i = 0; i < na; ++i)
            gs[i] = -gu[i] * ut[i] / std::max(st[i], detail::kDenFloor);
        std::vector<double> gv_next(nb, 0.0);
        for (std::size_t i = 0; i < na; ++i) {
            const double* krow = K.data.data() + i * nb;
            double* gkrow = gK.data.data() + i * nb;
            const double gsi = gs[i];
            for (std::size_t j = 0; j < nb; ++j) {
                gkrow[j] += gsi * vt[j];
                gv_next[j] += gsi * krow[j];
            }
        }
        for (std::size_t j = 0; j < nb; ++j) gv[j] += gv_next[j];

        // v_t = wb / r_t, r_t = K^T u_{t-1}
        std::vector<double> gr(nb);
        for (std::size_t j = 0; j < nb; ++j)
            gr[j] = -gv[j] * vt[j] / std::max(rt[j], detail::kDenFloor);
        std::vector<double> gu_prev(na, 0.0);
        for (std::size_t i = 0; i < na; ++i) {
            const double* krow = K.data.data() + i * nb;
            double* gkrow = gK.data.data() + i * nb;
            const double up = uprev[i];
            double acc = 0.0;
            for (std::size_t j = 0; j < nb; ++j) {
                gkrow[j] += up * gr[j];
                acc += krow[j] * gr[j];
            }
            gu_prev[i] = acc;
        }
        gu = std::move(gu_prev);
        std::fill(gv.begin(), gv.end(), 0.0);
    }
    // gu now refers to the constant initial scaling; nothing flows further.

    // K = exp(-C/eps): pull kernel gradients into C and eps.
    const double eps = tape.eps;
    double geps = 0.0;
    for (std::size_t i = 0; i < gK.data.size(); ++i) {
        const double k = K.data[i], c = C.data[i];
        gC.data[i] += gK.data[i] * k * (-1.0 / eps);
        geps += gK.data[i] * k * c / (eps * eps);
    }
    // eps = epsilon_rel * mean(C)
    const double per_entry = geps * cfg.epsilon_rel / static_cast<double>(na * nb);
    for (double& g : gC.data) g += per_entry;

    // C_ij = ||a_i - b_j||: route into the point coordinates.
    for (std::size_t i = 0; i < na; ++i)
        for (std::size_t j = 0; j < nb; ++j) {
            const double g = gC(i, j) / C(i, j);
            for (std::size_t k = 0; k < m; ++k) {
                const double d = a(i, k) - b(j, k);
                res.grad_a(i, k) += g * d;
                res.grad_b(j, k) -= g * d;
            }
        }
    return res;
}

}  // namespace dcr
