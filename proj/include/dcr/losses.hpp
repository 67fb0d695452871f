#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dcr/model.hpp"
#include "dcr/sinkhorn.hpp"
#include "dcr/types.hpp"

namespace dcr {

inline constexpr double kLog2Pi = 1.8378770664093453;

struct LossWeights {
    double alpha = 1.0;   // treatment cross-entropy
    double beta = 1.0;    // IPM on the adjustment factor
    double gamma = 0.1;   // MI regularizer (or orthogonality penalty)
    double lambda = 1e-4; // weight decay

    void validate() const {
        for (double w : {alpha, beta, gamma, lambda})
            if (!(std::isfinite(w) && w >= 0.0))
                throw ValidationError("LossWeights: weights must be finite and >= 0");
    }
};

/// Which independence term enters the objective: the variational MI bound,
/// the contribution-vector orthogonality penalty, or neither.
enum class MiMode { Mim, Rlo, None };

struct Batch {
    Tensor2D x;
    std::vector<double> t;
    std::vector<double> y;
    OutcomeType outcome_type = OutcomeType::Continuous;
};

// ---------------------------------------------------------------------------
// Outcome / treatment losses
// ---------------------------------------------------------------------------

namespace detail {

inline void require_equal_lengths(std::size_t a, std::size_t b, const char* what) {
    if (a != b || a == 0)
        throw DimensionError(std::string(what) + ": lengths " + std::to_string(a) +
                             " vs " + std::to_string(b));
}

struct ScalarLossGrad {
    double value = 0.0;
    std::vector<double> grad;  // d value / d prediction
};

inline ScalarLossGrad mse_with_grad(std::span<const double> y_hat,
                                    std::span<const double> y) {
    const std::size_t n = y_hat.size();
    ScalarLossGrad r;
    r.grad.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = y_hat[i] - y[i];
        r.value += d * d;
        r.grad[i] = 2.0 * d / static_cast<double>(n);
    }
    r.value /= static_cast<double>(n);
    return r;
}

inline ScalarLossGrad bce_with_grad(std::span<const double> p_hat,
                                    std::span<const double> target) {
    const std::size_t n = p_hat.size();
    ScalarLossGrad r;
    r.grad.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double p = clamp_prob(p_hat[i]);
        const double y = target[i];
        r.value += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
        // zero gradient where the clamp is active: the loss is locally flat
        const bool interior = p_hat[i] > kProbClampLo && p_hat[i] < kProbClampHi;
        r.grad[i] = interior ? (-y / p + (1.0 - y) / (1.0 - p)) / static_cast<double>(n)
                             : 0.0;
    }
    r.value /= static_cast<double>(n);
    return r;
}

inline void validate_binary_targets(std::span<const double> y, const char* what) {
    for (double v : y)
        if (v != 0.0 && v != 1.0)
            throw ValidationError(std::string(what) + ": targets must be 0/1");
}

}  // namespace detail

/// Factual outcome loss: MSE for continuous outcomes, mean binary
/// cross-entropy for binary ones.
inline double loss_pred(std::span<const double> y_hat, std::span<const double> y,
                        OutcomeType type) {
    detail::require_equal_lengths(y_hat.size(), y.size(), "loss_pred");
    if (type == OutcomeType::Binary) {
        detail::validate_binary_targets(y, "loss_pred");
        return detail::bce_with_grad(y_hat, y).value;
    }
    return detail::mse_with_grad(y_hat, y).value;
}

/// Treatment cross-entropy.
inline double loss_treat(std::span<const double> p_hat, std::span<const double> t) {
    detail::require_equal_lengths(p_hat.size(), t.size(), "loss_treat");
    detail::validate_binary_targets(t, "loss_treat");
    return detail::bce_with_grad(p_hat, t).value;
}

// ---------------------------------------------------------------------------
// Variational conditional-density nets
// ---------------------------------------------------------------------------

struct QNetGrads {
    std::vector<DenseGrads> trunk;
    DenseGrads mean_head, logvar_head;

    static QNetGrads zeros_like(const VariationalNet& q) {
        QNetGrads g;
        g.trunk = zero_grads(q.trunk);
        g.mean_head = {Tensor2D(q.mean_head.in_dim(), q.mean_head.out_dim()),
                       Tensor2D(1, q.mean_head.out_dim())};
        g.logvar_head = {Tensor2D(q.logvar_head.in_dim(), q.logvar_head.out_dim()),
                         Tensor2D(1, q.logvar_head.out_dim())};
        return g;
    }
};

inline std::vector<Tensor2D*> qnet_param_tensors(VariationalNet& q) {
    std::vector<Tensor2D*> out;
    for (auto& l : q.trunk) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    out.push_back(&q.mean_head.weight);
    out.push_back(&q.mean_head.bias);
    out.push_back(&q.logvar_head.weight);
    out.push_back(&q.logvar_head.bias);
    return out;
}

inline std::vector<const Tensor2D*> qnet_grad_tensors(const QNetGrads& g) {
    std::vector<const Tensor2D*> out;
    for (const auto& dg : g.trunk) {
        out.push_back(&dg.weight);
        out.push_back(&dg.bias);
    }
    out.push_back(&g.mean_head.weight);
    out.push_back(&g.mean_head.bias);
    out.push_back(&g.logvar_head.weight);
    out.push_back(&g.logvar_head.bias);
    return out;
}

namespace detail {

/// Backprop d(objective)/d(mu), d(objective)/d(logvar) through the q net.
/// Parameter grads go to param_sink (if given), the gradient w.r.t. the net
/// input is returned through input_grad (if given).
inline void qnet_backward(const VariationalNet& q, const QCache& cache,
                          const Tensor2D& grad_mu, const Tensor2D& grad_logvar,
                          QNetGrads* param_sink, Tensor2D* input_grad) {
    // saturation s = L*tanh(z/L): ds/dz = 1 - (s/L)^2
    Tensor2D grad_z = grad_logvar;
    for (std::size_t i = 0; i < grad_z.data.size(); ++i) {
        const double sl = cache.logvar.data[i] / kLogvarLimit;
        grad_z.data[i] *= 1.0 - sl * sl;
    }
    DenseBackward bm = dense_backward(q.mean_head, cache.trunk_out, cache.mu, grad_mu);
    DenseBackward bl =
        dense_backward(q.logvar_head, cache.trunk_out, cache.logvar_raw, grad_z);
    if (param_sink) {
        axpy(1.0, bm.params.weight, param_sink->mean_head.weight);
        axpy(1.0, bm.params.bias, param_sink->mean_head.bias);
        axpy(1.0, bl.params.weight, param_sink->logvar_head.weight);
        axpy(1.0, bl.params.bias, param_sink->logvar_head.bias);
    }
    Tensor2D gtrunk = bm.input_grad;
    axpy(1.0, bl.input_grad, gtrunk);
    if (q.trunk.empty()) {
        if (input_grad) *input_grad = std::move(gtrunk);
        return;
    }
    std::vector<DenseGrads> scratch;
    std::vector<DenseGrads>* sink = param_sink ? &param_sink->trunk : &scratch;
    if (!param_sink) scratch = zero_grads(q.trunk);
    Tensor2D gin = backward_stack(q.trunk, cache.trunk, gtrunk, *sink);
    if (input_grad) *input_grad = std::move(gin);
}

}  // namespace detail

/// Mean diagonal-Gaussian log-density of b rows under q(. | a rows).
inline double q_loglik(const VariationalNet& q, const Tensor2D& a, const Tensor2D& b) {
    if (a.rows != b.rows || a.rows == 0)
        throw DimensionError("q_loglik: batch sizes " + shape_str(a) + " vs " +
                             shape_str(b));
    QCache cache;
    qnet_forward(q, a, cache);
    if (cache.mu.cols != b.cols) throw DimensionError("q_loglik: output dim");
    const std::size_t n = b.rows, m = b.cols;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < m; ++k) {
            const double r = b(i, k) - cache.mu(i, k);
            const double s = cache.logvar(i, k);
            total += -r * r / (2.0 * std::exp(s)) - 0.5 * s - 0.5 * kLog2Pi;
        }
    return total / static_cast<double>(n);
}

struct QLoglikResult {
    double value = 0.0;
    QNetGrads grads;  // ascend these to fit the net
};

inline QLoglikResult q_loglik_with_param_grads(const VariationalNet& q,
                                               const Tensor2D& a, const Tensor2D& b) {
    if (a.rows != b.rows || a.rows == 0)
        throw DimensionError("q_loglik: batch sizes");
    QCache cache;
    qnet_forward(q, a, cache);
    if (cache.mu.cols != b.cols) throw DimensionError("q_loglik: output dim");
    const std::size_t n = b.rows, m = b.cols;
    const double inv_n = 1.0 / static_cast<double>(n);

    QLoglikResult res;
    res.grads = QNetGrads::zeros_like(q);
    Tensor2D gmu(n, m), gs(n, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < m; ++k) {
            const double r = b(i, k) - cache.mu(i, k);
            const double s = cache.logvar(i, k);
            const double inv_var = std::exp(-s);
            res.value += -r * r * inv_var / 2.0 - 0.5 * s - 0.5 * kLog2Pi;
            gmu(i, k) = inv_n * r * inv_var;
            gs(i, k) = inv_n * (r * r * inv_var / 2.0 - 0.5);
        }
    res.value *= inv_n;
    detail::qnet_backward(q, cache, gmu, gs, &res.grads, nullptr);
    return res;
}

// ---------------------------------------------------------------------------
// vCLUB pairwise MI bound
// ---------------------------------------------------------------------------

namespace detail {

struct VclubCore {
    double value = 0.0;
    Tensor2D grad_mu, grad_logvar;  // w.r.t. the q outputs (for the input path)
    Tensor2D grad_b;
};

/// Sample estimator (1/n) sum_i ll(i,i) - (1/n^2) sum_ij ll(i,j) with
/// ll(i,j) = log q(b_j | a_i). The cross sums factorize over column sums of b,
/// so this is O(n*m) rather than O(n^2*m).
inline VclubCore vclub_core(const Tensor2D& mu, const Tensor2D& logvar,
                            const Tensor2D& b, bool want_grads) {
    const std::size_t n = b.rows, m = b.cols;
    const double inv_n = 1.0 / static_cast<double>(n);
    const double inv_n2 = inv_n * inv_n;

    std::vector<double> col_sum(m, 0.0), col_sq(m, 0.0);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < m; ++k) {
            col_sum[k] += b(j, k);
            col_sq[k] += b(j, k) * b(j, k);
        }

    VclubCore core;
    if (want_grads) {
        core.grad_mu = Tensor2D(n, m);
        core.grad_logvar = Tensor2D(n, m);
        core.grad_b = Tensor2D(n, m);
    }
    // per-column sums of 1/var_i and mu_i/var_i, needed for grad_b
    std::vector<double> prec_sum(m, 0.0), mu_prec_sum(m, 0.0);

    double diag = 0.0, cross = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < m; ++k) {
            const double mik = mu(i, k);
            const double s = logvar(i, k);
            const double inv_var = std::exp(-s);
            const double rd = b(i, k) - mik;
            diag += -rd * rd * inv_var / 2.0 - 0.5 * s - 0.5 * kLog2Pi;
            // sum_j (b_jk - mu_ik)^2 = col_sq - 2 mu col_sum + n mu^2
            const double sq =
                col_sq[k] - 2.0 * mik * col_sum[k] + static_cast<double>(n) * mik * mik;
            cross += -sq * inv_var / 2.0 -
                     static_cast<double>(n) * (0.5 * s + 0.5 * kLog2Pi);
            if (want_grads) {
                // d/dmu: inv_n * rd*inv_var  -  inv_n2 * (col_sum - n*mu)*inv_var
                core.grad_mu(i, k) =
                    inv_var * (inv_n * rd -
                               inv_n2 * (col_sum[k] - static_cast<double>(n) * mik));
                // d/ds: inv_n*(rd^2*inv_var/2 - 1/2) - inv_n2*(sq*inv_var/2 - n/2)
                core.grad_logvar(i, k) =
                    inv_n * (rd * rd * inv_var / 2.0 - 0.5) -
                    inv_n2 * (sq * inv_var / 2.0 - static_cast<double>(n) * 0.5);
                prec_sum[k] += inv_var;
                mu_prec_sum[k] += mik * inv_var;
            }
        }
    core.value = inv_n * diag - inv_n2 * cross;

    if (want_grads) {
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < m; ++k) {
                const double bjk = b(j, k);
                const double inv_var_j = std::exp(-logvar(j, k));
                const double diag_term = -(bjk - mu(j, k)) * inv_var_j;
                const double cross_term = -(bjk * prec_sum[k] - mu_prec_sum[k]);
                core.grad_b(j, k) = -(inv_n * diag_term - inv_n2 * cross_term);
            }
    }
    return core;
}

}  // namespace detail

/// MI upper-bound estimate for the pair (a, b) under the given variational
/// net. q parameters are treated as constants.
inline double vclub_pair(const VariationalNet& q, const Tensor2D& a,
                         const Tensor2D& b) {
    if (a.rows != b.rows) throw DimensionError("vclub_pair: batch sizes");
    if (a.rows < 2) throw ValidationError("vclub_pair: needs a batch of at least 2");
    QCache cache;
    qnet_forward(q, a, cache);
    if (cache.mu.cols != b.cols) throw DimensionError("vclub_pair: output dim");
    return detail::vclub_core(cache.mu, cache.logvar, b, false).value;
}

struct VclubResult {
    double value = 0.0;
    Tensor2D grad_a, grad_b;
};

inline VclubResult vclub_pair_with_grad(const VariationalNet& q, const Tensor2D& a,
                                        const Tensor2D& b) {
    if (a.rows != b.rows) throw DimensionError("vclub_pair: batch sizes");
    if (a.rows < 2) throw ValidationError("vclub_pair: needs a batch of at least 2");
    QCache cache;
    qnet_forward(q, a, cache);
    if (cache.mu.cols != b.cols) throw DimensionError("vclub_pair: output dim");
    detail::VclubCore core = detail::vclub_core(cache.mu, cache.logvar, b, true);
    VclubResult res;
    res.value = core.value;
    res.grad_b = std::move(core.grad_b);
    detail::qnet_backward(q, cache, core.grad_mu, core.grad_logvar, nullptr,
                          &res.grad_a);
    return res;
}

/// Sum of the three pairwise MI bounds over the factor triple.
inline double loss_club(const ModelParams& p, const FactorTriple& f) {
    return vclub_pair(p.q_gd, f.gamma, f.delta) +
           vclub_pair(p.q_du, f.delta, f.upsilon) +
           vclub_pair(p.q_ug, f.upsilon, f.gamma);
}

// ---------------------------------------------------------------------------
// Contribution-vector orthogonality penalty
// ---------------------------------------------------------------------------

namespace detail {

struct FactorPath {
    std::vector<const Tensor2D*> weights;
    std::vector<Tensor2D> prefixes;  // prefixes[k] = W_0 ... W_k
    std::vector<double> wbar;        // mean |row| of the path product
};

inline FactorPath build_factor_path(const ModelParams& p, std::size_t factor) {
    FactorPath fp;
    fp.weights = factor_path_weights(p, factor);
    fp.prefixes.reserve(fp.weights.size());
    fp.prefixes.push_back(*fp.weights[0]);
    for (std::size_t k = 1; k < fp.weights.size(); ++k)
        fp.prefixes.push_back(matmul(fp.prefixes.back(), *fp.weights[k]));
    const Tensor2D& eff = fp.prefixes.back();
    fp.wbar.assign(eff.rows, 0.0);
    for (std::size_t i = 0; i < eff.rows; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < eff.cols; ++c) acc += std::abs(eff(i, c));
        fp.wbar[i] = acc / static_cast<double>(eff.cols);
    }
    return fp;
}

inline double vec_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double vec_dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace detail

/// Squared inner products of the L2-normalized contribution vectors, summed
/// over the three factor pairs. Zero exactly when the vectors are pairwise
/// orthogonal; a zero-norm vector counts as orthogonal to everything.
inline double loss_rlo(const ModelParams& p) {
    std::array<detail::FactorPath, 3> paths = {detail::build_factor_path(p, 0),
                                               detail::build_factor_path(p, 1),
                                               detail::build_factor_path(p, 2)};
    std::array<std::vector<double>, 3> unit;
    for (std::size_t f = 0; f < 3; ++f) {
        const double nu = detail::vec_norm(paths[f].wbar);
        unit[f] = paths[f].wbar;
        if (nu > 0.0)
            for (double& x : unit[f]) x /= nu;
        else
            std::fill(unit[f].begin(), unit[f].end(), 0.0);
    }
    double value = 0.0;
    for (std::size_t f = 0; f < 3; ++f) {
        const double d = detail::vec_dot(unit[f], unit[(f + 1) % 3]);
        value += d * d;
    }
    return value;
}

namespace detail {

/// loss_rlo plus gradients into the encoder weight matrices (scaled).
inline double loss_rlo_with_grads(const ModelParams& p, double scale,
                                  ModelGrads& sink) {
    std::array<FactorPath, 3> paths = {build_factor_path(p, 0),
                                       build_factor_path(p, 1),
                                       build_factor_path(p, 2)};
    std::array<std::vector<double>, 3> unit;
    std::array<double, 3> norms;
    for (std::size_t f = 0; f < 3; ++f) {
        norms[f] = vec_norm(paths[f].wbar);
        unit[f] = paths[f].wbar;
        if (norms[f] > 0.0)
            for (double& x : unit[f]) x /= norms[f];
        else
            std::fill(unit[f].begin(), unit[f].end(), 0.0);
    }
    double value = 0.0;
    std::array<std::vector<double>, 3> grad_unit;
    for (std::size_t f = 0; f < 3; ++f) grad_unit[f].assign(unit[f].size(), 0.0);
    for (std::size_t f = 0; f < 3; ++f) {
        const std::size_t g = (f + 1) % 3;
        const double d = vec_dot(unit[f], unit[g]);
        value += d * d;
        for (std::size_t i = 0; i < unit[f].size(); ++i) {
            grad_unit[f][i] += 2.0 * d * unit[g][i];
            grad_unit[g][i] += 2.0 * d * unit[f][i];
        }
    }

    const std::size_t n_shared = p.config.sfd_enabled ? p.shared_stack.size() : 0;
    for (std::size_t f = 0; f < 3; ++f) {
        if (norms[f] <= 0.0) continue;
        // through the normalization: (g - u (u.g)) / nu
        const double ug = vec_dot(unit[f], grad_unit[f]);
        std::vector<double> grad_wbar(unit[f].size());
        for (std::size_t i = 0; i < grad_wbar.size(); ++i)
            grad_wbar[i] = (grad_unit[f][i] - unit[f][i] * ug) / norms[f];
        // through |.| and the column average
        const Tensor2D& eff = paths[f].prefixes.back();
        Tensor2D grad_eff(eff.rows, eff.cols);
        const double inv_m = 1.0 / static_cast<double>(eff.cols);
        for (std::size_t i = 0; i < eff.rows; ++i)
            for (std::size_t c = 0; c < eff.cols; ++c) {
                const double e = eff(i, c);
                const double sgn = e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
                grad_eff(i, c) = grad_wbar[i] * sgn * inv_m;
            }
        // through the matrix product chain: dW_k = A_{k-1}^T (dE B_{k+1}^T)
        const auto& ws = paths[f].weights;
        std::vector<DenseGrads>& head_sink =
            f == 0 ? sink.gamma_head : (f == 1 ? sink.delta_head : sink.upsilon_head);
        Tensor2D right = grad_eff;  // dE * B_{k+1}^T, updated as k decreases
        for (std::size_t k = ws.size(); k-- > 0;) {
            Tensor2D gw = k == 0 ? right : matmul_at(paths[f].prefixes[k - 1], right);
            Tensor2D* dst = k < n_shared ? &sink.shared[k].weight
                                         : &head_sink[k - n_shared].weight;
            axpy(scale, gw, *dst);
            if (k > 0) right = matmul_bt(right, *ws[k]);
        }
    }
    return value;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Weight decay
// ---------------------------------------------------------------------------

/// Sum of squared weights over the main-model dense layers (biases and
/// variational nets excluded).
inline double loss_reg(const ModelParams& p) {
    double s = 0.0;
    auto add = [&](const DenseStack& stack) {
        for (const auto& l : stack)
            for (double w : l.weight.data) s += w * w;
    };
    add(p.shared_stack);
    add(p.gamma_head);
    add(p.delta_head);
    add(p.upsilon_head);
    add(p.pi_classifier);
    add(p.h0_head);
    add(p.h1_head);
    return s;
}

namespace detail {

inline double loss_reg_with_grads(const ModelParams& p, double scale,
                                  ModelGrads& sink) {
    double s = 0.0;
    auto add = [&](const DenseStack& stack, std::vector<DenseGrads>& gsink) {
        for (std::size_t i = 0; i < stack.size(); ++i)
            for (std::size_t k = 0; k < stack[i].weight.data.size(); ++k) {
                const double w = stack[i].weight.data[k];
                s += w * w;
                gsink[i].weight.data[k] += scale * 2.0 * w;
            }
    };
    add(p.shared_stack, sink.shared);
    add(p.gamma_head, sink.gamma_head);
    add(p.delta_head, sink.delta_head);
    add(p.upsilon_head, sink.upsilon_head);
    add(p.pi_classifier, sink.pi_classifier);
    add(p.h0_head, sink.h0_head);
    add(p.h1_head, sink.h1_head);
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Composed objective
// ---------------------------------------------------------------------------

struct LossBreakdown {
    double pred = 0.0;
    double treat = 0.0;
    double disc = 0.0;
    double mi = 0.0;  // vCLUB sum, orthogonality penalty, or 0 depending on mode
    double reg = 0.0;
    double total = 0.0;
    bool ipm_degenerate = false;
};

struct TotalLossResult {
    LossBreakdown values;
    ModelGrads grads;
};

namespace detail {

inline void split_by_treatment(const Tensor2D& rows, std::span<const double> t,
                               Tensor2D& group0, Tensor2D& group1,
                               std::vector<std::size_t>& idx0,
                               std::vector<std::size_t>& idx1) {
    idx0.clear();
    idx1.clear();
    for (std::size_t i = 0; i < rows.rows; ++i)
        (t[i] == 1.0 ? idx1 : idx0).push_back(i);
    auto gather = [&](const std::vector<std::size_t>& idx) {
        Tensor2D g(idx.size(), rows.cols);
        for (std::size_t r = 0; r < idx.size(); ++r)
            std::copy(rows.row(idx[r]).begin(), rows.row(idx[r]).end(),
                      g.row(r).begin());
        return g;
    };
    group0 = gather(idx0);
    group1 = gather(idx1);
}

}  // namespace detail

/// Loss component values at the current parameters, no gradients.
inline LossBreakdown loss_breakdown(const ModelParams& p, const Batch& batch,
                                    const LossWeights& w, MiMode mode,
                                    const SinkhornConfig& sk = {}) {
    if (batch.x.rows == 0) throw ValidationError("loss: empty batch");
    w.validate();
    detail::require_equal_lengths(batch.x.rows, batch.t.size(), "loss batch t");
    detail::require_equal_lengths(batch.x.rows, batch.y.size(), "loss batch y");
    validate_binary_treatment(batch.t);

    LossBreakdown out;
    FactorTriple f = encode(p, batch.x);

    OutcomeCache oc;
    std::vector<double> y_hat = outcome_forward(p, f, batch.t, oc);
    out.pred = loss_pred(y_hat, batch.y, batch.outcome_type);

    PropensityCache pc;
    std::vector<double> probs = propensity_forward(p, f, pc);
    out.treat = detail::bce_with_grad(probs, batch.t).value;

    Tensor2D u0, u1;
    std::vector<std::size_t> i0, i1;
    detail::split_by_treatment(f.upsilon, batch.t, u0, u1, i0, i1);
    out.ipm_degenerate = i0.empty() || i1.empty();
    out.disc = ipm_wasserstein(u0, u1, sk);

    if (mode == MiMode::Mim)
        out.mi = batch.x.rows >= 2 ? loss_club(p, f) : 0.0;
    else if (mode == MiMode::Rlo)
        out.mi = loss_rlo(p);

    out.reg = loss_reg(p);
    out.total = out.pred + w.alpha * out.treat + w.beta * out.disc +
                (mode == MiMode::None ? 0.0 : w.gamma * out.mi) + w.lambda * out.reg;
    if (!std::isfinite(out.total))
        throw NumericError("loss diverged: pred=" + std::to_string(out.pred) +
                           " treat=" + std::to_string(out.treat) +
                           " disc=" + std::to_string(out.disc) +
                           " mi=" + std::to_string(out.mi));
    return out;
}

inline double total_loss_value(const ModelParams& p, const Batch& batch,
                               const LossWeights& w, MiMode mode,
                               const SinkhornConfig& sk = {}) {
    return loss_breakdown(p, batch, w, mode, sk).total;
}

/// Objective value plus exact gradients for all main parameters. Variational
/// nets are read-only here; they are fitted separately by likelihood ascent.
inline TotalLossResult total_loss(const ModelParams& p, const Batch& batch,
                                  const LossWeights& w, MiMode mode,
                                  const SinkhornConfig& sk = {}) {
    if (batch.x.rows == 0) throw ValidationError("loss: empty batch");
    w.validate();
    detail::require_equal_lengths(batch.x.rows, batch.t.size(), "loss batch t");
    detail::require_equal_lengths(batch.x.rows, batch.y.size(), "loss batch y");
    validate_binary_treatment(batch.t);

    TotalLossResult res;
    res.grads = ModelGrads::zeros_like(p);
    LossBreakdown& out = res.values;

    EncodeCache enc;
    FactorTriple f = encode(p, batch.x, enc);
    const std::size_t n = batch.x.rows, m = p.config.factor_dim;
    Tensor2D grad_gamma(n, m), grad_delta(n, m), grad_upsilon(n, m);

    // factual outcome
    OutcomeCache oc;
    std::vector<double> y_hat = outcome_forward(p, f, batch.t, oc);
    detail::ScalarLossGrad pred =
        batch.outcome_type == OutcomeType::Binary
            ? (detail::validate_binary_targets(batch.y, "loss_pred"),
               detail::bce_with_grad(y_hat, batch.y))
            : detail::mse_with_grad(y_hat, batch.y);
    out.pred = pred.value;
    outcome_backward(p, oc, pred.grad, 1.0, res.grads, grad_upsilon, grad_delta);

    // treatment prediction
    PropensityCache pc;
    std::vector<double> probs = propensity_forward(p, f, pc);
    detail::ScalarLossGrad treat = detail::bce_with_grad(probs, batch.t);
    out.treat = treat.value;
    if (w.alpha != 0.0)
        propensity_backward(p, pc, treat.grad, w.alpha, res.grads, grad_gamma,
                            grad_delta);

    // balance of the adjustment factor across arms
    Tensor2D u0, u1;
    std::vector<std::size_t> i0, i1;
    detail::split_by_treatment(f.upsilon, batch.t, u0, u1, i0, i1);
    if (w.beta != 0.0) {
        IpmResult ipm = ipm_wasserstein_with_grad(u0, u1, sk);
        out.disc = ipm.value;
        out.ipm_degenerate = ipm.degenerate;
        if (!ipm.degenerate) {
            for (std::size_t r = 0; r < i0.size(); ++r)
                for (std::size_t k = 0; k < m; ++k)
                    grad_upsilon(i0[r], k) += w.beta * ipm.grad_a(r, k);
            for (std::size_t r = 0; r < i1.size(); ++r)
                for (std::size_t k = 0; k < m; ++k)
                    grad_upsilon(i1[r], k) += w.beta * ipm.grad_b(r, k);
        }
    } else {
        out.ipm_degenerate = i0.empty() || i1.empty();
        out.disc = ipm_wasserstein(u0, u1, sk);
    }

    // independence term
    if (mode == MiMode::Mim && n >= 2) {
        if (w.gamma != 0.0) {
            VclubResult gd = vclub_pair_with_grad(p.q_gd, f.gamma, f.delta);
            VclubResult du = vclub_pair_with_grad(p.q_du, f.delta, f.upsilon);
            VclubResult ug = vclub_pair_with_grad(p.q_ug, f.upsilon, f.gamma);
            out.mi = gd.value + du.value + ug.value;
            axpy(w.gamma, gd.grad_a, grad_gamma);
            axpy(w.gamma, gd.grad_b, grad_delta);
            axpy(w.gamma, du.grad_a, grad_delta);
            axpy(w.gamma, du.grad_b, grad_upsilon);
            axpy(w.gamma, ug.grad_a, grad_upsilon);
            axpy(w.gamma, ug.grad_b, grad_gamma);
        } else {
            out.mi = loss_club(p, f);
        }
    } else if (mode == MiMode::Rlo) {
        out.mi = w.gamma != 0.0 ? detail::loss_rlo_with_grads(p, w.gamma, res.grads)
                                : loss_rlo(p);
    }

    out.reg = w.lambda != 0.0 ? detail::loss_reg_with_grads(p, w.lambda, res.grads)
                              : loss_reg(p);

    encode_backward(p, enc, grad_gamma, grad_delta, grad_upsilon, res.grads);

    out.total = out.pred + w.alpha * out.treat + w.beta * out.disc +
                (mode == MiMode::None ? 0.0 : w.gamma * out.mi) + w.lambda * out.reg;
    if (!std::isfinite(out.total))
        throw NumericError("loss diverged: pred=" + std::to_string(out.pred) +
                           " treat=" + std::to_string(out.treat) +
                           " disc=" + std::to_string(out.disc) +
                           " mi=" + std::to_string(out.mi));
    return res;
}

}  // namespace dcr
