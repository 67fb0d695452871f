#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "dcr/data.hpp"
#include "dcr/model.hpp"

namespace dcr {

// ---------------------------------------------------------------------------
// Ground-truth effect metrics
// ---------------------------------------------------------------------------

inline std::vector<double> true_ite(const Dataset& ds) {
    if (!ds.has_ground_truth())
        throw CapabilityError("dataset has no ground-truth potential outcomes");
    std::vector<double> tau(ds.n());
    for (std::size_t i = 0; i < tau.size(); ++i) tau[i] = (*ds.y1)[i] - (*ds.y0)[i];
    return tau;
}

/// Root of the mean squared error between predicted and actual effects.
inline double pehe(std::span<const double> tau_hat, const Dataset& ds) {
    const std::vector<double> tau = true_ite(ds);
    if (tau_hat.size() != tau.size()) throw DimensionError("pehe: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < tau.size(); ++i) {
        const double d = tau_hat[i] - tau[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(tau.size()));
}

/// |mean(true effect) - mean(predicted effect)|.
inline double ate_error(std::span<const double> tau_hat, const Dataset& ds) {
    const std::vector<double> tau = true_ite(ds);
    if (tau_hat.size() != tau.size())
        throw DimensionError("ate_error: length mismatch");
    const double mt = std::accumulate(tau.begin(), tau.end(), 0.0) /
                      static_cast<double>(tau.size());
    const double mh = std::accumulate(tau_hat.begin(), tau_hat.end(), 0.0) /
                      static_cast<double>(tau_hat.size());
    return std::abs(mt - mh);
}

// ---------------------------------------------------------------------------
// Uplift curves
// ---------------------------------------------------------------------------

namespace detail {

/// Descending by score, ties broken by original index (stable order).
inline std::vector<std::size_t> uplift_order(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

struct UpliftPrefix {
    double r1 = 0.0, r0 = 0.0;  // outcome sums per arm within the prefix
    std::size_t n1 = 0, n0 = 0;

    double value(bool* degenerate) const {
        if (degenerate) *degenerate = n1 == 0 || n0 == 0;
        const double rate1 = n1 ? r1 / static_cast<double>(n1) : 0.0;
        const double rate0 = n0 ? r0 / static_cast<double>(n0) : 0.0;
        return (rate1 - rate0) * static_cast<double>(n1 + n0);
    }
};

inline void check_uplift_inputs(std::span<const double> scores,
                                std::span<const double> t,
                                std::span<const double> y) {
    if (scores.size() != t.size() || scores.size() != y.size() || scores.empty())
        throw DimensionError("uplift inputs: length mismatch");
    for (double v : t)
        if (v != 0.0 && v != 1.0)
            throw ValidationError("uplift inputs: treatment must be 0/1");
}

}  // namespace detail

struct AuucPoint {
    double value = 0.0;
    bool degenerate_prefix = false;  // one arm missing among the top-k rows
};

/// Difference in outcome rates between arms within the top k fraction, scaled
/// by the prefix size. For 0/1 outcomes the sums are positive counts.
inline AuucPoint auuc_at_k(std::span<const double> scores, std::span<const double> t,
                           std::span<const double> y, double k) {
    detail::check_uplift_inputs(scores, t, y);
    if (!(k > 0.0 && k <= 1.0))
        throw ValidationError("auuc_at_k: k must be in (0, 1]");
    const auto order = detail::uplift_order(scores);
    const std::size_t take = static_cast<std::size_t>(
        std::ceil(k * static_cast<double>(scores.size()) - 1e-12));
    detail::UpliftPrefix p;
    for (std::size_t r = 0; r < take; ++r) {
        const std::size_t i = order[r];
        if (t[i] == 1.0) {
            p.r1 += y[i];
            ++p.n1;
        } else {
            p.r0 += y[i];
            ++p.n0;
        }
    }
    AuucPoint point;
    point.value = p.value(&point.degenerate_prefix);
    return point;
}

enum class AuucGrid { PerSample, Deciles };

struct UpliftCurve {
    std::vector<double> k_grid;     // strictly increasing, last entry 1
    std::vector<double> auuc_at_k;  // curve value at each k
    double auuc_total = 0.0;        // Riemann sum of the curve
    std::optional<double> auuc_normalized;  // total / value at k=1, if defined
    bool degenerate_prefix_seen = false;
};

/// One pass over the ranked population; the total is sum_k value(k) * dk.
inline UpliftCurve auuc(std::span<const double> scores, std::span<const double> t,
                        std::span<const double> y,
                        AuucGrid grid = AuucGrid::PerSample) {
    detail::check_uplift_inputs(scores, t, y);
    const std::size_t n = scores.size();
    const auto order = detail::uplift_order(scores);

    UpliftCurve curve;
    detail::UpliftPrefix p;
    double full_value = 0.0;

    if (grid == AuucGrid::PerSample) {
        const double dk = 1.0 / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) {
            const std::size_t i = order[r];
            if (t[i] == 1.0) {
                p.r1 += y[i];
                ++p.n1;
            } else {
                p.r0 += y[i];
                ++p.n0;
            }
            bool deg = false;
            const double v = p.value(&deg);
            curve.degenerate_prefix_seen |= deg;
            curve.k_grid.push_back(static_cast<double>(r + 1) * dk);
            curve.auuc_at_k.push_back(v);
            curve.auuc_total += v * dk;
        }
        full_value = curve.auuc_at_k.back();
    } else {
        constexpr std::size_t buckets = 10;
        std::size_t r = 0;
        for (std::size_t b = 1; b <= buckets; ++b) {
            const double k = static_cast<double>(b) / static_cast<double>(buckets);
            const std::size_t take = static_cast<std::size_t>(
                std::ceil(k * static_cast<double>(n) - 1e-12));
            for (; r < take; ++r) {
                const std::size_t i = order[r];
                if (t[i] == 1.0) {
                    p.r1 += y[i];
                    ++p.n1;
                } else {
                    p.r0 += y[i];
                    ++p.n0;
                }
            }
            bool deg = false;
            const double v = p.value(&deg);
            curve.degenerate_prefix_seen |= deg;
            curve.k_grid.push_back(k);
            curve.auuc_at_k.push_back(v);
            curve.auuc_total += v / static_cast<double>(buckets);
        }
        full_value = curve.auuc_at_k.back();
    }

    if (full_value != 0.0) curve.auuc_normalized = curve.auuc_total / full_value;
    return curve;
}

// ---------------------------------------------------------------------------
// Policy value on known potential outcomes
// ---------------------------------------------------------------------------

/// Total positive outcome when the selected units are treated and everyone
/// else is left in control. Requires binary potential outcomes.
inline double dlu(const Dataset& ds, std::span<const std::size_t> selected) {
    if (!ds.has_ground_truth())
        throw CapabilityError("dlu: dataset has no potential outcomes");
    for (std::size_t i = 0; i < ds.n(); ++i)
        if (((*ds.y0)[i] != 0.0 && (*ds.y0)[i] != 1.0) ||
            ((*ds.y1)[i] != 0.0 && (*ds.y1)[i] != 1.0))
            throw ValidationError("dlu: potential outcomes must be 0/1");
    std::vector<bool> in(ds.n(), false);
    for (std::size_t i : selected) {
        if (i >= ds.n()) throw ValidationError("dlu: index out of range");
        in[i] = true;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < ds.n(); ++i)
        total += in[i] ? (*ds.y1)[i] : (*ds.y0)[i];
    return total;
}

// ---------------------------------------------------------------------------
// Disentanglement diagnostic
// ---------------------------------------------------------------------------

struct DisentanglementReport {
    // rows: learned gamma/delta/upsilon heads; cols: true gamma/delta/upsilon
    // blocks. Each row is the head's contribution mass per block, normalized
    // to sum to 1.
    std::array<std::array<double, 3>, 3> attribution{};
};

inline DisentanglementReport disentanglement_report(const ModelParams& params,
                                                    const FactorIndexSets& truth) {
    const auto wbars = contribution_vectors(params);
    const std::array<const std::vector<std::size_t>*, 3> blocks = {
        &truth.gamma, &truth.delta, &truth.upsilon};
    DisentanglementReport rep;
    for (std::size_t h = 0; h < 3; ++h) {
        std::array<double, 3> mass{};
        double total = 0.0;
        for (std::size_t b = 0; b < 3; ++b) {
            for (std::size_t col : *blocks[b]) {
                if (col >= wbars[h].size())
                    throw ValidationError("disentanglement_report: block index range");
                mass[b] += wbars[h][col];
            }
            total += mass[b];
        }
        for (std::size_t b = 0; b < 3; ++b)
            rep.attribution[h][b] = total > 0.0 ? mass[b] / total : 1.0 / 3.0;
    }
    return rep;
}

}  // namespace dcr
