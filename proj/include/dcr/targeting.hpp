#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "dcr/data.hpp"

namespace dcr {

/// Greedy budgeted selection: the top-B units by predicted effect among those
/// with non-negative effect. Ties resolve by ascending original index, so the
/// result is deterministic. Returned indices are sorted ascending.
inline std::vector<std::size_t> greedy_select(std::span<const double> tau_hat,
                                              std::size_t budget) {
    std::vector<std::size_t> order(tau_hat.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return tau_hat[a] > tau_hat[b];
    });
    std::vector<std::size_t> selected;
    for (std::size_t i : order) {
        if (selected.size() >= budget) break;
        if (tau_hat[i] < 0.0) break;  // order is descending, the rest are negative
        selected.push_back(i);
    }
    std::sort(selected.begin(), selected.end());
    return selected;
}

/// Value of a policy that treats exactly the selected units:
/// sum of y1 over selected plus y0 over the rest. Defined for continuous
/// outcomes too; for binary data it coincides with metrics' dlu.
inline double policy_value(const Dataset& ds, std::span<const std::size_t> selected) {
    if (!ds.has_ground_truth())
        throw CapabilityError("policy_value: dataset has no potential outcomes");
    std::vector<bool> in(ds.n(), false);
    for (std::size_t i : selected) {
        if (i >= ds.n()) throw ValidationError("policy_value: index out of range");
        in[i] = true;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < ds.n(); ++i)
        total += in[i] ? (*ds.y1)[i] : (*ds.y0)[i];
    return total;
}

}  // namespace dcr
