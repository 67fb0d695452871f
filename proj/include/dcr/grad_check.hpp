#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dcr/tensor.hpp"

namespace dcr {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;  // flat index within worst_param
    bool passed = false;
};

/// Central-finite-difference check of an analytic gradient.
///
/// loss_value must be a deterministic scalar function of the current contents
/// of params (it is re-evaluated with single entries perturbed in place, and
/// every entry is restored bit-exactly afterwards). analytic[i] holds the
/// gradient tensor for params[i]. The relative error of one entry is
/// |a - fd| / max(|a|, |fd|, 1e-3); the report carries its maximum.
inline GradCheckReport grad_check(const std::function<double()>& loss_value,
                                  const std::vector<Tensor2D*>& params,
                                  const std::vector<const Tensor2D*>& analytic,
                                  double tolerance, double step = 1e-5,
                                  const std::vector<std::string>* names = nullptr) {
    if (params.size() != analytic.size())
        throw DimensionError("grad_check: parameter/gradient list size");
    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor2D& p = *params[pi];
        const Tensor2D& a = *analytic[pi];
        if (!p.same_shape(a)) throw DimensionError("grad_check: gradient shape");
        for (std::size_t k = 0; k < p.data.size(); ++k) {
            const double orig = p.data[k];
            p.data[k] = orig + step;
            const double up = loss_value();
            p.data[k] = orig - step;
            const double down = loss_value();
            p.data[k] = orig;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("grad_check: non-finite loss during probing");
            const double fd = (up - down) / (2.0 * step);
            const double an = a.data[k];
            const double denom = std::max({std::abs(an), std::abs(fd), 1e-3});
            const double rel = std::abs(an - fd) / denom;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_index = k;
                report.worst_param =
                    names && pi < names->size() ? (*names)[pi] : std::to_string(pi);
            }
        }
    }
    report.passed = report.max_rel_error < tolerance;
    return report;
}

}  // namespace dcr
