#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "dcr/tensor.hpp"

namespace dcr {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Bias-corrected adaptive-moment optimizer over a fixed list of parameter
/// tensors. Moment buffers mirror the parameter shapes given at construction.
class AdamState {
public:
    AdamState() = default;

    AdamState(AdamConfig cfg, const std::vector<Tensor2D*>& params) : cfg_(cfg) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const Tensor2D* p : params) {
            m_.emplace_back(p->rows, p->cols);
            v_.emplace_back(p->rows, p->cols);
        }
    }

    std::size_t step_count() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

    /// One update, in place. params/grads must match the construction shapes.
    void step(const std::vector<Tensor2D*>& params,
              const std::vector<const Tensor2D*>& grads) {
        if (params.size() != m_.size() || grads.size() != m_.size())
            throw DimensionError("adam step: parameter list size");
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor2D& p = *params[i];
            const Tensor2D& g = *grads[i];
            if (!p.same_shape(m_[i]) || !g.same_shape(m_[i]))
                throw DimensionError("adam step: tensor shape");
            for (std::size_t k = 0; k < p.data.size(); ++k) {
                double& m = m_[i].data[k];
                double& v = v_[i].data[k];
                const double gk = g.data[k];
                m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * gk;
                v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * gk * gk;
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                p.data[k] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
            }
        }
    }

private:
    AdamConfig cfg_;
    std::vector<Tensor2D> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace dcr
