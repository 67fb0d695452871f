#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dcr/adam.hpp"
#include "dcr/data.hpp"
#include "dcr/losses.hpp"
#include "dcr/metrics.hpp"
#include "dcr/model.hpp"

namespace dcr {

struct TrainConfig {
    ModelConfig model;  // input_dim 0 means "take it from the dataset"
    LossWeights weights;
    SinkhornConfig sinkhorn;
    MiMode mode = MiMode::Mim;
    std::size_t batch_size = 128;
    std::size_t epochs = 200;
    std::size_t q_steps_per_main_step = 1;
    double learning_rate_main = 1e-3;
    double learning_rate_q = 1e-3;
    std::size_t early_stop_patience = 25;
    double val_fraction = 0.3;  // used when no validation set is passed in
    std::uint64_t seed = 0;

    void validate() const {
        weights.validate();
        sinkhorn.validate();
        if (batch_size < 2) throw ValidationError("TrainConfig: batch_size must be >= 2");
        if (epochs < 1) throw ValidationError("TrainConfig: epochs must be >= 1");
        if (!(learning_rate_main > 0.0) || !(learning_rate_q > 0.0))
            throw ValidationError("TrainConfig: learning rates must be > 0");
        if (!(val_fraction > 0.0 && val_fraction < 1.0))
            throw ValidationError("TrainConfig: val_fraction must be in (0,1)");
        if (early_stop_patience < 1)
            throw ValidationError("TrainConfig: early_stop_patience must be >= 1");
    }
};

struct EpochRecord {
    LossBreakdown train;  // mean over the epoch's minibatches
    LossBreakdown val;    // evaluated on the full validation set
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;   // 1-based epoch whose parameters are returned
    std::size_t final_epoch = 0;  // last epoch that actually ran
    double wall_seconds = 0.0;    // console diagnostics only, never serialized
    std::uint64_t seed = 0;
    TrainConfig config;
};

struct FitResult {
    ModelParams params;
    TrainReport report;
};

namespace detail {

inline Batch gather_batch(const Dataset& ds, std::span<const std::size_t> idx) {
    Batch b;
    b.x = Tensor2D(idx.size(), ds.dim());
    b.t.resize(idx.size());
    b.y.resize(idx.size());
    b.outcome_type = ds.outcome_type;
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::copy(ds.x.row(idx[r]).begin(), ds.x.row(idx[r]).end(), b.x.row(r).begin());
        b.t[r] = ds.t[idx[r]];
        b.y[r] = ds.y[idx[r]];
    }
    return b;
}

inline Batch whole_as_batch(const Dataset& ds) {
    Batch b;
    b.x = ds.x;
    b.t = ds.t;
    b.y = ds.y;
    b.outcome_type = ds.outcome_type;
    return b;
}

inline void accumulate(LossBreakdown& acc, const LossBreakdown& x) {
    acc.pred += x.pred;
    acc.treat += x.treat;
    acc.disc += x.disc;
    acc.mi += x.mi;
    acc.reg += x.reg;
    acc.total += x.total;
    acc.ipm_degenerate |= x.ipm_degenerate;
}

inline void scale(LossBreakdown& acc, double s) {
    acc.pred *= s;
    acc.treat *= s;
    acc.disc *= s;
    acc.mi *= s;
    acc.reg *= s;
    acc.total *= s;
}

/// One likelihood-ascent step on a single variational net.
inline void q_ascent_step(VariationalNet& q, AdamState& opt, const Tensor2D& a,
                          const Tensor2D& b) {
    QLoglikResult r = q_loglik_with_param_grads(q, a, b);
    // Adam minimizes; flip the sign to ascend.
    for (auto& g : r.grads.trunk) {
        for (double& v : g.weight.data) v = -v;
        for (double& v : g.bias.data) v = -v;
    }
    for (double& v : r.grads.mean_head.weight.data) v = -v;
    for (double& v : r.grads.mean_head.bias.data) v = -v;
    for (double& v : r.grads.logvar_head.weight.data) v = -v;
    for (double& v : r.grads.logvar_head.bias.data) v = -v;
    opt.step(qnet_param_tensors(q), qnet_grad_tensors(r.grads));
}

}  // namespace detail

/// Alternating optimization: per minibatch, (a) fit the three conditional
/// density nets by likelihood ascent on frozen factors, then (b) take one
/// optimizer step on the main objective with the q nets frozen. Early
/// stopping watches the validation outcome loss; the best-validation
/// parameters are returned.
inline FitResult fit(const Dataset& data, const TrainConfig& cfg,
                     const std::optional<Dataset>& validation = std::nullopt) {
    const auto t_start = std::chrono::steady_clock::now();
    cfg.validate();
    data.validate();

    Dataset train, val;
    if (validation.has_value()) {
        train = data;
        val = *validation;
        val.validate();
    } else {
        auto parts =
            split_dataset(data, std::array<double, 2>{1.0 - cfg.val_fraction,
                                                      cfg.val_fraction},
                          cfg.seed);
        train = std::move(parts[0]);
        val = std::move(parts[1]);
    }
    if (train.n() < cfg.batch_size)
        throw ValidationError("fit: dataset smaller than one batch");
    const std::size_t treated = train.treated_count();
    if (treated == 0 || treated == train.n())
        throw ValidationError("fit: training data has a single treatment class");

    ModelConfig mc = cfg.model;
    if (mc.input_dim == 0) mc.input_dim = data.dim();
    if (mc.input_dim != data.dim())
        throw DimensionError("fit: model input_dim does not match the dataset");
    mc.binary_outcome = data.outcome_type == OutcomeType::Binary;
    mc.seed = cfg.seed;

    FitResult result;
    result.params = init_model(mc);
    ModelParams& params = result.params;

    std::vector<Tensor2D*> main_tensors;
    for (auto& ref : main_param_refs(params)) main_tensors.push_back(ref.tensor);
    AdamState main_opt(AdamConfig{.learning_rate = cfg.learning_rate_main},
                       main_tensors);
    AdamState q_opt_gd(AdamConfig{.learning_rate = cfg.learning_rate_q},
                       qnet_param_tensors(params.q_gd));
    AdamState q_opt_du(AdamConfig{.learning_rate = cfg.learning_rate_q},
                       qnet_param_tensors(params.q_du));
    AdamState q_opt_ug(AdamConfig{.learning_rate = cfg.learning_rate_q},
                       qnet_param_tensors(params.q_ug));

    TrainReport& report = result.report;
    report.seed = cfg.seed;
    report.config = cfg;
    report.config.model = mc;

    Rng shuffle_rng(cfg.seed + 0x9e3779b97f4a7c15ull);
    std::vector<std::size_t> perm(train.n());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    const std::size_t n_batches = train.n() / cfg.batch_size;

    const Batch val_batch = detail::whole_as_batch(val);
    ModelParams best_params = params;
    double best_val_pred = std::numeric_limits<double>::infinity();
    std::size_t epochs_since_improvement = 0;
    const bool run_q_phase = cfg.mode == MiMode::Mim && cfg.q_steps_per_main_step > 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(perm);
        LossBreakdown train_acc;
        for (std::size_t b = 0; b < n_batches; ++b) {
            const Batch batch = detail::gather_batch(
                train, std::span(perm).subspan(b * cfg.batch_size, cfg.batch_size));

            if (run_q_phase) {
                const FactorTriple f = encode(params, batch.x);  // detached
                for (std::size_t s = 0; s < cfg.q_steps_per_main_step; ++s) {
                    detail::q_ascent_step(params.q_gd, q_opt_gd, f.gamma, f.delta);
                    detail::q_ascent_step(params.q_du, q_opt_du, f.delta, f.upsilon);
                    detail::q_ascent_step(params.q_ug, q_opt_ug, f.upsilon, f.gamma);
                }
            }

            TotalLossResult r =
                total_loss(params, batch, cfg.weights, cfg.mode, cfg.sinkhorn);
            main_opt.step(main_tensors, main_grad_tensors(r.grads));
            detail::accumulate(train_acc, r.values);
        }
        detail::scale(train_acc, 1.0 / static_cast<double>(n_batches));

        EpochRecord rec;
        rec.train = train_acc;
        rec.val = loss_breakdown(params, val_batch, cfg.weights, cfg.mode, cfg.sinkhorn);
        report.epochs.push_back(rec);
        report.final_epoch = epoch;

        if (rec.val.pred < best_val_pred) {
            best_val_pred = rec.val.pred;
            report.best_epoch = epoch;
            best_params = params;
            epochs_since_improvement = 0;
        } else if (++epochs_since_improvement >= cfg.early_stop_patience) {
            break;
        }
    }

    result.params = std::move(best_params);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
            .count();
    return result;
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string label;
    std::vector<double> pehe_runs, ate_runs;
    double pehe_mean = 0.0, pehe_std = 0.0;
    double ate_mean = 0.0, ate_std = 0.0;
};

namespace detail {

inline void finalize_stats(AblationRow& row) {
    auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
        mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        sd = 0.0;
        if (v.size() > 1) {
            for (double x : v) sd += (x - mean) * (x - mean);
            sd = std::sqrt(sd / static_cast<double>(v.size() - 1));
        }
    };
    stats(row.pehe_runs, row.pehe_mean, row.pehe_std);
    stats(row.ate_runs, row.ate_mean, row.ate_std);
}

}  // namespace detail

/// Trains {full, wo_sfd, wo_mim, wo_both, rlo} with shared per-repetition
/// seeds and 63/27/10 splits, reporting effect-recovery metrics on the
/// held-out test slice.
inline std::vector<AblationRow> run_ablations(const Dataset& data,
                                              const TrainConfig& base,
                                              std::size_t repetitions = 10) {
    if (!data.has_ground_truth())
        throw CapabilityError("run_ablations: needs ground-truth potential outcomes");
    if (repetitions < 1) throw ValidationError("run_ablations: repetitions >= 1");

    struct Variant {
        const char* label;
        MiMode mode;
        bool sfd;
    };
    const std::array<Variant, 5> variants = {{{"full", MiMode::Mim, true},
                                              {"wo_sfd", MiMode::Mim, false},
                                              {"wo_mim", MiMode::None, true},
                                              {"wo_both", MiMode::None, false},
                                              {"rlo", MiMode::Rlo, true}}};
    std::vector<AblationRow> rows(variants.size());
    for (std::size_t v = 0; v < variants.size(); ++v) rows[v].label = variants[v].label;

    for (std::size_t rep = 0; rep < repetitions; ++rep) {
        const std::uint64_t seed = base.seed + rep;
        const auto parts =
            split_dataset(data, std::array<double, 3>{0.63, 0.27, 0.10}, seed);
        for (std::size_t v = 0; v < variants.size(); ++v) {
            TrainConfig cfg = base;
            cfg.seed = seed;
            cfg.mode = variants[v].mode;
            cfg.model.sfd_enabled = variants[v].sfd;
            FitResult fitted = fit(parts[0], cfg, parts[1]);
            const std::vector<double> tau_hat = predict_ite(fitted.params, parts[2].x);
            rows[v].pehe_runs.push_back(pehe(tau_hat, parts[2]));
            rows[v].ate_runs.push_back(ate_error(tau_hat, parts[2]));
        }
    }
    for (auto& row : rows) detail::finalize_stats(row);
    return rows;
}

}  // namespace dcr
