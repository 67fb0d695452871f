#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "dcr/data.hpp"
#include "dcr/metrics.hpp"
#include "dcr/model.hpp"
#include "dcr/training.hpp"

namespace dcr {

inline constexpr int kSchemaVersion = 1;

inline std::string mi_mode_name(MiMode m) {
    switch (m) {
        case MiMode::Mim: return "mim";
        case MiMode::Rlo: return "rlo";
        case MiMode::None: return "none";
    }
    return "mim";
}

inline MiMode mi_mode_from_name(const std::string& s) {
    if (s == "mim") return MiMode::Mim;
    if (s == "rlo") return MiMode::Rlo;
    if (s == "none") return MiMode::None;
    throw ValidationError("unknown mode '" + s + "' (expected mim|rlo|none)");
}

// ---------------------------------------------------------------------------
// JSON plumbing
// ---------------------------------------------------------------------------

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << text;
    if (!out) throw IoError("write failed: " + path);
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("bad JSON in " + path + ": " + e.what());
    }
    return j;
}

// ---------------------------------------------------------------------------
// Config serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"input_dim", c.input_dim},
            {"factor_dim", c.factor_dim},
            {"shared_layers", c.shared_layers},
            {"head_layers", c.head_layers},
            {"classifier_layers", c.classifier_layers},
            {"outcome_layers", c.outcome_layers},
            {"q_layers", c.q_layers},
            {"sfd_enabled", c.sfd_enabled},
            {"binary_outcome", c.binary_outcome},
            {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.factor_dim = j.at("factor_dim").get<std::size_t>();
    c.shared_layers = j.at("shared_layers").get<std::vector<std::size_t>>();
    c.head_layers = j.at("head_layers").get<std::vector<std::size_t>>();
    c.classifier_layers = j.at("classifier_layers").get<std::vector<std::size_t>>();
    c.outcome_layers = j.at("outcome_layers").get<std::vector<std::size_t>>();
    c.q_layers = j.at("q_layers").get<std::vector<std::size_t>>();
    c.sfd_enabled = j.at("sfd_enabled").get<bool>();
    c.binary_outcome = j.at("binary_outcome").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"model", to_json(c.model)},
            {"alpha", c.weights.alpha},
            {"beta", c.weights.beta},
            {"gamma", c.weights.gamma},
            {"lambda", c.weights.lambda},
            {"sinkhorn_epsilon_rel", c.sinkhorn.epsilon_rel},
            {"sinkhorn_iterations", c.sinkhorn.iterations},
            {"mode", mi_mode_name(c.mode)},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"q_steps_per_main_step", c.q_steps_per_main_step},
            {"learning_rate_main", c.learning_rate_main},
            {"learning_rate_q", c.learning_rate_q},
            {"early_stop_patience", c.early_stop_patience},
            {"val_fraction", c.val_fraction},
            {"seed", c.seed}};
}

// ---------------------------------------------------------------------------
// Checkpoints: a flat, versioned name -> tensor map plus the model config
// ---------------------------------------------------------------------------

inline void save_checkpoint(const ModelParams& params, const std::string& path) {
    auto& mut = const_cast<ModelParams&>(params);
    nlohmann::json tensors = nlohmann::json::object();
    for (const ParamRef& ref : all_param_refs(mut))
        tensors[ref.name] = {{"rows", ref.tensor->rows},
                             {"cols", ref.tensor->cols},
                             {"data", ref.tensor->data}};
    nlohmann::json j = {{"format", "dcr-checkpoint"},
                        {"schema_version", kSchemaVersion},
                        {"config", to_json(params.config)},
                        {"tensors", tensors}};
    write_json_file(path, j);
}

inline ModelParams load_checkpoint(const std::string& path) {
    const nlohmann::json j = read_json_file(path);
    if (!j.contains("format") || j.at("format") != "dcr-checkpoint")
        throw SchemaError(path + " is not a checkpoint file");
    if (j.at("schema_version").get<int>() != kSchemaVersion)
        throw SchemaError("unsupported checkpoint schema_version");
    ModelParams params = init_model(model_config_from_json(j.at("config")));
    const nlohmann::json& tensors = j.at("tensors");
    for (const ParamRef& ref : all_param_refs(params)) {
        if (!tensors.contains(ref.name))
            throw SchemaError("checkpoint missing tensor '" + ref.name + "'");
        const nlohmann::json& t = tensors.at(ref.name);
        if (t.at("rows").get<std::size_t>() != ref.tensor->rows ||
            t.at("cols").get<std::size_t>() != ref.tensor->cols)
            throw SchemaError("checkpoint tensor '" + ref.name + "' has wrong shape");
        ref.tensor->data = t.at("data").get<std::vector<double>>();
        if (!ref.tensor->all_finite())
            throw NumericError("checkpoint tensor '" + ref.name + "' is not finite");
    }
    if (tensors.size() != all_param_refs(params).size())
        throw SchemaError("checkpoint has unexpected extra tensors");
    return params;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const LossBreakdown& b) {
    return {{"pred", b.pred},   {"treat", b.treat}, {"disc", b.disc},
            {"mi", b.mi},       {"reg", b.reg},     {"total", b.total},
            {"ipm_degenerate", b.ipm_degenerate}};
}

/// Wall-clock time is deliberately not serialized: rerunning the same config
/// and seed must reproduce this document byte for byte.
inline nlohmann::json to_json(const TrainReport& r) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const EpochRecord& e : r.epochs)
        epochs.push_back({{"train", to_json(e.train)}, {"val", to_json(e.val)}});
    return {{"format", "dcr-train-report"},
            {"schema_version", kSchemaVersion},
            {"seed", r.seed},
            {"config", to_json(r.config)},
            {"best_epoch", r.best_epoch},
            {"final_epoch", r.final_epoch},
            {"epochs", epochs}};
}

inline nlohmann::json to_json(const std::vector<AblationRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const AblationRow& r : rows)
        out.push_back({{"variant", r.label},
                       {"pehe_mean", r.pehe_mean},
                       {"pehe_std", r.pehe_std},
                       {"ate_mean", r.ate_mean},
                       {"ate_std", r.ate_std},
                       {"pehe_runs", r.pehe_runs},
                       {"ate_runs", r.ate_runs}});
    return {{"format", "dcr-ablation"}, {"schema_version", kSchemaVersion},
            {"rows", out}};
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << "variant,pehe_mean,pehe_std,ate_mean,ate_std\n";
    for (const AblationRow& r : rows)
        out << r.label << ',' << detail::format_double(r.pehe_mean) << ','
            << detail::format_double(r.pehe_std) << ','
            << detail::format_double(r.ate_mean) << ','
            << detail::format_double(r.ate_std) << '\n';
    return out.str();
}

inline std::string uplift_curve_csv(const UpliftCurve& curve) {
    std::ostringstream out;
    out << "k,auuc_at_k\n";
    for (std::size_t i = 0; i < curve.k_grid.size(); ++i)
        out << detail::format_double(curve.k_grid[i]) << ','
            << detail::format_double(curve.auuc_at_k[i]) << '\n';
    return out.str();
}

inline std::string selected_indices_csv(std::span<const std::size_t> selected) {
    std::ostringstream out;
    out << "index\n";
    for (std::size_t i : selected) out << i << '\n';
    return out.str();
}

/// Sidecar emitted next to generated datasets: the spec echo plus the
/// ground-truth factor membership of every covariate column.
inline nlohmann::json synthetic_sidecar(const SyntheticDataset& s) {
    return {{"format", "dcr-synthetic-sidecar"},
            {"schema_version", kSchemaVersion},
            {"spec",
             {{"m_gamma", s.spec.m_gamma},
              {"m_delta", s.spec.m_delta},
              {"m_upsilon", s.spec.m_upsilon},
              {"d", s.spec.dim()},
              {"n", s.spec.n},
              {"target_treated_fraction", s.spec.target_treated_fraction},
              {"outcome_form",
               s.spec.outcome_form == OutcomeForm::Linear ? "linear" : "quadratic"},
              {"noise_std", s.spec.noise_std},
              {"effect_scale", s.spec.effect_scale},
              {"binary_outcome", s.spec.binary_outcome},
              {"seed", s.spec.seed}}},
            {"logit_offset", s.logit_offset},
            {"factor_indices",
             {{"gamma", s.factor_indices.gamma},
              {"delta", s.factor_indices.delta},
              {"upsilon", s.factor_indices.upsilon}}}};
}

inline FactorIndexSets factor_indices_from_sidecar(const nlohmann::json& j) {
    FactorIndexSets f;
    const nlohmann::json& fi = j.at("factor_indices");
    f.gamma = fi.at("gamma").get<std::vector<std::size_t>>();
    f.delta = fi.at("delta").get<std::vector<std::size_t>>();
    f.upsilon = fi.at("upsilon").get<std::vector<std::size_t>>();
    return f;
}

}  // namespace dcr
