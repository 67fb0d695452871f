#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dcr/rng.hpp"
#include "dcr/tensor.hpp"
#include "dcr/types.hpp"

namespace dcr {

struct Dataset {
    Tensor2D x;                // n x d covariates
    std::vector<double> t;     // 0/1 treatment
    std::vector<double> y;     // factual outcome
    std::optional<std::vector<double>> y0, y1;  // ground-truth potential outcomes
    std::optional<std::vector<double>> propensity;
    OutcomeType outcome_type = OutcomeType::Continuous;
    std::vector<std::string> feature_names;

    std::size_t n() const { return x.rows; }
    std::size_t dim() const { return x.cols; }

    bool has_ground_truth() const { return y0.has_value() && y1.has_value(); }

    std::size_t treated_count() const {
        std::size_t c = 0;
        for (double v : t) c += (v == 1.0);
        return c;
    }

    void validate() const {
        if (t.size() != n() || y.size() != n())
            throw ValidationError("Dataset: column lengths disagree");
        if (feature_names.size() != dim())
            throw ValidationError("Dataset: feature name count");
        for (double v : t)
            if (v != 0.0 && v != 1.0)
                throw ValidationError("Dataset: treatment must be 0/1");
        for (const auto& opt : {&y0, &y1, &propensity})
            if (opt->has_value() && (*opt)->size() != n())
                throw ValidationError("Dataset: optional column length");
        if (has_ground_truth()) {
            for (std::size_t i = 0; i < n(); ++i) {
                const double expect = t[i] == 1.0 ? (*y1)[i] : (*y0)[i];
                if (std::abs(y[i] - expect) > 1e-9)
                    throw ValidationError(
                        "Dataset: factual outcome disagrees with potential outcomes "
                        "at row " + std::to_string(i));
            }
        }
        if (outcome_type == OutcomeType::Binary) {
            auto check01 = [](const std::vector<double>& v, const char* what) {
                for (double x : v)
                    if (x != 0.0 && x != 1.0)
                        throw ValidationError(std::string("Dataset: ") + what +
                                              " must be 0/1 for binary outcomes");
            };
            check01(y, "y");
            if (y0) check01(*y0, "y0");
            if (y1) check01(*y1, "y1");
        }
    }

    Dataset subset(std::span<const std::size_t> idx) const {
        Dataset s;
        s.x = Tensor2D(idx.size(), dim());
        s.t.resize(idx.size());
        s.y.resize(idx.size());
        s.outcome_type = outcome_type;
        s.feature_names = feature_names;
        auto pick = [&](const std::optional<std::vector<double>>& src,
                        std::optional<std::vector<double>>& dst) {
            if (!src) return;
            dst.emplace(idx.size());
            for (std::size_t r = 0; r < idx.size(); ++r) (*dst)[r] = (*src)[idx[r]];
        };
        for (std::size_t r = 0; r < idx.size(); ++r) {
            std::copy(x.row(idx[r]).begin(), x.row(idx[r]).end(), s.x.row(r).begin());
            s.t[r] = t[idx[r]];
            s.y[r] = y[idx[r]];
        }
        pick(y0, s.y0);
        pick(y1, s.y1);
        pick(propensity, s.propensity);
        return s;
    }
};

// ---------------------------------------------------------------------------
// Factor-structured synthetic generator
// ---------------------------------------------------------------------------

enum class OutcomeForm { Linear, Quadratic };

/// The covariates observe three independent latent blocks directly, so the
/// true factor membership of every column is known. Treatment depends on the
/// first two blocks, outcomes on the last two.
struct SyntheticSpec {
    std::size_t m_gamma = 4;
    std::size_t m_delta = 4;
    std::size_t m_upsilon = 4;
    std::size_t n = 4000;
    double target_treated_fraction = 0.3;
    OutcomeForm outcome_form = OutcomeForm::Linear;
    double noise_std = 1.0;
    double effect_scale = 1.0;   // multiplies the effect surface; 0 = no effect
    bool binary_outcome = false;
    std::uint64_t seed = 0;

    std::size_t dim() const { return m_gamma + m_delta + m_upsilon; }

    void validate() const {
        if (dim() < 1) throw ValidationError("SyntheticSpec: zero covariate dim");
        if (n < 10) throw ValidationError("SyntheticSpec: n must be >= 10");
        if (!(target_treated_fraction > 0.0 && target_treated_fraction < 1.0))
            throw ValidationError("SyntheticSpec: treated fraction must be in (0,1)");
        if (!(noise_std >= 0.0)) throw ValidationError("SyntheticSpec: noise_std < 0");
        if (!(effect_scale >= 0.0))
            throw ValidationError("SyntheticSpec: effect_scale < 0");
    }
};

struct FactorIndexSets {
    std::vector<std::size_t> gamma, delta, upsilon;
};

struct SyntheticDataset {
    Dataset data;
    FactorIndexSets factor_indices;
    SyntheticSpec spec;
    double logit_offset = 0.0;  // chosen so the mean propensity hits the target
};

namespace detail {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Linear (plus optional pairwise-product) function of z with seeded
/// coefficients drawn once up front.
struct OutcomeFn {
    std::vector<double> linear;
    double intercept = 0.0;
    std::vector<double> quad;  // row-major upper triangle incl. diagonal

    static OutcomeFn draw(std::size_t p, bool quadratic, Rng& rng) {
        OutcomeFn f;
        const double scale = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(p, 1)));
        f.linear.resize(p);
        for (double& c : f.linear) c = rng.normal() * scale;
        f.intercept = rng.normal() * 0.5;
        if (quadratic) {
            f.quad.resize(p * (p + 1) / 2);
            const double qscale = 0.5 / static_cast<double>(std::max<std::size_t>(p, 1));
            for (double& c : f.quad) c = rng.normal() * qscale;
        }
        return f;
    }

    double operator()(std::span<const double> z) const {
        double v = intercept;
        for (std::size_t k = 0; k < linear.size(); ++k) v += linear[k] * z[k];
        if (!quad.empty()) {
            std::size_t q = 0;
            for (std::size_t k = 0; k < linear.size(); ++k)
                for (std::size_t l = k; l < linear.size(); ++l)
                    v += quad[q++] * z[k] * z[l];
        }
        return v;
    }
};

}  // namespace detail

inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const std::size_t d = spec.dim(), n = spec.n;
    const std::size_t mg = spec.m_gamma, md = spec.m_delta, mu = spec.m_upsilon;
    Rng rng(spec.seed);

    SyntheticDataset out;
    out.spec = spec;
    for (std::size_t k = 0; k < mg; ++k) out.factor_indices.gamma.push_back(k);
    for (std::size_t k = 0; k < md; ++k) out.factor_indices.delta.push_back(mg + k);
    for (std::size_t k = 0; k < mu; ++k) out.factor_indices.upsilon.push_back(mg + md + k);

    Dataset& ds = out.data;
    ds.x = Tensor2D(n, d);
    for (double& v : ds.x.data) v = rng.normal();
    ds.feature_names.resize(d);
    for (std::size_t k = 0; k < d; ++k) ds.feature_names[k] = "f" + std::to_string(k);

    // treatment assignment from (gamma, delta) with a bisected logit offset
    const std::size_t pt = mg + md;
    std::vector<double> w_treat(pt);
    const double tscale = 2.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(pt, 1)));
    for (double& w : w_treat) w = rng.normal() * tscale;
    std::vector<double> raw_logit(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < pt; ++k) s += w_treat[k] * ds.x(i, k);
        raw_logit[i] = s;
    }
    const auto mean_propensity = [&](double b) {
        double s = 0.0;
        for (double r : raw_logit) s += detail::sigmoid(r + b);
        return s / static_cast<double>(n);
    };
    double lo = -30.0, hi = 30.0, offset = 0.0;
    bool converged = false;
    for (int it = 0; it < 100; ++it) {
        offset = 0.5 * (lo + hi);
        const double f = mean_propensity(offset) - spec.target_treated_fraction;
        if (std::abs(f) <= 1e-4) {
            converged = true;
            break;
        }
        (f > 0.0 ? hi : lo) = offset;
    }
    if (!converged)
        throw NumericError("generate_synthetic: propensity offset bisection failed");
    out.logit_offset = offset;

    ds.t.resize(n);
    ds.propensity.emplace(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double e = detail::sigmoid(raw_logit[i] + offset);
        (*ds.propensity)[i] = e;
        ds.t[i] = rng.bernoulli(e) ? 1.0 : 0.0;
    }

    // outcomes from (upsilon, delta): y^t = f(z) + t*g(z) + noise
    const std::size_t pz = mu + md;
    const bool quadratic = spec.outcome_form == OutcomeForm::Quadratic;
    detail::OutcomeFn base = detail::OutcomeFn::draw(pz, quadratic, rng);
    detail::OutcomeFn effect = detail::OutcomeFn::draw(pz, quadratic, rng);

    ds.y.resize(n);
    ds.y0.emplace(n);
    ds.y1.emplace(n);
    ds.outcome_type = spec.binary_outcome ? OutcomeType::Binary : OutcomeType::Continuous;
    std::vector<double> z(pz);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < mu; ++k) z[k] = ds.x(i, mg + md + k);
        for (std::size_t k = 0; k < md; ++k) z[mu + k] = ds.x(i, mg + k);
        const double mu0 = base(z);
        const double tau = spec.effect_scale * effect(z);
        const double eps = spec.noise_std > 0.0 ? rng.normal() * spec.noise_std : 0.0;
        if (spec.binary_outcome) {
            // shared uniform draw couples the two arms monotonically
            const double u = rng.uniform();
            (*ds.y0)[i] = u < detail::sigmoid(mu0 + eps) ? 1.0 : 0.0;
            (*ds.y1)[i] = u < detail::sigmoid(mu0 + tau + eps) ? 1.0 : 0.0;
        } else {
            // one noise draw per sample: the true effect stays exactly tau
            (*ds.y0)[i] = mu0 + eps;
            (*ds.y1)[i] = mu0 + tau + eps;
        }
        ds.y[i] = ds.t[i] == 1.0 ? (*ds.y1)[i] : (*ds.y0)[i];
    }
    ds.validate();
    return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Column mapping for load_csv. An empty feature list means "every column not
/// claimed by one of the special names, in file order".
struct CsvSchema {
    std::vector<std::string> feature_columns;
    std::string treatment = "t";
    std::string outcome = "y";
    std::string y0 = "y0";
    std::string y1 = "y1";
    std::string propensity = "e";
    OutcomeType outcome_type = OutcomeType::Continuous;
};

namespace detail {

inline std::string format_double(double v) {
    std::array<char, 32> buf;
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

inline double parse_double(std::string_view cell, std::size_t row, std::size_t col) {
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw ParseError("non-numeric cell '" + std::string(cell) + "' at row " +
                         std::to_string(row) + ", column " + std::to_string(col));
    return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            cells.push_back(line.substr(start));
            break;
        }
        cells.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    if (!cells.empty() && !cells.back().empty() && cells.back().back() == '\r')
        cells.back().pop_back();
    return cells;
}

}  // namespace detail

/// Shortest-round-trip decimal text; load_csv(save_csv(ds)) is bit-exact.
inline void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (std::size_t k = 0; k < ds.dim(); ++k) out << ds.feature_names[k] << ',';
    out << "t,y";
    if (ds.y0) out << ",y0";
    if (ds.y1) out << ",y1";
    if (ds.propensity) out << ",e";
    out << '\n';
    for (std::size_t i = 0; i < ds.n(); ++i) {
        for (std::size_t k = 0; k < ds.dim(); ++k)
            out << detail::format_double(ds.x(i, k)) << ',';
        out << detail::format_double(ds.t[i]) << ',' << detail::format_double(ds.y[i]);
        if (ds.y0) out << ',' << detail::format_double((*ds.y0)[i]);
        if (ds.y1) out << ',' << detail::format_double((*ds.y1)[i]);
        if (ds.propensity) out << ',' << detail::format_double((*ds.propensity)[i]);
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

inline Dataset load_csv(const std::string& path, const CsvSchema& schema = {}) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty file: " + path);
    const std::vector<std::string> header = detail::split_csv_line(line);

    auto find_col = [&](const std::string& name) -> std::ptrdiff_t {
        auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : it - header.begin();
    };

    const std::ptrdiff_t t_col = find_col(schema.treatment);
    const std::ptrdiff_t y_col = find_col(schema.outcome);
    if (t_col < 0)
        throw SchemaError("missing treatment column '" + schema.treatment + "'");
    if (y_col < 0) throw SchemaError("missing outcome column '" + schema.outcome + "'");
    const std::ptrdiff_t y0_col = find_col(schema.y0);
    const std::ptrdiff_t y1_col = find_col(schema.y1);
    const std::ptrdiff_t e_col = find_col(schema.propensity);

    std::vector<std::size_t> feature_cols;
    Dataset ds;
    ds.outcome_type = schema.outcome_type;
    if (schema.feature_columns.empty()) {
        for (std::size_t c = 0; c < header.size(); ++c) {
            const auto pc = static_cast<std::ptrdiff_t>(c);
            if (pc == t_col || pc == y_col || pc == y0_col || pc == y1_col ||
                pc == e_col)
                continue;
            feature_cols.push_back(c);
            ds.feature_names.push_back(header[c]);
        }
    } else {
        for (const std::string& name : schema.feature_columns) {
            const std::ptrdiff_t c = find_col(name);
            if (c < 0) throw SchemaError("missing feature column '" + name + "'");
            feature_cols.push_back(static_cast<std::size_t>(c));
            ds.feature_names.push_back(name);
        }
    }
    if (feature_cols.empty()) throw SchemaError("no feature columns");

    std::vector<std::vector<double>> rows;
    std::size_t row_no = 0;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty() || line == "\r") continue;
        const std::vector<std::string> cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw ParseError("row " + std::to_string(row_no) + " has " +
                             std::to_string(cells.size()) + " cells, header has " +
                             std::to_string(header.size()));
        std::vector<double> vals(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c)
            vals[c] = detail::parse_double(cells[c], row_no, c);
        rows.push_back(std::move(vals));
    }

    const std::size_t n = rows.size();
    ds.x = Tensor2D(n, feature_cols.size());
    ds.t.resize(n);
    ds.y.resize(n);
    if (y0_col >= 0) ds.y0.emplace(n);
    if (y1_col >= 0) ds.y1.emplace(n);
    if (e_col >= 0) ds.propensity.emplace(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < feature_cols.size(); ++k)
            ds.x(i, k) = rows[i][feature_cols[k]];
        ds.t[i] = rows[i][static_cast<std::size_t>(t_col)];
        ds.y[i] = rows[i][static_cast<std::size_t>(y_col)];
        if (ds.y0) (*ds.y0)[i] = rows[i][static_cast<std::size_t>(y0_col)];
        if (ds.y1) (*ds.y1)[i] = rows[i][static_cast<std::size_t>(y1_col)];
        if (ds.propensity)
            (*ds.propensity)[i] = rows[i][static_cast<std::size_t>(e_col)];
    }
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

namespace detail {

/// Largest-remainder apportionment of n into parts proportional to fractions.
inline std::vector<std::size_t> apportion(std::size_t n,
                                          std::span<const double> fractions) {
    double sum = 0.0;
    for (double f : fractions) {
        if (!(f > 0.0)) throw ValidationError("split fractions must be positive");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ValidationError("split fractions must sum to 1");
    std::vector<std::size_t> sizes(fractions.size());
    std::vector<std::pair<double, std::size_t>> rem(fractions.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        const double quota = static_cast<double>(n) * fractions[i];
        sizes[i] = static_cast<std::size_t>(std::floor(quota));
        assigned += sizes[i];
        rem[i] = {quota - std::floor(quota), i};
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
        return a.first > b.first;  // ties keep ascending index
    });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[rem[k].second];
    return sizes;
}

inline std::vector<Dataset> split_impl(const Dataset& ds,
                                       std::span<const double> fractions,
                                       std::uint64_t seed) {
    const auto sizes = apportion(ds.n(), fractions);
    for (std::size_t s : sizes)
        if (s == 0) throw ValidationError("split produces an empty part");
    std::vector<std::size_t> perm(ds.n());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    Rng rng(seed);
    rng.shuffle(perm);
    std::vector<Dataset> parts;
    std::size_t start = 0;
    for (std::size_t s : sizes) {
        parts.push_back(ds.subset(std::span(perm).subspan(start, s)));
        start += s;
    }
    return parts;
}

}  // namespace detail

/// Seeded shuffle, then contiguous slices sized by largest remainder.
inline std::array<Dataset, 3> split_dataset(const Dataset& ds,
                                            const std::array<double, 3>& fractions,
                                            std::uint64_t seed) {
    auto parts = detail::split_impl(ds, fractions, seed);
    return {std::move(parts[0]), std::move(parts[1]), std::move(parts[2])};
}

/// Two-way variant used for internal train/validation splits.
inline std::array<Dataset, 2> split_dataset(const Dataset& ds,
                                            const std::array<double, 2>& fractions,
                                            std::uint64_t seed) {
    auto parts = detail::split_impl(ds, fractions, seed);
    return {std::move(parts[0]), std::move(parts[1])};
}

}  // namespace dcr
