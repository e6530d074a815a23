#pragma once

// Synthetic cohorts whose marginals follow the published cohort summary
// statistics (mean +- SD for continuous features, category frequencies for
// ordinal and binary ones), with a logistic outcome model and knobs for
// controlled domain shift.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hfda/cohort.hpp"
#include "hfda/error.hpp"
#include "hfda/rng.hpp"
#include "hfda/schema.hpp"

namespace hfda {

struct FeatureSpec {
    FeatureKind kind = FeatureKind::Continuous;
    double mean = 0.0;                 // continuous
    double sd = 1.0;                   // continuous
    std::vector<double> probabilities; // ordinal: P(code = k), k = 0..K-1
    double prevalence = 0.0;           // binary

    static FeatureSpec normal(double mean, double sd) {
        return {FeatureKind::Continuous, mean, sd, {}, 0.0};
    }
    // Frequencies are normalized to sum to one (published percentages are
    // rounded and can sum to 99.9% or 100.1%).
    static FeatureSpec categorical(std::vector<double> frequencies) {
        const double total = std::accumulate(frequencies.begin(), frequencies.end(), 0.0);
        for (auto& f : frequencies) {
            f /= total;
        }
        return {FeatureKind::Ordinal, 0.0, 1.0, std::move(frequencies), 0.0};
    }
    static FeatureSpec binary(double prevalence) {
        return {FeatureKind::Binary, 0.0, 1.0, {}, prevalence};
    }

    double expected_mean() const {
        switch (kind) {
        case FeatureKind::Continuous:
            return mean;
        case FeatureKind::Binary:
            return prevalence;
        case FeatureKind::Ordinal: {
            double m = 0.0;
            for (std::size_t k = 0; k < probabilities.size(); ++k) {
                m += static_cast<double>(k) * probabilities[k];
            }
            return m;
        }
        }
        return 0.0;
    }

    double expected_sd() const {
        switch (kind) {
        case FeatureKind::Continuous:
            return sd;
        case FeatureKind::Binary:
            return std::sqrt(prevalence * (1.0 - prevalence));
        case FeatureKind::Ordinal: {
            const double m = expected_mean();
            double v = 0.0;
            for (std::size_t k = 0; k < probabilities.size(); ++k) {
                const double d = static_cast<double>(k) - m;
                v += d * d * probabilities[k];
            }
            return std::sqrt(v);
        }
        }
        return 0.0;
    }

    void validate(const std::string& name) const {
        switch (kind) {
        case FeatureKind::Continuous:
            if (!(sd > 0.0) || !std::isfinite(mean) || !std::isfinite(sd)) {
                throw DataError("spec for '" + name + "': SD must be positive and finite");
            }
            break;
        case FeatureKind::Binary:
            if (!(prevalence >= 0.0 && prevalence <= 1.0)) {
                throw DataError("spec for '" + name + "': prevalence outside [0, 1]");
            }
            break;
        case FeatureKind::Ordinal: {
            if (probabilities.empty()) {
                throw DataError("spec for '" + name + "': no category probabilities");
            }
            double total = 0.0;
            for (double p : probabilities) {
                if (!(p >= 0.0)) {
                    throw DataError("spec for '" + name + "': negative probability");
                }
                total += p;
            }
            if (std::abs(total - 1.0) > 1e-9) {
                throw DataError("spec for '" + name + "': probabilities do not sum to 1");
            }
            break;
        }
        }
    }

    friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

// Zero-inflated geometric distribution on {0..max_k} with P(k) proportional
// to r^k for k >= 1, matching a given mean and SD. The ratio mean/E[X^2]
// does not depend on the zero inflation, so r is found by bisection on that
// ratio and the inflation then fixes the mean. Falls back to a pure
// truncated geometric matching the mean when the SD cannot be reached.
inline std::vector<double> fit_truncated_geometric(double target_mean, double target_sd,
                                                   std::size_t max_k = 5) {
    auto moments = [max_k](double r) {
        double z = 0.0, m1 = 0.0, m2 = 0.0, w = 1.0;
        for (std::size_t k = 0; k <= max_k; ++k) {
            z += w;
            m1 += static_cast<double>(k) * w;
            m2 += static_cast<double>(k * k) * w;
            w *= r;
        }
        return std::pair{m1 / z, m2 / z};
    };
    auto geometric = [max_k](double r) {
        std::vector<double> p(max_k + 1);
        double w = 1.0, z = 0.0;
        for (auto& v : p) {
            v = w;
            z += w;
            w *= r;
        }
        for (auto& v : p) {
            v /= z;
        }
        return p;
    };
    auto bisect = [](auto f, double target) {
        double lo = 1e-9, hi = 1.0 - 1e-9;
        for (int i = 0; i < 200; ++i) {
            const double mid = 0.5 * (lo + hi);
            // f is decreasing in r for both uses below.
            if (f(mid) > target) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return 0.5 * (lo + hi);
    };

    const double target_m2 = target_sd * target_sd + target_mean * target_mean;
    const double ratio = target_mean / target_m2;
    const double r = bisect([&](double x) { auto [a, b] = moments(x); return a / b; }, ratio);
    const auto [m1, m2] = moments(r);
    const double keep = target_mean / m1;  // 1 - zero inflation
    if (keep > 0.0 && keep <= 1.0 && std::abs(m1 / m2 - ratio) < 1e-9) {
        auto p = geometric(r);
        for (auto& v : p) {
            v *= keep;
        }
        p[0] += 1.0 - keep;
        return p;
    }
    const double r_mean = bisect([&](double x) { return -moments(x).first; }, -target_mean);
    return geometric(r_mean);
}

struct FeatureSpecSet {
    std::string name;
    std::vector<FeatureSpec> features;  // schema order
    // Continuous features are mixed with a shared latent factor:
    // z_j = cos(a) e_j + sin(a) f, giving pairwise correlation sin^2(a) with
    // unchanged means and SDs. Zero means independent features.
    double correlation_angle = 0.0;

    void validate(const FeatureSchema& schema) const {
        if (features.size() != schema.size()) {
            throw DataError("spec '" + name + "' has " + std::to_string(features.size()) +
                            " features, schema has " + std::to_string(schema.size()));
        }
        for (std::size_t j = 0; j < features.size(); ++j) {
            const auto& f = features[j];
            const auto& d = schema.feature(j);
            f.validate(d.name);
            const bool kind_ok = f.kind == d.kind || (d.kind == FeatureKind::Binary && f.kind == FeatureKind::Ordinal &&
                                                      f.probabilities.size() == 2);
            if (!kind_ok) {
                throw DataError("spec '" + name + "': kind of '" + d.name + "' does not match schema");
            }
            if (f.kind == FeatureKind::Ordinal &&
                static_cast<double>(f.probabilities.size() - 1) > d.max) {
                throw DataError("spec '" + name + "': more categories than '" + d.name + "' allows");
            }
        }
        if (!std::isfinite(correlation_angle)) {
            throw DataError("spec '" + name + "': correlation angle must be finite");
        }
    }

    friend bool operator==(const FeatureSpecSet&, const FeatureSpecSet&) = default;
};

namespace spec_names {
inline constexpr const char* kSof = "sof-like";
inline constexpr const char* kMros = "mros-like";
inline constexpr const char* kUkbFemale = "ukb-female-like";
inline constexpr const char* kUkbMale = "ukb-male-like";
} // namespace spec_names

namespace detail {

struct CohortSummary {
    const char* name;
    double age[2], height[2], weight[2], grip[2];
    double pace[3];     // slow, steady average, brisk (%)
    double smoking[3];  // never, former, current (%)
    double shoulder, wrist;  // prior fracture prevalence (%)
    double iadl[2];
    double total_hip[2], lumbar_spine[2], femoral_neck[2];
};

inline FeatureSpecSet make_spec(const CohortSummary& s) {
    FeatureSpecSet set;
    set.name = s.name;
    set.features = {
        FeatureSpec::normal(s.age[0], s.age[1]),
        FeatureSpec::normal(s.height[0], s.height[1]),
        FeatureSpec::normal(s.weight[0], s.weight[1]),
        FeatureSpec::normal(s.grip[0], s.grip[1]),
        FeatureSpec::categorical({s.pace[0] / 100, s.pace[1] / 100, s.pace[2] / 100}),
        FeatureSpec::categorical({s.smoking[0] / 100, s.smoking[1] / 100, s.smoking[2] / 100}),
        FeatureSpec::binary(s.shoulder / 100),
        FeatureSpec::binary(s.wrist / 100),
        FeatureSpec{FeatureKind::Ordinal, 0.0, 1.0, fit_truncated_geometric(s.iadl[0], s.iadl[1]), 0.0},
        FeatureSpec::normal(s.total_hip[0], s.total_hip[1]),
        FeatureSpec::normal(s.lumbar_spine[0], s.lumbar_spine[1]),
        FeatureSpec::normal(s.femoral_neck[0], s.femoral_neck[1]),
    };
    return set;
}

} // namespace detail

// The four reference cohorts (source SOF/MrOS, UKB female/male targets).
inline std::map<std::string, FeatureSpecSet> builtin_specs() {
    using detail::CohortSummary;
    const CohortSummary sof{spec_names::kSof,
                            {71.5, 5.3}, {159.1, 5.9}, {67.8, 12.3}, {20.9, 4.2},
                            {25.3, 50.8, 23.8}, {63.9, 27.9, 7.9}, 6.0, 10.8,
                            {0.52, 0.96}, {0.00, 1.01}, {0.00, 1.00}, {0.00, 1.01}};
    const CohortSummary mros{spec_names::kMros,
                             {74.1, 6.0}, {173.9, 6.8}, {82.6, 13.1}, {38.7, 8.3},
                             {25.1, 49.9, 24.8}, {39.0, 58.0, 3.0}, 1.2, 1.6,
                             {0.34, 0.81}, {0.00, 1.01}, {0.00, 1.00}, {0.00, 1.01}};
    const CohortSummary ukb_f{spec_names::kUkbFemale,
                              {60.0, 4.1}, {162.9, 6.3}, {67.0, 12.8}, {20.9, 5.5},
                              {7.6, 50.2, 42.2}, {59.3, 39.3, 1.5}, 12.2, 26.1,
                              {0.40, 0.84}, {-0.48, 0.72}, {-0.40, 0.76}, {-0.26, 0.86}};
    const CohortSummary ukb_m{spec_names::kUkbMale,
                              {60.7, 4.0}, {176.8, 7.0}, {81.6, 12.3}, {35.5, 9.2},
                              {9.0, 52.4, 38.6}, {57.6, 39.0, 3.3}, 10.5, 11.4,
                              {0.32, 0.80}, {0.91, 0.80}, {0.77, 0.95}, {0.53, 1.02}};
    std::map<std::string, FeatureSpecSet> out;
    for (const auto* s : {&sof, &mros, &ukb_f, &ukb_m}) {
        out.emplace(s->name, detail::make_spec(*s));
    }
    return out;
}

inline FeatureSpecSet builtin_spec(const std::string& name) {
    auto all = builtin_specs();
    const auto it = all.find(name);
    if (it == all.end()) {
        throw DataError("unknown built-in spec '" + name + "'");
    }
    return it->second;
}

// y ~ Bernoulli(sigmoid(intercept + beta . x~)), x~ the feature vector
// standardized by `center`/`scale`. Empty center/scale means "standardize by
// the moments of the spec being generated".
struct OutcomeModel {
    std::vector<double> beta = std::vector<double>(kNumFeatures, 0.0);
    double intercept = 0.0;
    bool noise = true;  // false: y = 1[linear predictor > 0]
    std::vector<double> center;
    std::vector<double> scale;

    // Signed clinical signal: older age and prior fractures raise risk,
    // higher BMD and grip strength lower it. The intercept gives ~4%
    // prevalence on the SOF-like spec.
    static OutcomeModel clinical_default() {
        OutcomeModel m;
        m.beta = {0.8, 0.0, 0.0, -0.4, 0.0, 0.0, 0.3, 0.3, 0.0, -0.8, -0.3, -0.6};
        m.intercept = -4.0546607344278467;
        return m;
    }

    OutcomeModel standardized_against(const FeatureSpecSet& spec) const {
        OutcomeModel m = *this;
        m.center.clear();
        m.scale.clear();
        for (const auto& f : spec.features) {
            m.center.push_back(f.expected_mean());
            m.scale.push_back(f.expected_sd());
        }
        return m;
    }

    void validate() const {
        if (beta.size() != kNumFeatures) {
            throw DataError("outcome model needs " + std::to_string(kNumFeatures) + " coefficients");
        }
        if (!std::isfinite(intercept) ||
            !std::all_of(beta.begin(), beta.end(), [](double b) { return std::isfinite(b); })) {
            throw DataError("outcome model coefficients must be finite");
        }
        if (!center.empty() && (center.size() != kNumFeatures || scale.size() != kNumFeatures)) {
            throw DataError("outcome model standardization has the wrong length");
        }
    }

    friend bool operator==(const OutcomeModel&, const OutcomeModel&) = default;
};

inline double sigmoid(double z) noexcept {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

namespace detail {

inline double draw_feature(const FeatureSpec& f, SeededRng& rng, double z) {
    switch (f.kind) {
    case FeatureKind::Continuous:
        return f.mean + f.sd * z;
    case FeatureKind::Binary:
        return rng.uniform() < f.prevalence ? 1.0 : 0.0;
    case FeatureKind::Ordinal: {
        const double u = rng.uniform();
        double acc = 0.0;
        for (std::size_t k = 0; k < f.probabilities.size(); ++k) {
            acc += f.probabilities[k];
            if (u < acc) {
                return static_cast<double>(k);
            }
        }
        // u landed in the rounding slack above the last cumulative sum.
        for (std::size_t k = f.probabilities.size(); k-- > 0;) {
            if (f.probabilities[k] > 0.0) {
                return static_cast<double>(k);
            }
        }
        return 0.0;
    }
    }
    return 0.0;
}

} // namespace detail

inline double linear_predictor(const OutcomeModel& model, std::span<const double> x,
                               std::span<const double> center, std::span<const double> scale) {
    double eta = model.intercept;
    for (std::size_t j = 0; j < x.size(); ++j) {
        if (model.beta[j] == 0.0 || !(scale[j] > 0.0)) {
            continue;
        }
        eta += model.beta[j] * (x[j] - center[j]) / scale[j];
    }
    return eta;
}

// Draws n rows. Feature draws and outcome draws use separate streams of the
// same seed, so the features do not depend on the outcome model.
inline CohortTable generate(const FeatureSpecSet& spec, const OutcomeModel& outcome, std::size_t n,
                            std::uint64_t seed,
                            const FeatureSchema& schema = FeatureSchema::builtin()) {
    if (n < 1) {
        throw DataError("generate: n must be at least 1");
    }
    spec.validate(schema);
    outcome.validate();
    const OutcomeModel model = outcome.center.empty() ? outcome.standardized_against(spec) : outcome;

    const std::size_t d = spec.features.size();
    SeededRng feature_rng(seed, Stream::Synth);
    SeededRng outcome_rng(seed, Stream::SynthOutcome);
    const double mix_own = std::cos(spec.correlation_angle);
    const double mix_shared = std::sin(spec.correlation_angle);
    const bool mixed = spec.correlation_angle != 0.0;

    Matrix x(n, d);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double shared = mixed ? feature_rng.normal() : 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const auto& f = spec.features[j];
            double z = 0.0;
            if (f.kind == FeatureKind::Continuous) {
                z = feature_rng.normal();
                if (mixed) {
                    z = mix_own * z + mix_shared * shared;
                }
            }
            x(i, j) = detail::draw_feature(f, feature_rng, z);
        }
        const double eta = linear_predictor(model, x.row(i), model.center, model.scale);
        if (model.noise) {
            y[i] = outcome_rng.uniform() < sigmoid(eta) ? 1 : 0;
        } else {
            y[i] = eta > 0.0 ? 1 : 0;
        }
    }
    return CohortTable(std::move(x), std::move(y), schema, spec.name);
}

// Intercept giving the requested prevalence on `spec`, by bisection on a
// fixed Monte Carlo sample.
inline double calibrate_intercept(const FeatureSpecSet& spec, OutcomeModel model,
                                  double target_prevalence, std::size_t samples = 200000,
                                  std::uint64_t seed = 12345) {
    model.intercept = 0.0;
    const OutcomeModel standardized = model.center.empty() ? model.standardized_against(spec) : model;
    const CohortTable sample = generate(spec, standardized, samples, seed);
    std::vector<double> eta(samples);
    for (std::size_t i = 0; i < samples; ++i) {
        eta[i] = linear_predictor(standardized, sample.features().row(i), standardized.center,
                                  standardized.scale);
    }
    double lo = -30.0, hi = 30.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        CompensatedSum s;
        for (double e : eta) {
            s.add(sigmoid(mid + e));
        }
        if (s.value() / static_cast<double>(samples) < target_prevalence) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

// Per-feature shifts keyed by column name.
struct ShiftSpec {
    std::map<std::string, double> mean_offsets;
    std::map<std::string, double> sd_scales;
    std::map<std::string, std::vector<double>> probability_overrides;  // binary: {prevalence}
    std::optional<double> correlation_angle;
};

inline FeatureSpecSet apply_shift(const FeatureSpecSet& spec, const ShiftSpec& shift,
                                  const FeatureSchema& schema = FeatureSchema::builtin()) {
    FeatureSpecSet out = spec;
    for (const auto& [name, offset] : shift.mean_offsets) {
        auto& f = out.features.at(schema.require_index(name));
        if (f.kind != FeatureKind::Continuous) {
            throw DataError("mean offset on non-continuous feature '" + name + "'");
        }
        f.mean += offset;
    }
    for (const auto& [name, factor] : shift.sd_scales) {
        auto& f = out.features.at(schema.require_index(name));
        if (f.kind != FeatureKind::Continuous) {
            throw DataError("SD scaling on non-continuous feature '" + name + "'");
        }
        f.sd *= factor;
        if (!(f.sd > 0.0)) {
            throw DataError("shifted SD of '" + name + "' is not positive");
        }
    }
    for (const auto& [name, probs] : shift.probability_overrides) {
        auto& f = out.features.at(schema.require_index(name));
        if (f.kind == FeatureKind::Binary) {
            if (probs.size() != 1) {
                throw DataError("binary override for '" + name + "' takes one prevalence");
            }
            f.prevalence = probs[0];
        } else if (f.kind == FeatureKind::Ordinal) {
            f.probabilities = probs;
        } else {
            throw DataError("probability override on continuous feature '" + name + "'");
        }
        f.validate(name);
    }
    if (shift.correlation_angle) {
        out.correlation_angle = *shift.correlation_angle;
    }
    return out;
}

// A labeled SOF-like source and an outcome-shifted sister cohort. The target
// site's lumbar-spine scanner reads `lumbar_offset` g/cm^2 higher and its
// lumbar BMD carries no outcome signal, while at the source it is strongly
// protective. A model leaning on lumbar BMD transfers badly; one whose
// embedding ignores the shifted column does not. Both intercepts give 4%
// prevalence.
struct ShiftScenario {
    FeatureSpecSet source_spec;
    OutcomeModel source_outcome;
    FeatureSpecSet target_spec;
    OutcomeModel target_outcome;
};

inline ShiftScenario scanner_shift_scenario(double lumbar_offset = 2.0, double source_lumbar_beta = -1.5,
                                            std::size_t calibration_samples = 50000) {
    const FeatureSchema& schema = FeatureSchema::builtin();
    const std::size_t lumbar = schema.require_index(col::kBmdLumbarSpine);
    ShiftScenario s;
    s.source_spec = builtin_spec(spec_names::kSof);
    s.source_outcome = OutcomeModel::clinical_default();
    s.source_outcome.beta[lumbar] = source_lumbar_beta;
    s.source_outcome.intercept = calibrate_intercept(s.source_spec, s.source_outcome, 0.04, calibration_samples);

    ShiftSpec shift;
    shift.mean_offsets[col::kBmdLumbarSpine] = lumbar_offset;
    s.target_spec = apply_shift(s.source_spec, shift, schema);
    s.target_spec.name = "sof-like-scanner-shift";
    s.target_outcome = s.source_outcome;
    s.target_outcome.beta[lumbar] = 0.0;
    s.target_outcome.intercept = calibrate_intercept(s.target_spec, s.target_outcome, 0.04, calibration_samples);
    return s;
}

// Spec file format, one `key = value` per line:
//   name = my-cohort
//   correlation_angle = 0.3
//   age = normal 71.5 5.3
//   walking_pace = categorical 0.253 0.508 0.239
//   prior_fracture_wrist = binary 0.108
//   intercept = -3.9
//   beta age = 0.8
// Features not listed keep the values of `base`.
struct SpecFile {
    FeatureSpecSet spec;
    OutcomeModel outcome;
};

inline SpecFile parse_spec_file(std::istream& in, const FeatureSpecSet& base,
                                const OutcomeModel& base_outcome,
                                const FeatureSchema& schema = FeatureSchema::builtin()) {
    SpecFile out{base, base_outcome};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string text = detail::trim(line);
        if (text.empty() || text.front() == '#') {
            continue;
        }
        const auto eq = text.find('=');
        if (eq == std::string::npos) {
            throw DataError("spec line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = detail::trim(std::string_view(text).substr(0, eq));
        std::istringstream value(detail::trim(std::string_view(text).substr(eq + 1)));
        value.imbue(std::locale::classic());
        auto bad = [&]() {
            return DataError("spec line " + std::to_string(line_no) + ": bad value for '" + key + "'");
        };
        if (key == "name") {
            value >> out.spec.name;
        } else if (key == "correlation_angle") {
            if (!(value >> out.spec.correlation_angle)) throw bad();
        } else if (key == "intercept") {
            if (!(value >> out.outcome.intercept)) throw bad();
        } else if (key.rfind("beta ", 0) == 0) {
            const auto j = schema.require_index(detail::trim(std::string_view(key).substr(5)));
            if (!(value >> out.outcome.beta.at(j))) throw bad();
        } else {
            const auto j = schema.require_index(key);
            std::string family;
            value >> family;
            if (family == "normal") {
                double m = 0, s = 0;
                if (!(value >> m >> s)) throw bad();
                out.spec.features.at(j) = FeatureSpec::normal(m, s);
            } else if (family == "binary") {
                double p = 0;
                if (!(value >> p)) throw bad();
                out.spec.features.at(j) = FeatureSpec::binary(p);
            } else if (family == "categorical") {
                std::vector<double> probs;
                double p = 0;
                while (value >> p) {
                    probs.push_back(p);
                }
                FeatureSpec f{FeatureKind::Ordinal, 0.0, 1.0, probs, 0.0};
                out.spec.features.at(j) = f;
            } else {
                throw bad();
            }
        }
    }
    out.spec.validate(schema);
    out.outcome.validate();
    return out;
}

inline SpecFile load_spec_file(const std::string& path, const FeatureSpecSet& base,
                               const OutcomeModel& base_outcome) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open spec file '" + path + "'");
    }
    return parse_spec_file(in, base, base_outcome);
}

} // namespace hfda
