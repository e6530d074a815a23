#pragma once

// Discrimination metrics, the paired t-test across seeds, and the ablation
// harness over the eight alignment combinations.
//
// The harness runs in two stages. All training and scoring happens first and
// touches only the evaluation cohort's features; the evaluation outcome is
// read once afterwards, when metrics are computed.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "hfda/cohort.hpp"
#include "hfda/error.hpp"
#include "hfda/losses.hpp"
#include "hfda/parallel.hpp"
#include "hfda/stats.hpp"
#include "hfda/trainer.hpp"

namespace hfda {

namespace detail {

inline void require_binary_labels(std::span<const double> scores, std::span<const int> labels,
                                  std::size_t& n_pos, std::size_t& n_neg) {
    if (scores.size() != labels.size()) {
        throw std::invalid_argument("scores and labels differ in length");
    }
    n_pos = 0;
    n_neg = 0;
    for (int y : labels) {
        if (y == 1) {
            ++n_pos;
        } else if (y == 0) {
            ++n_neg;
        } else {
            throw DataError("labels must be 0/1");
        }
    }
    if (n_pos == 0 || n_neg == 0) {
        throw DataError("metric undefined: labels contain a single class");
    }
}

} // namespace detail

// Mann-Whitney AUC: (concordant + ties / 2) / (n_pos n_neg). Pair counts are
// accumulated as integers over tie groups of the sorted scores.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
    std::size_t n_pos = 0, n_neg = 0;
    detail::require_binary_labels(scores, labels, n_pos, n_neg);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::uint64_t concordant = 0;
    std::uint64_t ties = 0;
    std::uint64_t neg_below = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::uint64_t pos_g = 0, neg_g = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] == 1 ? pos_g : neg_g) += 1;
            ++j;
        }
        concordant += pos_g * neg_below;
        ties += pos_g * neg_g;
        neg_below += neg_g;
        i = j;
    }
    return (static_cast<double>(concordant) + 0.5 * static_cast<double>(ties)) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct MetricSet {
    double auc = 0.0;
    double accuracy = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double precision = 0.0;
    double f1 = 0.0;
    double threshold = 0.5;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    bool precision_undefined = false;  // no positive predictions; precision and F1 reported as 0
};

inline constexpr double kDefaultThreshold = 0.5;

// Confusion-matrix metrics with prediction = (score >= threshold), plus AUC.
inline MetricSet confusion_metrics(std::span<const double> scores, std::span<const int> labels,
                                   double threshold = kDefaultThreshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw std::invalid_argument("threshold must lie in (0, 1)");
    }
    std::size_t n_pos = 0, n_neg = 0;
    detail::require_binary_labels(scores, labels, n_pos, n_neg);
    MetricSet m;
    m.threshold = threshold;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        if (labels[i] == 1) {
            (predicted ? m.tp : m.fn) += 1;
        } else {
            (predicted ? m.fp : m.tn) += 1;
        }
    }
    const double tp = static_cast<double>(m.tp);
    m.accuracy = (tp + static_cast<double>(m.tn)) / static_cast<double>(scores.size());
    m.sensitivity = tp / static_cast<double>(n_pos);
    m.specificity = static_cast<double>(m.tn) / static_cast<double>(n_neg);
    if (m.tp + m.fp == 0) {
        m.precision_undefined = true;
    } else {
        m.precision = tp / static_cast<double>(m.tp + m.fp);
    }
    m.f1 = (m.precision + m.sensitivity) > 0.0
               ? 2.0 * m.precision * m.sensitivity / (m.precision + m.sensitivity)
               : 0.0;
    m.auc = auc(scores, labels);
    return m;
}

struct TTestResult {
    double mean = 0.0;
    double sd = 0.0;
    double t = 0.0;
    double df = 0.0;
    double p = 0.0;
    bool degenerate = false;  // zero variance: t and p undefined
};

// One-sample t-test of paired differences against 0, two-sided.
inline TTestResult paired_t_test(std::span<const double> diffs) {
    if (diffs.size() < 2) {
        throw std::invalid_argument("paired t-test needs at least 2 differences");
    }
    TTestResult r;
    r.df = static_cast<double>(diffs.size() - 1);
    r.mean = mean(diffs);
    r.sd = sample_sd(diffs);
    if (!(r.sd > 0.0)) {
        r.degenerate = true;
        r.t = std::numeric_limits<double>::quiet_NaN();
        r.p = std::numeric_limits<double>::quiet_NaN();
        return r;
    }
    r.t = r.mean / (r.sd / std::sqrt(static_cast<double>(diffs.size())));
    r.p = t_two_sided_p(r.t, r.df);
    return r;
}

// Four decimals with a "<0.0001" floor; "NA" for a degenerate test.
inline std::string format_p_value(double p) {
    if (std::isnan(p)) {
        return "NA";
    }
    if (p < 1e-4) {
        return "<0.0001";
    }
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << std::fixed << std::setprecision(4) << p;
    return os.str();
}

// --- ablation ------------------------------------------------------------------------

inline std::string method_name(const AlignmentFlags& f) {
    if (!f.any()) {
        return "Baseline";
    }
    std::string s;
    auto add = [&](bool on, const char* name) {
        if (on) {
            if (!s.empty()) s += "+";
            s += name;
        }
    };
    add(f.mmd, "MMD");
    add(f.coral, "CORAL");
    add(f.dann, "DANN");
    return s;
}

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
};

inline MeanSd summarize(std::span<const double> v) {
    MeanSd m;
    m.mean = mean(v);
    m.sd = v.size() > 1 ? sample_sd(v) : 0.0;
    return m;
}

struct RunOutcome {
    AlignmentFlags flags;
    std::uint64_t seed = 0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
    double best_validation_loss = 0.0;
    MetricSet metrics;
};

struct AblationRow {
    AlignmentFlags flags;
    std::vector<std::uint64_t> seeds;
    std::vector<MetricSet> per_seed;
    MeanSd auc, accuracy, sensitivity, specificity, precision, f1;
    double delta_auc = 0.0;
    std::optional<TTestResult> test;  // empty for the baseline row

    std::vector<double> aucs() const {
        std::vector<double> v;
        for (const auto& m : per_seed) v.push_back(m.auc);
        return v;
    }
};

inline std::vector<AlignmentFlags> all_combinations() {
    const auto a = AlignmentFlags::all_combinations();
    return {a.begin(), a.end()};
}

struct AblationConfig {
    TrainConfig base;  // flags and weights are replaced per combination
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::vector<AlignmentFlags> combinations = all_combinations();
    double threshold = kDefaultThreshold;
    std::size_t jobs = 1;
    bool preset_weights = true;  // lambda_preset per combination; else base.weights
};

struct AblationResult {
    std::vector<AblationRow> rows;
    std::vector<RunOutcome> runs;  // combination-major, seed-minor
};

namespace detail {

inline void fill_row_summary(AblationRow& row) {
    std::vector<double> a, acc, se, sp, pr, f;
    for (const auto& m : row.per_seed) {
        a.push_back(m.auc);
        acc.push_back(m.accuracy);
        se.push_back(m.sensitivity);
        sp.push_back(m.specificity);
        pr.push_back(m.precision);
        f.push_back(m.f1);
    }
    row.auc = summarize(a);
    row.accuracy = summarize(acc);
    row.sensitivity = summarize(se);
    row.specificity = summarize(sp);
    row.precision = summarize(pr);
    row.f1 = summarize(f);
}

} // namespace detail

// Trains every (combination, seed) on (source, pseudo-target), scores the
// evaluation features, then computes metrics. Rows follow the order of
// `config.combinations`; the first combination without alignment is the
// baseline for the paired tests.
inline AblationResult run_ablation(const CohortTable& source, const UnlabeledCohort& target_pseudo,
                                   const CohortTable& target_eval, const AblationConfig& config) {
    if (config.seeds.empty()) {
        throw std::invalid_argument("ablation needs at least one seed");
    }
    if (config.combinations.empty()) {
        throw std::invalid_argument("ablation needs at least one combination");
    }
    if (!target_eval.has_outcome()) {
        throw DataError("evaluation cohort '" + target_eval.label() + "' has no outcome column");
    }
    const std::size_t n_seeds = config.seeds.size();
    const std::size_t n_runs = config.combinations.size() * n_seeds;
    const Matrix& eval_x = target_eval.features();

    // Stage 1: training and scoring. No outcome of the evaluation cohort is read.
    std::vector<std::vector<double>> scores(n_runs);
    std::vector<RunOutcome> runs(n_runs);
    parallel_for(n_runs, config.jobs, [&](std::size_t k) {
        const AlignmentFlags flags = config.combinations[k / n_seeds];
        TrainConfig c = config.base;
        c.flags = flags;
        if (config.preset_weights) {
            c.weights = lambda_preset(flags, c.profile);
        }
        c.seed = config.seeds[k % n_seeds];
        const TrainedModel model = train(source, target_pseudo, c);
        scores[k] = predict(model.params, eval_x);
        runs[k].flags = flags;
        runs[k].seed = c.seed;
        runs[k].best_epoch = model.best_epoch;
        runs[k].epochs_run = model.history.size();
        runs[k].best_validation_loss = model.best_validation_loss;
    });

    // Stage 2: evaluation.
    const std::vector<int>& y = target_eval.outcome();
    for (std::size_t k = 0; k < n_runs; ++k) {
        runs[k].metrics = confusion_metrics(scores[k], y, config.threshold);
    }

    AblationResult result;
    result.runs = runs;
    std::optional<std::size_t> baseline;
    for (std::size_t c = 0; c < config.combinations.size(); ++c) {
        AblationRow row;
        row.flags = config.combinations[c];
        row.seeds = config.seeds;
        for (std::size_t s = 0; s < n_seeds; ++s) {
            row.per_seed.push_back(runs[c * n_seeds + s].metrics);
        }
        detail::fill_row_summary(row);
        if (!baseline && !row.flags.any()) {
            baseline = c;
        }
        result.rows.push_back(std::move(row));
    }
    if (baseline) {
        const AblationRow& base = result.rows[*baseline];
        const std::vector<double> base_auc = base.aucs();
        for (std::size_t c = 0; c < result.rows.size(); ++c) {
            AblationRow& row = result.rows[c];
            row.delta_auc = row.auc.mean - base.auc.mean;
            if (c == *baseline || n_seeds < 2) continue;
            std::vector<double> diffs(n_seeds);
            const std::vector<double> a = row.aucs();
            for (std::size_t s = 0; s < n_seeds; ++s) diffs[s] = a[s] - base_auc[s];
            row.test = paired_t_test(diffs);
        }
    }
    return result;
}

// --- reports -----------------------------------------------------------------------

inline constexpr const char* kNoValue = "–";  // printed where the table has no entry

namespace detail {

inline std::string fixed(double v, int digits) {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

inline std::string mean_sd(const MeanSd& m) { return fixed(m.mean, 2) + " ± " + fixed(m.sd, 2); }

inline std::string shortest(double v) {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << std::setprecision(17) << v;
    return os.str();
}

} // namespace detail

inline void write_ablation_csv(std::ostream& out, const AblationResult& result) {
    if (result.rows.empty()) return;
    out << "method,flags";
    for (const char* m : {"auc", "accuracy", "sensitivity", "specificity", "precision", "f1"}) {
        out << "," << m << "_mean," << m << "_sd";
    }
    out << ",delta_auc,t,p";
    for (auto s : result.rows.front().seeds) out << ",auc_seed" << s;
    out << "\n";
    for (const auto& r : result.rows) {
        out << method_name(r.flags) << "," << '"' << r.flags.to_string() << '"';
        for (const MeanSd* m : {&r.auc, &r.accuracy, &r.sensitivity, &r.specificity, &r.precision, &r.f1}) {
            out << "," << detail::shortest(m->mean) << "," << detail::shortest(m->sd);
        }
        if (r.test) {
            out << "," << detail::shortest(r.delta_auc) << ","
                << (r.test->degenerate ? "NA" : detail::shortest(r.test->t)) << ","
                << format_p_value(r.test->p);
        } else {
            out << "," << kNoValue << "," << kNoValue << "," << kNoValue;
        }
        for (double a : r.aucs()) out << "," << detail::shortest(a);
        out << "\n";
    }
}

inline nlohmann::json to_json(const MetricSet& m) {
    return {{"auc", m.auc},
            {"accuracy", m.accuracy},
            {"sensitivity", m.sensitivity},
            {"specificity", m.specificity},
            {"precision", m.precision},
            {"f1", m.f1},
            {"threshold", m.threshold},
            {"tp", m.tp},
            {"fp", m.fp},
            {"tn", m.tn},
            {"fn", m.fn},
            {"precision_undefined", m.precision_undefined}};
}

inline nlohmann::json to_json(const AblationResult& result) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : result.rows) {
        nlohmann::json j;
        j["method"] = method_name(r.flags);
        j["flags"] = r.flags.to_string();
        j["seeds"] = r.seeds;
        auto ms = [](const MeanSd& m) { return nlohmann::json{{"mean", m.mean}, {"sd", m.sd}}; };
        j["auc"] = ms(r.auc);
        j["accuracy"] = ms(r.accuracy);
        j["sensitivity"] = ms(r.sensitivity);
        j["specificity"] = ms(r.specificity);
        j["precision"] = ms(r.precision);
        j["f1"] = ms(r.f1);
        j["per_seed"] = nlohmann::json::array();
        for (const auto& m : r.per_seed) j["per_seed"].push_back(to_json(m));
        if (r.test) {
            j["delta_auc"] = r.delta_auc;
            j["t"] = r.test->degenerate ? nlohmann::json(nullptr) : nlohmann::json(r.test->t);
            j["p"] = r.test->degenerate ? nlohmann::json(nullptr) : nlohmann::json(r.test->p);
            j["p_formatted"] = format_p_value(r.test->p);
            j["degenerate"] = r.test->degenerate;
        } else {
            j["delta_auc"] = nullptr;
            j["t"] = nullptr;
            j["p"] = nullptr;
        }
        rows.push_back(std::move(j));
    }
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : result.runs) {
        runs.push_back({{"flags", r.flags.to_string()},
                        {"seed", r.seed},
                        {"best_epoch", r.best_epoch},
                        {"epochs_run", r.epochs_run},
                        {"best_validation_loss", r.best_validation_loss},
                        {"metrics", to_json(r.metrics)}});
    }
    return {{"rows", rows}, {"runs", runs}};
}

// Plain-text table: one row per combination, mean +- SD per metric, then the
// AUC difference to the baseline and the paired-test p-value.
inline void render_ablation_table(std::ostream& out, const AblationResult& result) {
    const std::vector<std::string> header{"Method",      "AUC",       "Accuracy", "Sensitivity",
                                          "Specificity", "Precision", "F1-score", "ΔAUC",
                                          "p-value"};
    std::vector<std::vector<std::string>> cells{header};
    for (const auto& r : result.rows) {
        std::vector<std::string> line{method_name(r.flags),   detail::mean_sd(r.auc),
                                      detail::mean_sd(r.accuracy), detail::mean_sd(r.sensitivity),
                                      detail::mean_sd(r.specificity), detail::mean_sd(r.precision),
                                      detail::mean_sd(r.f1)};
        if (r.test) {
            line.push_back((r.delta_auc >= 0 ? "+" : "") + detail::fixed(r.delta_auc, 3));
            line.push_back(format_p_value(r.test->p));
        } else {
            line.push_back(kNoValue);
            line.push_back(kNoValue);
        }
        cells.push_back(std::move(line));
    }
    // Column widths in code points; the only multi-byte glyphs are 2- and 3-byte.
    auto width = [](const std::string& s) {
        std::size_t w = 0;
        for (unsigned char c : s) w += (c & 0xC0) != 0x80;
        return w;
    };
    std::vector<std::size_t> widths(header.size(), 0);
    for (const auto& line : cells) {
        for (std::size_t i = 0; i < line.size(); ++i) widths[i] = std::max(widths[i], width(line[i]));
    }
    for (std::size_t r = 0; r < cells.size(); ++r) {
        for (std::size_t i = 0; i < cells[r].size(); ++i) {
            out << (i ? "  " : "") << cells[r][i];
            if (i + 1 < cells[r].size()) out << std::string(widths[i] - width(cells[r][i]), ' ');
        }
        out << "\n";
        if (r == 0) {
            std::size_t total = 0;
            for (auto w : widths) total += w;
            out << std::string(total + 2 * (widths.size() - 1), '-') << "\n";
        }
    }
}

} // namespace hfda
