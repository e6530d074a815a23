#pragma once

// Outcome-free hyperparameter selection: train every grid configuration and
// keep the one whose full-cohort source and target embeddings have the
// smallest multi-scale MMD^2.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "hfda/cohort.hpp"
#include "hfda/error.hpp"
#include "hfda/losses.hpp"
#include "hfda/parallel.hpp"
#include "hfda/trainer.hpp"

namespace hfda {

struct GridSpec {
    std::vector<double> learning_rates{5e-4, 1e-3, 2e-3};
    std::vector<double> weight_decays{1e-5, 1e-4, 5e-4};
    std::vector<std::size_t> batch_sizes{64, 128, 256};
    std::vector<std::size_t> embeddings{128, 256, 512};
    // Innermost axis; a single entry (the default) keeps the usual grid.
    std::vector<AlignmentFlags> flag_sets{AlignmentFlags{true, true, true}};
    SexProfile profile = SexProfile::Female;

    std::size_t size() const {
        const std::size_t batches = profile == SexProfile::Male ? 1 : batch_sizes.size();
        return learning_rates.size() * weight_decays.size() * batches * embeddings.size() *
               flag_sets.size();
    }
};

// Cartesian product, lr-major, then weight decay, batch size, embedding size
// and flag set. The male profile collapses the batch axis to {128}. Every
// other field comes from `base`; weights follow lambda_preset.
inline std::vector<TrainConfig> enumerate_grid(const GridSpec& grid, const TrainConfig& base) {
    if (grid.learning_rates.empty() || grid.weight_decays.empty() || grid.batch_sizes.empty() ||
        grid.embeddings.empty() || grid.flag_sets.empty()) {
        throw std::invalid_argument("grid axes must be non-empty");
    }
    const std::vector<std::size_t> batches =
        grid.profile == SexProfile::Male ? std::vector<std::size_t>{kMaleBatchSize} : grid.batch_sizes;
    std::vector<TrainConfig> out;
    for (double lr : grid.learning_rates) {
        for (double wd : grid.weight_decays) {
            for (std::size_t bs : batches) {
                for (std::size_t p : grid.embeddings) {
                    for (const AlignmentFlags& f : grid.flag_sets) {
                        TrainConfig c = base;
                        c.profile = grid.profile;
                        c.learning_rate = lr;
                        c.weight_decay = wd;
                        c.batch_size = bs;
                        c.embedding = p;
                        c.flags = f;
                        c.weights = lambda_preset(f, grid.profile);
                        c.weights.q = base.weights.q;
                        out.push_back(c);
                    }
                }
            }
        }
    }
    return out;
}

// Sum of per-column population variances of the pooled embeddings.
inline double total_variance(const Matrix& hs, const Matrix& ht) {
    const std::size_t n = hs.rows() + ht.rows();
    double total = 0.0;
    for (std::size_t j = 0; j < hs.cols(); ++j) {
        CompensatedSum s;
        for (std::size_t i = 0; i < hs.rows(); ++i) s.add(hs(i, j));
        for (std::size_t i = 0; i < ht.rows(); ++i) s.add(ht(i, j));
        const double mu = s.value() / static_cast<double>(n);
        CompensatedSum v;
        for (std::size_t i = 0; i < hs.rows(); ++i) v.add((hs(i, j) - mu) * (hs(i, j) - mu));
        for (std::size_t i = 0; i < ht.rows(); ++i) v.add((ht(i, j) - mu) * (ht(i, j) - mu));
        total += v.value() / static_cast<double>(n);
    }
    return total;
}

struct DeltaResult {
    double delta = 0.0;
    double total_variance = 0.0;
};

// MMD^2 between eval-mode embeddings of every source row and every target row.
inline DeltaResult delta_with_variance(const ModelParams& params, const Matrix& source_x,
                                       const UnlabeledCohort& target) {
    const Matrix hs = embed(params, source_x);
    const Matrix ht = embed(params, target.features());
    return {mmd2_multiscale(hs, ht), total_variance(hs, ht)};
}

inline double delta_criterion(const ModelParams& params, const Matrix& source_x,
                              const UnlabeledCohort& target) {
    return delta_with_variance(params, source_x, target).delta;
}

// Rejects an outcome-bearing target.
inline double delta_criterion(const ModelParams& params, const Matrix& source_x,
                              const CohortTable& target) {
    return delta_criterion(params, source_x, UnlabeledCohort(target));
}

inline constexpr double kCollapseVariance = 1e-8;

struct SelectionRecord {
    std::size_t index = 0;
    TrainConfig config;
    double delta = std::numeric_limits<double>::quiet_NaN();
    double validation_loss = std::numeric_limits<double>::quiet_NaN();
    double total_variance = std::numeric_limits<double>::quiet_NaN();
    std::size_t best_epoch = 0;
    bool disqualified = false;  // collapsed embeddings
    std::string error;          // training failure; empty on success
    double runtime_seconds = 0.0;

    bool eligible() const noexcept { return error.empty() && !disqualified; }
};

struct SelectionReport {
    std::vector<SelectionRecord> records;
    std::size_t winner = 0;
    std::string tie_break;
    std::optional<TrainedModel> winning_model;
};

// Trains each configuration with the same seed and returns the argmin of
// Delta. Ties go to the lower validation loss, then to the earlier grid entry.
inline SelectionReport select(const CohortTable& source, const UnlabeledCohort& target,
                              const std::vector<TrainConfig>& configs, std::uint64_t seed,
                              std::size_t jobs = 1, bool keep_winner = false) {
    if (configs.empty()) {
        throw std::invalid_argument("selection grid is empty");
    }
    SelectionReport report;
    report.records.resize(configs.size());
    std::vector<std::optional<TrainedModel>> models(keep_winner ? configs.size() : 0);
    parallel_for(configs.size(), jobs, [&](std::size_t i) {
        SelectionRecord& r = report.records[i];
        r.index = i;
        r.config = configs[i];
        r.config.seed = seed;
        const auto start = std::chrono::steady_clock::now();
        try {
            TrainedModel m = train(source, target, r.config);
            const DeltaResult d = delta_with_variance(m.params, source.features(), target);
            r.delta = d.delta;
            r.total_variance = d.total_variance;
            r.validation_loss = m.best_validation_loss;
            r.best_epoch = m.best_epoch;
            r.disqualified = d.total_variance < kCollapseVariance;
            if (keep_winner) models[i] = std::move(m);
        } catch (const LeakageError&) {
            throw;
        } catch (const std::exception& e) {
            r.error = e.what();
        }
        r.runtime_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    });

    std::vector<std::size_t> eligible;
    for (const auto& r : report.records) {
        if (r.eligible()) eligible.push_back(r.index);
    }
    if (eligible.empty()) {
        std::string msg = "every grid configuration failed or collapsed:";
        for (const auto& r : report.records) {
            msg += "\n  [" + std::to_string(r.index) + "] " +
                   (r.error.empty() ? "collapsed embeddings" : r.error);
        }
        throw NumericalError(msg);
    }
    auto better = [&](std::size_t a, std::size_t b) {
        const auto& ra = report.records[a];
        const auto& rb = report.records[b];
        if (ra.delta != rb.delta) return ra.delta < rb.delta;
        if (ra.validation_loss != rb.validation_loss) return ra.validation_loss < rb.validation_loss;
        return a < b;
    };
    const std::size_t w = *std::min_element(eligible.begin(), eligible.end(), better);
    report.winner = w;
    std::size_t same_delta = 0;
    bool same_val = false;
    for (std::size_t i : eligible) {
        if (i != w && report.records[i].delta == report.records[w].delta) {
            ++same_delta;
            same_val = same_val || report.records[i].validation_loss == report.records[w].validation_loss;
        }
    }
    if (same_delta == 0) {
        report.tie_break = "unique minimum";
    } else if (!same_val) {
        report.tie_break = "tie on delta broken by validation loss";
    } else {
        report.tie_break = "tie on delta and validation loss broken by grid order";
    }
    if (keep_winner) report.winning_model = std::move(models[w]);
    return report;
}

inline SelectionReport select(const CohortTable& source, const CohortTable& target,
                              const std::vector<TrainConfig>& configs, std::uint64_t seed,
                              std::size_t jobs = 1, bool keep_winner = false) {
    return select(source, UnlabeledCohort(target), configs, seed, jobs, keep_winner);
}

// --- reports --------------------------------------------------------------------

// Runtimes vary between runs, so they are left out unless requested.
inline void write_selection_csv(std::ostream& out, const SelectionReport& report,
                                bool include_runtime = false) {
    out << "index,learning_rate,weight_decay,batch_size,embedding,flags,delta,validation_loss,"
           "total_variance,best_epoch,status,winner";
    if (include_runtime) out << ",runtime_seconds";
    out << "\n";
    auto num = [](double v) {
        std::ostringstream os;
        os.imbue(std::locale::classic());
        os << std::setprecision(17) << v;
        return os.str();
    };
    for (const auto& r : report.records) {
        const std::string status =
            !r.error.empty() ? "failed" : r.disqualified ? "collapsed" : "ok";
        out << r.index << "," << num(r.config.learning_rate) << "," << num(r.config.weight_decay)
            << "," << r.config.effective_batch_size() << "," << r.config.embedding << ",\""
            << r.config.flags.to_string() << "\"," << num(r.delta) << "," << num(r.validation_loss)
            << "," << num(r.total_variance) << "," << r.best_epoch << "," << status << ","
            << (r.index == report.winner ? 1 : 0);
        if (include_runtime) out << "," << num(r.runtime_seconds);
        out << "\n";
    }
}

inline nlohmann::json to_json(const SelectionReport& report, bool include_runtime = false) {
    nlohmann::json recs = nlohmann::json::array();
    auto finite_or_null = [](double v) {
        return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
    };
    for (const auto& r : report.records) {
        nlohmann::json j;
        j["index"] = r.index;
        j["config"] = to_json(r.config);
        j["delta"] = finite_or_null(r.delta);
        j["validation_loss"] = finite_or_null(r.validation_loss);
        j["total_variance"] = finite_or_null(r.total_variance);
        j["best_epoch"] = r.best_epoch;
        j["disqualified"] = r.disqualified;
        j["error"] = r.error.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.error);
        if (include_runtime) j["runtime_seconds"] = r.runtime_seconds;
        recs.push_back(std::move(j));
    }
    return {{"records", recs},
            {"winner", report.winner},
            {"winning_config", to_json(report.records.at(report.winner).config)},
            {"tie_break", report.tie_break}};
}

} // namespace hfda
