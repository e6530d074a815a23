#pragma once

// Cohort tables and the data protocol: delimited-text ingest, categorical
// recoding, T-score standardization, complete-case filtering, the 50/50
// stratified target split and weighted mini-batch sampling.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "hfda/audit.hpp"
#include "hfda/error.hpp"
#include "hfda/matrix.hpp"
#include "hfda/rng.hpp"
#include "hfda/schema.hpp"
#include "hfda/stats.hpp"

namespace hfda {

inline constexpr int kMissingOutcome = -1;
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

// Immutable harmonized table: n x 12 features (NaN = missing), an optional
// 0/1 outcome vector (kMissingOutcome = missing), schema and a free-text label.
class CohortTable {
public:
    CohortTable() = default;

    CohortTable(Matrix features, std::optional<std::vector<int>> outcome,
                std::shared_ptr<const FeatureSchema> schema, std::string label)
        : features_(std::move(features)), outcome_(std::move(outcome)),
          schema_(std::move(schema)), label_(std::move(label)) {
        if (!schema_) {
            throw std::invalid_argument("CohortTable: null schema");
        }
        if (features_.cols() != schema_->size() && features_.rows() > 0) {
            throw SchemaError("feature matrix has " + std::to_string(features_.cols()) +
                                  " columns, schema has " + std::to_string(schema_->size()),
                              "");
        }
        if (features_.rows() == 0 && features_.cols() == 0) {
            features_ = Matrix(0, schema_->size());
        }
        if (outcome_) {
            if (outcome_->size() != features_.rows()) {
                throw DataError("outcome length does not match row count");
            }
            for (int v : *outcome_) {
                if (v != 0 && v != 1 && v != kMissingOutcome) {
                    throw DataError("outcome entries must be 0 or 1");
                }
            }
        }
    }

    CohortTable(Matrix features, std::optional<std::vector<int>> outcome, const FeatureSchema& schema,
                std::string label)
        : CohortTable(std::move(features), std::move(outcome),
                      std::make_shared<const FeatureSchema>(schema), std::move(label)) {}

    std::size_t rows() const noexcept { return features_.rows(); }
    const Matrix& features() const noexcept { return features_; }
    const FeatureSchema& schema() const noexcept { return *schema_; }
    const std::shared_ptr<const FeatureSchema>& schema_ptr() const noexcept { return schema_; }
    const std::string& label() const noexcept { return label_; }
    bool has_outcome() const noexcept { return outcome_.has_value(); }

    // Every read is reported to the audit trail.
    const std::vector<int>& outcome() const {
        if (!outcome_) {
            throw DataError("cohort '" + label_ + "' carries no outcome");
        }
        audit::record("outcome:" + label_);
        return *outcome_;
    }

    std::size_t count_positive() const {
        const auto& y = outcome();
        return static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
    }

    CohortTable without_outcome(std::string label = {}) const {
        return CohortTable(features_, std::nullopt, schema_, label.empty() ? label_ : std::move(label));
    }

    CohortTable with_features(Matrix features) const {
        return CohortTable(std::move(features), outcome_, schema_, label_);
    }

    CohortTable relabeled(std::string label) const {
        return CohortTable(features_, outcome_, schema_, std::move(label));
    }

    CohortTable subset(std::span<const std::size_t> rows, std::string label = {}) const {
        std::optional<std::vector<int>> y;
        if (outcome_) {
            y.emplace();
            y->reserve(rows.size());
            for (auto r : rows) {
                y->push_back(outcome_->at(r));
            }
        }
        return CohortTable(select_rows(features_, rows), std::move(y), schema_,
                           label.empty() ? label_ : std::move(label));
    }

private:
    Matrix features_;
    std::optional<std::vector<int>> outcome_;
    std::shared_ptr<const FeatureSchema> schema_;
    std::string label_;
};

// Raw delimited text: a header and string cells.
struct TextTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::optional<std::size_t> column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) {
                return i;
            }
        }
        return std::nullopt;
    }
};

namespace detail {

inline std::vector<std::string> split_record(std::string_view line, char delimiter) {
    std::vector<std::string> out;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cell.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cell.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == delimiter) {
            out.push_back(trim(cell));
            cell.clear();
        } else if (ch != '\r') {
            cell.push_back(ch);
        }
    }
    out.push_back(trim(cell));
    return out;
}

inline bool is_missing_token(std::string_view cell) noexcept {
    return cell.empty() || cell == "NA";
}

// Locale-independent decimal parse of the whole cell.
inline std::optional<double> parse_number(std::string_view cell) noexcept {
    if (!cell.empty() && cell.front() == '+') {
        cell.remove_prefix(1);
    }
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
    if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value)) {
        return std::nullopt;
    }
    return value;
}

inline std::string format_number(double v) {
    if (std::isnan(v)) {
        return "NA";
    }
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

} // namespace detail

inline TextTable read_delimited(std::istream& in, char delimiter = ',') {
    TextTable t;
    std::string line;
    if (!std::getline(in, line)) {
        throw DataError("empty input: no header row");
    }
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
        line.erase(0, 3);
    }
    t.header = detail::split_record(line, delimiter);
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) {
            continue;
        }
        ++row;
        auto cells = detail::split_record(line, delimiter);
        if (cells.size() != t.header.size()) {
            throw DataError("row " + std::to_string(row) + ": expected " +
                            std::to_string(t.header.size()) + " cells, found " +
                            std::to_string(cells.size()));
        }
        t.rows.push_back(std::move(cells));
    }
    return t;
}

inline TextTable read_delimited(const std::string& path, char delimiter = ',') {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open '" + path + "'");
    }
    return read_delimited(in, delimiter);
}

// Adds (or replaces) `target` as the mean of two numeric columns; missing if
// either input is missing. Used for grip strength from left/right hands.
inline TextTable average_columns(TextTable table, std::string_view left, std::string_view right,
                                 const std::string& target) {
    const auto li = table.column(left);
    const auto ri = table.column(right);
    if (!li) throw SchemaError("missing column '" + std::string(left) + "'", std::string(left));
    if (!ri) throw SchemaError("missing column '" + std::string(right) + "'", std::string(right));
    auto ti = table.column(target);
    if (!ti) {
        table.header.push_back(target);
        for (auto& r : table.rows) {
            r.emplace_back();
        }
        ti = table.header.size() - 1;
    }
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        auto& cells = table.rows[r];
        const auto a = detail::parse_number(cells[*li]);
        const auto b = detail::parse_number(cells[*ri]);
        if (!a && !detail::is_missing_token(cells[*li])) throw ParseError(r + 1, std::string(left), cells[*li]);
        if (!b && !detail::is_missing_token(cells[*ri])) throw ParseError(r + 1, std::string(right), cells[*ri]);
        cells[*ti] = (a && b) ? detail::format_number(0.5 * (*a + *b)) : std::string("NA");
    }
    return table;
}

struct RecodeResult {
    CohortTable table;
    std::size_t dropped_rows = 0;
};

enum class OutcomePolicy {
    IfPresent,  // attach the outcome column when the file has one
    Ignore,     // never attach it, even if present
};

// Maps text categories to integer codes, drops rows with ambiguous responses,
// and parses all cells into a CohortTable. Already-coded cells pass through.
inline RecodeResult recode_categoricals(const TextTable& raw, const FeatureSchema& schema,
                                        std::string label = "cohort",
                                        OutcomePolicy policy = OutcomePolicy::IfPresent) {
    std::vector<std::size_t> source_col(schema.size());
    for (std::size_t j = 0; j < schema.size(); ++j) {
        const auto& name = schema.feature(j).name;
        const auto c = raw.column(name);
        if (!c) {
            throw SchemaError("missing column '" + name + "'", name);
        }
        source_col[j] = *c;
    }
    std::optional<std::size_t> outcome_col;
    if (policy == OutcomePolicy::IfPresent) {
        outcome_col = raw.column(schema.outcome());
    }

    std::vector<double> values;
    values.reserve(raw.rows.size() * schema.size());
    std::vector<int> outcome;
    std::size_t dropped = 0;
    std::vector<double> row_values(schema.size());

    for (std::size_t r = 0; r < raw.rows.size(); ++r) {
        const auto& cells = raw.rows[r];
        bool drop = false;
        for (std::size_t j = 0; j < schema.size() && !drop; ++j) {
            const auto& f = schema.feature(j);
            const std::string& cell = cells[source_col[j]];
            if (detail::is_missing_token(cell)) {
                row_values[j] = kMissing;
                continue;
            }
            if (!f.is_categorical()) {
                const auto v = detail::parse_number(cell);
                if (!v) {
                    throw ParseError(r + 1, f.name, cell);
                }
                row_values[j] = *v;
                continue;
            }
            if (std::find(f.drop_labels.begin(), f.drop_labels.end(), cell) != f.drop_labels.end()) {
                drop = true;
                break;
            }
            const auto code = std::find_if(f.codes.begin(), f.codes.end(),
                                           [&](const CategoryCode& c) { return c.label == cell; });
            if (code != f.codes.end()) {
                row_values[j] = code->code;
                continue;
            }
            const auto v = detail::parse_number(cell);
            if (!v || *v != std::floor(*v) || *v < f.min || *v > f.max) {
                throw CategoryError(cell, f.name);
            }
            row_values[j] = *v;
        }
        if (drop) {
            ++dropped;
            continue;
        }
        values.insert(values.end(), row_values.begin(), row_values.end());
        if (outcome_col) {
            const std::string& cell = cells[*outcome_col];
            if (detail::is_missing_token(cell)) {
                outcome.push_back(kMissingOutcome);
            } else {
                const auto v = detail::parse_number(cell);
                if (!v || (*v != 0.0 && *v != 1.0)) {
                    throw ParseError(r + 1, schema.outcome(), cell);
                }
                outcome.push_back(static_cast<int>(*v));
            }
        }
    }
    const std::size_t n = values.size() / schema.size();
    std::optional<std::vector<int>> y;
    if (outcome_col) {
        y = std::move(outcome);
    }
    return {CohortTable(Matrix(n, schema.size(), std::move(values)), std::move(y), schema,
                        std::move(label)),
            dropped};
}

struct LoadOptions {
    char delimiter = ',';
    std::string label = "cohort";
    OutcomePolicy outcome = OutcomePolicy::IfPresent;
};

inline RecodeResult load_cohort_with_report(const std::string& path, const FeatureSchema& schema,
                                            const LoadOptions& options = {}) {
    return recode_categoricals(read_delimited(path, options.delimiter), schema, options.label,
                               options.outcome);
}

inline CohortTable load_cohort(const std::string& path, const FeatureSchema& schema,
                               const LoadOptions& options = {}) {
    return load_cohort_with_report(path, schema, options).table;
}

inline void write_cohort(std::ostream& out, const CohortTable& table, char delimiter = ',') {
    const auto& schema = table.schema();
    for (std::size_t j = 0; j < schema.size(); ++j) {
        if (j) out << delimiter;
        out << schema.feature(j).name;
    }
    const bool with_y = table.has_outcome();
    const std::vector<int>* y = with_y ? &table.outcome() : nullptr;
    if (with_y) {
        out << delimiter << schema.outcome();
    }
    out << '\n';
    for (std::size_t i = 0; i < table.rows(); ++i) {
        const auto row = table.features().row(i);
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (j) out << delimiter;
            out << detail::format_number(row[j]);
        }
        if (with_y) {
            out << delimiter;
            const int v = (*y)[i];
            if (v == kMissingOutcome) {
                out << "NA";
            } else {
                out << v;
            }
        }
        out << '\n';
    }
}

struct FilterResult {
    CohortTable table;
    std::size_t removed = 0;
};

// Drops rows with any missing predictor, and rows with a missing outcome when
// the table carries outcomes and `require_outcome` is set.
inline FilterResult complete_case_filter(const CohortTable& cohort, bool require_outcome = true) {
    const Matrix& x = cohort.features();
    const std::vector<int>* y =
        (require_outcome && cohort.has_outcome()) ? &cohort.outcome() : nullptr;
    std::vector<std::size_t> keep;
    keep.reserve(cohort.rows());
    for (std::size_t i = 0; i < cohort.rows(); ++i) {
        const auto row = x.row(i);
        bool ok = std::none_of(row.begin(), row.end(), [](double v) { return std::isnan(v); });
        if (ok && y && (*y)[i] == kMissingOutcome) {
            ok = false;
        }
        if (ok) {
            keep.push_back(i);
        }
    }
    return {cohort.subset(keep), cohort.rows() - keep.size()};
}

struct AgeStratum {
    double lo = 0.0;
    double hi = 0.0;
};

inline std::vector<AgeStratum> default_age_strata() { return {{65.0, 75.0}, {76.0, 96.0}}; }

// Index of the stratum containing `age`, or of the nearest one by distance to
// its boundary when the age falls outside every stratum (ties: first).
inline std::size_t assign_stratum(double age, std::span<const AgeStratum> strata) {
    std::size_t best = 0;
    double best_distance = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < strata.size(); ++s) {
        const double d = age < strata[s].lo ? strata[s].lo - age
                         : age > strata[s].hi ? age - strata[s].hi
                                              : 0.0;
        if (d < best_distance) {
            best_distance = d;
            best = s;
        }
    }
    return best;
}

// Replaces every `standardize` column by (value - mu_ref) / sd_ref, with the
// reference being the fracture-free rows of the row's age stratum.
inline CohortTable standardize_bmd(const CohortTable& cohort,
                                   std::span<const AgeStratum> strata = default_age_strata()) {
    if (strata.empty()) {
        throw std::invalid_argument("standardize_bmd: no strata");
    }
    const auto& schema = cohort.schema();
    const std::size_t age_col = schema.require_index(col::kAge);
    const auto& y = cohort.outcome();
    const Matrix& x = cohort.features();

    std::vector<std::size_t> stratum_of(cohort.rows(), strata.size());
    std::vector<std::size_t> rows_in(strata.size(), 0);
    for (std::size_t i = 0; i < cohort.rows(); ++i) {
        const double age = x(i, age_col);
        if (std::isnan(age)) {
            continue;
        }
        stratum_of[i] = assign_stratum(age, strata);
        ++rows_in[stratum_of[i]];
    }

    Matrix out = x;
    for (std::size_t j = 0; j < schema.size(); ++j) {
        if (!schema.feature(j).standardize) {
            continue;
        }
        for (std::size_t s = 0; s < strata.size(); ++s) {
            if (rows_in[s] == 0) {
                continue;
            }
            std::vector<double> ref;
            for (std::size_t i = 0; i < cohort.rows(); ++i) {
                if (stratum_of[i] == s && y[i] == 0 && !std::isnan(x(i, j))) {
                    ref.push_back(x(i, j));
                }
            }
            if (ref.size() < 2) {
                throw DataError("stratum [" + detail::format_number(strata[s].lo) + ", " +
                                detail::format_number(strata[s].hi) + "] has fewer than 2 fracture-free rows for '" +
                                schema.feature(j).name + "'");
            }
            const double mu = mean(ref);
            const double sd = sample_sd(ref);
            if (!(sd > 0.0)) {
                throw NumericalError("zero reference SD for '" + schema.feature(j).name + "'");
            }
            for (std::size_t i = 0; i < cohort.rows(); ++i) {
                if (stratum_of[i] == s) {
                    out(i, j) = (x(i, j) - mu) / sd;
                }
            }
        }
        for (std::size_t i = 0; i < cohort.rows(); ++i) {
            if (stratum_of[i] == strata.size()) {
                out(i, j) = kMissing;
            }
        }
    }
    return cohort.with_features(std::move(out));
}

struct SplitResult {
    CohortTable pseudo_train;
    CohortTable evaluation;
    std::vector<std::size_t> pseudo_indices;  // ascending
    std::vector<std::size_t> eval_indices;    // ascending
};

// 50/50 split stratified on the outcome. Each class is divided floor/ceil
// with the odd member of the positives going to evaluation; when both class
// counts are odd the odd negative goes to pseudo-training so that partition
// sizes differ by at most one. With k >= 2 positives each side gets >= 1.
inline SplitResult stratified_half_split(const CohortTable& cohort, std::uint64_t seed) {
    if (cohort.rows() < 2) {
        throw DataError("stratified_half_split needs at least 2 rows");
    }
    const auto& y = cohort.outcome();
    std::vector<std::size_t> pos;
    std::vector<std::size_t> neg;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] == kMissingOutcome) {
            throw DataError("stratified_half_split: row " + std::to_string(i + 1) +
                            " has a missing outcome");
        }
        (y[i] == 1 ? pos : neg).push_back(i);
    }
    SeededRng rng(seed, Stream::HalfSplit);
    rng.shuffle(std::span<std::size_t>(pos));
    rng.shuffle(std::span<std::size_t>(neg));

    const std::size_t pseudo_pos = pos.size() / 2;
    const bool both_odd = (pos.size() % 2 == 1) && (neg.size() % 2 == 1);
    const std::size_t pseudo_neg = both_odd ? neg.size() / 2 + 1 : neg.size() / 2;

    SplitResult r;
    r.pseudo_indices.assign(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(pseudo_pos));
    r.pseudo_indices.insert(r.pseudo_indices.end(), neg.begin(),
                            neg.begin() + static_cast<std::ptrdiff_t>(pseudo_neg));
    r.eval_indices.assign(pos.begin() + static_cast<std::ptrdiff_t>(pseudo_pos), pos.end());
    r.eval_indices.insert(r.eval_indices.end(),
                          neg.begin() + static_cast<std::ptrdiff_t>(pseudo_neg), neg.end());
    std::sort(r.pseudo_indices.begin(), r.pseudo_indices.end());
    std::sort(r.eval_indices.begin(), r.eval_indices.end());
    r.pseudo_train = cohort.subset(r.pseudo_indices, cohort.label() + "-pseudo");
    r.evaluation = cohort.subset(r.eval_indices, cohort.label() + "-eval");
    return r;
}

// Mini-batches drawn with replacement, each row weighted by the inverse
// frequency of its class. A batch without positives has one uniformly chosen
// slot replaced by a uniformly chosen positive row.
class WeightedBatchSampler {
public:
    WeightedBatchSampler(std::span<const int> labels, std::size_t batch_size, std::uint64_t seed)
        : batch_size_(batch_size), rng_(seed, Stream::SourceBatches) {
        if (batch_size_ == 0) {
            throw std::invalid_argument("batch size must be positive");
        }
        std::size_t n_pos = 0;
        std::size_t n_neg = 0;
        for (int v : labels) {
            if (v == 1) {
                ++n_pos;
            } else if (v == 0) {
                ++n_neg;
            } else {
                throw DataError("weighted sampling needs complete 0/1 outcomes");
            }
        }
        if (n_pos == 0 || n_neg == 0) {
            throw DataError("weighted sampling needs both classes present");
        }
        weights_.resize(labels.size());
        cumulative_.resize(labels.size());
        const double w_pos = 1.0 / static_cast<double>(n_pos);
        const double w_neg = 1.0 / static_cast<double>(n_neg);
        double acc = 0.0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            weights_[i] = labels[i] == 1 ? w_pos : w_neg;
            acc += weights_[i];
            cumulative_[i] = acc;
            if (labels[i] == 1) {
                positives_.push_back(i);
            }
        }
        is_positive_.assign(labels.begin(), labels.end());
    }

    std::size_t batch_size() const noexcept { return batch_size_; }
    std::size_t batches_per_epoch() const noexcept {
        return (weights_.size() + batch_size_ - 1) / batch_size_;
    }
    const std::vector<double>& weights() const noexcept { return weights_; }
    std::size_t fallback_count() const noexcept { return fallbacks_; }

    std::vector<std::size_t> next_batch() {
        std::vector<std::size_t> batch(batch_size_);
        bool any_positive = false;
        const double total = cumulative_.back();
        for (auto& slot : batch) {
            const double u = rng_.uniform() * total;
            auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
            if (it == cumulative_.end()) {
                --it;
            }
            slot = static_cast<std::size_t>(it - cumulative_.begin());
            any_positive = any_positive || is_positive_[slot] == 1;
        }
        if (!any_positive) {
            const auto slot = rng_.uniform_index(batch_size_);
            batch[slot] = positives_[rng_.uniform_index(positives_.size())];
            ++fallbacks_;
        }
        return batch;
    }

    std::vector<std::vector<std::size_t>> epoch() {
        std::vector<std::vector<std::size_t>> out;
        out.reserve(batches_per_epoch());
        for (std::size_t b = 0; b < batches_per_epoch(); ++b) {
            out.push_back(next_batch());
        }
        return out;
    }

private:
    std::size_t batch_size_;
    SeededRng rng_;
    std::vector<double> weights_;
    std::vector<double> cumulative_;
    std::vector<std::size_t> positives_;
    std::vector<int> is_positive_;
    std::size_t fallbacks_ = 0;
};

} // namespace hfda
