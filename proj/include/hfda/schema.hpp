#pragma once

// Feature schema for the harmonized 12-predictor set and its plain-text
// config format:
//
//   # comment
//   outcome = hip_fracture
//   [smoking_status]
//   kind = ordinal
//   units = category
//   range = 0 2
//   code Never = 0
//   code Former = 1
//   code Current = 2
//   drop = Prefer not to answer
//
// `standardize = true` marks the BMD columns that receive the per-stratum
// T-score standardization. Column order is the order of the [blocks].

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hfda/error.hpp"

namespace hfda {

enum class FeatureKind { Continuous, Ordinal, Binary };

inline std::string_view to_string(FeatureKind kind) noexcept {
    switch (kind) {
    case FeatureKind::Continuous:
        return "continuous";
    case FeatureKind::Ordinal:
        return "ordinal";
    case FeatureKind::Binary:
        return "binary";
    }
    return "?";
}

inline FeatureKind parse_feature_kind(std::string_view text) {
    if (text == "continuous") return FeatureKind::Continuous;
    if (text == "ordinal") return FeatureKind::Ordinal;
    if (text == "binary") return FeatureKind::Binary;
    throw SchemaError("unknown feature kind '" + std::string(text) + "'", "");
}

struct CategoryCode {
    std::string label;
    int code = 0;

    friend bool operator==(const CategoryCode&, const CategoryCode&) = default;
};

struct FeatureDescriptor {
    std::string name;
    FeatureKind kind = FeatureKind::Continuous;
    std::string units;
    double min = 0.0;
    double max = 0.0;
    std::vector<CategoryCode> codes;       // text label -> integer code
    std::vector<std::string> drop_labels;  // ambiguous responses; row is dropped
    bool standardize = false;              // per-stratum T-score standardization

    bool is_categorical() const noexcept { return kind != FeatureKind::Continuous; }

    friend bool operator==(const FeatureDescriptor&, const FeatureDescriptor&) = default;
};

inline constexpr std::size_t kNumFeatures = 12;

// Canonical column names of the harmonized predictor set.
namespace col {
inline constexpr const char* kAge = "age";
inline constexpr const char* kHeight = "height";
inline constexpr const char* kWeight = "weight";
inline constexpr const char* kGripStrength = "grip_strength";
inline constexpr const char* kWalkingPace = "walking_pace";
inline constexpr const char* kSmokingStatus = "smoking_status";
inline constexpr const char* kPriorFractureShoulder = "prior_fracture_shoulder";
inline constexpr const char* kPriorFractureWrist = "prior_fracture_wrist";
inline constexpr const char* kIadlScore = "iadl_score";
inline constexpr const char* kBmdTotalHip = "bmd_total_hip";
inline constexpr const char* kBmdLumbarSpine = "bmd_lumbar_spine";
inline constexpr const char* kBmdFemoralNeck = "bmd_femoral_neck";
inline constexpr const char* kOutcome = "hip_fracture";
} // namespace col

class FeatureSchema {
public:
    FeatureSchema() = default;
    FeatureSchema(std::vector<FeatureDescriptor> features, std::string outcome)
        : features_(std::move(features)), outcome_(std::move(outcome)) {
        validate();
    }

    // The harmonized set: nine clinical predictors and three BMD T-scores.
    // IADL accepts 0-5 (the summary table's range) although the recoding
    // rules describe a 0-4 scale.
    static FeatureSchema builtin() {
        const std::vector<std::string> ambiguous{"Prefer not to answer", "Do not know",
                                                 "None of the above"};
        std::vector<FeatureDescriptor> f;
        f.push_back({col::kAge, FeatureKind::Continuous, "years", 40, 110, {}, {}, false});
        f.push_back({col::kHeight, FeatureKind::Continuous, "cm", 100, 230, {}, {}, false});
        f.push_back({col::kWeight, FeatureKind::Continuous, "kg", 20, 250, {}, {}, false});
        f.push_back({col::kGripStrength, FeatureKind::Continuous, "kg", 0, 120, {}, {}, false});
        f.push_back({col::kWalkingPace,
                     FeatureKind::Ordinal,
                     "category",
                     0,
                     2,
                     {{"Slow pace", 0},
                      {"Steady average pace", 1},
                      {"Brisk pace", 2},
                      {"Slow", 0},
                      {"Steady average", 1},
                      {"Brisk", 2}},
                     ambiguous,
                     false});
        f.push_back({col::kSmokingStatus,
                     FeatureKind::Ordinal,
                     "category",
                     0,
                     2,
                     {{"Never", 0}, {"Former", 1}, {"Previous", 1}, {"Current", 2}},
                     ambiguous,
                     false});
        f.push_back({col::kPriorFractureShoulder,
                     FeatureKind::Binary,
                     "indicator",
                     0,
                     1,
                     {{"No", 0}, {"Yes", 1}},
                     ambiguous,
                     false});
        f.push_back({col::kPriorFractureWrist,
                     FeatureKind::Binary,
                     "indicator",
                     0,
                     1,
                     {{"No", 0}, {"Yes", 1}},
                     ambiguous,
                     false});
        f.push_back({col::kIadlScore, FeatureKind::Ordinal, "score", 0, 5, {}, ambiguous, false});
        f.push_back({col::kBmdTotalHip, FeatureKind::Continuous, "T-score", -10, 10, {}, {}, true});
        f.push_back(
            {col::kBmdLumbarSpine, FeatureKind::Continuous, "T-score", -10, 10, {}, {}, true});
        f.push_back(
            {col::kBmdFemoralNeck, FeatureKind::Continuous, "T-score", -10, 10, {}, {}, true});
        return FeatureSchema(std::move(f), col::kOutcome);
    }

    const std::vector<FeatureDescriptor>& features() const noexcept { return features_; }
    const FeatureDescriptor& feature(std::size_t i) const { return features_.at(i); }
    std::size_t size() const noexcept { return features_.size(); }
    const std::string& outcome() const noexcept { return outcome_; }

    std::optional<std::size_t> index_of(std::string_view name) const noexcept {
        for (std::size_t i = 0; i < features_.size(); ++i) {
            if (features_[i].name == name) {
                return i;
            }
        }
        return std::nullopt;
    }

    std::size_t require_index(std::string_view name) const {
        if (auto i = index_of(name)) {
            return *i;
        }
        throw SchemaError("schema has no column '" + std::string(name) + "'", std::string(name));
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(features_.size());
        for (const auto& f : features_) {
            out.push_back(f.name);
        }
        return out;
    }

    friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;

private:
    void validate() const {
        if (features_.size() != kNumFeatures) {
            throw SchemaError("schema must list exactly " + std::to_string(kNumFeatures) +
                                  " predictors, got " + std::to_string(features_.size()),
                              "");
        }
        std::unordered_set<std::string> seen;
        for (const auto& f : features_) {
            if (f.name.empty() || !seen.insert(f.name).second) {
                throw SchemaError("duplicate or empty column name '" + f.name + "'", f.name);
            }
            if (f.min > f.max) {
                throw SchemaError("column '" + f.name + "' has min > max", f.name);
            }
            for (const auto& c : f.codes) {
                if (c.code < f.min || c.code > f.max) {
                    throw SchemaError("code for '" + c.label + "' outside range", f.name);
                }
            }
        }
        if (outcome_.empty() || seen.count(outcome_)) {
            throw SchemaError("outcome column must be named and distinct from predictors", outcome_);
        }
    }

    std::vector<FeatureDescriptor> features_;
    std::string outcome_;
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

} // namespace detail

inline FeatureSchema parse_schema(std::istream& in) {
    std::vector<FeatureDescriptor> features;
    std::string outcome;
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& what) {
        throw SchemaError("schema line " + std::to_string(line_no) + ": " + what,
                          features.empty() ? "" : features.back().name);
    };
    while (std::getline(in, line)) {
        ++line_no;
        const std::string text = detail::trim(line);
        if (text.empty() || text.front() == '#') {
            continue;
        }
        if (text.front() == '[') {
            if (text.back() != ']') {
                fail("unterminated section header");
            }
            FeatureDescriptor d;
            d.name = detail::trim(std::string_view(text).substr(1, text.size() - 2));
            features.push_back(std::move(d));
            continue;
        }
        const auto eq = text.rfind('=');
        if (eq == std::string::npos) {
            fail("expected 'key = value'");
        }
        const std::string key = detail::trim(std::string_view(text).substr(0, eq));
        const std::string value = detail::trim(std::string_view(text).substr(eq + 1));
        if (features.empty()) {
            if (key != "outcome") {
                fail("only 'outcome' may precede the first column block");
            }
            outcome = value;
            continue;
        }
        FeatureDescriptor& d = features.back();
        try {
            if (key == "kind") {
                d.kind = parse_feature_kind(value);
            } else if (key == "units") {
                d.units = value;
            } else if (key == "range") {
                std::istringstream rs(value);
                rs.imbue(std::locale::classic());
                if (!(rs >> d.min >> d.max)) {
                    fail("range needs two numbers");
                }
            } else if (key == "standardize") {
                d.standardize = (value == "true" || value == "1");
            } else if (key == "drop") {
                d.drop_labels.push_back(value);
            } else if (key.rfind("code ", 0) == 0) {
                d.codes.push_back({detail::trim(std::string_view(key).substr(5)), std::stoi(value)});
            } else {
                fail("unknown key '" + key + "'");
            }
        } catch (const std::invalid_argument&) {
            fail("bad value '" + value + "'");
        }
    }
    return FeatureSchema(std::move(features), outcome);
}

inline FeatureSchema load_schema(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open schema file '" + path + "'");
    }
    return parse_schema(in);
}

inline std::string format_range_value(double v) {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << v;
    return os.str();
}

inline void write_schema(std::ostream& out, const FeatureSchema& schema) {
    out << "outcome = " << schema.outcome() << "\n";
    for (const auto& f : schema.features()) {
        out << "\n[" << f.name << "]\n";
        out << "kind = " << to_string(f.kind) << "\n";
        out << "units = " << f.units << "\n";
        out << "range = " << format_range_value(f.min) << " " << format_range_value(f.max) << "\n";
        if (f.standardize) {
            out << "standardize = true\n";
        }
        for (const auto& c : f.codes) {
            out << "code " << c.label << " = " << c.code << "\n";
        }
        for (const auto& d : f.drop_labels) {
            out << "drop = " << d << "\n";
        }
    }
}

} // namespace hfda
