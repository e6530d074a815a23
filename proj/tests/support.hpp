#pragma once

// Shared helpers for the unit tests.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hfda/cohort.hpp"
#include "hfda/matrix.hpp"
#include "hfda/rng.hpp"
#include "hfda/synth.hpp"

namespace hfda::fixtures {

inline Matrix random_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (auto& v : m.values()) v = scale * rng.normal();
    return m;
}

// Small labeled cohort from the SOF-like spec.
inline CohortTable small_source(std::size_t n, std::uint64_t seed) {
    OutcomeModel m = OutcomeModel::clinical_default();
    m.intercept = -2.0;  // about 15% positives, so tiny tables hold both classes
    return generate(builtin_spec(spec_names::kSof), m, n, seed);
}

inline CohortTable small_target(std::size_t n, std::uint64_t seed) {
    return generate(builtin_spec(spec_names::kUkbFemale), OutcomeModel::clinical_default(), n, seed)
        .without_outcome("target");
}

// Mean and SD of one column.
inline std::pair<double, double> column_moments(const Matrix& x, std::size_t j) {
    std::vector<double> v(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) v[i] = x(i, j);
    return {mean(v), sample_sd(v)};
}

} // namespace hfda::fixtures
