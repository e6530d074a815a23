#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "hfda/matrix.hpp"

namespace hfda {

// Neumaier's variant of Kahan summation.
class CompensatedSum {
public:
    void add(double x) noexcept {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            compensation_ += (sum_ - t) + x;
        } else {
            compensation_ += (x - t) + sum_;
        }
        sum_ = t;
    }

    CompensatedSum& operator+=(double x) noexcept {
        add(x);
        return *this;
    }

    double value() const noexcept { return sum_ + compensation_; }

private:
    double sum_ = 0.0;
    double compensation_ = 0.0;
};

inline double compensated_sum(std::span<const double> values) noexcept {
    CompensatedSum s;
    for (double v : values) {
        s.add(v);
    }
    return s.value();
}

inline double mean(std::span<const double> values) {
    if (values.empty()) {
        throw std::invalid_argument("mean of empty sequence");
    }
    return compensated_sum(values) / static_cast<double>(values.size());
}

// Sample standard deviation (n - 1 denominator). Zero for a single value.
inline double sample_sd(std::span<const double> values) {
    const double m = mean(values);
    if (values.size() < 2) {
        return 0.0;
    }
    CompensatedSum ss;
    for (double v : values) {
        ss.add((v - m) * (v - m));
    }
    return std::sqrt(ss.value() / static_cast<double>(values.size() - 1));
}

// Middle order statistic; mean of the two middle ones for even counts.
inline double median(std::vector<double> values) {
    if (values.empty()) {
        throw std::invalid_argument("median of empty sequence");
    }
    const std::size_t n = values.size();
    const auto mid = values.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(values.begin(), mid, values.end());
    const double upper = *mid;
    if (n % 2 == 1) {
        return upper;
    }
    const double lower = *std::max_element(values.begin(), mid);
    return 0.5 * (lower + upper);
}

inline Matrix column_means(const Matrix& h) {
    Matrix mu(1, h.cols());
    for (std::size_t j = 0; j < h.cols(); ++j) {
        CompensatedSum s;
        for (std::size_t i = 0; i < h.rows(); ++i) {
            s.add(h(i, j));
        }
        mu[j] = s.value() / static_cast<double>(h.rows());
    }
    return mu;
}

// Unbiased sample covariance, 1/(n-1) normalization; lower triangle is a
// mirror of the upper so the result is exactly symmetric.
inline Matrix covariance_matrix(const Matrix& h) {
    if (h.rows() < 2) {
        throw std::invalid_argument("covariance_matrix needs at least 2 rows");
    }
    const std::size_t n = h.rows();
    const std::size_t p = h.cols();
    const Matrix mu = column_means(h);
    Matrix centered(n, p);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            centered(i, j) = h(i, j) - mu[j];
        }
    }
    Matrix cov(p, p);
    const double scale = 1.0 / static_cast<double>(n - 1);
    for (std::size_t a = 0; a < p; ++a) {
        for (std::size_t b = a; b < p; ++b) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                s += centered(i, a) * centered(i, b);
            }
            cov(a, b) = s * scale;
            cov(b, a) = cov(a, b);
        }
    }
    return cov;
}

namespace detail {

// Continued fraction for the incomplete beta function, modified Lentz.
inline double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIterations = 10000;
    constexpr double kEpsilon = 1e-16;
    constexpr double kTiny = 1e-300;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) {
        d = kTiny;
    }
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIterations; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) {
            d = kTiny;
        }
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) {
            c = kTiny;
        }
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) {
            d = kTiny;
        }
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) {
            c = kTiny;
        }
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < kEpsilon) {
            return h;
        }
    }
    return h;
}

} // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) {
        throw std::invalid_argument("incomplete_beta: a and b must be positive");
    }
    if (x <= 0.0) {
        return 0.0;
    }
    if (x >= 1.0) {
        return 1.0;
    }
    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                             a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * detail::beta_continued_fraction(a, b, x) / a;
    }
    return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

// Student t cumulative distribution function.
inline double t_cdf(double t, double df) {
    if (!(df > 0.0)) {
        throw std::invalid_argument("t_cdf: df must be positive");
    }
    if (std::isnan(t)) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    if (std::isinf(t)) {
        return t > 0 ? 1.0 : 0.0;
    }
    if (t == 0.0) {
        return 0.5;
    }
    // Lower tail mass P(T < -|t|) = I_x(df/2, 1/2) / 2 with x = df/(df+t^2).
    const double x = df / (df + t * t);
    const double tail = 0.5 * incomplete_beta(0.5 * df, 0.5, x);
    return t > 0.0 ? 1.0 - tail : tail;
}

// Two-sided tail probability P(|T| >= |t|), computed without cancellation.
inline double t_two_sided_p(double t, double df) {
    if (std::isinf(t)) {
        return 0.0;
    }
    const double x = df / (df + t * t);
    return incomplete_beta(0.5 * df, 0.5, x);
}

} // namespace hfda
