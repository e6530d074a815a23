#pragma once

// Loss functionals of the composite objective and their gradients with
// respect to logits / embeddings:
//   task    weighted binary cross-entropy on source predictions
//   MMD^2   biased V-statistic with a multi-scale Gaussian RBF kernel whose
//           bandwidth base is the median pairwise squared distance
//   CORAL   (1/4p^2) ||Sigma_s - Sigma_t||^2 generalized to an l_q penalty
//   domain  binary cross-entropy of the domain discriminator

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hfda/matrix.hpp"
#include "hfda/stats.hpp"

namespace hfda {

inline constexpr double kProbabilityClip = 1e-7;

inline double clip_probability(double p) noexcept {
    return std::clamp(p, kProbabilityClip, 1.0 - kProbabilityClip);
}

inline double stable_sigmoid(double z) noexcept {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

struct AlignmentFlags {
    bool mmd = false;
    bool coral = false;
    bool dann = false;

    bool any() const noexcept { return mmd || coral || dann; }
    int count() const noexcept { return int(mmd) + int(coral) + int(dann); }

    // "mmd,coral,dann"; "none" for the baseline.
    std::string to_string() const {
        std::string s;
        auto add = [&](bool on, const char* name) {
            if (on) {
                if (!s.empty()) s += ",";
                s += name;
            }
        };
        add(mmd, "mmd");
        add(coral, "coral");
        add(dann, "dann");
        return s.empty() ? "none" : s;
    }

    static AlignmentFlags parse(std::string_view text) {
        AlignmentFlags f;
        std::size_t start = 0;
        while (start <= text.size()) {
            auto end = text.find(',', start);
            if (end == std::string_view::npos) end = text.size();
            const auto token = text.substr(start, end - start);
            if (token == "mmd") {
                f.mmd = true;
            } else if (token == "coral") {
                f.coral = true;
            } else if (token == "dann" || token == "grl") {
                f.dann = true;
            } else if (!(token.empty() || token == "none")) {
                throw std::invalid_argument("unknown alignment module '" + std::string(token) + "'");
            }
            start = end + 1;
        }
        return f;
    }

    // The eight combinations in table order: none, M, C, D, MC, MD, CD, MCD.
    static std::array<AlignmentFlags, 8> all_combinations() {
        return {AlignmentFlags{false, false, false}, AlignmentFlags{true, false, false},
                AlignmentFlags{false, true, false},  AlignmentFlags{false, false, true},
                AlignmentFlags{true, true, false},   AlignmentFlags{true, false, true},
                AlignmentFlags{false, true, true},   AlignmentFlags{true, true, true}};
    }

    friend bool operator==(const AlignmentFlags&, const AlignmentFlags&) = default;
};

struct LossWeights {
    double mmd = 0.0;
    double coral = 0.0;
    double grl = 0.0;    // domain-loss weight; also the GRL reversal coefficient
    double omega = 1.0;  // positive-class weight of the task loss
    double q = 2.0;      // CORAL norm order

    void validate() const {
        if (!(mmd >= 0.0) || !(coral >= 0.0) || !(grl >= 0.0)) {
            throw std::invalid_argument("loss weights must be non-negative");
        }
        if (!(omega > 0.0)) {
            throw std::invalid_argument("omega must be positive");
        }
        if (!(q >= 1.0)) {
            throw std::invalid_argument("CORAL norm order q must be >= 1");
        }
    }

    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossReport {
    double task = 0.0;
    double mmd2 = 0.0;
    double coral = 0.0;
    double domain = 0.0;
    double total = 0.0;
};

// --- task loss --------------------------------------------------------------

inline double weighted_bce_term(double y_hat, int y, double omega) noexcept {
    const double p = clip_probability(y_hat);
    return y == 1 ? -omega * std::log(p) : -std::log(1.0 - p);
}

// Mean over the batch of -w y log(p) - (1 - y) log(1 - p), p clipped.
inline double weighted_bce(std::span<const double> y_hat, std::span<const int> y, double omega) {
    if (y_hat.empty()) {
        throw std::invalid_argument("weighted_bce: empty batch");
    }
    if (y_hat.size() != y.size()) {
        throw std::invalid_argument("weighted_bce: length mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        s += weighted_bce_term(y_hat[i], y[i], omega);
    }
    return s / static_cast<double>(y.size());
}

struct LogitLoss {
    double value = 0.0;
    std::vector<double> d_logits;
};

// Weighted BCE evaluated on logits with its gradient. Where the clip is
// active the gradient is zero, matching the clipped value exactly.
inline LogitLoss weighted_bce_logits(std::span<const double> logits, std::span<const int> y,
                                     double omega) {
    if (logits.empty()) {
        throw std::invalid_argument("weighted_bce: empty batch");
    }
    if (logits.size() != y.size()) {
        throw std::invalid_argument("weighted_bce: length mismatch");
    }
    const double inv_n = 1.0 / static_cast<double>(y.size());
    LogitLoss out;
    out.d_logits.resize(y.size());
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double p = stable_sigmoid(logits[i]);
        s += weighted_bce_term(p, y[i], omega);
        const bool clipped = p < kProbabilityClip || p > 1.0 - kProbabilityClip;
        const double g = y[i] == 1 ? -omega * (1.0 - p) : p;
        out.d_logits[i] = clipped ? 0.0 : g * inv_n;
    }
    out.value = s * inv_n;
    return out;
}

// --- domain loss --------------------------------------------------------------

// -(1/N) sum [d log p + (1 - d) log(1 - p)] over the pooled batch.
inline double domain_bce(std::span<const double> d_hat, std::span<const int> d) {
    return weighted_bce(d_hat, d, 1.0);
}

inline LogitLoss domain_bce_logits(std::span<const double> logits, std::span<const int> d) {
    return weighted_bce_logits(logits, d, 1.0);
}

// --- kernels and MMD -----------------------------------------------------------

inline double rbf_kernel(std::span<const double> h1, std::span<const double> h2, double sigma2) {
    if (!(sigma2 > 0.0)) {
        throw std::invalid_argument("rbf_kernel: sigma^2 must be positive");
    }
    return std::exp(-squared_distance(h1, h2) / (2.0 * sigma2));
}

struct KernelScaleSet {
    double base = 1.0;
    static constexpr std::array<double, 3> kMultipliers{0.5, 1.0, 2.0};

    std::array<double, 3> sigma2() const noexcept {
        return {kMultipliers[0] * base, kMultipliers[1] * base, kMultipliers[2] * base};
    }
};

inline constexpr double kBandwidthFallback = 1.0;

namespace detail {

inline void require_embeddings(const Matrix& hs, const Matrix& ht, const char* who) {
    if (hs.rows() == 0 || ht.rows() == 0) {
        throw std::invalid_argument(std::string(who) + ": empty embedding set");
    }
    if (hs.cols() != ht.cols()) {
        throw std::invalid_argument(std::string(who) + ": embedding widths differ");
    }
}

inline std::span<const double> pooled_row(const Matrix& hs, const Matrix& ht, std::size_t i) {
    return i < hs.rows() ? hs.row(i) : ht.row(i - hs.rows());
}

// Squared distances of all unordered pairs i < j of the pooled rows.
inline std::vector<double> condensed_distances(const Matrix& hs, const Matrix& ht) {
    const std::size_t n = hs.rows() + ht.rows();
    std::vector<double> d;
    d.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        const auto zi = pooled_row(hs, ht, i);
        for (std::size_t j = i + 1; j < n; ++j) {
            d.push_back(squared_distance(zi, pooled_row(hs, ht, j)));
        }
    }
    return d;
}

inline double base_from_median(double m) noexcept {
    return (m > 0.0 && std::isfinite(m)) ? m : kBandwidthFallback;
}

} // namespace detail

// Median of all pairwise squared distances of the pooled rows of hs and ht,
// self-pairs excluded; 1.0 when that median is zero or not finite.
inline double median_heuristic_base(const Matrix& hs, const Matrix& ht) {
    detail::require_embeddings(hs, ht, "median_heuristic_base");
    if (hs.rows() + ht.rows() < 2) {
        return kBandwidthFallback;
    }
    return detail::base_from_median(median(detail::condensed_distances(hs, ht)));
}

// Mean over sigma^2 in {0.5, 1, 2} x base of
//   1/ns^2 sum k(s,s') + 1/nt^2 sum k(t,t') - 2/(ns nt) sum k(s,t),
// diagonal self-terms included.
inline double mmd2_multiscale(const Matrix& hs, const Matrix& ht) {
    detail::require_embeddings(hs, ht, "mmd2_multiscale");
    const std::size_t ns = hs.rows();
    const std::size_t nt = ht.rows();
    const std::size_t n = ns + nt;
    const std::vector<double> dist = detail::condensed_distances(hs, ht);
    const double base = dist.empty() ? kBandwidthFallback : detail::base_from_median(median(dist));
    const auto scales = KernelScaleSet{base}.sigma2();

    double total = 0.0;
    for (double s2 : scales) {
        const double inv = 1.0 / (2.0 * s2);
        CompensatedSum kss, ktt, kst;
        std::size_t idx = 0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j, ++idx) {
                const double k = std::exp(-dist[idx] * inv);
                if (j < ns) {
                    kss.add(k);
                } else if (i >= ns) {
                    ktt.add(k);
                } else {
                    kst.add(k);
                }
            }
        }
        // Ordered sums: both orders of each off-diagonal pair plus n diagonal ones.
        const double sss = 2.0 * kss.value() + static_cast<double>(ns);
        const double stt = 2.0 * ktt.value() + static_cast<double>(nt);
        const double dns = static_cast<double>(ns);
        const double dnt = static_cast<double>(nt);
        total += sss / (dns * dns) + stt / (dnt * dnt) - 2.0 * kst.value() / (dns * dnt);
    }
    return total / static_cast<double>(scales.size());
}

struct EmbeddingLoss {
    double value = 0.0;
    Matrix d_source;
    Matrix d_target;
};

// MMD^2 with gradients. The bandwidth base is part of the function: its
// gradient flows through the pair (or two pairs) selecting the median.
inline EmbeddingLoss mmd2_multiscale_with_grad(const Matrix& hs, const Matrix& ht) {
    detail::require_embeddings(hs, ht, "mmd2_multiscale");
    const std::size_t ns = hs.rows();
    const std::size_t nt = ht.rows();
    const std::size_t n = ns + nt;
    const std::size_t p = hs.cols();

    Matrix dist(n, n);
    std::vector<std::pair<double, std::size_t>> pairs;
    pairs.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        const auto zi = detail::pooled_row(hs, ht, i);
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = squared_distance(zi, detail::pooled_row(hs, ht, j));
            dist(i, j) = d;
            dist(j, i) = d;
            pairs.emplace_back(d, i * n + j);
        }
    }

    // Median pair(s) and their weight in the base.
    std::vector<std::pair<std::size_t, double>> median_pairs;
    double base = kBandwidthFallback;
    if (!pairs.empty()) {
        const std::size_t m = pairs.size();
        const auto mid = pairs.begin() + static_cast<std::ptrdiff_t>(m / 2);
        std::nth_element(pairs.begin(), mid, pairs.end());
        double med = mid->first;
        if (m % 2 == 1) {
            median_pairs.emplace_back(mid->second, 1.0);
        } else {
            const auto lower = std::max_element(pairs.begin(), mid);
            med = 0.5 * (lower->first + mid->first);
            median_pairs.emplace_back(lower->second, 0.5);
            median_pairs.emplace_back(mid->second, 0.5);
        }
        base = detail::base_from_median(med);
        if (base != med) {
            median_pairs.clear();  // fallback constant, no gradient
        }
    }

    const auto scales = KernelScaleSet{base}.sigma2();
    const double third = 1.0 / static_cast<double>(scales.size());
    const double dns = static_cast<double>(ns);
    const double dnt = static_cast<double>(nt);
    const double a_ss = 1.0 / (dns * dns);
    const double a_tt = 1.0 / (dnt * dnt);
    const double a_st = -1.0 / (dns * dnt);

    // coeff(i, j) = dL/dD_ij for the ordered pair (i, j); symmetric.
    Matrix coeff(n, n);
    double value = 0.0;
    double d_base = 0.0;
    for (std::size_t s = 0; s < scales.size(); ++s) {
        const double s2 = scales[s];
        const double inv = 1.0 / (2.0 * s2);
        const double multiplier = KernelScaleSet::kMultipliers[s];
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const bool si = i < ns;
                const bool sj = j < ns;
                const double a = (si && sj) ? a_ss : (!si && !sj) ? a_tt : a_st;
                const double k = i == j ? 1.0 : std::exp(-dist(i, j) * inv);
                sum += a * k;
                if (i != j) {
                    const double ak = third * a * k;
                    coeff(i, j) += -ak * inv;
                    // d/d(base) of exp(-D / (2 m base)) = exp(.) D / (2 m base^2)
                    d_base += ak * dist(i, j) / (2.0 * multiplier * base * base);
                }
            }
        }
        value += third * sum;
    }

    Matrix grad(n, p);
    for (std::size_t i = 0; i < n; ++i) {
        const auto zi = detail::pooled_row(hs, ht, i);
        auto gi = grad.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double c = 2.0 * (coeff(i, j) + coeff(j, i));
            const auto zj = detail::pooled_row(hs, ht, j);
            for (std::size_t k = 0; k < p; ++k) {
                gi[k] += c * (zi[k] - zj[k]);
            }
        }
    }
    for (const auto& [code, weight] : median_pairs) {
        const std::size_t i = code / n;
        const std::size_t j = code % n;
        const auto zi = detail::pooled_row(hs, ht, i);
        const auto zj = detail::pooled_row(hs, ht, j);
        const double c = 2.0 * d_base * weight;
        for (std::size_t k = 0; k < p; ++k) {
            const double g = c * (zi[k] - zj[k]);
            grad(i, k) += g;
            grad(j, k) -= g;
        }
    }

    EmbeddingLoss out;
    out.value = value;
    out.d_source = Matrix(ns, p);
    out.d_target = Matrix(nt, p);
    for (std::size_t i = 0; i < n; ++i) {
        auto dst = i < ns ? out.d_source.row(i) : out.d_target.row(i - ns);
        const auto src = grad.row(i);
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return out;
}

// --- CORAL ----------------------------------------------------------------------

namespace detail {

inline void require_coral_inputs(const Matrix& hs, const Matrix& ht, double q) {
    if (hs.rows() < 2 || ht.rows() < 2) {
        throw std::invalid_argument("coral: each domain needs at least 2 rows");
    }
    if (hs.cols() != ht.cols()) {
        throw std::invalid_argument("coral: embedding widths differ");
    }
    if (!(q >= 1.0)) {
        throw std::invalid_argument("coral: q must be >= 1");
    }
}

// sum |d|^q over the entries of d.
inline double lq_power_sum(const Matrix& d, double q) {
    double s = 0.0;
    for (double v : d.values()) {
        s += q == 2.0 ? v * v : std::pow(std::abs(v), q);
    }
    return s;
}

} // namespace detail

// (1/4p^2) (sum |Sigma_s - Sigma_t|^q)^(2/q); q = 2 is the squared Frobenius norm.
inline double coral(const Matrix& hs, const Matrix& ht, double q = 2.0) {
    detail::require_coral_inputs(hs, ht, q);
    const Matrix cs = covariance_matrix(hs);
    const Matrix ct = covariance_matrix(ht);
    Matrix diff = cs;
    axpy(-1.0, ct, diff);
    const double p = static_cast<double>(hs.cols());
    const double scale = 1.0 / (4.0 * p * p);
    const double s = detail::lq_power_sum(diff, q);
    return q == 2.0 ? scale * s : scale * std::pow(s, 2.0 / q);
}

inline EmbeddingLoss coral_with_grad(const Matrix& hs, const Matrix& ht, double q = 2.0) {
    detail::require_coral_inputs(hs, ht, q);
    const std::size_t p = hs.cols();
    const Matrix cs = covariance_matrix(hs);
    const Matrix ct = covariance_matrix(ht);
    Matrix diff = cs;
    axpy(-1.0, ct, diff);
    const double dp = static_cast<double>(p);
    const double scale = 1.0 / (4.0 * dp * dp);
    const double s = detail::lq_power_sum(diff, q);

    EmbeddingLoss out;
    // g = dL/dSigma_s (symmetric)
    Matrix g(p, p);
    if (q == 2.0) {
        out.value = scale * s;
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] = 2.0 * scale * diff[i];
        }
    } else {
        out.value = scale * std::pow(s, 2.0 / q);
        if (s > 0.0) {
            const double front = 2.0 * scale * std::pow(s, 2.0 / q - 1.0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = diff[i];
                const double mag = std::pow(std::abs(v), q - 1.0);
                g[i] = front * (v > 0 ? mag : v < 0 ? -mag : 0.0);
            }
        }
    }

    // dL/dH = Hc (G + G^T) / (n - 1); G is symmetric so this is 2 Hc G / (n - 1).
    auto grad_for = [&](const Matrix& h, double sign) {
        const Matrix mu = column_means(h);
        Matrix centered = h;
        for (std::size_t i = 0; i < h.rows(); ++i) {
            auto r = centered.row(i);
            for (std::size_t j = 0; j < p; ++j) {
                r[j] -= mu[j];
            }
        }
        Matrix d = matmul(centered, g);
        const double f = sign * 2.0 / static_cast<double>(h.rows() - 1);
        for (auto& v : d.values()) {
            v *= f;
        }
        return d;
    };
    out.d_source = grad_for(hs, 1.0);
    out.d_target = grad_for(ht, -1.0);
    return out;
}

// --- composite ------------------------------------------------------------------

// L = task + l_mmd MMD^2 + l_coral CORAL + l_grl L_dom over the active terms.
inline double composite(double task, double mmd2, double coral_value, double domain,
                        const LossWeights& w, const AlignmentFlags& flags) noexcept {
    double total = task;
    if (flags.mmd) total += w.mmd * mmd2;
    if (flags.coral) total += w.coral * coral_value;
    if (flags.dann) total += w.grl * domain;
    return total;
}

} // namespace hfda
