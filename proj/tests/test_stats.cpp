#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <set>

#include "hfda/rng.hpp"
#include "hfda/stats.hpp"
#include "reference_values.hpp"
#include "support.hpp"

using namespace hfda;

// First 100 outputs of SeededRng(20240601, stream 7), frozen from an
// independent arbitrary-precision integer implementation of the generator.
constexpr std::array<std::uint64_t, 100> kGolden = {
    0x31629162b1a1debdULL, 0x0f6fdd02621f714aULL, 0xc73487fcfcaf390eULL, 0x649f6105e248f6c6ULL,
    0xfc3b0fe99d32ee17ULL, 0x9249b847116d3109ULL, 0x0a536689094e6bd2ULL, 0x88f211ac8d3778a8ULL,
    0x4ea5dc8553e84502ULL, 0x9652baf0adecc911ULL, 0x649aa689792d73b3ULL, 0x6357ef0cf8cf18c5ULL,
    0x5d1554cb5c6232f7ULL, 0x74a1859807a98217ULL, 0x975e5018aa818aaaULL, 0x19ef0132789df5feULL,
    0xaa8cae8088591426ULL, 0x23937e1be97ad42dULL, 0x6e485aff18e91270ULL, 0x8a182868cfcbc911ULL,
    0xaa638d1b0581f3b9ULL, 0xd63ae532102428eeULL, 0x515a470fdb16c9f1ULL, 0x35d46991e88f3719ULL,
    0x4bc28690ce17e7c4ULL, 0x28da85bc578d316eULL, 0xa5ce7e4a3c19ff4fULL, 0x0dff62212e931092ULL,
    0xcdb1ffb397e99014ULL, 0x56166b8238a783fcULL, 0x1e7647848a59228dULL, 0xc173732c70235beaULL,
    0xb48857aeddd2ba79ULL, 0xe61c6aed69bed11aULL, 0x0756e6716455da4bULL, 0x3a912a654d9f1b0cULL,
    0x70fc7ec8dd91661dULL, 0x585d7b9fb60ecfa5ULL, 0xecee0fee76b9a395ULL, 0x08bf03f6b0534b9dULL,
    0x2801d6c609f4c16bULL, 0x71a324023fadf5a5ULL, 0x26cff3ca1c0a1651ULL, 0xb73f0e773ecd332fULL,
    0x089b83d1a781fa59ULL, 0xd38c6eea46032562ULL, 0xd0813486a70220baULL, 0x9edddbfb462d6a24ULL,
    0x6490094967c486a4ULL, 0x61aeff9cb624d05cULL, 0x943ad63002689348ULL, 0x7ad179290525fb15ULL,
    0x10e4c06ee13d5f80ULL, 0x730b49bdd1d7091bULL, 0x16bb8ee812ef1178ULL, 0x901d589c341f4d47ULL,
    0x59d0df8f073a32ccULL, 0x9b1ae346abbee4f1ULL, 0x42f77d81dbc76068ULL, 0x540ea956c0a88d52ULL,
    0xbb8f42dec6d12c13ULL, 0x4ed9dff1203b3ecfULL, 0xdedab35d49da2b78ULL, 0x53ad7d1eb220f22fULL,
    0x2e9c7fe7f52acebdULL, 0xe2dae158773071f5ULL, 0xfedc56d5ba0b9c53ULL, 0xd8f02e3e882246a1ULL,
    0x7fc1ae90696388bbULL, 0xe69be72c09742e11ULL, 0x087566c273ea3fedULL, 0xf44e50c5a792a6efULL,
    0xcd2ab20300a2d20eULL, 0xabf8e8d816dafa9eULL, 0x93666eec6642bb99ULL, 0xc59fc7844094ad35ULL,
    0x79836dfbbad72321ULL, 0x1caad847379b370cULL, 0x99cc8d81505ec212ULL, 0xe320f9c456239263ULL,
    0xf7301a39e7ae9d2cULL, 0x316631987c84b961ULL, 0x04c786f1476d765dULL, 0xba68caf663d86cf7ULL,
    0xa7a203bb77f48203ULL, 0x5422c108e563e38bULL, 0xa0a6813f465ab5bcULL, 0x8e6f9fb92f869bc7ULL,
    0xca7225c6eabe5c36ULL, 0x4e8743a4f6be49d5ULL, 0x36dd8ebaa1bb63b3ULL, 0xba589c8b78a75bf6ULL,
    0xc39398b05ad624bfULL, 0x6697ed1d2f9568c2ULL, 0xc7027317729b6bc8ULL, 0xe3b791061b57a002ULL,
    0x3d3ac2f083a4b5ffULL, 0xf7e9686893db1f4fULL, 0x97e8a7b646f08a30ULL, 0xcdd52ca9326fd049ULL,
};

TEST(Rng, GoldenVector) {
    SeededRng rng(20240601, 7);
    for (std::size_t i = 0; i < kGolden.size(); ++i) {
        ASSERT_EQ(rng.next_u64(), kGolden[i]) << "draw " << i;
    }
    EXPECT_EQ(rng.counter(), 100u);
}

TEST(Rng, UniformUsesTop53Bits) {
    SeededRng rng(20240601, 7);
    for (std::size_t i = 0; i < 10; ++i) {
        EXPECT_EQ(rng.uniform(), static_cast<double>(kGolden[i] >> 11) * 0x1.0p-53);
    }
}

TEST(Rng, StreamsAndSeedsDiffer) {
    SeededRng a(1, Stream::Synth), b(1, Stream::SynthOutcome), c(2, Stream::Synth);
    const auto x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
    EXPECT_NE(x, y);
    EXPECT_NE(x, z);
    EXPECT_NE(derive_seed(5, 0), derive_seed(5, 1));
    EXPECT_EQ(derive_seed(5, 3), derive_seed(5, 3));
}

TEST(Rng, UniformIndexInRangeAndRoughlyFlat) {
    SeededRng rng(3, 0);
    std::array<int, 7> counts{};
    for (int i = 0; i < 70000; ++i) {
        const auto k = rng.uniform_index(7);
        ASSERT_LT(k, 7u);
        ++counts[k];
    }
    for (int c : counts) EXPECT_NEAR(c, 10000, 500);
    EXPECT_EQ(rng.uniform_index(1), 0u);
    EXPECT_EQ(rng.uniform_index(0), 0u);
}

TEST(Rng, NormalMoments) {
    SeededRng rng(11, 0);
    std::vector<double> v(100000);
    for (auto& x : v) x = rng.normal();
    EXPECT_NEAR(mean(v), 0.0, 0.02);
    EXPECT_NEAR(sample_sd(v), 1.0, 0.02);
}

TEST(Rng, ShuffleIsPermutation) {
    SeededRng rng(9, 0);
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    rng.shuffle(std::span<int>(v));
    std::vector<int> s = v;
    std::sort(s.begin(), s.end());
    for (int i = 0; i < 50; ++i) EXPECT_EQ(s[i], i);
    EXPECT_FALSE(std::is_sorted(v.begin(), v.end()));
}

TEST(TCdf, MatchesHighPrecisionReference) {
    for (const auto& p : reference::kTPoints) {
        EXPECT_NEAR(t_cdf(p.t, p.df), p.cdf, 1e-10) << "t=" << p.t << " df=" << p.df;
    }
}

TEST(TCdf, SymmetryAndLimits) {
    EXPECT_EQ(t_cdf(0.0, 1), 0.5);
    EXPECT_EQ(t_cdf(0.0, 17), 0.5);
    EXPECT_EQ(t_cdf(INFINITY, 3), 1.0);
    EXPECT_EQ(t_cdf(-INFINITY, 3), 0.0);
    EXPECT_NEAR(t_cdf(1e6, 4), 1.0, 1e-12);
    EXPECT_NEAR(t_cdf(2.776, 4), 0.975, 1e-4);
    for (double t : {0.3, 1.7, 4.2}) {
        EXPECT_NEAR(t_cdf(t, 6) + t_cdf(-t, 6), 1.0, 1e-14);
    }
    EXPECT_THROW(t_cdf(1.0, 0), std::invalid_argument);
}

TEST(TCdf, TwoSidedTailAgreesWithCdf) {
    for (const auto& p : reference::kTPoints) {
        const double expect = 2.0 * (1.0 - t_cdf(std::abs(p.t), p.df));
        EXPECT_NEAR(t_two_sided_p(p.t, p.df), expect, 1e-10);
    }
}

TEST(IncompleteBeta, EdgesAndKnownValues) {
    EXPECT_EQ(incomplete_beta(2, 3, 0.0), 0.0);
    EXPECT_EQ(incomplete_beta(2, 3, 1.0), 1.0);
    // I_x(1, 1) = x; I_x(a, 1) = x^a
    EXPECT_NEAR(incomplete_beta(1, 1, 0.37), 0.37, 1e-14);
    EXPECT_NEAR(incomplete_beta(3, 1, 0.5), 0.125, 1e-14);
    EXPECT_THROW(incomplete_beta(0, 1, 0.5), std::invalid_argument);
}

TEST(Median, Examples) {
    EXPECT_EQ(median({1, 9, 4}), 4.0);
    EXPECT_EQ(median({1, 3}), 2.0);
    EXPECT_EQ(median({5}), 5.0);
    EXPECT_EQ(median({4, 1, 3, 2}), 2.5);
    EXPECT_THROW(median({}), std::invalid_argument);
}

TEST(Median, MatchesSortOracle) {
    SeededRng rng(4, 0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(30);
        std::vector<double> v(n);
        for (auto& x : v) x = std::floor(rng.uniform() * 10.0);  // with ties
        std::vector<double> s = v;
        std::sort(s.begin(), s.end());
        const double oracle = n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
        EXPECT_EQ(median(v), oracle);
    }
}

TEST(Covariance, Examples) {
    Matrix c = covariance_matrix(Matrix(2, 2, std::vector<double>{1, 0, -1, 0}));
    EXPECT_EQ(c(0, 0), 2.0);
    EXPECT_EQ(c(0, 1), 0.0);
    EXPECT_EQ(c(1, 0), 0.0);
    EXPECT_EQ(c(1, 1), 0.0);
    Matrix constant(5, 3, 2.5);
    const Matrix cc = covariance_matrix(constant);
    for (double v : cc.values()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(covariance_matrix(Matrix(1, 3)), std::invalid_argument);
}

TEST(Covariance, SymmetricPsdAndMatchesEigen) {
    SeededRng rng(21, 0);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.uniform_index(10);
        const std::size_t p = 1 + rng.uniform_index(6);
        const Matrix h = fixtures::random_matrix(rng, n, p, 3.0);
        const Matrix c = covariance_matrix(h);

        Eigen::MatrixXd e(n, p);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < p; ++j) e(i, j) = h(i, j);
        const Eigen::MatrixXd centered = e.rowwise() - e.colwise().mean();
        const Eigen::MatrixXd ref = centered.transpose() * centered / double(n - 1);
        Eigen::MatrixXd mine(p, p);
        for (std::size_t a = 0; a < p; ++a) {
            for (std::size_t b = 0; b < p; ++b) {
                EXPECT_EQ(c(a, b), c(b, a));
                EXPECT_NEAR(c(a, b), ref(a, b), 1e-12 * (1.0 + std::abs(ref(a, b))));
                mine(a, b) = c(a, b);
            }
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mine);
        EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
    }
}

TEST(CompensatedSum, MatchesArbitraryPrecisionOracle) {
    using Big = boost::multiprecision::cpp_bin_float_100;
    SeededRng rng(77, 0);
    std::vector<double> v(20000);
    for (auto& x : v) {
        x = (2.0 * rng.uniform() - 1.0) * std::pow(10.0, static_cast<double>(rng.uniform_index(17)) - 8.0);
    }
    Big exact = 0;
    for (double x : v) exact += Big(x);
    const double want = exact.convert_to<double>();
    const double got = compensated_sum(v);
    EXPECT_LT(std::abs(got - want) / std::abs(want), 1e-12);
}

TEST(CompensatedSum, RecoversCancelledTerms) {
    CompensatedSum s;
    s.add(1e16);
    s.add(1.0);
    s.add(-1e16);
    EXPECT_EQ(s.value(), 1.0);
}

TEST(MeanSd, Basic) {
    const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
    EXPECT_DOUBLE_EQ(mean(v), 5.0);
    EXPECT_NEAR(sample_sd(v), std::sqrt(32.0 / 7.0), 1e-15);
    EXPECT_EQ(sample_sd(std::vector<double>{3.0}), 0.0);
    EXPECT_THROW(mean(std::vector<double>{}), std::invalid_argument);
}
