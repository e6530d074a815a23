#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hfda/evaluation.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace hfda;

TEST(Auc, Examples) {
    const std::vector<int> y{0, 0, 1, 1};
    EXPECT_EQ(auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, y), 0.75);
    EXPECT_EQ(auc(std::vector<double>{0.1, 0.2, 0.3, 0.4}, y), 1.0);
    EXPECT_EQ(auc(std::vector<double>{0.4, 0.3, 0.2, 0.1}, y), 0.0);
    EXPECT_EQ(auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, y), 0.5);
    EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), DataError);
    EXPECT_THROW(auc(std::vector<double>{0.1}, std::vector<int>{1, 0}), std::invalid_argument);
    EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 2}), DataError);
}

TEST(Auc, MatchesAllPairsOracle) {
    SeededRng rng(77, Stream::Synth);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + rng.uniform_index(60);
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            // coarse grid so ties are common
            s[i] = trial % 2 ? std::round(rng.uniform() * 8) / 8 : rng.normal();
            y[i] = rng.uniform() < 0.3;
        }
        y[0] = 1;
        y[1] = 0;
        EXPECT_NEAR(auc(s, y), oracle::auc_oracle(s, y), 1e-12) << trial;
    }
}

TEST(Auc, InvariantUnderMonotoneTransform) {
    SeededRng rng(5, Stream::Synth);
    std::vector<double> s(200), t(200);
    std::vector<int> y(200);
    for (std::size_t i = 0; i < 200; ++i) {
        s[i] = rng.normal();
        t[i] = std::exp(3 * s[i]) + 1;
        y[i] = rng.uniform() < 0.4 + 0.2 * (s[i] > 0);
    }
    EXPECT_EQ(auc(s, y), auc(t, y));
    std::vector<double> flipped(200);
    for (std::size_t i = 0; i < 200; ++i) flipped[i] = -s[i];
    EXPECT_NEAR(auc(flipped, y), 1 - auc(s, y), 1e-15);
}

TEST(Confusion, Examples) {
    const std::vector<double> s{0.9, 0.6, 0.4, 0.2, 0.7, 0.1};
    const std::vector<int> y{1, 1, 1, 0, 0, 0};
    const MetricSet m = confusion_metrics(s, y);
    EXPECT_EQ(m.tp, 2u);
    EXPECT_EQ(m.fn, 1u);
    EXPECT_EQ(m.fp, 1u);
    EXPECT_EQ(m.tn, 2u);
    EXPECT_NEAR(m.accuracy, 4.0 / 6, 1e-15);
    EXPECT_NEAR(m.sensitivity, 2.0 / 3, 1e-15);
    EXPECT_NEAR(m.specificity, 2.0 / 3, 1e-15);
    EXPECT_NEAR(m.precision, 2.0 / 3, 1e-15);
    EXPECT_NEAR(m.f1, 2.0 / 3, 1e-15);
    EXPECT_NEAR(m.auc, 7.0 / 9, 1e-15);
    const MetricSet edge = confusion_metrics(std::vector<double>{0.5, 0.49}, std::vector<int>{1, 0});
    EXPECT_EQ(edge.tp, 1u);  // score equal to the threshold counts as positive
    EXPECT_EQ(edge.tn, 1u);
    const MetricSet none = confusion_metrics(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 0});
    EXPECT_TRUE(none.precision_undefined);
    EXPECT_EQ(none.precision, 0.0);
    EXPECT_EQ(none.f1, 0.0);
    EXPECT_THROW(confusion_metrics(s, y, 1.0), std::invalid_argument);
}

TEST(PairedT, ReferenceExample) {
    const std::vector<double> d{0.1, 0.12, 0.08, 0.11, 0.09};
    const TTestResult r = paired_t_test(d);
    EXPECT_NEAR(r.mean, 0.1, 1e-15);
    EXPECT_EQ(r.df, 4.0);
    EXPECT_NEAR(r.t, 14.142135623730950488, 1e-9);
    EXPECT_NEAR(r.p, 0.00014512817061319761973, 1e-12);
    EXPECT_FALSE(r.degenerate);
}

TEST(PairedT, SymmetricAndDegenerateCases) {
    const TTestResult sym = paired_t_test(std::vector<double>{-0.02, 0.02, -0.01, 0.01});
    EXPECT_NEAR(sym.t, 0.0, 1e-15);
    EXPECT_NEAR(sym.p, 1.0, 1e-12);
    const TTestResult flat = paired_t_test(std::vector<double>{0.03, 0.03, 0.03});
    EXPECT_TRUE(flat.degenerate);
    EXPECT_TRUE(std::isnan(flat.p));
    EXPECT_EQ(format_p_value(flat.p), "NA");
    EXPECT_THROW(paired_t_test(std::vector<double>{0.1}), std::invalid_argument);
}

TEST(PairedT, PValueIsSymmetricInSign) {
    const std::vector<double> d{0.03, -0.01, 0.02, 0.05, 0.0};
    std::vector<double> neg(d.size());
    std::transform(d.begin(), d.end(), neg.begin(), [](double v) { return -v; });
    EXPECT_EQ(paired_t_test(d).p, paired_t_test(neg).p);
    EXPECT_EQ(paired_t_test(d).t, -paired_t_test(neg).t);
}

TEST(Format, PValues) {
    EXPECT_EQ(format_p_value(0.05), "0.0500");
    EXPECT_EQ(format_p_value(0.00014512), "0.0001");
    EXPECT_EQ(format_p_value(0.00009), "<0.0001");
    EXPECT_EQ(format_p_value(1.0), "1.0000");
    EXPECT_EQ(method_name({}), "Baseline");
    EXPECT_EQ(method_name({true, false, true}), "MMD+DANN");
    EXPECT_EQ(method_name({true, true, true}), "MMD+CORAL+DANN");
}

namespace {

struct AblationFixture {
    CohortTable source = fixtures::small_source(240, 31).relabeled("source");
    CohortTable pseudo = fixtures::small_target(120, 32);
    CohortTable eval = fixtures::small_source(150, 33).relabeled("evaluation");
    AblationConfig config;

    AblationFixture() {
        config.base = TrainConfig::for_profile(SexProfile::Female);
        config.base.embedding = 4;
        config.base.max_epochs = 2;
        config.base.batch_size = 32;
        config.seeds = {0, 1, 2};
        config.combinations = {AlignmentFlags{}, AlignmentFlags{true, false, false},
                               AlignmentFlags{false, true, true}};
    }
    AblationResult run() const { return run_ablation(source, UnlabeledCohort(pseudo), eval, config); }
};

} // namespace

TEST(Ablation, RowsSummariesAndTests) {
    const AblationFixture f;
    const AblationResult r = f.run();
    ASSERT_EQ(r.rows.size(), 3u);
    ASSERT_EQ(r.runs.size(), 9u);
    EXPECT_FALSE(r.rows[0].test.has_value());
    EXPECT_EQ(r.rows[0].delta_auc, 0.0);
    for (std::size_t c = 0; c < 3; ++c) {
        const AblationRow& row = r.rows[c];
        EXPECT_EQ(row.flags, f.config.combinations[c]);
        const auto a = row.aucs();
        ASSERT_EQ(a.size(), 3u);
        for (std::size_t s = 0; s < 3; ++s) {
            EXPECT_EQ(r.runs[c * 3 + s].seed, f.config.seeds[s]);
            EXPECT_EQ(r.runs[c * 3 + s].metrics.auc, a[s]);
        }
        const double m = (a[0] + a[1] + a[2]) / 3;
        const double sd = std::sqrt(((a[0] - m) * (a[0] - m) + (a[1] - m) * (a[1] - m) + (a[2] - m) * (a[2] - m)) / 2);
        EXPECT_NEAR(row.auc.mean, m, 1e-12);
        EXPECT_NEAR(row.auc.sd, sd, 1e-12);
        EXPECT_NEAR(row.delta_auc, m - r.rows[0].auc.mean, 1e-12);
        if (c > 0) {
            ASSERT_TRUE(row.test.has_value());
            const auto b = r.rows[0].aucs();
            const std::vector<double> d{a[0] - b[0], a[1] - b[1], a[2] - b[2]};
            const TTestResult t = paired_t_test(d);
            EXPECT_EQ(row.test->degenerate, t.degenerate);
            if (!t.degenerate) {
                EXPECT_NEAR(row.test->t, t.t, 1e-12);
            }
        }
    }
}

TEST(Ablation, ParallelRunsMatchSerial) {
    AblationFixture f;
    std::ostringstream serial, parallel;
    write_ablation_csv(serial, f.run());
    f.config.jobs = 3;
    write_ablation_csv(parallel, f.run());
    EXPECT_EQ(serial.str(), parallel.str());
}

TEST(Ablation, EvaluationOutcomesReadOnlyAfterTraining) {
    const AblationFixture f;
    std::vector<std::string> events;
    {
        audit::ScopedSink sink([&](std::string_view e) { events.emplace_back(e); });
        f.run();
    }
    std::size_t last_train = 0, first_eval = events.size();
    for (std::size_t i = 0; i < events.size(); ++i) {
        if (events[i].rfind("train-", 0) == 0) last_train = i;
        if (events[i] == "outcome:evaluation" && first_eval == events.size()) first_eval = i;
        EXPECT_NE(events[i], "outcome:" + f.pseudo.label());
    }
    ASSERT_LT(first_eval, events.size());
    EXPECT_GT(first_eval, last_train);
    EXPECT_EQ(std::count(events.begin(), events.end(), "train-end:source"), 9);
}

TEST(Ablation, ReportsMarkBaselineWithDash) {
    const AblationFixture f;
    const AblationResult r = f.run();
    std::ostringstream csv, table;
    write_ablation_csv(csv, r);
    render_ablation_table(table, r);
    std::istringstream lines(csv.str());
    std::string header, baseline;
    std::getline(lines, header);
    std::getline(lines, baseline);
    EXPECT_EQ(baseline.rfind("Baseline,\"none\"", 0), 0u);
    EXPECT_NE(baseline.find(std::string(",") + kNoValue + "," + kNoValue + "," + kNoValue), std::string::npos);
    EXPECT_NE(header.find("auc_seed2"), std::string::npos);
    const std::string t = table.str();
    EXPECT_NE(t.find("Method"), std::string::npos);
    EXPECT_NE(t.find("CORAL+DANN"), std::string::npos);
    EXPECT_NE(t.find("±"), std::string::npos);
    const auto j = to_json(r);
    EXPECT_EQ(j["rows"].size(), 3u);
}

TEST(Ablation, InputErrors) {
    AblationFixture f;
    EXPECT_THROW(run_ablation(f.source, UnlabeledCohort(f.pseudo), f.pseudo, f.config), DataError);
    f.config.seeds.clear();
    EXPECT_THROW(f.run(), std::invalid_argument);
}
