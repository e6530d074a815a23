#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "hfda/selection.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace hfda;

namespace {

TrainConfig tiny_base() {
    TrainConfig c = TrainConfig::for_profile(SexProfile::Female);
    c.max_epochs = 3;
    c.patience = 3;
    return c;
}

GridSpec tiny_grid() {
    GridSpec g;
    g.learning_rates = {1e-3, 5e-3};
    g.weight_decays = {1e-5};
    g.batch_sizes = {32};
    g.embeddings = {4, 8};
    return g;
}

std::string csv(const SelectionReport& r) {
    std::ostringstream os;
    write_selection_csv(os, r);
    return os.str();
}

} // namespace

TEST(Grid, SizesPerProfile) {
    const TrainConfig base = tiny_base();
    GridSpec f;
    EXPECT_EQ(f.size(), 81u);
    EXPECT_EQ(enumerate_grid(f, base).size(), 81u);
    GridSpec m;
    m.profile = SexProfile::Male;
    EXPECT_EQ(m.size(), 27u);
    const auto male = enumerate_grid(m, base);
    EXPECT_EQ(male.size(), 27u);
    for (const auto& c : male) EXPECT_EQ(c.effective_batch_size(), 128u);
    GridSpec one;
    one.learning_rates = {1e-3};
    one.weight_decays = {1e-5};
    one.batch_sizes = {64};
    one.embeddings = {256};
    EXPECT_EQ(enumerate_grid(one, base).size(), 1u);
    GridSpec empty;
    empty.embeddings.clear();
    EXPECT_THROW(enumerate_grid(empty, base), std::invalid_argument);
}

TEST(Grid, OrderIsLearningRateMajor) {
    const auto g = enumerate_grid(GridSpec{}, tiny_base());
    EXPECT_EQ(g[0].learning_rate, 5e-4);
    EXPECT_EQ(g[0].weight_decay, 1e-5);
    EXPECT_EQ(g[0].batch_size, 64u);
    EXPECT_EQ(g[0].embedding, 128u);
    EXPECT_EQ(g[1].embedding, 256u);
    EXPECT_EQ(g[3].batch_size, 128u);
    EXPECT_EQ(g[9].weight_decay, 1e-4);
    EXPECT_EQ(g[27].learning_rate, 1e-3);
    EXPECT_EQ(g[80].learning_rate, 2e-3);
    std::set<std::tuple<double, double, std::size_t, std::size_t>> unique;
    for (const auto& c : g) {
        unique.emplace(c.learning_rate, c.weight_decay, c.batch_size, c.embedding);
        EXPECT_EQ(c.weights.mmd, 0.7);
        EXPECT_EQ(c.weights.grl, 0.7);
        EXPECT_EQ(c.max_epochs, 3u);
    }
    EXPECT_EQ(unique.size(), 81u);
}

TEST(Delta, ZeroForIdenticalCohorts) {
    const CohortTable src = fixtures::small_source(60, 1);
    const ModelParams p = init_params(2, 12, 8, 8, NormKind::Layer);
    EXPECT_NEAR(delta_criterion(p, src.features(), UnlabeledCohort(src.without_outcome("t"))), 0.0, 1e-12);
}

TEST(Delta, MatchesBruteForceOracle) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const CohortTable src = fixtures::small_source(50, seed);
        const CohortTable tgt = fixtures::small_target(40, seed + 100);
        const ModelParams p = init_params(seed, 12, 6, 6, NormKind::Layer);
        const double d = delta_criterion(p, src.features(), UnlabeledCohort(tgt));
        const double o = oracle::mmd_oracle(embed(p, src.features()), embed(p, tgt.features()));
        EXPECT_NEAR(d, o, 1e-12 * std::max(1.0, o));
        EXPECT_GE(d, -1e-15);
    }
}

TEST(Delta, RejectsOutcomeBearingTarget) {
    const CohortTable src = fixtures::small_source(30, 1);
    const ModelParams p = init_params(2, 12, 4, 4, NormKind::Layer);
    EXPECT_THROW(delta_criterion(p, src.features(), src), LeakageError);
}

TEST(Delta, TotalVarianceExample) {
    EXPECT_NEAR(total_variance(Matrix(2, 1, std::vector<double>{0, 2}), Matrix(1, 1, 4.0)), 8.0 / 3, 1e-15);
    EXPECT_EQ(total_variance(Matrix(3, 2, 1.5), Matrix(2, 2, 1.5)), 0.0);
}

TEST(Select, WinnerMinimizesDeltaAndIsDeterministic) {
    const CohortTable src = fixtures::small_source(240, 3);
    const UnlabeledCohort tgt(fixtures::small_target(120, 4));
    const auto configs = enumerate_grid(tiny_grid(), tiny_base());
    ASSERT_EQ(configs.size(), 4u);
    const SelectionReport a = select(src, tgt, configs, 17);
    const SelectionReport b = select(src, tgt, configs, 17, 2);
    EXPECT_EQ(csv(a), csv(b));
    EXPECT_EQ(a.winner, b.winner);
    double best = INFINITY;
    for (const auto& r : a.records) {
        EXPECT_TRUE(r.error.empty()) << r.error;
        EXPECT_EQ(r.config.seed, 17u);
        best = std::min(best, r.delta);
    }
    EXPECT_EQ(a.records[a.winner].delta, best);
    EXPECT_EQ(a.tie_break, "unique minimum");
}

TEST(Select, WinnerModelMatchesRetraining) {
    const CohortTable src = fixtures::small_source(240, 3);
    const UnlabeledCohort tgt(fixtures::small_target(120, 4));
    const auto configs = enumerate_grid(tiny_grid(), tiny_base());
    const SelectionReport r = select(src, tgt, configs, 17, 1, true);
    ASSERT_TRUE(r.winning_model.has_value());
    EXPECT_EQ(r.winning_model->params, train(src, tgt, r.records[r.winner].config).params);
}

TEST(Select, SingleConfigurationGrid) {
    const CohortTable src = fixtures::small_source(200, 5);
    const UnlabeledCohort tgt(fixtures::small_target(80, 6));
    TrainConfig c = tiny_base();
    c.embedding = 4;
    const SelectionReport r = select(src, tgt, {c}, 1);
    EXPECT_EQ(r.records.size(), 1u);
    EXPECT_EQ(r.winner, 0u);
}

TEST(Select, TiesBrokenByGridOrder) {
    const CohortTable src = fixtures::small_source(200, 5);
    const UnlabeledCohort tgt(fixtures::small_target(80, 6));
    TrainConfig c = tiny_base();
    c.embedding = 4;
    const SelectionReport r = select(src, tgt, {c, c}, 1);
    EXPECT_EQ(r.winner, 0u);
    EXPECT_EQ(r.tie_break, "tie on delta and validation loss broken by grid order");
}

TEST(Select, FailedConfigurationsAreSkipped) {
    const CohortTable src = fixtures::small_source(200, 5);
    const UnlabeledCohort tgt(fixtures::small_target(80, 6));
    TrainConfig good = tiny_base();
    good.embedding = 4;
    TrainConfig bad = good;
    bad.learning_rate = -1.0;
    const SelectionReport r = select(src, tgt, {bad, good}, 1);
    EXPECT_EQ(r.winner, 1u);
    EXPECT_FALSE(r.records[0].error.empty());
    EXPECT_NE(csv(r).find(",failed,0"), std::string::npos);
    EXPECT_THROW(select(src, tgt, {bad}, 1), NumericalError);
    EXPECT_THROW(select(src, tgt, {}, 1), std::invalid_argument);
}

TEST(Select, NeverReadsTargetOutcomes) {
    const CohortTable src = fixtures::small_source(200, 7).relabeled("source");
    const CohortTable canary = fixtures::small_source(80, 8).relabeled("canary");
    std::vector<std::string> events;
    audit::ScopedSink sink([&](std::string_view e) { events.emplace_back(e); });
    TrainConfig c = tiny_base();
    c.embedding = 4;
    EXPECT_THROW(select(src, canary, {c}, 1), LeakageError);
    select(src, UnlabeledCohort(canary.without_outcome("canary")), {c}, 1);
    for (const auto& e : events) EXPECT_EQ(e.find("canary"), std::string::npos) << e;
    EXPECT_NE(std::find(events.begin(), events.end(), "outcome:source"), events.end());
}

TEST(Select, ReportsSerialize) {
    const CohortTable src = fixtures::small_source(200, 9);
    const UnlabeledCohort tgt(fixtures::small_target(80, 10));
    const auto configs = enumerate_grid(tiny_grid(), tiny_base());
    const SelectionReport r = select(src, tgt, configs, 2);
    const std::string text = csv(r);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
    EXPECT_EQ(text.rfind("index,learning_rate,weight_decay,batch_size,embedding,flags,delta", 0), 0u);
    EXPECT_EQ(text.find("runtime"), std::string::npos);
    const auto j = to_json(r);
    EXPECT_EQ(j["winner"].get<std::size_t>(), r.winner);
    EXPECT_EQ(j["records"].size(), 4u);
    EXPECT_EQ(j["winning_config"]["embedding"], r.records[r.winner].config.embedding);
}
