// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Criteria can be selected by name: `acceptance AC2 AC9`.
// `acceptance --freeze-golden` rewrites the CLI golden-hash file.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "hfda/checkpoint.hpp"
#include "hfda/cohort.hpp"
#include "hfda/evaluation.hpp"
#include "hfda/losses.hpp"
#include "hfda/selection.hpp"
#include "hfda/stats.hpp"
#include "hfda/synth.hpp"
#include "hfda/trainer.hpp"
#include "oracles.hpp"
#include "reference_values.hpp"

#ifndef HFDA_CLI_PATH
#define HFDA_CLI_PATH "hfda"
#endif
#ifndef HFDA_GOLDEN_PATH
#define HFDA_GOLDEN_PATH "cli_hashes.txt"
#endif
#ifndef HFDA_WORK_DIR
#define HFDA_WORK_DIR "acceptance_work"
#endif

using namespace hfda;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Matrix random_matrix(SeededRng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
    Matrix m(r, c);
    for (auto& v : m.values()) v = scale * rng.normal();
    return m;
}

// --- AC1 -----------------------------------------------------------------------------

Verdict ac1_gradients() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::string where;
    for (const AlignmentFlags& f : AlignmentFlags::all_combinations()) {
        const auto r = fixtures::gradient_check(f, 1);
        if (!(r.max_rel_error <= worst)) {
            worst = r.max_rel_error;
            where = f.to_string() + " " + r.worst;
        }
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-4 && secs < 10.0,
            "max relative error " + fmt("%.2e", worst) + " (" + where + "), " + fmt("%.2f", secs) + " s"};
}

// --- AC2 -----------------------------------------------------------------------------

Verdict ac2_mmd() {
    SeededRng rng(2002, Stream::Synth);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t ns = 1 + rng.uniform_index(12), nt = 1 + rng.uniform_index(12);
        const std::size_t p = 1 + rng.uniform_index(4);
        const Matrix s = random_matrix(rng, ns, p), t = random_matrix(rng, nt, p, 1.5);
        worst = std::max(worst, std::abs(mmd2_multiscale(s, t) - oracle::mmd_oracle(s, t)));
    }
    double identical = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(12), p = 1 + rng.uniform_index(4);
        const Matrix s = random_matrix(rng, n, p);
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        rng.shuffle(std::span<std::size_t>(perm));
        identical = std::max(identical, std::abs(mmd2_multiscale(s, select_rows(s, perm))));
    }
    const double hand = mmd2_multiscale(Matrix(1, 1, 0.0), Matrix(1, 1, 2.0));
    return {worst <= 1e-12 && identical <= 1e-12 && std::abs(hand - 0.8312) <= 1e-4,
            "oracle diff " + fmt("%.1e", worst) + ", identical " + fmt("%.1e", identical) + ", hand case " +
                fmt("%.6f", hand)};
}

// --- AC3 -----------------------------------------------------------------------------

Verdict ac3_coral() {
    SeededRng rng(3003, Stream::Synth);
    double worst = 0.0, shift = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t ns = 2 + rng.uniform_index(11), nt = 2 + rng.uniform_index(11);
        const std::size_t p = 1 + rng.uniform_index(4);
        const Matrix s = random_matrix(rng, ns, p), t = random_matrix(rng, nt, p, 2.0);
        const double v = coral(s, t);
        worst = std::max(worst, std::abs(v - oracle::coral_oracle(s, t)));
        Matrix s2 = s, t2 = t;
        for (std::size_t j = 0; j < p; ++j) {
            const double a = 3 * rng.normal(), b = 3 * rng.normal();
            for (std::size_t i = 0; i < ns; ++i) s2(i, j) += a;
            for (std::size_t i = 0; i < nt; ++i) t2(i, j) += b;
        }
        shift = std::max(shift, std::abs(coral(s2, t2) - v));
    }
    const double hand = coral(Matrix(2, 2, std::vector<double>{1, 0, -1, 0}),
                              Matrix(2, 2, std::vector<double>{0, 1, 0, -1}));
    return {worst <= 1e-12 && shift <= 1e-12 && hand == 0.5,
            "oracle diff " + fmt("%.1e", worst) + ", translation diff " + fmt("%.1e", shift) +
                ", hand case " + fmt("%.17g", hand)};
}

// --- AC4 -----------------------------------------------------------------------------

template <class F>
bool throws_leakage(F&& f) {
    try {
        f();
    } catch (const LeakageError&) {
        return true;
    } catch (...) {
        return false;
    }
    return false;
}

Verdict ac4_outcome_free() {
    OutcomeModel m = OutcomeModel::clinical_default();
    m.intercept = -2.0;
    const CohortTable source = generate(builtin_spec(spec_names::kSof), m, 300, 41).relabeled("source");
    const CohortTable canary = generate(builtin_spec(spec_names::kUkbFemale), m, 200, 42).relabeled("canary");
    TrainConfig c = TrainConfig::for_profile(SexProfile::Female, {true, false, false});
    c.embedding = 8;
    c.max_epochs = 2;

    const bool train_rejects = throws_leakage([&] { train(source, canary, c); });
    const bool delta_rejects = throws_leakage([&] {
        delta_criterion(init_params(1, kNumFeatures, 8, 8, NormKind::Layer), source.features(), canary);
    });
    const bool select_rejects = throws_leakage([&] { select(source, canary, {c}, 1); });

    // Audit: the evaluation cohort's outcomes are read only after every
    // training run has finished, and the pseudo-training half never.
    const SplitResult split = stratified_half_split(canary, 3);
    std::vector<std::string> events;
    {
        audit::ScopedSink sink([&](std::string_view e) { events.emplace_back(e); });
        AblationConfig ac;
        ac.base = c;
        ac.seeds = {0, 1};
        ac.combinations = {AlignmentFlags{}, AlignmentFlags{true, true, true}};
        run_ablation(source, UnlabeledCohort(split.pseudo_train.without_outcome("pseudo")), split.evaluation, ac);
    }
    std::size_t last_train = 0, first_eval = events.size(), pseudo_reads = 0;
    for (std::size_t i = 0; i < events.size(); ++i) {
        if (events[i].rfind("train-", 0) == 0) last_train = i;
        if (events[i] == "outcome:" + split.evaluation.label() && first_eval == events.size()) first_eval = i;
        if (events[i] == "outcome:pseudo" || events[i] == "outcome:" + split.pseudo_train.label()) ++pseudo_reads;
    }
    const bool audit_ok = first_eval < events.size() && first_eval > last_train && pseudo_reads == 0;
    return {train_rejects && delta_rejects && select_rejects && audit_ok,
            std::string("train ") + (train_rejects ? "rejects" : "ACCEPTS") + ", delta " +
                (delta_rejects ? "rejects" : "ACCEPTS") + ", select " + (select_rejects ? "rejects" : "ACCEPTS") +
                ", audit " + (audit_ok ? "ordered" : "VIOLATED") + " (" + std::to_string(events.size()) +
                " events)"};
}

// --- AC5 -----------------------------------------------------------------------------

TrainConfig direction_base() {
    TrainConfig c = TrainConfig::for_profile(SexProfile::Female);
    c.embedding = 32;
    c.max_epochs = 30;
    c.patience = 7;
    return c;
}

Verdict ac5_selection() {
    const auto t0 = Clock::now();
    const CohortTable source =
        generate(builtin_spec(spec_names::kSof), OutcomeModel::clinical_default(), 3625, 101).relabeled("source");
    const UnlabeledCohort target(
        generate(builtin_spec(spec_names::kUkbFemale), OutcomeModel::clinical_default(), 205, 202)
            .without_outcome("target"));
    TrainConfig off = direction_base();
    TrainConfig on = off;
    on.flags = {true, false, false};
    on.weights = lambda_preset(on.flags, on.profile);
    int wins = 0;
    std::string deltas;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const SelectionReport r = select(source, target, {off, on}, seed);
        wins += r.winner == 1;
        deltas += " " + fmt("%.4f", r.records[0].delta) + "/" + fmt("%.4f", r.records[1].delta);
    }
    const double secs = seconds_since(t0);
    return {wins >= 4 && secs < 300.0, "MMD-on selected in " + std::to_string(wins) + "/5 seeds (off/on delta:" +
                                           deltas + "), " + fmt("%.1f", secs) + " s"};
}

// --- AC6 -----------------------------------------------------------------------------

Verdict ac6_direction() {
    const auto t0 = Clock::now();
    const ShiftScenario s = scanner_shift_scenario();
    const CohortTable source = generate(s.source_spec, s.source_outcome, 3625, 101).relabeled("source");
    const CohortTable target = generate(s.target_spec, s.target_outcome, 4000, 202).relabeled("target");
    const SplitResult split = stratified_half_split(target, 7);
    AblationConfig ac;
    ac.base = direction_base();
    ac.seeds = {0, 1, 2, 3, 4};
    const AblationResult r =
        run_ablation(source, UnlabeledCohort(split.pseudo_train.without_outcome("pseudo")), split.evaluation, ac);
    const double secs = seconds_since(t0);
    render_ablation_table(std::cout, r);

    auto row = [&](AlignmentFlags f) -> const AblationRow& {
        for (const auto& x : r.rows)
            if (x.flags == f) return x;
        throw std::logic_error("missing row");
    };
    const AblationRow& base = row({});
    const AblationRow& mmd = row({true, false, false});
    const AblationRow& dann = row({false, false, true});
    const AblationRow& all = row({true, true, true});
    const bool a = mmd.auc.mean > base.auc.mean && dann.auc.mean > base.auc.mean && all.auc.mean > base.auc.mean;
    double best = -1;
    for (const auto& x : r.rows) best = std::max(best, x.auc.mean);
    const bool b = all.auc.mean >= best;
    const bool c = all.test && !all.test->degenerate && all.test->p < 0.05;
    return {a && b && c && secs < 1800.0,
            std::string("(a) ") + (a ? "yes" : "no") + " [dMMD " + fmt("%+.4f", mmd.delta_auc) + ", dDANN " +
                fmt("%+.4f", dann.delta_auc) + ", dALL " + fmt("%+.4f", all.delta_auc) + "], (b) " +
                (b ? "yes" : "no") + " [all " + fmt("%.4f", all.auc.mean) + " vs max " + fmt("%.4f", best) +
                "], (c) " + (c ? "yes" : "no") + " [p " + (all.test ? format_p_value(all.test->p) : "NA") + "], " +
                fmt("%.0f", secs) + " s"};
}

// --- AC7 -----------------------------------------------------------------------------

Verdict ac7_baseline_equivalence() {
    OutcomeModel m = OutcomeModel::clinical_default();
    m.intercept = -2.5;
    const CohortTable source = generate(builtin_spec(spec_names::kSof), m, 800, 71);
    const UnlabeledCohort target(
        generate(builtin_spec(spec_names::kUkbFemale), m, 300, 72).without_outcome("target"));
    std::string detail;
    bool ok = true;
    for (SexProfile p : {SexProfile::Female, SexProfile::Male}) {
        TrainConfig c = TrainConfig::for_profile(p);
        c.embedding = 16;
        c.max_epochs = 6;
        const std::string a = checkpoint_hash(train(source, target, c).params);
        const std::string b = checkpoint_hash(train_baseline_only(source, target, c).params);
        ok = ok && a == b;
        detail += std::string(to_string(p)) + " " + a + (a == b ? " == " : " != ") + b + "; ";
    }
    return {ok, detail};
}

// --- AC8 -----------------------------------------------------------------------------

struct CliRun {
    std::string args;
    std::vector<std::string> artifacts;  // relative to the run directory
};

std::vector<CliRun> cli_runs() {
    const std::string tiny = " --embedding 8 --epochs 3";
    return {
        {"--seed 3 synth --spec sof-like --n 600 --out src.csv", {"src.csv"}},
        {"--seed 4 synth --spec ukb-female-like --n 205 --out tgt.csv", {"tgt.csv"}},
        {"--seed 6 synth --scenario scanner-shift --role target --n 300 --no-outcome --out scen.csv", {"scen.csv"}},
        {"--seed 5 train --source src.csv --target tgt.csv --flags mmd,coral,dann --out-dir train" + tiny,
         {"train/model.ckpt", "train/run_log.jsonl", "train/summary.json"}},
        {"--seed 5 --jobs 2 select --source src.csv --target tgt.csv --grid lr=1e-3,2e-3 --grid flags=none,mmd"
         " --out-dir select" + tiny,
         {"select/selection.csv", "select/selection.json", "select/winner.ckpt"}},
        {"--seed 7 --jobs 2 ablate --source src.csv --target tgt.csv --seeds 0,1 --combinations none mmd"
         " dann mmd+coral+dann --out-dir ablate" + tiny,
         {"ablate/ablation.csv", "ablate/ablation.json", "ablate/ablation.txt"}},
        {"drift --source src.csv --target tgt.csv --max-rows 300 --out drift.json", {"drift.json"}},
    };
}

std::map<std::string, std::string> run_cli_suite(const std::filesystem::path& dir, std::string& error) {
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    std::map<std::string, std::string> hashes;
    for (const auto& run : cli_runs()) {
        const std::string cmd = "cd '" + dir.string() + "' && '" + HFDA_CLI_PATH + "' " + run.args + " > /dev/null";
        if (std::system(cmd.c_str()) != 0) {
            error = "command failed: hfda " + run.args;
            return {};
        }
        for (const auto& a : run.artifacts) {
            std::ifstream in(dir / a, std::ios::binary);
            std::ostringstream os;
            os << in.rdbuf();
            if (!in) {
                error = "missing artifact " + a;
                return {};
            }
            hashes[a] = hex64(fnv1a64(os.str()));
        }
    }
    return hashes;
}

std::map<std::string, std::string> read_golden(const std::string& path) {
    std::map<std::string, std::string> g;
    std::ifstream in(path);
    std::string name, hash;
    while (in >> name >> hash) {
        if (name.front() == '#') {
            std::getline(in, name);
            continue;
        }
        g[name] = hash;
    }
    return g;
}

Verdict ac8_cli_determinism(bool freeze) {
    const std::filesystem::path work(HFDA_WORK_DIR);
    std::string error;
    const auto first = run_cli_suite(work / "run1", error);
    if (!error.empty()) return {false, error};
    const auto second = run_cli_suite(work / "run2", error);
    if (!error.empty()) return {false, error};
    if (first != second) return {false, "repeated invocations produced different artifacts"};
    if (freeze) {
        std::ofstream out(HFDA_GOLDEN_PATH);
        out << "# artifact FNV-1a-64 hashes of the acceptance CLI runs\n";
        for (const auto& [name, hash] : first) out << name << " " << hash << "\n";
        return {true, "froze " + std::to_string(first.size()) + " hashes to " + HFDA_GOLDEN_PATH};
    }
    const auto golden = read_golden(HFDA_GOLDEN_PATH);
    if (golden.empty()) return {false, std::string("no golden hashes at ") + HFDA_GOLDEN_PATH};
    std::size_t mismatches = 0;
    std::string which;
    for (const auto& [name, hash] : first) {
        const auto it = golden.find(name);
        if (it == golden.end() || it->second != hash) {
            ++mismatches;
            which += " " + name;
        }
    }
    if (golden.size() != first.size()) ++mismatches;
    return {mismatches == 0, std::to_string(first.size()) + " artifacts repeat byte-identically; golden " +
                                 (mismatches == 0 ? "match" : "MISMATCH:" + which)};
}

// --- AC9 -----------------------------------------------------------------------------

Verdict ac9_statistics() {
    SeededRng rng(9009, Stream::Synth);
    int auc_mismatch = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + rng.uniform_index(49);
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = trial % 3 == 0 ? std::floor(rng.uniform() * 5) : rng.normal();
            y[i] = rng.uniform() < 0.4;
        }
        y[0] = 1;
        y[1] = 0;
        auc_mismatch += auc(s, y) != oracle::auc_oracle(s, y);
    }
    double t_err = 0.0;
    for (const auto& p : reference::kTPoints) t_err = std::max(t_err, std::abs(t_cdf(p.t, p.df) - p.cdf));
    const TTestResult t = paired_t_test(std::vector<double>{0.1, 0.12, 0.08, 0.11, 0.09});
    const bool ok = auc_mismatch == 0 && t_err <= 1e-10 && std::abs(t.t - 14.142) <= 1e-3 && t.p < 1e-3;
    return {ok, "auc mismatches " + std::to_string(auc_mismatch) + "/500, t_cdf max error " + fmt("%.1e", t_err) +
                    ", paired t " + fmt("%.4f", t.t) + " p " + fmt("%.3g", t.p)};
}

// --- AC10 ----------------------------------------------------------------------------

Verdict ac10_half_split() {
    std::size_t violations = 0, checks = 0;
    for (const auto& [n, k] : std::vector<std::pair<std::size_t, std::size_t>>{{410, 5}, {210, 3}}) {
        Matrix x(n, kNumFeatures);
        std::vector<int> y(n, 0);
        for (std::size_t i = 0; i < k; ++i) y[i * (n / k)] = 1;
        const CohortTable c(x, y, FeatureSchema::builtin(), "split");
        for (std::uint64_t seed = 0; seed < 1000; ++seed) {
            const SplitResult s = stratified_half_split(c, seed);
            const std::size_t a = s.pseudo_indices.size(), b = s.eval_indices.size();
            std::set<std::size_t> all(s.pseudo_indices.begin(), s.pseudo_indices.end());
            all.insert(s.eval_indices.begin(), s.eval_indices.end());
            ++checks;
            const bool ok = (a > b ? a - b : b - a) <= 1 && all.size() == n && a + b == n &&
                            s.pseudo_train.count_positive() >= 1 && s.evaluation.count_positive() >= 1;
            violations += !ok;
        }
    }
    return {violations == 0, std::to_string(violations) + " violations over " + std::to_string(checks) + " splits"};
}

} // namespace

int main(int argc, char** argv) {
    std::set<std::string> only;
    bool freeze = false;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--freeze-golden") {
            freeze = true;
        } else {
            only.insert(a);
        }
    }
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"AC1", ac1_gradients},
        {"AC2", ac2_mmd},
        {"AC3", ac3_coral},
        {"AC4", ac4_outcome_free},
        {"AC5", ac5_selection},
        {"AC6", ac6_direction},
        {"AC7", ac7_baseline_equivalence},
        {"AC8", [freeze] { return ac8_cli_determinism(freeze); }},
        {"AC9", ac9_statistics},
        {"AC10", ac10_half_split},
    };
    int failures = 0;
    for (const auto& [name, check] : criteria) {
        if (!only.empty() && !only.count(name)) continue;
        Verdict v;
        try {
            v = check();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failures += !v.pass;
        std::cout << name << " " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
