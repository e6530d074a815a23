#pragma once

// The five command-line operations (synth, train, select, ablate, drift)
// without argument parsing. Each writes its data artifacts plus a
// `.meta.json` sidecar; timestamps live only in the sidecar, so data files
// are byte-identical across repeated runs.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hfda/checkpoint.hpp"
#include "hfda/cohort.hpp"
#include "hfda/error.hpp"
#include "hfda/evaluation.hpp"
#include "hfda/losses.hpp"
#include "hfda/schema.hpp"
#include "hfda/selection.hpp"
#include "hfda/synth.hpp"
#include "hfda/trainer.hpp"
#include "json.hpp"

namespace hfda::cli {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

inline constexpr const char* kToolVersion = "1.0.0";

// --- file helpers -----------------------------------------------------------------

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open '" + path + "'");
    }
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::filesystem::create_directories(p.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << bytes)) {
        throw DataError("cannot write '" + path + "'");
    }
}

inline std::string file_hash(const std::string& path) { return hex64(fnv1a64(read_file(path))); }

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

// Sidecar with run metadata, the invocation and hashes of the artifacts.
inline void write_meta(const std::string& path, const std::string& command, const nlohmann::json& args,
                       const std::vector<std::string>& artifacts) {
    nlohmann::json j;
    j["tool"] = "hfda";
    j["version"] = kToolVersion;
    j["command"] = command;
    j["arguments"] = args;
    j["created_utc"] = utc_timestamp();
    nlohmann::json hashes = nlohmann::json::object();
    for (const auto& a : artifacts) {
        hashes[std::filesystem::path(a).filename().string()] = file_hash(a);
    }
    j["artifacts"] = hashes;
    write_file(path, j.dump(2) + "\n");
}

inline std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

inline FeatureSchema schema_from(const std::string& path) {
    return path.empty() ? FeatureSchema::builtin() : load_schema(path);
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size() || item.front() == '-') {
            throw std::invalid_argument("seed list entries must be non-negative integers, got '" + item + "'");
        }
        out.push_back(v);
    }
    if (out.empty()) {
        throw std::invalid_argument("seed list is empty");
    }
    return out;
}

// "mmd+coral" and "mmd,coral" both name the same combination.
inline AlignmentFlags parse_flags(std::string text) {
    for (auto& c : text) {
        if (c == '+') c = ',';
    }
    return AlignmentFlags::parse(text);
}

// --- training options ----------------------------------------------------------------

// Values given on the command line or in a config file. Unset fields keep the
// profile defaults of TrainConfig::for_profile.
struct TrainOverrides {
    std::string profile = "female";
    std::string flags = "none";
    std::optional<double> learning_rate, weight_decay, clip, dropout, validation_fraction, omega;
    std::optional<double> lambda_mmd, lambda_coral, lambda_grl, coral_q;
    std::optional<std::size_t> batch_size, embedding, max_epochs, patience;
    std::optional<std::string> norm;
    std::optional<bool> standardize_inputs;
};

inline TrainConfig build_train_config(const TrainOverrides& o, std::uint64_t seed) {
    const SexProfile profile = parse_sex_profile(o.profile);
    TrainConfig c = TrainConfig::for_profile(profile, parse_flags(o.flags));
    c.seed = seed;
    if (o.learning_rate) c.learning_rate = *o.learning_rate;
    if (o.weight_decay) c.weight_decay = *o.weight_decay;
    if (o.clip) c.clip = *o.clip;
    if (o.dropout) c.dropout = *o.dropout;
    if (o.validation_fraction) c.validation_fraction = *o.validation_fraction;
    if (o.omega) c.omega = *o.omega;
    if (o.lambda_mmd) c.weights.mmd = *o.lambda_mmd;
    if (o.lambda_coral) c.weights.coral = *o.lambda_coral;
    if (o.lambda_grl) c.weights.grl = *o.lambda_grl;
    if (o.coral_q) c.weights.q = *o.coral_q;
    if (o.batch_size) c.batch_size = *o.batch_size;
    if (o.embedding) c.embedding = *o.embedding;
    if (o.max_epochs) c.max_epochs = *o.max_epochs;
    if (o.patience) c.patience = *o.patience;
    if (o.norm) c.norm = parse_norm_kind(*o.norm);
    if (o.standardize_inputs) c.standardize_inputs = *o.standardize_inputs;
    c.validate();
    return c;
}

// --- synth -------------------------------------------------------------------------

struct SynthOptions {
    std::string spec = spec_names::kSof;  // built-in spec name
    std::string spec_file;                // overrides applied on top of `spec`
    std::string scenario;                 // "scanner-shift" replaces spec/spec_file
    std::string role = "source";          // scenario side: source or target
    std::size_t n = 1000;
    std::uint64_t seed = 0;
    std::optional<double> prevalence;     // recalibrate the intercept to this rate
    bool with_outcome = true;
    std::string out;
};

struct SynthSummary {
    std::string spec;
    std::size_t rows = 0;
    std::size_t positives = 0;
    bool with_outcome = true;
};

inline SynthSummary cmd_synth(const SynthOptions& o, std::ostream& log) {
    if (o.out.empty()) throw std::invalid_argument("synth: --out is required");
    if (o.n < 1) throw std::invalid_argument("synth: --n must be at least 1");
    FeatureSpecSet spec;
    OutcomeModel model = OutcomeModel::clinical_default();
    if (!o.scenario.empty()) {
        if (o.scenario != "scanner-shift") {
            throw std::invalid_argument("synth: unknown scenario '" + o.scenario + "'");
        }
        const ShiftScenario s = scanner_shift_scenario();
        if (o.role == "source") {
            spec = s.source_spec;
            model = s.source_outcome;
        } else if (o.role == "target") {
            spec = s.target_spec;
            model = s.target_outcome;
        } else {
            throw std::invalid_argument("synth: --role must be source or target");
        }
    } else {
        spec = builtin_spec(o.spec);
        if (!o.spec_file.empty()) {
            const SpecFile f = load_spec_file(o.spec_file, spec, model);
            spec = f.spec;
            model = f.outcome;
        }
    }
    if (o.prevalence) {
        if (!(*o.prevalence > 0.0 && *o.prevalence < 1.0)) {
            throw std::invalid_argument("synth: --prevalence must lie in (0, 1)");
        }
        model.intercept = calibrate_intercept(spec, model, *o.prevalence);
    }
    CohortTable t = generate(spec, model, o.n, o.seed);
    SynthSummary s{spec.name, t.rows(), 0, o.with_outcome};
    if (o.with_outcome) {
        s.positives = t.count_positive();
    } else {
        t = t.without_outcome(spec.name);
    }
    std::ostringstream os;
    write_cohort(os, t);
    write_file(o.out, os.str());
    write_meta(o.out + ".meta.json", "synth",
               {{"spec", spec.name}, {"spec_file", o.spec_file}, {"scenario", o.scenario},
                {"role", o.role}, {"n", o.n}, {"seed", o.seed}, {"with_outcome", o.with_outcome},
                {"intercept", model.intercept}},
               {o.out});
    log << "wrote " << s.rows << " rows of '" << s.spec << "' to " << o.out;
    if (o.with_outcome) {
        log << " (" << s.positives << " positives, prevalence " << std::fixed << std::setprecision(4)
            << static_cast<double>(s.positives) / static_cast<double>(s.rows) << ")";
        log.unsetf(std::ios::floatfield);
    }
    log << "\n";
    return s;
}

// --- train -------------------------------------------------------------------------

struct TrainCommand {
    std::string source, target, out_dir, schema;
    TrainConfig config;
};

inline CohortTable load_source(const std::string& path, const FeatureSchema& schema) {
    if (path.empty()) throw std::invalid_argument("--source is required");
    CohortTable t = load_cohort(path, schema, {',', "source", OutcomePolicy::IfPresent});
    if (!t.has_outcome()) {
        throw SchemaError("source file '" + path + "' has no '" + schema.outcome() + "' column",
                          schema.outcome());
    }
    return complete_case_filter(t).table;
}

// Target features only; an outcome column in the file is never read.
inline UnlabeledCohort load_target_features(const std::string& path, const FeatureSchema& schema) {
    if (path.empty()) throw std::invalid_argument("--target is required");
    const CohortTable t = load_cohort(path, schema, {',', "target", OutcomePolicy::Ignore});
    return UnlabeledCohort(complete_case_filter(t, false).table);
}

inline nlohmann::json train_summary(const TrainedModel& m) {
    return {{"config", to_json(m.config)},
            {"omega", m.omega},
            {"best_epoch", m.best_epoch},
            {"epochs_run", m.history.size()},
            {"best_validation_loss", m.best_validation_loss},
            {"checkpoint_hash", checkpoint_hash(m.params)}};
}

inline TrainedModel cmd_train(const TrainCommand& o, std::ostream& log) {
    if (o.out_dir.empty()) throw std::invalid_argument("train: --out-dir is required");
    const FeatureSchema schema = schema_from(o.schema);
    const CohortTable source = load_source(o.source, schema);
    const UnlabeledCohort target = load_target_features(o.target, schema);
    const TrainedModel m = train(source, target, o.config);

    const std::string ckpt = join_path(o.out_dir, "model.ckpt");
    const std::string runlog = join_path(o.out_dir, "run_log.jsonl");
    const std::string summary = join_path(o.out_dir, "summary.json");
    write_file(ckpt, checkpoint_string(m.params));
    std::ostringstream lg;
    write_run_log(lg, m);
    write_file(runlog, lg.str());
    write_file(summary, train_summary(m).dump(2) + "\n");
    write_meta(join_path(o.out_dir, "train.meta.json"), "train",
               {{"source", o.source}, {"target", o.target}, {"config", to_json(o.config)}},
               {ckpt, runlog, summary});
    log << "trained " << m.config.flags.to_string() << " for " << m.history.size()
        << " epochs; best epoch " << m.best_epoch << ", best validation loss "
        << std::setprecision(6) << m.best_validation_loss << "\n";
    log << "checkpoint " << ckpt << " (hash " << checkpoint_hash(m.params) << ")\n";
    return m;
}

// --- select ------------------------------------------------------------------------

struct SelectCommand {
    std::string source, target, out_dir, schema;
    TrainConfig base;
    std::vector<std::string> grid;  // "key=v1,v2"; empty means the default grid
    std::size_t jobs = 1;
};

// With no entries the default grid for the profile is used. Otherwise every
// axis not named keeps the single value of the base configuration.
inline GridSpec parse_grid(const std::vector<std::string>& entries, const TrainConfig& base) {
    GridSpec g;
    g.profile = base.profile;
    if (entries.empty()) {
        return g;
    }
    g.learning_rates = {base.learning_rate};
    g.weight_decays = {base.weight_decay};
    g.batch_sizes = {base.batch_size};
    g.embeddings = {base.embedding};
    g.flag_sets = {base.flags};
    for (const auto& e : entries) {
        const auto eq = e.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("grid entry '" + e + "' is not key=values");
        }
        const std::string key = e.substr(0, eq);
        std::vector<std::string> values;
        std::stringstream ss(e.substr(eq + 1));
        std::string v;
        while (std::getline(ss, v, ',')) values.push_back(v);
        if (values.empty()) {
            throw std::invalid_argument("grid entry '" + e + "' has no values");
        }
        auto to_double = [&](const std::string& s) {
            std::size_t used = 0;
            double x = 0;
            try {
                x = std::stod(s, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != s.size()) {
                throw std::invalid_argument("grid value '" + s + "' for '" + key + "' is not a number");
            }
            return x;
        };
        auto to_size = [&](const std::string& s) {
            const double x = to_double(s);
            if (!(x >= 1) || x != std::floor(x)) {
                throw std::invalid_argument("grid value '" + s + "' for '" + key + "' is not a positive integer");
            }
            return static_cast<std::size_t>(x);
        };
        if (key == "lr") {
            g.learning_rates.clear();
            for (const auto& s : values) g.learning_rates.push_back(to_double(s));
        } else if (key == "wd") {
            g.weight_decays.clear();
            for (const auto& s : values) g.weight_decays.push_back(to_double(s));
        } else if (key == "batch") {
            g.batch_sizes.clear();
            for (const auto& s : values) g.batch_sizes.push_back(to_size(s));
        } else if (key == "embedding") {
            g.embeddings.clear();
            for (const auto& s : values) g.embeddings.push_back(to_size(s));
        } else if (key == "flags") {
            g.flag_sets.clear();
            for (const auto& s : values) g.flag_sets.push_back(parse_flags(s));
        } else {
            throw std::invalid_argument("unknown grid axis '" + key + "' (lr, wd, batch, embedding, flags)");
        }
    }
    return g;
}

inline SelectionReport cmd_select(const SelectCommand& o, std::ostream& log) {
    if (o.out_dir.empty()) throw std::invalid_argument("select: --out-dir is required");
    const FeatureSchema schema = schema_from(o.schema);
    const std::vector<TrainConfig> configs = enumerate_grid(parse_grid(o.grid, o.base), o.base);
    const CohortTable source = load_source(o.source, schema);
    const UnlabeledCohort target = load_target_features(o.target, schema);
    const SelectionReport r = select(source, target, configs, o.base.seed, o.jobs, true);

    const std::string csv = join_path(o.out_dir, "selection.csv");
    const std::string json = join_path(o.out_dir, "selection.json");
    const std::string ckpt = join_path(o.out_dir, "winner.ckpt");
    std::ostringstream os;
    write_selection_csv(os, r);
    write_file(csv, os.str());
    write_file(json, to_json(r).dump(2) + "\n");
    write_file(ckpt, checkpoint_string(r.winning_model->params));
    write_meta(join_path(o.out_dir, "select.meta.json"), "select",
               {{"source", o.source}, {"target", o.target}, {"grid", o.grid}, {"base", to_json(o.base)}},
               {csv, json, ckpt});
    const SelectionRecord& w = r.records[r.winner];
    log << "evaluated " << r.records.size() << " configurations; winner #" << w.index << " (lr "
        << w.config.learning_rate << ", wd " << w.config.weight_decay << ", batch "
        << w.config.effective_batch_size() << ", embedding " << w.config.embedding << ", flags "
        << w.config.flags.to_string() << ") with delta " << std::setprecision(6) << w.delta << " ["
        << r.tie_break << "]\n";
    return r;
}

// --- ablate ------------------------------------------------------------------------

struct AblateCommand {
    std::string source, target, out_dir, schema;
    TrainConfig base;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::vector<AlignmentFlags> combinations = all_combinations();
    double threshold = kDefaultThreshold;
    std::uint64_t split_seed = 0;
    bool preset_weights = true;
    std::size_t jobs = 1;
};

inline AblationResult cmd_ablate(const AblateCommand& o, std::ostream& log) {
    if (o.out_dir.empty()) throw std::invalid_argument("ablate: --out-dir is required");
    const FeatureSchema schema = schema_from(o.schema);
    const CohortTable source = load_source(o.source, schema);
    if (o.target.empty()) throw std::invalid_argument("--target is required");
    const CohortTable target_full = load_cohort(o.target, schema, {',', "target", OutcomePolicy::IfPresent});
    if (!target_full.has_outcome()) {
        throw SchemaError("ablate needs the target outcome for the held-out evaluation half",
                          schema.outcome());
    }
    const CohortTable target = complete_case_filter(target_full).table;
    const SplitResult split = stratified_half_split(target, o.split_seed);

    AblationConfig ac;
    ac.base = o.base;
    ac.seeds = o.seeds;
    ac.combinations = o.combinations;
    ac.threshold = o.threshold;
    ac.jobs = o.jobs;
    ac.preset_weights = o.preset_weights;
    const AblationResult r =
        run_ablation(source, UnlabeledCohort(split.pseudo_train.without_outcome(split.pseudo_train.label())),
                     split.evaluation, ac);

    const std::string csv = join_path(o.out_dir, "ablation.csv");
    const std::string json = join_path(o.out_dir, "ablation.json");
    const std::string table = join_path(o.out_dir, "ablation.txt");
    std::ostringstream c, t;
    write_ablation_csv(c, r);
    render_ablation_table(t, r);
    write_file(csv, c.str());
    nlohmann::json j = to_json(r);
    j["split"] = {{"seed", o.split_seed},
                  {"pseudo_rows", split.pseudo_indices.size()},
                  {"evaluation_rows", split.eval_indices.size()}};
    write_file(json, j.dump(2) + "\n");
    write_file(table, t.str());
    write_meta(join_path(o.out_dir, "ablate.meta.json"), "ablate",
               {{"source", o.source}, {"target", o.target}, {"seeds", o.seeds}, {"base", to_json(o.base)}},
               {csv, json, table});
    log << t.str();
    return r;
}

// --- drift -------------------------------------------------------------------------

struct DriftCommand {
    std::string source, target, out, schema;
    std::size_t max_rows = 1000;  // per table, for the pairwise statistics
    std::uint64_t seed = 0;
};

namespace detail {

// Deterministic subsample without replacement, kept in file order. Tables
// of equal length get the same rows, so identical inputs stay identical.
inline Matrix subsample_rows(const Matrix& x, std::size_t max_rows, std::uint64_t seed) {
    if (x.rows() <= max_rows) return x;
    std::vector<std::size_t> idx(x.rows());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    SeededRng rng(seed, Stream::Subsample);
    rng.shuffle(std::span<std::size_t>(idx));
    idx.resize(max_rows);
    std::sort(idx.begin(), idx.end());
    return select_rows(x, idx);
}

} // namespace detail

inline nlohmann::json drift_report(const Matrix& source, const Matrix& target, const FeatureSchema& schema,
                                   std::size_t max_rows, std::uint64_t seed) {
    if (source.cols() != target.cols() || source.cols() != schema.size()) {
        throw SchemaError("drift: source and target columns do not match the schema", "");
    }
    if (source.rows() < 2 || target.rows() < 2) {
        throw DataError("drift: each table needs at least 2 complete rows");
    }
    if (max_rows < 2) throw std::invalid_argument("drift: --max-rows must be at least 2");
    const Matrix s = detail::subsample_rows(source, max_rows, seed);
    const Matrix t = detail::subsample_rows(target, max_rows, seed);
    nlohmann::json features = nlohmann::json::array();
    std::vector<double> a, b;
    for (std::size_t j = 0; j < schema.size(); ++j) {
        a.assign(source.rows(), 0.0);
        b.assign(target.rows(), 0.0);
        for (std::size_t i = 0; i < source.rows(); ++i) a[i] = source(i, j);
        for (std::size_t i = 0; i < target.rows(); ++i) b[i] = target(i, j);
        const double ms = mean(a), mt = mean(b), ss = sample_sd(a), st = sample_sd(b);
        features.push_back({{"feature", schema.feature(j).name},
                            {"source_mean", ms},
                            {"target_mean", mt},
                            {"mean_delta", mt - ms},
                            {"source_sd", ss},
                            {"target_sd", st},
                            {"sd_delta", st - ss}});
    }
    return {{"source_rows", source.rows()},
            {"target_rows", target.rows()},
            {"pairwise_rows", {{"source", s.rows()}, {"target", t.rows()}}},
            {"mmd2", mmd2_multiscale(s, t)},
            {"coral", coral(s, t)},
            {"features", features}};
}

inline nlohmann::json cmd_drift(const DriftCommand& o, std::ostream& log) {
    if (o.out.empty()) throw std::invalid_argument("drift: --out is required");
    if (o.source.empty() || o.target.empty()) throw std::invalid_argument("drift: --source and --target are required");
    const FeatureSchema schema = schema_from(o.schema);
    // Outcomes play no part in drift, so neither file's outcome column is read.
    const CohortTable s = load_cohort(o.source, schema, {',', "drift-source", OutcomePolicy::Ignore});
    const CohortTable t = load_cohort(o.target, schema, {',', "drift-target", OutcomePolicy::Ignore});
    const nlohmann::json r = drift_report(complete_case_filter(s, false).table.features(),
                                          complete_case_filter(t, false).table.features(), schema,
                                          o.max_rows, o.seed);
    write_file(o.out, r.dump(2) + "\n");
    write_meta(o.out + ".meta.json", "drift",
               {{"source", o.source}, {"target", o.target}, {"max_rows", o.max_rows}, {"seed", o.seed}},
               {o.out});
    log << "MMD^2 " << std::setprecision(6) << r["mmd2"].get<double>() << ", CORAL "
        << r["coral"].get<double>() << "\n";
    for (const auto& f : r["features"]) {
        log << "  " << std::left << std::setw(22) << f["feature"].get<std::string>() << std::right
            << " mean delta " << std::setw(10) << f["mean_delta"].get<double>() << "  sd delta "
            << std::setw(10) << f["sd_delta"].get<double>() << "\n";
    }
    return r;
}

} // namespace hfda::cli
