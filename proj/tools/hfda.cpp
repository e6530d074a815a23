// hfda: synthetic cohorts, training, outcome-free selection, ablation and
// drift reports from the command line.
//
// Exit codes: 0 success, 1 usage error, 2 data/schema error, 3 numerical failure.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hfda/commands.hpp"

using namespace hfda;
using namespace hfda::cli;

namespace {

void add_train_options(CLI::App* sub, TrainOverrides& o) {
    sub->add_option("--profile", o.profile, "female or male defaults (male: batch norm, batch 128)")
        ->capture_default_str();
    // Config files split unquoted comma lists; joining restores "mmd,coral".
    sub->add_option("--flags", o.flags, "alignment modules, e.g. none, mmd, mmd,coral,dann")
        ->capture_default_str()
        ->delimiter(',')
        ->multi_option_policy(CLI::MultiOptionPolicy::Join);
    sub->add_option("--lr", o.learning_rate, "learning rate");
    sub->add_option("--wd", o.weight_decay, "AdamW weight decay");
    sub->add_option("--batch", o.batch_size, "batch size (fixed at 128 for the male profile)");
    sub->add_option("--embedding", o.embedding, "hidden and embedding width");
    sub->add_option("--epochs", o.max_epochs, "maximum epochs");
    sub->add_option("--patience", o.patience, "early-stopping patience in epochs");
    sub->add_option("--clip", o.clip, "global gradient-norm clip threshold");
    sub->add_option("--dropout", o.dropout, "dropout rate");
    sub->add_option("--norm", o.norm, "none, layer or batch");
    sub->add_option("--lambda-mmd", o.lambda_mmd, "MMD weight");
    sub->add_option("--lambda-coral", o.lambda_coral, "CORAL weight");
    sub->add_option("--lambda-grl", o.lambda_grl, "maximum GRL coefficient of the ramp");
    sub->add_option("--coral-q", o.coral_q, "CORAL norm exponent q");
    sub->add_option("--omega", o.omega, "positive-class weight (default n_neg/n_pos)");
    sub->add_option("--validation-fraction", o.validation_fraction, "held-out share of the source");
    sub->add_option("--standardize-inputs", o.standardize_inputs, "z-score inputs with source moments");
}

void add_io_options(CLI::App* sub, std::string& source, std::string& target, std::string& schema) {
    sub->add_option("--source", source, "labeled source CSV")->required();
    sub->add_option("--target", target, "target CSV")->required();
    sub->add_option("--schema", schema, "schema file (default: built-in 12-feature schema)");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Outcome-free domain adaptation for hip-fracture risk models"};
    app.set_config("--config", "", "INI/TOML file; [synth], [train], ... sections hold subcommand keys");
    app.require_subcommand(1);
    app.fallthrough();
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    app.add_option("--seed", seed, "seed for every random stream of the command")->capture_default_str();
    app.add_option("--jobs", jobs, "worker threads for independent runs")->capture_default_str()
        ->check(CLI::PositiveNumber);

    SynthOptions so;
    std::string so_out;
    bool no_outcome = false;
    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort CSV");
    synth->add_option("--spec", so.spec, "built-in spec: sof-like, mros-like, ukb-female-like, ukb-male-like")
        ->capture_default_str();
    synth->add_option("--spec-file", so.spec_file, "overrides on top of --spec (key = value lines)");
    synth->add_option("--scenario", so.scenario, "scanner-shift: source/target pair with a lumbar-BMD offset");
    synth->add_option("--role", so.role, "source or target side of --scenario")->capture_default_str();
    synth->add_option("--n", so.n, "rows")->required();
    synth->add_option("--prevalence", so.prevalence, "recalibrate the intercept to this outcome rate");
    synth->add_flag("--no-outcome", no_outcome, "omit the outcome column");
    synth->add_option("--out", so.out, "output CSV")->required();

    TrainOverrides tov;
    TrainCommand tc;
    auto* train_cmd = app.add_subcommand("train", "train one configuration; writes checkpoint and run log");
    add_io_options(train_cmd, tc.source, tc.target, tc.schema);
    add_train_options(train_cmd, tov);
    train_cmd->add_option("--out-dir", tc.out_dir, "output directory")->required();

    TrainOverrides sov;
    SelectCommand sc;
    auto* select_cmd = app.add_subcommand("select", "outcome-free grid selection by embedding MMD");
    add_io_options(select_cmd, sc.source, sc.target, sc.schema);
    add_train_options(select_cmd, sov);
    select_cmd->add_option("--grid", sc.grid,
                           "axis=v1,v2 (axes: lr, wd, batch, embedding, flags with '+' joins); "
                           "unnamed axes keep the base value; no --grid gives the default grid");
    select_cmd->add_option("--out-dir", sc.out_dir, "output directory")->required();

    TrainOverrides aov;
    AblateCommand ac;
    std::string seeds_text = "0,1,2,3,4";
    std::vector<std::string> combos;
    bool custom_weights = false;
    auto* ablate_cmd = app.add_subcommand("ablate", "train every module combination over several seeds");
    add_io_options(ablate_cmd, ac.source, ac.target, ac.schema);
    add_train_options(ablate_cmd, aov);
    ablate_cmd->add_option("--seeds", seeds_text, "comma-separated training seeds")->capture_default_str();
    ablate_cmd->add_option("--combinations", combos, "subset of combinations (default all 8), e.g. none mmd+dann");
    ablate_cmd->add_option("--threshold", ac.threshold, "decision threshold")->capture_default_str();
    ablate_cmd->add_flag("--custom-weights", custom_weights,
                         "use the --lambda-* values for every row instead of the per-combination presets");
    ablate_cmd->add_option("--out-dir", ac.out_dir, "output directory")->required();

    DriftCommand dc;
    auto* drift_cmd = app.add_subcommand("drift", "raw-feature shift between two schema-matched tables");
    drift_cmd->add_option("--source", dc.source, "first CSV")->required();
    drift_cmd->add_option("--target", dc.target, "second CSV")->required();
    drift_cmd->add_option("--schema", dc.schema, "schema file (default: built-in)");
    drift_cmd->add_option("--max-rows", dc.max_rows, "rows per table used for MMD^2 and CORAL")
        ->capture_default_str();
    drift_cmd->add_option("--out", dc.out, "output JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*synth) {
            so.seed = seed;
            so.with_outcome = !no_outcome;
            cmd_synth(so, std::cout);
        } else if (*train_cmd) {
            tc.config = build_train_config(tov, seed);
            cmd_train(tc, std::cout);
        } else if (*select_cmd) {
            sc.base = build_train_config(sov, seed);
            sc.jobs = jobs;
            cmd_select(sc, std::cout);
        } else if (*ablate_cmd) {
            ac.base = build_train_config(aov, seed);
            ac.seeds = parse_seed_list(seeds_text);
            if (!combos.empty()) {
                ac.combinations.clear();
                for (const auto& c : combos) ac.combinations.push_back(parse_flags(c));
            }
            ac.split_seed = seed;
            ac.preset_weights = !custom_weights;
            ac.jobs = jobs;
            cmd_ablate(ac, std::cout);
        } else if (*drift_cmd) {
            dc.seed = seed;
            cmd_drift(dc, std::cout);
        }
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}
