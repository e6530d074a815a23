// Quickstart: a scanner-shift source/target pair, outcome-free selection
// between the baseline and full alignment, then AUC on held-out target rows.

#include <iomanip>
#include <iostream>

#include "hfda/evaluation.hpp"
#include "hfda/selection.hpp"
#include "hfda/synth.hpp"
#include "hfda/trainer.hpp"

using namespace hfda;

int main() {
    const ShiftScenario s = scanner_shift_scenario();
    const CohortTable source = generate(s.source_spec, s.source_outcome, 2000, 1).relabeled("source");
    const CohortTable target = generate(s.target_spec, s.target_outcome, 2000, 2).relabeled("target");

    // Half of the target is used without labels for training; the other half
    // is only opened for the final evaluation.
    const SplitResult split = stratified_half_split(target, 3);
    const UnlabeledCohort unlabeled(split.pseudo_train.without_outcome("pseudo"));

    TrainConfig base = TrainConfig::for_profile(SexProfile::Female);
    base.embedding = 32;
    base.max_epochs = 20;
    TrainConfig aligned = base;
    aligned.flags = {true, true, true};
    aligned.weights = lambda_preset(aligned.flags, aligned.profile);

    const SelectionReport report = select(source, unlabeled, {base, aligned}, 0, 1, true);
    for (const auto& r : report.records) {
        std::cout << std::left << std::setw(16) << method_name(r.config.flags) << " delta " << std::fixed
                  << std::setprecision(4) << r.delta << "\n";
    }
    const TrainConfig& chosen = report.records[report.winner].config;
    std::cout << "selected: " << method_name(chosen.flags) << "\n";

    for (const TrainConfig& c : {base, aligned}) {
        const TrainedModel m = train(source, unlabeled, c);
        const auto scores = predict(m.params, split.evaluation.features());
        std::cout << std::left << std::setw(16) << method_name(c.flags) << " target AUC "
                  << auc(scores, split.evaluation.outcome()) << "\n";
    }
    return 0;
}
