#pragma once

// Training loop: weighted source batches paired with uniform target batches,
// composite loss, global-norm clipping, AdamW, GRL ramp, and early stopping
// on a stratified source-validation split.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "hfda/audit.hpp"
#include "hfda/cohort.hpp"
#include "hfda/error.hpp"
#include "hfda/losses.hpp"
#include "hfda/matrix.hpp"
#include "hfda/network.hpp"
#include "hfda/rng.hpp"
#include "hfda/stats.hpp"

namespace hfda {

enum class SexProfile { Female, Male, Custom };

inline std::string_view to_string(SexProfile p) noexcept {
    switch (p) {
    case SexProfile::Female:
        return "female";
    case SexProfile::Male:
        return "male";
    case SexProfile::Custom:
        return "custom";
    }
    return "?";
}

inline SexProfile parse_sex_profile(std::string_view text) {
    if (text == "female") return SexProfile::Female;
    if (text == "male") return SexProfile::Male;
    if (text == "custom") return SexProfile::Custom;
    throw std::invalid_argument("unknown profile '" + std::string(text) + "'");
}

inline constexpr double kPairedWeight = 0.7;        // MMD / CORAL with >= 2 modules
inline constexpr double kGrlWeightFemale = 0.7;
inline constexpr double kGrlWeightMale = 0.8;
inline constexpr double kSingleModuleWeight = 0.5;  // exactly one module active
inline constexpr std::size_t kMaleBatchSize = 128;

// Module-count heuristic for the alignment weights. omega and q keep their
// defaults; the trainer fills omega from the class balance.
inline LossWeights lambda_preset(const AlignmentFlags& flags, SexProfile profile) {
    LossWeights w;
    if (flags.count() == 1) {
        w.mmd = flags.mmd ? kSingleModuleWeight : 0.0;
        w.coral = flags.coral ? kSingleModuleWeight : 0.0;
        w.grl = flags.dann ? kSingleModuleWeight : 0.0;
    } else if (flags.count() >= 2) {
        w.mmd = flags.mmd ? kPairedWeight : 0.0;
        w.coral = flags.coral ? kPairedWeight : 0.0;
        w.grl = flags.dann ? (profile == SexProfile::Male ? kGrlWeightMale : kGrlWeightFemale) : 0.0;
    }
    return w;
}

// lambda(e) = lambda_max (2 / (1 + exp(-10 e / E)) - 1)
inline double grl_schedule(std::size_t epoch, std::size_t max_epochs, double lambda_max) {
    if (max_epochs == 0 || epoch > max_epochs) {
        throw std::invalid_argument("grl_schedule: need 0 <= epoch <= max_epochs, max_epochs >= 1");
    }
    const double x = -10.0 * static_cast<double>(epoch) / static_cast<double>(max_epochs);
    return lambda_max * (2.0 / (1.0 + std::exp(x)) - 1.0);
}

struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-5;
    std::size_t batch_size = 64;
    std::size_t embedding = 256;  // hidden width h = embedding width p
    std::size_t max_epochs = 200;
    std::size_t patience = 20;
    double clip = 1.0;
    double dropout = kDefaultDropout;
    NormKind norm = NormKind::Layer;
    LossWeights weights;  // weights.grl is lambda_max of the GRL ramp
    AlignmentFlags flags;
    SexProfile profile = SexProfile::Female;
    std::uint64_t seed = 0;
    double validation_fraction = 0.1;
    std::optional<double> omega;  // overrides n_neg / n_pos
    std::vector<std::size_t> discriminator_hidden;  // empty: one layer of width p
    bool standardize_inputs = true;  // z-score inputs with source-training moments

    // Published defaults for a profile: female uses layer norm and batch 64,
    // male uses batch norm and batch 128. Weights follow lambda_preset.
    static TrainConfig for_profile(SexProfile profile, AlignmentFlags flags = {}) {
        TrainConfig c;
        c.profile = profile;
        c.flags = flags;
        c.weights = lambda_preset(flags, profile);
        if (profile == SexProfile::Male) {
            c.norm = NormKind::Batch;
            c.batch_size = kMaleBatchSize;
        }
        return c;
    }

    // Batch size actually used: the male profile pins it at 128.
    std::size_t effective_batch_size() const noexcept {
        return profile == SexProfile::Male ? kMaleBatchSize : batch_size;
    }

    void validate() const {
        if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
        if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be >= 0");
        if (effective_batch_size() < 2) throw std::invalid_argument("batch size must be >= 2");
        if (embedding < 1) throw std::invalid_argument("embedding size must be >= 1");
        if (max_epochs < 1) throw std::invalid_argument("max epochs must be >= 1");
        if (patience < 1) throw std::invalid_argument("patience must be >= 1");
        if (!(clip > 0.0)) throw std::invalid_argument("clip threshold must be > 0");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
        if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
            throw std::invalid_argument("validation fraction must lie in (0, 1)");
        }
        if (omega && !(*omega > 0.0)) throw std::invalid_argument("omega must be > 0");
        LossWeights w = weights;
        w.omega = 1.0;
        w.validate();
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json j;
    j["learning_rate"] = c.learning_rate;
    j["weight_decay"] = c.weight_decay;
    j["batch_size"] = c.effective_batch_size();
    j["embedding"] = c.embedding;
    j["max_epochs"] = c.max_epochs;
    j["patience"] = c.patience;
    j["clip"] = c.clip;
    j["dropout"] = c.dropout;
    j["norm"] = std::string(to_string(c.norm));
    j["flags"] = c.flags.to_string();
    j["lambda_mmd"] = c.weights.mmd;
    j["lambda_coral"] = c.weights.coral;
    j["lambda_grl_max"] = c.weights.grl;
    j["coral_q"] = c.weights.q;
    j["profile"] = std::string(to_string(c.profile));
    j["seed"] = c.seed;
    j["validation_fraction"] = c.validation_fraction;
    j["omega"] = c.omega ? nlohmann::json(*c.omega) : nlohmann::json(nullptr);
    j["discriminator_hidden"] = c.discriminator_hidden;
    j["standardize_inputs"] = c.standardize_inputs;
    return j;
}

// --- optimizer --------------------------------------------------------------------

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One decoupled-weight-decay Adam update of a single array at step t (t >= 1):
//   theta <- theta - lr m_hat / (sqrt(v_hat) + eps) - lr wd theta
inline void adamw_update(Matrix& theta, const Matrix& grad, Matrix& m, Matrix& v, std::uint64_t t,
                         double lr, double wd, const AdamHyper& h = {}) {
    require_shape(theta.same_shape(grad) && theta.same_shape(m) && theta.same_shape(v),
                  "AdamW moments/gradient vs parameter");
    if (t == 0) {
        throw std::invalid_argument("adamw_update: step counter starts at 1");
    }
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = grad[i];
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        const double old = theta[i];
        theta[i] = old - lr * m_hat / (std::sqrt(v_hat) + h.eps) - lr * wd * old;
    }
}

struct OptimizerState {
    ModelParams m;
    ModelParams v;
    std::uint64_t t = 0;
    AdamHyper hyper;

    static OptimizerState for_params(const ModelParams& p) {
        return {p.zeros_like(), p.zeros_like(), 0, {}};
    }
};

// Which parameter groups a run updates: the discriminator only under DANN.
inline bool group_active(ParamGroup g, const AlignmentFlags& flags) noexcept {
    return g != ParamGroup::Discriminator || flags.dann;
}

inline void adamw_step(ModelParams& params, const ModelParams& grads, OptimizerState& state,
                       double lr, double wd, const AlignmentFlags& flags) {
    auto p = params.arrays();
    const auto g = grads.arrays();
    auto m = state.m.arrays();
    auto v = state.v.arrays();
    require_shape(p.size() == g.size() && p.size() == m.size() && p.size() == v.size(),
                  "AdamW parameter list");
    ++state.t;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (group_active(p[i].group, flags)) {
            adamw_update(*p[i].array, *g[i].array, *m[i].array, *v[i].array, state.t, lr, wd,
                         state.hyper);
        }
    }
}

inline double global_norm(const ModelParams& grads, const AlignmentFlags& flags) {
    double s = 0.0;
    for (const auto& a : grads.arrays()) {
        if (group_active(a.group, flags)) {
            for (double x : a.array->values()) s += x * x;
        }
    }
    return std::sqrt(s);
}

// Rescales the active gradients so their global L2 norm is at most
// `threshold`. Returns the norm before clipping.
inline double clip_gradients(ModelParams& grads, double threshold, const AlignmentFlags& flags) {
    if (!(threshold > 0.0)) {
        throw std::invalid_argument("clip threshold must be > 0");
    }
    const double norm = global_norm(grads, flags);
    if (norm > threshold) {
        const double scale = threshold / norm;
        for (auto& a : grads.arrays()) {
            if (group_active(a.group, flags)) {
                for (auto& x : a.array->values()) x *= scale;
            }
        }
    }
    return norm;
}

// --- data plumbing ------------------------------------------------------------------

// Target-domain features with no outcome column. Construction from a table
// that carries outcomes throws LeakageError, and the type has no way to
// reach an outcome afterwards.
class UnlabeledCohort {
public:
    explicit UnlabeledCohort(const CohortTable& table) : features_(table.features()), label_(table.label()) {
        if (table.has_outcome()) {
            throw LeakageError("target table '" + table.label() +
                               "' carries an outcome column; target outcomes must not enter training");
        }
    }

    const Matrix& features() const noexcept { return features_; }
    const std::string& label() const noexcept { return label_; }
    std::size_t rows() const noexcept { return features_.rows(); }

private:
    Matrix features_;
    std::string label_;
};

struct ValidationSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

// Per class: shuffle, send round(fraction * k) rows to validation while
// keeping at least one row of the class in training.
inline ValidationSplit stratified_validation_split(std::span<const int> labels, double fraction,
                                                   std::uint64_t seed) {
    SeededRng rng(seed, Stream::ValidationSplit);
    std::vector<std::size_t> cls[2];
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) {
            throw DataError("source outcome must be 0/1 in every row");
        }
        cls[labels[i]].push_back(i);
    }
    ValidationSplit out;
    for (auto& rows : cls) {
        rng.shuffle(std::span<std::size_t>(rows));
        const double want = std::floor(fraction * static_cast<double>(rows.size()) + 0.5);
        std::size_t n_val = static_cast<std::size_t>(want);
        if (!rows.empty() && n_val >= rows.size()) n_val = rows.size() - 1;
        out.validation.insert(out.validation.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_val));
        out.train.insert(out.train.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_val), rows.end());
    }
    if (out.validation.empty() && cls[0].size() > 1) {
        // tiny sources: hold out one negative so the early-stopping signal exists
        const auto it = std::find(out.train.begin(), out.train.end(), cls[0].front());
        out.validation.push_back(*it);
        out.train.erase(it);
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.validation.begin(), out.validation.end());
    return out;
}

// --- training ------------------------------------------------------------------------

struct EpochRecord {
    std::size_t epoch = 0;
    LossReport loss;         // means over the epoch's batches
    double lambda_grl = 0.0; // scheduled GRL coefficient in this epoch
    double validation_loss = 0.0;
    double grad_norm = 0.0;          // largest pre-clip norm in the epoch
    double grad_norm_clipped = 0.0;  // largest post-clip norm in the epoch
};

struct TrainedModel {
    ModelParams params;  // best epoch
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_validation_loss = std::numeric_limits<double>::infinity();
    TrainConfig config;
    double omega = 1.0;
};

inline Matrix embed(const ModelParams& params, const Matrix& x) {
    return extract(params.extractor, x, Mode::Eval);
}

inline std::vector<double> predict(const ModelParams& params, const Matrix& x) {
    return classify(params.classifier, embed(params, x));
}

namespace detail {

inline void check_source(const CohortTable& source) {
    if (!source.has_outcome()) {
        throw DataError("source table '" + source.label() + "' has no outcome column");
    }
    if (source.rows() == 0) {
        throw DataError("source table '" + source.label() + "' is empty");
    }
    if (!all_finite(source.features())) {
        throw DataError("source table '" + source.label() + "' has missing or non-finite features");
    }
}

// Column means and sample SDs of the training rows; a constant column gets
// scale 1.
inline void fit_input_standardization(ExtractorParams& g, const Matrix& x) {
    g.input_shift = Matrix(1, x.cols());
    g.input_scale = Matrix(1, x.cols(), 1.0);
    std::vector<double> column(x.rows());
    for (std::size_t j = 0; j < x.cols(); ++j) {
        for (std::size_t i = 0; i < x.rows(); ++i) column[i] = x(i, j);
        g.input_shift[j] = mean(column);
        const double sd = x.rows() > 1 ? sample_sd(column) : 0.0;
        if (sd > 0.0) g.input_scale[j] = sd;
    }
}

inline double validation_loss(const ModelParams& params, const Matrix& x, std::span<const int> y,
                              double omega) {
    return weighted_bce(predict(params, x), y, omega);
}

// kAlignment = false removes every alignment code path at compile time; it
// exists so the baseline trajectory can be checked against the full build.
template <bool kAlignment>
TrainedModel train_impl(const CohortTable& source, const UnlabeledCohort& target,
                        const TrainConfig& config) {
    config.validate();
    check_source(source);
    if (target.rows() == 0 && config.flags.any()) {
        throw DataError("target table '" + target.label() + "' is empty");
    }
    if (target.features().cols() != source.features().cols()) {
        throw SchemaError("source and target have different feature counts", "");
    }
    if (!all_finite(target.features())) {
        throw DataError("target table '" + target.label() + "' has missing or non-finite features");
    }
    audit::record("train-begin:" + source.label());

    const std::vector<int>& y_all = source.outcome();
    const ValidationSplit split =
        stratified_validation_split(y_all, config.validation_fraction, config.seed);
    const Matrix x_train = select_rows(source.features(), split.train);
    const Matrix x_val = select_rows(source.features(), split.validation);
    std::vector<int> y_train, y_val;
    for (auto i : split.train) y_train.push_back(y_all[i]);
    for (auto i : split.validation) y_val.push_back(y_all[i]);

    std::size_t n_pos = 0;
    for (int v : y_train) n_pos += v == 1;
    const std::size_t n_neg = y_train.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw DataError("source training split needs both outcome classes");
    }

    TrainedModel out;
    out.config = config;
    out.config.batch_size = config.effective_batch_size();
    out.omega = config.omega ? *config.omega
                             : static_cast<double>(n_neg) / static_cast<double>(n_pos);

    const std::size_t p = config.embedding;
    ModelParams params = init_params(config.seed, source.features().cols(), p, p, config.norm,
                                     config.dropout, config.discriminator_hidden);
    if (config.standardize_inputs) {
        fit_input_standardization(params.extractor, x_train);
    }
    OptimizerState opt = OptimizerState::for_params(params);
    WeightedBatchSampler sampler(y_train, out.config.batch_size, config.seed);
    SeededRng target_rng(config.seed, Stream::TargetBatches);
    const std::uint64_t dropout_root = derive_seed(config.seed, static_cast<std::uint64_t>(Stream::Dropout));

    LossSpec spec;
    spec.mode = Mode::Train;
    spec.weights = config.weights;
    spec.weights.omega = out.omega;
    if constexpr (kAlignment) {
        spec.flags = config.flags;
    }

    out.params = params;
    std::size_t since_best = 0;
    std::uint64_t step = 0;
    std::vector<std::size_t> target_idx(out.config.batch_size);

    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        if constexpr (kAlignment) {
            rec.lambda_grl =
                spec.flags.dann ? grl_schedule(epoch, config.max_epochs, config.weights.grl) : 0.0;
            spec.weights.grl = rec.lambda_grl;
        }
        const std::size_t batches = sampler.batches_per_epoch();
        for (std::size_t b = 0; b < batches; ++b, ++step) {
            const std::vector<std::size_t> idx = sampler.next_batch();
            const Matrix xs = select_rows(x_train, idx);
            std::vector<int> ys(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) ys[i] = y_train[idx[i]];
            spec.dropout_seed = derive_seed(dropout_root, step);

            StepResult r;
            if constexpr (kAlignment) {
                if (spec.flags.any()) {
                    for (auto& t : target_idx) t = target_rng.uniform_index(target.rows());
                    const Matrix xt = select_rows(target.features(), target_idx);
                    r = forward_backward<true>(params, xs, ys, &xt, spec);
                } else {
                    r = forward_backward<true>(params, xs, ys, nullptr, spec);
                }
            } else {
                r = forward_backward<false>(params, xs, ys, nullptr, spec);
            }
            if (!std::isfinite(r.loss.total)) {
                throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(b));
            }
            const double norm = clip_gradients(r.grads, config.clip, spec.flags);
            if (!std::isfinite(norm)) {
                throw NumericalError("non-finite gradient at epoch " + std::to_string(epoch));
            }
            const double clipped = global_norm(r.grads, spec.flags);
            rec.grad_norm = std::max(rec.grad_norm, norm);
            rec.grad_norm_clipped = std::max(rec.grad_norm_clipped, clipped);

            adamw_step(params, r.grads, opt, config.learning_rate, config.weight_decay, spec.flags);
            update_batch_norm(params.extractor, r.source_cache);
            if constexpr (kAlignment) {
                if (spec.flags.any()) update_batch_norm(params.extractor, r.target_cache);
            }
            rec.loss.task += r.loss.task;
            rec.loss.mmd2 += r.loss.mmd2;
            rec.loss.coral += r.loss.coral;
            rec.loss.domain += r.loss.domain;
            rec.loss.total += r.loss.total;
        }
        const double nb = static_cast<double>(batches);
        rec.loss.task /= nb;
        rec.loss.mmd2 /= nb;
        rec.loss.coral /= nb;
        rec.loss.domain /= nb;
        rec.loss.total /= nb;

        rec.validation_loss = validation_loss(params, x_val, y_val, out.omega);
        if (!std::isfinite(rec.validation_loss)) {
            throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch));
        }
        out.history.push_back(rec);
        if (rec.validation_loss < out.best_validation_loss) {
            out.best_validation_loss = rec.validation_loss;
            out.best_epoch = epoch;
            out.params = params;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    audit::record("train-end:" + source.label());
    return out;
}

} // namespace detail

// Trains on a labeled source and an outcome-free target. The target's
// features are only used by active alignment terms.
inline TrainedModel train(const CohortTable& source, const UnlabeledCohort& target,
                          const TrainConfig& config) {
    return detail::train_impl<true>(source, target, config);
}

// Convenience overload; rejects a target that carries outcomes.
inline TrainedModel train(const CohortTable& source, const CohortTable& target,
                          const TrainConfig& config) {
    return train(source, UnlabeledCohort(target), config);
}

// Same loop with every alignment path removed at compile time.
inline TrainedModel train_baseline_only(const CohortTable& source, const UnlabeledCohort& target,
                                        const TrainConfig& config) {
    return detail::train_impl<false>(source, target, config);
}

// --- run log -------------------------------------------------------------------------

// One JSON object per epoch. Terms of inactive modules are null.
inline void write_run_log(std::ostream& out, const TrainedModel& model) {
    const AlignmentFlags& f = model.config.flags;
    const LossWeights& w = model.config.weights;
    auto term = [](bool on, double v) { return on ? nlohmann::json(v) : nlohmann::json(nullptr); };
    for (const auto& r : model.history) {
        nlohmann::json j;
        j["epoch"] = r.epoch;
        j["task"] = r.loss.task;
        j["mmd2"] = term(f.mmd, r.loss.mmd2);
        j["coral"] = term(f.coral, r.loss.coral);
        j["domain"] = term(f.dann, r.loss.domain);
        j["total"] = r.loss.total;
        j["lambda_mmd"] = term(f.mmd, w.mmd);
        j["lambda_coral"] = term(f.coral, w.coral);
        j["lambda_grl"] = term(f.dann, r.lambda_grl);
        j["validation_loss"] = r.validation_loss;
        j["grad_norm"] = r.grad_norm;
        j["grad_norm_clipped"] = r.grad_norm_clipped;
        out << j.dump() << "\n";
    }
}

} // namespace hfda
