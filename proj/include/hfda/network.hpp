#pragma once

// The three-part model: feature extractor G, classifier C and domain
// discriminator D, with cached forward passes and hand-written reverse-mode
// gradients.
//
//   G(x) = Norm2(Dropout(ReLU(Norm1(x W1 + b1))) W2 + b2)
//   C(h) = sigmoid(h w + b)
//   D(h) = sigmoid(ReLU(h V1 + c1) V2 + c2)
//
// Between G and D sits the gradient-reversal layer: identity forward,
// -lambda times the gradient backward.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "hfda/losses.hpp"
#include "hfda/matrix.hpp"
#include "hfda/rng.hpp"

namespace hfda {

enum class NormKind { None, Layer, Batch };

inline std::string_view to_string(NormKind kind) noexcept {
    switch (kind) {
    case NormKind::None:
        return "none";
    case NormKind::Layer:
        return "layer";
    case NormKind::Batch:
        return "batch";
    }
    return "?";
}

inline NormKind parse_norm_kind(std::string_view text) {
    if (text == "none") return NormKind::None;
    if (text == "layer") return NormKind::Layer;
    if (text == "batch") return NormKind::Batch;
    throw std::invalid_argument("unknown norm kind '" + std::string(text) + "'");
}

enum class Mode { Train, Eval };

inline constexpr double kNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kDefaultDropout = 0.1;

struct Dense {
    Matrix weight;  // fan_in x fan_out
    Matrix bias;    // 1 x fan_out

    friend bool operator==(const Dense&, const Dense&) = default;
};

// Affine part of a normalization layer; both empty when the norm kind is none.
struct NormAffine {
    Matrix scale;
    Matrix shift;

    friend bool operator==(const NormAffine&, const NormAffine&) = default;
};

struct BatchNormState {
    Matrix running_mean;  // 1 x width
    Matrix running_var;   // 1 x width
    double momentum = kBatchNormMomentum;

    friend bool operator==(const BatchNormState&, const BatchNormState&) = default;
};

struct ExtractorParams {
    Dense layer1;
    NormAffine norm1;
    Dense layer2;
    NormAffine norm2;
    NormKind norm = NormKind::Layer;
    double dropout = kDefaultDropout;
    BatchNormState bn1;
    BatchNormState bn2;
    // Fixed input standardization x -> (x - input_shift) / input_scale, fitted
    // on the source training rows; empty means identity.
    Matrix input_shift;
    Matrix input_scale;

    std::size_t input_dim() const noexcept { return layer1.weight.rows(); }
    std::size_t hidden() const noexcept { return layer1.weight.cols(); }
    std::size_t embedding() const noexcept { return layer2.weight.cols(); }

    friend bool operator==(const ExtractorParams&, const ExtractorParams&) = default;
};

struct ClassifierParams {
    Matrix weight;  // p x 1
    Matrix bias;    // 1 x 1

    friend bool operator==(const ClassifierParams&, const ClassifierParams&) = default;
};

struct DiscriminatorParams {
    std::vector<Dense> layers;  // ReLU between layers; the last has one output

    friend bool operator==(const DiscriminatorParams&, const DiscriminatorParams&) = default;
};

enum class ParamGroup { Extractor, Classifier, Discriminator };

template <class M>
struct ArrayRef {
    std::string name;
    ParamGroup group;
    M* array;
};

struct ModelParams {
    ExtractorParams extractor;
    ClassifierParams classifier;
    DiscriminatorParams discriminator;

    // Trainable arrays in a fixed order. Batch-norm running statistics are
    // state, not parameters, and are not listed.
    std::vector<ArrayRef<Matrix>> arrays() { return collect<Matrix>(*this); }
    std::vector<ArrayRef<const Matrix>> arrays() const { return collect<const Matrix>(*this); }

    // Same shapes, all zeros; used as the gradient container.
    ModelParams zeros_like() const {
        ModelParams z = *this;
        for (auto& a : z.arrays()) {
            a.array->fill(0.0);
        }
        return z;
    }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;

private:
    template <class M, class P>
    static std::vector<ArrayRef<M>> collect(P& p) {
        std::vector<ArrayRef<M>> out;
        auto add = [&](std::string name, ParamGroup g, M& m) {
            if (!m.empty()) {
                out.push_back({std::move(name), g, &m});
            }
        };
        auto& e = p.extractor;
        add("extractor.layer1.weight", ParamGroup::Extractor, e.layer1.weight);
        add("extractor.layer1.bias", ParamGroup::Extractor, e.layer1.bias);
        add("extractor.norm1.scale", ParamGroup::Extractor, e.norm1.scale);
        add("extractor.norm1.shift", ParamGroup::Extractor, e.norm1.shift);
        add("extractor.layer2.weight", ParamGroup::Extractor, e.layer2.weight);
        add("extractor.layer2.bias", ParamGroup::Extractor, e.layer2.bias);
        add("extractor.norm2.scale", ParamGroup::Extractor, e.norm2.scale);
        add("extractor.norm2.shift", ParamGroup::Extractor, e.norm2.shift);
        add("classifier.weight", ParamGroup::Classifier, p.classifier.weight);
        add("classifier.bias", ParamGroup::Classifier, p.classifier.bias);
        for (std::size_t i = 0; i < p.discriminator.layers.size(); ++i) {
            const std::string prefix = "discriminator.layer" + std::to_string(i);
            add(prefix + ".weight", ParamGroup::Discriminator, p.discriminator.layers[i].weight);
            add(prefix + ".bias", ParamGroup::Discriminator, p.discriminator.layers[i].bias);
        }
        return out;
    }
};

// --- initialization -------------------------------------------------------------

namespace detail {

inline Dense init_dense(SeededRng& rng, std::size_t fan_in, std::size_t fan_out) {
    Dense d{Matrix(fan_in, fan_out), Matrix(1, fan_out)};
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& w : d.weight.values()) {
        w = rng.uniform(-bound, bound);
    }
    return d;
}

inline NormAffine init_norm(NormKind kind, std::size_t width) {
    if (kind == NormKind::None) {
        return {};
    }
    return {Matrix(1, width, 1.0), Matrix(1, width, 0.0)};
}

inline BatchNormState init_batch_norm_state(NormKind kind, std::size_t width) {
    if (kind != NormKind::Batch) {
        return {};
    }
    return {Matrix(1, width, 0.0), Matrix(1, width, 1.0), kBatchNormMomentum};
}

} // namespace detail

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0, norm scale 1 and
// shift 0. The discriminator gets one ReLU hidden layer per entry of
// `discriminator_hidden` (default: one layer of width p).
inline ModelParams init_params(std::uint64_t seed, std::size_t d, std::size_t h, std::size_t p,
                               NormKind norm, double dropout = kDefaultDropout,
                               std::vector<std::size_t> discriminator_hidden = {}) {
    if (d < 1 || h < 1 || p < 1) {
        throw std::invalid_argument("init_params: widths must be >= 1");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw std::invalid_argument("init_params: dropout must lie in [0, 1)");
    }
    if (discriminator_hidden.empty()) {
        discriminator_hidden.push_back(p);
    }
    SeededRng rng(seed, Stream::Init);
    ModelParams m;
    auto& e = m.extractor;
    e.norm = norm;
    e.dropout = dropout;
    e.layer1 = detail::init_dense(rng, d, h);
    e.norm1 = detail::init_norm(norm, h);
    e.layer2 = detail::init_dense(rng, h, p);
    e.norm2 = detail::init_norm(norm, p);
    e.bn1 = detail::init_batch_norm_state(norm, h);
    e.bn2 = detail::init_batch_norm_state(norm, p);

    Dense c = detail::init_dense(rng, p, 1);
    m.classifier = {std::move(c.weight), std::move(c.bias)};

    std::size_t fan_in = p;
    for (std::size_t width : discriminator_hidden) {
        if (width < 1) {
            throw std::invalid_argument("init_params: discriminator widths must be >= 1");
        }
        m.discriminator.layers.push_back(detail::init_dense(rng, fan_in, width));
        fan_in = width;
    }
    m.discriminator.layers.push_back(detail::init_dense(rng, fan_in, 1));
    return m;
}

// --- normalization ----------------------------------------------------------------

struct NormCache {
    Matrix xhat;
    Matrix inv_std;     // rows x 1 (layer) or 1 x width (batch)
    Matrix batch_mean;  // batch norm, train mode
    Matrix batch_var;   // biased batch variance, train mode
};

namespace detail {

inline Matrix norm_forward(const Matrix& a, const NormAffine& affine, NormKind kind, Mode mode,
                           const BatchNormState& state, NormCache& cache) {
    const std::size_t n = a.rows();
    const std::size_t w = a.cols();
    if (kind == NormKind::None) {
        return a;
    }
    cache.xhat = Matrix(n, w);
    if (kind == NormKind::Layer) {
        cache.inv_std = Matrix(n, 1);
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = a.row(i);
            double mu = 0.0;
            for (double v : r) mu += v;
            mu /= static_cast<double>(w);
            double var = 0.0;
            for (double v : r) var += (v - mu) * (v - mu);
            var /= static_cast<double>(w);
            const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
            cache.inv_std(i, 0) = inv;
            for (std::size_t j = 0; j < w; ++j) {
                cache.xhat(i, j) = (r[j] - mu) * inv;
            }
        }
    } else if (mode == Mode::Train) {
        if (n < 2) {
            throw std::invalid_argument("batch normalization needs a batch of at least 2 rows in train mode");
        }
        cache.inv_std = Matrix(1, w);
        cache.batch_mean = Matrix(1, w);
        cache.batch_var = Matrix(1, w);
        for (std::size_t j = 0; j < w; ++j) {
            double mu = 0.0;
            for (std::size_t i = 0; i < n; ++i) mu += a(i, j);
            mu /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i) var += (a(i, j) - mu) * (a(i, j) - mu);
            var /= static_cast<double>(n);
            const double inv = 1.0 / std::sqrt(var + kNormEpsilon);
            cache.batch_mean[j] = mu;
            cache.batch_var[j] = var;
            cache.inv_std[j] = inv;
            for (std::size_t i = 0; i < n; ++i) {
                cache.xhat(i, j) = (a(i, j) - mu) * inv;
            }
        }
    } else {
        cache.inv_std = Matrix(1, w);
        for (std::size_t j = 0; j < w; ++j) {
            const double inv = 1.0 / std::sqrt(state.running_var[j] + kNormEpsilon);
            cache.inv_std[j] = inv;
            for (std::size_t i = 0; i < n; ++i) {
                cache.xhat(i, j) = (a(i, j) - state.running_mean[j]) * inv;
            }
        }
    }
    Matrix y(n, w);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            y(i, j) = affine.scale[j] * cache.xhat(i, j) + affine.shift[j];
        }
    }
    return y;
}

// Returns dL/da and accumulates the affine gradients.
inline Matrix norm_backward(const Matrix& dy, const NormAffine& affine, NormKind kind, Mode mode,
                            const NormCache& cache, NormAffine& grad) {
    if (kind == NormKind::None) {
        return dy;
    }
    const std::size_t n = dy.rows();
    const std::size_t w = dy.cols();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            grad.scale[j] += dy(i, j) * cache.xhat(i, j);
            grad.shift[j] += dy(i, j);
        }
    }
    Matrix da(n, w);
    if (kind == NormKind::Layer) {
        const double dw = static_cast<double>(w);
        for (std::size_t i = 0; i < n; ++i) {
            double m1 = 0.0;
            double m2 = 0.0;
            for (std::size_t j = 0; j < w; ++j) {
                const double g = dy(i, j) * affine.scale[j];
                m1 += g;
                m2 += g * cache.xhat(i, j);
            }
            m1 /= dw;
            m2 /= dw;
            const double inv = cache.inv_std(i, 0);
            for (std::size_t j = 0; j < w; ++j) {
                const double g = dy(i, j) * affine.scale[j];
                da(i, j) = inv * (g - m1 - cache.xhat(i, j) * m2);
            }
        }
    } else if (mode == Mode::Train) {
        const double dn = static_cast<double>(n);
        for (std::size_t j = 0; j < w; ++j) {
            double m1 = 0.0;
            double m2 = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double g = dy(i, j) * affine.scale[j];
                m1 += g;
                m2 += g * cache.xhat(i, j);
            }
            m1 /= dn;
            m2 /= dn;
            const double inv = cache.inv_std[j];
            for (std::size_t i = 0; i < n; ++i) {
                const double g = dy(i, j) * affine.scale[j];
                da(i, j) = inv * (g - m1 - cache.xhat(i, j) * m2);
            }
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                da(i, j) = dy(i, j) * affine.scale[j] * cache.inv_std[j];
            }
        }
    }
    return da;
}

inline Matrix affine_forward(const Matrix& x, const Dense& layer) {
    require_shape(x.cols() == layer.weight.rows(), "layer input width");
    Matrix a = matmul(x, layer.weight);
    add_row_vector(a, layer.bias);
    return a;
}

// Accumulates weight/bias gradients and returns dL/dx.
inline Matrix affine_backward(const Matrix& x, const Matrix& da, const Dense& layer, Dense& grad) {
    axpy(1.0, matmul_tn(x, da), grad.weight);
    axpy(1.0, column_sums(da), grad.bias);
    return matmul_nt(da, layer.weight);
}

} // namespace detail

// --- extractor -----------------------------------------------------------------------

struct ExtractorCache {
    Mode mode = Mode::Eval;
    Matrix x;
    Matrix a1;    // x W1 + b1
    NormCache n1;
    Matrix z1;    // Norm1(a1)
    Matrix mask;  // inverted-dropout multipliers; empty when no dropout
    Matrix r1;    // Dropout(ReLU(z1))
    Matrix a2;    // r1 W2 + b2
    NormCache n2;
};

// H = G(X). Train mode applies dropout with a mask drawn from `dropout_seed`
// and batch statistics for batch norm; eval mode is deterministic.
inline Matrix extract(const ExtractorParams& g, const Matrix& x, Mode mode,
                      std::uint64_t dropout_seed = 0, ExtractorCache* cache = nullptr) {
    if (x.cols() != g.input_dim()) {
        throw std::invalid_argument("dimension mismatch: extractor expects " +
                                    std::to_string(g.input_dim()) + " input columns, got " +
                                    std::to_string(x.cols()));
    }
    ExtractorCache local;
    ExtractorCache& c = cache ? *cache : local;
    c.mode = mode;
    c.x = x;
    if (!g.input_shift.empty()) {
        require_shape(g.input_shift.size() == x.cols() && g.input_scale.size() == x.cols(),
                      "input standardization width");
        for (std::size_t i = 0; i < x.rows(); ++i) {
            auto r = c.x.row(i);
            for (std::size_t j = 0; j < r.size(); ++j) {
                r[j] = (r[j] - g.input_shift[j]) / g.input_scale[j];
            }
        }
    }
    c.a1 = detail::affine_forward(c.x, g.layer1);
    c.z1 = detail::norm_forward(c.a1, g.norm1, g.norm, mode, g.bn1, c.n1);
    c.r1 = c.z1;
    for (auto& v : c.r1.values()) {
        v = v > 0.0 ? v : 0.0;
    }
    c.mask = Matrix();
    if (mode == Mode::Train && g.dropout > 0.0) {
        SeededRng rng(dropout_seed, Stream::Dropout);
        const double keep_scale = 1.0 / (1.0 - g.dropout);
        c.mask = Matrix(c.r1.rows(), c.r1.cols());
        for (std::size_t i = 0; i < c.mask.size(); ++i) {
            c.mask[i] = rng.uniform() >= g.dropout ? keep_scale : 0.0;
            c.r1[i] *= c.mask[i];
        }
    }
    c.a2 = detail::affine_forward(c.r1, g.layer2);
    return detail::norm_forward(c.a2, g.norm2, g.norm, mode, g.bn2, c.n2);
}

// Accumulates dL/dtheta_g into `grad` given dL/dH for the cached pass.
inline void extractor_backward(const ExtractorParams& g, const ExtractorCache& c, const Matrix& dh,
                               ExtractorParams& grad) {
    require_shape(dh.rows() == c.a2.rows() && dh.cols() == c.a2.cols(), "extractor gradient");
    Matrix da2 = detail::norm_backward(dh, g.norm2, g.norm, c.mode, c.n2, grad.norm2);
    Matrix dr1 = detail::affine_backward(c.r1, da2, g.layer2, grad.layer2);
    for (std::size_t i = 0; i < dr1.size(); ++i) {
        if (!c.mask.empty()) {
            dr1[i] *= c.mask[i];
        }
        if (!(c.z1[i] > 0.0)) {
            dr1[i] = 0.0;
        }
    }
    Matrix da1 = detail::norm_backward(dr1, g.norm1, g.norm, c.mode, c.n1, grad.norm1);
    detail::affine_backward(c.x, da1, g.layer1, grad.layer1);
}

// Folds the batch statistics of a train-mode pass into the running estimates
// (unbiased variance, exponential moving average with the state's momentum).
inline void update_batch_norm(ExtractorParams& g, const ExtractorCache& c) {
    if (g.norm != NormKind::Batch || c.mode != Mode::Train) {
        return;
    }
    auto fold = [](BatchNormState& s, const NormCache& nc, std::size_t n) {
        const double m = s.momentum;
        const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
        for (std::size_t j = 0; j < s.running_mean.size(); ++j) {
            s.running_mean[j] = (1.0 - m) * s.running_mean[j] + m * nc.batch_mean[j];
            s.running_var[j] = (1.0 - m) * s.running_var[j] + m * nc.batch_var[j] * unbias;
        }
    };
    fold(g.bn1, c.n1, c.a1.rows());
    fold(g.bn2, c.n2, c.a2.rows());
}

// --- classifier and discriminator ------------------------------------------------------

inline std::vector<double> classifier_logits(const ClassifierParams& c, const Matrix& h) {
    require_shape(h.cols() == c.weight.rows(), "classifier input width");
    const Matrix z = matmul(h, c.weight);
    std::vector<double> out(h.rows());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = z[i] + c.bias[0];
    }
    return out;
}

// Clipped probabilities sigmoid(w.h + b), strictly inside (0, 1).
inline std::vector<double> classify(const ClassifierParams& c, const Matrix& h) {
    std::vector<double> p = classifier_logits(c, h);
    for (auto& v : p) {
        v = clip_probability(stable_sigmoid(v));
    }
    return p;
}

struct MlpCache {
    std::vector<Matrix> inputs;  // input of each layer
    std::vector<Matrix> pre;     // pre-activation of each layer
};

inline std::vector<double> discriminator_logits(const DiscriminatorParams& d, const Matrix& h,
                                                MlpCache* cache = nullptr) {
    if (d.layers.empty()) {
        throw std::invalid_argument("discriminator has no layers");
    }
    require_shape(h.cols() == d.layers.front().weight.rows(), "discriminator input width");
    if (cache) {
        cache->inputs.clear();
        cache->pre.clear();
    }
    Matrix x = h;
    for (std::size_t l = 0; l < d.layers.size(); ++l) {
        Matrix a = detail::affine_forward(x, d.layers[l]);
        if (cache) {
            cache->inputs.push_back(x);
            cache->pre.push_back(a);
        }
        if (l + 1 < d.layers.size()) {
            for (auto& v : a.values()) {
                v = v > 0.0 ? v : 0.0;
            }
        }
        x = std::move(a);
    }
    return std::vector<double>(x.storage().begin(), x.storage().end());
}

inline std::vector<double> discriminate(const DiscriminatorParams& d, const Matrix& h) {
    std::vector<double> p = discriminator_logits(d, h);
    for (auto& v : p) {
        v = clip_probability(stable_sigmoid(v));
    }
    return p;
}

// Backpropagates dL/dlogit through the discriminator. Parameter gradients are
// accumulated scaled by `param_scale`; the returned dL/dH is unscaled.
inline Matrix discriminator_backward(const DiscriminatorParams& d, const MlpCache& cache,
                                     std::span<const double> d_logits, DiscriminatorParams& grad,
                                     double param_scale) {
    Matrix da(d_logits.size(), 1, std::vector<double>(d_logits.begin(), d_logits.end()));
    for (std::size_t l = d.layers.size(); l-- > 0;) {
        if (l + 1 < d.layers.size()) {
            const Matrix& pre = cache.pre[l];
            for (std::size_t i = 0; i < da.size(); ++i) {
                if (!(pre[i] > 0.0)) {
                    da[i] = 0.0;
                }
            }
        }
        Dense g{Matrix(d.layers[l].weight.rows(), d.layers[l].weight.cols()),
                Matrix(1, d.layers[l].bias.cols())};
        Matrix dx = detail::affine_backward(cache.inputs[l], da, d.layers[l], g);
        axpy(param_scale, g.weight, grad.layers[l].weight);
        axpy(param_scale, g.bias, grad.layers[l].bias);
        da = std::move(dx);
    }
    return da;
}

// --- gradient reversal ------------------------------------------------------------------

inline const Matrix& grl_forward(const Matrix& h) noexcept { return h; }

inline Matrix grl_backward(const Matrix& upstream, double lambda) {
    if (!(lambda >= 0.0)) {
        throw std::invalid_argument("grl_backward: lambda must be non-negative");
    }
    Matrix g = upstream;
    for (auto& v : g.values()) {
        v = -lambda * v;
    }
    return g;
}

inline double grl_backward(double upstream, double lambda) {
    if (!(lambda >= 0.0)) {
        throw std::invalid_argument("grl_backward: lambda must be non-negative");
    }
    return -lambda * upstream;
}

// --- full objective -----------------------------------------------------------------------

struct LossSpec {
    AlignmentFlags flags;
    LossWeights weights;  // weights.grl is the current (scheduled) GRL coefficient
    Mode mode = Mode::Train;
    std::uint64_t dropout_seed = 0;
};

struct StepResult {
    LossReport loss;
    ModelParams grads;
    ExtractorCache source_cache;
    ExtractorCache target_cache;  // empty unless an alignment term is active
};

// Composite loss on one (source, target) batch pair and its exact gradients.
//   theta_g, theta_c:  d/dtheta [task + l_M MMD^2 + l_C CORAL] plus the
//                      reversed domain gradient -l_G dLdom/dH through G
//   theta_d:           l_G dLdom/dtheta_d
// With kAlignment = false every alignment branch is compiled out and the
// target batch is ignored.
template <bool kAlignment = true>
StepResult forward_backward(const ModelParams& params, const Matrix& xs, std::span<const int> ys,
                            const Matrix* xt, const LossSpec& spec) {
    if (xs.rows() != ys.size()) {
        throw std::invalid_argument("dimension mismatch: source rows vs labels");
    }
    StepResult out;
    out.grads = params.zeros_like();
    const Matrix hs =
        extract(params.extractor, xs, spec.mode, derive_seed(spec.dropout_seed, 0), &out.source_cache);

    const std::vector<double> logits = classifier_logits(params.classifier, hs);
    const LogitLoss task = weighted_bce_logits(logits, ys, spec.weights.omega);
    out.loss.task = task.value;

    // classifier gradients and dL/dHs from the task term
    const Matrix dz(hs.rows(), 1, task.d_logits);
    axpy(1.0, matmul_tn(hs, dz), out.grads.classifier.weight);
    for (double v : task.d_logits) {
        out.grads.classifier.bias[0] += v;
    }
    Matrix dhs = matmul_nt(dz, params.classifier.weight);

    if constexpr (kAlignment) {
        const AlignmentFlags& f = spec.flags;
        if (f.any()) {
            if (xt == nullptr || xt->rows() == 0) {
                throw std::invalid_argument("alignment terms need a target batch");
            }
            const Matrix ht = extract(params.extractor, *xt, spec.mode,
                                      derive_seed(spec.dropout_seed, 1), &out.target_cache);
            Matrix dht(ht.rows(), ht.cols());
            const LossWeights& w = spec.weights;
            if (f.mmd) {
                const EmbeddingLoss m = mmd2_multiscale_with_grad(hs, ht);
                out.loss.mmd2 = m.value;
                axpy(w.mmd, m.d_source, dhs);
                axpy(w.mmd, m.d_target, dht);
            }
            if (f.coral) {
                const EmbeddingLoss c = coral_with_grad(hs, ht, w.q);
                out.loss.coral = c.value;
                axpy(w.coral, c.d_source, dhs);
                axpy(w.coral, c.d_target, dht);
            }
            if (f.dann) {
                const Matrix pooled = vstack(grl_forward(hs), grl_forward(ht));
                MlpCache mc;
                const std::vector<double> dl = discriminator_logits(params.discriminator, pooled, &mc);
                std::vector<int> domain(pooled.rows(), 1);
                std::fill(domain.begin(), domain.begin() + static_cast<std::ptrdiff_t>(hs.rows()), 0);
                const LogitLoss dom = domain_bce_logits(dl, domain);
                out.loss.domain = dom.value;
                const Matrix dpooled = discriminator_backward(params.discriminator, mc, dom.d_logits,
                                                              out.grads.discriminator, w.grl);
                const Matrix reversed = grl_backward(dpooled, w.grl);
                for (std::size_t i = 0; i < hs.rows(); ++i) {
                    const auto src = reversed.row(i);
                    auto dst = dhs.row(i);
                    for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
                }
                for (std::size_t i = 0; i < ht.rows(); ++i) {
                    const auto src = reversed.row(hs.rows() + i);
                    auto dst = dht.row(i);
                    for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
                }
            }
            extractor_backward(params.extractor, out.target_cache, dht, out.grads.extractor);
        }
        out.loss.total = composite(out.loss.task, out.loss.mmd2, out.loss.coral, out.loss.domain,
                                   spec.weights, spec.flags);
    } else {
        out.loss.total = out.loss.task;
    }
    extractor_backward(params.extractor, out.source_cache, dhs, out.grads.extractor);
    return out;
}

} // namespace hfda
