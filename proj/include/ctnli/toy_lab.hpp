#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "ctnli/adapters.hpp"
#include "ctnli/corpus.hpp"
#include "ctnli/errors.hpp"
#include "ctnli/util.hpp"

namespace ctnli {

struct Matrix {
    int rows = 0, cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    bool operator==(const Matrix&) const = default;
};

inline std::vector<double> matvec(const Matrix& m, const std::vector<double>& v) {
    std::vector<double> out(static_cast<size_t>(m.rows), 0.0);
    for (int r = 0; r < m.rows; ++r) {
        double s = 0.0;
        for (int c = 0; c < m.cols; ++c) s += m.at(r, c) * v[static_cast<size_t>(c)];
        out[static_cast<size_t>(r)] = s;
    }
    return out;
}

inline std::vector<double> matvec_t(const Matrix& m, const std::vector<double>& v) {
    std::vector<double> out(static_cast<size_t>(m.cols), 0.0);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) out[static_cast<size_t>(c)] += m.at(r, c) * v[static_cast<size_t>(r)];
    return out;
}

struct TripletConfig {
    double margin = 1.0;
    int p = 2;
    double epsilon = 1e-7;
    double learning_rate = 1e-5;
    double weight_decay = 0.01;
    int epochs = 10;
    int grad_accumulation = 32;

    void validate() const {
        if (margin < 0) throw ConfigError("margin must be >= 0");
        if (p < 1) throw ConfigError("distance order p must be >= 1");
        if (epsilon <= 0) throw ConfigError("epsilon must be > 0");
    }
};

// d(u, v) = (sum |u_i - v_i|^p + eps)^(1/p)
inline double pair_distance(const std::vector<double>& u, const std::vector<double>& v,
                            int p, double epsilon) {
    if (u.size() != v.size()) throw DimensionMismatch("vector dimensions differ");
    double s = 0.0;
    for (size_t i = 0; i < u.size(); ++i) s += std::pow(std::abs(u[i] - v[i]), p);
    return std::pow(s + epsilon, 1.0 / p);
}

inline double triplet_loss(const std::vector<double>& a, const std::vector<double>& p_vec,
                           const std::vector<double>& n, const TripletConfig& cfg) {
    cfg.validate();
    double dp = pair_distance(a, p_vec, cfg.p, cfg.epsilon);
    double dn = pair_distance(a, n, cfg.p, cfg.epsilon);
    return std::max(0.0, dp - dn + cfg.margin);
}

struct TripletGrad {
    std::vector<double> a, p, n;
    bool active = false; // hinge strictly positive
};

inline TripletGrad triplet_grad(const std::vector<double>& a, const std::vector<double>& p_vec,
                                const std::vector<double>& n, const TripletConfig& cfg) {
    cfg.validate();
    size_t dim = a.size();
    TripletGrad g;
    g.a.assign(dim, 0.0);
    g.p.assign(dim, 0.0);
    g.n.assign(dim, 0.0);
    double dp = pair_distance(a, p_vec, cfg.p, cfg.epsilon);
    double dn = pair_distance(a, n, cfg.p, cfg.epsilon);
    if (dp - dn + cfg.margin <= 0.0) return g;
    g.active = true;
    // grad of d wrt its first argument, with delta = u - v
    auto dist_grad = [&](const std::vector<double>& u, const std::vector<double>& v, double d) {
        std::vector<double> out(dim, 0.0);
        double outer = std::pow(d, 1 - cfg.p); // (S+eps)^((1-p)/p)
        for (size_t i = 0; i < dim; ++i) {
            double delta = u[i] - v[i];
            double mag = std::pow(std::abs(delta), cfg.p - 1);
            out[i] = outer * mag * (delta > 0 ? 1.0 : delta < 0 ? -1.0 : 0.0);
        }
        return out;
    };
    auto gp = dist_grad(a, p_vec, dp);
    auto gn = dist_grad(a, n, dn);
    for (size_t i = 0; i < dim; ++i) {
        g.a[i] = gp[i] - gn[i];
        g.p[i] = -gp[i];
        g.n[i] = gn[i];
    }
    return g;
}

// Low-rank delta on the embedding table: delta = scale * B * A
struct LoraDelta {
    Matrix a; // r x vocab
    Matrix b; // d x r

    bool operator==(const LoraDelta&) const = default;
};

struct ToyEncoder {
    Matrix base; // d x vocab, frozen
    Matrix head; // 2 x d, frozen classifier for the LM-style objective
    int rank = 4;
    double alpha = 8.0;

    double scale() const { return alpha / rank; }
    int dim() const { return base.rows; }
    int vocab() const { return base.cols; }

    static ToyEncoder make(int dim, int vocab, int rank, double alpha, std::uint64_t seed) {
        ToyEncoder enc;
        enc.base = Matrix(dim, vocab);
        enc.head = Matrix(2, dim);
        enc.rank = rank;
        enc.alpha = alpha;
        SplitMix64 rng(seed);
        for (double& x : enc.base.data) x = rng.next_double() - 0.5;
        for (double& x : enc.head.data) x = rng.next_double() - 0.5;
        return enc;
    }

    // mean one-hot count vector over token positions
    std::vector<double> token_mix(const std::vector<int>& tokens) const {
        if (tokens.empty()) throw EmptyInput("empty token list");
        std::vector<double> m(static_cast<size_t>(vocab()), 0.0);
        for (int t : tokens) m[static_cast<size_t>(t)] += 1.0 / tokens.size();
        return m;
    }

    // mean over positions of (base + delta) embeddings
    std::vector<double> encode(const std::vector<int>& tokens, const LoraDelta& delta) const {
        auto m = token_mix(tokens);
        auto h = matvec(base, m);
        auto u = matvec(delta.a, m);
        auto bu = matvec(delta.b, u);
        for (size_t i = 0; i < h.size(); ++i) h[i] += scale() * bu[i];
        return h;
    }

    Matrix composed_delta(const LoraDelta& delta) const {
        Matrix out(dim(), vocab());
        for (int i = 0; i < dim(); ++i)
            for (int j = 0; j < vocab(); ++j) {
                double s = 0.0;
                for (int k = 0; k < rank; ++k) s += delta.b.at(i, k) * delta.a.at(k, j);
                out.at(i, j) = scale() * s;
            }
        return out;
    }
};

inline std::vector<double> softmax2(const std::vector<double>& z) {
    double m = std::max(z[0], z[1]);
    double e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
    return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

// negative log-likelihood of the gold label under the frozen head
inline double lm_loss(const ToyEncoder& encoder, const LoraDelta& delta,
                      const std::vector<int>& tokens, Label label) {
    auto h = encoder.encode(tokens, delta);
    auto z = matvec(encoder.head, h);
    auto prob = softmax2(z);
    int y = label == Label::Entailment ? 0 : 1;
    return -std::log(prob[static_cast<size_t>(y)]);
}

struct DeltaGrad {
    Matrix a; // same shape as LoraDelta.a
    Matrix b;
};

namespace detail {

// chain rule from dL/dh into the low-rank factors; h = base*m + scale*B*A*m
inline void accumulate_delta_grad(const ToyEncoder& enc, const LoraDelta& delta,
                                  const std::vector<double>& m, const std::vector<double>& gh,
                                  DeltaGrad& out) {
    auto u = matvec(delta.a, m);       // r
    auto btg = matvec_t(delta.b, gh);  // r
    double s = enc.scale();
    for (int i = 0; i < delta.b.rows; ++i)
        for (int k = 0; k < delta.b.cols; ++k)
            out.b.at(i, k) += s * gh[static_cast<size_t>(i)] * u[static_cast<size_t>(k)];
    for (int k = 0; k < delta.a.rows; ++k)
        for (int j = 0; j < delta.a.cols; ++j)
            out.a.at(k, j) += s * btg[static_cast<size_t>(k)] * m[static_cast<size_t>(j)];
}

} // namespace detail

inline DeltaGrad lm_grad(const ToyEncoder& enc, const LoraDelta& delta,
                         const std::vector<int>& tokens, Label label) {
    DeltaGrad g{Matrix(delta.a.rows, delta.a.cols), Matrix(delta.b.rows, delta.b.cols)};
    auto m = enc.token_mix(tokens);
    auto h = enc.encode(tokens, delta);
    auto prob = softmax2(matvec(enc.head, h));
    int y = label == Label::Entailment ? 0 : 1;
    std::vector<double> gz = {prob[0], prob[1]};
    gz[static_cast<size_t>(y)] -= 1.0;
    auto gh = matvec_t(enc.head, gz);
    detail::accumulate_delta_grad(enc, delta, m, gh, g);
    return g;
}

struct TripletSample {
    std::vector<int> anchor, positive, negative;
};

struct LmSample {
    std::vector<int> tokens;
    Label label = Label::Entailment;
};

inline double triplet_sample_loss(const ToyEncoder& enc, const LoraDelta& delta,
                                  const TripletSample& s, const TripletConfig& cfg) {
    return triplet_loss(enc.encode(s.anchor, delta), enc.encode(s.positive, delta),
                        enc.encode(s.negative, delta), cfg);
}

inline DeltaGrad triplet_sample_grad(const ToyEncoder& enc, const LoraDelta& delta,
                                     const TripletSample& s, const TripletConfig& cfg) {
    DeltaGrad g{Matrix(delta.a.rows, delta.a.cols), Matrix(delta.b.rows, delta.b.cols)};
    auto a = enc.encode(s.anchor, delta);
    auto p = enc.encode(s.positive, delta);
    auto n = enc.encode(s.negative, delta);
    auto tg = triplet_grad(a, p, n, cfg);
    if (!tg.active) return g;
    detail::accumulate_delta_grad(enc, delta, enc.token_mix(s.anchor), tg.a, g);
    detail::accumulate_delta_grad(enc, delta, enc.token_mix(s.positive), tg.p, g);
    detail::accumulate_delta_grad(enc, delta, enc.token_mix(s.negative), tg.n, g);
    return g;
}

enum class Objective { LM, Triplet };

struct TrainResult {
    LoraDelta delta;
    std::vector<double> loss_history; // mean loss per epoch
};

namespace detail {

inline LoraDelta init_delta(const ToyEncoder& enc, std::uint64_t seed) {
    LoraDelta d;
    d.a = Matrix(enc.rank, enc.vocab());
    d.b = Matrix(enc.dim(), enc.rank); // zero, so the initial delta is zero
    SplitMix64 rng(seed);
    for (double& x : d.a.data) x = 0.1 * (rng.next_double() - 0.5);
    return d;
}

template <typename Sample, typename LossFn, typename GradFn>
TrainResult train_loop(const ToyEncoder& enc, const std::vector<Sample>& data,
                       double lr, double weight_decay, int epochs, int accumulation,
                       std::uint64_t seed, LossFn&& loss_fn, GradFn&& grad_fn) {
    if (data.empty()) throw EmptyInput("no training samples");
    TrainResult result;
    result.delta = init_delta(enc, seed);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        double epoch_loss = 0.0;
        size_t i = 0;
        while (i < data.size()) {
            size_t group = std::min<size_t>(static_cast<size_t>(accumulation), data.size() - i);
            DeltaGrad acc{Matrix(result.delta.a.rows, result.delta.a.cols),
                          Matrix(result.delta.b.rows, result.delta.b.cols)};
            for (size_t k = 0; k < group; ++k) {
                const Sample& s = data[i + k];
                double l = loss_fn(result.delta, s);
                if (!std::isfinite(l)) throw NonFiniteLoss("loss is not finite");
                epoch_loss += l;
                DeltaGrad g = grad_fn(result.delta, s);
                for (size_t e = 0; e < acc.a.data.size(); ++e) acc.a.data[e] += g.a.data[e];
                for (size_t e = 0; e < acc.b.data.size(); ++e) acc.b.data[e] += g.b.data[e];
            }
            for (size_t e = 0; e < acc.a.data.size(); ++e)
                result.delta.a.data[e] -= lr * (acc.a.data[e] / group +
                                                weight_decay * result.delta.a.data[e]);
            for (size_t e = 0; e < acc.b.data.size(); ++e)
                result.delta.b.data[e] -= lr * (acc.b.data[e] / group +
                                                weight_decay * result.delta.b.data[e]);
            i += group;
        }
        result.loss_history.push_back(epoch_loss / data.size());
    }
    return result;
}

} // namespace detail

inline TrainResult train_triplet_adapter(const ToyEncoder& enc,
                                         const std::vector<TripletSample>& data,
                                         const TripletConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    return detail::train_loop(
        enc, data, cfg.learning_rate, cfg.weight_decay, cfg.epochs, cfg.grad_accumulation, seed,
        [&](const LoraDelta& d, const TripletSample& s) { return triplet_sample_loss(enc, d, s, cfg); },
        [&](const LoraDelta& d, const TripletSample& s) { return triplet_sample_grad(enc, d, s, cfg); });
}

struct LmConfig {
    double learning_rate = 0.001;
    double weight_decay = 0.01;
    int epochs = 10;
    int grad_accumulation = 32;
};

inline TrainResult train_lm_adapter(const ToyEncoder& enc, const std::vector<LmSample>& data,
                                    const LmConfig& cfg, std::uint64_t seed) {
    return detail::train_loop(
        enc, data, cfg.learning_rate, cfg.weight_decay, cfg.epochs, cfg.grad_accumulation, seed,
        [&](const LoraDelta& d, const LmSample& s) { return lm_loss(enc, d, s.tokens, s.label); },
        [&](const LoraDelta& d, const LmSample& s) { return lm_grad(enc, d, s.tokens, s.label); });
}

// ---- AdapterWeights bridge ----

inline AdapterWeights delta_to_weights(const ToyEncoder& enc, const LoraDelta& delta) {
    AdapterWeights w;
    w.tensors.emplace("embed.lora_A.weight",
                      Tensor::from_f64(Dtype::F64, {delta.a.rows, delta.a.cols}, delta.a.data));
    w.tensors.emplace("embed.lora_B.weight",
                      Tensor::from_f64(Dtype::F64, {delta.b.rows, delta.b.cols}, delta.b.data));
    w.meta.entries["r"] = std::to_string(enc.rank);
    w.meta.entries["alpha"] = std::to_string(enc.alpha);
    w.meta.entries["target_modules"] = "embed";
    return w;
}

inline LoraDelta attach_delta(const ToyEncoder& enc, const AdapterWeights& weights) {
    auto ait = weights.tensors.find("embed.lora_A.weight");
    auto bit = weights.tensors.find("embed.lora_B.weight");
    if (ait == weights.tensors.end() || bit == weights.tensors.end())
        throw KeyMismatch("adapter lacks embed.lora_A.weight / embed.lora_B.weight");
    LoraDelta d;
    const Tensor& ta = ait->second;
    const Tensor& tb = bit->second;
    if (ta.shape != std::vector<std::int64_t>{enc.rank, enc.vocab()} ||
        tb.shape != std::vector<std::int64_t>{enc.dim(), enc.rank})
        throw ShapeMismatch("adapter shapes do not fit the encoder");
    d.a = Matrix(enc.rank, enc.vocab());
    d.a.data = ta.to_f64();
    d.b = Matrix(enc.dim(), enc.rank);
    d.b.data = tb.to_f64();
    return d;
}

// ---- finite-difference gradient check ----

struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    size_t n_params = 0;
};

inline GradCheckReport grad_check(const std::function<double(const std::vector<double>&)>& loss,
                                  std::vector<double> params,
                                  const std::vector<double>& analytic,
                                  double step = 1e-5) {
    GradCheckReport rep;
    rep.n_params = params.size();
    for (size_t i = 0; i < params.size(); ++i) {
        double saved = params[i];
        params[i] = saved + step;
        double lp = loss(params);
        params[i] = saved - step;
        double lm = loss(params);
        params[i] = saved;
        if (!std::isfinite(lp) || !std::isfinite(lm)) throw NonFiniteLoss("non-finite probe value");
        double numeric = (lp - lm) / (2.0 * step);
        double abs_err = std::abs(numeric - analytic[i]);
        double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-8});
        rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
        rep.max_rel_error = std::max(rep.max_rel_error, abs_err / denom);
    }
    return rep;
}

// triplet probe: flattens (a, p, n); refuses points at the hinge boundary
inline GradCheckReport grad_check_triplet(const std::vector<double>& a,
                                          const std::vector<double>& p_vec,
                                          const std::vector<double>& n,
                                          const TripletConfig& cfg, double step = 1e-5) {
    double hinge = pair_distance(a, p_vec, cfg.p, cfg.epsilon) -
                   pair_distance(a, n, cfg.p, cfg.epsilon) + cfg.margin;
    if (std::abs(hinge) < 10 * step)
        throw KinkDetected("probe point sits on the hinge boundary");
    size_t dim = a.size();
    std::vector<double> flat;
    flat.insert(flat.end(), a.begin(), a.end());
    flat.insert(flat.end(), p_vec.begin(), p_vec.end());
    flat.insert(flat.end(), n.begin(), n.end());
    auto g = triplet_grad(a, p_vec, n, cfg);
    std::vector<double> analytic;
    analytic.insert(analytic.end(), g.a.begin(), g.a.end());
    analytic.insert(analytic.end(), g.p.begin(), g.p.end());
    analytic.insert(analytic.end(), g.n.begin(), g.n.end());
    auto loss = [&](const std::vector<double>& x) {
        std::vector<double> xa(x.begin(), x.begin() + dim);
        std::vector<double> xp(x.begin() + dim, x.begin() + 2 * dim);
        std::vector<double> xn(x.begin() + 2 * dim, x.end());
        return triplet_loss(xa, xp, xn, cfg);
    };
    return grad_check(loss, flat, analytic, step);
}

// ---- bundled synthetic corpus ----

struct ToyCorpus {
    std::vector<TripletSample> triplets;
    std::vector<LmSample> lm_samples;
};

// Two disjoint token clusters; entailment statements reuse their anchor's
// cluster, contradictions come from the other one.  Linearly separable, so
// both objectives are easy to drive down.
inline ToyCorpus make_toy_corpus(std::uint64_t seed, int n_samples = 64, int vocab = 32,
                                 int tokens_per_text = 6) {
    ToyCorpus corpus;
    SplitMix64 rng(seed);
    int half = vocab / 2;
    auto draw = [&](int lo, int hi) {
        std::vector<int> toks;
        for (int i = 0; i < tokens_per_text; ++i)
            toks.push_back(lo + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(hi - lo))));
        return toks;
    };
    for (int i = 0; i < n_samples; ++i) {
        bool cluster_a = (i % 2) == 0;
        int lo = cluster_a ? 0 : half;
        int hi = cluster_a ? half : vocab;
        int olo = cluster_a ? half : 0;
        int ohi = cluster_a ? vocab : half;
        TripletSample t;
        t.anchor = draw(lo, hi);
        t.positive = draw(lo, hi);
        t.negative = draw(olo, ohi);
        corpus.triplets.push_back(t);
        corpus.lm_samples.push_back({draw(lo, hi),
                                     cluster_a ? Label::Entailment : Label::Contradiction});
    }
    return corpus;
}

} // namespace ctnli
