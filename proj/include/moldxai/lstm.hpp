#pragma once

#include <algorithm>
#include <array>
#include <span>
#include <string>
#include <vector>

#include "moldxai/common.hpp"
#include "moldxai/math.hpp"
#include "moldxai/rng.hpp"

namespace moldxai {

// Gate blocks inside the stacked 4H dimension, in fixed order.
enum GateBlock { kGateInput = 0, kGateForget = 1, kGateCell = 2, kGateOutput = 3 };

struct LstmLayerParams {
    int input_size = 0;   // D
    int hidden_size = 0;  // H
    Matrix w_in;          // 4H x D, row blocks (i, f, g, o)
    Matrix w_rec;         // 4H x H
    Vec bias;             // 4H

    void validate() const {
        if (input_size <= 0 || hidden_size <= 0)
            throw ContractError("LstmLayerParams: non-positive dimension");
        if (w_in.rows() != 4 * hidden_size || w_in.cols() != input_size ||
            w_rec.rows() != 4 * hidden_size || w_rec.cols() != hidden_size ||
            static_cast<int>(bias.size()) != 4 * hidden_size)
            throw ContractError("LstmLayerParams: tensor shapes inconsistent with (D, H)");
    }
};

// Full classifier: stacked unidirectional LSTM layers and a scalar sigmoid head.
// feature_subset records which dataset channels (and in which order) the model
// consumes; norm_mean/norm_std carry the training-split normalization so any
// consumer can reproduce the input transform.
struct ModelParams {
    std::vector<LstmLayerParams> layers;
    Vec head_w;  // H_last
    double head_b = 0.0;
    std::vector<int> feature_subset;
    uint64_t seed = 0;
    Vec norm_mean;
    Vec norm_std;

    int input_size() const { return layers.empty() ? 0 : layers.front().input_size; }
    int last_hidden() const { return layers.empty() ? 0 : layers.back().hidden_size; }

    void validate() const {
        if (layers.empty()) throw ContractError("ModelParams: no layers");
        for (size_t l = 0; l < layers.size(); ++l) {
            layers[l].validate();
            if (l > 0 && layers[l].input_size != layers[l - 1].hidden_size)
                throw ContractError("ModelParams: layer sizes do not chain");
        }
        if (static_cast<int>(head_w.size()) != last_hidden())
            throw ContractError("ModelParams: head width mismatch");
        if (!feature_subset.empty() &&
            static_cast<int>(feature_subset.size()) != layers.front().input_size)
            throw ContractError("ModelParams: feature_subset size != layer-1 input size");
    }

    // Content hash over shapes and tensors; used to detect stale forward caches.
    uint64_t fingerprint() const {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& l : layers) {
            int dims[2] = {l.input_size, l.hidden_size};
            h = fnv1a64(dims, sizeof(dims), h);
            h = fnv1a64(l.w_in.data(), h);
            h = fnv1a64(l.w_rec.data(), h);
            h = fnv1a64(l.bias, h);
        }
        h = fnv1a64(head_w, h);
        h = fnv1a64(&head_b, sizeof(head_b), h);
        if (!feature_subset.empty())
            h = fnv1a64(feature_subset.data(), feature_subset.size() * sizeof(int), h);
        return h;
    }
};

// ---------------------------------------------------------------------------
// Initialization: Glorot-uniform input weights and head, orthogonal recurrent
// blocks, zero biases except forget-gate bias = 1.
// ---------------------------------------------------------------------------

namespace detail {

inline void glorot_uniform(Matrix& m, int fan_in, int fan_out, RngStream& rng) {
    double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : m.data()) v = (2.0 * rng.uniform() - 1.0) * limit;
}

// Orthonormalize the rows of a square normal-random matrix (modified
// Gram-Schmidt with one re-orthogonalization pass).
inline Matrix random_orthogonal(int n, RngStream& rng) {
    Matrix q(n, n);
    for (double& v : q.data()) v = rng.normal();
    for (int pass = 0; pass < 2; ++pass) {
        for (int r = 0; r < n; ++r) {
            auto vr = q.row_span(r);
            for (int p = 0; p < r; ++p) {
                auto vp = q.row_span(p);
                double proj = dot({vr.data(), vr.size()}, {vp.data(), vp.size()});
                for (int j = 0; j < n; ++j) vr[j] -= proj * vp[j];
            }
            double norm = std::sqrt(dot({vr.data(), vr.size()}, {vr.data(), vr.size()}));
            if (norm < 1e-12) {
                for (int j = 0; j < n; ++j) vr[j] = rng.normal();  // redraw degenerate row
                --r;
                continue;
            }
            for (int j = 0; j < n; ++j) vr[j] /= norm;
        }
    }
    return q;
}

}  // namespace detail

inline ModelParams init_model(const std::vector<int>& hidden_sizes,
                              const std::vector<int>& feature_subset, uint64_t seed) {
    if (hidden_sizes.empty()) throw ConfigError("init_model: hidden_sizes empty");
    if (feature_subset.empty()) throw ConfigError("init_model: feature_subset empty");
    {
        std::vector<int> sorted = feature_subset;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw ConfigError("init_model: duplicate channel in feature_subset");
    }

    RngStream root(seed);
    ModelParams m;
    m.seed = seed;
    m.feature_subset = feature_subset;
    int d = static_cast<int>(feature_subset.size());
    for (size_t l = 0; l < hidden_sizes.size(); ++l) {
        int h = hidden_sizes[l];
        if (h <= 0) throw ConfigError("init_model: hidden size must be positive");
        LstmLayerParams p;
        p.input_size = d;
        p.hidden_size = h;
        p.w_in = Matrix(4 * h, d);
        p.w_rec = Matrix(4 * h, h);
        p.bias.assign(4 * h, 0.0);
        std::fill(p.bias.begin() + h, p.bias.begin() + 2 * h, 1.0);  // forget bias

        RngStream ls = root.derive(0x10, l);
        detail::glorot_uniform(p.w_in, d, 4 * h, ls);
        for (int g = 0; g < 4; ++g) {
            RngStream gs = ls.derive(0x20, g);
            Matrix q = detail::random_orthogonal(h, gs);
            for (int r = 0; r < h; ++r)
                for (int c = 0; c < h; ++c) p.w_rec(g * h + r, c) = q(r, c);
        }
        m.layers.push_back(std::move(p));
        d = h;
    }
    RngStream hs = root.derive(0x30);
    m.head_w.assign(d, 0.0);
    double limit = std::sqrt(6.0 / (d + 1));
    for (double& v : m.head_w) v = (2.0 * hs.uniform() - 1.0) * limit;
    m.head_b = 0.0;
    return m;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

enum class RunMode { kTrain, kInfer };

struct CellStep {
    Vec h, c;           // outputs
    Vec i, f, g, o;     // activated gates
};

namespace detail {

// One cell step. Gate pre-activations z = W x + U h_prev + b; i,f,o logistic,
// g tanh; c = f.c_prev + i.g; h = o.tanh(c). Writes activated gates plus h, c,
// tanh(c) into caller-provided spans.
inline void cell_step(const LstmLayerParams& p, std::span<const double> x,
                      std::span<const double> h_prev, std::span<const double> c_prev,
                      std::span<double> gi, std::span<double> gf, std::span<double> gg,
                      std::span<double> go, std::span<double> c_out, std::span<double> tc_out,
                      std::span<double> h_out) {
    const int hsz = p.hidden_size;
    for (int block = 0; block < 4; ++block) {
        for (int k = 0; k < hsz; ++k) {
            int r = block * hsz + k;
            double z = p.bias[r] + dot(p.w_in.row_span(r), x) + dot(p.w_rec.row_span(r), h_prev);
            switch (block) {
                case kGateInput: gi[k] = sigmoid(z); break;
                case kGateForget: gf[k] = sigmoid(z); break;
                case kGateCell: gg[k] = std::tanh(z); break;
                default: go[k] = sigmoid(z); break;
            }
        }
    }
    for (int k = 0; k < hsz; ++k) {
        c_out[k] = gf[k] * c_prev[k] + gi[k] * gg[k];
        tc_out[k] = std::tanh(c_out[k]);
        h_out[k] = go[k] * tc_out[k];
    }
}

}  // namespace detail

// Single-step public form, mainly for direct inspection in tests.
inline CellStep lstm_cell_forward(const LstmLayerParams& p, const Vec& x, const Vec& h_prev,
                                  const Vec& c_prev) {
    p.validate();
    if (static_cast<int>(x.size()) != p.input_size ||
        static_cast<int>(h_prev.size()) != p.hidden_size ||
        static_cast<int>(c_prev.size()) != p.hidden_size)
        throw ContractError("lstm_cell_forward: input shapes do not match layer (D, H)");
    CellStep s;
    int h = p.hidden_size;
    s.h.resize(h);
    s.c.resize(h);
    s.i.resize(h);
    s.f.resize(h);
    s.g.resize(h);
    s.o.resize(h);
    Vec tc(h);
    detail::cell_step(p, x, h_prev, c_prev, s.i, s.f, s.g, s.o, s.c, tc, s.h);
    return s;
}

struct LayerCache {
    Matrix input;                    // T x D, sequence actually fed (post-dropout of previous layer)
    Matrix gate_i, gate_f, gate_g, gate_o;  // T x H
    Matrix cell, tanh_cell, hidden;  // T x H
    Matrix mask;                     // T x H inverted-dropout mask on outputs; empty => identity
};

struct ForwardCache {
    std::vector<LayerCache> layers;
    Vec head_input;  // masked h_T of the last layer
    double logit = 0.0;
    double prob = 0.0;
    bool train_mode = false;
    uint64_t params_fingerprint = 0;
};

struct ForwardResult {
    double prob = 0.0;
    ForwardCache cache;
};

// Runs the stacked layers over a T x D input. In train mode, inverted dropout
// is applied to each layer's output sequence (rate per layer from `dropout`);
// masks are drawn from `rng` in a fixed (layer, t, unit) order. Inference mode
// draws nothing and is fully deterministic.
inline ForwardResult forward(const Matrix& x, const ModelParams& params, RunMode mode,
                             RngStream* rng = nullptr, std::span<const double> dropout = {}) {
    params.validate();
    if (x.rows() < 1) throw ContractError("forward: empty sequence (T must be >= 1)");
    if (x.cols() != params.input_size())
        throw ContractError("forward: input has " + std::to_string(x.cols()) +
                            " channels, model expects " + std::to_string(params.input_size()));
    if (!dropout.empty() && dropout.size() != params.layers.size())
        throw ContractError("forward: dropout rate count != layer count");

    const int t_len = x.rows();
    ForwardResult out;
    ForwardCache& cache = out.cache;
    cache.train_mode = (mode == RunMode::kTrain);
    cache.params_fingerprint = params.fingerprint();
    cache.layers.resize(params.layers.size());

    const Matrix* layer_in = &x;
    for (size_t l = 0; l < params.layers.size(); ++l) {
        const LstmLayerParams& p = params.layers[l];
        LayerCache& lc = cache.layers[l];
        const int h = p.hidden_size;
        lc.input = *layer_in;
        lc.gate_i = Matrix(t_len, h);
        lc.gate_f = Matrix(t_len, h);
        lc.gate_g = Matrix(t_len, h);
        lc.gate_o = Matrix(t_len, h);
        lc.cell = Matrix(t_len, h);
        lc.tanh_cell = Matrix(t_len, h);
        lc.hidden = Matrix(t_len, h);

        Vec zeros(h, 0.0);
        for (int t = 0; t < t_len; ++t) {
            std::span<const double> h_prev = t > 0 ? lc.hidden.row_span(t - 1)
                                                   : std::span<const double>(zeros);
            std::span<const double> c_prev = t > 0 ? lc.cell.row_span(t - 1)
                                                   : std::span<const double>(zeros);
            detail::cell_step(p, lc.input.row_span(t), h_prev, c_prev, lc.gate_i.row_span(t),
                              lc.gate_f.row_span(t), lc.gate_g.row_span(t), lc.gate_o.row_span(t),
                              lc.cell.row_span(t), lc.tanh_cell.row_span(t),
                              lc.hidden.row_span(t));
        }
        if (!lc.hidden.all_finite()) {
            for (int t = 0; t < t_len; ++t)
                for (int k = 0; k < h; ++k)
                    if (!std::isfinite(lc.hidden(t, k)))
                        throw NumericError("forward: non-finite activation at layer " +
                                           std::to_string(l + 1) + ", time step " +
                                           std::to_string(t));
        }

        double rate = dropout.empty() ? 0.0 : dropout[l];
        if (mode == RunMode::kTrain && rate > 0.0) {
            if (rate >= 1.0) throw ConfigError("forward: dropout rate must be < 1");
            if (rng == nullptr)
                throw ContractError("forward: train mode with dropout needs an RngStream");
            double keep = 1.0 - rate;
            lc.mask = Matrix(t_len, h);
            for (int t = 0; t < t_len; ++t)
                for (int k = 0; k < h; ++k)
                    lc.mask(t, k) = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
        }
        layer_in = &lc.hidden;
    }

    // Head consumes the (masked) final hidden state of the last layer.
    const LayerCache& last = cache.layers.back();
    const int h_last = params.last_hidden();
    cache.head_input.resize(h_last);
    for (int k = 0; k < h_last; ++k) {
        double m = last.mask.empty() ? 1.0 : last.mask(t_len - 1, k);
        cache.head_input[k] = last.hidden(t_len - 1, k) * m;
    }
    cache.logit = params.head_b + dot(std::span<const double>(params.head_w),
                                      std::span<const double>(cache.head_input));
    if (!std::isfinite(cache.logit)) throw NumericError("forward: non-finite logit");
    cache.prob = sigmoid(cache.logit);
    out.prob = cache.prob;

    // Intermediate layer outputs travel through their masks on the way into
    // the next layer; apply lazily here so the stored hidden stays unmasked.
    // (Recurrent connections always use the unmasked hidden state.)
    return out;
}

// ---------------------------------------------------------------------------
// Backward pass (BPTT)
// ---------------------------------------------------------------------------

struct LayerGrads {
    Matrix w_in, w_rec;
    Vec bias;
};

enum class BackwardTarget { kLoss, kLogit };

struct Gradients {
    std::vector<LayerGrads> layers;
    Vec head_w;
    double head_b = 0.0;
    Matrix input;                // T x D_1: d target / d x
    std::vector<Matrix> hidden;  // per layer, T x H_l: total d target / d h_t
};

// Exact gradients of either the BCE loss (training) or the raw logit
// (attribution) with respect to every parameter, input entry and hidden state.
// The cache must come from forward() on the same parameter values.
inline Gradients backward(const ForwardCache& cache, const ModelParams& params,
                          BackwardTarget target, double label = 0.0) {
    params.validate();
    if (cache.layers.size() != params.layers.size())
        throw ContractError("backward: cache layer count mismatch");
    if (cache.params_fingerprint != params.fingerprint())
        throw ContractError("backward: stale cache (params changed since forward)");

    const int t_len = cache.layers.front().hidden.rows();
    const size_t n_layers = params.layers.size();

    double ds;  // d target / d logit
    if (target == BackwardTarget::kLoss) {
        if (label != 0.0 && label != 1.0) throw ContractError("backward: label must be 0 or 1");
        ds = cache.prob - label;  // BCE through the sigmoid
    } else {
        ds = 1.0;
    }

    Gradients grads;
    grads.layers.resize(n_layers);
    grads.hidden.resize(n_layers);
    for (size_t l = 0; l < n_layers; ++l) {
        const LstmLayerParams& p = params.layers[l];
        grads.layers[l].w_in = Matrix(4 * p.hidden_size, p.input_size);
        grads.layers[l].w_rec = Matrix(4 * p.hidden_size, p.hidden_size);
        grads.layers[l].bias.assign(4 * p.hidden_size, 0.0);
        grads.hidden[l] = Matrix(t_len, p.hidden_size);
    }

    // Head.
    const int h_last = params.last_hidden();
    grads.head_w.assign(h_last, 0.0);
    for (int k = 0; k < h_last; ++k) grads.head_w[k] = ds * cache.head_input[k];
    grads.head_b = ds;

    // Gradient flowing into each layer's output sequence from downstream.
    Matrix dh_ext(t_len, h_last);
    {
        const LayerCache& last = cache.layers.back();
        for (int k = 0; k < h_last; ++k) {
            double m = last.mask.empty() ? 1.0 : last.mask(t_len - 1, k);
            dh_ext(t_len - 1, k) = ds * params.head_w[k] * m;
        }
    }

    for (int l = static_cast<int>(n_layers) - 1; l >= 0; --l) {
        const LstmLayerParams& p = params.layers[l];
        const LayerCache& lc = cache.layers[l];
        LayerGrads& lg = grads.layers[l];
        const int h = p.hidden_size;
        const int d = p.input_size;

        Matrix dx(t_len, d);
        Vec dh_rec(h, 0.0), dc(h, 0.0);
        Vec dz(4 * h);
        for (int t = t_len - 1; t >= 0; --t) {
            auto* hidden_grad_row = grads.hidden[l].row(t);
            std::span<const double> h_prev =
                t > 0 ? lc.hidden.row_span(t - 1) : std::span<const double>();
            for (int k = 0; k < h; ++k) {
                double dh = dh_ext(t, k) + dh_rec[k];
                hidden_grad_row[k] = dh;
                double i = lc.gate_i(t, k), f = lc.gate_f(t, k);
                double g = lc.gate_g(t, k), o = lc.gate_o(t, k);
                double tc = lc.tanh_cell(t, k);
                double c_prev = t > 0 ? lc.cell(t - 1, k) : 0.0;

                double d_o = dh * tc;
                double dct = dc[k] + dh * o * (1.0 - tc * tc);
                double d_i = dct * g;
                double d_g = dct * i;
                double d_f = dct * c_prev;

                dz[kGateInput * h + k] = d_i * i * (1.0 - i);
                dz[kGateForget * h + k] = d_f * f * (1.0 - f);
                dz[kGateCell * h + k] = d_g * (1.0 - g * g);
                dz[kGateOutput * h + k] = d_o * o * (1.0 - o);
                dc[k] = dct * f;  // carries to t-1
            }

            auto x_t = lc.input.row_span(t);
            auto dx_t = dx.row_span(t);
            std::fill(dh_rec.begin(), dh_rec.end(), 0.0);
            for (int r = 0; r < 4 * h; ++r) {
                double a = dz[r];
                if (a == 0.0) continue;
                axpy(a, x_t, lg.w_in.row_span(r));
                axpy(a, p.w_in.row_span(r), dx_t);
                if (t > 0) {
                    axpy(a, h_prev, lg.w_rec.row_span(r));
                    // h_prev == 0 at t == 0, so w_rec gets no contribution there.
                }
                axpy(a, p.w_rec.row_span(r), std::span<double>(dh_rec));
                lg.bias[r] += a;
            }
        }

        if (l > 0) {
            // dx here is w.r.t. this layer's input, i.e. the previous layer's
            // masked output; unmask to get the gradient at the hidden node.
            const LayerCache& prev = cache.layers[l - 1];
            const int hp = params.layers[l - 1].hidden_size;
            dh_ext = Matrix(t_len, hp);
            for (int t = 0; t < t_len; ++t)
                for (int k = 0; k < hp; ++k) {
                    double m = prev.mask.empty() ? 1.0 : prev.mask(t, k);
                    dh_ext(t, k) = dx(t, k) * m;
                }
        } else {
            grads.input = std::move(dx);
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Flat views (Adam, gradient checking, serialization share one layout:
// per layer W, U, b; then head weights, head bias).
// ---------------------------------------------------------------------------

inline size_t param_count(const ModelParams& m) {
    size_t n = 0;
    for (const auto& l : m.layers) n += l.w_in.size() + l.w_rec.size() + l.bias.size();
    return n + m.head_w.size() + 1;
}

inline Vec flatten_params(const ModelParams& m) {
    Vec out;
    out.reserve(param_count(m));
    for (const auto& l : m.layers) {
        out.insert(out.end(), l.w_in.data().begin(), l.w_in.data().end());
        out.insert(out.end(), l.w_rec.data().begin(), l.w_rec.data().end());
        out.insert(out.end(), l.bias.begin(), l.bias.end());
    }
    out.insert(out.end(), m.head_w.begin(), m.head_w.end());
    out.push_back(m.head_b);
    return out;
}

inline void assign_params(ModelParams& m, std::span<const double> flat) {
    if (flat.size() != param_count(m)) throw ContractError("assign_params: size mismatch");
    size_t pos = 0;
    auto take = [&](double* dst, size_t n) {
        std::copy(flat.begin() + pos, flat.begin() + pos + n, dst);
        pos += n;
    };
    for (auto& l : m.layers) {
        take(l.w_in.data().data(), l.w_in.size());
        take(l.w_rec.data().data(), l.w_rec.size());
        take(l.bias.data(), l.bias.size());
    }
    take(m.head_w.data(), m.head_w.size());
    m.head_b = flat[pos];
}

inline Vec flatten_grads(const Gradients& g) {
    Vec out;
    for (const auto& l : g.layers) {
        out.insert(out.end(), l.w_in.data().begin(), l.w_in.data().end());
        out.insert(out.end(), l.w_rec.data().begin(), l.w_rec.data().end());
        out.insert(out.end(), l.bias.begin(), l.bias.end());
    }
    out.insert(out.end(), g.head_w.begin(), g.head_w.end());
    out.push_back(g.head_b);
    return out;
}

// Analytic count of floating-point operations for one forward pass over a
// T-step sequence. Only the first-layer input weights scale with the feature
// count, so the count is strictly monotone in |feature_subset|.
inline double forward_flops(const ModelParams& m, int t_len) {
    double total = 0.0;
    for (const auto& l : m.layers) {
        double matvec = 2.0 * 4 * l.hidden_size * (l.input_size + l.hidden_size);
        double elementwise = 10.0 * l.hidden_size;  // gate combine + activations
        total += static_cast<double>(t_len) * (matvec + elementwise);
    }
    total += 2.0 * m.last_hidden() + 2.0;  // head
    return total;
}

}  // namespace moldxai
