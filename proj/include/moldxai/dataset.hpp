#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "moldxai/common.hpp"
#include "moldxai/rng.hpp"

namespace moldxai {

// One molding cycle: T x F sensor matrix plus a binary quality label.
struct Cycle {
    std::string id;
    int label = 0;
    Matrix values;  // rows = time steps, cols = channels
};

// Conjunctive label rule over causal channels; each predicate thresholds one
// summary statistic of one channel. Documented so labels can be re-derived
// from the raw values by anyone.
struct RulePredicate {
    enum class Kind { kPeakAbove, kMeanInBand, kTailMeanBelow };
    Kind kind = Kind::kPeakAbove;
    int channel = 0;
    double low = 0.0;   // kPeakAbove: stat >= low; kMeanInBand: low <= stat
    double high = 0.0;  // kMeanInBand: stat <= high; kTailMeanBelow: stat <= high
};

struct LabelRule {
    std::vector<RulePredicate> predicates;
};

inline double rule_statistic(const RulePredicate& p, const Matrix& values) {
    if (p.channel < 0 || p.channel >= values.cols())
        throw DataError("rule_statistic: channel out of range");
    const int t_len = values.rows();
    switch (p.kind) {
        case RulePredicate::Kind::kPeakAbove: {
            double peak = values(0, p.channel);
            for (int t = 1; t < t_len; ++t) peak = std::max(peak, values(t, p.channel));
            return peak;
        }
        case RulePredicate::Kind::kMeanInBand: {
            double s = 0.0;
            for (int t = 0; t < t_len; ++t) s += values(t, p.channel);
            return s / t_len;
        }
        case RulePredicate::Kind::kTailMeanBelow: {
            int start = (3 * t_len) / 4;
            if (start >= t_len) start = t_len - 1;
            double s = 0.0;
            for (int t = start; t < t_len; ++t) s += values(t, p.channel);
            return s / (t_len - start);
        }
    }
    throw ContractError("rule_statistic: unknown kind");
}

inline bool predicate_holds(const RulePredicate& p, const Matrix& values) {
    double stat = rule_statistic(p, values);
    switch (p.kind) {
        case RulePredicate::Kind::kPeakAbove: return stat >= p.low;
        case RulePredicate::Kind::kMeanInBand: return stat >= p.low && stat <= p.high;
        case RulePredicate::Kind::kTailMeanBelow: return stat <= p.high;
    }
    return false;
}

// Brute-force label oracle: label 1 iff every predicate holds.
inline bool rule_label(const LabelRule& rule, const Matrix& values) {
    for (const auto& p : rule.predicates)
        if (!predicate_holds(p, values)) return false;
    return true;
}

inline std::string rule_text(const LabelRule& rule) {
    std::string s = "good part (label 1) iff";
    bool first = true;
    char buf[160];
    for (const auto& p : rule.predicates) {
        const char* join = first ? " " : " AND ";
        first = false;
        switch (p.kind) {
            case RulePredicate::Kind::kPeakAbove:
                std::snprintf(buf, sizeof(buf), "%speak(ch %d) >= %.6g", join, p.channel, p.low);
                break;
            case RulePredicate::Kind::kMeanInBand:
                std::snprintf(buf, sizeof(buf), "%smean(ch %d) in [%.6g, %.6g]", join, p.channel,
                              p.low, p.high);
                break;
            case RulePredicate::Kind::kTailMeanBelow:
                std::snprintf(buf, sizeof(buf), "%smean of last quarter(ch %d) <= %.6g", join,
                              p.channel, p.high);
                break;
        }
        s += buf;
    }
    return s;
}

struct DatasetSchema {
    int n_channels = 0;
    std::vector<std::string> channel_names;
    std::vector<std::string> units;
    std::vector<int> causal_channels;       // ground truth, synthetic data only
    std::optional<LabelRule> label_rule;    // synthetic data only
    std::string label_rule_text;
};

struct Dataset {
    DatasetSchema schema;
    std::vector<Cycle> cycles;

    size_t size() const { return cycles.size(); }
};

// The nine channel names reported by the process experts come first; the rest
// are typical molding-machine signals to fill out the 19-channel layout.
inline std::vector<std::pair<std::string, std::string>> default_channel_table() {
    return {
        {"Injection Pressure", "bar"},      {"Actual Clamping Force", "kN"},
        {"Screw Position", "mm"},           {"End of Ejection Position", "mm"},
        {"Screw Torque", "Nm"},             {"Mold Position", "mm"},
        {"Screw Speed", "rpm"},             {"Contact Force", "kN"},
        {"Screw Velocity", "mm/s"},         {"Cavity Pressure", "bar"},
        {"Crosshead Position", "mm"},       {"Melt Temperature", "degC"},
        {"Mold Temperature", "degC"},       {"Barrel Temperature", "degC"},
        {"Holding Pressure", "bar"},        {"Back Pressure", "bar"},
        {"Injection Speed", "mm/s"},        {"Hydraulic Pressure", "bar"},
        {"Nozzle Temperature", "degC"},
    };
}

inline void fill_default_names(DatasetSchema& schema) {
    auto table = default_channel_table();
    schema.channel_names.clear();
    schema.units.clear();
    for (int f = 0; f < schema.n_channels; ++f) {
        if (f < static_cast<int>(table.size())) {
            schema.channel_names.push_back(table[f].first);
            schema.units.push_back(table[f].second);
        } else {
            schema.channel_names.push_back("Channel " + std::to_string(f));
            schema.units.push_back("a.u.");
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic cycle generation
// ---------------------------------------------------------------------------

struct GeneratorConfig {
    int n_cycles = 1171;
    int time_steps = 1800;
    int n_channels = 19;
    std::vector<int> causal_channels{0, 4, 9};
    double noise_level = 0.05;
    double class_balance = 0.5;  // fraction of label-1 cycles
    uint64_t seed = 1;
    int max_attempts = 2000;  // per-cycle rejection budget
};

namespace detail {

// Smooth phase template: injection ramp, holding plateau, cooling decay.
struct ChannelTemplate {
    double ramp_level = 1.0;
    double plateau_level = 1.0;
    double decay_rate = 5.0;
    double offset = 0.0;

    double at(double tau) const {
        if (tau < 0.3) {
            double u = tau / 0.3;
            double s = u * u * (3.0 - 2.0 * u);  // smoothstep
            return ramp_level * s;
        }
        if (tau < 0.7) {
            double u = (tau - 0.3) / 0.4;
            return ramp_level + (plateau_level - ramp_level) * u;
        }
        return plateau_level * std::exp(-decay_rate * (tau - 0.7));
    }
};

inline ChannelTemplate make_template(RngStream s) {
    ChannelTemplate t;
    t.ramp_level = 0.6 + 0.8 * s.uniform();
    t.plateau_level = 0.6 + 0.8 * s.uniform();
    t.decay_rate = 2.5 + 5.0 * s.uniform();
    t.offset = -0.5 + 1.0 * s.uniform();
    return t;
}

struct TemplateStats {
    double peak = 0.0, mean = 0.0, tail_mean = 0.0;
};

inline TemplateStats template_stats(const ChannelTemplate& t, int t_len) {
    TemplateStats st;
    st.peak = -1e300;
    int tail_start = (3 * t_len) / 4;
    if (tail_start >= t_len) tail_start = t_len - 1;
    double tail_sum = 0.0;
    for (int i = 0; i < t_len; ++i) {
        double g = t.at(static_cast<double>(i) / t_len);
        st.peak = std::max(st.peak, g);
        st.mean += g;
        if (i >= tail_start) tail_sum += g;
    }
    st.mean /= t_len;
    st.tail_mean = tail_sum / (t_len - tail_start);
    return st;
}

// Amplitude bands used when sampling toward a target predicate outcome. The
// rule thresholds sit at amplitude 1.0; pass/fail bands keep a wide margin so
// realized (noisy) statistics land on the intended side.
struct AmpBands {
    double pass_lo, pass_hi, fail_lo, fail_hi;
};

inline AmpBands bands_for(RulePredicate::Kind kind) {
    switch (kind) {
        case RulePredicate::Kind::kPeakAbove: return {1.25, 1.70, 0.30, 0.75};
        case RulePredicate::Kind::kMeanInBand: return {0.92, 1.08, 0.55, 0.75};
        case RulePredicate::Kind::kTailMeanBelow: return {0.55, 0.80, 1.20, 1.45};
    }
    return {1.0, 1.0, 1.0, 1.0};
}

}  // namespace detail

// Generates n seeded cycles with labels planted on the causal channels only.
// Non-causal channels get label-independent amplitude jitter, which is the
// ground truth the attribution recovery tests rely on.
inline Dataset generate_cycles(const GeneratorConfig& cfg) {
    if (cfg.n_cycles < 2) throw DataError("generate_cycles: need at least 2 cycles");
    if (cfg.time_steps < 4) throw DataError("generate_cycles: time_steps must be >= 4");
    if (cfg.n_channels < 1) throw DataError("generate_cycles: n_channels must be >= 1");
    if (cfg.noise_level < 0) throw DataError("generate_cycles: negative noise level");
    if (cfg.class_balance <= 0.0 || cfg.class_balance >= 1.0)
        throw DataError("generate_cycles: class_balance must be in (0,1)");
    if (cfg.causal_channels.empty() || cfg.causal_channels.size() > 3)
        throw DataError("generate_cycles: need 1..3 causal channels");
    {
        std::vector<int> sorted = cfg.causal_channels;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw DataError("generate_cycles: duplicate causal channel");
        if (sorted.front() < 0 || sorted.back() >= cfg.n_channels)
            throw DataError("generate_cycles: causal channel index out of range [0, " +
                            std::to_string(cfg.n_channels) + ")");
    }
    long n_pos = std::lround(cfg.n_cycles * cfg.class_balance);
    if (n_pos < 1 || n_pos > cfg.n_cycles - 1)
        throw DataError("generate_cycles: class balance unachievable with n_cycles=" +
                        std::to_string(cfg.n_cycles));

    RngStream root(cfg.seed);

    // Channel templates and the derived rule thresholds (amplitude 1.0 is the
    // decision boundary for every predicate).
    std::vector<detail::ChannelTemplate> templates;
    for (int f = 0; f < cfg.n_channels; ++f)
        templates.push_back(detail::make_template(root.derive(0x7e, f)));

    static const std::array<RulePredicate::Kind, 3> kKindOrder = {
        RulePredicate::Kind::kPeakAbove, RulePredicate::Kind::kMeanInBand,
        RulePredicate::Kind::kTailMeanBelow};

    LabelRule rule;
    for (size_t i = 0; i < cfg.causal_channels.size(); ++i) {
        int ch = cfg.causal_channels[i];
        auto stats = detail::template_stats(templates[ch], cfg.time_steps);
        RulePredicate p;
        p.kind = kKindOrder[i % 3];
        p.channel = ch;
        switch (p.kind) {
            case RulePredicate::Kind::kPeakAbove:
                p.low = stats.peak + templates[ch].offset;
                break;
            case RulePredicate::Kind::kMeanInBand:
                p.low = 0.85 * stats.mean + templates[ch].offset;
                p.high = 1.15 * stats.mean + templates[ch].offset;
                break;
            case RulePredicate::Kind::kTailMeanBelow:
                p.high = stats.tail_mean + templates[ch].offset;
                break;
        }
        rule.predicates.push_back(p);
    }

    Dataset out;
    out.schema.n_channels = cfg.n_channels;
    fill_default_names(out.schema);
    out.schema.causal_channels = cfg.causal_channels;
    out.schema.label_rule = rule;
    out.schema.label_rule_text = rule_text(rule);

    // Target label sequence with the requested balance, order shuffled.
    std::vector<int> targets(cfg.n_cycles, 0);
    std::fill(targets.begin(), targets.begin() + n_pos, 1);
    {
        RngStream s = root.derive(0x11);
        s.shuffle(targets);
    }

    const size_t n_pred = rule.predicates.size();
    for (int c = 0; c < cfg.n_cycles; ++c) {
        RngStream cyc = root.derive(0xc0, static_cast<uint64_t>(c));
        int target = targets[c];
        Cycle cycle;
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "cyc%05d", c);
        cycle.id = idbuf;

        bool accepted = false;
        for (int attempt = 0; attempt < cfg.max_attempts && !accepted; ++attempt) {
            RngStream s = cyc.derive(0xa7, static_cast<uint64_t>(attempt));

            // Which predicates a bad part violates: mostly single causes, so
            // the classifier has to learn each channel's condition.
            std::vector<bool> violate(n_pred, false);
            if (target == 0) {
                if (n_pred == 1) {
                    violate[0] = true;
                } else {
                    double u = s.uniform();
                    if (u < 0.6) {
                        violate[s.index(n_pred)] = true;
                    } else if (u < 0.9 && n_pred >= 2) {
                        size_t a = s.index(n_pred);
                        size_t b = (a + 1 + s.index(n_pred - 1)) % n_pred;
                        violate[a] = violate[b] = true;
                    } else {
                        std::fill(violate.begin(), violate.end(), true);
                    }
                }
            }

            // Per-channel amplitudes.
            Vec amp(cfg.n_channels);
            for (int f = 0; f < cfg.n_channels; ++f) {
                double z = std::clamp(s.normal(), -2.5, 2.5);
                amp[f] = 1.0 + 0.35 * z;
            }
            for (size_t i = 0; i < n_pred; ++i) {
                auto bands = detail::bands_for(rule.predicates[i].kind);
                double lo = violate[i] ? bands.fail_lo : bands.pass_lo;
                double hi = violate[i] ? bands.fail_hi : bands.pass_hi;
                // The band side of a failed mean-in-band predicate is split.
                if (violate[i] && rule.predicates[i].kind == RulePredicate::Kind::kMeanInBand &&
                    s.bernoulli(0.5)) {
                    lo = 2.0 - bands.fail_hi;  // mirror above the band
                    hi = 2.0 - bands.fail_lo;
                }
                amp[rule.predicates[i].channel] = lo + (hi - lo) * s.uniform();
            }

            cycle.values = Matrix(cfg.time_steps, cfg.n_channels);
            for (int t = 0; t < cfg.time_steps; ++t) {
                double tau = static_cast<double>(t) / cfg.time_steps;
                for (int f = 0; f < cfg.n_channels; ++f) {
                    double v = amp[f] * templates[f].at(tau) + templates[f].offset;
                    if (cfg.noise_level > 0) v += cfg.noise_level * s.normal();
                    cycle.values(t, f) = v;
                }
            }

            if (rule_label(rule, cycle.values) == (target == 1)) {
                cycle.label = target;
                accepted = true;
            }
        }
        if (!accepted)
            throw DataError("generate_cycles: could not realize target label for cycle " +
                            std::to_string(c) + " (class balance unachievable at this noise)");
        out.cycles.push_back(std::move(cycle));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stride-4 phase augmentation
// ---------------------------------------------------------------------------

// Splits one cycle into 4 phase-subsampled cycles: phase p keeps time indices
// p, p+4, p+8, ... Labels are copied; ids get a phase suffix.
inline std::array<Cycle, 4> augment_subsample(const Cycle& source) {
    if (source.values.rows() < 4)
        throw DataError("augment_subsample: cycle shorter than 4 time steps");
    std::array<Cycle, 4> out;
    const int t_len = source.values.rows();
    const int f_len = source.values.cols();
    for (int p = 0; p < 4; ++p) {
        int rows = (t_len - p + 3) / 4;
        Cycle& c = out[p];
        c.id = source.id + "_p" + std::to_string(p);
        c.label = source.label;
        c.values = Matrix(rows, f_len);
        for (int r = 0; r < rows; ++r) {
            const double* src = source.values.row(p + 4 * r);
            std::copy(src, src + f_len, c.values.row(r));
        }
    }
    return out;
}

inline Dataset augment_dataset(const Dataset& src) {
    Dataset out;
    out.schema = src.schema;
    out.cycles.reserve(src.cycles.size() * 4);
    for (const Cycle& c : src.cycles) {
        auto phases = augment_subsample(c);
        for (auto& p : phases) out.cycles.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Train/validation split
// ---------------------------------------------------------------------------

struct SplitSpec {
    double val_ratio = 0.33;
    uint64_t seed = 0;
    bool group_by_source = false;  // keep all phase variants of a cycle in one fold
};

struct SplitResult {
    Dataset train, val;
};

// Strips a trailing "_p<digit>" phase suffix to recover the source cycle id.
inline std::string source_id_of(const std::string& id) {
    size_t pos = id.rfind("_p");
    if (pos == std::string::npos || pos + 2 >= id.size()) return id;
    for (size_t i = pos + 2; i < id.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(id[i]))) return id;
    return id.substr(0, pos);
}

// Seeded shuffle split. Membership depends only on cycle ids and the seed,
// never on the in-memory order of the dataset.
inline SplitResult split(const Dataset& data, const SplitSpec& spec) {
    const size_t n = data.cycles.size();
    if (n < 2) throw DataError("split: need at least 2 cycles");
    if (spec.val_ratio <= 0.0 || spec.val_ratio >= 1.0)
        throw DataError("split: val_ratio must be in (0,1)");
    size_t val_count = static_cast<size_t>(std::llround(static_cast<double>(n) * spec.val_ratio));

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return data.cycles[a].id < data.cycles[b].id;
    });

    std::vector<bool> in_val(n, false);
    RngStream rng(spec.seed);
    if (!spec.group_by_source) {
        rng.shuffle(order);
        for (size_t i = 0; i < val_count && i < n; ++i) in_val[order[i]] = true;
    } else {
        std::vector<std::string> sources;
        for (size_t i : order) {
            std::string s = source_id_of(data.cycles[i].id);
            if (sources.empty() || sources.back() != s) {
                if (std::find(sources.begin(), sources.end(), s) == sources.end())
                    sources.push_back(s);
            }
        }
        std::sort(sources.begin(), sources.end());
        rng.shuffle(sources);
        size_t assigned = 0;
        for (const std::string& s : sources) {
            if (assigned >= val_count) break;
            for (size_t i = 0; i < n; ++i) {
                if (source_id_of(data.cycles[i].id) == s && !in_val[i]) {
                    in_val[i] = true;
                    ++assigned;
                }
            }
        }
    }

    SplitResult out;
    out.train.schema = data.schema;
    out.val.schema = data.schema;
    for (size_t i = 0; i < n; ++i)
        (in_val[i] ? out.val : out.train).cycles.push_back(data.cycles[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

struct NormStats {
    Vec mean, stddev;
};

// Per-channel mean/std over every time step of the training split. Constant
// channels get std := 1 so the transform stays invertible.
inline NormStats compute_norm_stats(const Dataset& train) {
    if (train.cycles.empty()) throw DataError("compute_norm_stats: empty training set");
    const int f_len = train.cycles.front().values.cols();
    NormStats st;
    st.mean.assign(f_len, 0.0);
    st.stddev.assign(f_len, 0.0);
    size_t count = 0;
    for (const Cycle& c : train.cycles) {
        for (int t = 0; t < c.values.rows(); ++t)
            for (int f = 0; f < f_len; ++f) st.mean[f] += c.values(t, f);
        count += static_cast<size_t>(c.values.rows());
    }
    for (double& m : st.mean) m /= static_cast<double>(count);
    for (const Cycle& c : train.cycles)
        for (int t = 0; t < c.values.rows(); ++t)
            for (int f = 0; f < f_len; ++f) {
                double d = c.values(t, f) - st.mean[f];
                st.stddev[f] += d * d;
            }
    for (double& s : st.stddev) {
        s = std::sqrt(s / static_cast<double>(count));
        if (!(s > 1e-12)) s = 1.0;  // degenerate-channel guard
    }
    return st;
}

inline void apply_normalization(Dataset& data, const NormStats& st) {
    for (Cycle& c : data.cycles)
        for (int t = 0; t < c.values.rows(); ++t)
            for (int f = 0; f < c.values.cols(); ++f)
                c.values(t, f) = (c.values(t, f) - st.mean[f]) / st.stddev[f];
}

inline void apply_denormalization(Dataset& data, const NormStats& st) {
    for (Cycle& c : data.cycles)
        for (int t = 0; t < c.values.rows(); ++t)
            for (int f = 0; f < c.values.cols(); ++f)
                c.values(t, f) = c.values(t, f) * st.stddev[f] + st.mean[f];
}

// Stats from the training split only; both splits transformed with them.
inline NormStats normalize(Dataset& train, Dataset& val) {
    NormStats st = compute_norm_stats(train);
    apply_normalization(train, st);
    apply_normalization(val, st);
    return st;
}

// ---------------------------------------------------------------------------
// Channel restriction
// ---------------------------------------------------------------------------

inline Dataset restrict_channels(const Dataset& data, const std::vector<int>& subset) {
    const int f_len = data.schema.n_channels;
    if (subset.empty()) throw DataError("restrict_channels: empty subset");
    std::vector<int> remap(f_len, -1);
    for (size_t i = 0; i < subset.size(); ++i) {
        int ch = subset[i];
        if (ch < 0 || ch >= f_len)
            throw DataError("restrict_channels: channel " + std::to_string(ch) + " out of range");
        if (remap[ch] != -1) throw DataError("restrict_channels: duplicate channel in subset");
        remap[ch] = static_cast<int>(i);
    }

    Dataset out;
    out.schema.n_channels = static_cast<int>(subset.size());
    for (int ch : subset) {
        out.schema.channel_names.push_back(data.schema.channel_names[ch]);
        out.schema.units.push_back(data.schema.units[ch]);
    }
    for (int ch : data.schema.causal_channels)
        if (remap[ch] != -1) out.schema.causal_channels.push_back(remap[ch]);
    if (data.schema.label_rule) {
        bool complete = true;
        LabelRule remapped = *data.schema.label_rule;
        for (auto& p : remapped.predicates) {
            if (remap[p.channel] == -1) {
                complete = false;
                break;
            }
            p.channel = remap[p.channel];
        }
        if (complete) {
            out.schema.label_rule = remapped;
            out.schema.label_rule_text = rule_text(remapped);
        }
    }

    out.cycles.reserve(data.cycles.size());
    for (const Cycle& c : data.cycles) {
        Cycle r;
        r.id = c.id;
        r.label = c.label;
        r.values = Matrix(c.values.rows(), out.schema.n_channels);
        for (int t = 0; t < c.values.rows(); ++t)
            for (size_t i = 0; i < subset.size(); ++i) r.values(t, static_cast<int>(i)) = c.values(t, subset[i]);
        out.cycles.push_back(std::move(r));
    }
    return out;
}

}  // namespace moldxai
