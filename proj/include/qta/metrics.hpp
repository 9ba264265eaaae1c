#pragma once

#include <map>
#include <string>
#include <vector>

#include "fusion.hpp"

#include "json.hpp"

namespace qta {

/// Per-type accuracies (percent), arithmetic and harmonic MPT, overall.
/// MPTs are type-weighted; overall is sample-weighted. Types with zero
/// samples are excluded from the MPTs and flagged in `absent_types`.
struct EvalReport {
    std::map<std::string, double> per_type_acc;
    std::map<std::string, std::size_t> n_per_type;
    std::vector<std::string> absent_types;
    double arithmetic_mpt = 0.0;
    double harmonic_mpt = 0.0;
    double overall_acc = 0.0;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["per_type_acc"] = per_type_acc;
        j["n_per_type"] = n_per_type;
        j["absent_types"] = absent_types;
        j["arithmetic_mpt"] = arithmetic_mpt;
        j["harmonic_mpt"] = harmonic_mpt;
        j["overall_acc"] = overall_acc;
        return j;
    }
};

inline double arithmetic_mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Harmonic mean; any zero term pins the result to 0 (the limiting value).
inline double harmonic_mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) {
        if (x == 0.0) return 0.0;
        s += 1.0 / x;
    }
    return static_cast<double>(v.size()) / s;
}

/// MPT pair from a list of per-type accuracies (percent).
inline std::pair<double, double> mpt_from_accuracies(const std::vector<double>& acc) {
    return {arithmetic_mean(acc), harmonic_mean(acc)};
}

inline EvalReport evaluate(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& targets,
                           const std::vector<std::size_t>& type_of_sample, const QuestionTypeSet& types) {
    if (predictions.size() != targets.size() || predictions.size() != type_of_sample.size())
        throw std::invalid_argument("evaluate: length mismatch");
    const std::size_t N = types.size();
    std::vector<std::size_t> correct(N, 0), count(N, 0);
    std::size_t total_correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const std::size_t t = type_of_sample[i];
        if (t >= N) throw std::out_of_range("evaluate: type index out of range");
        ++count[t];
        if (predictions[i] == targets[i]) {
            ++correct[t];
            ++total_correct;
        }
    }
    EvalReport r;
    std::vector<double> present;
    for (std::size_t t = 0; t < N; ++t) {
        r.n_per_type[types.names[t]] = count[t];
        if (count[t] == 0) {
            r.absent_types.push_back(types.names[t]);
            continue;
        }
        const double acc = 100.0 * static_cast<double>(correct[t]) / static_cast<double>(count[t]);
        r.per_type_acc[types.names[t]] = acc;
        present.push_back(acc);
    }
    r.arithmetic_mpt = arithmetic_mean(present);
    r.harmonic_mpt = harmonic_mean(present);
    r.overall_acc = predictions.empty()
                        ? 0.0
                        : 100.0 * static_cast<double>(total_correct) / static_cast<double>(predictions.size());
    return r;
}

/// N x N counts, rows = target type, columns = predicted type.
struct ConfusionMatrix {
    std::size_t n = 0;
    std::vector<std::size_t> counts;  // row-major

    std::size_t at(std::size_t target, std::size_t pred) const { return counts[target * n + pred]; }

    /// Row-normalized percentages; empty rows stay all-zero.
    std::vector<double> normalized() const {
        std::vector<double> out(n * n, 0.0);
        for (std::size_t r = 0; r < n; ++r) {
            std::size_t row_sum = 0;
            for (std::size_t c = 0; c < n; ++c) row_sum += counts[r * n + c];
            if (row_sum == 0) continue;
            for (std::size_t c = 0; c < n; ++c)
                out[r * n + c] = 100.0 * static_cast<double>(counts[r * n + c]) / static_cast<double>(row_sum);
        }
        return out;
    }

    nlohmann::json to_json(const QuestionTypeSet& types) const {
        nlohmann::json j;
        j["types"] = types.names;
        j["counts"] = counts;
        j["normalized_pct"] = normalized();
        return j;
    }
};

inline ConfusionMatrix confusion(const std::vector<std::size_t>& type_preds,
                                 const std::vector<std::size_t>& type_targets, std::size_t n) {
    if (type_preds.size() != type_targets.size()) throw std::invalid_argument("confusion: length mismatch");
    ConfusionMatrix m;
    m.n = n;
    m.counts.assign(n * n, 0);
    for (std::size_t i = 0; i < type_preds.size(); ++i) {
        if (type_preds[i] >= n || type_targets[i] >= n) throw std::out_of_range("confusion: index out of range");
        ++m.counts[type_targets[i] * n + type_preds[i]];
    }
    return m;
}

/// Per (type, source block): mean L2 norm of the raw block, of the gated
/// block, and the difference. With all-ones gating every difference is 0.
struct NormReportRow {
    std::string type;
    std::string block;
    double raw_norm_mean = 0.0;
    double gated_norm_mean = 0.0;
    double diff = 0.0;
};

struct NormReport {
    std::vector<NormReportRow> rows;

    std::string to_csv() const {
        std::string out = "type,block,raw_norm_mean,gated_norm_mean,diff\n";
        char buf[160];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof(buf), "%s,%s,%.10g,%.10g,%.10g\n", r.type.c_str(), r.block.c_str(),
                          r.raw_norm_mean, r.gated_norm_mean, r.diff);
            out += buf;
        }
        return out;
    }
};

/// Norm accounting over a dataset: `raw_blocks[i]` is the concatenated
/// visual feature of sample i, gated with the W column of its type.
inline NormReport norm_report(const Tensor& gating_w, const BlockBounds& blocks,
                              const std::vector<std::string>& block_names, const std::vector<Tensor>& raw_features,
                              const std::vector<std::size_t>& type_of_sample, const QuestionTypeSet& types) {
    if (raw_features.size() != type_of_sample.size()) throw std::invalid_argument("norm_report: length mismatch");
    const std::size_t N = types.size(), B = blocks.size();
    std::vector<double> raw_sum(N * B, 0.0), gated_sum(N * B, 0.0);
    std::vector<std::size_t> n(N, 0);
    const std::size_t cols = gating_w.extent(1);
    for (std::size_t i = 0; i < raw_features.size(); ++i) {
        const Tensor& f = raw_features[i];
        const std::size_t t = type_of_sample[i];
        ++n[t];
        for (std::size_t bi = 0; bi < B; ++bi) {
            double raw2 = 0.0, gated2 = 0.0;
            for (std::size_t k = blocks[bi].first; k < blocks[bi].second; ++k) {
                const double v = f[k];
                const double g = v * gating_w[k * cols + t];
                raw2 += v * v;
                gated2 += g * g;
            }
            raw_sum[t * B + bi] += std::sqrt(raw2);
            gated_sum[t * B + bi] += std::sqrt(gated2);
        }
    }
    NormReport out;
    for (std::size_t t = 0; t < N; ++t) {
        if (n[t] == 0) continue;
        for (std::size_t bi = 0; bi < B; ++bi) {
            NormReportRow row;
            row.type = types.names[t];
            row.block = block_names[bi];
            row.raw_norm_mean = raw_sum[t * B + bi] / static_cast<double>(n[t]);
            row.gated_norm_mean = gated_sum[t * B + bi] / static_cast<double>(n[t]);
            row.diff = row.gated_norm_mean - row.raw_norm_mean;
            out.rows.push_back(row);
        }
    }
    return out;
}

/// Cross entropy of a probability vector against a class index, with the
/// documented 1e-12 clamp.
inline double cross_entropy_probs(const Tensor& probs, std::size_t target) {
    if (target >= probs.numel()) throw std::out_of_range("cross_entropy_probs: target out of range");
    return -std::log(std::max(probs[target], 1e-12));
}

}  // namespace qta
