#pragma once

#include <string>
#include <vector>

#include "autodiff.hpp"
#include "sketch.hpp"

namespace qta {

/// Ordered question type names. The TDIUC set is the full-scale default;
/// synthetic runs use their own smaller sets.
struct QuestionTypeSet {
    std::vector<std::string> names;

    std::size_t size() const { return names.size(); }

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return i;
        throw std::out_of_range("QuestionTypeSet: unknown type " + name);
    }

    void validate() const {
        if (names.size() < 2) throw std::invalid_argument("QuestionTypeSet: need at least 2 types");
        for (std::size_t i = 0; i < names.size(); ++i)
            for (std::size_t j = i + 1; j < names.size(); ++j)
                if (names[i] == names[j]) throw std::invalid_argument("QuestionTypeSet: duplicate name " + names[i]);
    }
};

inline QuestionTypeSet tdiuc_types() {
    return {{"Other Attributes", "Sentiment Understanding", "Sports Recognition", "Position Reasoning",
             "Object Utilities/Affordances", "Activity Recognition", "Scene Classification", "Color",
             "Object Recognition", "Object Presence", "Counting", "Absurd"}};
}

/// Half-open [begin, end) ranges of each source inside the concatenated
/// visual feature, kept for the norm diagnostics.
using BlockBounds = std::vector<std::pair<std::size_t, std::size_t>>;

struct ConcatVisual {
    ad::Var feature;     // [M]
    BlockBounds blocks;  // one entry per source
};

inline ConcatVisual concat_visual(const std::vector<ad::Var>& sources) {
    if (sources.empty()) throw std::invalid_argument("concat_visual: no sources");
    ConcatVisual out;
    std::size_t off = 0;
    for (const auto& s : sources) {
        out.blocks.emplace_back(off, off + s->value.numel());
        off += s->value.numel();
    }
    out.feature = sources.size() == 1 ? sources[0] : ad::concat(sources);
    return out;
}

/// M x N gating matrix; column j is the gating profile of type j.
/// Initialized to all-ones so gating starts as identity.
struct QtaWeights {
    ad::Var w;          // [M x N]
    bool nonneg = false;  // softplus reparameterization, default OFF
};

inline QtaWeights make_qta_weights(std::size_t m, std::size_t n, bool nonneg = false) {
    return {ad::make_param(Tensor::ones({m, n})), nonneg};
}

inline ad::Var qta_column(const QtaWeights& w, std::size_t q_type) {
    if (w.w->value.ndim() != 2 || q_type >= w.w->value.extent(1))
        throw std::out_of_range("qta_gate: question type index out of range");
    ad::Var column = ad::col(w.w, q_type);
    if (w.nonneg) {
        // softplus via the existing primitives: log(1+e^x) = x + log(sigmoid(-x))... keep it direct:
        Tensor v(column->value.shape());
        for (std::size_t i = 0; i < v.numel(); ++i) v[i] = std::log1p(std::exp(column->value[i]));
        column = ad::make_op(std::move(v), {column}, [](ad::Node& self) {
            Tensor& g = self.parents[0]->grad_ref();
            for (std::size_t i = 0; i < g.numel(); ++i)
                g[i] += self.grad[i] / (1.0 + std::exp(-self.parents[0]->value[i]));
        });
    }
    return column;
}

/// F ∘ (W Q) with Q the one-hot type indicator: out[i] = F[i] * W[i, q_type].
inline ad::Var qta_gate(const ad::Var& feature, std::size_t q_type, const QtaWeights& w) {
    if (feature->value.numel() != w.w->value.extent(0))
        throw std::invalid_argument("qta_gate: feature dim does not match gating rows");
    return ad::mul(feature, qta_column(w, q_type));
}

/// Channel-wise gating of a C x H x W map: every spatial column is gated by
/// the same weight column.
inline ad::Var qta_gate_spatial(const ad::Var& image, std::size_t q_type, const QtaWeights& w) {
    if (image->value.ndim() != 3) throw std::invalid_argument("qta_gate_spatial: need C x H x W");
    const std::size_t C = image->value.extent(0), H = image->value.extent(1), W = image->value.extent(2);
    if (C != w.w->value.extent(0)) throw std::invalid_argument("qta_gate_spatial: channel count mismatch");
    ad::Var column = qta_column(w, q_type);
    Tensor v(image->value.shape());
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t s = 0; s < H * W; ++s) v[c * H * W + s] = image->value[c * H * W + s] * column->value[c];
    return ad::make_op(std::move(v), {image, column}, [C, H, W](ad::Node& self) {
        ad::Node& pi = *self.parents[0];
        ad::Node& pc = *self.parents[1];
        if (pi.requires_grad) {
            Tensor& g = pi.grad_ref();
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t s = 0; s < H * W; ++s) g[c * H * W + s] += self.grad[c * H * W + s] * pc.value[c];
        }
        if (pc.requires_grad) {
            Tensor& g = pc.grad_ref();
            for (std::size_t c = 0; c < C; ++c) {
                double acc = 0.0;
                for (std::size_t s = 0; s < H * W; ++s) acc += self.grad[c * H * W + s] * pi.value[c * H * W + s];
                g[c] += acc;
            }
        }
    });
}

/// N x E learned type embedding for the QT (no attention) baseline.
struct TypeEmbedding {
    ad::Var rows;  // [N x E]
};

inline TypeEmbedding make_type_embedding(std::size_t n_types, std::size_t e, Rng rng) {
    return {ad::make_param(rng.uniform_tensor({n_types, e}, -0.5, 0.5))};
}

/// [F, emb_row(q_type)] — type information as input, no gating.
inline ad::Var qt_concat(const ad::Var& feature, std::size_t q_type, const TypeEmbedding& emb) {
    if (!emb.rows || emb.rows->value.numel() == 0) return feature;
    if (q_type >= emb.rows->value.extent(0)) throw std::out_of_range("qt_concat: type index out of range");
    return ad::concat({feature, ad::row(emb.rows, q_type)});
}

/// Channel-concat of two spatial maps, type gating, then MCB against the
/// text feature. Callers reshape region features to C x H x W first.
inline ad::Var mcb_qta_fuse(const ad::Var& src_a, const ad::Var& src_b, const ad::Var& text, std::size_t q_type,
                            const QtaWeights& w, const SketchParams& p_img, const SketchParams& p_txt,
                            double imag_tol = 1e-9) {
    const Tensor& A = src_a->value;
    const Tensor& B = src_b->value;
    if (A.ndim() != 3 || B.ndim() != 3 || A.extent(1) != B.extent(1) || A.extent(2) != B.extent(2))
        throw std::invalid_argument("mcb_qta_fuse: spatial extents mismatch");
    const std::size_t C1 = A.extent(0), C2 = B.extent(0), H = A.extent(1), W = A.extent(2);

    // channel concat (M_c = C1 + C2)
    Tensor cat({C1 + C2, H, W});
    for (std::size_t i = 0; i < A.numel(); ++i) cat[i] = A[i];
    for (std::size_t i = 0; i < B.numel(); ++i) cat[A.numel() + i] = B[i];
    ad::Var cat_v = ad::make_op(std::move(cat), {src_a, src_b}, [](ad::Node& self) {
        ad::Node& pa = *self.parents[0];
        ad::Node& pb = *self.parents[1];
        const std::size_t na = pa.value.numel();
        if (pa.requires_grad) {
            Tensor& g = pa.grad_ref();
            for (std::size_t i = 0; i < na; ++i) g[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            Tensor& g = pb.grad_ref();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[na + i];
        }
    });

    ad::Var gated = qta_gate_spatial(cat_v, q_type, w);
    return ops::mcb_fuse(gated, text, p_img, p_txt, imag_tol);
}

/// Parameter counts behind the §5.3-style "approximately same number of
/// parameters" comparison between QTA and QT.
inline std::size_t qta_param_count(std::size_t m, std::size_t n_types) { return m * n_types; }
inline std::size_t qt_param_count(std::size_t n_types, std::size_t e, std::size_t mlp_hidden) {
    // the embedding itself plus the extra first-layer MLP columns it induces
    return n_types * e + e * mlp_hidden;
}

}  // namespace qta
