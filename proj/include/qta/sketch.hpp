#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "autodiff.hpp"
#include "fft.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace qta {

/// Frozen random hash pair (f, s) plus sketch width b. Fully determined by
/// (n, b, seed); regeneration reproduces it exactly.
struct SketchParams {
    std::size_t n = 0;
    std::size_t b = 0;
    std::vector<std::uint32_t> f;  // bucket index per input coordinate, in [0, b)
    std::vector<std::int8_t> s;    // sign per input coordinate, +1 or -1
    std::uint64_t seed = 0;
};

inline SketchParams make_sketch_params(std::size_t n, std::size_t b, std::uint64_t seed) {
    if (n < 1 || b < 1) throw std::invalid_argument("make_sketch_params: n and b must be positive");
    SketchParams p;
    p.n = n;
    p.b = b;
    p.seed = seed;
    p.f.resize(n);
    p.s.resize(n);
    Rng rf(seed, Rng::stream_id("sketch-f"));
    Rng rs(seed, Rng::stream_id("sketch-s"));
    for (std::size_t i = 0; i < n; ++i) p.f[i] = static_cast<std::uint32_t>(rf.uniform_int(b));
    for (std::size_t i = 0; i < n; ++i) p.s[i] = (rs.uniform_int(2) == 0) ? std::int8_t(1) : std::int8_t(-1);
    return p;
}

/// cs(a, f, s)[j] = sum over i with f[i] == j of s[i] * a[i].
inline Tensor count_sketch(const Tensor& a, const SketchParams& p) {
    if (a.numel() != p.n) throw std::invalid_argument("count_sketch: dimension mismatch");
    Tensor out({p.b});
    for (std::size_t i = 0; i < p.n; ++i) out[p.f[i]] += static_cast<double>(p.s[i]) * a[i];
    return out;
}

/// Adjoint of count_sketch: scatter g back through (f, s).
inline Tensor count_sketch_transpose(const Tensor& g, const SketchParams& p) {
    if (g.numel() != p.b) throw std::invalid_argument("count_sketch_transpose: dimension mismatch");
    Tensor out({p.n});
    for (std::size_t i = 0; i < p.n; ++i) out[i] = static_cast<double>(p.s[i]) * g[p.f[i]];
    return out;
}

/// Brute-force sketch of the outer product a (x) v with combined hash
/// (fa[i] + fv[j]) mod b and sign sa[i]*sv[j]. O(n1*n2); the oracle the FFT
/// path is validated against.
inline Tensor outer_sketch_direct(const Tensor& a, const Tensor& v, const SketchParams& pa, const SketchParams& pv) {
    if (pa.b != pv.b) throw std::invalid_argument("outer_sketch_direct: width mismatch");
    if (a.numel() != pa.n || v.numel() != pv.n) throw std::invalid_argument("outer_sketch_direct: dimension mismatch");
    Tensor out({pa.b});
    for (std::size_t i = 0; i < pa.n; ++i) {
        const double ai = static_cast<double>(pa.s[i]) * a[i];
        if (ai == 0.0) continue;
        for (std::size_t j = 0; j < pv.n; ++j) {
            const std::size_t k = (pa.f[i] + pv.f[j]) % pa.b;
            out[k] += ai * static_cast<double>(pv.s[j]) * v[j];
        }
    }
    return out;
}

/// Compact bilinear pooling with spatial preservation: for each location
/// (h, w), the circular convolution of the channel sketch with the text
/// sketch, computed via FFT. Output is b x H x W.
inline Tensor mcb_fuse(const Tensor& image, const Tensor& text, const SketchParams& p_img, const SketchParams& p_txt,
                       double imag_tol = 1e-9) {
    if (image.ndim() != 3) throw std::invalid_argument("mcb_fuse: image must be C x H x W");
    if (p_img.b != p_txt.b) throw std::invalid_argument("mcb_fuse: width mismatch");
    const std::size_t C = image.extent(0), H = image.extent(1), W = image.extent(2);
    if (C != p_img.n || text.numel() != p_txt.n) throw std::invalid_argument("mcb_fuse: dimension mismatch");
    const std::size_t b = p_img.b;

    const Tensor cs_txt = count_sketch(text, p_txt);
    const ComplexVector f_txt = fft1(to_complex(cs_txt));

    Tensor out({b, H, W});
    Tensor chan({C});
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
            for (std::size_t c = 0; c < C; ++c) chan[c] = image[(c * H + h) * W + w];
            ComplexVector fa = fft1(to_complex(count_sketch(chan, p_img)));
            for (std::size_t k = 0; k < b; ++k) fa[k] *= f_txt[k];
            double mag = 0.0;
            for (std::size_t c = 0; c < C; ++c) mag = std::max(mag, std::abs(chan[c]));
            double tmag = 0.0;
            for (std::size_t k = 0; k < text.numel(); ++k) tmag = std::max(tmag, std::abs(text[k]));
            const Tensor loc =
                real_part(ifft1(fa), imag_tol * std::max(1.0, mag * tmag * static_cast<double>(b)));
            for (std::size_t k = 0; k < b; ++k) out[(k * H + h) * W + w] = loc[k];
        }
    }
    out.check_finite("mcb_fuse");
    return out;
}

// ---- differentiable wrappers ----

namespace ops {

inline ad::Var count_sketch(const ad::Var& a, const SketchParams& p) {
    Tensor v = qta::count_sketch(a->value, p);
    return ad::make_op(std::move(v), {a}, [&p](ad::Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        const Tensor da = count_sketch_transpose(self.grad, p);
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += da[i];
    });
}

/// Circular convolution node over equal-length vectors; gradients are the
/// circular correlations with the opposite operand.
inline ad::Var circular_conv(const ad::Var& a, const ad::Var& b, double imag_tol = 1e-9) {
    Tensor v = qta::circular_conv(a->value, b->value, imag_tol);
    return ad::make_op(std::move(v), {a, b}, [](ad::Node& self) {
        ad::Node& pa = *self.parents[0];
        ad::Node& pb = *self.parents[1];
        if (pa.requires_grad) pa.accumulate(circular_corr(self.grad, pb.value));
        if (pb.requires_grad) pb.accumulate(circular_corr(self.grad, pa.value));
    });
}

/// Differentiable mcb_fuse over a C x H x W image Var and a text Var.
/// SketchParams must outlive the graph (they live in the owning model).
inline ad::Var mcb_fuse(const ad::Var& image, const ad::Var& text, const SketchParams& p_img,
                        const SketchParams& p_txt, double imag_tol = 1e-9) {
    Tensor v = qta::mcb_fuse(image->value, text->value, p_img, p_txt, imag_tol);
    return ad::make_op(std::move(v), {image, text}, [&p_img, &p_txt](ad::Node& self) {
        ad::Node& pi = *self.parents[0];
        ad::Node& pt = *self.parents[1];
        const std::size_t C = pi.value.extent(0), H = pi.value.extent(1), W = pi.value.extent(2);
        const std::size_t b = p_img.b;

        const Tensor cs_txt = qta::count_sketch(pt.value, p_txt);
        Tensor d_cs_txt({b});
        Tensor chan({C});
        Tensor g_loc({b});
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t w = 0; w < W; ++w) {
                for (std::size_t k = 0; k < b; ++k) g_loc[k] = self.grad[(k * H + h) * W + w];
                for (std::size_t c = 0; c < C; ++c) chan[c] = pi.value[(c * H + h) * W + w];
                const Tensor cs_img = qta::count_sketch(chan, p_img);
                if (pi.requires_grad) {
                    const Tensor d_cs = circular_corr(g_loc, cs_txt);
                    const Tensor d_chan = count_sketch_transpose(d_cs, p_img);
                    Tensor& g = pi.grad_ref();
                    for (std::size_t c = 0; c < C; ++c) g[(c * H + h) * W + w] += d_chan[c];
                }
                if (pt.requires_grad) {
                    const Tensor d_cs = circular_corr(g_loc, cs_img);
                    for (std::size_t k = 0; k < b; ++k) d_cs_txt[k] += d_cs[k];
                }
            }
        }
        if (pt.requires_grad) pt.accumulate(count_sketch_transpose(d_cs_txt, p_txt));
    });
}

}  // namespace ops

/// Optional post-step used in compact-bilinear practice: signed square root
/// followed by L2 normalization. Default OFF everywhere.
inline Tensor signed_sqrt_l2(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = (x[i] >= 0 ? 1.0 : -1.0) * std::sqrt(std::abs(x[i]));
    const double n = l2_norm(out);
    if (n > 0)
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] /= n;
    return out;
}

}  // namespace qta
