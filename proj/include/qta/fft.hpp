#pragma once

#include <complex>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "tensor.hpp"

namespace qta {

using Complex = std::complex<double>;
using ComplexVector = std::vector<Complex>;

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 Cooley-Tukey. n must be a power of two.
inline void fft_pow2(ComplexVector& a, bool inverse) {
    const std::size_t n = a.size();
    // bit reversal
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * std::numbers::pi / static_cast<double>(len);
        const Complex wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            Complex w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                Complex u = a[i + k];
                Complex v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (inverse)
        for (auto& x : a) x /= static_cast<double>(n);
}

/// Bluestein chirp-z transform: DFT of arbitrary length via a padded
/// power-of-two convolution.
inline ComplexVector fft_bluestein(const ComplexVector& x, bool inverse) {
    const std::size_t n = x.size();
    std::size_t m = 1;
    while (m < 2 * n - 1) m <<= 1;

    // chirp[k] = exp(±i*pi*k^2/n); angle computed mod 2n to keep k^2 bounded.
    ComplexVector chirp(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t k2 = (k * k) % (2 * n);
        const double ang = (inverse ? 1.0 : -1.0) * std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
        chirp[k] = Complex(std::cos(ang), std::sin(ang));
    }

    ComplexVector a(m, Complex(0, 0)), b(m, Complex(0, 0));
    for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * chirp[k];
    b[0] = std::conj(chirp[0]);
    for (std::size_t k = 1; k < n; ++k) b[k] = b[m - k] = std::conj(chirp[k]);

    fft_pow2(a, false);
    fft_pow2(b, false);
    for (std::size_t k = 0; k < m; ++k) a[k] *= b[k];
    fft_pow2(a, true);

    ComplexVector out(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = a[k] * chirp[k];
    if (inverse)
        for (auto& v : out) v /= static_cast<double>(n);
    return out;
}

}  // namespace detail

/// Forward DFT, any length >= 1.
inline ComplexVector fft1(const ComplexVector& x) {
    if (x.empty()) throw std::invalid_argument("fft1: zero length");
    if (detail::is_pow2(x.size())) {
        ComplexVector a = x;
        detail::fft_pow2(a, false);
        return a;
    }
    return detail::fft_bluestein(x, false);
}

/// Inverse DFT (normalized so ifft1(fft1(x)) == x).
inline ComplexVector ifft1(const ComplexVector& x) {
    if (x.empty()) throw std::invalid_argument("ifft1: zero length");
    if (detail::is_pow2(x.size())) {
        ComplexVector a = x;
        detail::fft_pow2(a, true);
        return a;
    }
    return detail::fft_bluestein(x, true);
}

inline ComplexVector to_complex(const Tensor& x) {
    ComplexVector out(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = Complex(x[i], 0.0);
    return out;
}

/// Real part of a complex vector; throws if any imaginary residue exceeds tol.
inline Tensor real_part(const ComplexVector& x, double imag_tol) {
    Tensor out({x.size()});
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::abs(x[i].imag()) > imag_tol)
            throw std::runtime_error("real_part: imaginary residue " + std::to_string(std::abs(x[i].imag())) +
                                     " exceeds tolerance");
        out[i] = x[i].real();
    }
    return out;
}

/// Circular convolution of two equal-length real vectors via FFT.
inline Tensor circular_conv(const Tensor& a, const Tensor& b, double imag_tol = 1e-9) {
    if (a.numel() != b.numel()) throw std::invalid_argument("circular_conv: length mismatch");
    ComplexVector fa = fft1(to_complex(a));
    ComplexVector fb = fft1(to_complex(b));
    for (std::size_t i = 0; i < fa.size(); ++i) fa[i] *= fb[i];
    // residue scales with the magnitude of the inputs
    double mag = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) mag = std::max({mag, std::abs(a[i]), std::abs(b[i])});
    return real_part(ifft1(fa), imag_tol * std::max(1.0, mag * mag * static_cast<double>(a.numel())));
}

/// Circular cross-correlation: out[i] = sum_k g[k] * v[(k - i) mod n].
/// This is the adjoint of circular convolution in either argument.
inline Tensor circular_corr(const Tensor& g, const Tensor& v) {
    if (g.numel() != v.numel()) throw std::invalid_argument("circular_corr: length mismatch");
    ComplexVector fg = fft1(to_complex(g));
    ComplexVector fv = fft1(to_complex(v));
    for (std::size_t i = 0; i < fg.size(); ++i) fg[i] *= std::conj(fv[i]);
    ComplexVector r = ifft1(fg);
    Tensor out({g.numel()});
    for (std::size_t i = 0; i < g.numel(); ++i) out[i] = r[i].real();
    return out;
}

}  // namespace qta
