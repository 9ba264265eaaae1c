#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace qta {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

/// Dense row-major n-dimensional array of doubles. Immutable by convention
/// once returned from an op; all public ops reject non-finite results.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
        for (auto e : shape_)
            if (e == 0) throw std::invalid_argument("Tensor: zero extent in shape " + shape_str(shape_));
    }

    Tensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != data_.size())
            throw std::invalid_argument("Tensor: shape " + shape_str(shape_) + " does not match data length " +
                                        std::to_string(data_.size()));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
        return t;
    }

    static Tensor vec(std::vector<double> v) {
        Shape s{v.size()};
        return Tensor(std::move(s), std::move(v));
    }

    const Shape& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    std::size_t extent(std::size_t d) const { return shape_.at(d); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    // 2-D accessor, row-major.
    double at2(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    double& at2(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void check_finite(const char* where) const {
        if (!all_finite()) throw std::runtime_error(std::string("non-finite value after ") + where);
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw std::invalid_argument("matmul: operands must be 2-D");
    if (a.extent(1) != b.extent(0))
        throw std::invalid_argument("matmul: inner extents " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data() + i * k;
        double* orow = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    out.check_finite("matmul");
    return out;
}

enum class EwOp { add, sub, mul };

inline Tensor elementwise(const Tensor& a, const Tensor& b, EwOp op) {
    if (!a.same_shape(b))
        throw std::invalid_argument("elementwise: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    Tensor out(a.shape());
    const std::size_t n = a.numel();
    switch (op) {
        case EwOp::add:
            for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
            break;
        case EwOp::sub:
            for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
            break;
        case EwOp::mul:
            for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
            break;
    }
    out.check_finite("elementwise");
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwOp::add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwOp::sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwOp::mul); }

inline Tensor scale(const Tensor& a, double k) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * k;
    out.check_finite("scale");
    return out;
}

/// Max-subtracted softmax over a 1-D tensor.
inline Tensor softmax(const Tensor& x) {
    Tensor out(x.shape());
    double mx = x[0];
    for (std::size_t i = 1; i < x.numel(); ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        out[i] = std::exp(x[i] - mx);
        z += out[i];
    }
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] /= z;
    out.check_finite("softmax");
    return out;
}

inline Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    return out;
}

inline Tensor sigmoid(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
    out.check_finite("sigmoid");
    return out;
}

inline Tensor tanh_t(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = std::tanh(x[i]);
    return out;
}

inline double dot(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("dot: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
}

inline double l2_norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

}  // namespace qta
