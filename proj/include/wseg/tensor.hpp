#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace wseg {

namespace detail {

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline std::string dims_str(const std::vector<std::size_t>& dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

}  // namespace detail

/// Dense row-major tensor of doubles. The universal carrier for feature
/// maps, masks, score maps and parameter blocks. Channel-first layout:
/// rank-3 tensors are indexed (channel, row, col).
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0)
        : dims_(std::move(dims)), data_(checked_size(dims_), fill) {
        detail::check(std::isfinite(fill), "Tensor: non-finite fill value");
    }

    /// Construction from external data; rejects NaN/Inf entries.
    static Tensor from_data(std::vector<std::size_t> dims, std::vector<double> data) {
        Tensor t;
        t.dims_ = std::move(dims);
        detail::check(checked_size(t.dims_) == data.size(),
                      "Tensor: data length " + std::to_string(data.size()) +
                          " does not match dims " + detail::dims_str(t.dims_));
        for (double v : data)
            detail::check(std::isfinite(v), "Tensor: non-finite entry rejected");
        t.data_ = std::move(data);
        return t;
    }

    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::size_t dim(std::size_t i) const { return dims_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // rank-2 access (row, col)
    double& at(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * dims_[1] + j]; }

    // rank-3 access (channel, row, col)
    double& at(std::size_t c, std::size_t i, std::size_t j) {
        return data_[(c * dims_[1] + i) * dims_[2] + j];
    }
    double at(std::size_t c, std::size_t i, std::size_t j) const {
        return data_[(c * dims_[1] + i) * dims_[2] + j];
    }

    // rank-4 access (n, channel, row, col)
    double& at(std::size_t n, std::size_t c, std::size_t i, std::size_t j) {
        return data_[((n * dims_[1] + c) * dims_[2] + i) * dims_[3] + j];
    }
    double at(std::size_t n, std::size_t c, std::size_t i, std::size_t j) const {
        return data_[((n * dims_[1] + c) * dims_[2] + i) * dims_[3] + j];
    }

    bool same_dims(const Tensor& o) const { return dims_ == o.dims_; }

    auto begin() { return data_.begin(); }
    auto end() { return data_.end(); }
    auto begin() const { return data_.begin(); }
    auto end() const { return data_.end(); }

private:
    static std::size_t checked_size(const std::vector<std::size_t>& dims) {
        std::size_t n = 1;
        for (std::size_t d : dims) {
            detail::check(d > 0, "Tensor: zero-sized dimension in " + detail::dims_str(dims));
            n *= d;
        }
        return dims.empty() ? 0 : n;
    }

    std::vector<std::size_t> dims_;
    std::vector<double> data_;
};

namespace detail {

inline void check_rank3(const Tensor& t, const char* who) {
    check(t.rank() == 3 && !t.empty(),
          std::string(who) + ": expected non-empty rank-3 tensor, got " + dims_str(t.dims()));
}

inline void check_same_dims(const Tensor& a, const Tensor& b, const char* who) {
    check(a.same_dims(b), std::string(who) + ": dims mismatch " + dims_str(a.dims()) +
                              " vs " + dims_str(b.dims()));
}

}  // namespace detail

/// Pixelwise softmax across the channel axis of a C x h x w tensor,
/// computed with max-subtraction. Each output pixel lies on the simplex.
inline Tensor softmax_over_channels(const Tensor& t) {
    detail::check_rank3(t, "softmax_over_channels");
    const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor out(std::vector<std::size_t>{c, h, w});
    const std::size_t plane = h * w;
    for (std::size_t p = 0; p < plane; ++p) {
        double mx = t[p];
        for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, t[k * plane + p]);
        double sum = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            const double e = std::exp(t[k * plane + p] - mx);
            out[k * plane + p] = e;
            sum += e;
        }
        for (std::size_t k = 0; k < c; ++k) out[k * plane + p] /= sum;
    }
    return out;
}

/// Per-channel spatial maximum of a K x h x w tensor.
inline Tensor global_max_pool(const Tensor& t) {
    detail::check_rank3(t, "global_max_pool");
    const std::size_t k = t.dim(0), plane = t.dim(1) * t.dim(2);
    Tensor out(std::vector<std::size_t>{k});
    for (std::size_t c = 0; c < k; ++c) {
        double mx = t[c * plane];
        for (std::size_t p = 1; p < plane; ++p) mx = std::max(mx, t[c * plane + p]);
        out[c] = mx;
    }
    return out;
}

/// Like global_max_pool but also reports the flat spatial index of the
/// (first) maximum per channel, needed to route gradients.
inline Tensor global_max_pool_argmax(const Tensor& t, std::vector<std::size_t>& argmax) {
    detail::check_rank3(t, "global_max_pool");
    const std::size_t k = t.dim(0), plane = t.dim(1) * t.dim(2);
    Tensor out(std::vector<std::size_t>{k});
    argmax.assign(k, 0);
    for (std::size_t c = 0; c < k; ++c) {
        double mx = t[c * plane];
        std::size_t arg = 0;
        for (std::size_t p = 1; p < plane; ++p) {
            if (t[c * plane + p] > mx) {
                mx = t[c * plane + p];
                arg = p;
            }
        }
        out[c] = mx;
        argmax[c] = arg;
    }
    return out;
}

}  // namespace wseg
