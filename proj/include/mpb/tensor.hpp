#pragma once

// Dense multiway arrays and the CP-related kernels built on them.
//
// Storage is flat, last index fastest: the offset of (i_0, ..., i_{P-1}) is
// i_{P-1} + n_{P-1} * (i_{P-2} + n_{P-2} * (...)). Mode indices are zero-based.
// Mode-d unfoldings follow the Kolda-Bader convention: element (i_0, ..., i_{P-1})
// lands in row i_d, and the column index is built from the remaining indices
// with EARLIER modes varying fastest.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mpb/error.hpp"

namespace mpb {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Dims = std::vector<std::size_t>;

inline std::size_t product(std::span<const std::size_t> v) {
    return std::accumulate(v.begin(), v.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string dims_to_string(std::span<const std::size_t> dims) {
    std::string s = "(";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(dims[i]);
    }
    return s + ")";
}

class DenseTensor {
public:
    DenseTensor() = default;

    explicit DenseTensor(Dims dims) : dims_(std::move(dims)) {
        validate_dims();
        data_.assign(product(dims_), 0.0);
    }

    DenseTensor(Dims dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
        validate_dims();
        detail::require(data_.size() == product(dims_),
                        "tensor data length " + std::to_string(data_.size()) +
                            " does not match dims " + dims_to_string(dims_));
    }

    const Dims& dims() const noexcept { return dims_; }
    std::size_t order() const noexcept { return dims_.size(); }
    std::size_t dim(std::size_t d) const { return dims_.at(d); }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    std::size_t offset(std::span<const std::size_t> idx) const {
        detail::require(idx.size() == dims_.size(), "index arity mismatch");
        std::size_t off = 0;
        for (std::size_t d = 0; d < dims_.size(); ++d) {
            detail::require(idx[d] < dims_[d], "tensor index out of range");
            off = off * dims_[d] + idx[d];
        }
        return off;
    }

    double& operator()(std::span<const std::size_t> idx) { return data_[offset(idx)]; }
    double operator()(std::span<const std::size_t> idx) const { return data_[offset(idx)]; }
    double& operator()(std::initializer_list<std::size_t> idx) {
        return (*this)(std::span<const std::size_t>(idx.begin(), idx.size()));
    }
    double operator()(std::initializer_list<std::size_t> idx) const {
        return (*this)(std::span<const std::size_t>(idx.begin(), idx.size()));
    }

    double squared_norm() const noexcept {
        double s = 0.0;
        for (double v : data_) s += v * v;
        return s;
    }
    double frobenius_norm() const noexcept { return std::sqrt(squared_norm()); }

    /// Flat data as an Eigen column vector.
    Eigen::Map<const Vector> as_vector() const { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }
    Eigen::Map<Vector> as_vector() { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }

    bool operator==(const DenseTensor&) const = default;

private:
    void validate_dims() const {
        detail::require(!dims_.empty(), "tensor must have at least one mode");
        for (auto n : dims_) detail::require(n >= 1, "tensor dims must be >= 1, got " + dims_to_string(dims_));
    }

    Dims dims_;
    std::vector<double> data_;
};

inline double inner_product(const DenseTensor& a, const DenseTensor& b) {
    detail::require(a.dims() == b.dims(), "inner_product: dims mismatch " + dims_to_string(a.dims()) +
                                              " vs " + dims_to_string(b.dims()));
    return a.as_vector().dot(b.as_vector());
}

namespace detail {

struct ModeSplit {
    std::size_t left;   // product of dims before d
    std::size_t n;      // dims[d]
    std::size_t right;  // product of dims after d
};

inline ModeSplit split_at(const Dims& dims, std::size_t d) {
    require(d < dims.size(), "mode " + std::to_string(d) + " out of range for order-" +
                                 std::to_string(dims.size()) + " tensor");
    ModeSplit s{1, dims[d], 1};
    for (std::size_t k = 0; k < d; ++k) s.left *= dims[k];
    for (std::size_t k = d + 1; k < dims.size(); ++k) s.right *= dims[k];
    return s;
}

// Column of element `flat` in the Kolda-Bader mode-d unfolding.
inline std::size_t unfold_column(const Dims& dims, std::size_t d, std::size_t flat) {
    std::size_t col = 0;
    std::size_t stride = 1;
    std::vector<std::size_t> idx(dims.size());
    for (std::size_t k = dims.size(); k-- > 0;) {
        idx[k] = flat % dims[k];
        flat /= dims[k];
    }
    for (std::size_t k = 0; k < dims.size(); ++k) {
        if (k == d) continue;
        col += idx[k] * stride;
        stride *= dims[k];
    }
    return col;
}

}  // namespace detail

inline Matrix mode_unfold(const DenseTensor& t, std::size_t d) {
    const auto s = detail::split_at(t.dims(), d);
    Matrix out(static_cast<Eigen::Index>(s.n), static_cast<Eigen::Index>(s.left * s.right));
    // Within the left block earlier modes must vary fastest, so recompute the
    // column index per left offset once and reuse it across the right block.
    const Dims& dims = t.dims();
    Dims left_dims(dims.begin(), dims.begin() + static_cast<std::ptrdiff_t>(d));
    Dims right_dims(dims.begin() + static_cast<std::ptrdiff_t>(d) + 1, dims.end());
    std::vector<std::size_t> left_col(s.left), right_col(s.right);
    for (std::size_t l = 0; l < s.left; ++l)
        left_col[l] = left_dims.empty() ? 0 : detail::unfold_column(left_dims, left_dims.size(), l);
    for (std::size_t r = 0; r < s.right; ++r)
        right_col[r] = right_dims.empty() ? 0 : detail::unfold_column(right_dims, right_dims.size(), r);
    const auto data = t.data();
    for (std::size_t l = 0; l < s.left; ++l)
        for (std::size_t i = 0; i < s.n; ++i)
            for (std::size_t r = 0; r < s.right; ++r)
                out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(left_col[l] + s.left * right_col[r])) =
                    data[(l * s.n + i) * s.right + r];
    return out;
}

/// Inverse of mode_unfold: `dims` is the shape of the folded tensor.
inline DenseTensor mode_fold(const Matrix& m, std::size_t d, const Dims& dims) {
    const auto s = detail::split_at(dims, d);
    detail::require(static_cast<std::size_t>(m.rows()) == s.n &&
                        static_cast<std::size_t>(m.cols()) == s.left * s.right,
                    "mode_fold: matrix shape does not match target dims " + dims_to_string(dims));
    DenseTensor t(dims);
    Dims left_dims(dims.begin(), dims.begin() + static_cast<std::ptrdiff_t>(d));
    Dims right_dims(dims.begin() + static_cast<std::ptrdiff_t>(d) + 1, dims.end());
    auto data = t.data();
    for (std::size_t l = 0; l < s.left; ++l) {
        const std::size_t lc = left_dims.empty() ? 0 : detail::unfold_column(left_dims, left_dims.size(), l);
        for (std::size_t r = 0; r < s.right; ++r) {
            const std::size_t rc = right_dims.empty() ? 0 : detail::unfold_column(right_dims, right_dims.size(), r);
            for (std::size_t i = 0; i < s.n; ++i)
                data[(l * s.n + i) * s.right + r] =
                    m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(lc + s.left * rc));
        }
    }
    return t;
}

/// t x_d m: contracts mode d of `t` with the columns of `m`.
inline DenseTensor mode_multiply(const DenseTensor& t, const Matrix& m, std::size_t d) {
    const auto s = detail::split_at(t.dims(), d);
    detail::require(static_cast<std::size_t>(m.cols()) == s.n,
                    "mode_multiply: matrix has " + std::to_string(m.cols()) + " columns but mode " +
                        std::to_string(d) + " has extent " + std::to_string(s.n));
    Dims out_dims = t.dims();
    out_dims[d] = static_cast<std::size_t>(m.rows());
    DenseTensor out(out_dims);
    const auto rows = static_cast<Eigen::Index>(m.rows());
    const auto n = static_cast<Eigen::Index>(s.n);
    const auto right = static_cast<Eigen::Index>(s.right);
    const double* src = t.data().data();
    double* dst = out.data().data();
    if (s.right == 1) {
        // Slabs are rows of a (left x n) row-major matrix.
        Eigen::Map<const RowMajorMatrix> in(src, static_cast<Eigen::Index>(s.left), n);
        Eigen::Map<RowMajorMatrix> res(dst, static_cast<Eigen::Index>(s.left), rows);
        res.noalias() = in * m.transpose();
        return out;
    }
    for (std::size_t l = 0; l < s.left; ++l) {
        Eigen::Map<const RowMajorMatrix> in(src + l * s.n * s.right, n, right);
        Eigen::Map<RowMajorMatrix> res(dst + l * static_cast<std::size_t>(rows) * s.right, rows, right);
        res.noalias() = m * in;
    }
    return out;
}

namespace detail {

inline Eigen::Index common_cols(std::span<const Matrix> mats, const char* who) {
    require(!mats.empty(), std::string(who) + ": empty matrix list");
    const auto k = mats.front().cols();
    for (const auto& a : mats)
        require(a.cols() == k, std::string(who) + ": column-count mismatch (" + std::to_string(a.cols()) +
                                   " vs " + std::to_string(k) + ")");
    return k;
}

}  // namespace detail

/// Column-wise Kronecker product; the first listed matrix varies slowest.
inline Matrix khatri_rao(std::span<const Matrix> mats) {
    const auto k = detail::common_cols(mats, "khatri_rao");
    Matrix out = mats.front();
    for (std::size_t i = 1; i < mats.size(); ++i) {
        const Matrix& b = mats[i];
        Matrix next(out.rows() * b.rows(), k);
        for (Eigen::Index c = 0; c < k; ++c)
            for (Eigen::Index r = 0; r < out.rows(); ++r)
                next.col(c).segment(r * b.rows(), b.rows()) = out(r, c) * b.col(c);
        out = std::move(next);
    }
    return out;
}

/// (KR(mats))' KR(mats) as the Hadamard product of the factor Grams.
inline Matrix gram_of_khatri_rao(std::span<const Matrix> mats) {
    const auto k = detail::common_cols(mats, "gram_of_khatri_rao");
    Matrix g = Matrix::Ones(k, k);
    for (const auto& a : mats) g.array() *= (a.transpose() * a).array();
    return g;
}

/// Matricized tensor times Khatri-Rao product for mode d.
///
/// `others` holds the factors of every mode except d, in mode order; the
/// result equals mode_unfold(t, d) * khatri_rao(reverse(others)) without
/// forming the full Khatri-Rao product.
inline Matrix mttkrp(const DenseTensor& t, std::span<const Matrix> others, std::size_t d) {
    const auto& dims = t.dims();
    const auto s = detail::split_at(dims, d);
    detail::require(others.size() + 1 == dims.size(),
                    "mttkrp: expected " + std::to_string(dims.size() - 1) + " factors, got " +
                        std::to_string(others.size()));
    const auto k = detail::common_cols(others, "mttkrp");
    for (std::size_t j = 0, mode = 0; j < others.size(); ++j, ++mode) {
        if (mode == d) ++mode;
        detail::require(static_cast<std::size_t>(others[j].rows()) == dims[mode],
                        "mttkrp: factor for mode " + std::to_string(mode) + " has " +
                            std::to_string(others[j].rows()) + " rows, tensor extent is " +
                            std::to_string(dims[mode]));
    }
    const std::span<const Matrix> left_f = others.subspan(0, d);
    const std::span<const Matrix> right_f = others.subspan(d);
    const Matrix right = right_f.empty() ? Matrix(Matrix::Ones(1, k)) : khatri_rao(right_f);

    const auto n = static_cast<Eigen::Index>(s.n);
    Eigen::Map<const RowMajorMatrix> flat(t.data().data(), static_cast<Eigen::Index>(s.left) * n,
                                          static_cast<Eigen::Index>(s.right));
    const Matrix tr = flat * right;  // (left*n) x K
    if (left_f.empty()) return tr;
    const Matrix left = khatri_rao(left_f);
    Matrix out = Matrix::Zero(n, k);
    for (Eigen::Index l = 0; l < static_cast<Eigen::Index>(s.left); ++l)
        out.array() += tr.middleRows(l * n, n).array().rowwise() * left.row(l).array();
    return out;
}

/// Full tensor sum_k a_{0,k} o a_{1,k} o ... from factor matrices in mode order.
inline DenseTensor cp_full(std::span<const Matrix> factors) {
    detail::common_cols(factors, "cp_full");
    Dims dims;
    for (const auto& f : factors) dims.push_back(static_cast<std::size_t>(f.rows()));
    DenseTensor out(dims);
    if (factors.size() == 1) {
        out.as_vector() = factors.front().rowwise().sum();
        return out;
    }
    // Leading modes via Khatri-Rao, last mode by GEMM: (prod lead x K)(K x n_last).
    const Matrix lead = khatri_rao(factors.first(factors.size() - 1));
    Eigen::Map<RowMajorMatrix> res(out.data().data(), lead.rows(), factors.back().rows());
    res.noalias() = lead * factors.back().transpose();
    return out;
}

}  // namespace mpb
