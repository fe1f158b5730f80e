#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace qforest {

/// Dense real tensor with row-major storage. The universal numeric carrier of the
/// library: node tensors, unitaries, density matrices and the linear head all live in
/// this type. All operations on it are pure functions; instances are safe to share
/// across threads once constructed.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s);
    Tensor(std::vector<std::size_t> s, std::vector<double> d);

    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
    static Tensor identity(std::size_t n);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t axis) const;

    double& operator()(std::size_t i) { return data[i]; }
    double operator()(std::size_t i) const { return data[i]; }
    double& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }

    /// Same data, new shape; element count must match.
    Tensor reshaped(std::vector<std::size_t> new_shape) const;

    double frobenius_norm() const;
    bool all_finite() const;

    std::string shape_string() const;
};

/// Pairwise tensor contraction: sums the products over the paired axes.
/// Result shape is the remaining axes of a followed by the remaining axes of b.
Tensor contract(const Tensor& a, const Tensor& b, const std::vector<std::size_t>& axes_a,
                const std::vector<std::size_t>& axes_b);

/// Axis permutation: result dim i = t dim perm[i].
Tensor permute(const Tensor& t, const std::vector<std::size_t>& perm);

/// Rank-2 convenience wrappers.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);

struct SvdResult {
    Tensor u;   // m x r, orthonormal columns
    Tensor s;   // r, nonnegative, non-increasing
    Tensor vt;  // r x n, orthonormal rows
};

/// Thin SVD of a rank-2 tensor, singular values descending. Deterministic: the
/// largest-magnitude entry of every column of u is made positive (vt rows flipped to
/// compensate).
SvdResult svd(const Tensor& m);

/// Completes a set of orthonormal rows v (r x n, r <= n) to a full n x n orthogonal
/// matrix whose first r rows are bitwise equal to v.
Tensor complete_orthonormal(const Tensor& v);

/// Kronecker product of two rank-2 tensors.
Tensor kron(const Tensor& a, const Tensor& b);

/// Orthogonal factor of the QR decomposition of a square matrix, with the diag(R) > 0
/// sign convention (so qr_orthonormal(Q) == Q for any orthogonal Q).
Tensor qr_orthonormal(const Tensor& m);

}  // namespace qforest
