#include "qforest/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "qforest/error.hpp"

namespace qforest {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::size_t shape_product(const std::vector<std::size_t>& s) {
    std::size_t p = 1;
    for (std::size_t d : s) p *= d;
    return p;
}

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got shape " +
                         t.shape_string());
    }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("tensor shape entries must be positive");
    }
    data.assign(shape_product(shape), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    for (std::size_t dim : shape) {
        if (dim == 0) throw ShapeError("tensor shape entries must be positive");
    }
    if (data.size() != shape_product(shape)) {
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_string());
    }
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string());
    }
    return shape[axis];
}

Tensor Tensor::reshaped(std::vector<std::size_t> new_shape) const {
    if (shape_product(new_shape) != data.size()) {
        throw ShapeError("cannot reshape " + shape_string() + " (size " +
                         std::to_string(data.size()) + ") to requested shape");
    }
    return Tensor(std::move(new_shape), data);
}

double Tensor::frobenius_norm() const {
    double s = 0.0;
    for (double x : data) s += x * x;
    return std::sqrt(s);
}

bool Tensor::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double x) { return std::isfinite(x); });
}

std::string Tensor::shape_string() const {
    std::ostringstream out;
    out << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ",";
        out << shape[i];
    }
    out << ")";
    return out.str();
}

Tensor permute(const Tensor& t, const std::vector<std::size_t>& perm) {
    if (perm.size() != t.rank()) {
        throw ShapeError("permutation size does not match tensor rank");
    }
    std::vector<std::size_t> out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = t.dim(perm[i]);
    Tensor out(out_shape);

    const std::size_t r = t.rank();
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * t.shape[i];
    // stride of output axis i in the input buffer
    std::vector<std::size_t> strides(r);
    for (std::size_t i = 0; i < r; ++i) strides[i] = in_strides[perm[i]];

    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    const std::size_t total = t.size();
    for (std::size_t flat = 0; flat < total; ++flat) {
        out.data[flat] = t.data[src];
        for (std::size_t axis = r; axis-- > 0;) {
            idx[axis]++;
            src += strides[axis];
            if (idx[axis] < out_shape[axis]) break;
            src -= strides[axis] * out_shape[axis];
            idx[axis] = 0;
        }
    }
    return out;
}

Tensor contract(const Tensor& a, const Tensor& b, const std::vector<std::size_t>& axes_a,
                const std::vector<std::size_t>& axes_b) {
    if (axes_a.size() != axes_b.size()) {
        throw ShapeError("contract: axis lists differ in length");
    }
    for (std::size_t p = 0; p < axes_a.size(); ++p) {
        const std::size_t da = a.dim(axes_a[p]);
        const std::size_t db = b.dim(axes_b[p]);
        if (da != db) {
            throw ShapeError("contract: axis " + std::to_string(axes_a[p]) + " of a (dim " +
                             std::to_string(da) + ") does not match axis " +
                             std::to_string(axes_b[p]) + " of b (dim " + std::to_string(db) +
                             ")");
        }
    }

    auto free_axes = [](const Tensor& t, const std::vector<std::size_t>& contracted) {
        std::vector<bool> used(t.rank(), false);
        for (std::size_t ax : contracted) {
            if (used[ax]) throw ShapeError("contract: repeated axis " + std::to_string(ax));
            used[ax] = true;
        }
        std::vector<std::size_t> free;
        for (std::size_t i = 0; i < t.rank(); ++i) {
            if (!used[i]) free.push_back(i);
        }
        return free;
    };

    const std::vector<std::size_t> free_a = free_axes(a, axes_a);
    const std::vector<std::size_t> free_b = free_axes(b, axes_b);

    std::vector<std::size_t> perm_a = free_a;
    perm_a.insert(perm_a.end(), axes_a.begin(), axes_a.end());
    std::vector<std::size_t> perm_b = axes_b;
    perm_b.insert(perm_b.end(), free_b.begin(), free_b.end());

    auto is_identity = [](const std::vector<std::size_t>& p) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (p[i] != i) return false;
        }
        return true;
    };
    const Tensor ta = is_identity(perm_a) ? a : permute(a, perm_a);
    const Tensor tb = is_identity(perm_b) ? b : permute(b, perm_b);

    std::size_t m = 1, k = 1, n = 1;
    std::vector<std::size_t> out_shape;
    for (std::size_t ax : free_a) {
        m *= a.dim(ax);
        out_shape.push_back(a.dim(ax));
    }
    for (std::size_t ax : axes_a) k *= a.dim(ax);
    for (std::size_t ax : free_b) {
        n *= b.dim(ax);
        out_shape.push_back(b.dim(ax));
    }
    if (out_shape.empty()) out_shape.push_back(1);  // scalar result carried as shape (1)

    Tensor out(out_shape);
    ConstMapMat ma(ta.data.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
    ConstMapMat mb(tb.data.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    MapMat mo(out.data.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    mo.noalias() = ma * mb;
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    return contract(a, b, {1}, {0});
}

Tensor transpose(const Tensor& m) {
    require_rank2(m, "transpose");
    return permute(m, {1, 0});
}

SvdResult svd(const Tensor& m) {
    require_rank2(m, "svd");
    const std::size_t rows = m.dim(0);
    const std::size_t cols = m.dim(1);
    ConstMapMat a(m.data.data(), static_cast<Eigen::Index>(rows),
                  static_cast<Eigen::Index>(cols));
    Eigen::JacobiSVD<Eigen::MatrixXd> dec(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::MatrixXd u = dec.matrixU();
    Eigen::MatrixXd v = dec.matrixV();
    const Eigen::VectorXd& sv = dec.singularValues();
    const std::size_t r = static_cast<std::size_t>(sv.size());

    // Sign convention: largest-magnitude entry of each u column positive.
    for (std::size_t j = 0; j < r; ++j) {
        Eigen::Index imax = 0;
        u.col(static_cast<Eigen::Index>(j)).cwiseAbs().maxCoeff(&imax);
        if (u(imax, static_cast<Eigen::Index>(j)) < 0.0) {
            u.col(static_cast<Eigen::Index>(j)) *= -1.0;
            v.col(static_cast<Eigen::Index>(j)) *= -1.0;
        }
    }

    SvdResult out;
    out.u = Tensor({rows, r});
    out.s = Tensor({r});
    out.vt = Tensor({r, cols});
    MapMat(out.u.data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(r)) = u;
    for (std::size_t i = 0; i < r; ++i) out.s.data[i] = sv(static_cast<Eigen::Index>(i));
    MapMat(out.vt.data.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(cols)) =
        v.transpose();
    return out;
}

Tensor complete_orthonormal(const Tensor& v) {
    require_rank2(v, "complete_orthonormal");
    const std::size_t r = v.dim(0);
    const std::size_t n = v.dim(1);
    if (r > n) {
        throw ShapeError("complete_orthonormal: more rows than columns in " + v.shape_string());
    }
    ConstMapMat mv(v.data.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(n));
    const double defect = (mv * mv.transpose() - Eigen::MatrixXd::Identity(r, r)).norm();
    if (defect > 1e-8) {
        throw ArgumentError("complete_orthonormal: rows are not orthonormal, ||v v^T - I|| = " +
                            std::to_string(defect));
    }
    Tensor out({n, n});
    std::copy(v.data.begin(), v.data.end(), out.data.begin());
    if (r == n) return out;

    // The last n-r right singular vectors of v span the orthogonal complement of its
    // row space.
    Eigen::JacobiSVD<Eigen::MatrixXd> dec(mv, Eigen::ComputeFullV);
    const Eigen::MatrixXd& full_v = dec.matrixV();
    MapMat mo(out.data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    mo.bottomRows(static_cast<Eigen::Index>(n - r)) =
        full_v.rightCols(static_cast<Eigen::Index>(n - r)).transpose();
    return out;
}

Tensor kron(const Tensor& a, const Tensor& b) {
    require_rank2(a, "kron");
    require_rank2(b, "kron");
    const std::size_t ma = a.dim(0), na = a.dim(1);
    const std::size_t mb = b.dim(0), nb = b.dim(1);
    Tensor out({ma * mb, na * nb});
    for (std::size_t i = 0; i < ma; ++i) {
        for (std::size_t j = 0; j < na; ++j) {
            const double aij = a(i, j);
            if (aij == 0.0) continue;
            for (std::size_t p = 0; p < mb; ++p) {
                const std::size_t row = i * mb + p;
                double* dst = out.data.data() + row * out.shape[1] + j * nb;
                const double* src = b.data.data() + p * nb;
                for (std::size_t q = 0; q < nb; ++q) dst[q] += aij * src[q];
            }
        }
    }
    return out;
}

Tensor qr_orthonormal(const Tensor& m) {
    require_rank2(m, "qr_orthonormal");
    const std::size_t n = m.dim(0);
    if (m.dim(1) != n) {
        throw ShapeError("qr_orthonormal: expected a square matrix, got " + m.shape_string());
    }
    ConstMapMat a(m.data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd rmat = qr.matrixQR().triangularView<Eigen::Upper>();
    const double scale = a.norm();
    for (std::size_t j = 0; j < n; ++j) {
        const double rjj = rmat(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j));
        if (std::abs(rjj) < 1e-13 * (scale > 0.0 ? scale : 1.0)) {
            throw NumericError("qr_orthonormal: numerically singular input (R[" +
                               std::to_string(j) + "," + std::to_string(j) + "] ~ 0)");
        }
        if (rjj < 0.0) q.col(static_cast<Eigen::Index>(j)) *= -1.0;
    }
    Tensor out({n, n});
    MapMat(out.data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)) = q;
    return out;
}

}  // namespace qforest
