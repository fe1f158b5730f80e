#include "qforest/embedding.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "qforest/error.hpp"

namespace qforest {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

void QFTNModel::set_w(double new_w) {
    if (!(new_w >= 0.0 && new_w <= 1.0)) {
        throw ArgumentError("w must lie in [0,1], got " + std::to_string(new_w));
    }
    for (QTTNCircuit& c : circuits) c.w = new_w;
}

Tensor isometry_to_unitary(const Tensor& v) {
    if (v.rank() != 2 || v.dim(0) * v.dim(0) != v.dim(1)) {
        throw ShapeError("isometry_to_unitary: expected chi x chi^2, got " + v.shape_string());
    }
    try {
        return complete_orthonormal(v);
    } catch (const ArgumentError& e) {
        throw ArgumentError(std::string("isometry_to_unitary: ") + e.what());
    }
}

std::pair<Tensor, double> block_encode_top(const Tensor& m) {
    if (m.rank() != 3 || m.dim(0) != m.dim(1) || m.dim(1) != m.dim(2)) {
        throw ShapeError("block_encode_top: expected chi x chi x chi, got " + m.shape_string());
    }
    const std::size_t chi = m.dim(0);
    const std::size_t chi2 = chi * chi;
    if (m.frobenius_norm() == 0.0) {
        throw ArgumentError("block_encode_top: zero top tensor");
    }

    // M as a map from children to output is chi x chi^2; Mtilde is its transpose
    // scaled so the largest singular value is exactly 1.
    const Tensor m_mat = m.reshaped({chi, chi2});
    const SvdResult dec = svd(m_mat);
    const double sigma_max = dec.s(0);
    const double scale = 1.0 / sigma_max;

    Eigen::Map<const RowMat> mm(m_mat.data.data(), static_cast<Eigen::Index>(chi),
                                static_cast<Eigen::Index>(chi2));
    const Eigen::MatrixXd mtilde = scale * mm.transpose();  // chi^2 x chi

    // B^T B = I - Mtilde^T Mtilde, via symmetric eigendecomposition.
    const Eigen::MatrixXd gram =
        Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(chi), static_cast<Eigen::Index>(chi)) -
        mtilde.transpose() * mtilde;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    Eigen::VectorXd lambda = eig.eigenvalues();
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
        if (lambda(i) < -1e-10) {
            throw NumericError("block_encode_top: eigenvalue " + std::to_string(lambda(i)) +
                               " of B^T B is below -1e-10");
        }
        // Roundoff from sigma ~ 1; clamping both signs keeps sqrt from amplifying it.
        if (lambda(i) < 1e-12) lambda(i) = 0.0;
    }
    const Eigen::MatrixXd b = lambda.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();

    // W = [Mtilde; B; 0] has orthonormal columns; complete_orthonormal of W^T yields
    // rows, so the stored unitary is the transpose: first chi columns equal W exactly.
    Tensor wt({chi, 2 * chi2});
    for (std::size_t col = 0; col < chi; ++col) {
        for (std::size_t row = 0; row < chi2; ++row) {
            wt(col, row) = mtilde(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col));
        }
        for (std::size_t row = 0; row < chi; ++row) {
            wt(col, chi2 + row) = b(static_cast<Eigen::Index>(row),
                                    static_cast<Eigen::Index>(col));
        }
    }
    const Tensor completed = complete_orthonormal(wt);
    return {transpose(completed), scale};
}

QFTNModel embed_ftn(const FTNClassifier& ftn) {
    if (!ftn.is_canonical()) {
        throw StateError("embed_ftn: the FTN must be canonicalized first");
    }
    QFTNModel model;
    model.num_classes = ftn.num_classes;
    model.channels = ftn.channels;
    model.shifts = ftn.shifts;
    model.head_w = ftn.head_w;
    model.head_b = ftn.head_b;

    const std::size_t chi = ftn.chi();
    for (const TTNClassifier& ttn : ftn.ttns) {
        QTTNCircuit circuit;
        circuit.topology = ttn.topology;
        circuit.chi = chi;
        circuit.w = 0.0;
        circuit.internal_unitaries.resize(ttn.topology.num_nodes());
        for (std::size_t i = 1; i < ttn.topology.num_nodes(); ++i) {
            const Tensor v = ttn.node_tensors[i].reshaped({chi, chi * chi});
            circuit.internal_unitaries[i] = isometry_to_unitary(v);
        }
        auto [top, scale] = block_encode_top(ttn.node_tensors[0]);
        circuit.top_unitary = std::move(top);
        circuit.scale = scale;
        model.circuits.push_back(std::move(circuit));
    }
    return model;
}

double max_orthogonality_defect(const QFTNModel& model) {
    double worst = 0.0;
    auto defect = [](const Tensor& u) {
        Tensor gram = matmul(transpose(u), u);
        for (std::size_t i = 0; i < gram.shape[0]; ++i) gram(i, i) -= 1.0;
        return gram.frobenius_norm();
    };
    for (const QTTNCircuit& c : model.circuits) {
        for (std::size_t i = 1; i < c.internal_unitaries.size(); ++i) {
            worst = std::max(worst, defect(c.internal_unitaries[i]));
        }
        worst = std::max(worst, defect(c.top_unitary));
    }
    return worst;
}

}  // namespace qforest
