#pragma once

#include <array>
#include <cstddef>
#include <utility>
#include <vector>

#include "qforest/ftn.hpp"
#include "qforest/tensor.hpp"
#include "qforest/topology.hpp"

namespace qforest {

/// Quantum counterpart of one TTN: every non-top node becomes a chi^2 x chi^2
/// orthogonal matrix whose first chi rows are the node's isometry, and the top tensor
/// is block-encoded into a 2chi^2 x 2chi^2 orthogonal matrix whose first chi columns
/// are [Mtilde; B; 0]. w is the acceptance weight of every nonzero mid-circuit
/// measurement outcome; scale is the 1/sigma_max rescaling applied to the top tensor
/// (bookkeeping only, predictions are scale-invariant).
struct QTTNCircuit {
    TreeTopology topology;
    std::size_t chi = 2;
    std::vector<Tensor> internal_unitaries;  // heap order; [0] (the top slot) stays empty
    Tensor top_unitary;
    double w = 0.0;
    double scale = 1.0;
};

struct QFTNModel {
    std::size_t num_classes = 0;
    std::size_t channels = 1;
    std::vector<QTTNCircuit> circuits;
    std::vector<std::array<int, 2>> shifts;
    Tensor head_w;
    std::vector<double> head_b;

    std::size_t chi() const { return std::size_t{1} << channels; }
    std::size_t side() const { return circuits.empty() ? 0 : circuits[0].topology.side; }
    double w() const { return circuits.empty() ? 0.0 : circuits[0].w; }
    void set_w(double w);
};

/// Embeds a chi x chi^2 isometry v (rows orthonormal) into an orthogonal matrix whose
/// first chi rows equal v. Applying the result to a chi^2 state and postselecting the
/// measured k qubits on |0...0> reproduces v's action.
Tensor isometry_to_unitary(const Tensor& v);

/// Block encoding of the top tensor m (chi x chi x chi). Reshapes m to a chi^2 x chi
/// matrix, rescales by 1/sigma_max so singular values are <= 1, builds B from the
/// eigendecomposition of I - Mtilde^T Mtilde, stacks W = [Mtilde; B; 0] and completes
/// it to a full orthogonal matrix whose first chi columns are exactly W.
/// Returns (unitary, scale).
std::pair<Tensor, double> block_encode_top(const Tensor& m);

/// Exact conversion of a canonical FTN into a qFTN at w = 0. The head is copied
/// unchanged; qftn_forward at w = 0 then reproduces ftn_forward logits.
QFTNModel embed_ftn(const FTNClassifier& ftn);

/// Max orthogonality defect ||U^T U - I||_F over all stored matrices of the model.
double max_orthogonality_defect(const QFTNModel& model);

}  // namespace qforest
