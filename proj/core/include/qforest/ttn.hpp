#pragma once

#include <cstddef>
#include <vector>

#include "qforest/rng.hpp"
#include "qforest/tensor.hpp"
#include "qforest/topology.hpp"

namespace qforest {

/// Tree tensor network feature extractor. Every internal node, the top included,
/// carries a chi x chi x chi tensor with index order (output, left child, right child).
/// In canonical form every non-top tensor V satisfies the isometry condition
/// sum_{jk} V[i',j,k] V[i,j,k] = delta_{ii'}; the top stays non-isometric.
struct TTNClassifier {
    TreeTopology topology;
    std::size_t chi = 2;
    std::vector<Tensor> node_tensors;  // heap order, [0] is the top
    bool is_canonical = false;

    /// Gaussian init with std chi^{-1/2}, which keeps node outputs O(1) through the tree.
    static TTNClassifier random(const TreeTopology& topo, std::size_t chi, Rng& rng);
};

/// Intermediate node outputs from a forward pass, consumed by ttn_grad.
struct TtnCache {
    std::vector<std::vector<double>> leaf;
    std::vector<std::vector<double>> node_out;
    bool valid = false;
};

/// Bottom-up contraction: each node emits out_o = sum_{ij} T[o,i,j] l_i r_j.
/// Returns the top node's chi-vector. O(N chi^3).
std::vector<double> ttn_forward(const TTNClassifier& ttn,
                                const std::vector<std::vector<double>>& leaves,
                                TtnCache* cache = nullptr);

/// Reverse-mode gradients of <upstream, ttn_forward(leaves)> with respect to every
/// node tensor. Needs the cache of a prior forward pass.
std::vector<Tensor> ttn_grad(const TTNClassifier& ttn, const TtnCache& cache,
                             const std::vector<double>& upstream);

/// Same as ttn_grad but adds into acc (one pre-shaped tensor per node), avoiding
/// per-sample allocations in training loops.
void ttn_grad_accumulate(const TTNClassifier& ttn, const TtnCache& cache,
                         const std::vector<double>& upstream, std::vector<Tensor>& acc);

/// Bottom-up SVD sweep into canonical form. Output-preserving; the top tensor absorbs
/// all the gauge factors and stays non-isometric.
TTNClassifier canonicalize(const TTNClassifier& ttn);

/// Max isometry defect ||V V^T - I||_F over the non-top tensors (0 for N=2 trees,
/// where the only node is the top).
double max_isometry_defect(const TTNClassifier& ttn);

}  // namespace qforest
