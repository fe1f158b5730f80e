#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "qforest/dataset.hpp"
#include "qforest/embedding.hpp"
#include "qforest/ftn.hpp"
#include "qforest/tensor.hpp"

namespace qforest {

/// chi x chi symmetric positive-semidefinite matrix. Its trace is the cumulative
/// acceptance weight of the subtree below it: 1 before any measurement, shrinking
/// toward the postselection probability as w -> 0.
struct WeightedState {
    Tensor mat;
};

struct SimOutput {
    std::vector<double> probs;  // normalized conditional outcome distribution
    double success_prob = 1.0;  // trace of the final weighted state
    double srpg = 1.0;          // per-gate success probability, success_prob^(1/(N-1))
};

/// Rank-1 projector f f^T of a unit-norm feature vector.
WeightedState leaf_state(const std::vector<double>& f);

/// Weighted measurement channel of one internal node. Applies U to left (x) right,
/// then combines the |0...0> outcome block A with the partial trace T over the
/// measured k qubits as A + w (T - A). w = 0 is unnormalized postselection, w = 1 the
/// plain partial trace.
WeightedState node_channel(const Tensor& u, const WeightedState& left,
                           const WeightedState& right, double w);

/// Same for the block-encoded top: an ancilla prepared in |0> joins the inputs and
/// k+1 qubits are measured, keeping the final k.
WeightedState top_channel(const Tensor& u_b, const WeightedState& left,
                          const WeightedState& right, double w);

/// Per-node weighted states of one forward sweep, consumed by the backward pass.
struct QttnCache {
    std::vector<Tensor> leaf;      // leaf projectors
    std::vector<Tensor> node_out;  // per internal node
    bool valid = false;
};

/// Bottom-up sweep of the whole circuit on pre-extracted leaves. O(N chi^6).
SimOutput qttn_forward(const QTTNCircuit& circuit,
                       const std::vector<std::vector<double>>& leaves, double w,
                       QttnCache* cache = nullptr);

/// Convenience overload: shifts the image per the given assignment and maps pixels.
SimOutput qttn_forward_image(const QTTNCircuit& circuit, const Image& img, int dv, int dh,
                             double w);

struct QftnOutput {
    std::vector<double> logits;
    SimOutput mean_stats;                 // success stats averaged over the d circuits
    std::vector<SimOutput> per_circuit;
};

QftnOutput qftn_forward(const QFTNModel& model, const Image& img, double w);

struct QftnGradients {
    std::vector<std::vector<Tensor>> internal;  // [circuit][node]; node 0 unused
    std::vector<Tensor> top;                    // [circuit]
    Tensor head_w;
    std::vector<double> head_b;

    static QftnGradients zeros_like(const QFTNModel& model);
    void add(const QftnGradients& other);
    void scale(double factor);
};

/// Mean softmax NLL over the batch plus exact Euclidean gradients for every unitary
/// (internal and top) and the head, differentiating through the kron, the conjugation,
/// the weighted-outcome combination and the diag/trace normalization.
double qftn_loss_and_grad(const QFTNModel& model, const ImageDataset& ds,
                          std::span<const std::size_t> batch, double w,
                          QftnGradients& grads, int threads);

struct QftnEvalMetrics {
    double loss = 0.0;
    double accuracy = 0.0;
    double mean_success_prob = 1.0;
    double mean_srpg = 1.0;
    double min_success_prob = 1.0;
};

QftnEvalMetrics qftn_evaluate(const QFTNModel& model, const ImageDataset& ds,
                              std::span<const std::size_t> indices, double w, int threads);

}  // namespace qforest
