#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "qforest/embedding.hpp"
#include "qforest/ftn.hpp"
#include "qforest/qcircuit.hpp"
#include "qforest/tensor.hpp"

namespace qforest {

/// Projection of a Euclidean gradient onto the tangent space of the orthogonal
/// manifold at u: xi = skew(g u^T) u with skew(X) = (X - X^T)/2.
Tensor riemannian_grad(const Tensor& u, const Tensor& g);

/// QR-based retraction of u - step back onto the manifold (diag(R) > 0 convention,
/// so retract(u, 0) == u). step must be a tangent vector at u.
Tensor retract(const Tensor& u, const Tensor& step);

struct EncodeConfig {
    double delta_w = 0.05;          // must divide 1 within 1e-12
    double loss_threshold = 0.0;    // 0 = auto: 1.05 x loss of the model at w = 0
    std::size_t max_epochs_per_step = 30;
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;
    std::uint64_t seed = 43;
    bool probe_gradients = true;    // fill the grad_norm columns of the trajectory
    bool adaptive_delta_w = false;  // halve the increment on an excessive loss jump

    void validate() const;
    std::size_t num_steps() const;
};

/// One trajectory row. Epoch 0 of each step is the evaluation right after the w jump,
/// before any training; subsequent rows follow each training epoch. grad_norm columns
/// are the mean/std over the d circuits of the Euclidean gradient norm of each
/// circuit's first unitary (the one attached to the first qubit).
struct EncodeStepRecord {
    std::size_t step = 0;
    double w = 0.0;
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_loss = 0.0;
    double test_acc = 0.0;
    double success_prob = 1.0;
    double srpg = 1.0;
    double grad_norm_mean = 0.0;
    double grad_norm_std = 0.0;
    bool has_test = false;
    bool has_grad = false;
};

struct EncodeTrajectory {
    std::vector<EncodeStepRecord> rows;
    std::size_t reorthonormalizations = 0;
};

struct EncodeResult {
    bool completed = false;  // false: epoch budget exhausted before reaching the threshold
    double final_w = 0.0;
    double threshold_used = 0.0;
    EncodeTrajectory trajectory;
};

/// Adiabatic removal of postselection: raises w from 0 to exactly 1 on the grid
/// delta_w, 2 delta_w, ..., retraining with Riemannian SGD (head by plain SGD) at each
/// step until the training loss drops below the threshold. Exhausting the epoch budget
/// at any step returns a partial result instead of throwing.
EncodeResult adiabatic_encode(QFTNModel& model, const ImageDataset& train,
                              const EncodeConfig& cfg, int threads,
                              const ImageDataset* test = nullptr);

/// Haar-random orthogonal initialization (sign-fixed QR of Gaussian matrices); w = 1.
QTTNCircuit haar_random_init(const TreeTopology& topo, std::size_t chi, std::uint64_t seed);

/// Full Haar-random qFTN at w = 1 with a Gaussian head, for direct training.
QFTNModel haar_random_qftn(std::size_t side, std::size_t num_classes, std::size_t channels,
                           std::uint64_t seed);

struct DirectTrainResult {
    std::vector<EncodeStepRecord> rows;  // step 0, w 1, one row per epoch
    std::size_t reorthonormalizations = 0;
};

/// Direct Riemannian training at fixed w = 1 (same inner loop as adiabatic_encode).
/// Uses learning_rate/batch_size/epochs/seed of the TrainConfig; the Adam fields do
/// not apply. Logs the per-epoch first-unitary gradient-norm statistics.
DirectTrainResult train_direct(QFTNModel& model, const ImageDataset& train,
                               const TrainConfig& cfg, int threads,
                               const ImageDataset* test = nullptr);

/// CSV columns: step,w,epoch,train_loss,train_acc,test_loss,test_acc,success_prob,
/// srpg,grad_norm_mean,grad_norm_std.
void write_trajectory_csv(const std::string& path, const std::vector<EncodeStepRecord>& rows);

}  // namespace qforest
