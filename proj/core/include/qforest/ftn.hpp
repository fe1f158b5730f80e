#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qforest/dataset.hpp"
#include "qforest/tensor.hpp"
#include "qforest/ttn.hpp"

namespace qforest {

/// Forest tensor network classifier: d independently parameterized TTN feature
/// extractors, each fed a cyclically shifted copy of the image, a measurement-
/// mimicking map psi on every TTN output, and one linear head over the concatenation.
struct FTNClassifier {
    std::size_t num_classes = 0;  // d; also the number of TTNs
    std::size_t channels = 1;     // k; chi = 2^k
    std::vector<TTNClassifier> ttns;
    std::vector<std::array<int, 2>> shifts;  // (dv, dh) per TTN
    Tensor head_w;                           // d x (d * chi)
    std::vector<double> head_b;              // d

    std::size_t chi() const { return std::size_t{1} << channels; }
    std::size_t side() const { return ttns.empty() ? 0 : ttns[0].topology.side; }
    bool is_canonical() const;

    /// Trainable parameters excluding the head bias: (N-1) 2^{3k} d + 2^k d^2.
    std::size_t param_count_without_bias() const;
    std::size_t param_count() const { return param_count_without_bias() + num_classes; }

    static FTNClassifier create(std::size_t side, std::size_t num_classes,
                                std::size_t channels, std::uint64_t seed,
                                const std::vector<std::array<int, 2>>* shift_table = nullptr);
};

/// Default shift assignment for TTN index t: even t shifts horizontally by t/2,
/// odd t shifts vertically by (t+1)/2, giving each tree a distinct connectivity.
std::vector<std::array<int, 2>> default_shifts(std::size_t count);

/// psi(y) = (y_0^2, ..., y_{m-1}^2) / sum_i y_i^2. Mimics circuit measurement.
std::vector<double> measurement_map(const std::vector<double>& y);

/// Shift the image, then map each leaf slot's pixel through the local feature map.
std::vector<std::vector<double>> extract_leaves(const Image& img, const TreeTopology& topo,
                                                int dv, int dh);

std::vector<double> ftn_forward(const FTNClassifier& model, const Image& img);
int predict(const FTNClassifier& model, const Image& img);

struct FtnGradients {
    std::vector<std::vector<Tensor>> ttn;  // [t][node]
    Tensor head_w;
    std::vector<double> head_b;

    static FtnGradients zeros_like(const FTNClassifier& model);
    void add(const FtnGradients& other);
    void scale(double factor);
};

/// Mean softmax negative log-likelihood over the batch plus exact reverse-mode
/// gradients for every TTN tensor and the head. Deterministic for a fixed thread count.
double ftn_loss_and_grad(const FTNClassifier& model, const ImageDataset& ds,
                         std::span<const std::size_t> batch, FtnGradients& grads,
                         int threads);

struct EvalMetrics {
    double loss = 0.0;
    double accuracy = 0.0;
};

EvalMetrics ftn_evaluate(const FTNClassifier& model, const ImageDataset& ds,
                         std::span<const std::size_t> indices, int threads);

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;
    std::size_t epochs = 50;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 42;
    std::size_t subset_size = 0;  // 0 = full dataset

    void validate() const;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_loss = 0.0;
    double test_acc = 0.0;
    double wall_seconds = 0.0;
    bool has_test = false;
};

/// Adam over seeded shuffled mini-batches. Per-epoch metrics are full evaluation
/// passes over the training subset (and test set when given), so a later eval on the
/// same subset reproduces the final row. A NaN loss restores the last epoch-end
/// checkpoint and throws NumericError.
std::vector<EpochMetrics> train_ftn(FTNClassifier& model, const ImageDataset& train,
                                    const TrainConfig& cfg, int threads,
                                    const ImageDataset* test = nullptr);

/// One CSV row per epoch: epoch, train_loss, train_acc, test_loss, test_acc,
/// wall_seconds. wall_seconds is informational and excluded from the determinism
/// contract.
void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows);

}  // namespace qforest
