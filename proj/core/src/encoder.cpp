#include "qforest/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "qforest/error.hpp"
#include "qforest/rng.hpp"

namespace qforest {

Tensor riemannian_grad(const Tensor& u, const Tensor& g) {
    if (u.rank() != 2 || u.shape[0] != u.shape[1]) {
        throw ShapeError("riemannian_grad: u must be square, got " + u.shape_string());
    }
    if (g.shape != u.shape) {
        throw ShapeError("riemannian_grad: gradient shape " + g.shape_string() +
                         " does not match u " + u.shape_string());
    }
    const std::size_t n = u.shape[0];
    Tensor gram = matmul(transpose(u), u);
    for (std::size_t i = 0; i < n; ++i) gram(i, i) -= 1.0;
    if (gram.frobenius_norm() > 1e-8) {
        throw ArgumentError("riemannian_grad: u is not orthogonal (defect " +
                            std::to_string(gram.frobenius_norm()) + ")");
    }
    const Tensor x = matmul(g, transpose(u));
    Tensor skew({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) skew(i, j) = 0.5 * (x(i, j) - x(j, i));
    }
    return matmul(skew, u);
}

Tensor retract(const Tensor& u, const Tensor& step) {
    if (step.shape != u.shape) {
        throw ShapeError("retract: step shape " + step.shape_string() + " does not match u " +
                         u.shape_string());
    }
    const std::size_t n = u.shape[0];
    // Tangency: step u^T must be skew-symmetric.
    const Tensor x = matmul(step, transpose(u));
    double sym = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double s = 0.5 * (x(i, j) + x(j, i));
            sym += s * s;
        }
    }
    if (std::sqrt(sym) > 1e-8 * (1.0 + x.frobenius_norm())) {
        throw ArgumentError("retract: step is not a tangent vector at u");
    }
    if (step.frobenius_norm() == 0.0) return u;
    Tensor moved = u;
    for (std::size_t i = 0; i < moved.size(); ++i) moved.data[i] -= step.data[i];
    try {
        return qr_orthonormal(moved);
    } catch (const NumericError&) {
        throw NumericError("retract: step too large, u - step is numerically singular");
    }
}

void EncodeConfig::validate() const {
    if (!(delta_w > 0.0 && delta_w <= 1.0)) {
        throw ArgumentError("delta_w must lie in (0,1], got " + std::to_string(delta_w));
    }
    const double steps = std::round(1.0 / delta_w);
    if (std::abs(steps * delta_w - 1.0) > 1e-12) {
        throw ArgumentError("delta_w must divide 1 exactly, got " + std::to_string(delta_w));
    }
    if (loss_threshold < 0.0) throw ArgumentError("loss_threshold must be nonnegative");
    if (learning_rate <= 0.0) throw ArgumentError("learning_rate must be positive");
    if (batch_size == 0) throw ArgumentError("batch_size must be positive");
}

std::size_t EncodeConfig::num_steps() const {
    return static_cast<std::size_t>(std::llround(1.0 / delta_w));
}

namespace {

std::size_t first_unitary_node(const TreeTopology& topo) { return topo.bottom_begin(); }

double first_unitary_grad_norm(const QftnGradients& grads, const QFTNModel& model,
                               std::size_t circuit) {
    const TreeTopology& topo = model.circuits[circuit].topology;
    if (topo.num_nodes() == 1) return grads.top[circuit].frobenius_norm();
    return grads.internal[circuit][first_unitary_node(topo)].frobenius_norm();
}

struct EpochStats {
    double grad_norm_mean = 0.0;
    double grad_norm_std = 0.0;
    std::size_t corrections = 0;
};

void riemannian_step(Tensor& u, const Tensor& g, double lr, std::size_t& corrections) {
    Tensor xi = riemannian_grad(u, g);
    for (double& x : xi.data) x *= lr;
    u = retract(u, xi);
    // The QR retraction lands on the manifold; re-orthonormalize on measurable drift.
    const std::size_t n = u.shape[0];
    Tensor gram = matmul(transpose(u), u);
    for (std::size_t i = 0; i < n; ++i) gram(i, i) -= 1.0;
    if (gram.frobenius_norm() > 1e-11) {
        u = qr_orthonormal(u);
        ++corrections;
    }
}

/// One pass of Riemannian SGD over shuffled batches at fixed w. The head trains by
/// plain SGD. Returns the per-circuit first-unitary gradient-norm statistics.
EpochStats run_riemannian_epoch(QFTNModel& model, const ImageDataset& ds,
                                std::vector<std::size_t>& indices, Rng& rng, double w,
                                double lr, std::size_t batch_size, int threads,
                                bool probe_gradients) {
    rng.shuffle(indices);
    const std::size_t d = model.num_classes;
    std::vector<double> norm_sums(d, 0.0);
    std::size_t num_batches = 0;
    EpochStats stats;

    QftnGradients grads;
    for (std::size_t off = 0; off < indices.size(); off += batch_size) {
        const std::size_t len = std::min(batch_size, indices.size() - off);
        qftn_loss_and_grad(model, ds,
                           std::span<const std::size_t>(indices.data() + off, len), w, grads,
                           threads);
        if (probe_gradients) {
            for (std::size_t c = 0; c < d; ++c) {
                norm_sums[c] += first_unitary_grad_norm(grads, model, c);
            }
        }
        ++num_batches;

        for (std::size_t c = 0; c < d; ++c) {
            QTTNCircuit& circuit = model.circuits[c];
            for (std::size_t i = 1; i < circuit.internal_unitaries.size(); ++i) {
                riemannian_step(circuit.internal_unitaries[i], grads.internal[c][i], lr,
                                stats.corrections);
            }
            riemannian_step(circuit.top_unitary, grads.top[c], lr, stats.corrections);
        }
        for (std::size_t j = 0; j < model.head_w.size(); ++j) {
            model.head_w.data[j] -= lr * grads.head_w.data[j];
        }
        for (std::size_t j = 0; j < model.head_b.size(); ++j) {
            model.head_b[j] -= lr * grads.head_b[j];
        }
    }

    if (probe_gradients && num_batches > 0) {
        double mean = 0.0;
        for (double s : norm_sums) mean += s / static_cast<double>(num_batches);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double s : norm_sums) {
            const double x = s / static_cast<double>(num_batches) - mean;
            var += x * x;
        }
        stats.grad_norm_mean = mean;
        stats.grad_norm_std = std::sqrt(var / static_cast<double>(d));
    }
    return stats;
}

EncodeStepRecord eval_record(const QFTNModel& model, const ImageDataset& train,
                             std::span<const std::size_t> idx, double w, int threads,
                             const ImageDataset* test,
                             std::span<const std::size_t> test_idx) {
    EncodeStepRecord row;
    const QftnEvalMetrics m = qftn_evaluate(model, train, idx, w, threads);
    row.train_loss = m.loss;
    row.train_acc = m.accuracy;
    row.success_prob = m.mean_success_prob;
    row.srpg = m.mean_srpg;
    if (test && !test_idx.empty()) {
        const QftnEvalMetrics tm = qftn_evaluate(model, *test, test_idx, w, threads);
        row.test_loss = tm.loss;
        row.test_acc = tm.accuracy;
        row.has_test = true;
    }
    return row;
}

std::vector<std::size_t> all_indices(const ImageDataset& ds) {
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

}  // namespace

EncodeResult adiabatic_encode(QFTNModel& model, const ImageDataset& train,
                              const EncodeConfig& cfg, int threads,
                              const ImageDataset* test) {
    cfg.validate();
    if (train.size() == 0) throw ArgumentError("adiabatic_encode: empty dataset");

    Rng rng(cfg.seed);
    std::vector<std::size_t> indices = all_indices(train);
    std::vector<std::size_t> test_indices;
    if (test) test_indices = all_indices(*test);

    EncodeResult result;

    // Loss of the embedded model before the first jump; defines the default threshold.
    EncodeStepRecord baseline =
        eval_record(model, train, indices, 0.0, threads, test, test_indices);
    baseline.step = 0;
    baseline.w = 0.0;
    baseline.epoch = 0;
    result.trajectory.rows.push_back(baseline);

    const double threshold =
        cfg.loss_threshold > 0.0 ? cfg.loss_threshold : 1.05 * baseline.train_loss;
    result.threshold_used = threshold;

    const std::size_t grid_steps = cfg.num_steps();
    double w = 0.0;
    double dw = cfg.delta_w;
    std::size_t grid_i = 0;
    std::size_t step = 0;
    constexpr double kJumpFactor = 2.0;

    while (w < 1.0) {
        double w_next;
        if (cfg.adaptive_delta_w) {
            w_next = std::min(w + dw, 1.0);
            if (1.0 - w_next < 1e-12) w_next = 1.0;
        } else {
            ++grid_i;
            w_next = (grid_i == grid_steps) ? 1.0 : static_cast<double>(grid_i) * cfg.delta_w;
        }

        EncodeStepRecord jump =
            eval_record(model, train, indices, w_next, threads, test, test_indices);
        if (cfg.adaptive_delta_w && jump.train_loss > kJumpFactor * threshold &&
            dw > cfg.delta_w / 16.0) {
            dw *= 0.5;
            continue;
        }

        ++step;
        jump.step = step;
        jump.w = w_next;
        jump.epoch = 0;
        result.trajectory.rows.push_back(jump);

        double current_loss = jump.train_loss;
        for (std::size_t epoch = 1;
             current_loss >= threshold && epoch <= cfg.max_epochs_per_step; ++epoch) {
            const EpochStats stats =
                run_riemannian_epoch(model, train, indices, rng, w_next, cfg.learning_rate,
                                     cfg.batch_size, threads, cfg.probe_gradients);
            result.trajectory.reorthonormalizations += stats.corrections;

            EncodeStepRecord row =
                eval_record(model, train, indices, w_next, threads, test, test_indices);
            row.step = step;
            row.w = w_next;
            row.epoch = epoch;
            if (cfg.probe_gradients) {
                row.grad_norm_mean = stats.grad_norm_mean;
                row.grad_norm_std = stats.grad_norm_std;
                row.has_grad = true;
            }
            result.trajectory.rows.push_back(row);
            current_loss = row.train_loss;
        }

        if (current_loss >= threshold) {
            model.set_w(w_next);
            result.completed = false;
            result.final_w = w_next;
            return result;
        }
        w = w_next;
        if (cfg.adaptive_delta_w) dw = cfg.delta_w;
    }

    model.set_w(1.0);
    result.completed = true;
    result.final_w = 1.0;
    return result;
}

QTTNCircuit haar_random_init(const TreeTopology& topo, std::size_t chi, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t dim = chi * chi;
    auto haar = [&rng](std::size_t n) {
        Tensor g({n, n});
        for (double& x : g.data) x = rng.normal();
        return qr_orthonormal(g);
    };
    QTTNCircuit circuit;
    circuit.topology = topo;
    circuit.chi = chi;
    circuit.w = 1.0;
    circuit.scale = 1.0;
    circuit.internal_unitaries.resize(topo.num_nodes());
    for (std::size_t i = 1; i < topo.num_nodes(); ++i) {
        circuit.internal_unitaries[i] = haar(dim);
    }
    circuit.top_unitary = haar(2 * dim);
    return circuit;
}

QFTNModel haar_random_qftn(std::size_t side, std::size_t num_classes, std::size_t channels,
                           std::uint64_t seed) {
    QFTNModel model;
    model.num_classes = num_classes;
    model.channels = channels;
    model.shifts = default_shifts(num_classes);
    const TreeTopology topo = build_topology(side);
    Rng master(seed);
    for (std::size_t t = 0; t < num_classes; ++t) {
        model.circuits.push_back(haar_random_init(topo, model.chi(), master.raw()));
    }
    const std::size_t concat_dim = num_classes * model.chi();
    model.head_w = Tensor({num_classes, concat_dim});
    const double head_std = 1.0 / std::sqrt(static_cast<double>(concat_dim));
    for (double& x : model.head_w.data) x = head_std * master.normal();
    model.head_b.assign(num_classes, 0.0);
    return model;
}

DirectTrainResult train_direct(QFTNModel& model, const ImageDataset& train,
                               const TrainConfig& cfg, int threads,
                               const ImageDataset* test) {
    if (std::abs(model.w() - 1.0) > 1e-12) {
        throw StateError("train_direct: the model must be at w = 1");
    }
    if (cfg.learning_rate < 0.0) throw ArgumentError("learning_rate must be nonnegative");
    if (cfg.batch_size == 0) throw ArgumentError("batch_size must be positive");
    if (train.size() == 0) throw ArgumentError("train_direct: empty dataset");

    Rng rng(cfg.seed);
    std::vector<std::size_t> indices = all_indices(train);
    if (cfg.subset_size > 0 && cfg.subset_size < indices.size()) {
        rng.shuffle(indices);
        indices.resize(cfg.subset_size);
    }
    std::vector<std::size_t> test_indices;
    if (test) test_indices = all_indices(*test);

    DirectTrainResult result;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const EpochStats stats = run_riemannian_epoch(
            model, train, indices, rng, 1.0, cfg.learning_rate, cfg.batch_size, threads, true);
        result.reorthonormalizations += stats.corrections;

        EncodeStepRecord row =
            eval_record(model, train, indices, 1.0, threads, test, test_indices);
        row.step = 0;
        row.w = 1.0;
        row.epoch = epoch;
        row.grad_norm_mean = stats.grad_norm_mean;
        row.grad_norm_std = stats.grad_norm_std;
        row.has_grad = true;
        result.rows.push_back(row);

        if (!std::isfinite(row.train_loss)) {
            throw NumericError("train_direct: loss diverged at epoch " + std::to_string(epoch));
        }
    }
    return result;
}

void write_trajectory_csv(const std::string& path, const std::vector<EncodeStepRecord>& rows) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path + " for writing");
    out << "step,w,epoch,train_loss,train_acc,test_loss,test_acc,success_prob,srpg,"
           "grad_norm_mean,grad_norm_std\n";
    out.precision(17);
    for (const EncodeStepRecord& r : rows) {
        out << r.step << ',' << r.w << ',' << r.epoch << ',' << r.train_loss << ','
            << r.train_acc << ',';
        if (r.has_test) {
            out << r.test_loss << ',' << r.test_acc;
        } else {
            out << "nan,nan";
        }
        out << ',' << r.success_prob << ',' << r.srpg << ',';
        if (r.has_grad) {
            out << r.grad_norm_mean << ',' << r.grad_norm_std;
        } else {
            out << "nan,nan";
        }
        out << '\n';
    }
}

}  // namespace qforest
