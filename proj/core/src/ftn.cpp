#include "qforest/ftn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "qforest/error.hpp"
#include "qforest/parallel.hpp"

namespace qforest {

namespace {

void softmax_inplace(std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (double& x : v) {
        x = std::exp(x - m);
        sum += x;
    }
    for (double& x : v) x /= sum;
}

std::vector<double> pixel_channels(const Image& img, std::size_t pixel) {
    std::vector<double> ch(img.channels);
    for (std::size_t c = 0; c < img.channels; ++c) ch[c] = img.pix[pixel * img.channels + c];
    return ch;
}

}  // namespace

bool FTNClassifier::is_canonical() const {
    return std::all_of(ttns.begin(), ttns.end(),
                       [](const TTNClassifier& t) { return t.is_canonical; });
}

std::size_t FTNClassifier::param_count_without_bias() const {
    const std::size_t n = ttns.empty() ? 0 : ttns[0].topology.num_leaves;
    const std::size_t node_params = (std::size_t{1} << (3 * channels));
    return (n - 1) * node_params * num_classes + chi() * num_classes * num_classes;
}

std::vector<std::array<int, 2>> default_shifts(std::size_t count) {
    std::vector<std::array<int, 2>> shifts(count);
    for (std::size_t t = 0; t < count; ++t) {
        if (t % 2 == 0) {
            shifts[t] = {0, static_cast<int>(t / 2)};
        } else {
            shifts[t] = {static_cast<int>((t + 1) / 2), 0};
        }
    }
    return shifts;
}

FTNClassifier FTNClassifier::create(std::size_t side, std::size_t num_classes,
                                    std::size_t channels, std::uint64_t seed,
                                    const std::vector<std::array<int, 2>>* shift_table) {
    if (num_classes < 2) throw ArgumentError("need at least two classes");
    if (channels == 0) throw ArgumentError("channel count must be positive");
    FTNClassifier model;
    model.num_classes = num_classes;
    model.channels = channels;
    const TreeTopology topo = build_topology(side);
    Rng rng(seed);
    const std::size_t chi = model.chi();
    for (std::size_t t = 0; t < num_classes; ++t) {
        model.ttns.push_back(TTNClassifier::random(topo, chi, rng));
    }
    if (shift_table) {
        if (shift_table->size() != num_classes) {
            throw ArgumentError("shift table must have one entry per class");
        }
        model.shifts = *shift_table;
    } else {
        model.shifts = default_shifts(num_classes);
    }
    const std::size_t concat_dim = num_classes * chi;
    model.head_w = Tensor({num_classes, concat_dim});
    const double head_std = 1.0 / std::sqrt(static_cast<double>(concat_dim));
    for (double& x : model.head_w.data) x = head_std * rng.normal();
    model.head_b.assign(num_classes, 0.0);

    const std::size_t expected =
        (topo.num_leaves - 1) * (std::size_t{1} << (3 * channels)) * num_classes +
        chi * num_classes * num_classes;
    if (model.param_count_without_bias() != expected) {
        throw StateError("parameter count mismatch at construction");
    }
    return model;
}

std::vector<double> measurement_map(const std::vector<double>& y) {
    double sum = 0.0;
    for (double v : y) sum += v * v;
    if (sum == 0.0) throw ArgumentError("measurement_map: zero input vector");
    std::vector<double> p(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) p[i] = y[i] * y[i] / sum;
    return p;
}

std::vector<std::vector<double>> extract_leaves(const Image& img, const TreeTopology& topo,
                                                int dv, int dh) {
    if (img.side != topo.side) {
        throw ShapeError("image side " + std::to_string(img.side) +
                         " does not match topology side " + std::to_string(topo.side));
    }
    const Image shifted = (dv == 0 && dh == 0) ? img : cyclic_shift(img, dv, dh);
    std::vector<std::vector<double>> leaves(topo.num_leaves);
    for (std::size_t slot = 0; slot < topo.num_leaves; ++slot) {
        leaves[slot] = local_feature(pixel_channels(shifted, topo.pixel_of_leaf(slot)));
    }
    return leaves;
}

std::vector<double> ftn_forward(const FTNClassifier& model, const Image& img) {
    const std::size_t chi = model.chi();
    std::vector<double> concat(model.num_classes * chi);
    for (std::size_t t = 0; t < model.num_classes; ++t) {
        const auto leaves =
            extract_leaves(img, model.ttns[t].topology, model.shifts[t][0], model.shifts[t][1]);
        const std::vector<double> y = ttn_forward(model.ttns[t], leaves);
        const std::vector<double> p = measurement_map(y);
        std::copy(p.begin(), p.end(), concat.begin() + static_cast<std::ptrdiff_t>(t * chi));
    }
    std::vector<double> logits(model.num_classes);
    for (std::size_t c = 0; c < model.num_classes; ++c) {
        double acc = model.head_b[c];
        const double* row = model.head_w.data.data() + c * concat.size();
        for (std::size_t j = 0; j < concat.size(); ++j) acc += row[j] * concat[j];
        logits[c] = acc;
    }
    return logits;
}

int predict(const FTNClassifier& model, const Image& img) {
    const std::vector<double> logits = ftn_forward(model, img);
    return static_cast<int>(
        std::distance(logits.begin(), std::max_element(logits.begin(), logits.end())));
}

FtnGradients FtnGradients::zeros_like(const FTNClassifier& model) {
    FtnGradients g;
    const std::size_t chi = model.chi();
    g.ttn.resize(model.num_classes);
    for (std::size_t t = 0; t < model.num_classes; ++t) {
        g.ttn[t].reserve(model.ttns[t].topology.num_nodes());
        for (std::size_t i = 0; i < model.ttns[t].topology.num_nodes(); ++i) {
            g.ttn[t].emplace_back(Tensor({chi, chi, chi}));
        }
    }
    g.head_w = Tensor(model.head_w.shape);
    g.head_b.assign(model.head_b.size(), 0.0);
    return g;
}

void FtnGradients::add(const FtnGradients& other) {
    for (std::size_t t = 0; t < ttn.size(); ++t) {
        for (std::size_t i = 0; i < ttn[t].size(); ++i) {
            double* dst = ttn[t][i].data.data();
            const double* src = other.ttn[t][i].data.data();
            for (std::size_t j = 0; j < ttn[t][i].size(); ++j) dst[j] += src[j];
        }
    }
    for (std::size_t j = 0; j < head_w.size(); ++j) head_w.data[j] += other.head_w.data[j];
    for (std::size_t j = 0; j < head_b.size(); ++j) head_b[j] += other.head_b[j];
}

void FtnGradients::scale(double factor) {
    for (auto& per_ttn : ttn) {
        for (Tensor& t : per_ttn) {
            for (double& x : t.data) x *= factor;
        }
    }
    for (double& x : head_w.data) x *= factor;
    for (double& x : head_b) x *= factor;
}

namespace {

// Per-sample forward + backward; adds raw (unscaled) gradients into acc and returns
// the sample NLL. Also reports whether argmax(logits) == label.
double ftn_sample_grad(const FTNClassifier& model, const Image& img, int label,
                       FtnGradients& acc, bool& correct) {
    const std::size_t chi = model.chi();
    const std::size_t d = model.num_classes;
    const std::size_t concat_dim = d * chi;

    std::vector<TtnCache> caches(d);
    std::vector<std::vector<double>> ys(d);
    std::vector<double> concat(concat_dim);
    for (std::size_t t = 0; t < d; ++t) {
        const auto leaves =
            extract_leaves(img, model.ttns[t].topology, model.shifts[t][0], model.shifts[t][1]);
        ys[t] = ttn_forward(model.ttns[t], leaves, &caches[t]);
        const std::vector<double> p = measurement_map(ys[t]);
        std::copy(p.begin(), p.end(), concat.begin() + static_cast<std::ptrdiff_t>(t * chi));
    }

    std::vector<double> logits(d);
    for (std::size_t c = 0; c < d; ++c) {
        double accum = model.head_b[c];
        const double* row = model.head_w.data.data() + c * concat_dim;
        for (std::size_t j = 0; j < concat_dim; ++j) accum += row[j] * concat[j];
        logits[c] = accum;
    }
    correct = static_cast<int>(std::distance(
                  logits.begin(), std::max_element(logits.begin(), logits.end()))) == label;

    std::vector<double> probs = logits;
    softmax_inplace(probs);
    const double loss = -std::log(std::max(probs[static_cast<std::size_t>(label)], 1e-300));

    // dlogits = softmax - onehot
    std::vector<double> dlogits = probs;
    dlogits[static_cast<std::size_t>(label)] -= 1.0;

    std::vector<double> dconcat(concat_dim, 0.0);
    for (std::size_t c = 0; c < d; ++c) {
        const double dc = dlogits[c];
        double* wrow = acc.head_w.data.data() + c * concat_dim;
        const double* row = model.head_w.data.data() + c * concat_dim;
        for (std::size_t j = 0; j < concat_dim; ++j) {
            wrow[j] += dc * concat[j];
            dconcat[j] += dc * row[j];
        }
        acc.head_b[c] += dc;
    }

    // Through psi: dy_j = (2 y_j / S) (dpsi_j - <dpsi, psi>).
    for (std::size_t t = 0; t < d; ++t) {
        const std::vector<double>& y = ys[t];
        double s = 0.0;
        for (double v : y) s += v * v;
        const double* dpsi = dconcat.data() + t * chi;
        double inner = 0.0;
        for (std::size_t j = 0; j < chi; ++j) inner += dpsi[j] * (y[j] * y[j] / s);
        std::vector<double> dy(chi);
        for (std::size_t j = 0; j < chi; ++j) dy[j] = 2.0 * y[j] / s * (dpsi[j] - inner);
        ttn_grad_accumulate(model.ttns[t], caches[t], dy, acc.ttn[t]);
    }
    return loss;
}

}  // namespace

double ftn_loss_and_grad(const FTNClassifier& model, const ImageDataset& ds,
                         std::span<const std::size_t> batch, FtnGradients& grads,
                         int threads) {
    if (batch.empty()) throw ArgumentError("ftn_loss_and_grad: empty batch");
    for (std::size_t idx : batch) {
        if (idx >= ds.size()) throw DataError("batch index out of range");
        if (ds.labels[idx] < 0 || ds.labels[idx] >= static_cast<int>(model.num_classes)) {
            throw DataError("label " + std::to_string(ds.labels[idx]) + " out of range");
        }
    }

    const int chunk_count = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)),
                                                  batch.size());
    std::vector<FtnGradients> partial;
    partial.reserve(static_cast<std::size_t>(chunk_count));
    for (int c = 0; c < chunk_count; ++c) partial.push_back(FtnGradients::zeros_like(model));
    std::vector<double> partial_loss(static_cast<std::size_t>(chunk_count), 0.0);

    parallel_chunks(batch.size(), chunk_count, [&](int c, std::size_t lo, std::size_t hi) {
        bool correct = false;
        for (std::size_t i = lo; i < hi; ++i) {
            partial_loss[static_cast<std::size_t>(c)] += ftn_sample_grad(
                model, ds.images[batch[i]], ds.labels[batch[i]],
                partial[static_cast<std::size_t>(c)], correct);
        }
    });

    grads = std::move(partial[0]);
    double loss = partial_loss[0];
    for (int c = 1; c < chunk_count; ++c) {
        grads.add(partial[static_cast<std::size_t>(c)]);
        loss += partial_loss[static_cast<std::size_t>(c)];
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    grads.scale(inv);
    return loss * inv;
}

EvalMetrics ftn_evaluate(const FTNClassifier& model, const ImageDataset& ds,
                         std::span<const std::size_t> indices, int threads) {
    if (indices.empty()) throw ArgumentError("ftn_evaluate: empty index set");
    const int chunk_count = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)),
                                                  indices.size());
    std::vector<double> partial_loss(static_cast<std::size_t>(chunk_count), 0.0);
    std::vector<std::size_t> partial_correct(static_cast<std::size_t>(chunk_count), 0);
    parallel_chunks(indices.size(), chunk_count, [&](int c, std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const std::size_t idx = indices[i];
            std::vector<double> logits = ftn_forward(model, ds.images[idx]);
            const int pred = static_cast<int>(std::distance(
                logits.begin(), std::max_element(logits.begin(), logits.end())));
            softmax_inplace(logits);
            partial_loss[static_cast<std::size_t>(c)] -= std::log(
                std::max(logits[static_cast<std::size_t>(ds.labels[idx])], 1e-300));
            if (pred == ds.labels[idx]) partial_correct[static_cast<std::size_t>(c)]++;
        }
    });
    EvalMetrics m;
    std::size_t correct = 0;
    for (int c = 0; c < chunk_count; ++c) {
        m.loss += partial_loss[static_cast<std::size_t>(c)];
        correct += partial_correct[static_cast<std::size_t>(c)];
    }
    m.loss /= static_cast<double>(indices.size());
    m.accuracy = static_cast<double>(correct) / static_cast<double>(indices.size());
    return m;
}

void TrainConfig::validate() const {
    if (learning_rate < 0.0) throw ArgumentError("learning_rate must be nonnegative");
    if (batch_size == 0) throw ArgumentError("batch_size must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) {
        throw ArgumentError("Adam betas must lie in (0,1)");
    }
    if (epsilon <= 0.0) throw ArgumentError("epsilon must be positive");
}

namespace {

// Flat parameter order: per TTN all node tensors, then head_w, then head_b.
std::vector<double> flatten(const FTNClassifier& model) {
    std::vector<double> flat;
    flat.reserve(model.param_count());
    for (const auto& ttn : model.ttns) {
        for (const Tensor& t : ttn.node_tensors) {
            flat.insert(flat.end(), t.data.begin(), t.data.end());
        }
    }
    flat.insert(flat.end(), model.head_w.data.begin(), model.head_w.data.end());
    flat.insert(flat.end(), model.head_b.begin(), model.head_b.end());
    return flat;
}

std::vector<double> flatten(const FtnGradients& g) {
    std::vector<double> flat;
    for (const auto& per_ttn : g.ttn) {
        for (const Tensor& t : per_ttn) flat.insert(flat.end(), t.data.begin(), t.data.end());
    }
    flat.insert(flat.end(), g.head_w.data.begin(), g.head_w.data.end());
    flat.insert(flat.end(), g.head_b.begin(), g.head_b.end());
    return flat;
}

void unflatten(const std::vector<double>& flat, FTNClassifier& model) {
    std::size_t pos = 0;
    for (auto& ttn : model.ttns) {
        for (Tensor& t : ttn.node_tensors) {
            std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
                      flat.begin() + static_cast<std::ptrdiff_t>(pos + t.size()),
                      t.data.begin());
            pos += t.size();
        }
    }
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
              flat.begin() + static_cast<std::ptrdiff_t>(pos + model.head_w.size()),
              model.head_w.data.begin());
    pos += model.head_w.size();
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos), flat.end(), model.head_b.begin());
}

struct Adam {
    double lr, beta1, beta2, eps;
    std::vector<double> m, v;
    std::size_t t = 0;

    Adam(std::size_t n, const TrainConfig& cfg)
        : lr(cfg.learning_rate), beta1(cfg.beta1), beta2(cfg.beta2), eps(cfg.epsilon),
          m(n, 0.0), v(n, 0.0) {}

    void step(std::vector<double>& params, const std::vector<double>& grad) {
        ++t;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
};

}  // namespace

std::vector<EpochMetrics> train_ftn(FTNClassifier& model, const ImageDataset& train,
                                    const TrainConfig& cfg, int threads,
                                    const ImageDataset* test) {
    cfg.validate();
    if (train.size() == 0) throw ArgumentError("train_ftn: empty dataset");

    Rng rng(cfg.seed);
    std::vector<std::size_t> indices(train.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (cfg.subset_size > 0 && cfg.subset_size < indices.size()) {
        rng.shuffle(indices);
        indices.resize(cfg.subset_size);
    }
    std::vector<std::size_t> test_indices;
    if (test) {
        test_indices.resize(test->size());
        std::iota(test_indices.begin(), test_indices.end(), std::size_t{0});
    }

    std::vector<double> params = flatten(model);
    Adam adam(params.size(), cfg);
    std::vector<double> checkpoint = params;

    std::vector<EpochMetrics> log;
    FtnGradients grads;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        rng.shuffle(indices);
        for (std::size_t off = 0; off < indices.size(); off += cfg.batch_size) {
            const std::size_t len = std::min(cfg.batch_size, indices.size() - off);
            const double loss = ftn_loss_and_grad(
                model, train, std::span<const std::size_t>(indices.data() + off, len), grads,
                threads);
            if (!std::isfinite(loss)) {
                unflatten(checkpoint, model);
                throw NumericError("train_ftn: loss diverged at epoch " +
                                   std::to_string(epoch) + "; last-good checkpoint restored");
            }
            adam.step(params, flatten(grads));
            unflatten(params, model);
        }

        EpochMetrics row;
        row.epoch = epoch;
        const EvalMetrics train_m = ftn_evaluate(model, train, indices, threads);
        row.train_loss = train_m.loss;
        row.train_acc = train_m.accuracy;
        if (test && !test_indices.empty()) {
            const EvalMetrics test_m = ftn_evaluate(model, *test, test_indices, threads);
            row.test_loss = test_m.loss;
            row.test_acc = test_m.accuracy;
            row.has_test = true;
        }
        row.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.push_back(row);
        checkpoint = params;
    }
    return log;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path + " for writing");
    out << "epoch,train_loss,train_acc,test_loss,test_acc,wall_seconds\n";
    out.precision(17);
    for (const EpochMetrics& r : rows) {
        out << r.epoch << ',' << r.train_loss << ',' << r.train_acc << ',';
        if (r.has_test) {
            out << r.test_loss << ',' << r.test_acc;
        } else {
            out << "nan,nan";
        }
        out << ',' << r.wall_seconds << '\n';
    }
}

}  // namespace qforest
