#include "qforest/qcircuit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "qforest/error.hpp"
#include "qforest/parallel.hpp"

namespace qforest {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat map_of(const Tensor& t) {
    return ConstMapMat(t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
                       static_cast<Eigen::Index>(t.shape[1]));
}

MapMat map_of(Tensor& t) {
    return MapMat(t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
                  static_cast<Eigen::Index>(t.shape[1]));
}

void check_weight(double w) {
    if (!(w >= 0.0 && w <= 1.0)) {
        throw ArgumentError("measurement weight w must lie in [0,1], got " + std::to_string(w));
    }
}

// out = (1-w) A + w T where A is the leading m=0 block of rho (viewed as measured (x)
// kept with `measured` outcomes of a kept block size `chi`) and T the partial trace
// over the measured register.
Tensor weighted_outcome(const Eigen::MatrixXd& rho, std::size_t measured, std::size_t chi,
                        double w) {
    Tensor out({chi, chi});
    MapMat mo = map_of(out);
    mo = (1.0 - w) * rho.topLeftCorner(static_cast<Eigen::Index>(chi),
                                       static_cast<Eigen::Index>(chi));
    if (w != 0.0) {
        for (std::size_t m = 0; m < measured; ++m) {
            mo += w * rho.block(static_cast<Eigen::Index>(m * chi),
                                static_cast<Eigen::Index>(m * chi),
                                static_cast<Eigen::Index>(chi), static_cast<Eigen::Index>(chi));
        }
    }
    return out;
}

// Adjoint of weighted_outcome: scatter dout back into drho.
Eigen::MatrixXd weighted_outcome_adjoint(const Eigen::MatrixXd& dout, std::size_t measured,
                                         std::size_t chi, double w) {
    const std::size_t dim = measured * chi;
    Eigen::MatrixXd drho = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim),
                                                 static_cast<Eigen::Index>(dim));
    drho.topLeftCorner(static_cast<Eigen::Index>(chi), static_cast<Eigen::Index>(chi)) =
        (1.0 - w) * dout;
    if (w != 0.0) {
        for (std::size_t m = 0; m < measured; ++m) {
            drho.block(static_cast<Eigen::Index>(m * chi), static_cast<Eigen::Index>(m * chi),
                       static_cast<Eigen::Index>(chi), static_cast<Eigen::Index>(chi)) +=
                w * dout;
        }
    }
    return drho;
}

Eigen::MatrixXd kron_states(const Tensor& l, const Tensor& r) {
    const std::size_t chi = l.shape[0];
    const std::size_t dim = chi * chi;
    Eigen::MatrixXd out(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < chi; ++i) {
        for (std::size_t ip = 0; ip < chi; ++ip) {
            const double lv = l.data[i * chi + ip];
            for (std::size_t j = 0; j < chi; ++j) {
                for (std::size_t jp = 0; jp < chi; ++jp) {
                    out(static_cast<Eigen::Index>(i * chi + j),
                        static_cast<Eigen::Index>(ip * chi + jp)) = lv * r.data[j * chi + jp];
                }
            }
        }
    }
    return out;
}

// dL[i,i'] = sum_{j,j'} drho[i chi + j, i' chi + j'] R[j,j'] and symmetrically for dR.
void kron_adjoint(const Eigen::MatrixXd& drho, const Tensor& l, const Tensor& r,
                  Eigen::MatrixXd& dl, Eigen::MatrixXd& dr) {
    const std::size_t chi = l.shape[0];
    dl.setZero(static_cast<Eigen::Index>(chi), static_cast<Eigen::Index>(chi));
    dr.setZero(static_cast<Eigen::Index>(chi), static_cast<Eigen::Index>(chi));
    for (std::size_t i = 0; i < chi; ++i) {
        for (std::size_t ip = 0; ip < chi; ++ip) {
            const auto block = drho.block(static_cast<Eigen::Index>(i * chi),
                                          static_cast<Eigen::Index>(ip * chi),
                                          static_cast<Eigen::Index>(chi),
                                          static_cast<Eigen::Index>(chi));
            double acc = 0.0;
            for (std::size_t j = 0; j < chi; ++j) {
                for (std::size_t jp = 0; jp < chi; ++jp) {
                    acc += block(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(jp)) *
                           r.data[j * chi + jp];
                }
            }
            dl(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(ip)) = acc;
            dr += l.data[i * chi + ip] * block;
        }
    }
}

void check_state(const WeightedState& s, const char* side) {
    if (s.mat.rank() != 2 || s.mat.shape[0] != s.mat.shape[1]) {
        throw ShapeError(std::string("weighted state (") + side + ") must be square, got " +
                         s.mat.shape_string());
    }
}

}  // namespace

WeightedState leaf_state(const std::vector<double>& f) {
    double norm2 = 0.0;
    for (double x : f) norm2 += x * x;
    if (std::abs(norm2 - 1.0) > 1e-9) {
        throw ArgumentError("leaf_state: feature vector is not unit norm (|f|^2 = " +
                            std::to_string(norm2) + ")");
    }
    const std::size_t chi = f.size();
    WeightedState s{Tensor({chi, chi})};
    for (std::size_t i = 0; i < chi; ++i) {
        for (std::size_t j = 0; j < chi; ++j) s.mat(i, j) = f[i] * f[j];
    }
    return s;
}

WeightedState node_channel(const Tensor& u, const WeightedState& left,
                           const WeightedState& right, double w) {
    check_weight(w);
    check_state(left, "left");
    check_state(right, "right");
    const std::size_t chi = left.mat.shape[0];
    const std::size_t dim = chi * chi;
    if (u.rank() != 2 || u.shape[0] != dim || u.shape[1] != dim) {
        throw ShapeError("node_channel: unitary has shape " + u.shape_string() +
                         ", expected chi^2 x chi^2");
    }
    const Eigen::MatrixXd rho_in = kron_states(left.mat, right.mat);
    ConstMapMat mu = map_of(u);
    const Eigen::MatrixXd rho = mu * rho_in * mu.transpose();
    return WeightedState{weighted_outcome(rho, chi, chi, w)};
}

WeightedState top_channel(const Tensor& u_b, const WeightedState& left,
                          const WeightedState& right, double w) {
    check_weight(w);
    check_state(left, "left");
    check_state(right, "right");
    const std::size_t chi = left.mat.shape[0];
    const std::size_t dim = chi * chi;
    if (u_b.rank() != 2 || u_b.shape[0] != 2 * dim || u_b.shape[1] != 2 * dim) {
        throw ShapeError("top_channel: unitary has shape " + u_b.shape_string() +
                         ", expected 2chi^2 x 2chi^2");
    }
    const Eigen::MatrixXd rho_cc = kron_states(left.mat, right.mat);
    // The applied operator is U_b^T; with the ancilla |0> leading, the input only
    // meets the first chi^2 rows S of U_b: rho' = S^T rho_cc S.
    ConstMapMat mu = map_of(u_b);
    const auto s = mu.topRows(static_cast<Eigen::Index>(dim));
    const Eigen::MatrixXd rho = s.transpose() * rho_cc * s;
    return WeightedState{weighted_outcome(rho, 2 * chi, chi, w)};
}

namespace {

WeightedState sweep_circuit(const QTTNCircuit& circuit,
                            const std::vector<std::vector<double>>& leaves, double w,
                            QttnCache* cache) {
    const TreeTopology& topo = circuit.topology;
    if (leaves.size() != topo.num_leaves) {
        throw ShapeError("qttn_forward: expected " + std::to_string(topo.num_leaves) +
                         " leaves, got " + std::to_string(leaves.size()));
    }
    std::vector<WeightedState> leaf_states;
    leaf_states.reserve(leaves.size());
    for (const auto& f : leaves) leaf_states.push_back(leaf_state(f));

    std::vector<WeightedState> outs(topo.num_nodes());
    for (std::size_t i = topo.num_nodes(); i-- > 0;) {
        const WeightedState& l = topo.is_bottom(i) ? leaf_states[topo.left_leaf(i)]
                                                   : outs[topo.left_child(i)];
        const WeightedState& r = topo.is_bottom(i) ? leaf_states[topo.right_leaf(i)]
                                                   : outs[topo.right_child(i)];
        outs[i] = (i == 0) ? top_channel(circuit.top_unitary, l, r, w)
                           : node_channel(circuit.internal_unitaries[i], l, r, w);
    }
    WeightedState final_state = outs[0];
    if (cache) {
        cache->leaf.clear();
        cache->leaf.reserve(leaf_states.size());
        for (auto& s : leaf_states) cache->leaf.push_back(std::move(s.mat));
        cache->node_out.clear();
        cache->node_out.reserve(outs.size());
        for (auto& s : outs) cache->node_out.push_back(std::move(s.mat));
        cache->valid = true;
    }
    return final_state;
}

SimOutput summarize(const WeightedState& final_state, std::size_t num_nodes) {
    const std::size_t chi = final_state.mat.shape[0];
    double trace = 0.0;
    for (std::size_t i = 0; i < chi; ++i) trace += final_state.mat(i, i);
    if (trace < 1e-300) {
        throw NumericError("qttn_forward: acceptance weight underflow (trace = " +
                           std::to_string(trace) + ")");
    }
    SimOutput out;
    out.probs.resize(chi);
    for (std::size_t i = 0; i < chi; ++i) out.probs[i] = final_state.mat(i, i) / trace;
    out.success_prob = trace;
    out.srpg = std::pow(trace, 1.0 / static_cast<double>(num_nodes));
    return out;
}

}  // namespace

SimOutput qttn_forward(const QTTNCircuit& circuit,
                       const std::vector<std::vector<double>>& leaves, double w,
                       QttnCache* cache) {
    const WeightedState final_state = sweep_circuit(circuit, leaves, w, cache);
    return summarize(final_state, circuit.topology.num_nodes());
}

SimOutput qttn_forward_image(const QTTNCircuit& circuit, const Image& img, int dv, int dh,
                             double w) {
    return qttn_forward(circuit, extract_leaves(img, circuit.topology, dv, dh), w);
}

QftnOutput qftn_forward(const QFTNModel& model, const Image& img, double w) {
    const std::size_t chi = model.chi();
    const std::size_t d = model.num_classes;
    QftnOutput out;
    out.per_circuit.reserve(d);
    std::vector<double> concat(d * chi);
    for (std::size_t t = 0; t < d; ++t) {
        SimOutput sim = qttn_forward_image(model.circuits[t], img, model.shifts[t][0],
                                           model.shifts[t][1], w);
        std::copy(sim.probs.begin(), sim.probs.end(),
                  concat.begin() + static_cast<std::ptrdiff_t>(t * chi));
        out.per_circuit.push_back(std::move(sim));
    }
    out.logits.resize(d);
    for (std::size_t c = 0; c < d; ++c) {
        double acc = model.head_b[c];
        const double* row = model.head_w.data.data() + c * concat.size();
        for (std::size_t j = 0; j < concat.size(); ++j) acc += row[j] * concat[j];
        out.logits[c] = acc;
    }
    out.mean_stats.probs.clear();
    out.mean_stats.success_prob = 0.0;
    out.mean_stats.srpg = 0.0;
    for (const SimOutput& sim : out.per_circuit) {
        out.mean_stats.success_prob += sim.success_prob;
        out.mean_stats.srpg += sim.srpg;
    }
    out.mean_stats.success_prob /= static_cast<double>(d);
    out.mean_stats.srpg /= static_cast<double>(d);
    return out;
}

QftnGradients QftnGradients::zeros_like(const QFTNModel& model) {
    QftnGradients g;
    const std::size_t chi = model.chi();
    const std::size_t dim = chi * chi;
    g.internal.resize(model.circuits.size());
    g.top.reserve(model.circuits.size());
    for (std::size_t c = 0; c < model.circuits.size(); ++c) {
        const std::size_t nodes = model.circuits[c].topology.num_nodes();
        g.internal[c].resize(nodes);
        for (std::size_t i = 1; i < nodes; ++i) g.internal[c][i] = Tensor({dim, dim});
        g.top.emplace_back(Tensor({2 * dim, 2 * dim}));
    }
    g.head_w = Tensor(model.head_w.shape);
    g.head_b.assign(model.head_b.size(), 0.0);
    return g;
}

void QftnGradients::add(const QftnGradients& other) {
    for (std::size_t c = 0; c < internal.size(); ++c) {
        for (std::size_t i = 1; i < internal[c].size(); ++i) {
            double* dst = internal[c][i].data.data();
            const double* src = other.internal[c][i].data.data();
            for (std::size_t j = 0; j < internal[c][i].size(); ++j) dst[j] += src[j];
        }
        for (std::size_t j = 0; j < top[c].size(); ++j) top[c].data[j] += other.top[c].data[j];
    }
    for (std::size_t j = 0; j < head_w.size(); ++j) head_w.data[j] += other.head_w.data[j];
    for (std::size_t j = 0; j < head_b.size(); ++j) head_b[j] += other.head_b[j];
}

void QftnGradients::scale(double factor) {
    for (auto& per_circuit : internal) {
        for (Tensor& t : per_circuit) {
            for (double& x : t.data) x *= factor;
        }
    }
    for (Tensor& t : top) {
        for (double& x : t.data) x *= factor;
    }
    for (double& x : head_w.data) x *= factor;
    for (double& x : head_b) x *= factor;
}

namespace {

// Backward sweep of one circuit for one sample. dfinal is the cotangent of the final
// weighted state; Euclidean unitary gradients are accumulated into acc_internal/acc_top.
void qttn_backward(const QTTNCircuit& circuit, const QttnCache& cache,
                   const Eigen::MatrixXd& dfinal, double w,
                   std::vector<Tensor>& acc_internal, Tensor& acc_top) {
    const TreeTopology& topo = circuit.topology;
    const std::size_t chi = circuit.chi;
    const std::size_t dim = chi * chi;

    std::vector<Eigen::MatrixXd> cotangent(topo.num_nodes());
    cotangent[0] = dfinal;
    Eigen::MatrixXd dl, dr;

    for (std::size_t i = 0; i < topo.num_nodes(); ++i) {
        const Tensor& lmat = topo.is_bottom(i) ? cache.leaf[topo.left_leaf(i)]
                                               : cache.node_out[topo.left_child(i)];
        const Tensor& rmat = topo.is_bottom(i) ? cache.leaf[topo.right_leaf(i)]
                                               : cache.node_out[topo.right_child(i)];
        const Eigen::MatrixXd rho_in = kron_states(lmat, rmat);
        Eigen::MatrixXd drho_in;

        if (i == 0) {
            const Eigen::MatrixXd drho = weighted_outcome_adjoint(cotangent[i], 2 * chi, chi, w);
            ConstMapMat mu = map_of(circuit.top_unitary);
            const auto s = mu.topRows(static_cast<Eigen::Index>(dim));
            // rho' = S^T rho_in S  =>  dS = rho_in S drho'^T + rho_in^T S drho'
            const Eigen::MatrixXd ds =
                rho_in * s * drho.transpose() + rho_in.transpose() * s * drho;
            MapMat(acc_top.data.data(), static_cast<Eigen::Index>(2 * dim),
                   static_cast<Eigen::Index>(2 * dim))
                .topRows(static_cast<Eigen::Index>(dim)) += ds;
            drho_in = s * drho * s.transpose();
        } else {
            const Eigen::MatrixXd drho = weighted_outcome_adjoint(cotangent[i], chi, chi, w);
            ConstMapMat mu = map_of(circuit.internal_unitaries[i]);
            // rho' = U rho_in U^T  =>  dU = drho' U rho_in^T + drho'^T U rho_in
            MapMat(acc_internal[i].data.data(), static_cast<Eigen::Index>(dim),
                   static_cast<Eigen::Index>(dim)) +=
                drho * mu * rho_in.transpose() + drho.transpose() * mu * rho_in;
            drho_in = mu.transpose() * drho * mu;
        }
        cotangent[i].resize(0, 0);

        if (!topo.is_bottom(i)) {
            kron_adjoint(drho_in, lmat, rmat, dl, dr);
            cotangent[topo.left_child(i)] = dl;
            cotangent[topo.right_child(i)] = dr;
        }
    }
}

void softmax_inplace(std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (double& x : v) {
        x = std::exp(x - m);
        sum += x;
    }
    for (double& x : v) x /= sum;
}

double qftn_sample_grad(const QFTNModel& model, const Image& img, int label, double w,
                        QftnGradients& acc) {
    const std::size_t chi = model.chi();
    const std::size_t d = model.num_classes;
    const std::size_t concat_dim = d * chi;

    std::vector<QttnCache> caches(d);
    std::vector<SimOutput> sims(d);
    std::vector<double> concat(concat_dim);
    for (std::size_t t = 0; t < d; ++t) {
        const auto leaves = extract_leaves(img, model.circuits[t].topology, model.shifts[t][0],
                                           model.shifts[t][1]);
        sims[t] = qttn_forward(model.circuits[t], leaves, w, &caches[t]);
        std::copy(sims[t].probs.begin(), sims[t].probs.end(),
                  concat.begin() + static_cast<std::ptrdiff_t>(t * chi));
    }

    std::vector<double> logits(d);
    for (std::size_t c = 0; c < d; ++c) {
        double accum = model.head_b[c];
        const double* row = model.head_w.data.data() + c * concat_dim;
        for (std::size_t j = 0; j < concat_dim; ++j) accum += row[j] * concat[j];
        logits[c] = accum;
    }
    std::vector<double> probs = logits;
    softmax_inplace(probs);
    const double loss = -std::log(std::max(probs[static_cast<std::size_t>(label)], 1e-300));

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

    // probs = diag(final)/trace  =>  dfinal = diag((dprobs - <dprobs, probs>)/trace).
    for (std::size_t t = 0; t < d; ++t) {
        const double trace = sims[t].success_prob;
        const double* dprobs = dconcat.data() + t * chi;
        double inner = 0.0;
        for (std::size_t j = 0; j < chi; ++j) inner += dprobs[j] * sims[t].probs[j];
        Eigen::MatrixXd dfinal = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(chi),
                                                       static_cast<Eigen::Index>(chi));
        for (std::size_t j = 0; j < chi; ++j) {
            dfinal(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) =
                (dprobs[j] - inner) / trace;
        }
        qttn_backward(model.circuits[t], caches[t], dfinal, w, acc.internal[t], acc.top[t]);
    }
    return loss;
}

}  // namespace

double qftn_loss_and_grad(const QFTNModel& model, const ImageDataset& ds,
                          std::span<const std::size_t> batch, double w,
                          QftnGradients& grads, int threads) {
    if (batch.empty()) throw ArgumentError("qftn_loss_and_grad: empty batch");
    for (std::size_t idx : batch) {
        if (idx >= ds.size()) throw DataError("batch index out of range");
        if (ds.labels[idx] < 0 || ds.labels[idx] >= static_cast<int>(model.num_classes)) {
            throw DataError("label " + std::to_string(ds.labels[idx]) + " out of range");
        }
    }
    check_weight(w);

    const int chunk_count = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)),
                                                  batch.size());
    std::vector<QftnGradients> partial;
    partial.reserve(static_cast<std::size_t>(chunk_count));
    for (int c = 0; c < chunk_count; ++c) partial.push_back(QftnGradients::zeros_like(model));
    std::vector<double> partial_loss(static_cast<std::size_t>(chunk_count), 0.0);

    parallel_chunks(batch.size(), chunk_count, [&](int c, std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            partial_loss[static_cast<std::size_t>(c)] +=
                qftn_sample_grad(model, ds.images[batch[i]], ds.labels[batch[i]], w,
                                 partial[static_cast<std::size_t>(c)]);
        }
    });

    grads = std::move(partial[0]);
    double loss = partial_loss[0];
    for (int c = 1; c < chunk_count; ++c) {
        grads.add(partial[static_cast<std::size_t>(c)]);
        loss += partial_loss[static_cast<std::size_t>(c)];
    }
    if (!std::isfinite(loss)) {
        throw NumericError("qftn_loss_and_grad: non-finite loss");
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    grads.scale(inv);
    return loss * inv;
}

QftnEvalMetrics qftn_evaluate(const QFTNModel& model, const ImageDataset& ds,
                              std::span<const std::size_t> indices, double w, int threads) {
    if (indices.empty()) throw ArgumentError("qftn_evaluate: empty index set");
    const int chunk_count = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)),
                                                  indices.size());
    struct Partial {
        double loss = 0.0, success = 0.0, srpg = 0.0, min_success = 1.0;
        std::size_t correct = 0;
    };
    std::vector<Partial> partial(static_cast<std::size_t>(chunk_count));
    parallel_chunks(indices.size(), chunk_count, [&](int c, std::size_t lo, std::size_t hi) {
        Partial& p = partial[static_cast<std::size_t>(c)];
        for (std::size_t i = lo; i < hi; ++i) {
            const std::size_t idx = indices[i];
            QftnOutput out = qftn_forward(model, ds.images[idx], w);
            const int pred = static_cast<int>(std::distance(
                out.logits.begin(), std::max_element(out.logits.begin(), out.logits.end())));
            std::vector<double> probs = out.logits;
            softmax_inplace(probs);
            p.loss -= std::log(std::max(probs[static_cast<std::size_t>(ds.labels[idx])], 1e-300));
            if (pred == ds.labels[idx]) p.correct++;
            p.success += out.mean_stats.success_prob;
            p.srpg += out.mean_stats.srpg;
            for (const SimOutput& sim : out.per_circuit) {
                p.min_success = std::min(p.min_success, sim.success_prob);
            }
        }
    });
    QftnEvalMetrics m;
    m.mean_success_prob = 0.0;
    m.mean_srpg = 0.0;
    std::size_t correct = 0;
    for (const Partial& p : partial) {
        m.loss += p.loss;
        m.mean_success_prob += p.success;
        m.mean_srpg += p.srpg;
        m.min_success_prob = std::min(m.min_success_prob, p.min_success);
        correct += p.correct;
    }
    const double n = static_cast<double>(indices.size());
    m.loss /= n;
    m.accuracy = static_cast<double>(correct) / n;
    m.mean_success_prob /= n;
    m.mean_srpg /= n;
    return m;
}

}  // namespace qforest
