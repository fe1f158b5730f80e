// Test-only oracles, independent of the library code paths they check: nested-loop
// contraction, the dense W * Phi(x) classifier, a branch-enumerating state-vector
// simulator for weighted measurements, finite differences, and synthetic datasets.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "qforest/dataset.hpp"
#include "qforest/embedding.hpp"
#include "qforest/rng.hpp"
#include "qforest/tensor.hpp"
#include "qforest/ttn.hpp"

namespace oracles {

using qforest::Image;
using qforest::ImageDataset;
using qforest::QTTNCircuit;
using qforest::Rng;
using qforest::Tensor;
using qforest::TreeTopology;
using qforest::TTNClassifier;

// ---------------------------------------------------------------------------
// Brute-force contraction of two rank-3 tensors over one axis each (the
// four-nested-loop reference from the contract examples).
inline Tensor contract3_loop(const Tensor& a, const Tensor& b, std::size_t axis_a,
                             std::size_t axis_b) {
    auto dims_of = [](const Tensor& t, std::size_t skip) {
        std::vector<std::size_t> d;
        for (std::size_t i = 0; i < 3; ++i) {
            if (i != skip) d.push_back(t.shape[i]);
        }
        return d;
    };
    const auto da = dims_of(a, axis_a);
    const auto db = dims_of(b, axis_b);
    Tensor out({da[0], da[1], db[0], db[1]});
    auto a_at = [&](std::size_t f0, std::size_t f1, std::size_t k) {
        std::size_t idx[3];
        std::size_t pos = 0;
        for (std::size_t i = 0; i < 3; ++i) idx[i] = (i == axis_a) ? k : (pos++, 0);
        pos = 0;
        for (std::size_t i = 0; i < 3; ++i) {
            if (i != axis_a) idx[i] = (pos == 0 ? f0 : f1), ++pos;
        }
        return a(idx[0], idx[1], idx[2]);
    };
    auto b_at = [&](std::size_t f0, std::size_t f1, std::size_t k) {
        std::size_t idx[3];
        std::size_t pos = 0;
        for (std::size_t i = 0; i < 3; ++i) {
            if (i != axis_b) idx[i] = (pos == 0 ? f0 : f1), ++pos;
            else idx[i] = k;
        }
        return b(idx[0], idx[1], idx[2]);
    };
    const std::size_t kdim = a.shape[axis_a];
    for (std::size_t i = 0; i < da[0]; ++i)
        for (std::size_t j = 0; j < da[1]; ++j)
            for (std::size_t l = 0; l < db[0]; ++l)
                for (std::size_t m = 0; m < db[1]; ++m) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < kdim; ++k) acc += a_at(i, j, k) * b_at(l, m, k);
                    out.data[((i * da[1] + j) * db[0] + l) * db[1] + m] = acc;
                }
    return out;
}

inline Tensor kron_loop(const Tensor& a, const Tensor& b) {
    Tensor out({a.shape[0] * b.shape[0], a.shape[1] * b.shape[1]});
    for (std::size_t i = 0; i < a.shape[0]; ++i)
        for (std::size_t j = 0; j < a.shape[1]; ++j)
            for (std::size_t p = 0; p < b.shape[0]; ++p)
                for (std::size_t q = 0; q < b.shape[1]; ++q)
                    out(i * b.shape[0] + p, j * b.shape[1] + q) = a(i, j) * b(p, q);
    return out;
}

// ---------------------------------------------------------------------------
// Dense classifier oracle: the explicit chi x chi^N matrix W of the whole tree and
// the feature vector Phi(x) as one big Kronecker product (leaf slot 0 most
// significant). Feasible for N <= 16 at chi = 2.
inline std::vector<std::vector<double>> dense_node_matrix(const TTNClassifier& ttn,
                                                          std::size_t node) {
    const TreeTopology& topo = ttn.topology;
    const std::size_t chi = ttn.chi;
    std::vector<std::vector<double>> left, right;
    if (topo.is_bottom(node)) {
        left.assign(chi, std::vector<double>(chi, 0.0));
        right.assign(chi, std::vector<double>(chi, 0.0));
        for (std::size_t i = 0; i < chi; ++i) left[i][i] = right[i][i] = 1.0;
    } else {
        left = dense_node_matrix(ttn, topo.left_child(node));
        right = dense_node_matrix(ttn, topo.right_child(node));
    }
    const std::size_t dl = left[0].size();
    const std::size_t dr = right[0].size();
    const Tensor& t = ttn.node_tensors[node];
    std::vector<std::vector<double>> out(chi, std::vector<double>(dl * dr, 0.0));
    for (std::size_t o = 0; o < chi; ++o)
        for (std::size_t i = 0; i < chi; ++i)
            for (std::size_t j = 0; j < chi; ++j) {
                const double w = t(o, i, j);
                if (w == 0.0) continue;
                for (std::size_t x = 0; x < dl; ++x)
                    for (std::size_t y = 0; y < dr; ++y)
                        out[o][x * dr + y] += w * left[i][x] * right[j][y];
            }
    return out;
}

inline std::vector<double> dense_feature_vector(const std::vector<std::vector<double>>& leaves) {
    std::vector<double> phi{1.0};
    for (const auto& leaf : leaves) {
        std::vector<double> next(phi.size() * leaf.size());
        for (std::size_t i = 0; i < phi.size(); ++i)
            for (std::size_t j = 0; j < leaf.size(); ++j)
                next[i * leaf.size() + j] = phi[i] * leaf[j];
        phi = std::move(next);
    }
    return phi;
}

inline std::vector<double> dense_ttn_forward(const TTNClassifier& ttn,
                                             const std::vector<std::vector<double>>& leaves) {
    const auto w = dense_node_matrix(ttn, 0);
    const auto phi = dense_feature_vector(leaves);
    std::vector<double> out(ttn.chi, 0.0);
    for (std::size_t o = 0; o < ttn.chi; ++o)
        for (std::size_t x = 0; x < phi.size(); ++x) out[o] += w[o][x] * phi[x];
    return out;
}

// ---------------------------------------------------------------------------
// Full-state-vector oracle for the weighted measurement circuit, N = 4, chi = 2.
// Tracks every branch of unnormalized pure states through explicit projectors and
// per-outcome weights; entirely independent of the density-matrix simulator.
namespace detail {

// Apply a (2^g x 2^g) gate to qubits [first, first+g) of an n-qubit state
// (qubit 0 most significant).
inline std::vector<double> apply_gate(const std::vector<double>& state, std::size_t n,
                                      const Tensor& gate, std::size_t first, std::size_t g) {
    const std::size_t dim = std::size_t{1} << n;
    const std::size_t gd = std::size_t{1} << g;
    const std::size_t right_bits = n - first - g;
    const std::size_t right = std::size_t{1} << right_bits;
    std::vector<double> out(dim, 0.0);
    for (std::size_t hi = 0; hi < (std::size_t{1} << first); ++hi)
        for (std::size_t lo = 0; lo < right; ++lo)
            for (std::size_t a = 0; a < gd; ++a) {
                double acc = 0.0;
                for (std::size_t b = 0; b < gd; ++b) {
                    acc += gate(a, b) * state[(hi * gd + b) * right + lo];
                }
                out[(hi * gd + a) * right + lo] = acc;
            }
    return out;
}

// Project qubits [0, g) onto |m> and drop them (unnormalized).
inline std::vector<double> project_leading(const std::vector<double>& state, std::size_t n,
                                           std::size_t g, std::size_t m) {
    const std::size_t keep = std::size_t{1} << (n - g);
    std::vector<double> out(keep);
    for (std::size_t x = 0; x < keep; ++x) out[x] = state[m * keep + x];
    return out;
}

}  // namespace detail

struct WeightedOracleResult {
    Tensor state;         // final 2x2 weighted state
    double trace = 0.0;   // sum over branches of W(branch) * p(branch)
};

inline WeightedOracleResult statevector_weighted_oracle(
    const QTTNCircuit& circuit, const std::vector<std::vector<double>>& leaves, double w) {
    // Bottom nodes 1 (leaves 0,1) and 2 (leaves 2,3), then the block-encoded top.
    struct Branch {
        std::vector<double> state;
        double weight;
    };
    std::vector<Branch> branches{{dense_feature_vector(leaves), 1.0}};

    auto split = [&](std::size_t n_qubits, std::size_t measured_qubits,
                     std::vector<Branch>& in) {
        std::vector<Branch> out;
        const std::size_t outcomes = std::size_t{1} << measured_qubits;
        for (const Branch& b : in) {
            for (std::size_t m = 0; m < outcomes; ++m) {
                Branch nb;
                nb.state = detail::project_leading(b.state, n_qubits, measured_qubits, m);
                nb.weight = b.weight * (m == 0 ? 1.0 : w);
                out.push_back(std::move(nb));
            }
        }
        in = std::move(out);
    };

    // Node 1 on qubits (0,1): apply, measure qubit 0. To measure the leading qubit we
    // first rotate it to the front; here it already is the front.
    for (Branch& b : branches) b.state = detail::apply_gate(b.state, 4, circuit.internal_unitaries[1], 0, 2);
    split(4, 1, branches);
    // Node 2 now acts on qubits (1,2) of the 3-qubit remainder (kept1, leaf2, leaf3).
    for (Branch& b : branches) b.state = detail::apply_gate(b.state, 3, circuit.internal_unitaries[2], 1, 2);
    // Its measured qubit is qubit 1; swap qubits 0 and 1 so the measured one leads.
    for (Branch& b : branches) {
        std::vector<double> swapped(8);
        for (std::size_t q0 = 0; q0 < 2; ++q0)
            for (std::size_t q1 = 0; q1 < 2; ++q1)
                for (std::size_t q2 = 0; q2 < 2; ++q2)
                    swapped[(q1 * 2 + q0) * 2 + q2] = b.state[(q0 * 2 + q1) * 2 + q2];
        b.state = std::move(swapped);
    }
    split(3, 1, branches);
    // Top: prepend the ancilla |0> (3 qubits total), apply U_b^T (the operator the
    // channel applies), measure the leading 2 qubits, keep the last.
    const Tensor ub_t = qforest::transpose(circuit.top_unitary);
    for (Branch& b : branches) {
        std::vector<double> with_anc(8, 0.0);
        for (std::size_t x = 0; x < 4; ++x) with_anc[x] = b.state[x];
        b.state = detail::apply_gate(with_anc, 3, ub_t, 0, 3);
    }
    split(3, 2, branches);

    WeightedOracleResult res;
    res.state = Tensor({2, 2});
    for (const Branch& b : branches) {
        double p = 0.0;
        for (std::size_t i = 0; i < 2; ++i) {
            for (std::size_t j = 0; j < 2; ++j) res.state(i, j) += b.weight * b.state[i] * b.state[j];
            p += b.state[i] * b.state[i];
        }
        res.trace += b.weight * p;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Central finite differences on a scalar function of one mutable parameter.
inline double central_diff(const std::function<double()>& f, double& param, double h = 1e-5) {
    const double saved = param;
    param = saved + h;
    const double fp = f();
    param = saved - h;
    const double fm = f();
    param = saved;
    return (fp - fm) / (2.0 * h);
}

inline bool grad_close(double analytic, double fd, double rel = 1e-5, double abs_floor = 1e-9) {
    return std::abs(analytic - fd) <= rel * std::max(std::abs(analytic), std::abs(fd)) + abs_floor;
}

// ---------------------------------------------------------------------------
// Synthetic datasets.
inline ImageDataset random_images(std::size_t side, std::size_t channels, std::size_t count,
                                  std::size_t classes, std::uint64_t seed) {
    Rng rng(seed);
    ImageDataset ds;
    ds.side = side;
    ds.channels = channels;
    ds.num_classes = classes;
    for (std::size_t i = 0; i < count; ++i) {
        Image img;
        img.side = side;
        img.channels = channels;
        img.pix.resize(side * side * channels);
        for (double& p : img.pix) p = rng.uniform();
        ds.images.push_back(std::move(img));
        ds.labels.push_back(static_cast<int>(rng.integer(classes)));
    }
    return ds;
}

// Linearly separable by construction: class c occupies the intensity band around
// (c + 0.5) / classes with small noise.
inline ImageDataset separable_toy(std::size_t side, std::size_t channels, std::size_t count,
                                  std::size_t classes, std::uint64_t seed) {
    Rng rng(seed);
    ImageDataset ds;
    ds.side = side;
    ds.channels = channels;
    ds.num_classes = classes;
    for (std::size_t i = 0; i < count; ++i) {
        const int label = static_cast<int>(i % classes);
        const double base = (label + 0.5) / static_cast<double>(classes);
        Image img;
        img.side = side;
        img.channels = channels;
        img.pix.resize(side * side * channels);
        for (double& p : img.pix) {
            p = base + 0.08 * (rng.uniform() - 0.5) / static_cast<double>(classes);
            p = std::min(std::max(p, 0.0), 1.0);
        }
        ds.images.push_back(std::move(img));
        ds.labels.push_back(label);
    }
    return ds;
}

}  // namespace oracles
