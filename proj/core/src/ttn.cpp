#include "qforest/ttn.hpp"

#include <cmath>
#include <string>

#include "qforest/error.hpp"

namespace qforest {

namespace {

// out_o = sum_{ij} T[o,i,j] l_i r_j via m[o,i] = sum_j T[o,i,j] r_j, out_o = sum_i m[o,i] l_i.
void apply_node(const Tensor& t, const std::vector<double>& l, const std::vector<double>& r,
                std::vector<double>& out) {
    const std::size_t chi = t.shape[0];
    out.assign(chi, 0.0);
    const double* td = t.data.data();
    for (std::size_t o = 0; o < chi; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < chi; ++i) {
            const double* row = td + (o * chi + i) * chi;
            double mi = 0.0;
            for (std::size_t j = 0; j < chi; ++j) mi += row[j] * r[j];
            acc += mi * l[i];
        }
        out[o] = acc;
    }
}

}  // namespace

TTNClassifier TTNClassifier::random(const TreeTopology& topo, std::size_t chi, Rng& rng) {
    TTNClassifier ttn;
    ttn.topology = topo;
    ttn.chi = chi;
    const double stddev = 1.0 / std::sqrt(static_cast<double>(chi));
    ttn.node_tensors.reserve(topo.num_nodes());
    for (std::size_t i = 0; i < topo.num_nodes(); ++i) {
        Tensor t({chi, chi, chi});
        for (double& x : t.data) x = stddev * rng.normal();
        ttn.node_tensors.push_back(std::move(t));
    }
    return ttn;
}

std::vector<double> ttn_forward(const TTNClassifier& ttn,
                                const std::vector<std::vector<double>>& leaves,
                                TtnCache* cache) {
    const TreeTopology& topo = ttn.topology;
    const std::size_t n = topo.num_leaves;
    if (leaves.size() != n) {
        throw ShapeError("ttn_forward: expected " + std::to_string(n) + " leaves, got " +
                         std::to_string(leaves.size()));
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (leaves[i].size() != ttn.chi) {
            throw ShapeError("ttn_forward: leaf " + std::to_string(i) + " has dimension " +
                             std::to_string(leaves[i].size()) + ", expected chi = " +
                             std::to_string(ttn.chi));
        }
    }

    std::vector<std::vector<double>> outs(topo.num_nodes());
    for (std::size_t i = topo.num_nodes(); i-- > 0;) {
        const Tensor& t = ttn.node_tensors[i];
        if (t.shape != std::vector<std::size_t>{ttn.chi, ttn.chi, ttn.chi}) {
            throw ShapeError("ttn_forward: node " + std::to_string(i) + " has shape " +
                             t.shape_string());
        }
        const std::vector<double>& l =
            topo.is_bottom(i) ? leaves[topo.left_leaf(i)] : outs[topo.left_child(i)];
        const std::vector<double>& r =
            topo.is_bottom(i) ? leaves[topo.right_leaf(i)] : outs[topo.right_child(i)];
        apply_node(t, l, r, outs[i]);
    }

    std::vector<double> top = outs[0];
    if (cache) {
        cache->leaf = leaves;
        cache->node_out = std::move(outs);
        cache->valid = true;
    }
    return top;
}

void ttn_grad_accumulate(const TTNClassifier& ttn, const TtnCache& cache,
                         const std::vector<double>& upstream, std::vector<Tensor>& acc) {
    const TreeTopology& topo = ttn.topology;
    if (!cache.valid || cache.node_out.size() != topo.num_nodes() ||
        cache.leaf.size() != topo.num_leaves) {
        throw StateError("ttn_grad: forward cache is stale or missing");
    }
    if (upstream.size() != ttn.chi) {
        throw ShapeError("ttn_grad: upstream dimension mismatch");
    }
    if (acc.size() != topo.num_nodes()) {
        throw ShapeError("ttn_grad: accumulator size mismatch");
    }
    const std::size_t chi = ttn.chi;
    std::vector<std::vector<double>> cotangent(topo.num_nodes());
    cotangent[0] = upstream;
    for (std::size_t i = 0; i < topo.num_nodes(); ++i) {
        const Tensor& t = ttn.node_tensors[i];
        const std::vector<double>& g = cotangent[i];
        const std::vector<double>& l =
            topo.is_bottom(i) ? cache.leaf[topo.left_leaf(i)] : cache.node_out[topo.left_child(i)];
        const std::vector<double>& r = topo.is_bottom(i) ? cache.leaf[topo.right_leaf(i)]
                                                         : cache.node_out[topo.right_child(i)];
        Tensor& gt = acc[i];
        std::vector<double> gl(chi, 0.0), gr(chi, 0.0);
        for (std::size_t o = 0; o < chi; ++o) {
            const double go = g[o];
            for (std::size_t a = 0; a < chi; ++a) {
                const double* trow = t.data.data() + (o * chi + a) * chi;
                double* grow = gt.data.data() + (o * chi + a) * chi;
                const double go_la = go * l[a];
                for (std::size_t b = 0; b < chi; ++b) {
                    grow[b] += go_la * r[b];
                    gl[a] += go * trow[b] * r[b];
                    gr[b] += go * trow[b] * l[a];
                }
            }
        }
        if (!topo.is_bottom(i)) {
            cotangent[topo.left_child(i)] = std::move(gl);
            cotangent[topo.right_child(i)] = std::move(gr);
        }
    }
}

std::vector<Tensor> ttn_grad(const TTNClassifier& ttn, const TtnCache& cache,
                             const std::vector<double>& upstream) {
    const std::size_t chi = ttn.chi;
    std::vector<Tensor> grads;
    grads.reserve(ttn.topology.num_nodes());
    for (std::size_t i = 0; i < ttn.topology.num_nodes(); ++i) {
        grads.emplace_back(Tensor({chi, chi, chi}));
    }
    ttn_grad_accumulate(ttn, cache, upstream, grads);
    return grads;
}

TTNClassifier canonicalize(const TTNClassifier& ttn) {
    TTNClassifier out = ttn;
    const TreeTopology& topo = out.topology;
    const std::size_t chi = out.chi;

    // Children have larger heap indices than their parent, so a single descending
    // sweep isometrizes each node after it has absorbed both child gauge factors.
    for (std::size_t i = topo.num_nodes(); i-- > 1;) {
        Tensor mat = out.node_tensors[i].reshaped({chi, chi * chi});
        if (mat.frobenius_norm() == 0.0) {
            throw NumericError("canonicalize: node " + std::to_string(i) +
                               " is exactly zero (degenerate gauge)");
        }
        // A node that is already an isometry has fully degenerate singular values,
        // where the SVD gauge is arbitrary; leave it untouched (gauge = I). This also
        // makes canonicalization exactly idempotent.
        {
            Tensor gram = matmul(mat, transpose(mat));
            for (std::size_t a = 0; a < chi; ++a) gram(a, a) -= 1.0;
            if (gram.frobenius_norm() < 1e-12) continue;
        }
        SvdResult dec = svd(mat);
        out.node_tensors[i] = dec.vt.reshaped({chi, chi, chi});

        // gauge[o, l] = U[o, l] * s[l], absorbed into the parent's child leg.
        Tensor gauge({chi, chi});
        for (std::size_t o = 0; o < chi; ++o) {
            for (std::size_t l = 0; l < chi; ++l) gauge(o, l) = dec.u(o, l) * dec.s(l);
        }

        const std::size_t p = topo.parent(i);
        const bool is_left = (i == topo.left_child(p));
        const Tensor& parent = out.node_tensors[p];
        Tensor updated({chi, chi, chi});
        for (std::size_t o = 0; o < chi; ++o) {
            for (std::size_t a = 0; a < chi; ++a) {
                for (std::size_t b = 0; b < chi; ++b) {
                    double acc = 0.0;
                    for (std::size_t m = 0; m < chi; ++m) {
                        acc += is_left ? parent(o, m, b) * gauge(m, a)
                                       : parent(o, a, m) * gauge(m, b);
                    }
                    updated(o, a, b) = acc;
                }
            }
        }
        out.node_tensors[p] = std::move(updated);
    }
    out.is_canonical = true;
    return out;
}

double max_isometry_defect(const TTNClassifier& ttn) {
    const std::size_t chi = ttn.chi;
    double worst = 0.0;
    for (std::size_t i = 1; i < ttn.topology.num_nodes(); ++i) {
        const Tensor v = ttn.node_tensors[i].reshaped({chi, chi * chi});
        Tensor gram = matmul(v, transpose(v));
        for (std::size_t a = 0; a < chi; ++a) gram(a, a) -= 1.0;
        worst = std::max(worst, gram.frobenius_norm());
    }
    return worst;
}

}  // namespace qforest
