#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "oracles.hpp"
#include "qforest/encoder.hpp"
#include "qforest/error.hpp"

using namespace qforest;

namespace {

double orthogonality_defect(const Tensor& q) {
    Tensor gram = matmul(transpose(q), q);
    for (std::size_t i = 0; i < gram.shape[0]; ++i) gram(i, i) -= 1.0;
    return gram.frobenius_norm();
}

double frob_inner(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

Tensor random_square(std::size_t n, Rng& rng) {
    Tensor t({n, n});
    for (double& x : t.data) x = rng.normal();
    return t;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

}  // namespace

TEST_CASE("riemannian_grad: scale directions project to zero") {
    Rng rng(1);
    const Tensor u = qr_orthonormal(random_square(4, rng));
    const Tensor xi = riemannian_grad(u, u);
    for (double x : xi.data) CHECK(std::abs(x) < 1e-13);
}

TEST_CASE("riemannian_grad: tangent gradients are fixed points") {
    Rng rng(2);
    const Tensor u = qr_orthonormal(random_square(4, rng));
    // Build g with g u^T skew: g = Omega u for a random skew Omega.
    Tensor omega = random_square(4, rng);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            omega(i, j) = -omega(j, i);
            if (i == j) omega(i, i) = 0.0;
        }
    const Tensor g = matmul(omega, u);
    const Tensor xi = riemannian_grad(u, g);
    for (std::size_t i = 0; i < 16; ++i) CHECK(xi.data[i] == doctest::Approx(g.data[i]).epsilon(1e-12));
}

TEST_CASE("riemannian_grad: projection identity <g, xi> = <xi, xi> >= 0") {
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        const Tensor u = qr_orthonormal(random_square(4, rng));
        const Tensor g = random_square(4, rng);
        const Tensor xi = riemannian_grad(u, g);
        const double gx = frob_inner(g, xi);
        const double xx = frob_inner(xi, xi);
        CHECK(gx >= -1e-12);
        CHECK(std::abs(gx - xx) < 1e-10);
        // Tangency: xi u^T is skew.
        const Tensor m = matmul(xi, transpose(u));
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                CHECK(std::abs(m(i, j) + m(j, i)) < 1e-10);
            }
    }
}

TEST_CASE("riemannian_grad: rejects a non-orthogonal base point") {
    Rng rng(4);
    const Tensor not_orth = random_square(3, rng);
    CHECK_THROWS_AS(riemannian_grad(not_orth, not_orth), ArgumentError);
}

TEST_CASE("retract: zero step returns u") {
    Rng rng(5);
    const Tensor u = qr_orthonormal(random_square(5, rng));
    const Tensor back = retract(u, Tensor({5, 5}));
    for (std::size_t i = 0; i < u.size(); ++i) {
        CHECK(std::abs(back.data[i] - u.data[i]) < 1e-13);
    }
}

TEST_CASE("retract: first-order agreement with the Euclidean step") {
    Rng rng(6);
    const Tensor u = qr_orthonormal(random_square(4, rng));
    const Tensor g = random_square(4, rng);
    const Tensor xi = riemannian_grad(u, g);
    double prev_err = -1.0;
    for (const double eps : {1e-2, 1e-3, 1e-4}) {
        Tensor step = xi;
        for (double& x : step.data) x *= eps;
        const Tensor moved = retract(u, step);
        double err = 0.0;
        for (std::size_t i = 0; i < 16; ++i) {
            const double lin = u.data[i] - step.data[i];
            err = std::max(err, std::abs(moved.data[i] - lin));
        }
        CHECK(orthogonality_defect(moved) < 1e-10);
        // O(eps^2): each tenfold shrink of eps cuts the error ~100x.
        if (prev_err > 0.0) CHECK(err < prev_err * 0.05);
        prev_err = err;
    }
}

TEST_CASE("retract: orthogonal output for 100 random tangent steps") {
    Rng rng(7);
    for (int rep = 0; rep < 100; ++rep) {
        const Tensor u = qr_orthonormal(random_square(3, rng));
        const Tensor xi = riemannian_grad(u, random_square(3, rng));
        Tensor step = xi;
        for (double& x : step.data) x *= 0.1;
        CHECK(orthogonality_defect(retract(u, step)) < 1e-10);
    }
}

TEST_CASE("retract: rejects non-tangent steps") {
    Rng rng(8);
    const Tensor u = qr_orthonormal(random_square(3, rng));
    Tensor bad = u;  // step = u has symmetric step u^T = I
    CHECK_THROWS_AS(retract(u, bad), ArgumentError);
}

TEST_CASE("EncodeConfig: delta_w must divide 1") {
    EncodeConfig cfg;
    cfg.delta_w = 0.3;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
    cfg.delta_w = 0.05;
    cfg.validate();
    CHECK(cfg.num_steps() == 20);
    cfg.delta_w = 1.0;
    cfg.validate();
    CHECK(cfg.num_steps() == 1);
}

TEST_CASE("haar_random_init: orthogonality, determinism, first-moment sanity") {
    const TreeTopology topo = balanced_topology(8);
    const QTTNCircuit a = haar_random_init(topo, 2, 99);
    const QTTNCircuit b = haar_random_init(topo, 2, 99);
    const QTTNCircuit c = haar_random_init(topo, 2, 100);
    CHECK(a.w == 1.0);
    for (std::size_t i = 1; i < a.internal_unitaries.size(); ++i) {
        CHECK(orthogonality_defect(a.internal_unitaries[i]) < 1e-10);
        CHECK(a.internal_unitaries[i].data == b.internal_unitaries[i].data);
    }
    CHECK(orthogonality_defect(a.top_unitary) < 1e-10);
    CHECK(a.top_unitary.data == b.top_unitary.data);
    CHECK(a.internal_unitaries[1].data != c.internal_unitaries[1].data);

    // Mean entry over 1000 draws of one 4x4 node: zero within 3 standard errors
    // (entry variance 1/4 on O(4)).
    double mean = 0.0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const QTTNCircuit draw = haar_random_init(balanced_topology(4), 2, seed);
        for (double x : draw.internal_unitaries[1].data) mean += x;
    }
    mean /= 1000.0 * 16.0;
    const double three_se = 3.0 * std::sqrt(0.25 / (1000.0 * 16.0));
    CHECK(std::abs(mean) < three_se);
}

TEST_CASE("adiabatic_encode: degenerate schedule jumps straight to w = 1") {
    QFTNModel model = [&] {
        FTNClassifier m = FTNClassifier::create(2, 2, 1, 11);
        for (auto& ttn : m.ttns) ttn = canonicalize(ttn);
        return embed_ftn(m);
    }();
    const ImageDataset ds = oracles::separable_toy(2, 1, 8, 2, 12);
    EncodeConfig cfg;
    cfg.delta_w = 1.0;
    cfg.loss_threshold = std::numeric_limits<double>::infinity();
    cfg.max_epochs_per_step = 0;
    const QFTNModel before = model;
    const EncodeResult res = adiabatic_encode(model, ds, cfg, 1);
    CHECK(res.completed);
    CHECK(res.final_w == 1.0);
    CHECK(model.w() == 1.0);
    // One baseline row plus one jump row, no training epochs.
    REQUIRE(res.trajectory.rows.size() == 2);
    CHECK(res.trajectory.rows[0].w == 0.0);
    CHECK(res.trajectory.rows[1].w == 1.0);
    CHECK(res.trajectory.rows[1].epoch == 0);
    // No training: unitaries unchanged; w = 1 makes the circuit postselection-free.
    CHECK(model.circuits[0].top_unitary.data == before.circuits[0].top_unitary.data);
    const QftnEvalMetrics m = qftn_evaluate(model, ds, iota_indices(8), 1.0, 1);
    CHECK(std::abs(m.min_success_prob - 1.0) < 1e-9);
    // The jump typically costs loss; it must never crash.
    CHECK(std::isfinite(res.trajectory.rows[1].train_loss));
}

TEST_CASE("adiabatic_encode: toy pipeline completes and does not degrade accuracy") {
    FTNClassifier ftn = FTNClassifier::create(2, 2, 1, 13);
    const ImageDataset ds = oracles::separable_toy(2, 1, 16, 2, 14);
    TrainConfig tcfg;
    tcfg.learning_rate = 0.02;
    tcfg.epochs = 120;
    tcfg.batch_size = 8;
    train_ftn(ftn, ds, tcfg, 2);
    const EvalMetrics ftn_metrics = ftn_evaluate(ftn, ds, iota_indices(16), 2);
    REQUIRE(ftn_metrics.accuracy == 1.0);

    for (auto& ttn : ftn.ttns) ttn = canonicalize(ttn);
    QFTNModel model = embed_ftn(ftn);
    EncodeConfig cfg;
    cfg.delta_w = 0.1;
    cfg.max_epochs_per_step = 40;
    cfg.learning_rate = 0.05;
    cfg.batch_size = 8;
    const EncodeResult res = adiabatic_encode(model, ds, cfg, 2);
    CHECK(res.completed);
    CHECK(res.final_w == 1.0);

    const QftnEvalMetrics qm = qftn_evaluate(model, ds, iota_indices(16), 1.0, 2);
    CHECK(qm.accuracy >= ftn_metrics.accuracy);
    CHECK(std::abs(qm.min_success_prob - 1.0) < 1e-9);

    // Schedule exactness: w strictly increasing from delta_w to exactly 1.
    double prev_w = 0.0;
    double last_w = 0.0;
    for (const auto& row : res.trajectory.rows) {
        if (row.step == 0) continue;
        CHECK(row.w >= prev_w);
        if (row.epoch == 0) {
            CHECK(row.w > prev_w);
        }
        prev_w = row.w;
        last_w = row.w;
    }
    CHECK(last_w == 1.0);
}

TEST_CASE("adiabatic_encode: exhausted epoch budget returns a partial result") {
    QFTNModel model = [&] {
        FTNClassifier m = FTNClassifier::create(2, 2, 1, 15);
        for (auto& ttn : m.ttns) ttn = canonicalize(ttn);
        return embed_ftn(m);
    }();
    const ImageDataset ds = oracles::random_images(2, 1, 8, 2, 16);
    EncodeConfig cfg;
    cfg.delta_w = 0.5;
    cfg.loss_threshold = 1e-12;  // unreachable
    cfg.max_epochs_per_step = 1;
    cfg.learning_rate = 1e-4;
    const EncodeResult res = adiabatic_encode(model, ds, cfg, 1);
    CHECK_FALSE(res.completed);
    CHECK(res.final_w == 0.5);
    CHECK(model.w() == 0.5);
}

TEST_CASE("riemannian step decreases the batch loss for some small learning rate") {
    Rng seed_rng(17);
    int successes = 0;
    for (int inst = 0; inst < 10; ++inst) {
        QFTNModel model = [&] {
            FTNClassifier m = FTNClassifier::create(2, 2, 1, seed_rng.raw());
            for (auto& ttn : m.ttns) ttn = canonicalize(ttn);
            return embed_ftn(m);
        }();
        const ImageDataset ds = oracles::random_images(2, 1, 6, 2, seed_rng.raw());
        const auto idx = iota_indices(6);
        QftnGradients grads;
        const double before = qftn_loss_and_grad(model, ds, idx, 0.5, grads, 1);
        bool improved = false;
        for (const double lr : {1e-2, 1e-3, 1e-4}) {
            QFTNModel trial = model;
            for (std::size_t c = 0; c < 2; ++c) {
                for (std::size_t i = 1; i < trial.circuits[c].internal_unitaries.size(); ++i) {
                    Tensor xi = riemannian_grad(trial.circuits[c].internal_unitaries[i],
                                                grads.internal[c][i]);
                    for (double& x : xi.data) x *= lr;
                    trial.circuits[c].internal_unitaries[i] =
                        retract(trial.circuits[c].internal_unitaries[i], xi);
                }
                Tensor xi = riemannian_grad(trial.circuits[c].top_unitary, grads.top[c]);
                for (double& x : xi.data) x *= lr;
                trial.circuits[c].top_unitary = retract(trial.circuits[c].top_unitary, xi);
            }
            QftnGradients scratch;
            const double after = qftn_loss_and_grad(trial, ds, idx, 0.5, scratch, 1);
            if (after < before) {
                improved = true;
                break;
            }
        }
        if (improved) ++successes;
    }
    CHECK(successes == 10);
}

TEST_CASE("train_direct: requires w = 1 and freezes under zero learning rate") {
    QFTNModel model = haar_random_qftn(2, 2, 1, 18);
    const ImageDataset ds = oracles::separable_toy(2, 1, 8, 2, 19);

    QFTNModel not_ready = model;
    not_ready.set_w(0.5);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    CHECK_THROWS_AS(train_direct(not_ready, ds, cfg, 1), StateError);

    cfg.learning_rate = 0.0;
    const QFTNModel before = model;
    const DirectTrainResult res = train_direct(model, ds, cfg, 1);
    REQUIRE(res.rows.size() == 2);
    CHECK(res.rows[0].train_loss == res.rows[1].train_loss);
    CHECK(model.circuits[0].top_unitary.data == before.circuits[0].top_unitary.data);
    CHECK(res.rows[0].has_grad);
}

TEST_CASE("train_direct: toy model trains at w = 1") {
    QFTNModel model = haar_random_qftn(2, 2, 1, 20);
    const ImageDataset ds = oracles::separable_toy(2, 1, 16, 2, 21);
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.epochs = 60;
    cfg.batch_size = 8;
    cfg.seed = 22;
    const DirectTrainResult res = train_direct(model, ds, cfg, 2);
    CHECK(res.rows.back().train_loss < res.rows.front().train_loss);
    CHECK(res.rows.back().train_acc == 1.0);
    // Manifold preserved throughout.
    CHECK(max_orthogonality_defect(model) < 1e-9);
}

TEST_CASE("grad-norm probe: chi=8 Haar circuits start with far smaller first-unitary gradients") {
    // Small-scale version of the barren-plateau contrast (full size in acceptance).
    const std::size_t side = 4;  // N = 16
    const ImageDataset rgb = oracles::random_images(side, 3, 8, 2, 23);
    ImageDataset gray;
    gray.side = side;
    gray.channels = 1;
    gray.num_classes = 2;
    gray.labels = rgb.labels;
    for (const Image& img : rgb.images) {
        Image g;
        g.side = side;
        g.channels = 1;
        g.pix.resize(side * side);
        for (std::size_t p = 0; p < side * side; ++p) {
            g.pix[p] = (img.pix[3 * p] + img.pix[3 * p + 1] + img.pix[3 * p + 2]) / 3.0;
        }
        gray.images.push_back(std::move(g));
    }

    auto first_norm_mean = [&](std::size_t channels, const ImageDataset& ds) {
        QFTNModel model = haar_random_qftn(side, 2, channels, 24);
        QftnGradients grads;
        qftn_loss_and_grad(model, ds, iota_indices(8), 1.0, grads, 2);
        const std::size_t first = model.circuits[0].topology.bottom_begin();
        double mean = 0.0;
        for (std::size_t c = 0; c < 2; ++c) mean += grads.internal[c][first].frobenius_norm();
        return mean / 2.0;
    };
    const double chi2_norm = first_norm_mean(1, gray);
    const double chi8_norm = first_norm_mean(3, rgb);
    CHECK(chi8_norm < chi2_norm);
}
