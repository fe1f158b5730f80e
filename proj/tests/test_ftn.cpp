#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "qforest/error.hpp"
#include "qforest/ftn.hpp"

using namespace qforest;

namespace {

std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

}  // namespace

TEST_CASE("measurement_map: worked examples") {
    const auto a = measurement_map({1.0, 0.0});
    CHECK(a[0] == 1.0);
    CHECK(a[1] == 0.0);
    const auto b = measurement_map({1.0, 1.0});
    CHECK(b[0] == doctest::Approx(0.5));
    CHECK(b[1] == doctest::Approx(0.5));
    const auto c = measurement_map({3.0, 4.0});
    CHECK(c[0] == doctest::Approx(0.36));
    CHECK(c[1] == doctest::Approx(0.64));
    CHECK_THROWS_AS(measurement_map({0.0, 0.0}), ArgumentError);
}

TEST_CASE("measurement_map: normalized and sign-invariant") {
    Rng rng(1);
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<double> y(4);
        for (double& v : y) v = rng.normal();
        const auto p = measurement_map(y);
        double sum = 0.0;
        for (double v : p) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
        std::vector<double> ny = y;
        for (double& v : ny) v = -v;
        const auto pn = measurement_map(ny);
        for (std::size_t i = 0; i < 4; ++i) CHECK(p[i] == pn[i]);
    }
}

TEST_CASE("create: parameter count matches the model formula plus bias") {
    const FTNClassifier m = FTNClassifier::create(4, 3, 1, 99);
    // (N-1) 2^{3k} d + 2^k d^2 = 15*8*3 + 2*9 = 378, bias adds d = 3.
    CHECK(m.param_count_without_bias() == 378);
    CHECK(m.param_count() == 381);
    CHECK(m.ttns.size() == 3);
    CHECK(m.shifts.size() == 3);

    const FTNClassifier rgb = FTNClassifier::create(4, 2, 3, 99);
    CHECK(rgb.chi() == 8);
    CHECK(rgb.param_count_without_bias() == 15 * 512 * 2 + 8 * 4);
}

TEST_CASE("default shifts alternate horizontal and vertical") {
    const auto s = default_shifts(5);
    CHECK(s[0] == std::array<int, 2>{0, 0});
    CHECK(s[1] == std::array<int, 2>{1, 0});
    CHECK(s[2] == std::array<int, 2>{0, 1});
    CHECK(s[3] == std::array<int, 2>{2, 0});
    CHECK(s[4] == std::array<int, 2>{0, 2});
}

TEST_CASE("ftn_forward: zero head gives zero logits") {
    FTNClassifier m = FTNClassifier::create(2, 2, 1, 5);
    m.head_w = Tensor(m.head_w.shape);
    m.head_b.assign(m.head_b.size(), 0.0);
    const ImageDataset ds = oracles::random_images(2, 1, 3, 2, 7);
    for (const Image& img : ds.images) {
        for (double logit : ftn_forward(m, img)) CHECK(logit == 0.0);
    }
}

TEST_CASE("ftn_forward: matches a dense-oracle pipeline on a toy model") {
    const std::size_t side = 2;  // N = 4
    FTNClassifier m = FTNClassifier::create(side, 2, 1, 21);
    const ImageDataset ds = oracles::random_images(side, 1, 5, 2, 22);
    for (const Image& img : ds.images) {
        const auto logits = ftn_forward(m, img);
        // Dense path: shift, leaf features, explicit W*Phi, psi, head.
        std::vector<double> concat;
        for (std::size_t t = 0; t < 2; ++t) {
            const auto leaves =
                extract_leaves(img, m.ttns[t].topology, m.shifts[t][0], m.shifts[t][1]);
            const auto y = oracles::dense_ttn_forward(m.ttns[t], leaves);
            const auto p = measurement_map(y);
            concat.insert(concat.end(), p.begin(), p.end());
        }
        for (std::size_t c = 0; c < 2; ++c) {
            double expect = m.head_b[c];
            for (std::size_t j = 0; j < concat.size(); ++j) {
                expect += m.head_w(c, j) * concat[j];
            }
            CHECK(logits[c] == doctest::Approx(expect).epsilon(1e-10));
        }
    }
}

TEST_CASE("ftn_forward: permuting TTNs with matching head columns leaves logits unchanged") {
    FTNClassifier m = FTNClassifier::create(2, 3, 1, 31);
    const Image img = oracles::random_images(2, 1, 1, 3, 32).images[0];
    const auto baseline = ftn_forward(m, img);

    FTNClassifier p = m;
    std::swap(p.ttns[0], p.ttns[2]);
    std::swap(p.shifts[0], p.shifts[2]);
    const std::size_t chi = m.chi();
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t j = 0; j < chi; ++j) {
            p.head_w(c, 0 * chi + j) = m.head_w(c, 2 * chi + j);
            p.head_w(c, 2 * chi + j) = m.head_w(c, 0 * chi + j);
        }
    }
    const auto permuted = ftn_forward(p, img);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(permuted[c] == doctest::Approx(baseline[c]).epsilon(1e-12));
    }
}

TEST_CASE("loss: all-equal logits give ln d exactly") {
    FTNClassifier m = FTNClassifier::create(2, 4, 1, 41);
    m.head_w = Tensor(m.head_w.shape);
    m.head_b.assign(4, 0.0);
    const ImageDataset ds = oracles::random_images(2, 1, 6, 4, 42);
    FtnGradients g;
    const double loss = ftn_loss_and_grad(m, ds, iota_indices(6), g, 1);
    CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("loss: saturated head drives the loss toward zero") {
    FTNClassifier m = FTNClassifier::create(2, 2, 1, 43);
    ImageDataset ds = oracles::random_images(2, 1, 1, 2, 44);
    ds.labels[0] = 1;
    // Bias strongly favoring the true class dominates any psi contribution.
    m.head_b = {-50.0, 50.0};
    FtnGradients g;
    const double loss = ftn_loss_and_grad(m, ds, iota_indices(1), g, 1);
    CHECK(loss < 1e-8);
    CHECK(loss >= 0.0);
}

TEST_CASE("loss: label out of range is a data error") {
    FTNClassifier m = FTNClassifier::create(2, 2, 1, 45);
    ImageDataset ds = oracles::random_images(2, 1, 2, 2, 46);
    ds.labels[1] = 7;
    FtnGradients g;
    CHECK_THROWS_AS(ftn_loss_and_grad(m, ds, iota_indices(2), g, 1), DataError);
}

TEST_CASE("loss_and_grad: finite-difference check on 50 random parameters") {
    FTNClassifier m = FTNClassifier::create(2, 2, 1, 47);
    const ImageDataset ds = oracles::random_images(2, 1, 4, 2, 48);
    const auto idx = iota_indices(4);
    FtnGradients grads;
    ftn_loss_and_grad(m, ds, idx, grads, 1);

    auto loss_of = [&]() {
        FtnGradients scratch;
        return ftn_loss_and_grad(m, ds, idx, scratch, 1);
    };

    Rng rng(49);
    int checked = 0;
    while (checked < 40) {
        const std::size_t t = rng.integer(2);
        const std::size_t node = rng.integer(3);
        const std::size_t entry = rng.integer(8);
        const double fd = oracles::central_diff(loss_of, m.ttns[t].node_tensors[node].data[entry]);
        CHECK(oracles::grad_close(grads.ttn[t][node].data[entry], fd));
        ++checked;
    }
    for (std::size_t j = 0; j < 8 && checked < 50; ++j, ++checked) {
        const double fd = oracles::central_diff(loss_of, m.head_w.data[j]);
        CHECK(oracles::grad_close(grads.head_w.data[j], fd));
    }
    const double fdb = oracles::central_diff(loss_of, m.head_b[0]);
    CHECK(oracles::grad_close(grads.head_b[0], fdb));
}

TEST_CASE("loss_and_grad: deterministic across thread counts on chunk-stable batches") {
    FTNClassifier m = FTNClassifier::create(2, 2, 1, 50);
    const ImageDataset ds = oracles::random_images(2, 1, 8, 2, 51);
    FtnGradients g1, g2;
    const double l1 = ftn_loss_and_grad(m, ds, iota_indices(8), g1, 2);
    const double l2 = ftn_loss_and_grad(m, ds, iota_indices(8), g2, 2);
    CHECK(l1 == l2);
    CHECK(g1.head_w.data == g2.head_w.data);
}

TEST_CASE("predict: argmax with lowest-index tie break, consistent with forward") {
    FTNClassifier m = FTNClassifier::create(2, 3, 1, 52);
    const ImageDataset ds = oracles::random_images(2, 1, 10, 3, 53);
    for (const Image& img : ds.images) {
        const auto logits = ftn_forward(m, img);
        const int pred = predict(m, img);
        for (double l : logits) CHECK(logits[static_cast<std::size_t>(pred)] >= l);
        // Shift invariance of the argmax.
        CHECK(pred == static_cast<int>(std::distance(
                          logits.begin(), std::max_element(logits.begin(), logits.end()))));
    }
    // Tie rule: zero head makes every logit equal; class 0 wins.
    FTNClassifier z = FTNClassifier::create(2, 3, 1, 54);
    z.head_w = Tensor(z.head_w.shape);
    z.head_b.assign(3, 0.0);
    CHECK(predict(z, ds.images[0]) == 0);
}

TEST_CASE("train_ftn: zero learning rate freezes parameters and loss") {
    FTNClassifier m = FTNClassifier::create(2, 2, 1, 55);
    const FTNClassifier before = m;
    const ImageDataset ds = oracles::separable_toy(2, 1, 12, 2, 56);
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    const auto log = train_ftn(m, ds, cfg, 1);
    REQUIRE(log.size() == 3);
    CHECK(log[0].train_loss == log[2].train_loss);
    for (std::size_t t = 0; t < 2; ++t) {
        for (std::size_t n = 0; n < 3; ++n) {
            CHECK(m.ttns[t].node_tensors[n].data == before.ttns[t].node_tensors[n].data);
        }
    }
    CHECK(m.head_w.data == before.head_w.data);
}

TEST_CASE("train_ftn: separable toy set reaches 100% train accuracy") {
    FTNClassifier m = FTNClassifier::create(2, 2, 1, 57);
    const ImageDataset ds = oracles::separable_toy(2, 1, 24, 2, 58);
    TrainConfig cfg;
    cfg.learning_rate = 0.02;
    cfg.epochs = 200;
    cfg.batch_size = 8;
    cfg.seed = 59;
    const auto log = train_ftn(m, ds, cfg, 2);
    CHECK(log.back().train_acc == 1.0);

    // Loss is non-increasing over epochs within a 5% stochastic tolerance band.
    for (std::size_t e = 1; e < log.size(); ++e) {
        CHECK(log[e].train_loss <= log[e - 1].train_loss * 1.05 + 1e-9);
    }
}

TEST_CASE("ftn_evaluate matches the training log row") {
    FTNClassifier m = FTNClassifier::create(2, 2, 1, 60);
    const ImageDataset ds = oracles::separable_toy(2, 1, 10, 2, 61);
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.epochs = 2;
    cfg.batch_size = 5;
    const auto log = train_ftn(m, ds, cfg, 1);
    const EvalMetrics ev = ftn_evaluate(m, ds, iota_indices(10), 1);
    CHECK(ev.loss == doctest::Approx(log.back().train_loss).epsilon(1e-12));
    CHECK(ev.accuracy == log.back().train_acc);
}
