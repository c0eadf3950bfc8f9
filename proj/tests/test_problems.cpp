#include <doctest.h>

#include "rosdhb/problems.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

using namespace rosdhb;

namespace {

const char* kTrainImages = "data/mnist/train-images-idx3-ubyte";
const char* kTrainLabels = "data/mnist/train-labels-idx1-ubyte";
const char* kTestImages = "data/mnist/t10k-images-idx3-ubyte";
const char* kTestLabels = "data/mnist/t10k-labels-idx1-ubyte";

Vector random_theta(int d, RngStream& rng) {
    Vector t(d);
    for (int l = 0; l < d; ++l) t[l] = rng.normal();
    return t;
}

// Central finite difference of worker i's loss.
Vector fd_gradient(const Objective& obj, int i, const Vector& theta, double eps) {
    Vector g(theta.size());
    for (int l = 0; l < theta.size(); ++l) {
        Vector tp = theta, tm = theta;
        tp[l] += eps;
        tm[l] -= eps;
        g[l] = (obj.worker_loss(i, tp) - obj.worker_loss(i, tm)) / (2 * eps);
    }
    return g;
}

} // namespace

TEST_CASE("shifted quadratic analytic metadata") {
    QuadraticFamilySpec spec;
    spec.kind = QuadraticKind::Shifted;
    spec.d = 6;
    spec.n = 5;
    spec.spread_g = 0.0;
    spec.base_curvature = 2.0;
    auto obj = make_quadratic(spec, RngStream(1));
    ObjectiveInfo info = obj->info();
    CHECK(*info.L == 2.0);
    CHECK(*info.G == 0.0);
    CHECK(*info.B == 0.0);

    // Homogeneous: all worker gradients identical.
    RngStream rng(2);
    Vector theta = random_theta(6, rng);
    Vector g0 = obj->full_gradient(0, theta);
    for (int i = 1; i < 5; ++i) CHECK((obj->full_gradient(i, theta) - g0).norm() == 0.0);

    spec.spread_g = 1.0;
    auto het = make_quadratic(spec, RngStream(1));
    CHECK(*het->info().G == 1.0);
    // G^2 = (1/n) sum ||H(c_i - c_bar)||^2 is exactly the gradient spread at
    // every theta for a shared Hessian; verify at two points.
    for (std::uint64_t s : {10u, 11u}) {
        RngStream r(s);
        Vector t = random_theta(6, r);
        Vector gh = het->honest_avg_gradient(t);
        double spread = 0.0;
        for (int i = 0; i < 5; ++i) spread += (het->full_gradient(i, t) - gh).squaredNorm();
        spread /= 5.0;
        CHECK(std::sqrt(spread) == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("scaled quadratic reduces to shifted when spread_b is zero") {
    QuadraticFamilySpec spec;
    spec.kind = QuadraticKind::Scaled;
    spec.d = 4;
    spec.n = 3;
    spec.spread_b = 0.0;
    auto obj = make_quadratic(spec, RngStream(3));
    CHECK(*obj->info().B == 0.0);

    spec.spread_b = 0.5;
    auto scaled = make_quadratic(spec, RngStream(3));
    CHECK(*scaled->info().B > 0.0);
    CHECK(*scaled->info().G == 0.0);

    spec.spread_b = 0.95;
    CHECK_THROWS_AS(make_quadratic(spec, RngStream(3)), ConfigError);
    spec.spread_b = 0.5;
    spec.base_curvature = 0.0;
    CHECK_THROWS_AS(make_quadratic(spec, RngStream(3)), ConfigError);
}

TEST_CASE("quadratic gradients match finite differences and the honest oracle") {
    for (QuadraticKind kind : {QuadraticKind::Shifted, QuadraticKind::Scaled}) {
        QuadraticFamilySpec spec;
        spec.kind = kind;
        spec.d = 5;
        spec.n = 4;
        spec.spread_g = kind == QuadraticKind::Shifted ? 2.0 : 0.0;
        spec.spread_b = kind == QuadraticKind::Scaled ? 0.4 : 0.0;
        auto obj = make_quadratic(spec, RngStream(7));
        RngStream rng(8);
        for (int rep = 0; rep < 20; ++rep) {
            Vector theta = random_theta(5, rng);
            int i = static_cast<int>(rng.uniform_int(4));
            Vector g = obj->full_gradient(i, theta);
            Vector fd = fd_gradient(*obj, i, theta, 1e-5);
            CHECK((g - fd).norm() <= 1e-5 * (1.0 + g.norm()));

            Vector avg = Vector::Zero(5);
            for (int w = 0; w < 4; ++w) avg += obj->full_gradient(w, theta);
            avg /= 4.0;
            CHECK((obj->honest_avg_gradient(theta) - avg).norm() < 1e-10);
        }
    }
}

TEST_CASE("estimate_dissimilarity recovers analytic (G, B)") {
    QuadraticFamilySpec spec;
    spec.d = 4;
    spec.n = 6;
    spec.spread_g = 1.0;
    auto obj = make_quadratic(spec, RngStream(11));
    RngStream rng(12);
    std::vector<Vector> probes;
    for (int j = 0; j < 12; ++j) probes.push_back(random_theta(4, rng));
    DissimilarityEstimate est = estimate_dissimilarity(*obj, probes);
    CHECK(std::abs(est.G_hat - 1.0) <= 1e-6 * 2.0);
    CHECK(est.B_hat <= 1e-6);

    // Homogeneous: both zero.
    spec.spread_g = 0.0;
    auto hom = make_quadratic(spec, RngStream(11));
    DissimilarityEstimate h = estimate_dissimilarity(*hom, probes);
    CHECK(h.G_hat <= 1e-8);
    CHECK(h.B_hat <= 1e-8);

    // Scaled family: the model v = G^2 + B^2 u is exact, residual ~ 0.
    QuadraticFamilySpec sspec;
    sspec.kind = QuadraticKind::Scaled;
    sspec.d = 4;
    sspec.n = 6;
    sspec.spread_b = 0.4;
    auto scaled = make_quadratic(sspec, RngStream(13));
    DissimilarityEstimate s = estimate_dissimilarity(*scaled, probes);
    CHECK(s.residual < 1e-8);
    CHECK(s.B_hat == doctest::Approx(*scaled->info().B).epsilon(1e-6));

    CHECK_THROWS_AS(estimate_dissimilarity(*obj, {probes[0]}), ConfigError);
}

TEST_CASE("estimate_smoothness recovers the top eigenvalue") {
    QuadraticFamilySpec spec;
    spec.d = 3;
    spec.n = 2;
    spec.base_curvature = 4.0;
    auto obj = make_quadratic(spec, RngStream(21));
    // Coordinate probes cover every axis of the diagonal Hessian.
    double L_hat = estimate_smoothness(*obj, RngStream(22), 3);
    CHECK(L_hat == doctest::Approx(4.0).epsilon(1e-8));
}

TEST_CASE("mnist idx loading validates headers and counts") {
    MnistDataset data = load_mnist_idx(kTrainImages, kTrainLabels, kTestImages, kTestLabels);
    CHECK(data.train_images.rows() == data.train_labels.size());
    CHECK(data.test_images.rows() == data.test_labels.size());
    CHECK(data.train_images.cols() == 784);
    CHECK(data.train_images.minCoeff() >= 0.0);
    CHECK(data.train_images.maxCoeff() <= 1.0);
    for (int lab : data.test_labels) {
        CHECK(lab >= 0);
        CHECK(lab <= 9);
    }

    // Wrong magic: labels file given where images are expected.
    CHECK_THROWS_WITH_AS(load_mnist_idx(kTrainLabels, kTrainLabels, kTestImages, kTestLabels),
                         doctest::Contains("expected image magic"), ParseError);

    // Truncated labels file.
    std::string trunc = "/tmp/rosdhb-truncated-labels";
    {
        std::ifstream in(kTrainLabels, std::ios::binary);
        std::vector<char> buf(64);
        in.read(buf.data(), 64);
        std::ofstream out(trunc, std::ios::binary);
        out.write(buf.data(), 64);
    }
    CHECK_THROWS_WITH_AS(load_mnist_idx(kTrainImages, trunc, kTestImages, kTestLabels),
                         doctest::Contains("byte offset"), ParseError);
    std::remove(trunc.c_str());
}

TEST_CASE("mlp parameter count and zero-theta predictions") {
    MlpModel model(15);
    CHECK(model.param_count() == 784 * 15 + 15 + 15 * 10 + 10);
    CHECK(model.param_count() == 11935);

    MnistDataset data = load_mnist_idx(kTrainImages, kTrainLabels, kTestImages, kTestLabels);
    // All-zero theta gives all-zero logits; argmax ties resolve to class 0,
    // so accuracy equals the frequency of label 0 in the test set.
    Vector zero = Vector::Zero(model.param_count());
    int zeros = 0;
    for (int lab : data.test_labels) zeros += (lab == 0);
    double expected = static_cast<double>(zeros) / static_cast<double>(data.test_labels.size());
    CHECK(test_accuracy(model, zero, data) == expected);
    CHECK(expected > 0.05);
    CHECK(expected < 0.2);
}

TEST_CASE("mlp backprop matches finite differences") {
    MlpModel model(6); // small hidden layer keeps the sweep cheap
    RngStream rng(31);
    Vector theta = model.init_theta(rng);
    Matrix images(5, 784);
    std::vector<int> labels = {0, 3, 7, 1, 9};
    RngStream ir(32);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 784; ++j) images(i, j) = ir.uniform();

    Vector grad;
    model.loss_and_gradient(theta, images, labels, &grad);
    CHECK(grad.size() == model.param_count());

    RngStream pick(33);
    double eps = 1e-6;
    for (int probe = 0; probe < 200; ++probe) {
        auto l = static_cast<int>(pick.uniform_int(static_cast<std::uint64_t>(grad.size())));
        Vector tp = theta, tm = theta;
        tp[l] += eps;
        tm[l] -= eps;
        double fd = (model.loss(tp, images, labels) - model.loss(tm, images, labels)) / (2 * eps);
        CHECK(std::abs(grad[l] - fd) <= 1e-4 * (1.0 + std::abs(fd)));
    }
}

TEST_CASE("mnist objective sharding and stochastic sampling") {
    auto data = std::make_shared<MnistDataset>(
        load_mnist_idx(kTrainImages, kTrainLabels, kTestImages, kTestLabels));
    auto obj_a = mnist_objective(data, 10, RngStream(5), 8);
    auto obj_b = mnist_objective(data, 10, RngStream(5), 8);
    CHECK(obj_a->num_workers() == 10);
    CHECK(obj_a->dim() == MlpModel(8).param_count());

    RngStream rng(6);
    MlpModel model(8);
    Vector theta = model.init_theta(rng);

    // Same construction seed: identical shards, so identical full gradients.
    for (int w : {0, 4, 9})
        CHECK((obj_a->full_gradient(w, theta) - obj_b->full_gradient(w, theta)).norm() == 0.0);

    // Same draw stream: identical stochastic batches.
    RngStream s1(7), s2(7);
    CHECK((obj_a->stochastic_gradient(2, theta, 60, s1) -
           obj_a->stochastic_gradient(2, theta, 60, s2))
              .norm() == 0.0);

    // Stochastic gradients are unbiased for the shard mean: average many
    // draws and compare against full_gradient on sampled coordinates.
    Vector full = obj_a->full_gradient(0, theta);
    Vector acc = Vector::Zero(full.size());
    RngStream sr(8);
    int draws = 400;
    for (int s = 0; s < draws; ++s) acc += obj_a->stochastic_gradient(0, theta, 60, sr);
    acc /= static_cast<double>(draws);
    // Loose 4-sigma style bound on the norm of the deviation.
    CHECK((acc - full).norm() <= 0.25 * (1.0 + full.norm()) + 0.05);

    // Honest average oracle consistency.
    Vector avg = Vector::Zero(full.size());
    for (int w = 0; w < 10; ++w) avg += obj_a->full_gradient(w, theta);
    avg /= 10.0;
    CHECK((obj_a->honest_avg_gradient(theta) - avg).norm() < 1e-10);

    CHECK_THROWS_AS(mnist_objective(data, 0, RngStream(1), 8), ConfigError);
}
