#include <doctest.h>

#include "rosdhb/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

using namespace rosdhb;

namespace {

Vector vec(std::initializer_list<double> vals) {
    Vector v(static_cast<int>(vals.size()));
    int i = 0;
    for (double x : vals) v[i++] = x;
    return v;
}

// Brute-force sort/trim/average oracle for cwtm.
Vector cwtm_oracle(const std::vector<Vector>& xs, int f) {
    int n = static_cast<int>(xs.size());
    int d = static_cast<int>(xs[0].size());
    Vector out(d);
    for (int l = 0; l < d; ++l) {
        std::vector<double> col;
        for (const auto& x : xs) col.push_back(x[l]);
        std::sort(col.begin(), col.end());
        double s = 0.0;
        for (int i = f; i < n - f; ++i) s += col[i];
        out[l] = s / (n - 2 * f);
    }
    return out;
}

double geomed_objective(const Vector& z, const std::vector<Vector>& xs) {
    double s = 0.0;
    for (const auto& x : xs) s += (z - x).norm();
    return s;
}

} // namespace

TEST_CASE("mean") {
    CHECK(mean({vec({1, 1}), vec({3, 3})}) == vec({2, 2}));
    CHECK(mean({vec({5})}) == vec({5}));
    CHECK(mean({vec({1, 0}), vec({0, 1}), vec({-1, -1})}).norm() == 0.0);
    CHECK_THROWS_AS(mean({}), Error);
}

TEST_CASE("cwtm hand examples") {
    CHECK(cwtm({vec({1}), vec({2}), vec({100})}, 1) == vec({2}));
    CHECK(cwtm({vec({-10}), vec({1}), vec({2}), vec({3}), vec({50})}, 2) == vec({2}));
    std::vector<Vector> xs = {vec({1, 4}), vec({2, -1}), vec({7, 0})};
    CHECK(cwtm(xs, 0) == mean(xs));
}

TEST_CASE("cwtm breakdown point") {
    std::vector<Vector> xs = {vec({1}), vec({2}), vec({3}), vec({4})};
    CHECK_THROWS_WITH_AS(cwtm(xs, 2), doctest::Contains("breakdown point exceeded"), BreakdownError);
}

TEST_CASE("cwtm matches the brute-force oracle on random instances") {
    RngStream rng(41);
    for (int trial = 0; trial < 300; ++trial) {
        int n = 1 + static_cast<int>(rng.uniform_int(12));
        int d = 1 + static_cast<int>(rng.uniform_int(8));
        int f = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>((n + 1) / 2)));
        std::vector<Vector> xs;
        for (int i = 0; i < n; ++i) {
            Vector x(d);
            for (int l = 0; l < d; ++l) x[l] = rng.normal();
            xs.push_back(x);
        }
        CHECK(cwtm(xs, f) == cwtm_oracle(xs, f));
    }
}

TEST_CASE("geomed basic cases") {
    CHECK(std::abs(geomed({vec({0}), vec({0}), vec({10})})[0]) < 1e-8);
    Vector p = vec({2.5, -1});
    CHECK((geomed({p, p, p, p}) - p).norm() < 1e-10);
}

TEST_CASE("geomed against a planar grid search") {
    std::vector<Vector> xs = {vec({0, 0}), vec({4, 0}), vec({0, 4})};
    Vector gm = geomed(xs);
    double step = 0.01;
    double best = 1e300;
    Vector best_z(2);
    for (double a = -1.0; a <= 5.0; a += step)
        for (double b = -1.0; b <= 5.0; b += step) {
            Vector z = vec({a, b});
            double obj = geomed_objective(z, xs);
            if (obj < best) {
                best = obj;
                best_z = z;
            }
        }
    CHECK((gm - best_z).lpNorm<Eigen::Infinity>() <= 2.0 * step);
    CHECK(geomed_objective(gm, xs) <= best + 1e-6);
}

TEST_CASE("geomed objective never exceeds the best input point") {
    RngStream rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Vector> xs;
        int n = 3 + static_cast<int>(rng.uniform_int(8));
        for (int i = 0; i < n; ++i) {
            Vector x(3);
            for (int l = 0; l < 3; ++l) x[l] = 5.0 * rng.normal();
            xs.push_back(x);
        }
        Vector gm = geomed(xs);
        double obj = geomed_objective(gm, xs);
        for (const auto& x : xs) CHECK(obj <= geomed_objective(x, xs) + 1e-8);
    }
}

TEST_CASE("nnm hand examples") {
    std::vector<Vector> xs = {vec({0}), vec({1}), vec({100})};
    auto out0 = nnm(xs, 0);
    Vector m = mean(xs);
    for (const auto& o : out0) CHECK((o - m).norm() == 0.0);

    auto out1 = nnm(xs, 1);
    CHECK(out1[0][0] == 0.5);

    std::vector<Vector> eq = {vec({3, 3}), vec({3, 3}), vec({3, 3})};
    for (const auto& o : nnm(eq, 1)) CHECK(o == vec({3, 3}));

    CHECK_THROWS_AS(nnm(xs, 3), Error);
}

TEST_CASE("aggregate composes pre and base") {
    CHECK(aggregate({AggBase::Mean, AggPre::None, 0}, {vec({2}), vec({4})}) == vec({3}));
    CHECK(aggregate({AggBase::Cwtm, AggPre::None, 1}, {vec({1}), vec({2}), vec({100})}) ==
          vec({2}));
    // Consensus: all inputs equal v.
    Vector v = vec({1.5, -2});
    std::vector<Vector> same(7, v);
    CHECK((aggregate({AggBase::Cwtm, AggPre::Nnm, 2}, same) - v).norm() == 0.0);
    CHECK((aggregate({AggBase::Geomed, AggPre::Nnm, 2}, same) - v).norm() < 1e-10);
}

TEST_CASE("aggregators are permutation invariant and translation equivariant") {
    RngStream rng(23);
    std::vector<Vector> xs;
    for (int i = 0; i < 9; ++i) {
        Vector x(4);
        for (int l = 0; l < 4; ++l) x[l] = rng.normal();
        xs.push_back(x);
    }
    std::vector<Vector> perm = xs;
    std::reverse(perm.begin(), perm.end());
    Vector c = vec({10, -3, 0.5, 2});
    std::vector<Vector> shifted;
    for (const auto& x : xs) shifted.push_back(x + c);

    for (AggBase base : {AggBase::Mean, AggBase::Cwtm, AggBase::Geomed}) {
        AggregatorSpec spec{base, AggPre::None, 2};
        Vector a = aggregate(spec, xs);
        // cwtm sorts per coordinate so the sum order is permutation-fixed;
        // mean accumulates in input order, allowing one-ulp reassociation.
        double tol = base == AggBase::Geomed ? 1e-9 : (base == AggBase::Mean ? 1e-14 : 0.0);
        CHECK((aggregate(spec, perm) - a).norm() <= tol);
        CHECK((aggregate(spec, shifted) - (a + c)).norm() <= 10.0 * 1e-10 + tol);
    }
}

TEST_CASE("consensus survives contamination under nnm+cwtm") {
    Vector v = vec({1, 2, 3});
    std::vector<Vector> xs(10, v);
    xs[8] = vec({50, -50, 0});
    xs[9] = vec({-9, 9, 99});
    Vector out = aggregate({AggBase::Cwtm, AggPre::Nnm, 2}, xs);
    // Max deviation of contaminated inputs after NNM: outliers can pull a
    // mixed vector at most by their share of the 8-neighbor average.
    double max_dev = 0.0;
    for (const auto& m : nnm(xs, 2)) max_dev = std::max(max_dev, (m - v).norm());
    CHECK((out - v).norm() <= max_dev + 1e-12);
}

TEST_CASE("audit_kappa degenerate and adversarial behavior") {
    AggregatorSpec spec{AggBase::Cwtm, AggPre::Nnm, 3};
    KappaAudit audit = audit_kappa(spec, 10, 3, 5, 400, RngStream(5, 9));
    CHECK(audit.kappa_hat >= 0.95 * kappa_lower_bound(10, 3));
    CHECK(std::isfinite(audit.kappa_hat));

    // Mean is not robust: one far outlier drives the ratio unboundedly.
    KappaAudit mean_audit = audit_kappa({AggBase::Mean, AggPre::None, 0}, 3, 1, 3, 400,
                                        RngStream(6, 9));
    CHECK(mean_audit.kappa_hat > 100.0);
}

TEST_CASE("kappa_lower_bound") {
    CHECK(kappa_lower_bound(10, 3) == 0.75);
    CHECK(kappa_lower_bound(10, 0) == 0.0);
    CHECK(kappa_lower_bound(19, 9) == 9.0);
    CHECK_THROWS_AS(kappa_lower_bound(4, 2), Error);
}
