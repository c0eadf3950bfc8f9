#include "rosdhb/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rosdhb {

namespace {

void require_same_dims(const std::vector<Vector>& xs, const char* who) {
    if (xs.empty()) throw Error(std::string(who) + ": empty input");
    for (const auto& x : xs)
        if (x.size() != xs[0].size()) throw DimensionError(std::string(who) + ": mixed dimensions");
}

Vector coordinate_median(const std::vector<Vector>& xs) {
    auto n = static_cast<int>(xs.size());
    auto d = static_cast<int>(xs[0].size());
    Vector med(d);
    std::vector<double> col(n);
    for (int l = 0; l < d; ++l) {
        for (int i = 0; i < n; ++i) col[i] = xs[i][l];
        std::nth_element(col.begin(), col.begin() + n / 2, col.end());
        double hi = col[n / 2];
        if (n % 2 == 1) {
            med[l] = hi;
        } else {
            double lo = *std::max_element(col.begin(), col.begin() + n / 2);
            med[l] = 0.5 * (lo + hi);
        }
    }
    return med;
}

} // namespace

std::string AggregatorSpec::name() const {
    std::string s;
    switch (base) {
        case AggBase::Mean: s = "mean"; break;
        case AggBase::Cwtm: s = "cwtm"; break;
        case AggBase::Geomed: s = "geomed"; break;
    }
    if (pre == AggPre::Nnm) s += "+nnm";
    return s;
}

Vector mean(const std::vector<Vector>& xs) {
    require_same_dims(xs, "mean");
    Vector acc = Vector::Zero(xs[0].size());
    for (const auto& x : xs) acc += x;
    return acc / static_cast<double>(xs.size());
}

Vector cwtm(const std::vector<Vector>& xs, int f) {
    require_same_dims(xs, "cwtm");
    auto n = static_cast<int>(xs.size());
    if (f < 0) throw ConfigError("cwtm: f must be nonnegative");
    if (n <= 2 * f) throw BreakdownError("cwtm: breakdown point exceeded (n <= 2f)");
    auto d = static_cast<int>(xs[0].size());
    Vector out(d);
    std::vector<double> col(n);
    for (int l = 0; l < d; ++l) {
        for (int i = 0; i < n; ++i) col[i] = xs[i][l];
        std::sort(col.begin(), col.end());
        double s = 0.0;
        for (int i = f; i < n - f; ++i) s += col[i];
        out[l] = s / static_cast<double>(n - 2 * f);
    }
    return out;
}

Vector geomed(const std::vector<Vector>& xs, double tol, int max_iter) {
    require_same_dims(xs, "geomed");
    auto n = static_cast<int>(xs.size());
    if (n == 1) return xs[0];

    Vector z = coordinate_median(xs);
    constexpr double kSingular = 1e-12;
    for (int it = 0; it < max_iter; ++it) {
        // Vardi-Zhang step: handle iterates coinciding with a data point.
        Vector tnum = Vector::Zero(z.size());
        double tden = 0.0;
        int multiplicity = 0;
        Vector pull = Vector::Zero(z.size()); // resultant of unit directions
        for (int i = 0; i < n; ++i) {
            double dist = (xs[i] - z).norm();
            if (dist < kSingular) {
                ++multiplicity;
            } else {
                tnum += xs[i] / dist;
                tden += 1.0 / dist;
                pull += (xs[i] - z) / dist;
            }
        }
        if (tden == 0.0) return z; // all points coincide with z
        Vector t = tnum / tden;
        Vector znew;
        if (multiplicity == 0) {
            znew = t;
        } else {
            double r = pull.norm();
            if (r <= multiplicity) return z; // stationary at a data point
            double eta = static_cast<double>(multiplicity) / r;
            znew = (1.0 - eta) * t + eta * z;
        }
        double step = (znew - z).norm();
        z = znew;
        if (step < tol) break;
    }
    // Safeguard: the optimum can sit at a data point, where Weiszfeld
    // converges slowly. Return the best candidate among the final iterate
    // and the inputs so the objective never exceeds any input point's.
    auto objective = [&](const Vector& c) {
        double s = 0.0;
        for (const auto& x : xs) s += (x - c).norm();
        return s;
    };
    double best = objective(z);
    for (const auto& x : xs) {
        double o = objective(x);
        if (o < best) {
            best = o;
            z = x;
        }
    }
    return z;
}

std::vector<Vector> nnm(const std::vector<Vector>& xs, int f) {
    require_same_dims(xs, "nnm");
    auto n = static_cast<int>(xs.size());
    if (f < 0) throw ConfigError("nnm: f must be nonnegative");
    if (n <= f) throw BreakdownError("nnm: n must exceed f");
    int keep = n - f;
    std::vector<Vector> out(n);
    std::vector<std::pair<double, int>> dist(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) dist[j] = {(xs[j] - xs[i]).squaredNorm(), j};
        // ties broken by lower index (pair ordering)
        std::partial_sort(dist.begin(), dist.begin() + keep, dist.end());
        Vector acc = Vector::Zero(xs[0].size());
        for (int j = 0; j < keep; ++j) acc += xs[dist[j].second];
        out[i] = acc / static_cast<double>(keep);
    }
    return out;
}

Vector aggregate(const AggregatorSpec& spec, const std::vector<Vector>& xs) {
    const std::vector<Vector>* input = &xs;
    std::vector<Vector> mixed;
    if (spec.pre == AggPre::Nnm) {
        mixed = nnm(xs, spec.f);
        input = &mixed;
    }
    switch (spec.base) {
        case AggBase::Mean: return mean(*input);
        case AggBase::Cwtm: return cwtm(*input, spec.f);
        case AggBase::Geomed: return geomed(*input);
    }
    throw Error("aggregate: unknown base");
}

namespace {

// Definition-2 ratio maximized over honest subsets of size n - f.
double def2_ratio(const AggregatorSpec& spec, const std::vector<Vector>& xs, int f,
                  RngStream& rng, bool* capped) {
    auto n = static_cast<int>(xs.size());
    int s = n - f;
    Vector agg = aggregate(spec, xs);

    auto ratio_for = [&](const std::vector<int>& subset) {
        Vector xb = Vector::Zero(xs[0].size());
        for (int i : subset) xb += xs[i];
        xb /= static_cast<double>(s);
        double denom = 0.0;
        for (int i : subset) denom += (xs[i] - xb).squaredNorm();
        denom /= static_cast<double>(s);
        if (denom < 1e-15) return -1.0; // skip: zero honest variance
        return (agg - xb).squaredNorm() / denom;
    };

    // C(n, f) subsets of size n - f; enumerate if small, sample otherwise.
    double c = 1.0;
    for (int i = 0; i < f; ++i) c = c * (n - i) / (i + 1);
    double best = 0.0;
    if (c <= 200.0) {
        std::vector<int> comb(s);
        std::iota(comb.begin(), comb.end(), 0);
        while (true) {
            best = std::max(best, ratio_for(comb));
            int j = s - 1;
            while (j >= 0 && comb[j] == n - s + j) --j;
            if (j < 0) break;
            ++comb[j];
            for (int l = j + 1; l < s; ++l) comb[l] = comb[l - 1] + 1;
        }
    } else {
        if (capped) *capped = true;
        std::vector<int> pool(n);
        for (int t = 0; t < 200; ++t) {
            std::iota(pool.begin(), pool.end(), 0);
            for (int j = 0; j < s; ++j) {
                auto r = j + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n - j)));
                std::swap(pool[j], pool[r]);
            }
            best = std::max(best, ratio_for(std::vector<int>(pool.begin(), pool.begin() + s)));
        }
    }
    return best;
}

} // namespace

KappaAudit audit_kappa(const AggregatorSpec& spec, int n, int f, int d, int trials,
                       RngStream rng) {
    if (n <= 2 * f) throw BreakdownError("audit_kappa: breakdown point exceeded (n <= 2f)");
    if (n < 1 || d < 1 || trials < 1) throw ConfigError("audit_kappa: bad parameters");

    KappaAudit audit;
    audit.trials = trials;

    auto consider = [&](const std::vector<Vector>& xs, const std::string& tag, RngStream& r) {
        double ratio = def2_ratio(spec, xs, f, r, &audit.subset_capped);
        if (ratio > audit.kappa_hat) {
            audit.kappa_hat = ratio;
            audit.worst_case = tag;
        }
    };

    for (int t = 0; t < trials; ++t) {
        RngStream r = rng.derive("audit-trial-" + std::to_string(t));
        std::vector<Vector> xs(n);
        int family = t % 5;
        switch (family) {
            case 0: {
                // Gaussian cloud
                for (auto& x : xs) {
                    x.resize(d);
                    for (int l = 0; l < d; ++l) x[l] = r.normal();
                }
                consider(xs, "gaussian", r);
                break;
            }
            case 1: {
                // tight cluster + up to f far outliers
                double radius = std::pow(10.0, 1 + (t / 5) % 3); // 10, 100, 1000
                Vector dir(d);
                for (int l = 0; l < d; ++l) dir[l] = r.normal();
                dir.normalize();
                int m = std::max(1, f);
                for (int i = 0; i < n; ++i) {
                    xs[i].resize(d);
                    for (int l = 0; l < d; ++l) xs[i][l] = 0.01 * r.normal();
                    if (i >= n - m) xs[i] += radius * dir;
                }
                consider(xs, "far-outlier", r);
                break;
            }
            case 2: {
                // collinear split: n - f at 0, f at h*e (the f/(n-2f) construction)
                double h = ((t / 5) % 2 == 0) ? 1.0 : 10.0;
                Vector dir = Vector::Zero(d);
                dir[static_cast<int>(r.uniform_int(d))] = 1.0;
                for (int i = 0; i < n; ++i)
                    xs[i] = (i >= n - std::max(1, f)) ? Vector(h * dir) : Vector(Vector::Zero(d));
                consider(xs, "collinear-split", r);
                break;
            }
            case 3: {
                // two Gaussian clusters with varying gap
                double gap = 1.0 + 4.0 * r.uniform();
                Vector dir(d);
                for (int l = 0; l < d; ++l) dir[l] = r.normal();
                dir.normalize();
                int m = 1 + static_cast<int>(r.uniform_int(std::max(1, n / 2)));
                for (int i = 0; i < n; ++i) {
                    xs[i].resize(d);
                    for (int l = 0; l < d; ++l) xs[i][l] = 0.3 * r.normal();
                    if (i >= n - m) xs[i] += gap * dir;
                }
                consider(xs, "two-cluster", r);
                break;
            }
            case 4: {
                // ALIE-shaped: honest cloud, f colluders at mu - z*sigma per coordinate
                double z = 0.5 + 0.5 * ((t / 5) % 4);
                int honest = n - std::max(1, f);
                Vector mu(d), sd(d);
                for (int l = 0; l < d; ++l) {
                    mu[l] = r.normal();
                    sd[l] = 0.2 + r.uniform();
                }
                for (int i = 0; i < honest; ++i) {
                    xs[i].resize(d);
                    for (int l = 0; l < d; ++l) xs[i][l] = mu[l] + sd[l] * r.normal();
                }
                Vector emp_mu = Vector::Zero(d), emp_var = Vector::Zero(d);
                for (int i = 0; i < honest; ++i) emp_mu += xs[i];
                emp_mu /= honest;
                for (int i = 0; i < honest; ++i)
                    emp_var += (xs[i] - emp_mu).array().square().matrix();
                emp_var /= honest;
                Vector byz = emp_mu - z * emp_var.array().sqrt().matrix();
                for (int i = honest; i < n; ++i) xs[i] = byz;
                consider(xs, "alie-shaped", r);
                break;
            }
        }
    }
    return audit;
}

double kappa_lower_bound(int n, int f) {
    if (n <= 2 * f) throw BreakdownError("kappa_lower_bound: requires n > 2f");
    return static_cast<double>(f) / static_cast<double>(n - 2 * f);
}

} // namespace rosdhb
