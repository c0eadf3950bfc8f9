#pragma once

#include "rosdhb/core.hpp"

#include <string>
#include <vector>

namespace rosdhb {

enum class AggBase { Mean, Cwtm, Geomed };
enum class AggPre { None, Nnm };

struct AggregatorSpec {
    AggBase base = AggBase::Mean;
    AggPre pre = AggPre::None;
    int f = 0; // tolerated Byzantine count

    std::string name() const;
};

/// Result of the empirical Definition-2 robustness audit.
struct KappaAudit {
    double kappa_hat = 0.0;
    int trials = 0;
    std::string worst_case; // tag of the generator family achieving kappa_hat
    bool subset_capped = false; // true if the 200-subset cap was hit
};

Vector mean(const std::vector<Vector>& xs);

/// Coordinate-wise trimmed mean: per coordinate, drop the f smallest and f
/// largest of the n values and average the remaining n - 2f.
Vector cwtm(const std::vector<Vector>& xs, int f);

/// Geometric median via (modified) Weiszfeld iteration, started at the
/// coordinate-wise median.
Vector geomed(const std::vector<Vector>& xs, double tol = 1e-10, int max_iter = 200);

/// Nearest neighbor mixing: output i is the mean of the n - f inputs nearest
/// to input i (including itself); ties broken by lower index.
std::vector<Vector> nnm(const std::vector<Vector>& xs, int f);

Vector aggregate(const AggregatorSpec& spec, const std::vector<Vector>& xs);

/// Empirically audit the Definition-2 robustness coefficient of `spec` by
/// maximizing the ratio ||F(x) - mean_S||^2 / var_S over generated vector
/// sets and honest subsets S of size n - f.
KappaAudit audit_kappa(const AggregatorSpec& spec, int n, int f, int d, int trials,
                       RngStream rng);

/// f / (n - 2f): no rule can beat this.
double kappa_lower_bound(int n, int f);

} // namespace rosdhb
