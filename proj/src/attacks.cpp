#include "rosdhb/attacks.hpp"

#include <algorithm>
#include <cmath>

namespace rosdhb {

namespace {

// Acklam's rational approximation of the standard normal quantile.
double norm_quantile(double p) {
    if (p <= 0.0) return -std::numeric_limits<double>::infinity();
    if (p >= 1.0) return std::numeric_limits<double>::infinity();
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double dd[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1 - plow;
    double q, r;
    if (p < plow) {
        q = std::sqrt(-2 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1);
    }
    if (p > phigh) {
        q = std::sqrt(-2 * std::log(1 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1);
    }
    q = p - 0.5;
    r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

// Per-coordinate mean and population std of honest payload values at
// coordinate l; considers only payloads whose mask contains l.
void honest_stats_at(const std::vector<CompressedGradient>& payloads, int l, double* mu,
                     double* sigma) {
    double s = 0.0, s2 = 0.0;
    int cnt = 0;
    for (const auto& p : payloads) {
        auto it = std::lower_bound(p.mask.indices.begin(), p.mask.indices.end(), l);
        if (it != p.mask.indices.end() && *it == l) {
            double v = p.values[static_cast<int>(it - p.mask.indices.begin())];
            s += v;
            s2 += v * v;
            ++cnt;
        }
    }
    if (cnt == 0) {
        *mu = 0.0;
        *sigma = 0.0;
        return;
    }
    *mu = s / cnt;
    double var = s2 / cnt - (*mu) * (*mu);
    *sigma = std::sqrt(std::max(0.0, var));
}

} // namespace

double alie_quantile(int n, int f) {
    int s = n / 2 + 1 - f;
    double num = static_cast<double>(n - f - s);
    double den = static_cast<double>(n - f);
    if (den <= 0) return 0.0;
    double p = num / den;
    if (p <= 0.5) return 0.0; // clamp to z >= 0
    return norm_quantile(p);
}

CompressedGradient craft_payload(const AttackSpec& spec, const AttackContext& ctx,
                                 int /*byz_index*/, RngStream& rng) {
    if (ctx.honest_payloads.empty()) throw Error("craft_payload: no honest payloads");

    CompressedGradient out;
    if (ctx.mask.has_value()) {
        out.mask = *ctx.mask; // server only accepts k values for the broadcast mask
    } else {
        // Local mode: the adversary picks its own mask.
        const auto& ref = ctx.honest_payloads[0].mask;
        out.mask = sample_mask(rng, ref.d, ref.k);
    }
    int k = out.mask.k;
    out.values.resize(k);

    if (spec.z_auto)
        throw ConfigError("craft_payload: resolve z_auto via alie_quantile(n, f) first");
    double z = spec.z;

    for (int j = 0; j < k; ++j) {
        int l = out.mask.indices[j];
        double mu, sigma;
        honest_stats_at(ctx.honest_payloads, l, &mu, &sigma);
        switch (spec.kind) {
            case AttackKind::Alie: out.values[j] = mu - z * sigma; break;
            case AttackKind::SignFlip: out.values[j] = -spec.scale * mu; break;
            case AttackKind::LargeValue: out.values[j] = spec.scale * 1e6; break;
            case AttackKind::Zero: out.values[j] = 0.0; break;
        }
    }
    return out;
}

} // namespace rosdhb
