#include "rosdhb/compression.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rosdhb {

void SparseMask::validate() const {
    if (k < 1 || k > d) throw Error("SparseMask: k out of range");
    if (static_cast<int>(indices.size()) != k) throw Error("SparseMask: index count != k");
    for (int j = 0; j < k; ++j) {
        if (indices[j] < 0 || indices[j] >= d) throw Error("SparseMask: index out of [0, d)");
        if (j > 0 && indices[j] <= indices[j - 1])
            throw Error("SparseMask: indices not strictly increasing");
    }
}

int resolve_k(double ratio, int d) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("resolve_k: ratio must be in (0, 1]");
    if (d < 1) throw ConfigError("resolve_k: d must be positive");
    auto k = static_cast<int>(std::llround(ratio * d));
    return std::clamp(k, 1, d);
}

SparseMask sample_mask(RngStream& rng, int d, int k) {
    if (k < 1 || k > d) throw Error("sample_mask: need 1 <= k <= d");
    // Partial Fisher-Yates: the first k slots hold a uniform k-subset.
    std::vector<int> pool(d);
    std::iota(pool.begin(), pool.end(), 0);
    for (int j = 0; j < k; ++j) {
        auto r = j + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(d - j)));
        std::swap(pool[j], pool[r]);
    }
    SparseMask m{d, k, std::vector<int>(pool.begin(), pool.begin() + k)};
    std::sort(m.indices.begin(), m.indices.end());
    return m;
}

CompressedGradient compress(const Vector& g, const SparseMask& mask) {
    mask.validate();
    if (g.size() != mask.d) throw DimensionError("compress: gradient/mask dimension mismatch");
    CompressedGradient c;
    c.mask = mask;
    c.values.resize(mask.k);
    for (int j = 0; j < mask.k; ++j) c.values[j] = g[mask.indices[j]];
    return c;
}

Vector reconstruct(const CompressedGradient& c) {
    c.mask.validate();
    if (c.values.size() != c.mask.k) throw DimensionError("reconstruct: values/mask mismatch");
    double scale = static_cast<double>(c.mask.d) / static_cast<double>(c.mask.k);
    Vector g = Vector::Zero(c.mask.d);
    for (int j = 0; j < c.mask.k; ++j) g[c.mask.indices[j]] = scale * c.values[j];
    return g;
}

CompressionMoments exact_moments(const Vector& g, int k) {
    int d = static_cast<int>(g.size());
    if (d > 12) throw Error("exact_moments: enumeration guarded to d <= 12");
    if (k < 1 || k > d) throw Error("exact_moments: need 1 <= k <= d");

    // Iterate all C(d, k) index subsets in lexicographic order.
    std::vector<int> comb(k);
    std::iota(comb.begin(), comb.end(), 0);
    Vector mean = Vector::Zero(d);
    double var = 0.0;
    long count = 0;
    double scale = static_cast<double>(d) / k;
    while (true) {
        Vector gt = Vector::Zero(d);
        for (int idx : comb) gt[idx] = scale * g[idx];
        mean += gt;
        var += (gt - g).squaredNorm();
        ++count;
        // next combination
        int j = k - 1;
        while (j >= 0 && comb[j] == d - k + j) --j;
        if (j < 0) break;
        ++comb[j];
        for (int l = j + 1; l < k; ++l) comb[l] = comb[l - 1] + 1;
    }
    return {mean / static_cast<double>(count), var / static_cast<double>(count)};
}

std::int64_t payload_bytes(int k, bool global_mode) {
    return static_cast<std::int64_t>(k) * (global_mode ? 8 : 12);
}

} // namespace rosdhb
