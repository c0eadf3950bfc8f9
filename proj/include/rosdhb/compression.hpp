#pragma once

#include "rosdhb/core.hpp"

#include <vector>

namespace rosdhb {

/// The k selected coordinates of a RandK mask, sorted ascending.
struct SparseMask {
    int d = 0;
    int k = 0;
    std::vector<int> indices; // strictly increasing, all in [0, d)

    void validate() const;
};

/// On-wire payload: k values ordered by ascending mask index.
struct CompressedGradient {
    SparseMask mask;
    Vector values; // values[j] corresponds to mask.indices[j]
};

enum class CompressorKind { RandK, Identity, CustomUnbiased };

struct CompressorSpec {
    CompressorKind kind = CompressorKind::RandK;
    double ratio = 1.0; // k/d for RandK
    double alpha = 1.0; // variance-inflation parameter, d/k for RandK
};

/// Exact mean and variance of RandK reconstruction, by enumerating all
/// C(d, k) masks. Guarded to d <= 12.
struct CompressionMoments {
    Vector mean;
    double variance = 0.0; // exact E||g_tilde - g||^2
};

/// k = clamp(round(ratio*d), 1, d).
int resolve_k(double ratio, int d);

/// Uniformly random k-subset of [0, d) without replacement.
SparseMask sample_mask(RngStream& rng, int d, int k);

CompressedGradient compress(const Vector& g, const SparseMask& mask);

/// g_tilde with g_tilde[l] = (d/k) * value at l for masked l, else 0.
Vector reconstruct(const CompressedGradient& c);

CompressionMoments exact_moments(const Vector& g, int k);

/// Accounting bytes for one payload: 8k in global mode (mask known to the
/// server), 12k in local mode (8-byte value + 4-byte index per coordinate).
std::int64_t payload_bytes(int k, bool global_mode);

} // namespace rosdhb
