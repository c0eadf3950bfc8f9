#pragma once

#include "rosdhb/compression.hpp"

#include <optional>
#include <vector>

namespace rosdhb {

enum class AttackKind { Alie, SignFlip, LargeValue, Zero };

struct AttackSpec {
    AttackKind kind = AttackKind::Alie;
    double z = 1.0;       // ALIE strength
    bool z_auto = false;  // derive z from the standard ALIE quantile
    double scale = 1.0;   // sign_flip / large_value multiplier
};

/// Everything an omniscient, colluding adversary can see in one round.
struct AttackContext {
    std::vector<CompressedGradient> honest_payloads; // current round
    std::vector<Vector> honest_momentums;            // server-held m_i^{t-1}
    std::optional<SparseMask> mask;                  // set in global mode
    int round = 0;
    Vector server_model;
};

/// The z_max quantile used by the original ALIE attack:
/// Phi^{-1}((n - f - s)/(n - f)) with s = floor(n/2) + 1 - f, clamped to >= 0.
double alie_quantile(int n, int f);

/// Craft the payload a Byzantine worker sends this round. In global mode the
/// payload carries the server's broadcast mask; colluders produce identical
/// payloads for identical inputs.
CompressedGradient craft_payload(const AttackSpec& spec, const AttackContext& ctx,
                                 int byz_index, RngStream& rng);

} // namespace rosdhb
