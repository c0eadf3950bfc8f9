#pragma once

#include "rosdhb/aggregation.hpp"
#include "rosdhb/attacks.hpp"
#include "rosdhb/compression.hpp"
#include "rosdhb/problems.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace rosdhb {

enum class Algorithm { RosdhbGlobal, RosdhbLocal, RobustDgd, Dgd };
enum class LrMode { Theoretical, Tuned };
enum class GradientMode { Full, Stochastic };

struct RunConfig {
    Algorithm algorithm = Algorithm::RosdhbGlobal;
    int n = 1;
    int f = 0;
    std::vector<int> byz_indices; // defaults to the last f indices
    CompressorSpec compressor;
    AggregatorSpec aggregator;
    AttackSpec attack;
    int T = 100;
    LrMode lr_mode = LrMode::Theoretical;
    double gamma = 0.0; // tuned mode
    double beta = 0.0;  // tuned mode
    GradientMode gradient_mode = GradientMode::Full;
    int batch = 60;
    std::uint64_t seed = 0;
    bool diagnostics = false;
    int eval_every = 50;
    std::optional<double> kappa_hat; // from an audit; computed if needed
    std::optional<Vector> theta0;    // defaults to a seeded Gaussian draw
};

/// Per-iteration metrics. grad_norm_sq / loss carry the honest-oracle values
/// at theta_{t-1}; they are recorded only when the oracle is evaluated
/// (always in full-gradient or diagnostics mode, thinned otherwise).
struct RoundRecord {
    int t = 0;
    std::optional<double> grad_norm_sq;
    std::optional<double> loss;
    std::optional<double> delta_sq; // ||m_bar_H - grad L_H(theta_{t-1})||^2
    std::optional<double> upsilon;  // honest momentum drift
    std::optional<double> xi_sq;    // ||R - m_bar_H||^2
    std::optional<bool> xi_bound_ok;
    std::int64_t bytes_up = 0;
    std::optional<double> accuracy;
};

struct FinalReport {
    Vector theta_final;
    Vector theta_hat; // uniformly drawn iterate (seeded)
    int theta_hat_round = 0;
    double epsilon_at_theta_hat = 0.0; // measured (f, eps)-resilience quantity
    double grad_norm_mean = 0.0;       // trajectory mean of ||grad L_H||^2
    double grad_norm_min = 0.0;
    std::int64_t total_bytes = 0;
    double gamma = 0.0;
    double beta = 0.0;
    std::optional<double> kappa_hat;
    bool kappa_b2_ok = true; // kappa_hat * B^2 <= 1/25 when both are known
    int rounds = 0;
};

struct RunResult {
    std::vector<RoundRecord> records;
    FinalReport report;
};

/// Analysis-driven (gamma, beta): gamma = (k/d)/(cL) with c = 23200 (global)
/// or c = max{23200, 368640 kappa_hat} (local); beta = sqrt(1 - 24 gamma L).
/// When heterogeneity_adjusted is set, the local c is additionally scaled by
/// (1 + B^2) (opt-in variant of the schedule for heterogeneous losses).
std::pair<double, double> theoretical_schedule(Algorithm mode, int k, int d, double L,
                                               double kappa_hat, double B = 0.0,
                                               bool heterogeneity_adjusted = false);

/// Per-round Definition-2 consequence: ||xi||^2 <= kappa_hat * Upsilon.
bool check_lemma_bounds(const RoundRecord& record, double kappa_hat);

/// Optional model evaluator (e.g. test accuracy) invoked every eval_every
/// rounds on the post-step model.
using EvalFn = std::function<double(const Vector&)>;

RunResult run(const RunConfig& cfg, const Objective& obj, const EvalFn& eval = nullptr);

} // namespace rosdhb
