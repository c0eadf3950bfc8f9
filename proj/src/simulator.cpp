#include "rosdhb/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rosdhb {

std::pair<double, double> theoretical_schedule(Algorithm mode, int k, int d, double L,
                                               double kappa_hat, double B,
                                               bool heterogeneity_adjusted) {
    if (L <= 0.0) throw ConfigError("theoretical_schedule: L must be positive");
    if (k < 1 || k > d) throw ConfigError("theoretical_schedule: need 1 <= k <= d");
    double c = 23200.0;
    if (mode == Algorithm::RosdhbLocal) c = std::max(23200.0, 368640.0 * kappa_hat);
    if (heterogeneity_adjusted) c *= (1.0 + B * B);
    double gamma = (static_cast<double>(k) / d) / (c * L);
    double beta = std::sqrt(1.0 - 24.0 * gamma * L);
    return {gamma, beta};
}

bool check_lemma_bounds(const RoundRecord& record, double kappa_hat) {
    if (!record.xi_sq || !record.upsilon)
        throw Error("check_lemma_bounds: diagnostics were not enabled");
    return *record.xi_sq <= kappa_hat * *record.upsilon + 1e-12;
}

namespace {

bool aggregator_is_robust(const AggregatorSpec& s) {
    return s.base != AggBase::Mean || s.pre == AggPre::Nnm;
}

} // namespace

RunResult run(const RunConfig& cfg, const Objective& obj, const EvalFn& eval) {
    if (cfg.n < 1) throw ConfigError("run: n must be positive");
    if (cfg.f < 0 || 2 * cfg.f >= cfg.n)
        throw BreakdownError("run: breakdown point exceeded (need f < n/2)");
    if (cfg.T < 0) throw ConfigError("run: T must be nonnegative");
    if (aggregator_is_robust(cfg.aggregator) && cfg.n <= 2 * cfg.aggregator.f)
        throw BreakdownError("run: breakdown point exceeded (n <= 2f for robust aggregation)");

    // Byzantine index set; defaults to the last f workers.
    std::vector<int> byz = cfg.byz_indices;
    if (byz.empty() && cfg.f > 0)
        for (int i = cfg.n - cfg.f; i < cfg.n; ++i) byz.push_back(i);
    std::sort(byz.begin(), byz.end());
    if (static_cast<int>(byz.size()) != cfg.f)
        throw ConfigError("run: byz_indices size must equal f");
    for (size_t j = 0; j < byz.size(); ++j) {
        if (byz[j] < 0 || byz[j] >= cfg.n) throw ConfigError("run: byz index out of range");
        if (j > 0 && byz[j] == byz[j - 1]) throw ConfigError("run: duplicate byz index");
    }
    std::vector<int> honest;
    for (int i = 0; i < cfg.n; ++i)
        if (!std::binary_search(byz.begin(), byz.end(), i)) honest.push_back(i);
    auto n_honest = static_cast<int>(honest.size());

    // Honest worker -> objective worker. The objective either models exactly
    // the honest set or all n workers.
    bool obj_is_honest_only;
    if (obj.num_workers() == n_honest) {
        obj_is_honest_only = true;
    } else if (obj.num_workers() == cfg.n) {
        obj_is_honest_only = false;
    } else {
        throw ConfigError("run: objective must have n or n-f workers");
    }
    auto obj_worker = [&](int honest_rank) {
        return obj_is_honest_only ? honest_rank : honest[honest_rank];
    };

    int d = obj.dim();
    int k = (cfg.compressor.kind == CompressorKind::Identity)
                ? d
                : resolve_k(cfg.compressor.ratio, d);
    bool global_mode = cfg.algorithm != Algorithm::RosdhbLocal;

    RngStream master(cfg.seed);
    ObjectiveInfo info = obj.info();

    // Robustness coefficient: caller-provided, else audited when needed
    // (local theoretical schedule or diagnostics).
    std::optional<double> kappa_hat = cfg.kappa_hat;
    bool need_kappa = cfg.diagnostics ||
                      (cfg.lr_mode == LrMode::Theoretical && cfg.algorithm == Algorithm::RosdhbLocal);
    if (!kappa_hat && need_kappa) {
        if (aggregator_is_robust(cfg.aggregator) || cfg.f > 0) {
            KappaAudit audit = audit_kappa(cfg.aggregator, cfg.n, cfg.f, std::min(d, 10), 1000,
                                           master.derive("kappa-audit"));
            kappa_hat = audit.kappa_hat;
        } else {
            kappa_hat = 0.0; // exact: mean with f = 0 has zero aggregation error
        }
    }

    double gamma, beta;
    if (cfg.lr_mode == LrMode::Theoretical) {
        if (!info.L) throw ConfigError("run: theoretical schedule needs an analytic L");
        std::tie(gamma, beta) =
            theoretical_schedule(cfg.algorithm, k, d, *info.L, kappa_hat.value_or(0.0));
    } else {
        if (cfg.gamma <= 0.0) throw ConfigError("run: tuned mode needs gamma > 0");
        gamma = cfg.gamma;
        beta = cfg.beta;
    }
    if (cfg.algorithm == Algorithm::RobustDgd || cfg.algorithm == Algorithm::Dgd) beta = 0.0;
    if (beta < 0.0 || beta >= 1.0) throw ConfigError("run: beta must be in [0, 1)");

    AggregatorSpec agg = cfg.aggregator;
    if (cfg.algorithm == Algorithm::Dgd) agg = AggregatorSpec{AggBase::Mean, AggPre::None, 0};

    AttackSpec attack = cfg.attack;
    if (attack.z_auto) {
        attack.z = std::max(0.0, alie_quantile(cfg.n, cfg.f));
        attack.z_auto = false;
    }

    Vector theta;
    if (cfg.theta0) {
        if (cfg.theta0->size() != d) throw DimensionError("run: theta0 dimension mismatch");
        theta = *cfg.theta0;
    } else {
        RngStream tr = master.derive("theta0");
        theta.resize(d);
        for (int l = 0; l < d; ++l) theta[l] = tr.normal();
    }

    std::vector<Vector> momentums(cfg.n, Vector::Zero(d));

    // Seeded uniform iterate draw for theta_hat (the algorithm's output rule).
    int theta_hat_round = 0;
    if (cfg.T > 0) {
        RngStream hr = master.derive("theta-hat");
        theta_hat_round = static_cast<int>(hr.uniform_int(static_cast<std::uint64_t>(cfg.T)));
    }
    Vector theta_hat = theta; // round 0 == initial model

    bool oracle_every_round = cfg.diagnostics || cfg.gradient_mode == GradientMode::Full;

    RunResult result;
    result.records.reserve(std::min(cfg.T, 2'000'000));
    std::int64_t total_bytes = 0;

    std::vector<CompressedGradient> payloads(cfg.n);
    std::vector<Vector> honest_gradients(n_honest);

    for (int t = 1; t <= cfg.T; ++t) {
        RoundRecord rec;
        rec.t = t;

        Vector grad_oracle;
        if (oracle_every_round) {
            grad_oracle = obj.honest_avg_gradient(theta);
            rec.grad_norm_sq = grad_oracle.squaredNorm();
            rec.loss = obj.honest_avg_loss(theta);
        }

        // Step 1: masks. Global: one server mask shared by all workers.
        std::optional<SparseMask> server_mask;
        if (global_mode) {
            RngStream mr = master.derive("mask-" + std::to_string(t));
            server_mask = sample_mask(mr, d, k);
        }

        // Steps 2-3: honest workers compute and compress gradients.
        for (int j = 0; j < n_honest; ++j) {
            int i = honest[j];
            Vector g;
            if (cfg.gradient_mode == GradientMode::Full) {
                g = obj.full_gradient(obj_worker(j), theta);
            } else {
                RngStream gr = master.derive("grad-" + std::to_string(t) + "-w" + std::to_string(i));
                g = obj.stochastic_gradient(obj_worker(j), theta, cfg.batch, gr);
            }
            check_finite(g, "honest gradient");
            honest_gradients[j] = g;
            SparseMask mask_i;
            if (global_mode) {
                mask_i = *server_mask;
            } else {
                RngStream mr =
                    master.derive("mask-" + std::to_string(t) + "-w" + std::to_string(i));
                mask_i = sample_mask(mr, d, k);
            }
            payloads[i] = compress(g, mask_i);
        }

        // Byzantine workers collude: one crafted payload, sent by all of them.
        if (cfg.f > 0) {
            AttackContext ctx;
            ctx.honest_payloads.reserve(n_honest);
            ctx.honest_momentums.reserve(n_honest);
            for (int j = 0; j < n_honest; ++j) {
                ctx.honest_payloads.push_back(payloads[honest[j]]);
                ctx.honest_momentums.push_back(momentums[honest[j]]);
            }
            ctx.mask = server_mask;
            ctx.round = t;
            ctx.server_model = theta;
            RngStream ar = master.derive("attack-" + std::to_string(t));
            CompressedGradient crafted = craft_payload(attack, ctx, byz[0], ar);
            for (int i : byz) payloads[i] = crafted;
        }

        rec.bytes_up = static_cast<std::int64_t>(cfg.n) * payload_bytes(k, global_mode);
        total_bytes += rec.bytes_up;

        // Steps 4-5: reconstruct and update every worker's server-held momentum.
        for (int i = 0; i < cfg.n; ++i) {
            Vector g_tilde = reconstruct(payloads[i]);
            if (beta == 0.0) {
                momentums[i] = std::move(g_tilde);
            } else {
                momentums[i] = beta * momentums[i] + (1.0 - beta) * g_tilde;
            }
        }

        // Steps 6-7: aggregate and step.
        Vector R = aggregate(agg, momentums);
        theta -= gamma * R;

        if (!theta.allFinite() || theta.norm() > 1e12)
            throw DivergenceError("run: divergence at round " + std::to_string(t), t);

        if (cfg.diagnostics) {
            Vector m_bar = Vector::Zero(d);
            for (int j = 0; j < n_honest; ++j) m_bar += momentums[honest[j]];
            m_bar /= static_cast<double>(n_honest);
            double upsilon = 0.0;
            for (int j = 0; j < n_honest; ++j)
                upsilon += (momentums[honest[j]] - m_bar).squaredNorm();
            upsilon /= static_cast<double>(n_honest);
            rec.delta_sq = (m_bar - grad_oracle).squaredNorm();
            rec.upsilon = upsilon;
            rec.xi_sq = (R - m_bar).squaredNorm();
            if (kappa_hat) rec.xi_bound_ok = check_lemma_bounds(rec, *kappa_hat);
        }

        if (eval && cfg.eval_every > 0 && t % cfg.eval_every == 0) rec.accuracy = eval(theta);

        if (t == theta_hat_round) theta_hat = theta;

        result.records.push_back(std::move(rec));
    }

    FinalReport& rep = result.report;
    rep.theta_final = theta;
    rep.theta_hat = theta_hat;
    rep.theta_hat_round = theta_hat_round;
    rep.epsilon_at_theta_hat = obj.honest_avg_gradient(theta_hat).squaredNorm();
    rep.total_bytes = total_bytes;
    rep.gamma = gamma;
    rep.beta = beta;
    rep.kappa_hat = kappa_hat;
    rep.rounds = cfg.T;

    double sum = 0.0, mn = std::numeric_limits<double>::infinity();
    int cnt = 0;
    for (const auto& r : result.records) {
        if (r.grad_norm_sq) {
            sum += *r.grad_norm_sq;
            mn = std::min(mn, *r.grad_norm_sq);
            ++cnt;
        }
    }
    rep.grad_norm_mean = cnt ? sum / cnt : 0.0;
    rep.grad_norm_min = cnt ? mn : 0.0;

    if (kappa_hat && info.B) rep.kappa_b2_ok = (*kappa_hat) * (*info.B) * (*info.B) <= 1.0 / 25.0;

    return result;
}

} // namespace rosdhb
