#include "rosdhb/harness.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>

namespace {

rosdhb::AggregatorSpec parse_agg_name(const std::string& name, int f) {
    rosdhb::AggregatorSpec spec;
    spec.f = f;
    std::string base = name;
    auto plus = name.find('+');
    if (plus != std::string::npos) {
        base = name.substr(0, plus);
        std::string pre = name.substr(plus + 1);
        if (pre != "nnm") throw rosdhb::ConfigError("unknown pre-aggregator '" + pre + "'");
        spec.pre = rosdhb::AggPre::Nnm;
    }
    if (base == "mean")
        spec.base = rosdhb::AggBase::Mean;
    else if (base == "cwtm")
        spec.base = rosdhb::AggBase::Cwtm;
    else if (base == "geomed")
        spec.base = rosdhb::AggBase::Geomed;
    else
        throw rosdhb::ConfigError("unknown aggregator '" + base + "' (want mean|cwtm|geomed, optionally +nnm)");
    return spec;
}

int cmd_run(const std::string& config, std::optional<std::uint64_t> seed) {
    rosdhb::ExperimentSpec spec = rosdhb::load_experiment_spec(config);
    if (seed) {
        nlohmann::json run = nlohmann::json::parse(spec.run_json);
        run["seed"] = *seed;
        spec.run_json = run.dump();
    }
    rosdhb::CostReport report = rosdhb::run_experiment(spec);
    int failed = 0;
    for (const auto& cell : report.cells) {
        std::printf("cell %d rep %d seed %llu: ", cell.cell_index, cell.repeat,
                    static_cast<unsigned long long>(cell.seed));
        for (const auto& [k, v] : cell.params) std::printf("%s=%s ", k.c_str(), v.c_str());
        if (cell.failed) {
            std::printf("FAILED: %s\n", cell.failure.c_str());
            ++failed;
            continue;
        }
        std::printf("rounds=%d grad_norm_mean=%.6g final_metric=%.6g bytes=%lld", cell.rounds,
                    cell.grad_norm_mean, cell.final_metric,
                    static_cast<long long>(cell.total_bytes));
        if (cell.rounds_to_tau)
            std::printf(" rounds_to_tau=%d bytes_to_tau=%lld", *cell.rounds_to_tau,
                        static_cast<long long>(*cell.bytes_to_tau));
        std::printf("\n");
    }
    std::printf("summary: %s/%s_summary.csv (%zu cells, %d failed)\n", spec.outputs.c_str(),
                spec.name.c_str(), report.cells.size(), failed);
    return failed ? 1 : 0;
}

int cmd_audit(const std::string& agg, int n, int f, int trials, int d, std::uint64_t seed) {
    rosdhb::AggregatorSpec spec = parse_agg_name(agg, f);
    rosdhb::KappaAudit audit =
        rosdhb::audit_kappa(spec, n, f, d, trials, rosdhb::RngStream(seed, 1));
    std::printf("aggregator=%s n=%d f=%d d=%d trials=%d\n", spec.name().c_str(), n, f, d,
                audit.trials);
    std::printf("kappa_hat=%.6g (worst case: %s)\n", audit.kappa_hat, audit.worst_case.c_str());
    std::printf("lower bound f/(n-2f)=%.6g\n", rosdhb::kappa_lower_bound(n, f));
    if (audit.subset_capped) std::printf("note: honest-subset enumeration was sampled, not exhaustive\n");
    return 0;
}

int cmd_fit(const std::string& csv, const std::string& window, bool subtract_floor) {
    auto records = rosdhb::read_records_csv(csv);
    int t_min = 1, t_max = records.empty() ? 1 : records.back().t;
    if (!window.empty()) {
        auto colon = window.find(':');
        if (colon == std::string::npos)
            throw rosdhb::ConfigError("--window must look like t_min:t_max");
        t_min = std::stoi(window.substr(0, colon));
        t_max = std::stoi(window.substr(colon + 1));
    }
    rosdhb::RateFit fit = rosdhb::fit_rate(records, t_min, t_max, subtract_floor);
    std::printf("window=[%d,%d] slope=%.6g intercept=%.6g r2=%.6g\n", fit.t_min, fit.t_max,
                fit.slope, fit.intercept, fit.r2);
    std::printf("running-average decay ~ t^%.3f\n", fit.slope);
    return 0;
}

int cmd_cost(const std::string& summary, const std::string& out) {
    rosdhb::cost_curve(summary, out);
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

bool verify_check(const char* what, bool ok, int& failures) {
    std::printf("%-58s %s\n", what, ok ? "ok" : "FAIL");
    if (!ok) ++failures;
    return ok;
}

// Self-tests against exhaustive enumeration and closed forms.
int cmd_verify() {
    using namespace rosdhb;
    int failures = 0;

    {
        Vector g(6);
        g << 1.5, -2.0, 0.0, 3.25, -0.5, 4.0;
        CompressionMoments m = exact_moments(g, 2);
        double alpha = 6.0 / 2.0;
        verify_check("randk enumeration: unbiased mean", (m.mean - g).norm() < 1e-12, failures);
        verify_check("randk enumeration: variance (alpha-1)||g||^2",
                     std::abs(m.variance - (alpha - 1.0) * g.squaredNorm()) < 1e-9, failures);
    }
    {
        RngStream rng(7, 3);
        std::vector<int> counts(8, 0);
        int trials = 40000;
        for (int t = 0; t < trials; ++t) {
            SparseMask mask = sample_mask(rng, 8, 3);
            for (int idx : mask.indices) ++counts[idx];
        }
        double expect = trials * 3.0 / 8.0;
        bool ok = true;
        for (int c : counts) ok = ok && std::abs(c - expect) < 5.0 * std::sqrt(expect);
        verify_check("randk mask: uniform coordinate frequencies", ok, failures);
    }
    {
        std::vector<Vector> xs;
        for (double v : {5.0, -1.0, 2.0, 9.0, 0.0}) {
            Vector x(1);
            x << v;
            xs.push_back(x);
        }
        Vector t = cwtm(xs, 1);
        verify_check("cwtm: trims extremes (oracle value)", std::abs(t[0] - 7.0 / 3.0) < 1e-12,
                     failures);
        Vector gm = geomed(xs);
        verify_check("geomed: 1-d case equals the median", std::abs(gm[0] - 2.0) < 1e-8,
                     failures);
    }
    {
        RngStream a(42);
        RngStream c1 = a.derive("x");
        RngStream c2 = a.derive("x");
        RngStream c3 = a.derive("y");
        bool same = c1.next_u64() == c2.next_u64();
        bool diff = c1.next_u64() != c3.next_u64();
        verify_check("rng: derived streams are label-determined", same && diff, failures);
    }
    {
        double z = alie_quantile(24, 8); // target quantile (n-f-s)/(n-f) = 11/16
        double p = 0.5 * (1.0 + std::erf(z / std::sqrt(2.0)));
        verify_check("alie quantile: normal CDF round-trips to 11/16",
                     std::abs(p - 11.0 / 16.0) < 1e-8, failures);
    }
    {
        AggregatorSpec spec{AggBase::Cwtm, AggPre::Nnm, 3};
        KappaAudit audit = audit_kappa(spec, 10, 3, 4, 200, RngStream(11, 2));
        bool ok = audit.kappa_hat >= kappa_lower_bound(10, 3) * 0.999;
        verify_check("kappa audit: at or above the f/(n-2f) lower bound", ok, failures);
    }

    std::printf(failures ? "verify: %d check(s) FAILED\n" : "verify: all checks passed\n",
                failures);
    return failures ? 1 : 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Byzantine-robust distributed SGD with sparsified communication"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed_override;
    std::uint64_t seed_value = 0;
    auto* run_cmd = app.add_subcommand("run", "Run an experiment config (JSON)");
    run_cmd->add_option("config", config_path, "experiment config file")->required();
    auto* seed_opt = run_cmd->add_option("--seed", seed_value, "override the base seed");

    std::string agg_name;
    int audit_n = 0, audit_f = 0, audit_trials = 1000, audit_d = 10;
    std::uint64_t audit_seed = 0;
    auto* audit_cmd = app.add_subcommand("audit-kappa", "Empirical robustness-coefficient audit");
    audit_cmd->add_option("agg", agg_name, "mean|cwtm|geomed, optionally +nnm (e.g. cwtm+nnm)")
        ->required();
    audit_cmd->add_option("n", audit_n, "total workers")->required();
    audit_cmd->add_option("f", audit_f, "Byzantine workers")->required();
    audit_cmd->add_option("--trials", audit_trials, "adversarial trials");
    audit_cmd->add_option("--d", audit_d, "vector dimension");
    audit_cmd->add_option("--seed", audit_seed, "audit seed");

    std::string fit_csv, fit_window;
    bool fit_floor = false;
    auto* fit_cmd = app.add_subcommand("fit-rate", "Fit the convergence-rate exponent");
    fit_cmd->add_option("csv", fit_csv, "per-round records CSV")->required();
    fit_cmd->add_option("--window", fit_window, "fit window t_min:t_max");
    fit_cmd->add_flag("--subtract-floor", fit_floor, "subtract the tail-plateau estimate");

    std::string cost_csv, cost_out = "cost_curve.csv";
    auto* cost_cmd = app.add_subcommand("cost-curve", "Bytes-to-target vs compression ratio");
    cost_cmd->add_option("summary", cost_csv, "experiment summary CSV")->required();
    cost_cmd->add_option("-o,--out", cost_out, "output CSV path");

    auto* verify_cmd = app.add_subcommand("verify", "Run enumeration/oracle self-tests");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run_cmd) {
            if (*seed_opt) seed_override = seed_value;
            return cmd_run(config_path, seed_override);
        }
        if (*audit_cmd) return cmd_audit(agg_name, audit_n, audit_f, audit_trials, audit_d, audit_seed);
        if (*fit_cmd) return cmd_fit(fit_csv, fit_window, fit_floor);
        if (*cost_cmd) return cmd_cost(cost_csv, cost_out);
        if (*verify_cmd) return cmd_verify();
    } catch (const rosdhb::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
