#pragma once

#include "rosdhb/simulator.hpp"

#include <map>
#include <string>

namespace rosdhb {

/// One cell of an experiment: the swept field values plus run outcome.
struct CellReport {
    int cell_index = 0;
    int repeat = 0;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> params; // swept field -> value
    bool failed = false;
    std::string failure;
    int rounds = 0;
    std::optional<int> rounds_to_tau;
    std::optional<std::int64_t> bytes_to_tau;
    std::int64_t total_bytes = 0;
    double final_metric = 0.0; // last accuracy if evaluated, else grad-norm mean
    double grad_norm_mean = 0.0;
    std::string csv_path;
};

struct CostReport {
    std::vector<CellReport> cells;
    std::optional<double> target_accuracy;
};

/// Experiment description parsed from a JSON config file. Unknown keys are
/// rejected so sweep typos fail fast.
struct ExperimentSpec {
    std::string name;
    std::string objective_json; // serialized objective block
    std::string run_json;       // serialized base RunConfig block
    std::map<std::string, std::vector<std::string>> sweep; // field -> JSON values
    int repeats = 1;
    std::string outputs = ".";
    std::optional<double> target_accuracy;
    int cell_cap = 512;
};

ExperimentSpec load_experiment_spec(const std::string& path);

/// Build a RunConfig from a serialized run block (used by the CLI and tests).
RunConfig parse_run_config(const std::string& run_json);

/// Execute every cell x repeat; writes one RoundRecord CSV per cell plus a
/// summary CSV, and returns the cost report.
CostReport run_experiment(const ExperimentSpec& spec);

/// Log-log OLS fit of the running average of grad_norm_sq against t.
struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    int t_min = 0;
    int t_max = 0;
};

RateFit fit_rate(const std::vector<RoundRecord>& records, int t_min, int t_max,
                 bool subtract_floor = false);

/// Fit a plain series as given (indexed 1..n), without the running average.
RateFit fit_rate_series(const std::vector<double>& series, int t_min, int t_max,
                        bool subtract_floor = false);

/// Write per-round records as CSV (17 significant digits, fixed schema).
void write_records_csv(const std::string& path, const std::vector<RoundRecord>& records);

std::vector<RoundRecord> read_records_csv(const std::string& path);

void write_summary_csv(const std::string& path, const CostReport& report);

/// From a summary CSV, emit (compression_ratio, f, bytes_to_tau, savings)
/// plot data. Savings are relative to the k/d = 1 cell with the same f.
void cost_curve(const std::string& summary_csv, const std::string& out_csv);

} // namespace rosdhb
