#include "rosdhb/harness.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace rosdhb {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                         const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed)
            if (it.key() == a) ok = true;
        if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
}

Algorithm parse_algorithm(const std::string& s) {
    if (s == "rosdhb_global") return Algorithm::RosdhbGlobal;
    if (s == "rosdhb_local") return Algorithm::RosdhbLocal;
    if (s == "robust_dgd") return Algorithm::RobustDgd;
    if (s == "dgd") return Algorithm::Dgd;
    throw ConfigError("unknown algorithm '" + s + "'");
}

CompressorSpec parse_compressor(const json& j) {
    reject_unknown_keys(j, {"kind", "ratio"}, "compressor");
    CompressorSpec c;
    std::string kind = j.value("kind", "randk");
    if (kind == "randk") {
        c.kind = CompressorKind::RandK;
    } else if (kind == "identity") {
        c.kind = CompressorKind::Identity;
        c.ratio = 1.0;
        c.alpha = 1.0;
        return c;
    } else {
        throw ConfigError("unknown compressor kind '" + kind + "'");
    }
    c.ratio = j.value("ratio", 1.0);
    if (!(c.ratio > 0.0 && c.ratio <= 1.0))
        throw ConfigError("compressor.ratio must be in (0, 1]");
    c.alpha = 1.0 / c.ratio;
    return c;
}

AggregatorSpec parse_aggregator(const json& j, int default_f) {
    reject_unknown_keys(j, {"base", "pre", "f"}, "aggregator");
    AggregatorSpec a;
    std::string base = j.value("base", "mean");
    if (base == "mean")
        a.base = AggBase::Mean;
    else if (base == "cwtm")
        a.base = AggBase::Cwtm;
    else if (base == "geomed")
        a.base = AggBase::Geomed;
    else
        throw ConfigError("unknown aggregator base '" + base + "'");
    std::string pre = j.value("pre", "none");
    if (pre == "none")
        a.pre = AggPre::None;
    else if (pre == "nnm")
        a.pre = AggPre::Nnm;
    else
        throw ConfigError("unknown aggregator pre '" + pre + "'");
    a.f = j.value("f", default_f);
    return a;
}

AttackSpec parse_attack(const json& j) {
    reject_unknown_keys(j, {"kind", "z", "z_auto", "scale"}, "attack");
    AttackSpec s;
    std::string kind = j.value("kind", "alie");
    if (kind == "alie")
        s.kind = AttackKind::Alie;
    else if (kind == "sign_flip")
        s.kind = AttackKind::SignFlip;
    else if (kind == "large_value")
        s.kind = AttackKind::LargeValue;
    else if (kind == "zero")
        s.kind = AttackKind::Zero;
    else
        throw ConfigError("unknown attack kind '" + kind + "'");
    s.z = j.value("z", 1.0);
    s.z_auto = j.value("z_auto", false);
    s.scale = j.value("scale", 1.0);
    return s;
}

RunConfig parse_run_config_json(const json& j) {
    reject_unknown_keys(j,
                        {"algorithm", "n", "f", "byz_indices", "compressor", "aggregator",
                         "attack", "T", "lr_mode", "gamma", "beta", "gradient_mode", "batch",
                         "seed", "diagnostics", "eval_every", "kappa_hat"},
                        "run");
    RunConfig cfg;
    cfg.algorithm = parse_algorithm(j.value("algorithm", "rosdhb_global"));
    cfg.n = j.value("n", 1);
    cfg.f = j.value("f", 0);
    if (j.contains("byz_indices")) cfg.byz_indices = j["byz_indices"].get<std::vector<int>>();
    if (j.contains("compressor")) cfg.compressor = parse_compressor(j["compressor"]);
    if (j.contains("aggregator")) cfg.aggregator = parse_aggregator(j["aggregator"], cfg.f);
    if (j.contains("attack")) cfg.attack = parse_attack(j["attack"]);
    cfg.T = j.value("T", 100);
    std::string lr = j.value("lr_mode", "theoretical");
    if (lr == "theoretical")
        cfg.lr_mode = LrMode::Theoretical;
    else if (lr == "tuned")
        cfg.lr_mode = LrMode::Tuned;
    else
        throw ConfigError("unknown lr_mode '" + lr + "'");
    cfg.gamma = j.value("gamma", 0.0);
    cfg.beta = j.value("beta", 0.0);
    std::string gm = j.value("gradient_mode", "full");
    if (gm == "full")
        cfg.gradient_mode = GradientMode::Full;
    else if (gm == "stochastic")
        cfg.gradient_mode = GradientMode::Stochastic;
    else
        throw ConfigError("unknown gradient_mode '" + gm + "'");
    cfg.batch = j.value("batch", 60);
    cfg.seed = j.value("seed", std::uint64_t{0});
    cfg.diagnostics = j.value("diagnostics", false);
    cfg.eval_every = j.value("eval_every", 50);
    if (j.contains("kappa_hat")) cfg.kappa_hat = j["kappa_hat"].get<double>();
    return cfg;
}

struct BuiltObjective {
    std::shared_ptr<Objective> objective;
    EvalFn eval;
};

std::string dataset_root() {
    if (const char* env = std::getenv("ROSDHB_DATA")) return env;
    return "data/mnist";
}

BuiltObjective build_objective(const json& j, const RunConfig& run) {
    std::string kind = j.value("kind", "quadratic");
    BuiltObjective built;
    if (kind == "quadratic") {
        reject_unknown_keys(
            j, {"kind", "family", "d", "n", "spread_g", "spread_b", "base_curvature", "seed"},
            "objective");
        QuadraticFamilySpec spec;
        std::string family = j.value("family", "shifted");
        if (family == "shifted")
            spec.kind = QuadraticKind::Shifted;
        else if (family == "scaled")
            spec.kind = QuadraticKind::Scaled;
        else
            throw ConfigError("unknown quadratic family '" + family + "'");
        spec.d = j.value("d", 2);
        spec.n = j.value("n", run.n - run.f);
        spec.spread_g = j.value("spread_g", 0.0);
        spec.spread_b = j.value("spread_b", 0.0);
        spec.base_curvature = j.value("base_curvature", 1.0);
        auto seed = j.value("seed", run.seed);
        built.objective = make_quadratic(spec, RngStream(seed).derive("objective"));
    } else if (kind == "mnist") {
        reject_unknown_keys(j, {"kind", "data_dir", "n_honest", "hidden", "seed"}, "objective");
        std::string dir = j.value("data_dir", dataset_root());
        auto data = std::make_shared<MnistDataset>(load_mnist_idx(
            dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte",
            dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte"));
        int n_honest = j.value("n_honest", run.n - run.f);
        int hidden = j.value("hidden", 15);
        auto seed = j.value("seed", run.seed);
        built.objective =
            mnist_objective(data, n_honest, RngStream(seed).derive("objective"), hidden);
        MlpModel model(hidden);
        built.eval = [data, model](const Vector& theta) {
            return test_accuracy(model, theta, *data);
        };
    } else {
        throw ConfigError("unknown objective kind '" + kind + "'");
    }
    return built;
}

// Apply a dotted-path override like "compressor.ratio" to a JSON object.
void apply_override(json& obj, const std::string& path, const json& value) {
    json* cur = &obj;
    size_t start = 0;
    while (true) {
        size_t dot = path.find('.', start);
        std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (dot == std::string::npos) {
            (*cur)[key] = value;
            return;
        }
        cur = &(*cur)[key];
        start = dot + 1;
    }
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

RunConfig parse_run_config(const std::string& run_json) {
    return parse_run_config_json(json::parse(run_json));
}

ExperimentSpec load_experiment_spec(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open config file '" + path + "'");
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw ParseError("config '" + path + "': " + e.what());
    }
    reject_unknown_keys(j,
                        {"name", "objective", "run", "sweep", "repeats", "outputs",
                         "target_accuracy", "cell_cap"},
                        "experiment");
    ExperimentSpec spec;
    spec.name = j.value("name", "experiment");
    if (!j.contains("run")) throw ConfigError("experiment: missing 'run' block");
    spec.run_json = j["run"].dump();
    spec.objective_json = j.value("objective", json{{"kind", "quadratic"}}).dump();
    if (j.contains("sweep")) {
        for (auto it = j["sweep"].begin(); it != j["sweep"].end(); ++it) {
            if (!it.value().is_array())
                throw ConfigError("sweep values for '" + it.key() + "' must be an array");
            for (const auto& v : it.value()) spec.sweep[it.key()].push_back(v.dump());
        }
    }
    spec.repeats = j.value("repeats", 1);
    spec.outputs = j.value("outputs", ".");
    if (j.contains("target_accuracy")) spec.target_accuracy = j["target_accuracy"].get<double>();
    spec.cell_cap = j.value("cell_cap", 512);

    // Validate base run config and sweep field paths eagerly.
    json run = json::parse(spec.run_json);
    for (const auto& [field, values] : spec.sweep) {
        if (values.empty()) throw ConfigError("sweep '" + field + "' has no values");
        if (field.rfind("objective.", 0) == 0) continue;
        json probe = run;
        apply_override(probe, field, json::parse(values.front()));
        parse_run_config_json(probe); // throws on unknown keys
    }
    parse_run_config_json(run);
    return spec;
}

CostReport run_experiment(const ExperimentSpec& spec) {
    json base_run = json::parse(spec.run_json);
    json base_obj = json::parse(spec.objective_json);

    // Cross product of sweep values.
    std::vector<std::map<std::string, std::string>> cells;
    cells.emplace_back();
    for (const auto& [field, values] : spec.sweep) {
        std::vector<std::map<std::string, std::string>> next;
        for (const auto& cell : cells)
            for (const auto& v : values) {
                auto c = cell;
                c[field] = v;
                next.push_back(std::move(c));
            }
        cells = std::move(next);
    }
    if (static_cast<int>(cells.size()) * spec.repeats > spec.cell_cap)
        throw ConfigError("experiment: cross product x repeats exceeds cell cap");

    std::filesystem::create_directories(spec.outputs);

    CostReport report;
    report.target_accuracy = spec.target_accuracy;
    std::uint64_t base_seed = base_run.value("seed", std::uint64_t{0});

    for (size_t ci = 0; ci < cells.size(); ++ci) {
        for (int rep = 0; rep < spec.repeats; ++rep) {
            CellReport cell;
            cell.cell_index = static_cast<int>(ci);
            cell.repeat = rep;
            cell.params = cells[ci];
            cell.seed = base_seed + static_cast<std::uint64_t>(rep);

            json run_j = base_run;
            json obj_j = base_obj;
            for (const auto& [field, value] : cells[ci]) {
                json v = json::parse(value);
                if (field.rfind("objective.", 0) == 0)
                    apply_override(obj_j, field.substr(10), v);
                else
                    apply_override(run_j, field, v);
            }
            run_j["seed"] = cell.seed;

            std::string cell_file = spec.outputs + "/" + spec.name + "__cell" +
                                    std::to_string(ci) + "__rep" + std::to_string(rep) + ".csv";
            try {
                RunConfig cfg = parse_run_config_json(run_j);
                BuiltObjective built = build_objective(obj_j, cfg);
                RunResult res = run(cfg, *built.objective, built.eval);

                cell.rounds = res.report.rounds;
                cell.total_bytes = res.report.total_bytes;
                cell.grad_norm_mean = res.report.grad_norm_mean;
                cell.final_metric = res.report.grad_norm_mean;
                std::int64_t cum_bytes = 0;
                for (const auto& r : res.records) {
                    cum_bytes += r.bytes_up;
                    if (r.accuracy) cell.final_metric = *r.accuracy;
                    if (spec.target_accuracy && !cell.rounds_to_tau && r.accuracy &&
                        *r.accuracy >= *spec.target_accuracy) {
                        cell.rounds_to_tau = r.t;
                        cell.bytes_to_tau = cum_bytes;
                    }
                }
                write_records_csv(cell_file, res.records);
                cell.csv_path = cell_file;
            } catch (const Error& e) {
                cell.failed = true;
                cell.failure = e.what();
            }
            report.cells.push_back(std::move(cell));
        }
    }

    write_summary_csv(spec.outputs + "/" + spec.name + "_summary.csv", report);
    return report;
}

void write_records_csv(const std::string& path, const std::vector<RoundRecord>& records) {
    std::ofstream f(path);
    if (!f) throw Error("cannot write '" + path + "'");
    f << "t,grad_norm_sq,loss,delta_sq,upsilon,xi_sq,xi_bound_ok,bytes_up,accuracy\n";
    auto opt = [](const std::optional<double>& v) { return v ? fmt17(*v) : std::string(); };
    for (const auto& r : records) {
        f << r.t << ',' << opt(r.grad_norm_sq) << ',' << opt(r.loss) << ',' << opt(r.delta_sq)
          << ',' << opt(r.upsilon) << ',' << opt(r.xi_sq) << ','
          << (r.xi_bound_ok ? (*r.xi_bound_ok ? "1" : "0") : "") << ',' << r.bytes_up << ','
          << opt(r.accuracy) << '\n';
    }
}

std::vector<RoundRecord> read_records_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(f, line)) throw ParseError(path + ": empty file");
    std::vector<RoundRecord> out;
    while (std::getline(f, line)) {
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) fields.push_back(item);
        fields.resize(9);
        RoundRecord r;
        r.t = std::stoi(fields[0]);
        auto opt = [](const std::string& s) -> std::optional<double> {
            if (s.empty()) return std::nullopt;
            return std::stod(s);
        };
        r.grad_norm_sq = opt(fields[1]);
        r.loss = opt(fields[2]);
        r.delta_sq = opt(fields[3]);
        r.upsilon = opt(fields[4]);
        r.xi_sq = opt(fields[5]);
        if (!fields[6].empty()) r.xi_bound_ok = fields[6] == "1";
        r.bytes_up = fields[7].empty() ? 0 : std::stoll(fields[7]);
        r.accuracy = opt(fields[8]);
        out.push_back(r);
    }
    return out;
}

void write_summary_csv(const std::string& path, const CostReport& report) {
    std::ofstream f(path);
    if (!f) throw Error("cannot write '" + path + "'");
    f << "cell_index,repeat,seed,params,ratio,f,status,rounds,grad_norm_mean,final_metric,"
         "rounds_to_tau,bytes_to_tau,total_bytes,csv_path\n";
    for (const auto& c : report.cells) {
        std::string params;
        std::string ratio, fcount;
        for (const auto& [k, v] : c.params) {
            if (!params.empty()) params += ';';
            params += k + "=" + v;
            if (k == "compressor.ratio") ratio = v;
            if (k == "f") fcount = v;
        }
        f << c.cell_index << ',' << c.repeat << ',' << c.seed << ',' << params << ',' << ratio
          << ',' << fcount << ',' << (c.failed ? ("failed:" + c.failure) : std::string("ok"))
          << ',' << c.rounds << ',' << fmt17(c.grad_norm_mean) << ',' << fmt17(c.final_metric)
          << ',' << (c.rounds_to_tau ? std::to_string(*c.rounds_to_tau) : std::string()) << ','
          << (c.bytes_to_tau ? std::to_string(*c.bytes_to_tau) : std::string()) << ','
          << c.total_bytes << ',' << c.csv_path << '\n';
    }
}

namespace {

RateFit fit_loglog(const std::vector<std::pair<double, double>>& pts, int t_min, int t_max) {
    if (pts.size() < 10) throw Error("fit_rate: fewer than 10 usable points in window");
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    auto m = static_cast<double>(pts.size());
    for (auto [x, y] : pts) {
        double lx = std::log(x), ly = std::log(y);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        syy += ly * ly;
    }
    RateFit fit;
    double det = m * sxx - sx * sx;
    fit.slope = (m * sxy - sx * sy) / det;
    fit.intercept = (sy - fit.slope * sx) / m;
    double ss_res = 0.0;
    for (auto [x, y] : pts) {
        double e = std::log(y) - (fit.intercept + fit.slope * std::log(x));
        ss_res += e * e;
    }
    double ss_tot = syy - sy * sy / m;
    fit.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    fit.t_min = t_min;
    fit.t_max = t_max;
    return fit;
}

} // namespace

RateFit fit_rate_series(const std::vector<double>& series, int t_min, int t_max,
                        bool subtract_floor) {
    if (series.empty()) throw Error("fit_rate: empty series");
    // Tail-plateau estimate: mean over the last 5% of rounds.
    double floor_est = 0.0;
    if (subtract_floor) {
        auto tail = std::max<size_t>(1, series.size() / 20);
        for (size_t i = series.size() - tail; i < series.size(); ++i) floor_est += series[i];
        floor_est /= static_cast<double>(tail);
    }
    std::vector<std::pair<double, double>> pts;
    for (size_t i = 0; i < series.size(); ++i) {
        int t = static_cast<int>(i + 1);
        if (t < t_min || t > t_max) continue;
        double y = series[i] - floor_est;
        if (y <= 0.0) continue; // drop nonpositive points after floor subtraction
        pts.emplace_back(static_cast<double>(t), y);
    }
    return fit_loglog(pts, t_min, t_max);
}

RateFit fit_rate(const std::vector<RoundRecord>& records, int t_min, int t_max,
                 bool subtract_floor) {
    // The fitted quantity is the running average of grad_norm_sq, i.e. the
    // trajectory mean that the convergence guarantees bound.
    std::vector<double> raw;
    raw.reserve(records.size());
    for (const auto& r : records)
        if (r.grad_norm_sq) raw.push_back(*r.grad_norm_sq);
    // The error floor is a property of the raw iterates; estimate it from
    // their tail plateau (last 5%) rather than from the running average,
    // which may still be decaying long after the raw series has flattened.
    double floor_est = 0.0;
    if (subtract_floor && !raw.empty()) {
        auto tail = std::max<size_t>(1, raw.size() / 20);
        for (size_t i = raw.size() - tail; i < raw.size(); ++i) floor_est += raw[i];
        floor_est /= static_cast<double>(tail);
    }
    std::vector<double> running;
    running.reserve(raw.size());
    double acc = 0.0;
    for (double g : raw) {
        acc += g;
        running.push_back(acc / static_cast<double>(running.size() + 1) - floor_est);
    }
    return fit_rate_series(running, t_min, t_max, false);
}

void cost_curve(const std::string& summary_csv, const std::string& out_csv) {
    std::ifstream f(summary_csv);
    if (!f) throw ParseError("cannot open '" + summary_csv + "'");
    std::string line;
    std::getline(f, line); // header
    struct Row {
        double ratio;
        std::string f_str;
        double bytes;
    };
    std::vector<Row> rows;
    while (std::getline(f, line)) {
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) fields.push_back(item);
        fields.resize(14);
        if (fields[6] != "ok" || fields[11].empty()) continue;
        double ratio = fields[4].empty() ? 1.0 : std::stod(fields[4]);
        rows.push_back({ratio, fields[5], std::stod(fields[11])});
    }
    if (rows.empty()) throw Error("cost_curve: no successful cells with bytes_to_tau");

    // Baseline bytes at k/d = 1 per f value.
    std::map<std::string, double> baseline;
    for (const auto& r : rows)
        if (r.ratio == 1.0) baseline[r.f_str] = r.bytes;

    std::ofstream out(out_csv);
    if (!out) throw Error("cannot write '" + out_csv + "'");
    bool have_baseline = !baseline.empty();
    if (!have_baseline)
        std::cerr << "cost_curve: warning: no k/d = 1 baseline cell; savings column omitted\n";
    out << (have_baseline ? "compression_ratio,f,bytes_to_tau,savings\n"
                          : "compression_ratio,f,bytes_to_tau\n");
    for (const auto& r : rows) {
        out << fmt17(r.ratio) << ',' << r.f_str << ',' << fmt17(r.bytes);
        if (have_baseline) {
            auto it = baseline.find(r.f_str);
            if (it != baseline.end())
                out << ',' << fmt17(1.0 - r.bytes / it->second);
            else
                out << ',';
        }
        out << '\n';
    }
}

} // namespace rosdhb
