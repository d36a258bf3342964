#include "safe_sysid/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "safe_sysid/error.hpp"
#include "safe_sysid/kernels.hpp"
#include "safe_sysid/serialize.hpp"

namespace safe_sysid {

using nlohmann::json;
namespace fs = std::filesystem;

int exit_code_for(SolveStatus status) {
    switch (status) {
        case SolveStatus::optimal: return kExitOk;
        case SolveStatus::infeasible: return kExitInfeasible;
        case SolveStatus::max_iters: return kExitMaxIters;
    }
    return kExitInfeasible;
}

namespace {

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

// Merges one command's record into output_dir/manifest.json.
void update_manifest(const RunConfig& cfg, const std::string& command, const std::vector<fs::path>& artifacts,
                     const json& summary, const std::string& started) {
    const fs::path path = cfg.output_dir / "manifest.json";
    json m = json::object();
    if (fs::exists(path)) {
        try {
            m = read_json(path);
        } catch (const Error&) {
            m = json::object();
        }
    }
    m["config_hash"] = config_hash(cfg);
    json files = json::array();
    for (const auto& a : artifacts)
        if (fs::exists(a)) files.push_back(a.string());
    m["commands"][command] = {{"started", started}, {"finished", utc_now()}, {"artifacts", files}, {"summary", summary}};
    write_json(m, path);
}

SampleSet read_samples_csv(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    SampleSet s;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<double> vals;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
        s.points.push_back(Eigen::Map<const Vec>(vals.data(), static_cast<Eigen::Index>(vals.size())));
    }
    return s;
}

std::vector<double> chance_coefficients(const QcqpProblem& problem, ConstraintTag tag) {
    std::vector<double> out;
    for (const auto& q : problem.constraints)
        if (q.tag == tag) out.push_back(q.risk_coeff);
    return out;
}

constexpr double kCoeffHeadroom = 1.001;

// Raises coefficients where c_eff Var(W) < c sqrt(Var(W)); returns true when none needed raising.
bool refine_coefficients(const ElmModel& model, const ConstraintSpecs& specs, const std::vector<Vec>& points,
                         const Mat& W, std::vector<double>& safety_c, std::vector<double>& stability_c) {
    const double c = risk_coefficient(specs.risk.p_k);
    bool ok = true;
    for (std::size_t k = 0; k < points.size(); ++k) {
        const Vec& x = points[k];
        const Vec y = W.transpose() * feature_map(model, InputVector::from_state(x, specs.stability.equilibrium));
        const MomentPair mb = safety_moments(specs.safety, y, specs.sigma, x);
        const MomentPair ml = stability_moments(specs.stability, y, specs.sigma, x);
        auto check = [&](const MomentPair& mp, double& coeff) {
            if (coeff * mp.variance >= c * std::sqrt(mp.variance)) return;
            // A little headroom so the next solve's small drift in Var does not trigger another round.
            coeff = std::max(coeff, kCoeffHeadroom * apply_variance_floor(mp, specs.risk).value);
            ok = false;
        };
        check(mb, safety_c[k]);
        check(ml, stability_c[k]);
    }
    return ok;
}

void solve_on_samples(const RunConfig& cfg, const TrainingPairs& pairs, const ConstraintSpecs& specs,
                      AssembleOptions opts, TrainOutcome& out) {
    const std::vector<Vec> points = unique_points(out.samples);
    opts.reference_weights = out.model.output_weights;
    opts.safety_coeffs.reset();
    opts.stability_coeffs.reset();
    out.fallback = false;
    for (int round = 0; round <= cfg.train.refine_rounds; ++round) {
        out.problem = assemble(pairs, out.model, specs, out.samples, opts);
        out.solution = solve(out.problem, cfg.solver);
        ++out.rounds;
        if (out.solution.status != SolveStatus::optimal) return;
        auto safety_c = chance_coefficients(out.problem, ConstraintTag::safety);
        auto stability_c = chance_coefficients(out.problem, ConstraintTag::stability);
        if (refine_coefficients(out.model, specs, points, out.solution.weights, safety_c, stability_c)) return;
        opts.reference_weights.reset();
        opts.safety_coeffs = std::move(safety_c);
        opts.stability_coeffs = std::move(stability_c);
    }
    // The minimum-variance coefficients hold for every W.
    opts.reference_weights.reset();
    opts.safety_coeffs.reset();
    opts.stability_coeffs.reset();
    out.problem = assemble(pairs, out.model, specs, out.samples, opts);
    out.solution = solve(out.problem, cfg.solver);
    ++out.rounds;
    out.fallback = true;
}

}  // namespace

TrajectoryDataset generate_dataset(const RunConfig& cfg) {
    if (cfg.experiment == "demonstrations")
        return synthetic_snake(static_cast<std::size_t>(cfg.demo.synthetic_demos),
                               static_cast<std::size_t>(cfg.demo.synthetic_samples), cfg.seed);

    const SafetySpec safety = cfg.safety_spec();
    const DomainBox box = box_from_ellipse(safety, 0.0);
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::uniform_real_distribution<double>> axis;
    for (int i = 0; i < 2; ++i) axis.emplace_back(box.lower[i], box.upper[i]);

    TrajectoryDataset data;
    data.target = cfg.robot.target;
    data.period = cfg.robot.data.period;
    constexpr int kAttempts = 1000;
    for (int t = 0; t < cfg.robot.trajectories; ++t) {
        std::vector<PidGains> gains;
        if (cfg.robot.gains.size() == 1) gains = cfg.robot.gains;
        else if (static_cast<int>(cfg.robot.gains.size()) > t) gains = {cfg.robot.gains[t]};
        bool accepted = false;
        for (int a = 0; a < kAttempts && !accepted; ++a) {
            Vec q0(2);
            q0 << axis[0](rng), axis[1](rng);
            if (barrier_value(safety, q0) <= 0.0) continue;
            if ((q0 - cfg.robot.target).norm() < cfg.robot.min_start_distance) continue;
            try {
                auto one = generate_robot_data(cfg.robot.params, gains, {q0}, cfg.robot.target, cfg.robot.data);
                const Mat& traj = one.demonstrations.front();
                bool inside = true;
                for (Eigen::Index k = 0; k < traj.rows() && inside; ++k)
                    inside = barrier_value(safety, traj.row(k).transpose()) > 0.0;
                if (!inside) continue;
                data.demonstrations.push_back(traj);
                accepted = true;
            } catch (const GenerationError&) {
                continue;
            }
        }
        if (!accepted)
            throw GenerationError("no initial condition in the safe ellipse gave a run that stays inside it (trajectory " +
                                  std::to_string(t) + ")");
    }
    return data;
}

TrajectoryDataset load_dataset(const RunConfig& cfg) {
    const bool translate_flag = cfg.experiment == "demonstrations" && cfg.demo.translate;
    return load_demonstrations(cfg.dataset_manifest(), translate_flag);
}

std::vector<Vec> nominal_starts(const TrajectoryDataset& data) {
    std::vector<Vec> out;
    for (const auto& d : data.demonstrations) out.push_back(d.row(0).transpose());
    return out;
}

TrainOutcome train_model(const RunConfig& cfg, const TrajectoryDataset& data) {
    const TrainingPairs pairs = to_training_pairs(data);
    const int n = data.dims();
    const ElmDims dims{n, n, cfg.n_h};
    TrainOutcome out;
    out.model = make_model(dims, bip_initialize(dims, pairs.inputs, cfg.seed), 10.0, cfg.sigma);

    ConstraintSpecs specs;
    specs.safety = cfg.safety_spec();
    specs.stability = cfg.stability_spec(data.target);
    specs.risk = cfg.risk;
    specs.sigma = cfg.sigma;

    AssembleOptions opts;
    opts.mu_w = cfg.train.mu_w;
    opts.objective_sigma = cfg.train.objective_sigma.value_or(cfg.sigma);

    // Unconstrained fit: the warm start, the active-sampling score, and the
    // first round's reference moments.
    QcqpProblem plain = assemble(pairs, out.model, specs, SampleSet{}, opts);
    const Mat ridge = ridge_solution(plain);
    out.model.output_weights = ridge;

    if (!cfg.train.constraints) {
        out.problem = plain;
        out.solution = solve(plain, cfg.solver);
        out.model.output_weights = out.solution.weights;
        return out;
    }

    const DomainBox box = box_from_ellipse(specs.safety, cfg.sampler.inflation);
    const SampleSet grid = grid_domain(box, cfg.sampler.tau, cfg.sampler.grid_cap);
    const std::size_t budget = std::min(cfg.sampler.budget, grid.count());
    if (cfg.sampler.theorem_margins) opts.margin_tau = cfg.sampler.tau * std::sqrt(static_cast<double>(n));

    for (int pass = 0; pass <= cfg.train.sampling_rounds; ++pass) {
        // Half the budget goes to the lowest-slack grid points under the current
        // weights, so violators and the active set of the last solve are kept.
        // The equilibrium is always one of the budgeted points.
        const Vec& eq = specs.stability.equilibrium;
        auto has_eq = [&](const SampleSet& s) {
            return std::any_of(s.points.begin(), s.points.end(), [&](const Vec& p) { return p == eq; });
        };
        out.samples = select_active_points(grid, out.model, specs, budget - 1, cfg.seed + 1);
        if (has_eq(out.samples)) out.samples = select_active_points(grid, out.model, specs, budget, cfg.seed + 1);
        else out.samples.points.push_back(eq);
        solve_on_samples(cfg, pairs, specs, opts, out);
        ++out.sampling_passes;
        if (out.solution.status != SolveStatus::optimal) return out;
        out.model.output_weights = out.solution.weights;
        out.grid_min_slack = point_slacks(grid, out.model, specs).minCoeff();
        if (out.grid_min_slack >= 0.0 || budget == grid.count()) break;
    }
    return out;
}

int cmd_generate(const RunConfig& cfg, std::ostream& out) {
    const std::string started = utc_now();
    ensure_dir(cfg.output_dir);
    const fs::path manifest = cfg.dataset_manifest();
    if (cfg.experiment == "demonstrations" && !cfg.dataset.empty()) {
        const auto data = load_demonstrations(manifest, false);
        out << "using " << data.demonstrations.size() << " demonstrations from " << manifest.string() << '\n';
        update_manifest(cfg, "generate", {manifest}, {{"demonstrations", data.demonstrations.size()}}, started);
        return kExitOk;
    }
    const auto data = generate_dataset(cfg);
    save_dataset(data, manifest);
    out << "wrote " << data.demonstrations.size() << " trajectories (" << data.sample_count() << " samples) to "
        << manifest.string() << '\n';
    std::vector<fs::path> files{manifest};
    for (std::size_t i = 0; i < data.demonstrations.size(); ++i)
        files.push_back(manifest.parent_path() / (manifest.stem().string() + "_" + std::to_string(i) + ".csv"));
    update_manifest(cfg, "generate", files,
                    {{"demonstrations", data.demonstrations.size()}, {"samples", data.sample_count()}}, started);
    return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
    const std::string started = utc_now();
    ensure_dir(cfg.output_dir);
    const auto data = load_dataset(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    TrainOutcome res;
    try {
        res = train_model(cfg, data);
    } catch (const StructuralInfeasibility& e) {
        out << "structurally infeasible: " << e.what() << '\n';
        for (const auto& o : e.offenders())
            out << "  " << (o.safety ? "safety" : "stability") << " at [" << o.state.transpose() << "] bound "
                << o.bound << '\n';
        update_manifest(cfg, "train", {}, {{"status", "infeasible"}, {"offenders", e.offenders().size()}}, started);
        return kExitInfeasible;
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const fs::path model_path = cfg.output_dir / "model.json";
    const fs::path log_path = cfg.output_dir / "solver.log";
    const fs::path samples_path = cfg.output_dir / "samples.csv";
    const fs::path summary_path = cfg.output_dir / "train_summary.json";
    save_model(res.model, model_path);
    write_solver_log(res.solution, log_path);
    write_samples_csv(res.samples, samples_path);
    json summary = solution_summary(res.solution);
    summary["rounds"] = res.rounds;
    summary["fallback_coefficients"] = res.fallback;
    summary["sampling_passes"] = res.sampling_passes;
    summary["grid_min_slack"] = res.grid_min_slack;
    summary["training_pairs"] = res.problem.features.rows();
    summary["constraints"] = res.problem.constraints.size();
    summary["weight_norm"] = res.model.output_weights.norm();
    summary["output_bound_holds"] = res.model.output_bound_holds();
    write_json(summary, summary_path);

    out << "status " << to_string(res.solution.status) << ", objective " << res.solution.objective << ", "
        << res.problem.constraints.size() << " constraints, " << res.solution.iterations << " iterations, "
        << res.rounds << " round(s), " << seconds << " s\n";
    json msum = summary;
    msum["seconds"] = seconds;
    update_manifest(cfg, "train", {model_path, log_path, samples_path, summary_path}, msum, started);
    return exit_code_for(res.solution.status);
}

int cmd_verify(const RunConfig& cfg, const std::optional<fs::path>& model_path, std::ostream& out) {
    const std::string started = utc_now();
    ensure_dir(cfg.output_dir);
    const ElmModel model = load_model(model_path.value_or(cfg.output_dir / "model.json"));
    const auto data = load_dataset(cfg);
    if (model.dims.n != data.dims()) throw InvalidInput("model state dimension does not match the dataset");

    ConstraintSpecs specs;
    specs.safety = cfg.safety_spec();
    specs.stability = cfg.stability_spec(data.target);
    specs.risk = cfg.risk;
    specs.sigma = cfg.sigma;

    const auto report = monte_carlo_verify(model, specs.safety, specs.stability, nominal_starts(data), cfg.rollout);
    const fs::path dir = cfg.output_dir / "verify";
    write_report(report, dir);

    const fs::path samples_path = cfg.output_dir / "samples.csv";
    SampleSet states;
    if (fs::exists(samples_path)) states = read_samples_csv(samples_path);
    if (states.points.empty()) {
        for (const auto& d : data.demonstrations)
            for (Eigen::Index k = 0; k < d.rows(); ++k) states.points.push_back(d.row(k).transpose());
    }
    const auto audit = one_step_constraint_audit(model, specs, states);
    const fs::path audit_path = cfg.output_dir / "audit.csv";
    write_audit_csv(audit, audit_path);

    json summary{{"runs", cfg.rollout.mc_runs},
                 {"violation_count", report.violation_count},
                 {"converged_count", report.converged_count},
                 {"diverged_count", report.diverged_count},
                 {"max_final_distance", report.max_final_distance},
                 {"mean_steps_to_converge", report.mean_steps_to_converge},
                 {"min_barrier", report.min_barrier},
                 {"lyapunov_exceedances", report.lyapunov_exceedances},
                 {"audit_states", audit.rows.size()},
                 {"audit_safety_failures", audit.safety_failures},
                 {"audit_stability_failures", audit.stability_failures}};
    const fs::path summary_path = cfg.output_dir / "verify_summary.json";
    write_json(summary, summary_path);
    out << report.violation_count << " violation(s) in " << cfg.rollout.mc_runs << " runs, " << report.converged_count
        << " converged (max final distance " << report.max_final_distance << "); audit failures "
        << audit.safety_failures << " safety, " << audit.stability_failures << " stability\n";
    update_manifest(cfg, "verify", {dir / "summary.json", audit_path, summary_path}, summary, started);
    const int violations = report.violation_count + audit.safety_failures + audit.stability_failures;
    return violations == 0 ? kExitOk : kExitViolations;
}

Mat ellipse_boundary(const SafetySpec& safety, int count) {
    // x = c + L^-T u with A = L L^T and |u| = 1 gives (x-c)^T A (x-c) = 1.
    const Mat L = safety.A.llt().matrixL();
    const Mat T = L.transpose().inverse();
    Mat out(count, 2);
    for (int i = 0; i < count; ++i) {
        const double t = 2.0 * M_PI * i / count;
        Vec u(2);
        u << std::cos(t), std::sin(t);
        out.row(i) = (safety.center + T * u).transpose();
    }
    return out;
}

namespace {

void write_series(const Mat& states, double period, const Vec& shift, const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << std::setprecision(17) << "t";
    for (Eigen::Index c = 0; c < states.cols(); ++c) os << ",x" << c + 1;
    os << '\n';
    for (Eigen::Index r = 0; r < states.rows(); ++r) {
        os << r * period;
        for (Eigen::Index c = 0; c < states.cols(); ++c) os << ',' << states(r, c) + shift[c];
        os << '\n';
    }
}

}  // namespace

int cmd_export(const RunConfig& cfg, const std::optional<fs::path>& model_path, std::ostream& out) {
    const std::string started = utc_now();
    const fs::path dir = cfg.output_dir / "export";
    ensure_dir(dir);
    const ElmModel model = load_model(model_path.value_or(cfg.output_dir / "model.json"));
    const auto data = load_dataset(cfg);
    const SafetySpec safety = cfg.safety_spec();
    const StabilitySpec stability = cfg.stability_spec(data.target);
    const Vec shift = data.translated ? data.shift : Vec::Zero(data.dims());

    std::vector<fs::path> files;
    {
        SafetySpec shifted = safety;
        shifted.center += shift;
        const Mat pts = ellipse_boundary(shifted, 360);
        const fs::path p = dir / "ellipse.csv";
        std::ofstream os(p);
        if (!os) throw IoError("cannot write " + p.string());
        os << std::setprecision(17) << "x1,x2\n";
        for (Eigen::Index r = 0; r < pts.rows(); ++r) os << pts(r, 0) << ',' << pts(r, 1) << '\n';
        files.push_back(p);
    }
    const auto starts = nominal_starts(data);
    RolloutConfig rc = cfg.rollout;
    rc.noise = false;
    for (std::size_t i = 0; i < data.demonstrations.size(); ++i) {
        const fs::path demo = dir / ("demo_" + std::to_string(i) + ".csv");
        write_series(data.demonstrations[i], data.period, shift, demo);
        const auto traj = rollout(model, starts[i], stability.equilibrium, rc);
        const fs::path rep = dir / ("reproduced_" + std::to_string(i) + ".csv");
        write_series(traj.states, data.period, shift, rep);
        files.push_back(demo);
        files.push_back(rep);
    }
    out << "exported " << files.size() << " files to " << dir.string() << '\n';
    update_manifest(cfg, "export", files, {{"files", files.size()}}, started);
    return kExitOk;
}

int cmd_all(const RunConfig& cfg, std::ostream& out) {
    if (int rc = cmd_generate(cfg, out)) return rc;
    if (int rc = cmd_train(cfg, out)) return rc;
    const int verify_rc = cmd_verify(cfg, std::nullopt, out);
    if (int rc = cmd_export(cfg, std::nullopt, out)) return rc;
    return verify_rc;
}

}  // namespace safe_sysid
