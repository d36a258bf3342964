#include "safe_sysid/rollout.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>

#include <json.hpp>

#include "safe_sysid/error.hpp"

namespace safe_sysid {

namespace {

constexpr double kDivergence = 1e12;

std::mt19937_64 run_generator(std::uint64_t master, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

Vec uniform_ball(std::mt19937_64& rng, int n, double radius) {
    if (radius == 0.0) return Vec::Zero(n);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Vec d(n);
    do {
        for (int i = 0; i < n; ++i) d[i] = gauss(rng);
    } while (d.norm() == 0.0);
    return d.normalized() * radius * std::pow(unif(rng), 1.0 / n);
}

}  // namespace

void RolloutConfig::validate() const {
    if (horizon < 0) throw InvalidInput("horizon must be non-negative");
    if (mc_runs < 1) throw InvalidInput("mc_runs must be at least 1");
    if (!(initial_perturbation_radius >= 0.0)) throw InvalidInput("perturbation radius must be non-negative");
    if (!(convergence_radius > 0.0)) throw InvalidInput("convergence radius must be positive");
}

Trajectory rollout(const ElmModel& model, const Vec& x0, const Vec& equilibrium, const RolloutConfig& config,
                   std::uint64_t seed) {
    if (!x0.allFinite()) throw InvalidInput("rollout start must be finite");
    if (x0.size() != model.dims.n || equilibrium.size() != model.dims.n)
        throw InvalidInput("rollout state dimension does not match the model");
    if (config.horizon < 0) throw InvalidInput("horizon must be non-negative");
    Trajectory out;
    out.states.resize(config.horizon + 1, model.dims.n);
    out.states.row(0) = x0.transpose();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec x = x0;
    int k = 0;
    for (; k < config.horizon; ++k) {
        Vec next = predict_mean(model, InputVector::from_state(x, equilibrium));
        if (config.noise && model.sigma > 0.0)
            for (Eigen::Index i = 0; i < next.size(); ++i) next[i] += model.sigma * gauss(rng);
        if (!next.allFinite() || next.cwiseAbs().maxCoeff() > kDivergence) {
            out.diverged = true;
            break;
        }
        x = next;
        out.states.row(k + 1) = x.transpose();
    }
    if (out.diverged) out.states.conservativeResize(k + 1, Eigen::NoChange);
    return out;
}

RunResult evaluate_run(const Trajectory& traj, const SafetySpec& safety, const StabilitySpec& stability,
                       double convergence_radius) {
    RunResult r;
    const Mat& X = traj.states;
    r.x0 = X.row(0).transpose();
    r.diverged = traj.diverged;
    r.min_barrier = std::numeric_limits<double>::infinity();
    r.max_lyapunov_step = -std::numeric_limits<double>::infinity();
    int last_outside = -1;
    for (Eigen::Index k = 0; k < X.rows(); ++k) {
        const Vec x = X.row(k).transpose();
        r.min_barrier = std::min(r.min_barrier, barrier_value(safety, x));
        if ((x - stability.equilibrium).norm() > convergence_radius) last_outside = static_cast<int>(k);
        if (k + 1 < X.rows()) {
            const double v = lyapunov_value(stability, x);
            const double vn = lyapunov_value(stability, X.row(k + 1).transpose());
            r.max_lyapunov_step = std::max(r.max_lyapunov_step, vn - v + stability.rho * v);
        }
    }
    if (X.rows() < 2) r.max_lyapunov_step = 0.0;
    if (traj.diverged) r.min_barrier = -std::numeric_limits<double>::infinity();
    r.violation = r.min_barrier < 0.0;
    r.final_distance = (X.bottomRows(1).transpose() - stability.equilibrium).norm();
    r.converged = !traj.diverged && r.final_distance <= convergence_radius;
    if (r.converged) r.steps_to_converge = last_outside + 1;
    r.trajectory = traj;
    return r;
}

RolloutReport monte_carlo_verify(const ElmModel& model, const SafetySpec& safety, const StabilitySpec& stability,
                                 const std::vector<Vec>& nominal_x0, const RolloutConfig& config) {
    config.validate();
    safety.validate();
    stability.validate();
    if (nominal_x0.empty()) throw InvalidInput("no nominal initial conditions");
    for (const auto& x : nominal_x0)
        if (x.size() != model.dims.n) throw InvalidInput("initial condition dimension does not match the model");

    RolloutReport rep;
    rep.runs.resize(config.mc_runs);
    std::vector<int> exceed(config.mc_runs, 0);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < config.mc_runs; ++i) {
        auto rng = run_generator(config.seed, static_cast<std::uint64_t>(i));
        const Vec x0 = nominal_x0[i % nominal_x0.size()] +
                       uniform_ball(rng, model.dims.n, config.initial_perturbation_radius);
        const auto traj = rollout(model, x0, stability.equilibrium, config, rng());
        rep.runs[i] = evaluate_run(traj, safety, stability, config.convergence_radius);
        const Mat& X = traj.states;
        for (Eigen::Index k = 0; k + 1 < X.rows(); ++k) {
            const double v = lyapunov_value(stability, X.row(k).transpose());
            const double vn = lyapunov_value(stability, X.row(k + 1).transpose());
            if (vn - v + stability.rho * v > stability.delta) ++exceed[i];
        }
    }

    double steps = 0.0;
    rep.min_barrier = std::numeric_limits<double>::infinity();
    rep.max_lyapunov_step = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < config.mc_runs; ++i) {
        const auto& r = rep.runs[i];
        rep.violation_count += r.violation ? 1 : 0;
        rep.diverged_count += r.diverged ? 1 : 0;
        if (r.converged) {
            ++rep.converged_count;
            steps += r.steps_to_converge;
        }
        rep.max_final_distance = std::max(rep.max_final_distance, r.final_distance);
        rep.min_barrier = std::min(rep.min_barrier, r.min_barrier);
        rep.max_lyapunov_step = std::max(rep.max_lyapunov_step, r.max_lyapunov_step);
        rep.lyapunov_exceedances += exceed[i];
    }
    rep.mean_steps_to_converge = rep.converged_count ? steps / rep.converged_count : 0.0;
    return rep;
}

AuditTable one_step_constraint_audit(const ElmModel& model, const ConstraintSpecs& specs, const SampleSet& states,
                                     double tol) {
    if (states.count() == 0) throw InvalidInput("audit needs at least one state");
    specs.risk.validate();
    if (specs.risk.p_k < 0.5) throw UnsupportedRisk("p_k < 0.5 is not supported");
    const auto count = static_cast<int>(states.count());
    AuditTable table;
    table.rows.resize(count);
    const Vec& eq = specs.stability.equilibrium;
#pragma omp parallel for schedule(static)
    for (int k = 0; k < count; ++k) {
        AuditRow& row = table.rows[k];
        const Vec& x = states.points[k];
        const Vec g = feature_map(model, InputVector::from_state(x, eq));
        const Vec y = model.output_weights.transpose() * g;
        row.state = x;
        row.h = barrier_value(specs.safety, x);
        row.barrier_step = barrier_value(specs.safety, y) - row.h + specs.safety.gamma * row.h;
        row.V = lyapunov_value(specs.stability, x);
        row.lyapunov_step = lyapunov_value(specs.stability, y) - row.V + specs.stability.rho * row.V;
        const auto ms = safety_moments(specs.safety, y, specs.sigma, x);
        const auto ml = stability_moments(specs.stability, y, specs.sigma, x);
        row.safety_slack =
            -build_safety_constraint(specs.safety, specs.risk, specs.sigma, x, g, 0.0, ms).residual(model.output_weights);
        row.stability_slack = -build_stability_constraint(specs.stability, specs.risk, specs.sigma, x, g, 0.0, ml)
                                   .residual(model.output_weights);
        row.safety_failure = row.barrier_step < -tol;
        row.stability_failure = row.lyapunov_step > specs.stability.delta + tol;
    }
    for (const auto& r : table.rows) {
        table.safety_failures += r.safety_failure ? 1 : 0;
        table.stability_failures += r.stability_failure ? 1 : 0;
    }
    return table;
}

namespace {

std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

void write_matrix_csv(const Mat& m, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << std::setprecision(17);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        os << r;
        for (Eigen::Index c = 0; c < m.cols(); ++c) os << ',' << m(r, c);
        os << '\n';
    }
}

}  // namespace

void write_report(const RolloutReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    nlohmann::json runs = nlohmann::json::array();
    for (std::size_t i = 0; i < report.runs.size(); ++i) {
        const auto& r = report.runs[i];
        write_matrix_csv(r.trajectory.states, dir / (std::to_string(i) + ".csv"));
        runs.push_back({{"run_id", i},
                        {"x0", to_std(r.x0)},
                        {"min_barrier", r.min_barrier},
                        {"final_distance", r.final_distance},
                        {"violation", r.violation},
                        {"converged", r.converged},
                        {"diverged", r.diverged},
                        {"steps_to_converge", r.steps_to_converge},
                        {"max_lyapunov_step", r.max_lyapunov_step}});
    }
    nlohmann::json j{{"violation_count", report.violation_count},
                     {"converged_count", report.converged_count},
                     {"diverged_count", report.diverged_count},
                     {"max_final_distance", report.max_final_distance},
                     {"mean_steps_to_converge", report.mean_steps_to_converge},
                     {"min_barrier", report.min_barrier},
                     {"max_lyapunov_step", report.max_lyapunov_step},
                     {"lyapunov_exceedances", report.lyapunov_exceedances},
                     {"runs", runs}};
    std::ofstream os(dir / "summary.json");
    if (!os) throw IoError("cannot write " + (dir / "summary.json").string());
    os << j.dump(2) << '\n';
}

void write_audit_csv(const AuditTable& audit, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << std::setprecision(17);
    os << "state,h,barrier_step,V,lyapunov_step,safety_slack,stability_slack,safety_failure,stability_failure\n";
    for (const auto& r : audit.rows) {
        for (Eigen::Index i = 0; i < r.state.size(); ++i) os << (i ? " " : "") << r.state[i];
        os << ',' << r.h << ',' << r.barrier_step << ',' << r.V << ',' << r.lyapunov_step << ',' << r.safety_slack
           << ',' << r.stability_slack << ',' << r.safety_failure << ',' << r.stability_failure << '\n';
    }
}

}  // namespace safe_sysid
