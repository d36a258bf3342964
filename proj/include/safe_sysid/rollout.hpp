#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "safe_sysid/constraints.hpp"
#include "safe_sysid/elm.hpp"
#include "safe_sysid/sampler.hpp"

namespace safe_sysid {

struct RolloutConfig {
    int horizon = 600;
    bool noise = false;  // draw eps ~ N(0, model.sigma^2 I) each step
    double initial_perturbation_radius = 5e-4;
    int mc_runs = 100;
    double convergence_radius = 0.05;
    std::uint64_t seed = 1;

    void validate() const;
};

struct Trajectory {
    Mat states;  // (steps + 1) x n; shorter than horizon + 1 when diverged
    bool diverged = false;
};

/// Iterates x_{k+1} = W^T g([x_k; x_k - x*]) (+ eps when noise is on).
/// Stops early, flagging divergence, once a state is non-finite or exceeds 1e12.
Trajectory rollout(const ElmModel& model, const Vec& x0, const Vec& equilibrium, const RolloutConfig& config,
                   std::uint64_t seed = 0);

struct RunResult {
    Vec x0;
    double min_barrier = 0.0;
    double final_distance = 0.0;
    bool violation = false;  // min_barrier < 0
    bool converged = false;  // final_distance <= convergence_radius and not diverged
    bool diverged = false;
    int steps_to_converge = -1;  // first step after which the state stays in the convergence ball
    double max_lyapunov_step = 0.0;  // max_k V(x_{k+1}) - V(x_k) + rho V(x_k)
    Trajectory trajectory;
};

struct RolloutReport {
    std::vector<RunResult> runs;
    int violation_count = 0;
    int converged_count = 0;
    int diverged_count = 0;
    double max_final_distance = 0.0;
    double mean_steps_to_converge = 0.0;  // over converged runs
    double min_barrier = 0.0;
    double max_lyapunov_step = 0.0;
    int lyapunov_exceedances = 0;  // steps with Delta V + rho V > delta
};

/// Summary figures for one trajectory; shared by the Monte Carlo driver and tests.
RunResult evaluate_run(const Trajectory& traj, const SafetySpec& safety, const StabilitySpec& stability,
                       double convergence_radius);

/// Run i starts from nominal_x0[i % size] plus a point drawn uniformly from the
/// ball of radius initial_perturbation_radius, using a generator seeded by
/// (config.seed, i). Aggregates do not depend on the thread count.
RolloutReport monte_carlo_verify(const ElmModel& model, const SafetySpec& safety, const StabilitySpec& stability,
                                 const std::vector<Vec>& nominal_x0, const RolloutConfig& config);

struct AuditRow {
    Vec state;
    double h = 0.0;
    double barrier_step = 0.0;    // h(x+) - h(x) + gamma h(x)
    double V = 0.0;
    double lyapunov_step = 0.0;   // V(x+) - V(x) + rho V(x)
    double safety_slack = 0.0;    // Gamma_CB - q_CB at the model weights
    double stability_slack = 0.0;
    bool safety_failure = false;     // barrier_step < -tol
    bool stability_failure = false;  // lyapunov_step > delta + tol
};

struct AuditTable {
    std::vector<AuditRow> rows;
    int safety_failures = 0;
    int stability_failures = 0;
};

/// Evaluates both one-step inequalities at the mean prediction, and the
/// chance-constraint slacks with coefficients from the model's own moments.
AuditTable one_step_constraint_audit(const ElmModel& model, const ConstraintSpecs& specs, const SampleSet& states,
                                     double tol = 1e-8);

/// {run_id}.csv per run plus summary.json.
void write_report(const RolloutReport& report, const std::filesystem::path& dir);
void write_audit_csv(const AuditTable& audit, const std::filesystem::path& path);

}  // namespace safe_sysid
