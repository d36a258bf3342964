#pragma once

#include <optional>
#include <string>
#include <vector>

#include "safe_sysid/constraints.hpp"
#include "safe_sysid/elm.hpp"
#include "safe_sysid/sampler.hpp"

namespace safe_sysid {

/// min  c_d * sum_k ||x_{k+1} - W^T g_k||^2 + mu_w ||W||_F^2,  c_d = 1 / (2 sigma^2)
/// s.t. every QuadConstraint.
struct QcqpProblem {
    Mat features;  // T x (n_h + 1)
    Mat targets;   // T x n
    double sigma = 0.02;
    double mu_w = 0.01;
    std::vector<QuadConstraint> constraints;

    int feature_length() const { return static_cast<int>(features.cols()); }
    int state_dim() const { return static_cast<int>(targets.cols()); }
    void validate() const;
    double objective(const Mat& weights) const;
};

struct SolverConfig {
    double tol_feas = 1e-8;
    double tol_gap = 1e-8;
    int max_iters = 200;
    double step_backtrack = 0.5;
    double barrier_growth = 20.0;

    void validate() const;
};

enum class SolveStatus { optimal, infeasible, max_iters };

const char* to_string(SolveStatus status);

struct InfeasibilityReport {
    /// Phase-one minimum of max_i (q_i - bound_i); positive means no strictly feasible W.
    double min_max_violation = 0.0;
    /// Dual value min_W sum_i lambda_i (q_i(W) - bound_i) with sum lambda = 1;
    /// positive certifies infeasibility.
    double farkas_value = 0.0;
    Vec multipliers;
    Vec violations;  // q_i - bound_i at the phase-one point
};

struct Solution {
    Mat weights;
    double objective = 0.0;
    double max_constraint_violation = 0.0;
    int iterations = 0;
    SolveStatus status = SolveStatus::max_iters;

    double kkt_residual = 0.0;      // ||grad f + sum lambda_i grad q_i|| (equality-projected)
    double gradient_norm = 0.0;     // ||grad f|| at the solution
    double complementarity = 0.0;   // max_i lambda_i * (bound_i - q_i)
    Vec multipliers;                // one per constraint; zero for equality-pinned rows
    std::vector<std::string> log;   // "iter objective gap max_violation"
    std::optional<InfeasibilityReport> infeasibility;
};

struct FeasibilityReport {
    double max_violation = 0.0;  // max(0, max_i q_i - bound_i)
    Vec residuals;               // q_i - bound_i
};

FeasibilityReport check_feasibility(const Mat& weights, const QcqpProblem& problem);

/// Minimiser of the objective alone (normal equations).
Mat ridge_solution(const QcqpProblem& problem);

/// Primal log-barrier interior-point method. Constraints are handled through
/// the Cholesky factor of their shape (||L^T d||^2 <= bound, a second-order
/// cone with fixed radius sqrt(bound)). Rows with bound == 0 pin W^T g = offset
/// and are eliminated as equalities. Starts from the ridge solution, running a
/// phase-one problem when that point is not strictly feasible.
Solution solve(const QcqpProblem& problem, const SolverConfig& config = {});

struct AssembleOptions {
    double mu_w = 0.01;
    double objective_sigma = 0.02;
    /// Resolution used for the sampling margins (0 disables them).
    double margin_tau = 0.0;
    /// Weights whose predicted moments set the variance-floor coefficient per
    /// point. Without them the W-independent minimum variance is used.
    std::optional<Mat> reference_weights;
    /// Per unique sample point coefficients; override the reference when set.
    std::optional<std::vector<double>> safety_coeffs;
    std::optional<std::vector<double>> stability_coeffs;
};

/// Unique sample points in first-seen order.
std::vector<Vec> unique_points(const SampleSet& samples);

/// Builds the objective from training pairs and one safety plus one stability
/// constraint per unique sample point. Throws StructuralInfeasibility when any
/// bound is negative.
QcqpProblem assemble(const TrainingPairs& data, const ElmModel& model, const ConstraintSpecs& specs,
                     const SampleSet& samples, const AssembleOptions& options);

}  // namespace safe_sysid
