#pragma once

// Data-parallel inner loops. Every kernel has an OpenMP version in
// `safe_sysid::kernels` and a plain serial reference in
// `safe_sysid::kernels::serial` used by the tests and the benchmark.
//
// Reductions are split into fixed-size chunks summed in index order, so the
// parallel results do not depend on the number of threads.

#include <span>
#include <vector>

#include "safe_sysid/constraints.hpp"
#include "safe_sysid/elm.hpp"

namespace safe_sysid::kernels {

inline constexpr int kChunk = 128;

/// Applies SAFE_SYSID_THREADS (when set) to the OpenMP runtime.
void configure_threads_from_env();
int thread_count();

/// Constraint data laid out for the barrier solver.
struct ConstraintBlock {
    Mat features;                // m x F, one g per row
    Mat offsets;                 // m x n
    std::vector<Mat> shapes;     // m of n x n
    std::vector<Mat> factors;    // lower Cholesky factor L, shape = L L^T
    Vec bounds;                  // m

    int size() const { return static_cast<int>(bounds.size()); }
    static ConstraintBlock from(std::span<const QuadConstraint> constraints);
};

/// Quadratic forms q_i(W) = ||L_i^T (W^T g_i - c_i)||^2 for every constraint.
Vec constraint_values(const ConstraintBlock& block, const Mat& weights);

struct BarrierTerms {
    double value = 0.0;  // sum of -log(bound - q + shift)
    Vec gradient;        // w.r.t. vec(W), column-major, length F*n
    Mat hessian;         // (F*n) x (F*n)
    bool feasible = true;
};

/// Log-barrier of bound_i + shift - q_i(W) and its derivatives w.r.t. vec(W).
/// With `with_shift`, also returns derivatives w.r.t. the shift appended as
/// the last coordinate (phase-one problems).
BarrierTerms barrier_terms(const ConstraintBlock& block, const Mat& weights, double shift,
                           bool with_shift);

/// Barrier value only; +inf when any slack is non-positive.
double barrier_value_only(const ConstraintBlock& block, const Mat& weights, double shift);

/// One feature row per input.
Mat feature_matrix(const ElmModel& model, std::span<const InputVector> inputs);

/// Mean one-step predictions for states x (rows), with e = x - equilibrium.
Mat predict_states(const ElmModel& model, const Mat& states, const Vec& equilibrium);

namespace serial {

Vec constraint_values(const ConstraintBlock& block, const Mat& weights);
BarrierTerms barrier_terms(const ConstraintBlock& block, const Mat& weights, double shift,
                           bool with_shift);
Mat feature_matrix(const ElmModel& model, std::span<const InputVector> inputs);
Mat predict_states(const ElmModel& model, const Mat& states, const Vec& equilibrium);

}  // namespace serial

}  // namespace safe_sysid::kernels
