#pragma once

#include <optional>

#include "safe_sysid/elm.hpp"

namespace safe_sysid {

/// Ellipsoidal safe set h(x) = 1 - (x - center)^T A (x - center) >= 0.
struct SafetySpec {
    Mat A;
    Vec center;
    double gamma = 0.9;  // class-K rate, eta(h) = gamma h
    double zeta = 0.0;   // chance-constraint threshold

    void validate() const;
};

/// Quadratic Lyapunov candidate V(x) = (x - x*)^T P (x - x*).
struct StabilitySpec {
    Mat P;
    Vec equilibrium;
    double rho = 0.01;   // beta(V) = rho V
    double delta = 0.0;  // chance-constraint threshold

    void validate() const;
};

struct RiskSpec {
    double p_k = 0.9;
    double xi = 1.0;

    void validate() const;
};

struct MomentPair {
    double mean = 0.0;
    double variance = 0.0;
};

enum class ConstraintTag { safety, stability };

/// ||shape^{1/2} (W^T feature - offset)||^2 <= bound, convex in W.
struct QuadConstraint {
    Mat shape;
    Vec offset;
    double bound = 0.0;  // Gamma minus the sampling margin
    Vec feature;
    ConstraintTag tag = ConstraintTag::safety;
    Vec sample_state;
    double risk_coeff = 0.0;  // effective c used for shape and bound
    double margin = 0.0;

    /// Left-hand side minus bound at the given weights.
    double residual(const Mat& weights) const;
    bool infeasible_at_point() const { return bound < 0.0; }
};

double barrier_value(const SafetySpec& spec, const Vec& x);
double lyapunov_value(const StabilitySpec& spec, const Vec& x);

/// Rotated-ellipse matrix with semi-axes iota1 (along angle alpha) and iota2.
Mat ellipse_matrix(double iota1, double iota2, double alpha);

/// Mean and variance of Delta h + gamma h under x_{k+1} = mean + N(0, sigma^2 I).
MomentPair safety_moments(const SafetySpec& spec, const Vec& predicted_mean, double sigma,
                          const Vec& x_now);
/// Mean and variance of Delta V + rho V under the same noise model.
MomentPair stability_moments(const StabilitySpec& spec, const Vec& predicted_mean, double sigma,
                             const Vec& x_now);

/// c(p) = sqrt(2) erfinv(2p - 1), the standard-normal quantile.
double risk_coefficient(double p);

struct RiskCoefficient {
    double value = 0.0;  // xi * c(p), or c(p) when the floor is inactive
    double xi = 1.0;
    bool capped = false;  // zero variance; xi clipped at kMaxXi
};

inline constexpr double kMaxXi = 1e6;

/// Variance-floor tightening: returns c(p) when variance >= 1, else xi * c(p)
/// with xi = max(risk.xi, 1/sqrt(variance)) so that xi^2 * variance >= 1.
RiskCoefficient apply_variance_floor(const MomentPair& moments, const RiskSpec& risk);

/// Smallest variance either constraint family can have for any W: 2 sigma^4 tr(M^2).
double minimum_variance(const Mat& M, double sigma);

/// Safety constraint at a sample point. The risk coefficient comes from
/// apply_variance_floor on `reference` moments; without a reference the
/// W-independent minimum variance is used, which is the most conservative choice.
QuadConstraint build_safety_constraint(const SafetySpec& spec, const RiskSpec& risk, double sigma,
                                       const Vec& sample_state, const Vec& feature, double margin,
                                       const std::optional<MomentPair>& reference = std::nullopt);
QuadConstraint build_stability_constraint(const StabilitySpec& spec, const RiskSpec& risk,
                                          double sigma, const Vec& sample_state,
                                          const Vec& feature, double margin,
                                          const std::optional<MomentPair>& reference = std::nullopt);

/// Same as above with an explicit (already floored) risk coefficient c >= 0.
QuadConstraint safety_constraint_with_coefficient(const SafetySpec& spec, double coeff,
                                                  double sigma, const Vec& sample_state,
                                                  const Vec& feature, double margin);
QuadConstraint stability_constraint_with_coefficient(const StabilitySpec& spec, double coeff,
                                                     double sigma, const Vec& sample_state,
                                                     const Vec& feature, double margin);

struct SamplingMargins {
    double safety = 0.0;
    double stability = 0.0;
};

/// Sampling-resolution tightening for a grid point x_sample whose cell has
/// Euclidean radius tau/2.
///
/// chi   = (lambda_max{W S W^T} sqrt(n_h+1) + W_bar lambda_max{S} |offset|) g_bar
/// Upsilon = (1 - rate) lambda_max{M} (|x| + |offset|)
/// margin = tau (chi + Upsilon)
///
/// lambda_max{W S W^T} is replaced by W_bar^2 lambda_max{S} unless explicit
/// weights are given, which keeps the right-hand sides independent of the
/// decision variable. |x| is bounded over the cell by |x_sample| + tau/2.
SamplingMargins sampling_margins(const ElmModel& model, const SafetySpec& safety,
                                 const StabilitySpec& stability, const RiskSpec& risk, double sigma,
                                 const Vec& x_sample, double tau,
                                 const std::optional<Mat>& weights = std::nullopt);

/// Tightened shape M + 4 sigma^2 c M^2.
Mat tightened_shape(const Mat& M, double sigma, double coeff);

double lambda_max(const Mat& symmetric);
double lambda_min(const Mat& symmetric);

}  // namespace safe_sysid
