#include "safe_sysid/constraints.hpp"

#include <cmath>

#include <boost/math/special_functions/erf.hpp>

#include "safe_sysid/error.hpp"

namespace safe_sysid {

namespace {

void require_spd(const Mat& M, const char* name) {
    if (M.rows() != M.cols()) throw InvalidInput(std::string(name) + " must be square");
    if (!M.allFinite()) throw InvalidInput(std::string(name) + " has non-finite entries");
    const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
    if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw InvalidInput(std::string(name) + " must be symmetric");
    if (!(lambda_min(M) > 0.0)) throw InvalidInput(std::string(name) + " must be positive definite");
}

double quad(const Mat& M, const Vec& d) { return d.dot(M * d); }

}  // namespace

void SafetySpec::validate() const {
    require_spd(A, "A");
    if (center.size() != A.rows()) throw InvalidInput("safety center dimension mismatch");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidInput("gamma must lie in (0, 1]");
    if (!(zeta >= 0.0)) throw InvalidInput("zeta must be non-negative");
}

void StabilitySpec::validate() const {
    require_spd(P, "P");
    if (equilibrium.size() != P.rows()) throw InvalidInput("equilibrium dimension mismatch");
    if (!(rho > 0.0 && rho <= 1.0)) throw InvalidInput("rho must lie in (0, 1]");
    if (!(delta >= 0.0)) throw InvalidInput("delta must be non-negative");
}

void RiskSpec::validate() const {
    if (!(p_k > 0.0 && p_k < 1.0)) throw InvalidInput("p_k must lie in (0, 1)");
    if (!(xi >= 1.0)) throw InvalidInput("xi must be >= 1");
}

double QuadConstraint::residual(const Mat& weights) const {
    const Vec d = weights.transpose() * feature - offset;
    return quad(shape, d) - bound;
}

double lambda_max(const Mat& symmetric) {
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetric, Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
}

double lambda_min(const Mat& symmetric) {
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetric, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

double barrier_value(const SafetySpec& spec, const Vec& x) {
    if (x.size() != spec.center.size()) throw InvalidInput("state dimension mismatch");
    return 1.0 - quad(spec.A, x - spec.center);
}

double lyapunov_value(const StabilitySpec& spec, const Vec& x) {
    if (x.size() != spec.equilibrium.size()) throw InvalidInput("state dimension mismatch");
    return quad(spec.P, x - spec.equilibrium);
}

Mat ellipse_matrix(double iota1, double iota2, double alpha) {
    if (!(iota1 > 0.0) || !(iota2 > 0.0)) throw InvalidInput("ellipse axes must be positive");
    const double c = std::cos(alpha);
    const double s = std::sin(alpha);
    const double a1 = 1.0 / (iota1 * iota1);
    const double a2 = 1.0 / (iota2 * iota2);
    Mat A(2, 2);
    A(0, 0) = c * c * a1 + s * s * a2;
    A(1, 1) = s * s * a1 + c * c * a2;
    A(0, 1) = A(1, 0) = c * s * (a1 - a2);
    return A;
}

MomentPair safety_moments(const SafetySpec& spec, const Vec& predicted_mean, double sigma,
                          const Vec& x_now) {
    if (!(sigma >= 0.0)) throw InvalidInput("sigma must be non-negative");
    const Vec d = predicted_mean - spec.center;
    const double s2 = sigma * sigma;
    MomentPair out;
    out.mean = 1.0 - quad(spec.A, d) - s2 * spec.A.trace() -
               (1.0 - spec.gamma) * barrier_value(spec, x_now);
    out.variance = 4.0 * s2 * (spec.A * d).squaredNorm() + 2.0 * s2 * s2 * (spec.A * spec.A).trace();
    return out;
}

MomentPair stability_moments(const StabilitySpec& spec, const Vec& predicted_mean, double sigma,
                             const Vec& x_now) {
    if (!(sigma >= 0.0)) throw InvalidInput("sigma must be non-negative");
    const Vec d = predicted_mean - spec.equilibrium;
    const double s2 = sigma * sigma;
    MomentPair out;
    out.mean = quad(spec.P, d) + s2 * spec.P.trace() - (1.0 - spec.rho) * lyapunov_value(spec, x_now);
    out.variance = 4.0 * s2 * (spec.P * d).squaredNorm() + 2.0 * s2 * s2 * (spec.P * spec.P).trace();
    return out;
}

double risk_coefficient(double p) {
    if (!(p > 0.0 && p < 1.0)) throw InvalidInput("risk probability must lie in (0, 1)");
    if (p == 0.5) return 0.0;
    return std::sqrt(2.0) * boost::math::erf_inv(2.0 * p - 1.0);
}

RiskCoefficient apply_variance_floor(const MomentPair& moments, const RiskSpec& risk) {
    if (!(moments.variance >= 0.0)) throw InvalidInput("variance must be non-negative");
    const double c = risk_coefficient(risk.p_k);
    RiskCoefficient out;
    if (c == 0.0) return out;
    if (moments.variance >= 1.0) {
        out.value = c;
        return out;
    }
    double xi = risk.xi;
    if (moments.variance > 0.0) xi = std::max(xi, 1.0 / std::sqrt(moments.variance));
    if (moments.variance == 0.0 || xi > kMaxXi) {
        xi = kMaxXi;
        out.capped = true;
    }
    out.xi = xi;
    out.value = xi * c;
    return out;
}

double minimum_variance(const Mat& M, double sigma) {
    const double s2 = sigma * sigma;
    return 2.0 * s2 * s2 * (M * M).trace();
}

Mat tightened_shape(const Mat& M, double sigma, double coeff) {
    Mat S = M + 4.0 * sigma * sigma * coeff * (M * M);
    return 0.5 * (S + S.transpose());
}

QuadConstraint safety_constraint_with_coefficient(const SafetySpec& spec, double coeff,
                                                  double sigma, const Vec& sample_state,
                                                  const Vec& feature, double margin) {
    if (!(coeff >= 0.0)) throw UnsupportedRisk("risk coefficient must be non-negative");
    if (!(margin >= 0.0)) throw InvalidInput("margin must be non-negative");
    const double s2 = sigma * sigma;
    QuadConstraint q;
    q.shape = tightened_shape(spec.A, sigma, coeff);
    q.offset = spec.center;
    const double gamma_cb = 1.0 - spec.zeta - s2 * spec.A.trace() -
                            (1.0 - spec.gamma) * barrier_value(spec, sample_state) -
                            2.0 * s2 * s2 * coeff * (spec.A * spec.A).trace();
    q.bound = gamma_cb - margin;
    q.feature = feature;
    q.tag = ConstraintTag::safety;
    q.sample_state = sample_state;
    q.risk_coeff = coeff;
    q.margin = margin;
    return q;
}

QuadConstraint stability_constraint_with_coefficient(const StabilitySpec& spec, double coeff,
                                                     double sigma, const Vec& sample_state,
                                                     const Vec& feature, double margin) {
    if (!(coeff >= 0.0)) throw UnsupportedRisk("risk coefficient must be non-negative");
    if (!(margin >= 0.0)) throw InvalidInput("margin must be non-negative");
    const double s2 = sigma * sigma;
    QuadConstraint q;
    q.shape = tightened_shape(spec.P, sigma, coeff);
    q.offset = spec.equilibrium;
    const double gamma_cl = spec.delta - s2 * spec.P.trace() +
                            (1.0 - spec.rho) * lyapunov_value(spec, sample_state) -
                            2.0 * s2 * s2 * coeff * (spec.P * spec.P).trace();
    q.bound = gamma_cl - margin;
    q.feature = feature;
    q.tag = ConstraintTag::stability;
    q.sample_state = sample_state;
    q.risk_coeff = coeff;
    q.margin = margin;
    return q;
}

QuadConstraint build_safety_constraint(const SafetySpec& spec, const RiskSpec& risk, double sigma,
                                       const Vec& sample_state, const Vec& feature, double margin,
                                       const std::optional<MomentPair>& reference) {
    if (risk.p_k < 0.5) throw UnsupportedRisk("p_k < 0.5 is not supported");
    const MomentPair moments = reference.value_or(MomentPair{0.0, minimum_variance(spec.A, sigma)});
    const auto coeff = apply_variance_floor(moments, risk);
    return safety_constraint_with_coefficient(spec, coeff.value, sigma, sample_state, feature, margin);
}

QuadConstraint build_stability_constraint(const StabilitySpec& spec, const RiskSpec& risk,
                                          double sigma, const Vec& sample_state,
                                          const Vec& feature, double margin,
                                          const std::optional<MomentPair>& reference) {
    if (risk.p_k < 0.5) throw UnsupportedRisk("p_k < 0.5 is not supported");
    const MomentPair moments = reference.value_or(MomentPair{0.0, minimum_variance(spec.P, sigma)});
    const auto coeff = apply_variance_floor(moments, risk);
    return stability_constraint_with_coefficient(spec, coeff.value, sigma, sample_state, feature,
                                                 margin);
}

SamplingMargins sampling_margins(const ElmModel& model, const SafetySpec& safety,
                                 const StabilitySpec& stability, const RiskSpec& risk, double sigma,
                                 const Vec& x_sample, double tau, const std::optional<Mat>& weights) {
    if (!(tau >= 0.0)) throw InvalidInput("tau must be non-negative");
    if (tau == 0.0) return {};
    if (risk.p_k < 0.5) throw UnsupportedRisk("p_k < 0.5 is not supported");

    // Largest shapes any sample point can receive: floor evaluated at the minimum variance.
    const double c_safe =
        apply_variance_floor({0.0, minimum_variance(safety.A, sigma)}, risk).value;
    const double c_stab =
        apply_variance_floor({0.0, minimum_variance(stability.P, sigma)}, risk).value;
    const Mat shape_a = tightened_shape(safety.A, sigma, c_safe);
    const Mat shape_p = tightened_shape(stability.P, sigma, c_stab);
    const double lam_a = lambda_max(shape_a);
    const double lam_p = lambda_max(shape_p);

    double w_bar = model.weight_bound_out;
    double lam_m = w_bar * w_bar * lam_a;
    double lam_h = w_bar * w_bar * lam_p;
    if (weights) {
        w_bar = weights->norm();
        lam_m = lambda_max(*weights * shape_a * weights->transpose());
        lam_h = lambda_max(*weights * shape_p * weights->transpose());
    }

    const double g_bar = lipschitz_feature_bound(model);
    const double root = std::sqrt(static_cast<double>(model.dims.n_h + 1));
    const double x_norm = x_sample.norm() + 0.5 * tau;
    const double c_norm = safety.center.norm();
    const double e_norm = stability.equilibrium.norm();

    const double chi_b = (lam_m * root + w_bar * lam_a * c_norm) * g_bar;
    const double ups_b = (1.0 - safety.gamma) * lambda_max(safety.A) * (x_norm + c_norm);
    const double chi_l = (lam_h * root + w_bar * lam_p * e_norm) * g_bar;
    const double ups_l = (1.0 - stability.rho) * lambda_max(stability.P) * (x_norm + e_norm);
    return {tau * (chi_b + ups_b), tau * (chi_l + ups_l)};
}

}  // namespace safe_sysid
