#include "safe_sysid/qcqp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "safe_sysid/error.hpp"
#include "safe_sysid/kernels.hpp"

namespace safe_sysid {

namespace {

// |bound| at or below this is an equality pin W^T g = offset.
constexpr double kPinTol = 1e-12;
constexpr double kNewtonTol = 1e-10;
constexpr double kArmijo = 0.25;
// Smaller accepted steps only chase rounding noise in the barrier value.
constexpr double kMinStep = 1e-8;

// Below this the decrement is lost in the rounding of the barrier value itself.
double centering_tol(double phi) { return std::max(kNewtonTol, 1e-11 * std::abs(phi)); }

using kernels::ConstraintBlock;

Mat as_matrix(const Vec& w, int F, int n) { return Eigen::Map<const Mat>(w.data(), F, n); }
Vec as_vector(const Mat& W) { return Eigen::Map<const Vec>(W.data(), W.size()); }

// Solves H x = -g. Jacobi scaling first, since near-active constraints put
// entries of order 1/slack^2 on the diagonal; a small shift is added when H
// is singular.
Vec newton_direction(const Mat& H, const Vec& g) {
    Vec scale = H.diagonal().cwiseAbs().cwiseSqrt();
    for (Eigen::Index i = 0; i < scale.size(); ++i)
        if (!(scale[i] > 0.0)) scale[i] = 1.0;
    const Vec inv = scale.cwiseInverse();
    const Mat Hs = inv.asDiagonal() * H * inv.asDiagonal();
    const Vec gs = inv.cwiseProduct(g);
    for (double damp = 0.0; damp < 1.0; damp = damp == 0.0 ? 1e-12 : damp * 100.0) {
        Eigen::LLT<Mat> llt(damp == 0.0 ? Hs : Mat(Hs + damp * Mat::Identity(Hs.rows(), Hs.cols())));
        if (llt.info() != Eigen::Success) continue;
        Vec d = llt.solve(-gs);
        // One refinement step recovers digits lost to conditioning.
        d += llt.solve(-gs - Hs * d);
        if (d.allFinite()) return inv.cwiseProduct(d);
    }
    return -inv.cwiseProduct(gs);
}

// Lawson-Hanson: min ||A x - b|| subject to x >= 0.
Vec nnls(const Mat& A, const Vec& b) {
    const Eigen::Index k = A.cols();
    Vec x = Vec::Zero(k);
    std::vector<bool> passive(static_cast<std::size_t>(k), false);
    const double tol = 1e-12 * std::max(1.0, A.cwiseAbs().maxCoeff()) * std::max(1.0, b.norm());
    auto solve_passive = [&](Vec& z) {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index i = 0; i < k; ++i)
            if (passive[i]) idx.push_back(i);
        Mat Ap(A.rows(), static_cast<Eigen::Index>(idx.size()));
        for (std::size_t c = 0; c < idx.size(); ++c) Ap.col(static_cast<Eigen::Index>(c)) = A.col(idx[c]);
        const Vec zp = Ap.colPivHouseholderQr().solve(b);
        z.setZero(k);
        for (std::size_t c = 0; c < idx.size(); ++c) z[idx[c]] = zp[static_cast<Eigen::Index>(c)];
    };
    for (int outer = 0; outer < 3 * k + 10; ++outer) {
        const Vec w = A.transpose() * (b - A * x);
        Eigen::Index best = -1;
        double wmax = tol;
        for (Eigen::Index i = 0; i < k; ++i)
            if (!passive[i] && w[i] > wmax) {
                wmax = w[i];
                best = i;
            }
        if (best < 0) break;
        passive[best] = true;
        Vec z;
        for (int inner = 0; inner <= k; ++inner) {
            solve_passive(z);
            bool ok = true;
            for (Eigen::Index i = 0; i < k; ++i)
                if (passive[i] && z[i] <= 0.0) ok = false;
            if (ok) break;
            double alpha = 1.0;
            for (Eigen::Index i = 0; i < k; ++i)
                if (passive[i] && z[i] <= 0.0) alpha = std::min(alpha, x[i] / (x[i] - z[i]));
            x += alpha * (z - x);
            for (Eigen::Index i = 0; i < k; ++i)
                if (passive[i] && x[i] <= 1e-15) {
                    passive[i] = false;
                    x[i] = 0.0;
                }
        }
        x = z.cwiseMax(0.0);
    }
    return x;
}

std::string log_line(int iter, double objective, double gap, double max_violation) {
    std::ostringstream os;
    os.precision(10);
    os << iter << ' ' << objective << ' ' << gap << ' ' << max_violation;
    return os.str();
}

// Ridge fit as the least-squares problem [sqrt(c_d) G; sqrt(mu) I] W = [sqrt(c_d) X; 0],
// which avoids squaring the condition number of G.
Mat ridge_least_squares(const QcqpProblem& p) {
    const Eigen::Index T = p.features.rows();
    const Eigen::Index F = p.features.cols();
    const double a = 1.0 / (std::sqrt(2.0) * p.sigma);
    Mat A(T + F, F);
    A.topRows(T) = a * p.features;
    A.bottomRows(F) = std::sqrt(p.mu_w) * Mat::Identity(F, F);
    Mat b = Mat::Zero(T + F, p.targets.cols());
    b.topRows(T) = a * p.targets;
    return A.colPivHouseholderQr().solve(b);
}

class BarrierSolver {
public:
    BarrierSolver(const QcqpProblem& problem, const SolverConfig& config)
        : problem_(problem), config_(config) {
        F_ = problem.feature_length();
        n_ = problem.state_dim();
        N_ = F_ * n_;
        const double c_d = 1.0 / (2.0 * problem.sigma * problem.sigma);
        const Mat& G = problem.features;
        Q_ = 2.0 * c_d * (G.transpose() * G);
        Q_.diagonal().array() += 2.0 * problem.mu_w;
        rhs_ = 2.0 * c_d * (G.transpose() * problem.targets);
    }

    Solution run() {
        Solution sol;
        sol.multipliers = Vec::Zero(static_cast<Eigen::Index>(problem_.constraints.size()));

        std::vector<int> pins;
        std::vector<int> ineq;
        std::vector<int> negative;
        for (int i = 0; i < static_cast<int>(problem_.constraints.size()); ++i) {
            const double b = problem_.constraints[i].bound;
            if (b < -kPinTol) negative.push_back(i);
            else if (b <= kPinTol) pins.push_back(i);
            else ineq.push_back(i);
        }
        const Mat ridge = ridge_from_q();

        if (!negative.empty()) {
            sol.weights = ridge;
            sol.status = SolveStatus::infeasible;
            InfeasibilityReport rep;
            rep.violations = check_feasibility(ridge, problem_).residuals;
            rep.min_max_violation = std::numeric_limits<double>::infinity();
            for (int i : negative) rep.min_max_violation = std::min(rep.min_max_violation, -problem_.constraints[i].bound);
            sol.infeasibility = rep;
            sol.log.push_back("negative bound at " + std::to_string(negative.size()) + " constraint(s)");
            return finish(sol);
        }

        if (!setup_equalities(pins, ridge, sol)) return finish(sol);

        std::vector<QuadConstraint> active;
        active.reserve(ineq.size());
        for (int i : ineq) active.push_back(problem_.constraints[i]);
        block_ = ConstraintBlock::from(active);
        ineq_ = ineq;

        // Start: the equality-projected ridge point.
        Vec v = reduce_point(as_vector(ridge));
        const int m = block_.size();
        if (m == 0 || r_ == 0) {
            if (r_ > 0) v = minimize_quadratic();
            sol.weights = weights_of(v);
            const auto feas = check_feasibility(sol.weights, problem_);
            sol.status = feas.max_violation <= config_.tol_feas ? SolveStatus::optimal : SolveStatus::infeasible;
            if (sol.status == SolveStatus::infeasible) {
                InfeasibilityReport rep;
                rep.violations = feas.residuals;
                rep.min_max_violation = feas.residuals.maxCoeff();
                sol.infeasibility = rep;
            }
            sol.log.push_back(log_line(0, problem_.objective(sol.weights), 0.0, feas.max_violation));
            return finish(sol);
        }

        // The unconstrained minimiser is optimal when it is strictly feasible.
        {
            const Mat W0 = weights_of(minimize_quadratic());
            const Vec q = kernels::constraint_values(block_, W0);
            if (((block_.bounds - q).array() > 0.0).all()) {
                sol.weights = W0;
                sol.status = SolveStatus::optimal;
                sol.log.push_back(log_line(0, problem_.objective(W0), 0.0, 0.0));
                return finish(sol);
            }
        }

        const Vec q0 = kernels::constraint_values(block_, weights_of(v));
        if (!((block_.bounds - q0).array() > 0.0).all()) {
            if (!phase_one(v, sol)) return finish(sol);
        }
        phase_two(v, sol);
        return finish(sol);
    }

private:
    Mat ridge_from_q() const { return ridge_least_squares(problem_); }

    // Objective pieces in w-space.
    Vec objective_gradient(const Mat& W) const { return as_vector(Q_ * W - rhs_); }
    Mat reduced_objective_hessian() const {
        Mat H = Mat::Zero(N_, N_);
        for (int j = 0; j < n_; ++j) H.block(j * F_, j * F_, F_, F_) = Q_;
        if (!has_pins_) return H;
        return Z_.transpose() * H * Z_;
    }

    Mat weights_of(const Vec& v) const {
        if (!has_pins_) return as_matrix(v, F_, n_);
        return as_matrix(wp_ + Z_ * v, F_, n_);
    }
    Vec reduce_point(const Vec& w) const {
        if (!has_pins_) return w;
        return Z_.transpose() * (w - wp_);
    }
    Vec reduce_vec(const Vec& g) const { return has_pins_ ? Vec(Z_.transpose() * g) : g; }
    Mat reduce_mat(const Mat& H) const { return has_pins_ ? Mat(Z_.transpose() * H * Z_) : H; }

    Vec minimize_quadratic() const {
        if (!has_pins_) return as_vector(ridge_least_squares(problem_));
        const Mat H = reduced_objective_hessian();
        const Vec g = reduce_vec(objective_gradient(weights_of(Vec::Zero(r_))));
        return newton_direction(H, g);
    }

    bool setup_equalities(const std::vector<int>& pins, const Mat& ridge, Solution& sol) {
        has_pins_ = !pins.empty();
        r_ = N_;
        if (!has_pins_) return true;
        const auto rows = static_cast<Eigen::Index>(pins.size()) * n_;
        Mat E = Mat::Zero(rows, N_);
        Vec f(rows);
        Eigen::Index r = 0;
        for (int i : pins) {
            const auto& q = problem_.constraints[i];
            for (int j = 0; j < n_; ++j, ++r) {
                E.block(r, j * F_, 1, F_) = q.feature.transpose();
                f[r] = q.offset[j];
            }
        }
        Eigen::JacobiSVD<Mat> svd(E, Eigen::ComputeThinU | Eigen::ComputeFullV);
        const Vec& sv = svd.singularValues();
        const double cutoff = 1e-10 * std::max(1.0, sv.size() ? sv[0] : 0.0);
        int rank = 0;
        while (rank < sv.size() && sv[rank] > cutoff) ++rank;
        Vec coeffs = svd.matrixU().leftCols(rank).transpose() * f;
        coeffs = coeffs.cwiseQuotient(sv.head(rank));
        wp_ = svd.matrixV().leftCols(rank) * coeffs;
        Z_ = svd.matrixV().rightCols(N_ - rank);
        r_ = N_ - rank;
        const double resid = (E * wp_ - f).norm();
        if (resid > 1e-9 * (1.0 + f.norm())) {
            sol.weights = ridge;
            sol.status = SolveStatus::infeasible;
            InfeasibilityReport rep;
            rep.violations = check_feasibility(ridge, problem_).residuals;
            rep.min_max_violation = resid;
            sol.infeasibility = rep;
            sol.log.push_back("pinned rows are inconsistent, residual " + std::to_string(resid));
            return false;
        }
        return true;
    }

    double max_violation(const Mat& W) const {
        const Vec q = kernels::constraint_values(block_, W);
        return std::max(0.0, (q - block_.bounds).maxCoeff());
    }

    // min_W sum_i lambda_i (q_i(W) - b_i) over the reduced parametrisation.
    double farkas_value(const Vec& lambda) const {
        Mat H = Mat::Zero(N_, N_);
        Vec h = Vec::Zero(N_);
        double c = 0.0;
        const Mat W0 = weights_of(Vec::Zero(r_));
        for (int i = 0; i < block_.size(); ++i) {
            const Vec g = block_.features.row(i).transpose();
            const Vec d0 = W0.transpose() * g - block_.offsets.row(i).transpose();
            const Mat& S = block_.shapes[i];
            const Mat ggt = g * g.transpose();
            for (int j = 0; j < n_; ++j) {
                for (int l = 0; l < n_; ++l) H.block(j * F_, l * F_, F_, F_) += lambda[i] * S(j, l) * ggt;
                h.segment(j * F_, F_) += lambda[i] * (S * d0)[j] * g;
            }
            c += lambda[i] * (d0.dot(S * d0) - block_.bounds[i]);
        }
        const Mat Hr = reduce_mat(H);
        const Vec hr = reduce_vec(h);
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(Hr);
        const Vec x = cod.solve(hr);
        if ((Hr * x - hr).norm() > 1e-8 * (1.0 + hr.norm())) return -std::numeric_limits<double>::infinity();
        // value(v) = v^T Hr v + 2 hr^T v + c, minimised at v = -x.
        return c - hr.dot(x);
    }

    // Minimise s subject to q_i(W) <= b_i + s. Returns true once s < 0.
    bool phase_one(Vec& v, Solution& sol) {
        const int m = block_.size();
        double s = (kernels::constraint_values(block_, weights_of(v)) - block_.bounds).maxCoeff() + 1.0;
        // Centred slack is about m / t, so start t where that matches the initial slack.
        double t = static_cast<double>(m) / s;
        while (true) {
            for (;;) {
                if (s < 0.0) return true;
                if (sol.iterations >= config_.max_iters) {
                    sol.weights = weights_of(v);
                    sol.status = SolveStatus::max_iters;
                    return false;
                }
                const Mat W = weights_of(v);
                const auto bt = kernels::barrier_terms(block_, W, s, true);
                Vec g(r_ + 1);
                Mat H(r_ + 1, r_ + 1);
                g.head(r_) = reduce_vec(bt.gradient.head(N_));
                g[r_] = t + bt.gradient[N_];
                H.topLeftCorner(r_, r_) = reduce_mat(bt.hessian.topLeftCorner(N_, N_));
                const Vec cross = reduce_vec(bt.hessian.col(N_).head(N_));
                H.block(0, r_, r_, 1) = cross;
                H.block(r_, 0, 1, r_) = cross.transpose();
                H(r_, r_) = bt.hessian(N_, N_);
                const Vec d = newton_direction(H, g);
                const double dec = -g.dot(d);
                ++sol.iterations;
                sol.log.push_back(log_line(sol.iterations, s, m / t, std::max(0.0, s)));
                const double phi0 = t * s + bt.value;
                if (dec / 2.0 <= centering_tol(phi0)) break;
                double alpha = 1.0;
                bool moved = false;
                while (alpha > kMinStep) {
                    const Vec vn = v + alpha * d.head(r_);
                    const double sn = s + alpha * d[r_];
                    const double phi = t * sn + kernels::barrier_value_only(block_, weights_of(vn), sn);
                    if (std::isfinite(phi) && phi <= phi0 - kArmijo * alpha * dec) {
                        v = vn;
                        s = sn;
                        moved = true;
                        break;
                    }
                    alpha *= config_.step_backtrack;
                }
                if (!moved) break;
            }
            // Centered at t: s - m/t lower-bounds the phase-one optimum.
            const bool converged = 1.0 / t <= config_.tol_gap;
            if (s - m / t > 0.0 || converged) {
                const auto q = kernels::constraint_values(block_, weights_of(v));
                Vec lambda(m);
                for (int i = 0; i < m; ++i) lambda[i] = 1.0 / (t * (block_.bounds[i] + s - q[i]));
                lambda /= lambda.sum();
                InfeasibilityReport rep;
                rep.min_max_violation = s;
                rep.farkas_value = farkas_value(lambda);
                rep.multipliers = Vec::Zero(static_cast<Eigen::Index>(problem_.constraints.size()));
                for (int i = 0; i < m; ++i) rep.multipliers[ineq_[i]] = lambda[i];
                sol.weights = weights_of(v);
                rep.violations = check_feasibility(sol.weights, problem_).residuals;
                sol.infeasibility = rep;
                sol.status = SolveStatus::infeasible;
                return false;
            }
            t *= config_.barrier_growth;
        }
    }

    void phase_two(Vec& v, Solution& sol) {
        const int m = block_.size();
        const Mat Hf = reduced_objective_hessian();
        double t = static_cast<double>(m) / std::max(1.0, std::abs(problem_.objective(weights_of(v))));
        kernels::BarrierTerms bt;
        while (true) {
            for (;;) {
                if (sol.iterations >= config_.max_iters) {
                    sol.weights = weights_of(v);
                    sol.status = SolveStatus::max_iters;
                    record_multipliers(sol, t);
                    return;
                }
                const Mat W = weights_of(v);
                bt = kernels::barrier_terms(block_, W, 0.0, false);
                const Vec gf = reduce_vec(objective_gradient(W));
                const Vec g = t * gf + reduce_vec(bt.gradient);
                const Mat H = t * Hf + reduce_mat(bt.hessian);
                const Vec d = newton_direction(H, g);
                const double dec = -g.dot(d);
                ++sol.iterations;
                const double f = problem_.objective(W);
                sol.log.push_back(log_line(sol.iterations, f, m / t, max_violation(W)));
                if (dec / 2.0 <= centering_tol(t * f + bt.value)) break;
                // The objective is quadratic, so its change along d is exact; this
                // avoids differencing t * f, which is large next to the decrement.
                const double slope = gf.dot(d);
                const double curve = d.dot(Hf * d);
                double alpha = 1.0;
                bool moved = false;
                while (alpha > kMinStep) {
                    const Vec vn = v + alpha * d;
                    const double bar = kernels::barrier_value_only(block_, weights_of(vn), 0.0);
                    if (std::isfinite(bar)) {
                        const double change = t * (alpha * slope + 0.5 * alpha * alpha * curve) + (bar - bt.value);
                        if (change <= -kArmijo * alpha * dec) {
                            v = vn;
                            moved = true;
                            break;
                        }
                    }
                    alpha *= config_.step_backtrack;
                }
                if (!moved) break;
            }
            if (1.0 / t <= config_.tol_gap) break;
            t *= config_.barrier_growth;
        }
        sol.weights = weights_of(v);
        sol.status = SolveStatus::optimal;
        record_multipliers(sol, t);
        polish(v, sol, t);
    }

    // Gradient of q_i in w-space.
    Vec constraint_gradient(int i, const Mat& W) const {
        const Vec g = block_.features.row(i).transpose();
        const Vec d = W.transpose() * g - block_.offsets.row(i).transpose();
        const Vec sd = block_.shapes[i] * d;
        Vec out(N_);
        for (int j = 0; j < n_; ++j) out.segment(j * F_, F_) = 2.0 * sd[j] * g;
        return out;
    }

    // Multipliers refit by nonnegative least squares on the near-active set,
    // at the barrier point. 1/(t s_i) is unreliable once s_i is at rounding level.
    void polish(const Vec& v, Solution& sol, double t) {
        const int m = block_.size();
        const Mat W = weights_of(v);
        const Vec q = kernels::constraint_values(block_, W);
        Vec lam0(m);
        for (int i = 0; i < m; ++i) lam0[i] = 1.0 / (t * (block_.bounds[i] - q[i]));
        const double cut = 1e-6 * std::max(1.0, lam0.maxCoeff());
        std::vector<int> act;
        for (int i = 0; i < m; ++i)
            if (lam0[i] >= cut) act.push_back(i);
        const int k = static_cast<int>(act.size());
        if (k == 0) return;
        Mat A(N_, k);
        for (int a = 0; a < k; ++a) A.col(a) = constraint_gradient(act[a], W);
        const Mat Ar = has_pins_ ? Mat(Z_.transpose() * A) : A;
        const Vec b = -reduce_vec(objective_gradient(W));
        const Vec lam = nnls(Ar, b);
        const double res = (Ar * lam - b).norm();
        if (!(res < sol.kkt_residual)) return;
        sol.multipliers.setZero();
        double comp = 0.0;
        for (int a = 0; a < k; ++a) {
            sol.multipliers[ineq_[act[a]]] = lam[a];
            comp = std::max(comp, lam[a] * (block_.bounds[act[a]] - q[act[a]]));
        }
        sol.complementarity = comp;
        sol.kkt_residual = res;
    }

    void record_multipliers(Solution& sol, double t) {
        const Mat W = sol.weights;
        const Vec q = kernels::constraint_values(block_, W);
        Vec grad = objective_gradient(W);
        double comp = 0.0;
        for (int i = 0; i < block_.size(); ++i) {
            const double slack = block_.bounds[i] - q[i];
            const double lambda = 1.0 / (t * slack);
            sol.multipliers[ineq_[i]] = lambda;
            comp = std::max(comp, lambda * slack);
            const Vec g = block_.features.row(i).transpose();
            const Vec d = W.transpose() * g - block_.offsets.row(i).transpose();
            const Vec sd = block_.shapes[i] * d;
            for (int j = 0; j < n_; ++j) grad.segment(j * F_, F_) += lambda * 2.0 * sd[j] * g;
        }
        sol.complementarity = comp;
        sol.kkt_residual = reduce_vec(grad).norm();
    }

    Solution& finish(Solution& sol) const {
        if (sol.weights.size() == 0) sol.weights = Mat::Zero(F_, n_);
        sol.objective = problem_.objective(sol.weights);
        sol.max_constraint_violation = check_feasibility(sol.weights, problem_).max_violation;
        sol.gradient_norm = objective_gradient(sol.weights).norm();
        if (sol.status == SolveStatus::optimal && block_.size() == 0) {
            sol.kkt_residual = reduce_vec(objective_gradient(sol.weights)).norm();
        }
        if (sol.status == SolveStatus::optimal && sol.max_constraint_violation > config_.tol_feas) {
            sol.status = SolveStatus::infeasible;
        }
        return sol;
    }

    const QcqpProblem& problem_;
    const SolverConfig& config_;
    int F_ = 0;
    int n_ = 0;
    int N_ = 0;
    Mat Q_;
    Mat rhs_;
    bool has_pins_ = false;
    Vec wp_;
    Mat Z_;
    int r_ = 0;
    ConstraintBlock block_;
    std::vector<int> ineq_;
};

}  // namespace

void QcqpProblem::validate() const {
    if (features.rows() != targets.rows()) throw InvalidInput("features and targets need equal rows");
    if (features.rows() == 0) throw InvalidInput("problem has no training rows");
    if (!(mu_w > 0.0)) throw InvalidInput("mu_w must be positive");
    if (!(sigma > 0.0)) throw InvalidInput("objective sigma must be positive");
    for (const auto& q : constraints) {
        if (q.feature.size() != features.cols() || q.offset.size() != targets.cols() ||
            q.shape.rows() != targets.cols() || q.shape.cols() != targets.cols())
            throw InvalidInput("constraint dimensions do not match the problem");
        if (!(lambda_min(q.shape) > 0.0)) throw InvalidInput("constraint shape must be positive definite");
    }
}

double QcqpProblem::objective(const Mat& weights) const {
    const double c_d = 1.0 / (2.0 * sigma * sigma);
    return c_d * (targets - features * weights).squaredNorm() + mu_w * weights.squaredNorm();
}

void SolverConfig::validate() const {
    if (!(tol_feas > 0.0) || !(tol_gap > 0.0)) throw InvalidInput("solver tolerances must be positive");
    if (max_iters <= 0) throw InvalidInput("max_iters must be positive");
    if (!(step_backtrack > 0.0 && step_backtrack < 1.0))
        throw InvalidInput("step_backtrack must lie in (0, 1)");
    if (!(barrier_growth > 1.0)) throw InvalidInput("barrier_growth must exceed 1");
}

const char* to_string(SolveStatus status) {
    switch (status) {
        case SolveStatus::optimal: return "optimal";
        case SolveStatus::infeasible: return "infeasible";
        case SolveStatus::max_iters: return "max-iters";
    }
    return "unknown";
}

FeasibilityReport check_feasibility(const Mat& weights, const QcqpProblem& problem) {
    FeasibilityReport rep;
    const auto m = static_cast<Eigen::Index>(problem.constraints.size());
    rep.residuals.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) rep.residuals[i] = problem.constraints[i].residual(weights);
    rep.max_violation = m ? std::max(0.0, rep.residuals.maxCoeff()) : 0.0;
    return rep;
}

Mat ridge_solution(const QcqpProblem& problem) {
    problem.validate();
    return ridge_least_squares(problem);
}

Solution solve(const QcqpProblem& problem, const SolverConfig& config) {
    problem.validate();
    config.validate();
    BarrierSolver solver(problem, config);
    return solver.run();
}

std::vector<Vec> unique_points(const SampleSet& samples) {
    std::vector<Vec> out;
    std::map<std::vector<double>, bool> seen;
    for (const auto& p : samples.points) {
        std::vector<double> key(p.data(), p.data() + p.size());
        if (seen.emplace(std::move(key), true).second) out.push_back(p);
    }
    return out;
}

QcqpProblem assemble(const TrainingPairs& data, const ElmModel& model, const ConstraintSpecs& specs,
                     const SampleSet& samples, const AssembleOptions& options) {
    if (data.size() == 0) throw InvalidInput("assemble: empty training data");
    if (data.targets.size() != data.size()) throw InvalidInput("assemble: inputs/targets size mismatch");
    specs.safety.validate();
    specs.stability.validate();
    specs.risk.validate();
    if (specs.risk.p_k < 0.5) throw UnsupportedRisk("p_k < 0.5 is not supported");
    if (!(specs.sigma >= 0.0)) throw InvalidInput("sigma must be non-negative");

    QcqpProblem problem;
    problem.features = kernels::feature_matrix(model, data.inputs);
    problem.targets.resize(static_cast<Eigen::Index>(data.size()), model.dims.n);
    for (std::size_t k = 0; k < data.size(); ++k)
        problem.targets.row(static_cast<Eigen::Index>(k)) = data.targets[k].transpose();
    problem.sigma = options.objective_sigma;
    problem.mu_w = options.mu_w;

    const auto points = unique_points(samples);
    const auto count = static_cast<int>(points.size());
    if (options.safety_coeffs && options.safety_coeffs->size() != points.size())
        throw InvalidInput("safety coefficient count does not match sample points");
    if (options.stability_coeffs && options.stability_coeffs->size() != points.size())
        throw InvalidInput("stability coefficient count does not match sample points");

    std::vector<QuadConstraint> built(2 * static_cast<std::size_t>(count));
#pragma omp parallel for schedule(static)
    for (int k = 0; k < count; ++k) {
        const Vec& x = points[k];
        const Vec g = feature_map(model, InputVector::from_state(x, specs.stability.equilibrium));
        SamplingMargins margins;
        if (options.margin_tau > 0.0)
            margins = sampling_margins(model, specs.safety, specs.stability, specs.risk, specs.sigma, x,
                                       options.margin_tau);
        std::optional<MomentPair> ref_b;
        std::optional<MomentPair> ref_l;
        if (options.reference_weights) {
            const Vec y = options.reference_weights->transpose() * g;
            ref_b = safety_moments(specs.safety, y, specs.sigma, x);
            ref_l = stability_moments(specs.stability, y, specs.sigma, x);
        }
        built[2 * k] = options.safety_coeffs
                           ? safety_constraint_with_coefficient(specs.safety, (*options.safety_coeffs)[k],
                                                                specs.sigma, x, g, margins.safety)
                           : build_safety_constraint(specs.safety, specs.risk, specs.sigma, x, g,
                                                     margins.safety, ref_b);
        built[2 * k + 1] =
            options.stability_coeffs
                ? stability_constraint_with_coefficient(specs.stability, (*options.stability_coeffs)[k],
                                                        specs.sigma, x, g, margins.stability)
                : build_stability_constraint(specs.stability, specs.risk, specs.sigma, x, g,
                                             margins.stability, ref_l);
    }

    std::vector<StructuralInfeasibility::Offender> offenders;
    for (const auto& q : built)
        if (q.bound < -kPinTol)
            offenders.push_back({q.sample_state, q.tag == ConstraintTag::safety, q.bound});
    if (!offenders.empty()) {
        std::ostringstream os;
        os << offenders.size() << " sampled constraint(s) have a negative bound (Gamma - margin < 0); first at ["
           << offenders.front().state.transpose() << "] bound " << offenders.front().bound;
        throw StructuralInfeasibility(os.str(), std::move(offenders));
    }
    problem.constraints = std::move(built);
    return problem;
}

}  // namespace safe_sysid
