#include "safe_sysid/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>

#include <omp.h>

#include "safe_sysid/error.hpp"

namespace safe_sysid::kernels {

namespace {

int chunk_count(int m) { return (m + kChunk - 1) / kChunk; }

struct Partial {
    double value = 0.0;
    Vec gradient;
    Mat hessian;
    bool feasible = true;
};

// Per-constraint derivative pieces in output space.
struct Local {
    double slack = 0.0;
    Vec u;  // 2 S d / slack
    Mat K;  // 2 S / slack + u u^T
};

bool local_terms(const ConstraintBlock& block, int i, const Mat& weights, double shift, Local& out) {
    const Vec d = weights.transpose() * block.features.row(i).transpose() -
                  block.offsets.row(i).transpose();
    const Vec z = block.factors[i].transpose() * d;
    out.slack = block.bounds[i] + shift - z.squaredNorm();
    if (!(out.slack > 0.0)) return false;
    const Vec sd = block.shapes[i] * d;
    out.u = (2.0 / out.slack) * sd;
    out.K = (2.0 / out.slack) * block.shapes[i] + out.u * out.u.transpose();
    return true;
}

void accumulate_chunk(const ConstraintBlock& block, int begin, int end, const Mat& weights,
                      double shift, bool with_shift, Partial& p) {
    const int F = static_cast<int>(block.features.cols());
    const int n = static_cast<int>(block.offsets.cols());
    const int N = F * n;
    const int dim = N + (with_shift ? 1 : 0);
    const int rows = end - begin;
    p.gradient = Vec::Zero(dim);
    p.hessian = Mat::Zero(dim, dim);

    // Per-row weights for each (j, l) output pair, then one weighted Gram per pair.
    Mat kweights(rows, n * n);
    Mat uweights(rows, n);
    Vec inv_slack(rows);
    Local loc;
    for (int r = 0; r < rows; ++r) {
        const int i = begin + r;
        if (!local_terms(block, i, weights, shift, loc)) {
            p.feasible = false;
            return;
        }
        p.value -= std::log(loc.slack);
        for (int j = 0; j < n; ++j) {
            uweights(r, j) = loc.u[j];
            for (int l = 0; l < n; ++l) kweights(r, j * n + l) = loc.K(j, l);
        }
        inv_slack[r] = 1.0 / loc.slack;
    }
    const auto G = block.features.middleRows(begin, rows);
    for (int j = 0; j < n; ++j) {
        p.gradient.segment(j * F, F) = G.transpose() * uweights.col(j);
        for (int l = j; l < n; ++l) {
            const Mat weighted = G.array().colwise() * kweights.col(j * n + l).array();
            const Mat gram = G.transpose() * weighted;
            p.hessian.block(j * F, l * F, F, F) = gram;
            if (l != j) p.hessian.block(l * F, j * F, F, F) = gram.transpose();
        }
    }
    if (with_shift) {
        p.gradient[N] = -inv_slack.sum();
        p.hessian(N, N) = inv_slack.squaredNorm();
        for (int j = 0; j < n; ++j) {
            const Vec cross = -(G.transpose() * uweights.col(j).cwiseProduct(inv_slack));
            p.hessian.block(j * F, N, F, 1) = cross;
            p.hessian.block(N, j * F, 1, F) = cross.transpose();
        }
    }
}

}  // namespace

void configure_threads_from_env() {
    if (const char* env = std::getenv("SAFE_SYSID_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0) omp_set_num_threads(n);
        } catch (const std::exception&) {
            throw InvalidInput(std::string("SAFE_SYSID_THREADS is not an integer: ") + env);
        }
    }
}

int thread_count() { return omp_get_max_threads(); }

ConstraintBlock ConstraintBlock::from(std::span<const QuadConstraint> constraints) {
    ConstraintBlock b;
    const auto m = static_cast<int>(constraints.size());
    if (m == 0) return b;
    const auto F = constraints.front().feature.size();
    const auto n = constraints.front().offset.size();
    b.features.resize(m, F);
    b.offsets.resize(m, n);
    b.bounds.resize(m);
    b.shapes.reserve(m);
    b.factors.reserve(m);
    for (int i = 0; i < m; ++i) {
        const auto& q = constraints[i];
        if (q.feature.size() != F || q.offset.size() != n || q.shape.rows() != n)
            throw InvalidInput("inconsistent constraint dimensions");
        b.features.row(i) = q.feature.transpose();
        b.offsets.row(i) = q.offset.transpose();
        b.bounds[i] = q.bound;
        Eigen::LLT<Mat> llt(q.shape);
        if (llt.info() != Eigen::Success) throw InvalidInput("constraint shape is not positive definite");
        b.shapes.push_back(q.shape);
        b.factors.push_back(llt.matrixL());
    }
    return b;
}

Vec constraint_values(const ConstraintBlock& block, const Mat& weights) {
    const int m = block.size();
    Vec out(m);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const Vec d = weights.transpose() * block.features.row(i).transpose() -
                      block.offsets.row(i).transpose();
        out[i] = (block.factors[i].transpose() * d).squaredNorm();
    }
    return out;
}

BarrierTerms barrier_terms(const ConstraintBlock& block, const Mat& weights, double shift,
                           bool with_shift) {
    const int F = static_cast<int>(weights.rows());
    const int n = static_cast<int>(weights.cols());
    const int dim = F * n + (with_shift ? 1 : 0);
    BarrierTerms out;
    out.gradient = Vec::Zero(dim);
    out.hessian = Mat::Zero(dim, dim);
    const int m = block.size();
    if (m == 0) return out;

    const int chunks = chunk_count(m);
    std::vector<Partial> partials(chunks);
#pragma omp parallel for schedule(dynamic)
    for (int c = 0; c < chunks; ++c) {
        const int begin = c * kChunk;
        const int end = std::min(m, begin + kChunk);
        accumulate_chunk(block, begin, end, weights, shift, with_shift, partials[c]);
    }
    for (const auto& p : partials) {
        if (!p.feasible) {
            out.feasible = false;
            out.value = std::numeric_limits<double>::infinity();
            return out;
        }
        out.value += p.value;
        out.gradient += p.gradient;
        out.hessian += p.hessian;
    }
    return out;
}

double barrier_value_only(const ConstraintBlock& block, const Mat& weights, double shift) {
    const Vec q = constraint_values(block, weights);
    double v = 0.0;
    for (int i = 0; i < q.size(); ++i) {
        const double s = block.bounds[i] + shift - q[i];
        if (!(s > 0.0)) return std::numeric_limits<double>::infinity();
        v -= std::log(s);
    }
    return v;
}

Mat feature_matrix(const ElmModel& model, std::span<const InputVector> inputs) {
    const auto count = static_cast<int>(inputs.size());
    Mat G(count, model.dims.feature_length());
#pragma omp parallel for schedule(static)
    for (int k = 0; k < count; ++k) G.row(k) = feature_map(model, inputs[k]).transpose();
    return G;
}

Mat predict_states(const ElmModel& model, const Mat& states, const Vec& equilibrium) {
    const auto count = static_cast<int>(states.rows());
    Mat out(count, model.dims.n);
#pragma omp parallel for schedule(static)
    for (int k = 0; k < count; ++k) {
        const Vec x = states.row(k).transpose();
        out.row(k) = predict_mean(model, InputVector::from_state(x, equilibrium)).transpose();
    }
    return out;
}

namespace serial {

Vec constraint_values(const ConstraintBlock& block, const Mat& weights) {
    Vec out(block.size());
    for (int i = 0; i < block.size(); ++i) {
        const Vec y = weights.transpose() * block.features.row(i).transpose();
        const Vec d = y - block.offsets.row(i).transpose();
        out[i] = d.dot(block.shapes[i] * d);
    }
    return out;
}

BarrierTerms barrier_terms(const ConstraintBlock& block, const Mat& weights, double shift,
                           bool with_shift) {
    const int F = static_cast<int>(weights.rows());
    const int n = static_cast<int>(weights.cols());
    const int N = F * n;
    const int dim = N + (with_shift ? 1 : 0);
    BarrierTerms out;
    out.gradient = Vec::Zero(dim);
    out.hessian = Mat::Zero(dim, dim);
    Local loc;
    for (int i = 0; i < block.size(); ++i) {
        if (!local_terms(block, i, weights, shift, loc)) {
            out.feasible = false;
            out.value = std::numeric_limits<double>::infinity();
            return out;
        }
        const Vec g = block.features.row(i).transpose();
        const Mat ggt = g * g.transpose();
        out.value -= std::log(loc.slack);
        for (int j = 0; j < n; ++j) {
            out.gradient.segment(j * F, F) += loc.u[j] * g;
            for (int l = 0; l < n; ++l) out.hessian.block(j * F, l * F, F, F) += loc.K(j, l) * ggt;
        }
        if (with_shift) {
            const double is = 1.0 / loc.slack;
            out.gradient[N] -= is;
            out.hessian(N, N) += is * is;
            for (int j = 0; j < n; ++j) {
                out.hessian.block(j * F, N, F, 1) -= is * loc.u[j] * g;
                out.hessian.block(N, j * F, 1, F) -= is * loc.u[j] * g.transpose();
            }
        }
    }
    return out;
}

Mat feature_matrix(const ElmModel& model, std::span<const InputVector> inputs) {
    Mat G(static_cast<Eigen::Index>(inputs.size()), model.dims.feature_length());
    for (std::size_t k = 0; k < inputs.size(); ++k)
        G.row(static_cast<Eigen::Index>(k)) = feature_map(model, inputs[k]).transpose();
    return G;
}

Mat predict_states(const ElmModel& model, const Mat& states, const Vec& equilibrium) {
    Mat out(states.rows(), model.dims.n);
    for (Eigen::Index k = 0; k < states.rows(); ++k) {
        const Vec x = states.row(k).transpose();
        out.row(k) = predict_mean(model, InputVector::from_state(x, equilibrium)).transpose();
    }
    return out;
}

}  // namespace serial

}  // namespace safe_sysid::kernels
