#include "safe_sysid/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "safe_sysid/error.hpp"

namespace safe_sysid {

void DomainBox::validate() const {
    if (lower.size() == 0 || lower.size() != upper.size())
        throw InvalidInput("domain box bounds must have equal, nonzero dimension");
    for (Eigen::Index i = 0; i < lower.size(); ++i)
        if (!(lower[i] < upper[i])) throw InvalidInput("domain box needs lower < upper");
    if (!(inflation >= 0.0)) throw InvalidInput("inflation must be non-negative");
}

DomainBox box_from_ellipse(const SafetySpec& safety, double inflation) {
    safety.validate();
    // Half-width along axis i of {d : d^T A d <= 1} is sqrt((A^-1)_ii).
    const Mat inv = safety.A.inverse();
    DomainBox box;
    box.inflation = inflation;
    const auto n = safety.center.size();
    box.lower.resize(n);
    box.upper.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double half = std::sqrt(inv(i, i)) * (1.0 + inflation);
        box.lower[i] = safety.center[i] - half;
        box.upper[i] = safety.center[i] + half;
    }
    return box;
}

SampleSet grid_domain(const DomainBox& box, double tau, std::size_t cap) {
    box.validate();
    if (!(tau > 0.0)) throw InvalidInput("tau must be positive");
    const auto n = box.lower.size();
    std::vector<std::size_t> per_axis(n);
    auto count_for = [&](double step) {
        double total = 1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double extent = box.upper[i] - box.lower[i];
            per_axis[i] = static_cast<std::size_t>(std::ceil(extent / step - 1e-12)) + 1;
            per_axis[i] = std::max<std::size_t>(per_axis[i], 2);
            total *= static_cast<double>(per_axis[i]);
        }
        return total;
    };
    const double total = count_for(tau);
    if (total > static_cast<double>(cap)) {
        // Points scale like tau^-n; start there and grow until the count fits.
        double suggested = tau * std::pow(total / static_cast<double>(cap), 1.0 / n);
        while (count_for(suggested) > static_cast<double>(cap)) suggested *= 1.01;
        std::ostringstream os;
        os << "grid would have " << total << " points (cap " << cap << "); try tau >= " << suggested;
        throw TooManyPoints(os.str(), suggested);
    }

    SampleSet out;
    out.tau = tau;
    out.points.reserve(static_cast<std::size_t>(total));
    std::vector<std::size_t> idx(n, 0);
    while (true) {
        Vec p(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double t = static_cast<double>(idx[i]) / static_cast<double>(per_axis[i] - 1);
            // Endpoints are exact so the faces of the box are on the grid.
            p[i] = idx[i] + 1 == per_axis[i] ? box.upper[i]
                                              : box.lower[i] + t * (box.upper[i] - box.lower[i]);
        }
        out.points.push_back(std::move(p));
        Eigen::Index axis = 0;
        while (axis < n) {
            if (++idx[axis] < per_axis[axis]) break;
            idx[axis] = 0;
            ++axis;
        }
        if (axis == n) break;
    }
    return out;
}

Vec point_slacks(const SampleSet& grid, const ElmModel& model, const ConstraintSpecs& specs) {
    specs.risk.validate();
    if (specs.risk.p_k < 0.5) throw UnsupportedRisk("p_k < 0.5 is not supported");
    const auto count = static_cast<int>(grid.count());
    Vec slack(count);
    const Vec& eq = specs.stability.equilibrium;
#pragma omp parallel for schedule(static)
    for (int k = 0; k < count; ++k) {
        const Vec& x = grid.points[k];
        const auto input = InputVector::from_state(x, eq);
        const Vec g = feature_map(model, input);
        const Vec y = model.output_weights.transpose() * g;
        const auto ms = safety_moments(specs.safety, y, specs.sigma, x);
        const auto ml = stability_moments(specs.stability, y, specs.sigma, x);
        const auto qs = build_safety_constraint(specs.safety, specs.risk, specs.sigma, x, g, 0.0, ms);
        const auto ql = build_stability_constraint(specs.stability, specs.risk, specs.sigma, x, g, 0.0, ml);
        slack[k] = std::min(-qs.residual(model.output_weights), -ql.residual(model.output_weights));
    }
    return slack;
}

SampleSet select_active_points(const SampleSet& grid, const ElmModel& model,
                               const ConstraintSpecs& specs, std::size_t budget,
                               std::uint64_t seed) {
    if (budget > grid.count()) throw InvalidInput("budget exceeds grid size");
    if (budget == grid.count()) return grid;

    const Vec slack = point_slacks(grid, model, specs);
    std::vector<std::size_t> order(grid.count());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return slack[a] < slack[b]; });

    const std::size_t ranked = budget / 2 + budget % 2;
    std::vector<char> chosen(grid.count(), 0);
    for (std::size_t i = 0; i < ranked; ++i) chosen[order[i]] = 1;

    std::vector<std::size_t> rest;
    rest.reserve(grid.count() - ranked);
    for (std::size_t i = 0; i < grid.count(); ++i)
        if (!chosen[i]) rest.push_back(i);
    std::mt19937_64 rng(seed);
    // Partial Fisher-Yates: only the first `extra` slots are drawn.
    const std::size_t extra = budget - ranked;
    for (std::size_t i = 0; i < extra; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, rest.size() - 1);
        std::swap(rest[i], rest[pick(rng)]);
        chosen[rest[i]] = 1;
    }

    SampleSet out;
    out.tau = grid.tau;
    out.points.reserve(budget);
    for (std::size_t i = 0; i < grid.count(); ++i)
        if (chosen[i]) out.points.push_back(grid.points[i]);
    return out;
}

void write_samples_csv(const SampleSet& samples, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << std::setprecision(17);
    for (const auto& p : samples.points) {
        for (Eigen::Index i = 0; i < p.size(); ++i) os << (i ? "," : "") << p[i];
        os << '\n';
    }
}

}  // namespace safe_sysid
