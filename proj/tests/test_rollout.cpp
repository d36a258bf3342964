#include <doctest.h>

#include <filesystem>
#include <random>

#include "helpers.hpp"
#include "safe_sysid/constraints.hpp"
#include "safe_sysid/rollout.hpp"
#include "safe_sysid/serialize.hpp"

using namespace safe_sysid;

namespace {

// A contraction toward x*: the bias row is chosen so that x* is a fixed point.
ElmModel pinned_model(std::mt19937_64& rng, const Vec& xs) {
    auto m = testutil::random_model(rng, 2, 6, 0.0);
    m.output_weights.topRows(6) *= 0.05;
    m.output_weights.row(6).setZero();
    const Vec g = feature_map(m, InputVector::from_state(xs, xs));
    m.output_weights.row(6) = (xs - m.output_weights.transpose() * g).transpose();
    return m;
}

SafetySpec wide_safety() { return {Mat::Identity(2, 2) * 0.04, Vec::Zero(2), 0.9, 0.01}; }
StabilitySpec unit_stability(const Vec& xs) { return {Mat::Identity(2, 2), xs, 0.01, 0.01}; }

}  // namespace

TEST_CASE("rollout basics") {
    std::mt19937_64 rng(61);
    const Vec xs = (Vec(2) << 0.2, -0.1).finished();
    const auto m = pinned_model(rng, xs);
    RolloutConfig cfg;
    cfg.horizon = 50;

    const auto fixed = rollout(m, xs, xs, cfg);
    CHECK(fixed.states.rows() == 51);
    CHECK((fixed.states.rowwise() - xs.transpose()).cwiseAbs().maxCoeff() < 1e-14);

    const Vec x0 = testutil::random_vec(rng, 2);
    const auto a = rollout(m, x0, xs, cfg);
    const auto b = rollout(m, x0, xs, cfg);
    CHECK((a.states - b.states).norm() == 0.0);
    CHECK((a.states.row(1).transpose() - predict_mean(m, InputVector::from_state(x0, xs))).norm() == 0.0);
    CHECK_FALSE(a.diverged);

    cfg.horizon = 0;
    const auto z = rollout(m, x0, xs, cfg);
    CHECK(z.states.rows() == 1);
    CHECK((z.states.row(0).transpose() - x0).norm() == 0.0);

    RolloutConfig noisy;
    noisy.horizon = 10;
    noisy.noise = true;
    auto mn = m;
    mn.sigma = 0.1;
    CHECK((rollout(mn, x0, xs, noisy, 3).states - rollout(mn, x0, xs, noisy, 3).states).norm() == 0.0);
    CHECK((rollout(mn, x0, xs, noisy, 3).states - rollout(mn, x0, xs, noisy, 4).states).norm() > 0.0);
}

TEST_CASE("run evaluation") {
    Trajectory t;
    t.states = (Mat(4, 2) << 3, 0, 1, 0, 0.5, 0, 0.01, 0).finished();
    const auto r = evaluate_run(t, wide_safety(), unit_stability(Vec::Zero(2)), 0.05);
    CHECK(r.min_barrier == doctest::Approx(1.0 - 0.04 * 9.0));
    CHECK(r.violation == false);
    CHECK(r.final_distance == doctest::Approx(0.01));
    CHECK(r.converged);
    CHECK(r.steps_to_converge == 3);
    CHECK(r.max_lyapunov_step == doctest::Approx(1e-4 - 0.25 + 0.0025));
}

TEST_CASE("Monte Carlo verification") {
    std::mt19937_64 rng(62);
    const Vec xs = (Vec(2) << 0.2, -0.1).finished();
    const auto m = pinned_model(rng, xs);
    const std::vector<Vec> starts = {(Vec(2) << 1.0, 0.5).finished(), (Vec(2) << -1.0, -0.5).finished()};
    RolloutConfig cfg;
    cfg.horizon = 100;
    cfg.mc_runs = 20;
    const auto rep = monte_carlo_verify(m, wide_safety(), unit_stability(xs), starts, cfg);
    CHECK(rep.runs.size() == 20);
    CHECK(rep.violation_count == 0);
    CHECK(rep.converged_count == 20);
    for (std::size_t i = 0; i < 20; ++i) CHECK((rep.runs[i].x0 - starts[i % 2]).norm() <= 5e-4);

    const auto again = monte_carlo_verify(m, wide_safety(), unit_stability(xs), starts, cfg);
    for (std::size_t i = 0; i < 20; ++i)
        CHECK((again.runs[i].trajectory.states - rep.runs[i].trajectory.states).norm() == 0.0);

    cfg.initial_perturbation_radius = 0.0;
    const auto flat = monte_carlo_verify(m, wide_safety(), unit_stability(xs), {starts[0]}, cfg);
    for (const auto& r : flat.runs) CHECK((r.trajectory.states - flat.runs[0].trajectory.states).norm() == 0.0);
}

TEST_CASE("tampered model violations are counted") {
    std::mt19937_64 rng(63);
    const Vec xs = Vec::Zero(2);
    auto m = pinned_model(rng, xs);
    m.output_weights *= 10.0;
    m.output_weights.row(6) += (Vec(2) << 8.0, 0.0).finished().transpose();
    const SafetySpec safe = wide_safety();
    RolloutConfig cfg;
    cfg.horizon = 30;
    cfg.mc_runs = 10;
    const auto rep = monte_carlo_verify(m, safe, unit_stability(xs), {Vec::Zero(2)}, cfg);
    int count = 0;
    double min_h = 1e300;
    for (const auto& r : rep.runs) {
        double mh = 1e300;
        for (Eigen::Index k = 0; k < r.trajectory.states.rows(); ++k)
            mh = std::min(mh, barrier_value(safe, r.trajectory.states.row(k).transpose()));
        CHECK(mh == r.min_barrier);
        count += mh < 0.0;
        min_h = std::min(min_h, mh);
    }
    CHECK(count > 0);
    CHECK(rep.violation_count == count);
    CHECK(rep.min_barrier == min_h);
}

TEST_CASE("one step audit") {
    std::mt19937_64 rng(64);
    const Vec xs = (Vec(2) << 0.2, -0.1).finished();
    const auto m = pinned_model(rng, xs);
    ConstraintSpecs specs;
    specs.safety = wide_safety();
    specs.stability = unit_stability(xs);
    specs.stability.rho = 0.3;
    specs.sigma = 0.0;

    SampleSet states;
    states.points = {xs, (Vec(2) << 1.0, 1.0).finished(), (Vec(2) << -2.0, 0.5).finished()};
    const auto audit = one_step_constraint_audit(m, specs, states);
    REQUIRE(audit.rows.size() == 3);
    CHECK(std::abs(audit.rows[0].lyapunov_step) < 1e-14);
    CHECK(audit.rows[0].V == 0.0);

    for (std::size_t i = 0; i < 3; ++i) {
        const Vec x = states.points[i];
        const Vec g = feature_map(m, InputVector::from_state(x, xs));
        const Vec y = m.output_weights.transpose() * g;
        const auto qb = build_safety_constraint(specs.safety, specs.risk, specs.sigma, x, g, 0.0,
                                                safety_moments(specs.safety, y, specs.sigma, x));
        const auto ql = build_stability_constraint(specs.stability, specs.risk, specs.sigma, x, g, 0.0,
                                                   stability_moments(specs.stability, y, specs.sigma, x));
        CHECK(audit.rows[i].safety_slack == doctest::Approx(-qb.residual(m.output_weights)).epsilon(1e-12));
        CHECK(audit.rows[i].stability_slack == doctest::Approx(-ql.residual(m.output_weights)).epsilon(1e-12));
        const double h = barrier_value(specs.safety, x);
        CHECK(audit.rows[i].barrier_step == doctest::Approx(barrier_value(specs.safety, y) - h + 0.9 * h));
        // With sigma = 0 the slack and the deterministic step carry the same sign information.
        CHECK(audit.rows[i].safety_failure == (audit.rows[i].barrier_step < -1e-8));
    }
    CHECK(audit.safety_failures == 0);
    CHECK(audit.stability_failures == 0);
}

TEST_CASE("report files") {
    std::mt19937_64 rng(65);
    const Vec xs = Vec::Zero(2);
    const auto m = pinned_model(rng, xs);
    RolloutConfig cfg;
    cfg.horizon = 5;
    cfg.mc_runs = 3;
    const auto rep = monte_carlo_verify(m, wide_safety(), unit_stability(xs), {Vec::Ones(2)}, cfg);
    const auto dir = std::filesystem::temp_directory_path() / "safe_sysid_test_report";
    std::filesystem::remove_all(dir);
    write_report(rep, dir);
    for (int i = 0; i < 3; ++i) CHECK(std::filesystem::exists(dir / (std::to_string(i) + ".csv")));
    const auto j = read_json(dir / "summary.json");
    CHECK(j.at("runs").size() == 3);
    CHECK(j.at("violation_count").get<int>() == rep.violation_count);
    std::filesystem::remove_all(dir);
}
