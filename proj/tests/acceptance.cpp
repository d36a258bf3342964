// Acceptance checks, one PASS/FAIL line per criterion.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "helpers.hpp"
#include "oracles.hpp"
#include "safe_sysid/config.hpp"
#include "safe_sysid/constraints.hpp"
#include "safe_sysid/kernels.hpp"
#include "safe_sysid/pipeline.hpp"
#include "safe_sysid/qcqp.hpp"
#include "safe_sysid/serialize.hpp"

using namespace safe_sysid;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = SAFE_SYSID_SOURCE_DIR;
fs::path g_work;
int g_failed = 0;

void report(int id, bool ok, const std::string& detail) {
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << ": " << detail << std::endl;
    if (!ok) ++g_failed;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

RunConfig preset(const std::string& name, const fs::path& out) {
    return load_config(kSource / "configs" / (name + ".json"), {"output_dir=\"" + out.string() + "\""});
}

void moment_fidelity() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    int instances = 0;
    // Relative error is only meaningful for means away from zero; the
    // standard error of the sampled mean is sqrt(Var) / 1000.
    while (instances < 20) {
        const bool lyapunov = instances % 2 == 1;
        const Mat M = testutil::random_spd(rng, 2, 0.2, 3.0);
        const Vec center = testutil::random_vec(rng, 2);
        const double sigma = 0.05 + 0.45 * u(rng);
        const Mat W = testutil::random_mat(rng, 6, 2);
        const Vec g = testutil::random_vec(rng, 6, 0.0, 1.0);
        const Vec y = W.transpose() * g;
        const Vec x = testutil::random_vec(rng, 2);
        const double rate = 0.05 + 0.9 * u(rng);
        MomentPair cf;
        if (lyapunov) cf = stability_moments({M, center, rate, 0.0}, y, sigma, x);
        else cf = safety_moments({M, center, rate, 0.0}, y, sigma, x);
        if (std::abs(cf.mean) < std::sqrt(cf.variance)) continue;
        const auto mc = oracle::monte_carlo_moments(M, center, rate, sigma, y, x, lyapunov, 1'000'000,
                                                    1000 + static_cast<std::uint64_t>(instances));
        worst = std::max({worst, testutil::rel_diff(mc.mean, cf.mean), testutil::rel_diff(mc.variance, cf.variance)});
        ++instances;
    }
    const double secs = seconds_since(t0);
    std::ostringstream os;
    os << "20 instances x 1e6 draws, worst relative error " << worst << " (limit 0.01), " << secs << " s (limit 30)";
    report(1, worst < 0.01 && secs < 30.0, os.str());
}

void risk_coefficient_check() {
    const double c = risk_coefficient(0.9);
    const double ref = oracle::normal_quantile(0.9);
    std::ostringstream os;
    os.precision(12);
    os << "c(0.9) = " << c << ", bisection " << ref << ", c(0.5) = " << risk_coefficient(0.5);
    report(2, std::abs(c - 1.2815515655) <= 1e-8 && std::abs(c - ref) <= 1e-8 && risk_coefficient(0.5) == 0.0, os.str());
}

void solver_correctness() {
    std::mt19937_64 rng(77);
    double worst_obj = 0.0, worst_w = 0.0;
    int optimal = 0;
    for (int t = 0; t < 50; ++t) {
        const auto pb = oracle::random_qcqp(rng, 2 + t % 3, 1 + t % 2, 1 + t % 4, 10 + t % 7);
        const auto s = solve(pb);
        optimal += s.status == SolveStatus::optimal;
        const Mat Wo = oracle::projected_gradient(pb);
        worst_obj = std::max(worst_obj, std::abs(s.objective - pb.objective(Wo)) / std::max(1.0, std::abs(pb.objective(Wo))));
        worst_w = std::max(worst_w, (s.weights - Wo).norm());
    }
    // one hidden neuron, scalar state, (w - 1)^2 <= 0.25, unconstrained optimum 2
    QcqpProblem pb;
    pb.features = Mat::Zero(4, 2);
    pb.features.col(0).setOnes();
    pb.targets = Mat::Constant(4, 1, 2.0);
    pb.sigma = 0.1;
    pb.mu_w = 1e-6;
    QuadConstraint q;
    q.feature = (Vec(2) << 1.0, 0.0).finished();
    q.shape = Mat::Identity(1, 1);
    q.offset = Vec::Constant(1, 1.0);
    q.bound = 0.25;
    pb.constraints.push_back(q);
    const double w = solve(pb).weights(0, 0);
    std::ostringstream os;
    os << optimal << "/50 optimal, worst objective gap " << worst_obj << " (limit 1e-5), worst |dW| " << worst_w
       << " (limit 1e-4); scalar case w = " << std::setprecision(12) << w;
    report(3, optimal == 50 && worst_obj <= 1e-5 && worst_w <= 1e-4 && std::abs(w - 1.5) <= 1e-8, os.str());
}

void theorem_soundness() {
    const auto a = oracle::theorem_one_pairs(99, 10000, 0.05, false);
    const auto b = oracle::theorem_one_pairs(100, 10000, 0.05, true);
    std::ostringstream os;
    os << a.pairs + b.pairs << " pairs, " << a.counterexamples + b.counterexamples
       << " counterexamples, largest difference/margin " << std::max(a.worst_ratio, b.worst_ratio);
    report(4, a.counterexamples + b.counterexamples == 0 && a.pairs == 10000, os.str());
}

struct RunSummary {
    nlohmann::json train;
    nlohmann::json verify;
    double seconds = 0.0;
    int code = -1;
};

RunSummary run_all(const RunConfig& cfg) {
    std::ostringstream log;
    const auto t0 = std::chrono::steady_clock::now();
    RunSummary r;
    r.code = cmd_all(cfg, log);
    r.seconds = seconds_since(t0);
    r.train = read_json(cfg.output_dir / "train_summary.json");
    r.verify = read_json(cfg.output_dir / "verify_summary.json");
    return r;
}

void robot_reproduction() {
    const auto cfg = preset("robot", g_work / "robot_a");
    const auto r = run_all(cfg);
    const auto& v = r.verify;
    const int runs = v.at("runs").get<int>();
    const int viol = v.at("violation_count").get<int>();
    const int conv = v.at("converged_count").get<int>();
    const std::string status = r.train.at("status").get<std::string>();
    std::ostringstream os;
    os << "status " << status << ", " << r.train.at("constraints").get<int>() << " constraints, " << viol
       << " violations, " << conv << "/" << runs << " within " << cfg.rollout.convergence_radius
       << " (max " << v.at("max_final_distance").get<double>() << "), end-to-end " << r.seconds << " s";
    report(5, status == "optimal" && runs == 100 && viol == 0 && conv == 100 &&
                  r.train.at("constraints").get<int>() == 2000,
           os.str());
}

void snake_experiment() {
    const auto cfg = preset("snake", g_work / "snake");
    const auto r = run_all(cfg);
    const auto& v = r.verify;
    const int runs = v.at("runs").get<int>();
    const int viol = v.at("violation_count").get<int>();
    const int conv = v.at("converged_count").get<int>();
    std::ostringstream os;
    os << "status " << r.train.at("status").get<std::string>() << ", " << viol << " violations, " << conv << "/"
       << runs << " within " << cfg.rollout.convergence_radius << ", min h " << v.at("min_barrier").get<double>();
    report(6, r.train.at("status") == "optimal" && runs == 100 && viol == 0 && conv == 100, os.str());
}

void determinism() {
    const fs::path a = g_work / "robot_a";
    const auto cfg = preset("robot", g_work / "robot_b");
    run_all(cfg);
    const fs::path b = cfg.output_dir;
    bool same = true;
    std::string differing;
    for (const char* f : {"model.json", "verify_summary.json", "verify/summary.json", "train_summary.json"}) {
        if (f == std::string("train_summary.json")) continue;  // carries wall time
        if (slurp(a / f) != slurp(b / f) || slurp(a / f).empty()) {
            same = false;
            differing += std::string(" ") + f;
        }
    }
    std::ostringstream os;
    os << "two robot runs with seed " << cfg.seed << " in separate directories: "
       << (same ? "model.json, verify_summary.json and verify/summary.json byte-identical" : "differ:" + differing);
    report(7, same, os.str());
}

void noise_free() {
    bool ok = true;
    std::ostringstream os;
    for (const char* name : {"robot_noise_free", "snake_noise_free"}) {
        const auto cfg = preset(name, g_work / name);
        const auto r = run_all(cfg);
        const int fs_ = r.verify.at("audit_safety_failures").get<int>();
        const int fl = r.verify.at("audit_stability_failures").get<int>();
        const int states = r.verify.at("audit_states").get<int>();
        ok = ok && cfg.sigma == 0.0 && r.train.at("status") == "optimal" && fs_ == 0 && fl == 0 && states > 0;
        os << name << ": " << states << " sampled points, " << fs_ << "+" << fl << " audit failures; ";
    }
    report(8, ok, os.str());
}

}  // namespace

int main(int argc, char** argv) {
    kernels::configure_threads_from_env();
    g_work = argc > 1 ? fs::path(argv[1]) : fs::current_path() / "acceptance_runs";
    fs::remove_all(g_work);
    fs::create_directories(g_work);
    const std::pair<int, void (*)()> checks[] = {
        {1, moment_fidelity}, {2, risk_coefficient_check}, {3, solver_correctness}, {4, theorem_soundness},
        {5, robot_reproduction}, {6, snake_experiment}, {7, determinism}, {8, noise_free}};
    for (const auto& [id, fn] : checks) {
        try {
            fn();
        } catch (const std::exception& e) {
            report(id, false, std::string("exception: ") + e.what());
        }
    }
    return g_failed == 0 ? 0 : 1;
}
