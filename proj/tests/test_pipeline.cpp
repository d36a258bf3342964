#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "safe_sysid/config.hpp"
#include "safe_sysid/error.hpp"
#include "safe_sysid/pipeline.hpp"
#include "safe_sysid/serialize.hpp"

using namespace safe_sysid;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = SAFE_SYSID_SOURCE_DIR;
const fs::path kCli = SAFE_SYSID_CLI;

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("safe_sysid_pipeline_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

fs::path write_file(const fs::path& p, const std::string& text) {
    std::ofstream(p) << text;
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args) {
    const std::string cmd = kCli.string() + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

RunConfig snake_config(const fs::path& out, std::vector<std::string> extra = {}) {
    extra.push_back("output_dir=\"" + out.string() + "\"");
    return load_config(kSource / "configs" / "snake.json", extra);
}

}  // namespace

TEST_CASE("config defaults, overrides and validation") {
    const auto dir = scratch("config");
    const auto empty = write_file(dir / "empty.json", "{}");
    const auto cfg = load_config(empty);
    CHECK(cfg.n_h == 25);
    CHECK(cfg.sigma == 0.02);
    CHECK(cfg.sampler.budget == 1000);
    CHECK(cfg.risk.p_k == 0.9);

    const auto o = load_config(empty, {"elm.n_h=30", "safety.gamma=0.5", "experiment=demonstrations"});
    CHECK(o.n_h == 30);
    CHECK(o.gamma == 0.5);
    CHECK(o.experiment == "demonstrations");
    CHECK(config_hash(o) != config_hash(cfg));
    CHECK(config_hash(load_config(empty)) == config_hash(cfg));
    CHECK(config_hash(cfg).size() == 16);

    CHECK_THROWS_AS(load_config(empty, {"elm.width=3"}), ParseError);
    CHECK_THROWS_AS(load_config(empty, {"no_equals_sign"}), ParseError);
    CHECK_THROWS_AS(load_config(write_file(dir / "bad.json", R"({"elm": {"nh": 3}})")), ParseError);
    CHECK_THROWS_AS(load_config(write_file(dir / "broken.json", "{")), ParseError);
    CHECK_THROWS_AS(load_config(empty, {"stability.rho=0"}), InvalidInput);
    CHECK_THROWS_AS(load_config(empty, {"noise.sigma=0"}), InvalidInput);
    CHECK_NOTHROW(load_config(empty, {"noise.sigma=0", "train.objective_sigma=0.02"}));

    const auto robot = load_config(kSource / "configs" / "robot.json");
    CHECK(robot.n_h == 25);
    CHECK(robot.sigma == 0.02);
    CHECK(robot.train.mu_w == 0.01);
    CHECK(robot.gamma == 0.9);
    CHECK(robot.rho == 0.01);
    CHECK(robot.zeta == 0.01);
    CHECK(robot.delta == 0.01);
    CHECK(robot.sampler.budget == 1000);
    const auto snake = load_config(kSource / "configs" / "snake.json");
    CHECK(snake.gamma == 0.9);
    CHECK(snake.rho == 0.3);
    CHECK(snake.zeta == 0.1);
    CHECK(snake.delta == 1.0);
    fs::remove_all(dir);
}

TEST_CASE("model JSON round trip is exact") {
    const auto dir = scratch("model");
    auto cfg = snake_config(dir);
    const auto data = translate(generate_dataset(cfg));
    const auto pairs = to_training_pairs(data);
    const ElmDims dims{2, 2, 9};
    auto m = make_model(dims, bip_initialize(dims, pairs.inputs, 3), 10.0, 0.02);
    m.output_weights.setRandom();
    m.output_weights *= 1.0 / 3.0;
    save_model(m, dir / "m.json");
    const auto back = load_model(dir / "m.json");
    CHECK((back.input_weights - m.input_weights).norm() == 0.0);
    CHECK((back.slopes - m.slopes).norm() == 0.0);
    CHECK((back.biases - m.biases).norm() == 0.0);
    CHECK((back.output_weights - m.output_weights).norm() == 0.0);
    CHECK(back.weight_bound_in == m.weight_bound_in);
    CHECK(back.sigma == m.sigma);
    CHECK(back.dims == m.dims);

    write_file(dir / "garbage.json", R"({"dims": 3})");
    CHECK_THROWS_AS(load_model(dir / "garbage.json"), ParseError);
    auto j = model_to_json(m);
    j["weight_bound_in"] = 1e-9;
    write_json(j, dir / "bad.json");
    CHECK_THROWS_AS(load_model(dir / "bad.json"), InvalidInput);
    CHECK_THROWS_AS(load_model(dir / "missing.json"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("assembly") {
    const auto dir = scratch("assemble");
    auto cfg = snake_config(dir);
    const auto data = translate(generate_dataset(cfg));
    const auto pairs = to_training_pairs(data);
    const ElmDims dims{2, 2, 25};
    auto model = make_model(dims, bip_initialize(dims, pairs.inputs, 1), 10.0, cfg.sigma);
    ConstraintSpecs specs{cfg.safety_spec(), cfg.stability_spec(data.target), cfg.risk, cfg.sigma};
    AssembleOptions opts;

    const auto plain = assemble(pairs, model, specs, SampleSet{}, opts);
    CHECK(plain.constraints.empty());
    CHECK(plain.features.rows() == static_cast<Eigen::Index>(pairs.size()));
    model.output_weights = ridge_solution(plain);

    const auto grid = grid_domain(box_from_ellipse(specs.safety, 0.2), 0.02);
    const auto pick = select_active_points(grid, model, specs, 1000, 2);
    const auto pb = assemble(pairs, model, specs, pick, opts);
    CHECK(pb.constraints.size() == 2000);
    CHECK(pb.feature_length() == 26);
    CHECK(pb.state_dim() == 2);

    SampleSet dup = pick;
    dup.points.insert(dup.points.end(), pick.points.begin(), pick.points.begin() + 100);
    CHECK(assemble(pairs, model, specs, dup, opts).constraints.size() == 2000);
    CHECK(unique_points(dup).size() == 1000);

    auto tight = specs;
    tight.safety.zeta = 5.0;
    CHECK_THROWS_AS(assemble(pairs, model, tight, pick, opts), StructuralInfeasibility);
    fs::remove_all(dir);
}

TEST_CASE("unconstrained training is the closed-form ridge fit") {
    const auto dir = scratch("ridge");
    auto cfg = snake_config(dir, {"train.constraints=false"});
    const auto res = train_model(cfg, translate(generate_dataset(cfg)));
    // Normal equations in extended precision.
    using LMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
    const LMat G = res.problem.features.cast<long double>();
    const long double c_d = 1.0L / (2.0L * cfg.sigma * cfg.sigma);
    LMat H = 2.0L * c_d * G.transpose() * G;
    H.diagonal().array() += 2.0L * static_cast<long double>(cfg.train.mu_w);
    const LMat rhs = 2.0L * c_d * G.transpose() * res.problem.targets.cast<long double>();
    const Mat W = H.fullPivLu().solve(rhs).cast<double>();
    CHECK(res.solution.status == SolveStatus::optimal);
    CHECK((res.model.output_weights - W).norm() <= 1e-8 * W.norm());
    fs::remove_all(dir);
}

TEST_CASE("degenerate stability constraint pins the equilibrium") {
    const auto dir = scratch("pin");
    auto cfg = snake_config(dir, {"noise.sigma=0", "train.objective_sigma=0.02", "stability.rho=1",
                                  "stability.delta=0", "sampler.budget=12", "train.sampling_rounds=0"});
    const auto data = translate(generate_dataset(cfg));
    const auto res = train_model(cfg, data);
    REQUIRE(res.solution.status == SolveStatus::optimal);
    const Vec xs = data.target;
    CHECK((predict_mean(res.model, InputVector::from_state(xs, xs)) - xs).norm() < 1e-8);

    RolloutConfig rc;
    rc.horizon = 20;
    const auto t = rollout(res.model, xs, xs, rc);
    CHECK((t.states.rowwise() - xs.transpose()).cwiseAbs().maxCoeff() < 1e-8);

    ConstraintSpecs specs{cfg.safety_spec(), cfg.stability_spec(xs), cfg.risk, 0.0};
    SampleSet at;
    at.points = {xs};
    const auto audit = one_step_constraint_audit(res.model, specs, at);
    CHECK(std::abs(audit.rows[0].lyapunov_step) < 1e-8);
    fs::remove_all(dir);
}

TEST_CASE("generate writes a deterministic dataset") {
    const auto dir = scratch("generate");
    const auto robot = load_config(kSource / "configs" / "robot.json", {"output_dir=\"" + (dir / "a").string() + "\""});
    std::ostringstream log;
    CHECK(cmd_generate(robot, log) == kExitOk);
    for (int i = 0; i < 5; ++i) CHECK(fs::exists(dir / "a" / "data" / ("robot_" + std::to_string(i) + ".csv")));
    CHECK(fs::exists(dir / "a" / "data" / "robot.json"));
    CHECK(fs::exists(dir / "a" / "manifest.json"));

    const auto again = load_config(kSource / "configs" / "robot.json", {"output_dir=\"" + (dir / "b").string() + "\""});
    CHECK(cmd_generate(again, log) == kExitOk);
    for (int i = 0; i < 5; ++i) {
        const std::string f = "data/robot_" + std::to_string(i) + ".csv";
        CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    }
    const auto data = load_dataset(robot);
    const auto safety = robot.safety_spec();
    for (const auto& d : data.demonstrations) {
        CHECK(d.cwiseAbs().maxCoeff() <= 1.90);
        CHECK((d.row(d.rows() - 1).transpose() - robot.robot.target).cwiseAbs().maxCoeff() <= 0.01);
        for (Eigen::Index k = 0; k < d.rows(); ++k) CHECK(barrier_value(safety, d.row(k).transpose()) > 0.0);
    }
    fs::remove_all(dir);
}

TEST_CASE("export and verify on the demonstration preset") {
    const auto dir = scratch("snake");
    const auto cfg = snake_config(dir, {"rollout.mc_runs=10"});
    std::ostringstream log;
    CHECK(cmd_all(cfg, log) == kExitOk);
    const auto ex = dir / "export";
    CHECK(fs::exists(ex / "ellipse.csv"));
    for (int i = 0; i < 7; ++i) {
        CHECK(fs::exists(ex / ("demo_" + std::to_string(i) + ".csv")));
        CHECK(fs::exists(ex / ("reproduced_" + std::to_string(i) + ".csv")));
    }
    const Mat boundary = ellipse_boundary(cfg.safety_spec(), 360);
    for (Eigen::Index k = 0; k < boundary.rows(); ++k)
        CHECK(std::abs(barrier_value(cfg.safety_spec(), boundary.row(k).transpose())) < 1e-9);

    const auto summary = read_json(dir / "verify_summary.json");
    CHECK(summary.at("violation_count").get<int>() == 0);

    // Ten times the weights breaks the safe set; verify must report it.
    auto model = load_model(dir / "model.json");
    model.output_weights *= 10.0;
    model.weight_bound_out = 1e9;
    save_model(model, dir / "tampered.json");
    CHECK(cmd_verify(cfg, dir / "tampered.json", log) == kExitViolations);
    CHECK(read_json(dir / "verify_summary.json").at("violation_count").get<int>() > 0);

    const auto rc0 = snake_config(dir, {"rollout.mc_runs=3", "rollout.horizon=0"});
    CHECK(cmd_verify(rc0, std::nullopt, log) == kExitOk);
    const auto s0 = read_json(dir / "verify" / "summary.json");
    CHECK(s0.at("runs").size() == 3);
    fs::remove_all(dir);
}

TEST_CASE("command line exit codes") {
    const auto dir = scratch("cli");
    const std::string snake = (kSource / "configs" / "snake.json").string();
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("generate -c " + snake + " --set 'output_dir=\"/proc/forbidden/x\"'") == kExitIo);
    CHECK(run_cli("generate -c " + (dir / "missing.json").string()) == kExitIo);
    CHECK(run_cli("train -c " + snake + " --set elm.bogus=1") == kExitIo);
    const std::string out = "--set 'output_dir=\"" + (dir / "run").string() + "\"'";
    CHECK(run_cli("generate -c " + snake + " " + out) == kExitOk);
    CHECK(run_cli("train -c " + snake + " " + out + " --set safety.zeta=5") == kExitInfeasible);
    CHECK(run_cli("train -c " + snake + " " + out + " --set solver.max_iters=3") == kExitMaxIters);
    CHECK(run_cli("train -c " + snake + " " + out) == kExitOk);
    CHECK(run_cli("verify -c " + snake + " " + out + " --set rollout.mc_runs=5") == kExitOk);
    CHECK(run_cli("verify -c " + snake + " " + out + " --model " + (dir / "nope.json").string()) == kExitIo);
    fs::remove_all(dir);
}
