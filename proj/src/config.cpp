#include "safe_sysid/config.hpp"

#include <cstdio>
#include <sstream>

#include "safe_sysid/error.hpp"
#include "safe_sysid/serialize.hpp"

namespace safe_sysid {

using nlohmann::json;

json default_config_json() {
    const RunConfig d;
    const SolverConfig s;
    const RolloutConfig r;
    const TwoLinkParams p;
    const RobotDataConfig rd;
    return {
        {"experiment", d.experiment},
        {"dataset", ""},
        {"seed", d.seed},
        {"output_dir", d.output_dir.string()},
        {"elm", {{"n_h", d.n_h}}},
        {"noise", {{"sigma", d.sigma}}},
        {"safety", {{"ellipse", {{"iota1", 1.0}, {"iota2", 1.0}, {"alpha", 0.0}, {"center", {0.0, 0.0}}}},
                    {"gamma", d.gamma},
                    {"zeta", d.zeta}}},
        {"stability", {{"P", nullptr}, {"equilibrium", nullptr}, {"rho", d.rho}, {"delta", d.delta}}},
        {"risk", {{"p_k", d.risk.p_k}, {"xi", d.risk.xi}}},
        {"sampler", {{"tau", d.sampler.tau},
                     {"inflation", d.sampler.inflation},
                     {"budget", d.sampler.budget},
                     {"grid_cap", d.sampler.grid_cap},
                     {"theorem_margins", d.sampler.theorem_margins}}},
        {"solver", {{"tol_feas", s.tol_feas},
                    {"tol_gap", s.tol_gap},
                    {"max_iters", s.max_iters},
                    {"step_backtrack", s.step_backtrack},
                    {"barrier_growth", s.barrier_growth}}},
        {"rollout", {{"horizon", r.horizon},
                     {"noise", r.noise},
                     {"initial_perturbation_radius", r.initial_perturbation_radius},
                     {"mc_runs", r.mc_runs},
                     {"convergence_radius", r.convergence_radius},
                     {"seed", r.seed}}},
        {"train", {{"mu_w", d.train.mu_w},
                   {"objective_sigma", nullptr},
                   {"constraints", d.train.constraints},
                   {"refine_rounds", d.train.refine_rounds},
                   {"sampling_rounds", d.train.sampling_rounds}}},
        {"robot", {{"params", {{"L1", p.L1}, {"L2", p.L2}, {"m1", p.m1}, {"m2", p.m2}, {"gravity", p.gravity}, {"dt", p.dt}}},
                   {"gains", json::array()},
                   {"target", vector_to_json(d.robot.target)},
                   {"trajectories", d.robot.trajectories},
                   {"min_start_distance", d.robot.min_start_distance},
                   {"steps", rd.steps},
                   {"period", rd.period},
                   {"joint_limit", rd.joint_limit},
                   {"tolerance", rd.tolerance},
                   {"gravity_compensation", rd.gravity_compensation}}},
        {"demo", {{"translate", d.demo.translate},
                  {"synthetic_demos", d.demo.synthetic_demos},
                  {"synthetic_samples", d.demo.synthetic_samples}}},
    };
}

namespace {

void check_keys(const json& given, const json& defaults, const std::string& prefix) {
    for (auto it = given.begin(); it != given.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!defaults.contains(it.key())) throw ParseError("unknown config key '" + path + "'");
        const json& d = defaults.at(it.key());
        if (d.is_object()) {
            if (!it.value().is_object()) throw ParseError("config key '" + path + "' must be an object");
            check_keys(it.value(), d, path);
        }
    }
}

json::json_pointer dotted_pointer(const std::string& dotted) {
    std::string p;
    std::stringstream ss(dotted);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (part.empty()) throw ParseError("empty segment in override path '" + dotted + "'");
        p += "/" + part;
    }
    return json::json_pointer(p);
}

PidGains gains_from_json(const json& j) {
    PidGains g;
    if (j.contains("kp")) g.kp = vector_from_json(j.at("kp"));
    if (j.contains("ki")) g.ki = vector_from_json(j.at("ki"));
    if (j.contains("kd")) g.kd = vector_from_json(j.at("kd"));
    return g;
}

}  // namespace

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ParseError("override must look like key.path=value: " + assignment);
    const auto ptr = dotted_pointer(assignment.substr(0, eq));
    if (!j.contains(ptr)) throw ParseError("override names unknown key '" + assignment.substr(0, eq) + "'");
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    j[ptr] = value;
}

RunConfig config_from_json(const json& j) {
    RunConfig c;
    try {
        c.experiment = j.at("experiment").get<std::string>();
        c.dataset = j.at("dataset").get<std::string>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.output_dir = j.at("output_dir").get<std::string>();
        c.n_h = j.at("elm").at("n_h").get<int>();
        c.sigma = j.at("noise").at("sigma").get<double>();

        const auto& s = j.at("safety");
        const auto& e = s.at("ellipse");
        c.ellipse.iota1 = e.at("iota1").get<double>();
        c.ellipse.iota2 = e.at("iota2").get<double>();
        c.ellipse.alpha = e.at("alpha").get<double>();
        c.ellipse.center = vector_from_json(e.at("center"));
        c.gamma = s.at("gamma").get<double>();
        c.zeta = s.at("zeta").get<double>();

        const auto& st = j.at("stability");
        if (!st.at("P").is_null()) c.P = matrix_from_json(st.at("P"));
        if (!st.at("equilibrium").is_null()) c.equilibrium = vector_from_json(st.at("equilibrium"));
        c.rho = st.at("rho").get<double>();
        c.delta = st.at("delta").get<double>();

        c.risk.p_k = j.at("risk").at("p_k").get<double>();
        c.risk.xi = j.at("risk").at("xi").get<double>();

        const auto& sa = j.at("sampler");
        c.sampler.tau = sa.at("tau").get<double>();
        c.sampler.inflation = sa.at("inflation").get<double>();
        c.sampler.budget = sa.at("budget").get<std::size_t>();
        c.sampler.grid_cap = sa.at("grid_cap").get<std::size_t>();
        c.sampler.theorem_margins = sa.at("theorem_margins").get<bool>();

        const auto& so = j.at("solver");
        c.solver.tol_feas = so.at("tol_feas").get<double>();
        c.solver.tol_gap = so.at("tol_gap").get<double>();
        c.solver.max_iters = so.at("max_iters").get<int>();
        c.solver.step_backtrack = so.at("step_backtrack").get<double>();
        c.solver.barrier_growth = so.at("barrier_growth").get<double>();

        const auto& r = j.at("rollout");
        c.rollout.horizon = r.at("horizon").get<int>();
        c.rollout.noise = r.at("noise").get<bool>();
        c.rollout.initial_perturbation_radius = r.at("initial_perturbation_radius").get<double>();
        c.rollout.mc_runs = r.at("mc_runs").get<int>();
        c.rollout.convergence_radius = r.at("convergence_radius").get<double>();
        c.rollout.seed = r.at("seed").get<std::uint64_t>();

        const auto& t = j.at("train");
        c.train.mu_w = t.at("mu_w").get<double>();
        if (!t.at("objective_sigma").is_null()) c.train.objective_sigma = t.at("objective_sigma").get<double>();
        c.train.constraints = t.at("constraints").get<bool>();
        c.train.refine_rounds = t.at("refine_rounds").get<int>();
        c.train.sampling_rounds = t.at("sampling_rounds").get<int>();

        const auto& rb = j.at("robot");
        const auto& pp = rb.at("params");
        c.robot.params = {pp.at("L1").get<double>(), pp.at("L2").get<double>(), pp.at("m1").get<double>(),
                          pp.at("m2").get<double>(), pp.at("gravity").get<double>(), pp.at("dt").get<double>()};
        for (const auto& g : rb.at("gains")) c.robot.gains.push_back(gains_from_json(g));
        c.robot.target = vector_from_json(rb.at("target"));
        c.robot.trajectories = rb.at("trajectories").get<int>();
        c.robot.min_start_distance = rb.at("min_start_distance").get<double>();
        c.robot.data.steps = rb.at("steps").get<std::size_t>();
        c.robot.data.period = rb.at("period").get<double>();
        c.robot.data.joint_limit = rb.at("joint_limit").get<double>();
        c.robot.data.tolerance = rb.at("tolerance").get<double>();
        c.robot.data.gravity_compensation = rb.at("gravity_compensation").get<bool>();

        const auto& d = j.at("demo");
        c.demo.translate = d.at("translate").get<bool>();
        c.demo.synthetic_demos = d.at("synthetic_demos").get<int>();
        c.demo.synthetic_samples = d.at("synthetic_samples").get<int>();
    } catch (const json::exception& ex) {
        throw ParseError(std::string("config: ") + ex.what());
    }
    c.source = j;
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    json j = default_config_json();
    if (!path.empty()) {
        const json given = read_json(path);
        if (!given.is_object()) throw ParseError(path.string() + ": config must be a JSON object");
        check_keys(given, j, "");
        j.merge_patch(given);
        // merge_patch drops keys set to null; restore them as explicit nulls.
        const json defaults = default_config_json();
        for (const char* key : {"stability", "train"})
            for (auto it = defaults.at(key).begin(); it != defaults.at(key).end(); ++it)
                if (!j.at(key).contains(it.key())) j[key][it.key()] = nullptr;
    }
    for (const auto& o : overrides) apply_override(j, o);
    return config_from_json(j);
}

void RunConfig::validate() const {
    if (experiment != "robot" && experiment != "demonstrations")
        throw InvalidInput("experiment must be 'robot' or 'demonstrations'");
    if (n_h < 1) throw InvalidInput("elm.n_h must be positive");
    if (!(sigma >= 0.0)) throw InvalidInput("noise.sigma must be non-negative");
    if (!(ellipse.iota1 > 0.0 && ellipse.iota2 > 0.0)) throw InvalidInput("ellipse axes must be positive");
    if (ellipse.center.size() != 2) throw InvalidInput("ellipse center must be a 2-vector");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidInput("gamma must lie in (0, 1]");
    if (!(rho > 0.0 && rho <= 1.0)) throw InvalidInput("rho must lie in (0, 1]");
    if (!(zeta >= 0.0) || !(delta >= 0.0)) throw InvalidInput("zeta and delta must be non-negative");
    if (P && (P->rows() != 2 || P->cols() != 2)) throw InvalidInput("stability.P must be 2x2");
    if (equilibrium && equilibrium->size() != 2) throw InvalidInput("stability.equilibrium must be a 2-vector");
    risk.validate();
    if (!(sampler.tau > 0.0)) throw InvalidInput("sampler.tau must be positive");
    if (sampler.budget < 1) throw InvalidInput("sampler.budget must be positive");
    solver.validate();
    rollout.validate();
    if (!(train.mu_w > 0.0)) throw InvalidInput("train.mu_w must be positive");
    if (train.objective_sigma && !(*train.objective_sigma > 0.0))
        throw InvalidInput("train.objective_sigma must be positive");
    if (!train.objective_sigma && !(sigma > 0.0))
        throw InvalidInput("noise.sigma = 0 needs train.objective_sigma for the fit weighting");
    if (train.refine_rounds < 0 || train.sampling_rounds < 0)
        throw InvalidInput("train.refine_rounds and train.sampling_rounds must be non-negative");
    robot.params.validate();
    if (robot.target.size() != 2) throw InvalidInput("robot.target must be a 2-vector");
    if (robot.trajectories < 1) throw InvalidInput("robot.trajectories must be positive");
    if (demo.synthetic_demos < 1 || demo.synthetic_samples < 2) throw InvalidInput("bad synthetic demo sizes");
    if (output_dir.empty()) throw InvalidInput("output_dir must be set");
}

std::filesystem::path RunConfig::dataset_manifest() const {
    if (!dataset.empty()) return dataset;
    return output_dir / "data" / (experiment == "robot" ? "robot.json" : "demos.json");
}

SafetySpec RunConfig::safety_spec() const {
    SafetySpec s;
    s.A = ellipse_matrix(ellipse.iota1, ellipse.iota2, ellipse.alpha);
    s.center = ellipse.center;
    s.gamma = gamma;
    s.zeta = zeta;
    return s;
}

StabilitySpec RunConfig::stability_spec(const Vec& target) const {
    StabilitySpec s;
    s.P = P ? *P : Mat::Identity(2, 2);
    s.equilibrium = equilibrium ? *equilibrium : target;
    s.rho = rho;
    s.delta = delta;
    return s;
}

std::string config_hash(const RunConfig& cfg) {
    const std::string text = cfg.source.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace safe_sysid
