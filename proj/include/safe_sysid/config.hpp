#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "safe_sysid/constraints.hpp"
#include "safe_sysid/dynamics.hpp"
#include "safe_sysid/elm.hpp"
#include "safe_sysid/qcqp.hpp"
#include "safe_sysid/rollout.hpp"

namespace safe_sysid {

struct EllipseSpec {
    double iota1 = 1.0;
    double iota2 = 1.0;
    double alpha = 0.0;
    Vec center;
};

struct SamplerSettings {
    double tau = 0.05;
    double inflation = 0.2;
    std::size_t budget = 1000;
    std::size_t grid_cap = kDefaultGridCap;
    bool theorem_margins = false;  // tighten every bound by the sampling margin
};

struct TrainSettings {
    double mu_w = 0.01;
    std::optional<double> objective_sigma;  // defaults to noise.sigma
    bool constraints = true;                // false: plain ridge fit
    int refine_rounds = 20;
    int sampling_rounds = 10;
};

struct RobotSettings {
    TwoLinkParams params;
    std::vector<PidGains> gains;  // empty: defaults; one entry: shared; else per trajectory
    Vec target = (Vec(2) << M_PI / 2, -M_PI / 2).finished();
    int trajectories = 5;
    double min_start_distance = 0.5;
    RobotDataConfig data;
};

struct DemoSettings {
    bool translate = true;
    int synthetic_demos = 7;
    int synthetic_samples = 200;
};

struct RunConfig {
    std::string experiment = "robot";  // robot | demonstrations
    std::filesystem::path dataset;     // manifest; empty means generated under the output dir
    int n_h = 25;
    double sigma = 0.02;
    EllipseSpec ellipse;
    double gamma = 0.9;
    double zeta = 0.01;
    std::optional<Mat> P;            // identity when absent
    std::optional<Vec> equilibrium;  // dataset target when absent
    double rho = 0.01;
    double delta = 0.01;
    RiskSpec risk;
    SamplerSettings sampler;
    SolverConfig solver;
    RolloutConfig rollout;
    TrainSettings train;
    RobotSettings robot;
    DemoSettings demo;
    std::uint64_t seed = 7;
    std::filesystem::path output_dir = "out";

    nlohmann::json source;  // fully merged JSON the struct was read from

    void validate() const;
    std::filesystem::path dataset_manifest() const;
    SafetySpec safety_spec() const;
    StabilitySpec stability_spec(const Vec& target) const;
};

/// Every recognised key with its default value.
nlohmann::json default_config_json();

/// Applies "dotted.path=value" to `j`. The value is parsed as JSON, falling
/// back to a plain string. The path must name an existing key.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Defaults, then the file (unknown keys rejected), then overrides.
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
RunConfig config_from_json(const nlohmann::json& j);

/// FNV-1a of the canonical merged JSON, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

}  // namespace safe_sysid
