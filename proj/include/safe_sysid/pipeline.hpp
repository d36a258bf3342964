#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>

#include "safe_sysid/config.hpp"
#include "safe_sysid/dynamics.hpp"
#include "safe_sysid/qcqp.hpp"
#include "safe_sysid/rollout.hpp"
#include "safe_sysid/sampler.hpp"

namespace safe_sysid {

inline constexpr int kExitOk = 0;
inline constexpr int kExitViolations = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitInfeasible = 3;
inline constexpr int kExitMaxIters = 4;

int exit_code_for(SolveStatus status);

/// Robot: PID-controlled arm runs from initial conditions drawn uniformly in
/// the safe ellipse, redrawn until the whole run stays inside it.
/// Demonstrations: synthetic snake-like curves.
TrajectoryDataset generate_dataset(const RunConfig& cfg);
/// Reads the manifest, translating demonstrations to the origin when configured.
TrajectoryDataset load_dataset(const RunConfig& cfg);

struct TrainOutcome {
    ElmModel model;
    Solution solution;
    SampleSet samples;
    QcqpProblem problem;
    int rounds = 0;          // solves spent on the chance-constraint coefficients
    bool fallback = false;   // ended on the W-independent coefficients
    int sampling_passes = 0;
    double grid_min_slack = 0.0;  // over the whole grid at the final weights
};

/// BIP init, ridge warm start, then alternates active sampling and solving.
/// Each solve is repeated until every sampled point meets its chance
/// constraint at the solution's own moments; sampling is repeated until the
/// whole grid does, or the pass limit is reached.
TrainOutcome train_model(const RunConfig& cfg, const TrajectoryDataset& data);

/// First sample of every demonstration.
std::vector<Vec> nominal_starts(const TrajectoryDataset& data);

int cmd_generate(const RunConfig& cfg, std::ostream& out);
int cmd_train(const RunConfig& cfg, std::ostream& out);
int cmd_verify(const RunConfig& cfg, const std::optional<std::filesystem::path>& model_path, std::ostream& out);
int cmd_export(const RunConfig& cfg, const std::optional<std::filesystem::path>& model_path, std::ostream& out);
int cmd_all(const RunConfig& cfg, std::ostream& out);

/// Points on h(x) = 0.
Mat ellipse_boundary(const SafetySpec& safety, int count);

}  // namespace safe_sysid
