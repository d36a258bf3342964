#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "safe_sysid/elm.hpp"

namespace safe_sysid {

/// Planar two-link arm, point masses at the link ends.
struct TwoLinkParams {
    double L1 = 1.0;
    double L2 = 1.0;
    double m1 = 1.0;
    double m2 = 1.0;
    double gravity = 9.81;
    double dt = 1e-3;

    void validate() const;
};

struct PidGains {
    Vec kp = Vec::Constant(2, 60.0);
    Vec ki = Vec::Constant(2, 5.0);
    Vec kd = Vec::Constant(2, 20.0);

    void validate() const;
};

Mat mass_matrix(const TwoLinkParams& p, const Vec& q);
/// C(q, qdot) qdot
Vec coriolis_torque(const TwoLinkParams& p, const Vec& q, const Vec& qdot);
Vec gravity_torque(const TwoLinkParams& p, const Vec& q);
double kinetic_energy(const TwoLinkParams& p, const Vec& q, const Vec& qdot);

/// qddot = M(q)^-1 (u - C(q, qdot) qdot - G(q)).
Vec el_dynamics(const TwoLinkParams& p, const Vec& q, const Vec& qdot, const Vec& u);

struct ArmState {
    Vec q;
    Vec qdot;
};

/// One classical RK4 step with u held constant.
ArmState rk4_step(const TwoLinkParams& p, const ArmState& s, const Vec& u, double h);

/// Demonstrations sampled at a fixed period. Each trajectory stores one state
/// per row; the error e_k = x_k - target is derived, never stored.
struct TrajectoryDataset {
    std::vector<Mat> demonstrations;
    Vec target;
    double period = 0.01;
    bool translated = false;
    Vec shift;  // translated = original - shift
    std::vector<Mat> originals;  // kept when translated, for exact inversion
    Vec original_target;

    int dims() const { return static_cast<int>(target.size()); }
    std::size_t sample_count() const;
    void validate() const;
};

struct RobotDataConfig {
    std::size_t steps = 600;   // recorded samples per trajectory, including x0
    double period = 0.01;
    double joint_limit = 1.90;
    double tolerance = 0.01;   // final |q - target|
    bool gravity_compensation = true;
};

/// Simulates the PID-regulated arm from each initial condition (zero initial
/// velocity) and records joint positions. Throws GenerationError naming the
/// initial condition when a run fails to converge or leaves the joint limits.
TrajectoryDataset generate_robot_data(const TwoLinkParams& params, const std::vector<PidGains>& gains,
                                      const std::vector<Vec>& initial_conditions, const Vec& target,
                                      const RobotDataConfig& config = {});

/// Smooth S-shaped planar curves ending at a common point, standing in for a
/// handwriting dataset when none is supplied.
TrajectoryDataset synthetic_snake(std::size_t demos, std::size_t samples, std::uint64_t seed);

/// Manifest JSON {period, dims, files[], target?} next to one CSV per demonstration.
void save_dataset(const TrajectoryDataset& data, const std::filesystem::path& manifest);
TrajectoryDataset load_demonstrations(const std::filesystem::path& manifest, bool translate_to_origin);

/// Moves the common endpoint (target) to the origin. Endpoints spread by more
/// than 5% of the extent produce a warning on stderr and the mean endpoint is used.
TrajectoryDataset translate(const TrajectoryDataset& data);
TrajectoryDataset untranslate(const TrajectoryDataset& data);

TrainingPairs to_training_pairs(const TrajectoryDataset& data);

}  // namespace safe_sysid
