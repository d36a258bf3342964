#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "safe_sysid/constraints.hpp"
#include "safe_sysid/elm.hpp"

namespace safe_sysid {

struct DomainBox {
    Vec lower;
    Vec upper;
    double inflation = 0.2;

    void validate() const;
};

/// Axis-aligned bounding box of the safe ellipse, each half-width enlarged by
/// `inflation` (0.2 means 20%).
DomainBox box_from_ellipse(const SafetySpec& safety, double inflation);

struct SampleSet {
    std::vector<Vec> points;
    double tau = 0.0;  // requested resolution; realised per-axis spacing is <= tau

    std::size_t count() const { return points.size(); }
};

inline constexpr std::size_t kDefaultGridCap = 1'000'000;

/// Uniform grid with per-axis spacing <= tau that includes both faces of the
/// box, so every box point is within tau/2 of a grid point in the max norm.
SampleSet grid_domain(const DomainBox& box, double tau, std::size_t cap = kDefaultGridCap);

/// Specs needed to score a point.
struct ConstraintSpecs {
    SafetySpec safety;
    StabilitySpec stability;
    RiskSpec risk;
    double sigma = 0.0;
};

/// Constraint slack min(Gamma_B - q_B, Gamma_L - q_L) at each grid point under
/// the model's current output weights (no sampling margins).
Vec point_slacks(const SampleSet& grid, const ElmModel& model, const ConstraintSpecs& specs);

/// Half of the budget goes to the points with the smallest slack under the
/// model's current output weights, the rest to a seeded uniform draw from the
/// remaining grid points. Output keeps grid order; ties break by index.
SampleSet select_active_points(const SampleSet& grid, const ElmModel& model,
                               const ConstraintSpecs& specs, std::size_t budget,
                               std::uint64_t seed);

/// One state per row, comma separated.
void write_samples_csv(const SampleSet& samples, const std::filesystem::path& path);

}  // namespace safe_sysid
