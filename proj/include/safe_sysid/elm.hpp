#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace safe_sysid {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct ElmDims {
    int n = 0;    // state dimension
    int m = 0;    // error dimension
    int n_h = 0;  // hidden neurons

    int feature_length() const { return n_h + 1; }
    int input_length() const { return n + m + 1; }
    void validate() const;
    bool operator==(const ElmDims&) const = default;
};

/// Network input s = [x; e; 1]. The trailing constant is implicit.
struct InputVector {
    Vec state;
    Vec error;

    static InputVector from_state(const Vec& x, const Vec& equilibrium) {
        return {x, x - equilibrium};
    }
    /// [state; error] without the constant.
    Vec projected_part() const;
    /// Full s = [state; error; 1].
    Vec stacked() const;
};

/// Consecutive (s_k, x_{k+1}) pairs from trajectories.
struct TrainingPairs {
    std::vector<InputVector> inputs;
    std::vector<Vec> targets;

    std::size_t size() const { return inputs.size(); }
};

struct NoiseSpec {
    double sigma = 0.0;
};

/// Single-hidden-layer sigmoid network; only output_weights are trained.
///
/// Hidden pre-activation for neuron i is slopes[i] * (U[:, i] . [x; e]) + biases[i].
/// output_weights has shape (n_h + 1) x n, the last row multiplying the
/// constant feature.
struct ElmModel {
    ElmDims dims;
    Mat input_weights;   // (n + m) x n_h
    Vec slopes;          // n_h
    Vec biases;          // n_h
    Mat output_weights;  // (n_h + 1) x n
    double weight_bound_in = 0.0;
    double weight_bound_out = 10.0;
    double sigma = 0.0;

    /// Throws InvalidInput on any shape mismatch, non-finite entry, or
    /// violated bound on the input weights.
    void validate() const;
    /// Assumption on the output weights is report-only: true when
    /// ||W||_F <= weight_bound_out.
    bool output_bound_holds() const;
};

/// Numerically stable logistic function.
double sigmoid(double z);

/// g(s) = [psi(q s); 1], length n_h + 1.
Vec feature_map(const ElmModel& model, const InputVector& input);

/// W^T g(s).
Vec predict_mean(const ElmModel& model, const InputVector& input);

/// W^T g(s) + eps with eps ~ N(0, sigma^2 I), drawn from a generator seeded with `seed`.
Vec predict_stochastic(const ElmModel& model, const InputVector& input, NoiseSpec noise,
                       std::uint64_t seed);

struct BipResult {
    Mat input_weights;
    Vec slopes;
    Vec biases;
};

/// Batch intrinsic plasticity. Input weights are uniform on [-1, 1]; each
/// neuron's slope and bias are the least-squares map from its sorted raw
/// projections onto the inverse-sigmoid of sorted targets drawn uniformly from
/// (0.05, 0.95). Pure function of (inputs, seed).
BipResult bip_initialize(const ElmDims& dims, std::span<const InputVector> training_inputs,
                         std::uint64_t seed);

/// Builds an untrained model (zero output weights) from a BIP result.
ElmModel make_model(const ElmDims& dims, BipResult bip, double weight_bound_out, double sigma);

/// g_bar = |a_p| * U_bar * sqrt(n_h) / (2 sqrt 2).
double lipschitz_feature_bound(const ElmModel& model);

}  // namespace safe_sysid
