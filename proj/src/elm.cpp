#include "safe_sysid/elm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "safe_sysid/error.hpp"

namespace safe_sysid {

namespace {

constexpr double kTargetLow = 0.05;
constexpr double kTargetHigh = 0.95;
constexpr double kMinActivationSpread = 0.1;
constexpr int kBipRedraws = 16;

double logit(double p) { return std::log(p / (1.0 - p)); }

void require_dims(const ElmModel& model, const InputVector& input) {
    if (input.state.size() != model.dims.n || input.error.size() != model.dims.m) {
        std::ostringstream os;
        os << "input dimension mismatch: got state " << input.state.size() << ", error "
           << input.error.size() << "; model expects " << model.dims.n << ", " << model.dims.m;
        throw InvalidInput(os.str());
    }
}

}  // namespace

void ElmDims::validate() const {
    if (n <= 0 || m <= 0 || n_h <= 0) throw InvalidInput("ElmDims entries must be positive");
}

Vec InputVector::projected_part() const {
    Vec z(state.size() + error.size());
    z << state, error;
    return z;
}

Vec InputVector::stacked() const {
    Vec s(state.size() + error.size() + 1);
    s << state, error, 1.0;
    return s;
}

void ElmModel::validate() const {
    dims.validate();
    const auto nz = dims.n + dims.m;
    if (input_weights.rows() != nz || input_weights.cols() != dims.n_h)
        throw InvalidInput("input_weights must be (n+m) x n_h");
    if (slopes.size() != dims.n_h || biases.size() != dims.n_h)
        throw InvalidInput("slopes and biases must have n_h entries");
    if (output_weights.rows() != dims.feature_length() || output_weights.cols() != dims.n)
        throw InvalidInput("output_weights must be (n_h+1) x n");
    if (!input_weights.allFinite() || !slopes.allFinite() || !biases.allFinite() ||
        !output_weights.allFinite())
        throw InvalidInput("model contains non-finite entries");
    if (!(weight_bound_in > 0.0) || !(weight_bound_out > 0.0))
        throw InvalidInput("weight bounds must be positive");
    if (input_weights.norm() > weight_bound_in * (1.0 + 1e-12))
        throw InvalidInput("||U||_F exceeds weight_bound_in");
    if (!(sigma >= 0.0)) throw InvalidInput("sigma must be non-negative");
}

bool ElmModel::output_bound_holds() const { return output_weights.norm() <= weight_bound_out; }

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

Vec feature_map(const ElmModel& model, const InputVector& input) {
    require_dims(model, input);
    const Vec z = input.projected_part();
    const Vec pre = model.slopes.cwiseProduct(model.input_weights.transpose() * z) + model.biases;
    Vec g(model.dims.feature_length());
    for (int i = 0; i < model.dims.n_h; ++i) g[i] = sigmoid(pre[i]);
    g[model.dims.n_h] = 1.0;
    return g;
}

Vec predict_mean(const ElmModel& model, const InputVector& input) {
    return model.output_weights.transpose() * feature_map(model, input);
}

Vec predict_stochastic(const ElmModel& model, const InputVector& input, NoiseSpec noise,
                       std::uint64_t seed) {
    if (!(noise.sigma >= 0.0)) throw InvalidInput("sigma must be non-negative");
    Vec mean = predict_mean(model, input);
    if (noise.sigma == 0.0) return mean;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, noise.sigma);
    for (auto i = 0; i < mean.size(); ++i) mean[i] += normal(rng);
    return mean;
}

BipResult bip_initialize(const ElmDims& dims, std::span<const InputVector> training_inputs,
                         std::uint64_t seed) {
    dims.validate();
    const auto count = static_cast<int>(training_inputs.size());
    if (count < dims.n_h) {
        throw InvalidInput("BIP needs at least n_h training inputs");
    }
    const int nz = dims.n + dims.m;
    Mat z(count, nz);
    for (int k = 0; k < count; ++k) {
        const auto& in = training_inputs[k];
        if (in.state.size() != dims.n || in.error.size() != dims.m)
            throw InvalidInput("training input dimension mismatch");
        z.row(k) = in.projected_part().transpose();
    }
    // Zero-variance regressor: every neuron would be constant.
    if (((z.rowwise() - z.colwise().mean()).cwiseAbs().maxCoeff()) == 0.0) {
        throw InitializationFailure("BIP: all training inputs are identical");
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> weight_dist(-1.0, 1.0);
    std::uniform_real_distribution<double> target_dist(kTargetLow, kTargetHigh);

    BipResult out;
    out.input_weights.resize(nz, dims.n_h);
    out.slopes.resize(dims.n_h);
    out.biases.resize(dims.n_h);

    Vec proj(count);
    Vec targets(count);
    for (int i = 0; i < dims.n_h; ++i) {
        bool accepted = false;
        for (int attempt = 0; attempt < kBipRedraws && !accepted; ++attempt) {
            Vec u(nz);
            for (int r = 0; r < nz; ++r) u[r] = weight_dist(rng);
            proj = z * u;
            for (int k = 0; k < count; ++k) targets[k] = logit(target_dist(rng));

            Vec sorted_proj = proj;
            std::sort(sorted_proj.begin(), sorted_proj.end());
            std::sort(targets.begin(), targets.end());

            // Least squares on [proj, 1] * (slope, bias) = logit(targets).
            const double mean_p = sorted_proj.mean();
            const double mean_t = targets.mean();
            const Vec dp = sorted_proj.array() - mean_p;
            const double sxx = dp.squaredNorm();
            if (!(sxx > 1e-24 * count)) continue;
            const double slope = dp.dot(targets.array().matrix() - Vec::Constant(count, mean_t)) / sxx;
            const double bias = mean_t - slope * mean_p;

            double lo = 1.0;
            double hi = 0.0;
            for (int k = 0; k < count; ++k) {
                const double a = sigmoid(slope * proj[k] + bias);
                lo = std::min(lo, a);
                hi = std::max(hi, a);
            }
            if (!std::isfinite(slope) || hi - lo < kMinActivationSpread) continue;

            out.input_weights.col(i) = u;
            out.slopes[i] = slope;
            out.biases[i] = bias;
            accepted = true;
        }
        if (!accepted) {
            std::ostringstream os;
            os << "BIP: neuron " << i << " stays constant or saturated after " << kBipRedraws
               << " draws";
            throw InitializationFailure(os.str());
        }
    }
    return out;
}

ElmModel make_model(const ElmDims& dims, BipResult bip, double weight_bound_out, double sigma) {
    ElmModel model;
    model.dims = dims;
    model.input_weights = std::move(bip.input_weights);
    model.slopes = std::move(bip.slopes);
    model.biases = std::move(bip.biases);
    model.output_weights = Mat::Zero(dims.feature_length(), dims.n);
    model.weight_bound_in = model.input_weights.norm();
    model.weight_bound_out = weight_bound_out;
    model.sigma = sigma;
    model.validate();
    return model;
}

double lipschitz_feature_bound(const ElmModel& model) {
    const double slope_norm = model.slopes.norm();
    return slope_norm * model.weight_bound_in * std::sqrt(static_cast<double>(model.dims.n_h)) /
           (2.0 * std::sqrt(2.0));
}

}  // namespace safe_sysid
