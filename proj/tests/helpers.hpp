#pragma once

#include <cmath>
#include <random>

#include "safe_sysid/elm.hpp"

namespace testutil {

using safe_sysid::Mat;
using safe_sysid::Vec;

inline Vec random_vec(std::mt19937_64& rng, int n, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = u(rng);
    return v;
}

inline Mat random_mat(std::mt19937_64& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Mat m(r, c);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) m(i, j) = u(rng);
    return m;
}

// Symmetric positive definite with eigenvalues in [lo, hi].
inline Mat random_spd(std::mt19937_64& rng, int n, double lo = 0.5, double hi = 2.0) {
    Eigen::HouseholderQR<Mat> qr(random_mat(rng, n, n));
    const Mat Q = qr.householderQ();
    const Vec d = random_vec(rng, n, lo, hi);
    return Q * d.asDiagonal() * Q.transpose();
}

inline safe_sysid::ElmModel random_model(std::mt19937_64& rng, int n, int n_h, double sigma = 0.02) {
    safe_sysid::ElmModel m;
    m.dims = {n, n, n_h};
    m.input_weights = random_mat(rng, 2 * n, n_h);
    m.slopes = random_vec(rng, n_h, 0.5, 2.0);
    m.biases = random_vec(rng, n_h, -1.0, 1.0);
    m.output_weights = random_mat(rng, n_h + 1, n, -0.5, 0.5);
    m.weight_bound_in = m.input_weights.norm();
    m.weight_bound_out = 100.0;
    m.sigma = sigma;
    return m;
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace testutil
