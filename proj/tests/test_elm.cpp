#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "safe_sysid/error.hpp"
#include "safe_sysid/elm.hpp"

using namespace safe_sysid;
using testutil::random_model;
using testutil::random_vec;

TEST_CASE("feature map at zero pre-activation is one half") {
    std::mt19937_64 rng(1);
    auto m = random_model(rng, 2, 6);
    m.biases.setZero();
    const Vec z = Vec::Zero(2);
    const Vec g = feature_map(m, {z, z});
    REQUIRE(g.size() == 7);
    for (int i = 0; i < 6; ++i) CHECK(g[i] == 0.5);
    CHECK(g[6] == 1.0);
}

TEST_CASE("feature map saturates") {
    std::mt19937_64 rng(2);
    auto m = random_model(rng, 2, 5);
    m.input_weights.setZero();
    m.biases.setConstant(40.0);
    const Vec x = random_vec(rng, 2);
    const Vec g = feature_map(m, {x, x});
    for (int i = 0; i < 5; ++i) CHECK(std::abs(g[i] - 1.0) < 1e-12);
    CHECK(sigmoid(-800.0) >= 0.0);
    CHECK(sigmoid(800.0) == 1.0);
}

TEST_CASE("feature norm bounded by sqrt(n_h + 1)") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 200; ++t) {
        const auto m = random_model(rng, 2, 10);
        const Vec x = random_vec(rng, 2, -5, 5);
        const Vec e = random_vec(rng, 2, -5, 5);
        CHECK(feature_map(m, {x, e}).norm() <= std::sqrt(11.0) + 1e-12);
    }
}

TEST_CASE("predict_mean special weights") {
    std::mt19937_64 rng(4);
    auto m = random_model(rng, 2, 4);
    const Vec x = random_vec(rng, 2);
    m.output_weights.setZero();
    CHECK(predict_mean(m, {x, x}).norm() == 0.0);
    const Vec r = random_vec(rng, 2);
    m.output_weights.row(4) = r.transpose();
    CHECK((predict_mean(m, {x, x}) - r).norm() == 0.0);
}

TEST_CASE("predict_mean matches a step by step evaluation") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 50; ++t) {
        const auto m = random_model(rng, 2, 7);
        const Vec x = random_vec(rng, 2);
        const Vec e = random_vec(rng, 2);
        Vec z(4);
        z << x, e;
        Vec out = Vec::Zero(2);
        for (int i = 0; i < 7; ++i) {
            double pre = m.biases[i];
            for (int r = 0; r < 4; ++r) pre += m.slopes[i] * m.input_weights(r, i) * z[r];
            const double act = 1.0 / (1.0 + std::exp(-pre));
            for (int j = 0; j < 2; ++j) out[j] += m.output_weights(i, j) * act;
        }
        for (int j = 0; j < 2; ++j) out[j] += m.output_weights(7, j);
        CHECK((predict_mean(m, {x, e}) - out).norm() < 1e-12);
    }
}

TEST_CASE("predict_stochastic") {
    std::mt19937_64 rng(6);
    auto m = random_model(rng, 2, 5);
    const Vec x = random_vec(rng, 2);
    const InputVector in{x, x};
    const Vec mean = predict_mean(m, in);
    CHECK((predict_stochastic(m, in, {0.0}, 9) - mean).norm() == 0.0);
    CHECK((predict_stochastic(m, in, {0.3}, 9) - predict_stochastic(m, in, {0.3}, 9)).norm() == 0.0);

    const double sigma = 0.3;
    const int N = 1'000'000;
    Vec sum = Vec::Zero(2);
    Vec sq = Vec::Zero(2);
    for (int k = 0; k < N; ++k) {
        const Vec d = predict_stochastic(m, in, {sigma}, static_cast<std::uint64_t>(k)) - mean;
        sum += d;
        sq += d.cwiseProduct(d);
    }
    for (int j = 0; j < 2; ++j) {
        const double mu = sum[j] / N;
        const double var = sq[j] / N - mu * mu;
        CHECK(std::abs(mu) <= 4.0 * sigma / 1000.0);
        CHECK(std::abs(var - sigma * sigma) <= 0.01 * sigma * sigma);
    }
}

TEST_CASE("BIP rejects constant inputs") {
    const ElmDims dims{2, 2, 5};
    std::vector<InputVector> in(20, InputVector{Vec::Ones(2), Vec::Ones(2)});
    CHECK_THROWS_AS(bip_initialize(dims, in, 1), InitializationFailure);
}

TEST_CASE("BIP spreads activations and is deterministic") {
    std::mt19937_64 rng(7);
    const ElmDims dims{2, 2, 12};
    std::vector<InputVector> in;
    for (int k = 0; k < 300; ++k) {
        const Vec x = random_vec(rng, 2, -2, 2);
        in.push_back(InputVector::from_state(x, Vec::Zero(2)));
    }
    const auto a = bip_initialize(dims, in, 42);
    const auto b = bip_initialize(dims, in, 42);
    CHECK((a.input_weights - b.input_weights).norm() == 0.0);
    CHECK((a.slopes - b.slopes).norm() == 0.0);
    CHECK((a.biases - b.biases).norm() == 0.0);

    const auto m = make_model(dims, a, 10.0, 0.02);
    m.validate();
    Vec lo = Vec::Constant(12, 2.0), hi = Vec::Constant(12, -1.0);
    for (const auto& s : in) {
        const Vec g = feature_map(m, s).head(12);
        lo = lo.cwiseMin(g);
        hi = hi.cwiseMax(g);
    }
    for (int i = 0; i < 12; ++i) CHECK(hi[i] - lo[i] >= 0.1);
}

TEST_CASE("Lipschitz feature bound") {
    ElmModel m;
    m.dims = {1, 0, 1};
    m.input_weights = Mat::Constant(1, 1, 3.0);
    m.slopes = Vec::Constant(1, 2.0);
    m.biases = Vec::Zero(1);
    m.output_weights = Mat::Zero(2, 1);
    m.weight_bound_in = 3.0;
    CHECK(lipschitz_feature_bound(m) == doctest::Approx(6.0 / (2.0 * std::sqrt(2.0))).epsilon(1e-14));
    m.slopes.setZero();
    CHECK(lipschitz_feature_bound(m) == 0.0);

    std::mt19937_64 rng(8);
    const auto r = random_model(rng, 2, 15);
    const double Lg = lipschitz_feature_bound(r);
    const double Ltight = r.slopes.norm() * r.weight_bound_in * std::sqrt(15.0) / 4.0;
    CHECK(Ltight <= Lg);
    for (int t = 0; t < 10000; ++t) {
        const Vec x = random_vec(rng, 2, -3, 3), e = random_vec(rng, 2, -3, 3);
        const Vec x2 = x + random_vec(rng, 2, -0.5, 0.5), e2 = e + random_vec(rng, 2, -0.5, 0.5);
        Vec d(4);
        d << x - x2, e - e2;
        const double lhs = (feature_map(r, {x, e}) - feature_map(r, {x2, e2})).norm();
        REQUIRE(lhs <= Ltight * d.norm() + 1e-15);
    }
}

TEST_CASE("model validation") {
    std::mt19937_64 rng(9);
    auto m = random_model(rng, 2, 4);
    CHECK_NOTHROW(m.validate());
    auto bad = m;
    bad.output_weights = Mat::Zero(3, 2);
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
    bad = m;
    bad.weight_bound_in = 0.5 * m.input_weights.norm();
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
    bad = m;
    bad.slopes[0] = std::nan("");
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
}
