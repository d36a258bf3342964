#include "safe_sysid/dynamics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "safe_sysid/error.hpp"

namespace safe_sysid {

void TwoLinkParams::validate() const {
    if (!(L1 > 0 && L2 > 0 && m1 > 0 && m2 > 0 && gravity >= 0 && dt > 0))
        throw InvalidInput("two-link parameters must be positive");
}

void PidGains::validate() const {
    if (kp.size() != 2 || ki.size() != 2 || kd.size() != 2) throw InvalidInput("PID gains must have two entries");
    if (!kp.allFinite() || !ki.allFinite() || !kd.allFinite()) throw InvalidInput("PID gains must be finite");
    if ((kp.array() < 0.0).any()) throw InvalidInput("kp must be non-negative");
}

Mat mass_matrix(const TwoLinkParams& p, const Vec& q) {
    const double c2 = std::cos(q[1]);
    Mat M(2, 2);
    M(0, 0) = (p.m1 + p.m2) * p.L1 * p.L1 + p.m2 * p.L2 * p.L2 + 2.0 * p.m2 * p.L1 * p.L2 * c2;
    M(0, 1) = p.m2 * p.L2 * p.L2 + p.m2 * p.L1 * p.L2 * c2;
    M(1, 0) = M(0, 1);
    M(1, 1) = p.m2 * p.L2 * p.L2;
    return M;
}

Vec coriolis_torque(const TwoLinkParams& p, const Vec& q, const Vec& qdot) {
    const double k = p.m2 * p.L1 * p.L2 * std::sin(q[1]);
    Vec c(2);
    c[0] = -k * (2.0 * qdot[0] * qdot[1] + qdot[1] * qdot[1]);
    c[1] = k * qdot[0] * qdot[0];
    return c;
}

Vec gravity_torque(const TwoLinkParams& p, const Vec& q) {
    const double c1 = std::cos(q[0]);
    const double c12 = std::cos(q[0] + q[1]);
    Vec G(2);
    G[0] = (p.m1 + p.m2) * p.gravity * p.L1 * c1 + p.m2 * p.gravity * p.L2 * c12;
    G[1] = p.m2 * p.gravity * p.L2 * c12;
    return G;
}

double kinetic_energy(const TwoLinkParams& p, const Vec& q, const Vec& qdot) {
    return 0.5 * qdot.dot(mass_matrix(p, q) * qdot);
}

Vec el_dynamics(const TwoLinkParams& p, const Vec& q, const Vec& qdot, const Vec& u) {
    if (q.size() != 2 || qdot.size() != 2 || u.size() != 2) throw InvalidInput("el_dynamics expects 2-vectors");
    const Mat M = mass_matrix(p, q);
    const double det = M(0, 0) * M(1, 1) - M(0, 1) * M(1, 0);
    if (!(std::abs(det) > 1e-12)) throw Error("mass matrix is singular");
    return M.inverse() * (u - coriolis_torque(p, q, qdot) - gravity_torque(p, q));
}

ArmState rk4_step(const TwoLinkParams& p, const ArmState& s, const Vec& u, double h) {
    auto f = [&](const Vec& q, const Vec& qd) { return el_dynamics(p, q, qd, u); };
    const Vec k1q = s.qdot;
    const Vec k1v = f(s.q, s.qdot);
    const Vec k2q = s.qdot + 0.5 * h * k1v;
    const Vec k2v = f(s.q + 0.5 * h * k1q, k2q);
    const Vec k3q = s.qdot + 0.5 * h * k2v;
    const Vec k3v = f(s.q + 0.5 * h * k2q, k3q);
    const Vec k4q = s.qdot + h * k3v;
    const Vec k4v = f(s.q + h * k3q, k4q);
    ArmState out;
    out.q = s.q + h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
    out.qdot = s.qdot + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    return out;
}

std::size_t TrajectoryDataset::sample_count() const {
    std::size_t n = 0;
    for (const auto& d : demonstrations) n += static_cast<std::size_t>(d.rows());
    return n;
}

void TrajectoryDataset::validate() const {
    if (demonstrations.empty()) throw InvalidInput("dataset has no demonstrations");
    if (target.size() == 0) throw InvalidInput("dataset has no target");
    if (!(period > 0.0)) throw InvalidInput("sampling period must be positive");
    for (const auto& d : demonstrations) {
        if (d.rows() < 2) throw InvalidInput("each demonstration needs at least two samples");
        if (d.cols() != target.size()) throw InvalidInput("demonstration dimension does not match target");
        if (!d.allFinite()) throw InvalidInput("demonstration contains non-finite values");
    }
}

namespace {

Mat simulate_arm(const TwoLinkParams& params, const PidGains& gains, const Vec& q0, const Vec& target,
                 const RobotDataConfig& cfg) {
    const int substeps = static_cast<int>(std::lround(cfg.period / params.dt));
    if (substeps < 1 || std::abs(substeps * params.dt - cfg.period) > 1e-9 * cfg.period)
        throw InvalidInput("record period must be a multiple of dt");
    Mat out(static_cast<Eigen::Index>(cfg.steps), 2);
    ArmState s{q0, Vec::Zero(2)};
    Vec integral = Vec::Zero(2);
    out.row(0) = s.q.transpose();
    for (std::size_t k = 1; k < cfg.steps; ++k) {
        for (int j = 0; j < substeps; ++j) {
            const Vec e = target - s.q;
            // Derivative acts on the measurement, so a set-point change gives no kick.
            Vec u = gains.kp.cwiseProduct(e) + gains.ki.cwiseProduct(integral) - gains.kd.cwiseProduct(s.qdot);
            if (cfg.gravity_compensation) u += gravity_torque(params, s.q);
            s = rk4_step(params, s, u, params.dt);
            integral += params.dt * (target - s.q);
        }
        out.row(static_cast<Eigen::Index>(k)) = s.q.transpose();
    }
    return out;
}

std::string describe(const Vec& v) {
    std::ostringstream os;
    os << '[' << v.transpose() << ']';
    return os.str();
}

}  // namespace

TrajectoryDataset generate_robot_data(const TwoLinkParams& params, const std::vector<PidGains>& gains,
                                      const std::vector<Vec>& initial_conditions, const Vec& target,
                                      const RobotDataConfig& config) {
    params.validate();
    if (target.size() != 2) throw InvalidInput("robot target must be a 2-vector");
    if (initial_conditions.empty()) throw InvalidInput("no initial conditions");
    if (config.steps < 2) throw InvalidInput("need at least two recorded samples");
    if (!gains.empty() && gains.size() != 1 && gains.size() != initial_conditions.size())
        throw InvalidInput("give one PID gain set, or one per initial condition");
    for (const auto& g : gains) g.validate();

    const int count = static_cast<int>(initial_conditions.size());
    std::vector<Mat> runs(count);
    std::vector<std::string> failures(count);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < count; ++i) {
        const PidGains g = gains.empty() ? PidGains{} : gains.size() == 1 ? gains[0] : gains[i];
        try {
            const Vec& q0 = initial_conditions[i];
            if (q0.size() != 2) throw InvalidInput("initial condition must be a 2-vector");
            Mat traj = simulate_arm(params, g, q0, target, config);
            if (traj.cwiseAbs().maxCoeff() > config.joint_limit)
                throw GenerationError("trajectory from " + describe(q0) + " leaves the joint limits");
            const double final_err = (traj.bottomRows(1).transpose() - target).norm();
            if (!(final_err <= config.tolerance))
                throw GenerationError("trajectory from " + describe(q0) + " did not converge (final error " +
                                      std::to_string(final_err) + ")");
            runs[i] = std::move(traj);
        } catch (const std::exception& e) {
            failures[i] = e.what();
        }
    }
    for (const auto& f : failures)
        if (!f.empty()) throw GenerationError(f);

    TrajectoryDataset data;
    data.demonstrations = std::move(runs);
    data.target = target;
    data.period = config.period;
    return data;
}

TrajectoryDataset synthetic_snake(std::size_t demos, std::size_t samples, std::uint64_t seed) {
    if (demos == 0 || samples < 2) throw InvalidInput("synthetic_snake needs demos >= 1 and samples >= 2");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(-1.0, 1.0);
    const Vec end = (Vec(2) << 0.3, -0.1).finished();
    TrajectoryDataset data;
    data.target = end;
    data.period = 0.01;
    for (std::size_t d = 0; d < demos; ++d) {
        const double amp = 0.25 * (1.0 + 0.1 * jitter(rng));
        const double x0 = -1.0 + 0.05 * jitter(rng);
        const double y0 = 0.05 * jitter(rng);
        Mat traj(static_cast<Eigen::Index>(samples), 2);
        for (std::size_t k = 0; k < samples; ++k) {
            const double t = static_cast<double>(k) / static_cast<double>(samples - 1);
            const double u = 1.0 - std::pow(1.0 - t, 3);  // decelerates into the endpoint
            const double w = 1.0 - u;
            traj(static_cast<Eigen::Index>(k), 0) = end[0] + x0 * w;
            traj(static_cast<Eigen::Index>(k), 1) = end[1] + y0 * w + amp * std::sin(3.0 * M_PI * u) * w;
        }
        data.demonstrations.push_back(std::move(traj));
    }
    return data;
}

void save_dataset(const TrajectoryDataset& data, const std::filesystem::path& manifest) {
    data.validate();
    const auto dir = manifest.parent_path();
    std::error_code ec;
    if (!dir.empty()) std::filesystem::create_directories(dir, ec);
    nlohmann::json j;
    j["period"] = data.period;
    j["dims"] = data.dims();
    j["target"] = std::vector<double>(data.target.data(), data.target.data() + data.target.size());
    j["files"] = nlohmann::json::array();
    const std::string stem = manifest.stem().string();
    for (std::size_t i = 0; i < data.demonstrations.size(); ++i) {
        const std::string name = stem + "_" + std::to_string(i) + ".csv";
        std::ofstream os(dir / name);
        if (!os) throw IoError("cannot write " + (dir / name).string());
        os << std::setprecision(17);
        const Mat& d = data.demonstrations[i];
        for (Eigen::Index r = 0; r < d.rows(); ++r) {
            for (Eigen::Index c = 0; c < d.cols(); ++c) os << (c ? "," : "") << d(r, c);
            os << '\n';
        }
        if (!os) throw IoError("failed writing " + (dir / name).string());
        j["files"].push_back(name);
    }
    std::ofstream os(manifest);
    if (!os) throw IoError("cannot write " + manifest.string());
    os << j.dump(2) << '\n';
    if (!os) throw IoError("failed writing " + manifest.string());
}

namespace {

Mat read_csv_matrix(const std::filesystem::path& path, int dims) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::vector<double> values;
    std::string line;
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        if (line.empty() || line == "\r") continue;
        std::stringstream ss(line);
        std::string cell;
        int cols = 0;
        while (std::getline(ss, cell, ',')) {
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str()) throw ParseError("bad number '" + cell + "' in " + path.string());
            values.push_back(v);
            ++cols;
        }
        if (cols != dims)
            throw ParseError(path.string() + ": row " + std::to_string(rows + 1) + " has " +
                             std::to_string(cols) + " columns, expected " + std::to_string(dims));
        ++rows;
    }
    if (rows == 0) throw ParseError(path.string() + " is empty");
    Mat m(static_cast<Eigen::Index>(rows), dims);
    for (std::size_t r = 0; r < rows; ++r)
        for (int c = 0; c < dims; ++c) m(static_cast<Eigen::Index>(r), c) = values[r * dims + c];
    return m;
}

}  // namespace

TrajectoryDataset load_demonstrations(const std::filesystem::path& manifest, bool translate_to_origin) {
    std::ifstream is(manifest);
    if (!is) throw IoError("cannot open " + manifest.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(manifest.string() + ": " + e.what());
    }
    TrajectoryDataset data;
    try {
        data.period = j.at("period").get<double>();
        const int dims = j.at("dims").get<int>();
        if (dims <= 0) throw ParseError("dims must be positive");
        for (const auto& f : j.at("files")) data.demonstrations.push_back(read_csv_matrix(manifest.parent_path() / f.get<std::string>(), dims));
        if (data.demonstrations.empty()) throw ParseError(manifest.string() + " lists no files");
        if (j.contains("target")) {
            const auto t = j.at("target").get<std::vector<double>>();
            data.target = Eigen::Map<const Vec>(t.data(), static_cast<Eigen::Index>(t.size()));
        } else {
            data.target = Vec::Zero(dims);
            for (const auto& d : data.demonstrations) data.target += d.bottomRows(1).transpose();
            data.target /= static_cast<double>(data.demonstrations.size());
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(manifest.string() + ": " + e.what());
    }
    data.validate();
    return translate_to_origin ? translate(data) : data;
}

TrajectoryDataset translate(const TrajectoryDataset& data) {
    data.validate();
    if (data.translated) return data;
    const int n = data.dims();
    Vec mean = Vec::Zero(n);
    Vec lo = Vec::Constant(n, std::numeric_limits<double>::infinity());
    Vec hi = -lo;
    for (const auto& d : data.demonstrations) {
        mean += d.bottomRows(1).transpose();
        lo = lo.cwiseMin(d.colwise().minCoeff().transpose());
        hi = hi.cwiseMax(d.colwise().maxCoeff().transpose());
    }
    mean /= static_cast<double>(data.demonstrations.size());
    const double extent = (hi - lo).maxCoeff();
    for (const auto& d : data.demonstrations) {
        if ((d.bottomRows(1).transpose() - mean).norm() > 0.05 * extent) {
            std::cerr << "warning: demonstration endpoints disagree; using their mean\n";
            break;
        }
    }
    TrajectoryDataset out = data;
    out.shift = mean;
    out.translated = true;
    out.originals = data.demonstrations;
    out.original_target = data.target;
    for (auto& d : out.demonstrations) d.rowwise() -= mean.transpose();
    out.target = Vec::Zero(n);
    return out;
}

TrajectoryDataset untranslate(const TrajectoryDataset& data) {
    if (!data.translated) return data;
    TrajectoryDataset out = data;
    if (data.originals.size() == data.demonstrations.size()) {
        out.demonstrations = data.originals;
    } else {
        for (auto& d : out.demonstrations) d.rowwise() += data.shift.transpose();
    }
    out.target = data.original_target.size() == data.target.size() ? data.original_target
                                                                   : Vec(data.target + data.shift);
    out.translated = false;
    out.shift = Vec();
    out.originals.clear();
    out.original_target = Vec();
    return out;
}

TrainingPairs to_training_pairs(const TrajectoryDataset& data) {
    data.validate();
    TrainingPairs pairs;
    pairs.inputs.reserve(data.sample_count());
    pairs.targets.reserve(data.sample_count());
    for (const auto& d : data.demonstrations) {
        for (Eigen::Index k = 0; k + 1 < d.rows(); ++k) {
            pairs.inputs.push_back(InputVector::from_state(d.row(k).transpose(), data.target));
            pairs.targets.push_back(d.row(k + 1).transpose());
        }
    }
    return pairs;
}

}  // namespace safe_sysid
