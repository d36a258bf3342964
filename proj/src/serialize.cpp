#include "safe_sysid/serialize.hpp"

#include <fstream>

#include "safe_sysid/error.hpp"

namespace safe_sysid {

nlohmann::json matrix_to_json(const Mat& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Mat matrix_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.empty()) throw ParseError("matrix must be a non-empty array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = static_cast<Eigen::Index>(j[0].size());
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw ParseError("matrix rows must have equal length");
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

nlohmann::json vector_to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec vector_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw ParseError("vector must be an array");
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json model_to_json(const ElmModel& model) {
    return {{"dims", {{"n", model.dims.n}, {"m", model.dims.m}, {"n_h", model.dims.n_h}}},
            {"input_weights", matrix_to_json(model.input_weights)},
            {"slopes", vector_to_json(model.slopes)},
            {"biases", vector_to_json(model.biases)},
            {"output_weights", matrix_to_json(model.output_weights)},
            {"weight_bound_in", model.weight_bound_in},
            {"weight_bound_out", model.weight_bound_out},
            {"sigma", model.sigma}};
}

ElmModel model_from_json(const nlohmann::json& j) {
    ElmModel m;
    try {
        const auto& d = j.at("dims");
        m.dims = {d.at("n").get<int>(), d.at("m").get<int>(), d.at("n_h").get<int>()};
        m.input_weights = matrix_from_json(j.at("input_weights"));
        m.slopes = vector_from_json(j.at("slopes"));
        m.biases = vector_from_json(j.at("biases"));
        m.output_weights = matrix_from_json(j.at("output_weights"));
        m.weight_bound_in = j.at("weight_bound_in").get<double>();
        m.weight_bound_out = j.at("weight_bound_out").get<double>();
        m.sigma = j.at("sigma").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("model JSON: ") + e.what());
    }
    m.validate();
    return m;
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << j.dump(2) << '\n';
    if (!os) throw IoError("failed writing " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void save_model(const ElmModel& model, const std::filesystem::path& path) { write_json(model_to_json(model), path); }

ElmModel load_model(const std::filesystem::path& path) { return model_from_json(read_json(path)); }

nlohmann::json solution_summary(const Solution& sol) {
    nlohmann::json j{{"status", to_string(sol.status)},
                     {"objective", sol.objective},
                     {"max_constraint_violation", sol.max_constraint_violation},
                     {"iterations", sol.iterations},
                     {"kkt_residual", sol.kkt_residual},
                     {"gradient_norm", sol.gradient_norm},
                     {"complementarity", sol.complementarity}};
    if (sol.infeasibility) {
        j["infeasibility"] = {{"min_max_violation", sol.infeasibility->min_max_violation},
                              {"farkas_value", sol.infeasibility->farkas_value}};
    }
    return j;
}

void write_solver_log(const Solution& sol, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << "iter objective gap max_violation\n";
    for (const auto& line : sol.log) os << line << '\n';
    os << "status " << to_string(sol.status) << '\n';
}

}  // namespace safe_sysid
