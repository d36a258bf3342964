#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "safe_sysid/elm.hpp"
#include "safe_sysid/qcqp.hpp"

namespace safe_sysid {

/// Matrices are stored row-major as nested arrays.
nlohmann::json matrix_to_json(const Mat& m);
Mat matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const Vec& v);
Vec vector_from_json(const nlohmann::json& j);

/// {dims, input_weights, slopes, biases, output_weights, weight_bound_in,
///  weight_bound_out, sigma}
nlohmann::json model_to_json(const ElmModel& model);
ElmModel model_from_json(const nlohmann::json& j);

void save_model(const ElmModel& model, const std::filesystem::path& path);
/// Throws ParseError on schema problems and InvalidInput when the model fails validation.
ElmModel load_model(const std::filesystem::path& path);

nlohmann::json solution_summary(const Solution& sol);
void write_solver_log(const Solution& sol, const std::filesystem::path& path);

void write_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace safe_sysid
