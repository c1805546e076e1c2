#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "dform/common.hpp"

namespace dform {

// Matrices are stored as nested row-major arrays: [[row0...], [row1...], ...].
nlohmann::json matrix_to_json(const Mat& m);
Mat matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const Vec& v);
Vec vector_from_json(const nlohmann::json& j);

nlohmann::json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);

/// Writes `rows` (points as columns if `columns_are_points`) with a header line.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);
void write_points_csv(const std::string& path, const Mat& pts, const std::string& prefix = "x");

/// Rejects keys of `j` that are not in `allowed`.
void check_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                const std::string& where);

}  // namespace dform
