#pragma once

#include <string>

#include <json.hpp>

#include "bsbm/geometry.hpp"
#include "bsbm/net.hpp"

namespace bsbm {

// Doubles travel through JSON as decimal strings printed with %.17g, which
// round-trips the full 64-bit value.
std::string double_to_string(double v);
double string_to_double(const std::string& s);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j, int rows, int cols);

nlohmann::json net_to_json(const MlpNet& net);
MlpNet net_from_json(const nlohmann::json& j);

nlohmann::json optim_to_json(const OptimState& s);
OptimState optim_from_json(const nlohmann::json& j);

// Metric files: LAND stores sigma/eps plus a reference to its anchor CSV;
// RBF stores the fitted arrays inline.
nlohmann::json land_metric_to_json(const LandMetric& m, const std::string& anchors_file);
nlohmann::json rbf_metric_to_json(const RbfMetric& m);
RbfMetric rbf_metric_from_json(const nlohmann::json& j);

// Atomic JSON file write (temp file + rename) and checked read.
void write_json_file(const nlohmann::json& j, const std::string& path);
nlohmann::json read_json_file(const std::string& path);

// FNV-1a 64 content hash of a file, hex encoded; identifies datasets in run
// manifests.
std::string file_content_hash(const std::string& path);

}  // namespace bsbm
