#pragma once

#include <span>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "quiver/detect.hpp"
#include "quiver/train.hpp"

namespace quiver {

// Detection report layout:
//
//   method,detected,successful,total
//   FGSM,4973,0,4973
//   ...
//   Test data,<trusted>,<wrongly rejected>,<total>
//   Accuracy,<on trusted>,-,<on whole set>

std::string write_report(const DetectionReport& report);
nlohmann::json report_to_json(const DetectionReport& report);
/// Inverse of write_report up to accuracy rounding; parameters are not stored in CSV.
DetectionReport parse_report(std::string_view csv);
DetectionReport report_from_json(const nlohmann::json& j);

/// Aligned plain-text table for terminals.
std::string render_report(const DetectionReport& report);

std::string curves_csv(std::span<const EpochStats> curves);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace quiver
