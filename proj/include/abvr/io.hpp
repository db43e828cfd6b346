#pragma once

#include "abvr/cuped.hpp"
#include "abvr/evaluate.hpp"
#include "abvr/ratio.hpp"
#include "abvr/unit.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace abvr::io {

inline constexpr const char* kReportSchemaVersion = "abvr-report-1";
inline constexpr const char* kUnitSchemaVersion = "abvr-units-1";

enum class Format { Csv, Jsonl };

[[nodiscard]] Format format_from_path(const std::filesystem::path& path);

struct IngestOptions {
    bool enforce_component_bound = true;  // numerator <= denominator per unit
    double max_reject_fraction = 0.01;    // hard failure above this
};

/// Per-file validation report: rows read, rejects with line number + reason.
struct IngestReport {
    std::size_t rows_read = 0;
    std::size_t accepted = 0;
    std::vector<std::pair<std::size_t, std::string>> rejects;
};

/// Streams unit records from a CSV or JSONL file. Malformed rows are
/// rejected with a reason and the run continues; more than
/// max_reject_fraction rejects is a hard failure.
[[nodiscard]] std::vector<UnitRecord> ingest(const std::filesystem::path& path, Format format,
                                             const IngestOptions& options = {},
                                             IngestReport* report = nullptr);

/// Writes records in the documented schema; byte-deterministic.
void write_units(const std::filesystem::path& path, std::span<const UnitRecord> units,
                 Format format);

struct AnalysisConfig {
    ratio::RatioMetricSpec metric;
    std::string control_variant = "control";
    cuped::VRConfig vr;
    double alpha = 0.05;
    std::string input;
    std::string output;
    std::uint64_t seed = 0;
};

[[nodiscard]] AnalysisConfig parse_analysis_config(const nlohmann::json& j);
[[nodiscard]] AnalysisConfig load_analysis_config(const std::filesystem::path& path);

[[nodiscard]] cuped::CovariateSet parse_covariate_set(const std::string& label);

[[nodiscard]] nlohmann::json test_result_json(const stats::TestResult& result);

/// Machine-readable report with the method rows and per-experiment detail.
[[nodiscard]] nlohmann::json report_json(std::span<const evaluate::MethodComparison> rows,
                                         double alpha, bool include_details);

/// Aligned-text table with one row per method and the four suite statistics.
[[nodiscard]] std::string report_table(std::span<const evaluate::MethodComparison> rows);

/// Per-experiment detail rows as CSV.
[[nodiscard]] std::string details_csv(std::span<const evaluate::MethodComparison> rows);

}  // namespace abvr::io
