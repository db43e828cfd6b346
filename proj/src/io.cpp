#include "abvr/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace abvr::io {

namespace {

// Shortest representation that round-trips the double exactly.
std::string format_double(double v) {
    return nlohmann::json(v).dump();
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (ch != '\r') {
            field.push_back(ch);
        }
    }
    fields.push_back(std::move(field));
    return fields;
}

bool parse_double(const std::string& text, double& out) {
    const char* begin = text.data();
    const char* end = begin + text.size();
    const auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc{} && ptr == end;
}

std::string expected_header(std::size_t n_features) {
    std::string header = "unit_id,variant,numerator,denominator,pre_numerator,pre_denominator";
    for (std::size_t j = 0; j < n_features; ++j) {
        header += ",f" + std::to_string(j);
    }
    return header;
}

// Returns an error reason, or empty string when the record is valid.
std::string validate_record(const UnitRecord& record, const IngestOptions& options) {
    if (record.variant.empty()) {
        return "empty variant";
    }
    if (!std::isfinite(record.numerator) || !std::isfinite(record.denominator)) {
        return "non-finite component";
    }
    if (record.numerator < 0.0 || record.denominator < 0.0) {
        return "negative component";
    }
    if (options.enforce_component_bound && record.numerator > record.denominator) {
        return "component bound violated";
    }
    const bool has_pre_num = std::isfinite(record.pre_numerator);
    const bool has_pre_den = std::isfinite(record.pre_denominator);
    if (has_pre_num != has_pre_den) {
        return "partial pre-period fields";
    }
    if (has_pre_num) {
        if (record.pre_numerator < 0.0 || record.pre_denominator < 0.0) {
            return "negative pre-period component";
        }
        if (options.enforce_component_bound && record.pre_numerator > record.pre_denominator) {
            return "component bound violated";
        }
    }
    for (double f : record.features) {
        if (!std::isfinite(f)) {
            return "non-finite feature";
        }
    }
    return {};
}

}  // namespace

Format format_from_path(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".csv") {
        return Format::Csv;
    }
    if (ext == ".jsonl") {
        return Format::Jsonl;
    }
    throw std::invalid_argument("unknown input format: " + path.string());
}

std::vector<UnitRecord> ingest(const std::filesystem::path& path, Format format,
                               const IngestOptions& options, IngestReport* report) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    IngestReport local_report;
    IngestReport& rep = report != nullptr ? *report : local_report;
    std::vector<UnitRecord> records;

    std::string line;
    std::size_t line_no = 0;
    std::size_t n_features = 0;

    if (format == Format::Csv) {
        if (!std::getline(in, line)) {
            throw std::runtime_error("empty file: " + path.string());
        }
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        const auto header_fields = split_csv_line(line);
        if (header_fields.size() < 6) {
            throw std::runtime_error("malformed header in " + path.string());
        }
        n_features = header_fields.size() - 6;
        if (line != expected_header(n_features)) {
            throw std::runtime_error("header does not match schema in " + path.string());
        }
    }

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        ++rep.rows_read;
        UnitRecord record;
        std::string reason;
        if (format == Format::Csv) {
            const auto fields = split_csv_line(line);
            if (fields.size() != 6 + n_features) {
                reason = "wrong field count";
            } else {
                record.unit_id = fields[0];
                record.variant = fields[1];
                double v = 0.0;
                if (!parse_double(fields[2], record.numerator) ||
                    !parse_double(fields[3], record.denominator)) {
                    reason = "unparseable component";
                } else {
                    if (!fields[4].empty() || !fields[5].empty()) {
                        if (parse_double(fields[4], record.pre_numerator) &&
                            parse_double(fields[5], record.pre_denominator)) {
                        } else {
                            reason = "unparseable pre-period component";
                        }
                    }
                    if (reason.empty()) {
                        record.features.resize(n_features);
                        for (std::size_t j = 0; j < n_features; ++j) {
                            if (!parse_double(fields[6 + j], v)) {
                                reason = "unparseable feature";
                                break;
                            }
                            record.features[j] = v;
                        }
                    }
                }
            }
        } else {
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object()) {
                reason = "malformed json";
            } else {
                try {
                    record.unit_id = j.at("unit_id").get<std::string>();
                    record.variant = j.at("variant").get<std::string>();
                    record.numerator = j.at("numerator").get<double>();
                    record.denominator = j.at("denominator").get<double>();
                    if (j.contains("pre_numerator")) {
                        record.pre_numerator = j.at("pre_numerator").get<double>();
                        record.pre_denominator = j.at("pre_denominator").get<double>();
                    }
                    if (j.contains("features")) {
                        record.features = j.at("features").get<std::vector<double>>();
                    }
                } catch (const nlohmann::json::exception&) {
                    reason = "missing or mistyped field";
                }
            }
        }
        if (reason.empty()) {
            reason = validate_record(record, options);
        }
        if (reason.empty()) {
            ++rep.accepted;
            records.push_back(std::move(record));
        } else {
            rep.rejects.emplace_back(line_no, reason);
        }
    }

    if (rep.rows_read > 0) {
        const double reject_fraction =
            static_cast<double>(rep.rejects.size()) / static_cast<double>(rep.rows_read);
        if (reject_fraction > options.max_reject_fraction) {
            throw std::runtime_error("reject fraction " + std::to_string(reject_fraction) +
                                     " exceeds threshold in " + path.string());
        }
    }
    return records;
}

void write_units(const std::filesystem::path& path, std::span<const UnitRecord> units,
                 Format format) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    const std::size_t n_features = units.empty() ? 0 : units.front().features.size();
    if (format == Format::Csv) {
        out << expected_header(n_features) << '\n';
        for (const UnitRecord& u : units) {
            out << u.unit_id << ',' << u.variant << ',' << format_double(u.numerator) << ','
                << format_double(u.denominator) << ',';
            if (u.has_pre()) {
                out << format_double(u.pre_numerator) << ',' << format_double(u.pre_denominator);
            } else {
                out << ',';
            }
            for (double f : u.features) {
                out << ',' << format_double(f);
            }
            out << '\n';
        }
    } else {
        for (const UnitRecord& u : units) {
            nlohmann::json j;
            j["unit_id"] = u.unit_id;
            j["variant"] = u.variant;
            j["numerator"] = u.numerator;
            j["denominator"] = u.denominator;
            if (u.has_pre()) {
                j["pre_numerator"] = u.pre_numerator;
                j["pre_denominator"] = u.pre_denominator;
            }
            if (!u.features.empty()) {
                j["features"] = u.features;
            }
            out << j.dump() << '\n';
        }
    }
}

cuped::CovariateSet parse_covariate_set(const std::string& label) {
    if (label == "pre") {
        return cuped::CovariateSet::PreOnly;
    }
    if (label == "pred") {
        return cuped::CovariateSet::PredOnly;
    }
    if (label == "union") {
        return cuped::CovariateSet::Union;
    }
    throw std::invalid_argument("unknown method: " + label);
}

AnalysisConfig parse_analysis_config(const nlohmann::json& j) {
    AnalysisConfig config;
    if (j.contains("metric")) {
        const auto& m = j.at("metric");
        config.metric.name = m.value("name", std::string("metric"));
        config.metric.numerator_field = m.value("numerator_field", std::string("numerator"));
        config.metric.denominator_field = m.value("denominator_field", std::string("denominator"));
        if (config.metric.numerator_field == config.metric.denominator_field) {
            throw std::invalid_argument("numerator and denominator fields must differ");
        }
        config.metric.enforce_component_bound = m.value("enforce_component_bound", true);
        if (m.contains("fixed_linearization_c")) {
            config.metric.linearization_source =
                ratio::FixedConstant{m.at("fixed_linearization_c").get<double>()};
        }
    }
    config.control_variant = j.value("control_variant", std::string("control"));
    config.alpha = j.value("alpha", 0.05);
    if (!(config.alpha > 0.0 && config.alpha < 1.0)) {
        throw std::invalid_argument("alpha must be in (0, 1)");
    }
    if (j.contains("vr")) {
        const auto& v = j.at("vr");
        config.vr.covariate_set = parse_covariate_set(v.value("covariate_set", std::string("pred")));
        const std::string outcome = v.value("outcome", std::string("linearized"));
        if (outcome == "linearized") {
            config.vr.outcome = cuped::Outcome::Linearized;
        } else if (outcome == "delta_ratio") {
            config.vr.outcome = cuped::Outcome::DeltaRatio;
        } else {
            throw std::invalid_argument("unknown outcome: " + outcome);
        }
        config.vr.cross_fit_folds = v.value("cross_fit_folds", 5);
        config.vr.center_covariates = v.value("center_covariates", true);
        config.vr.compose_pred_l = v.value("compose_pred_l", false);
        if (v.contains("gbdt")) {
            const auto& g = v.at("gbdt");
            config.vr.gbdt_params.n_trees = g.value("n_trees", 100);
            config.vr.gbdt_params.learning_rate = g.value("learning_rate", 0.1);
            config.vr.gbdt_params.max_depth = g.value("max_depth", 4);
            config.vr.gbdt_params.min_samples_leaf = g.value("min_samples_leaf", 50);
            config.vr.gbdt_params.max_bins = g.value("max_bins", 64);
            config.vr.gbdt_params.subsample = g.value("subsample", 1.0);
        }
    }
    config.input = j.value("input", std::string{});
    config.output = j.value("output", std::string{});
    config.seed = j.value("seed", std::uint64_t{0});
    config.vr.gbdt_params.seed = config.seed;
    config.vr.validate();
    return config;
}

AnalysisConfig load_analysis_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    nlohmann::json j;
    in >> j;
    return parse_analysis_config(j);
}

nlohmann::json test_result_json(const stats::TestResult& result) {
    return nlohmann::json{{"method", result.method_label},
                          {"z", result.z},
                          {"p_value", result.p_value},
                          {"ate", result.ate},
                          {"variance_a", result.variance_a},
                          {"variance_b", result.variance_b},
                          {"n_a", result.n_a},
                          {"n_b", result.n_b}};
}

nlohmann::json report_json(std::span<const evaluate::MethodComparison> rows, double alpha,
                           bool include_details) {
    nlohmann::json j;
    j["schema_version"] = kReportSchemaVersion;
    j["alpha"] = alpha;
    nlohmann::json methods = nlohmann::json::array();
    for (const auto& row : rows) {
        nlohmann::json r;
        r["method"] = row.method_label;
        r["variance_reduction_pct"] = row.variance_reduction_pct;
        r["frac_lower_pvalue"] = row.frac_lower_pvalue;
        r["median_relative_z"] = row.median_relative_z;
        if (row.has_type_i) {
            r["type_i_error"] = row.type_i_error;
            r["type_i_ci_99"] = {row.type_i_ci_lo, row.type_i_ci_hi};
        }
        if (include_details) {
            nlohmann::json details = nlohmann::json::array();
            for (const auto& d : row.details) {
                details.push_back({{"experiment", d.experiment_id},
                                   {"z_raw", d.z_raw},
                                   {"z_vr", d.z_vr},
                                   {"p_raw", d.p_raw},
                                   {"p_vr", d.p_vr},
                                   {"variance_reduction_pct", d.variance_reduction_pct},
                                   {"sign_flip", d.sign_flip}});
            }
            r["experiments"] = std::move(details);
        }
        methods.push_back(std::move(r));
    }
    j["methods"] = std::move(methods);
    return j;
}

std::string report_table(std::span<const evaluate::MethodComparison> rows) {
    std::ostringstream out;
    out << std::left << std::setw(10) << "Method" << std::right << std::setw(12) << "Var.Red."
        << std::setw(14) << "P(p-value v)" << std::setw(12) << "med.rel.z" << std::setw(14)
        << "Type-I Error" << '\n';
    out << std::string(62, '-') << '\n';
    out << std::fixed;
    for (const auto& row : rows) {
        out << std::left << std::setw(10) << row.method_label << std::right << std::setw(11)
            << std::setprecision(2) << row.variance_reduction_pct << '%' << std::setw(13)
            << std::setprecision(2) << 100.0 * row.frac_lower_pvalue << '%' << std::setw(12)
            << std::setprecision(3) << row.median_relative_z;
        if (row.has_type_i) {
            out << std::setw(13) << std::setprecision(2) << 100.0 * row.type_i_error << '%';
        } else {
            out << std::setw(14) << "-";
        }
        out << '\n';
    }
    return out.str();
}

std::string details_csv(std::span<const evaluate::MethodComparison> rows) {
    std::ostringstream out;
    out << "method,experiment,z_raw,z_vr,p_raw,p_vr,variance_reduction_pct,sign_flip\n";
    for (const auto& row : rows) {
        for (const auto& d : row.details) {
            out << row.method_label << ',' << d.experiment_id << ',' << format_double(d.z_raw)
                << ',' << format_double(d.z_vr) << ',' << format_double(d.p_raw) << ','
                << format_double(d.p_vr) << ',' << format_double(d.variance_reduction_pct) << ','
                << (d.sign_flip ? 1 : 0) << '\n';
        }
    }
    return out.str();
}

}  // namespace abvr::io
