#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "abvr/io.hpp"
#include "abvr/simulate.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

using namespace abvr;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        path_ = fs::temp_directory_path() / ("abvr_io_test_" + std::to_string(std::rand()));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    [[nodiscard]] fs::path file(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

bool same_records(const std::vector<UnitRecord>& a, const std::vector<UnitRecord>& b) {
    if (a.size() != b.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].unit_id != b[i].unit_id || a[i].variant != b[i].variant ||
            a[i].numerator != b[i].numerator || a[i].denominator != b[i].denominator ||
            a[i].has_pre() != b[i].has_pre() || a[i].features != b[i].features) {
            return false;
        }
        if (a[i].has_pre() && (a[i].pre_numerator != b[i].pre_numerator ||
                               a[i].pre_denominator != b[i].pre_denominator)) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("format_from_path") {
    CHECK(io::format_from_path("data.csv") == io::Format::Csv);
    CHECK(io::format_from_path("/tmp/x/units.jsonl") == io::Format::Jsonl);
    CHECK_THROWS_AS(io::format_from_path("units.parquet"), std::invalid_argument);
}

TEST_CASE("round trip is lossless in both formats") {
    simulate::SimConfig config;
    config.n_users = 400;
    config.window_days = 4;
    config.seed = 12;
    const auto original = simulate::generate_experiment(config).units;
    REQUIRE(!original.empty());

    TempDir dir;
    for (auto format : {io::Format::Csv, io::Format::Jsonl}) {
        const auto path = dir.file(format == io::Format::Csv ? "units.csv" : "units.jsonl");
        io::write_units(path, original, format);
        const auto restored = io::ingest(path, format);
        CHECK(same_records(original, restored));

        // writing the restored records reproduces the file byte for byte
        const auto path2 = dir.file(format == io::Format::Csv ? "units2.csv" : "units2.jsonl");
        io::write_units(path2, restored, format);
        CHECK(read_text(path) == read_text(path2));
    }
}

TEST_CASE("csv header is validated strictly") {
    TempDir dir;
    const auto path = dir.file("bad_header.csv");
    write_text(path, "id,variant,numerator,denominator,pre_numerator,pre_denominator\n");
    CHECK_THROWS_AS(io::ingest(path, io::Format::Csv), std::runtime_error);

    const auto short_path = dir.file("short_header.csv");
    write_text(short_path, "unit_id,variant,numerator\n");
    CHECK_THROWS_AS(io::ingest(short_path, io::Format::Csv), std::runtime_error);

    const auto missing = dir.file("does_not_exist.csv");
    CHECK_THROWS_AS(io::ingest(missing, io::Format::Csv), std::runtime_error);

    const auto empty = dir.file("empty.csv");
    write_text(empty, "");
    CHECK_THROWS_AS(io::ingest(empty, io::Format::Csv), std::runtime_error);

    // a feature-bearing header must name the features f0..f{d-1} in order
    const auto scrambled = dir.file("scrambled.csv");
    write_text(scrambled,
               "unit_id,variant,numerator,denominator,pre_numerator,pre_denominator,f1,f0\n");
    CHECK_THROWS_AS(io::ingest(scrambled, io::Format::Csv), std::runtime_error);
}

TEST_CASE("malformed rows are rejected with line numbers and reasons") {
    TempDir dir;
    const auto path = dir.file("mixed.csv");
    // 10 rows, 4 bad: reject fraction 0.4 needs a loose threshold to continue
    std::string text = "unit_id,variant,numerator,denominator,pre_numerator,pre_denominator\n";
    text += "u0,control,1,2,0.5,1\n";
    text += "u1,treatment,2,2,,\n";
    text += "u2,control,1,2\n";              // wrong field count
    text += "u3,control,x,2,,\n";            // unparseable component
    text += "u4,control,3,2,,\n";            // bound violated
    text += "u5,,1,2,,\n";                   // empty variant
    text += "u6,treatment,0,1,0.25,\n";      // partial pre-period
    text += "u7,control,1,4,,\n";
    text += "u8,treatment,1,1,1,1\n";
    text += "u9,control,0,3,,\n";
    write_text(path, text);

    io::IngestOptions options;
    options.max_reject_fraction = 0.5;
    io::IngestReport report;
    const auto records = io::ingest(path, io::Format::Csv, options, &report);
    CHECK(records.size() == 5);
    CHECK(report.rows_read == 10);
    CHECK(report.accepted == 5);
    REQUIRE(report.rejects.size() == 5);
    CHECK(report.rejects[0] == std::pair<std::size_t, std::string>{4, "wrong field count"});
    CHECK(report.rejects[1].second == "unparseable component");
    CHECK(report.rejects[2].second == "component bound violated");
    CHECK(report.rejects[3].second == "empty variant");
    CHECK(report.rejects[4].second == "unparseable pre-period component");

    // the default 1% threshold makes the same file a hard failure
    CHECK_THROWS_AS(io::ingest(path, io::Format::Csv), std::runtime_error);

    // disabling the bound check admits u4
    options.enforce_component_bound = false;
    const auto relaxed = io::ingest(path, io::Format::Csv, options);
    CHECK(relaxed.size() == 6);
}

TEST_CASE("jsonl rejects carry reasons too") {
    TempDir dir;
    const auto path = dir.file("mixed.jsonl");
    std::string text;
    text += R"({"unit_id":"a","variant":"control","numerator":1.0,"denominator":2.0})" "\n";
    text += "not json\n";
    text += R"({"unit_id":"b","variant":"treatment","numerator":"x","denominator":2.0})" "\n";
    text += R"({"unit_id":"c","variant":"control","numerator":1.0,"denominator":2.0,"features":[0.5,-1.5]})" "\n";
    write_text(path, text);

    io::IngestOptions options;
    options.max_reject_fraction = 0.6;
    io::IngestReport report;
    const auto records = io::ingest(path, io::Format::Jsonl, options, &report);
    CHECK(records.size() == 2);
    REQUIRE(report.rejects.size() == 2);
    CHECK(report.rejects[0].second == "malformed json");
    CHECK(report.rejects[1].second == "missing or mistyped field");
    CHECK(records[1].features == std::vector<double>{0.5, -1.5});
    CHECK(!records[0].has_pre());
}

TEST_CASE("analysis config parsing") {
    const auto j = nlohmann::json::parse(R"({
        "metric": {"name": "d1_retention", "enforce_component_bound": true},
        "control_variant": "holdout",
        "alpha": 0.01,
        "vr": {
            "covariate_set": "union",
            "outcome": "linearized",
            "cross_fit_folds": 3,
            "gbdt": {"n_trees": 40, "max_depth": 3, "learning_rate": 0.05}
        },
        "seed": 99
    })");
    const auto config = io::parse_analysis_config(j);
    CHECK(config.metric.name == "d1_retention");
    CHECK(config.control_variant == "holdout");
    CHECK(config.alpha == doctest::Approx(0.01));
    CHECK(config.vr.covariate_set == cuped::CovariateSet::Union);
    CHECK(config.vr.cross_fit_folds == 3);
    CHECK(config.vr.gbdt_params.n_trees == 40);
    CHECK(config.vr.gbdt_params.max_depth == 3);
    CHECK(config.vr.gbdt_params.learning_rate == doctest::Approx(0.05));
    CHECK(config.vr.gbdt_params.min_samples_leaf == 50);  // default preserved
    CHECK(config.vr.gbdt_params.seed == 99);
    CHECK(config.seed == 99);

    CHECK_THROWS_AS(io::parse_analysis_config(nlohmann::json::parse(R"({"alpha": 1.5})")),
                    std::invalid_argument);
    CHECK_THROWS_AS(
        io::parse_analysis_config(nlohmann::json::parse(R"({"vr": {"outcome": "bogus"}})")),
        std::invalid_argument);
    CHECK_THROWS_AS(
        io::parse_analysis_config(nlohmann::json::parse(R"({"vr": {"covariate_set": "x"}})")),
        std::invalid_argument);

    CHECK(io::parse_covariate_set("pre") == cuped::CovariateSet::PreOnly);
    CHECK(io::parse_covariate_set("pred") == cuped::CovariateSet::PredOnly);
    CHECK(io::parse_covariate_set("union") == cuped::CovariateSet::Union);
}

TEST_CASE("report json carries schema version and rows") {
    std::vector<evaluate::MethodComparison> rows(2);
    rows[0].method_label = "raw";
    rows[0].median_relative_z = 1.0;
    rows[1].method_label = "pred";
    rows[1].variance_reduction_pct = -45.66;
    rows[1].frac_lower_pvalue = 10.0 / 13.0;
    rows[1].median_relative_z = 1.19;
    rows[1].has_type_i = true;
    rows[1].type_i_error = 0.048;
    rows[1].type_i_ci_lo = 0.02;
    rows[1].type_i_ci_hi = 0.09;
    rows[1].details.push_back(
        evaluate::ExperimentDetail{"exp0", 1.0, 1.2, 0.3, 0.2, -30.0, false});

    const auto j = io::report_json(rows, 0.05, true);
    CHECK(j.at("schema_version") == io::kReportSchemaVersion);
    CHECK(j.at("alpha") == doctest::Approx(0.05));
    REQUIRE(j.at("methods").size() == 2);
    CHECK(j["methods"][0]["method"] == "raw");
    CHECK(!j["methods"][0].contains("type_i_error"));
    CHECK(j["methods"][1]["variance_reduction_pct"] == doctest::Approx(-45.66));
    CHECK(j["methods"][1]["type_i_ci_99"][0] == doctest::Approx(0.02));
    REQUIRE(j["methods"][1]["experiments"].size() == 1);
    CHECK(j["methods"][1]["experiments"][0]["experiment"] == "exp0");

    const auto no_details = io::report_json(rows, 0.05, false);
    CHECK(!no_details["methods"][1].contains("experiments"));

    // byte determinism of the serialized report
    CHECK(j.dump() == io::report_json(rows, 0.05, true).dump());

    const auto table = io::report_table(rows);
    CHECK(table.find("raw") != std::string::npos);
    CHECK(table.find("pred") != std::string::npos);
    CHECK(table.find("-45.66%") != std::string::npos);

    const auto csv = io::details_csv(rows);
    CHECK(csv.find("method,experiment,z_raw,z_vr,p_raw,p_vr,variance_reduction_pct,sign_flip") == 0);
    CHECK(csv.find("pred,exp0,") != std::string::npos);
}
