#include "abvr/cuped.hpp"
#include "abvr/evaluate.hpp"
#include "abvr/io.hpp"
#include "abvr/simulate.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string zero_pad(int value, int width) {
    std::ostringstream out;
    out << std::setw(width) << std::setfill('0') << value;
    return out.str();
}

std::vector<abvr::evaluate::ExperimentData> load_suite(const fs::path& dir,
                                                       const std::string& control) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto ext = entry.path().extension().string();
        if (entry.is_regular_file() && (ext == ".csv" || ext == ".jsonl")) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        throw std::runtime_error("no experiment files in " + dir.string());
    }
    std::vector<abvr::evaluate::ExperimentData> suite;
    suite.reserve(files.size());
    for (const auto& file : files) {
        abvr::evaluate::ExperimentData exp;
        exp.id = file.stem().string();
        exp.units = abvr::io::ingest(file, abvr::io::format_from_path(file));
        exp.control_variant = control;
        suite.push_back(std::move(exp));
    }
    return suite;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << text;
}

int run(int argc, char** argv) {
    CLI::App app{"Variance-reduced analysis of ratio-metric A/B experiments"};
    app.require_subcommand(1);

    // ---- simulate ----
    auto* sim_cmd = app.add_subcommand("simulate", "Generate synthetic experiment files");
    abvr::simulate::SimConfig sim_config;
    int n_experiments = 1;
    double effect_sd = 0.0;
    std::string sim_out = ".";
    std::string sim_format = "csv";
    std::uint64_t sim_seed = 0;
    sim_cmd->add_option("--users", sim_config.n_users, "Users per variant");
    sim_cmd->add_option("--days", sim_config.window_days, "Experiment window days");
    sim_cmd->add_option("--pre-days", sim_config.pre_window_days,
                        "Pre-period window days (0 = same as --days)");
    sim_cmd->add_option("--effect", sim_config.effect, "Additive retention effect (0 for A/A)");
    sim_cmd->add_option("--effect-sd", effect_sd, "Sd of per-experiment effects in a suite");
    sim_cmd->add_option("--base-retention", sim_config.base_retention, "Baseline retention");
    sim_cmd->add_option("--heterogeneity", sim_config.user_heterogeneity,
                        "Sd of the per-user latent (logit scale)");
    sim_cmd->add_option("--pre-post-corr", sim_config.pre_post_correlation,
                        "Latent correlation between pre and experiment periods");
    sim_cmd->add_option("--features", sim_config.n_features, "Number of prediction features");
    sim_cmd->add_option("--signal-fraction", sim_config.feature_signal_fraction,
                        "Fraction of features carrying signal");
    sim_cmd->add_option("--feature-noise", sim_config.feature_noise,
                        "Noise sd added to signal features");
    sim_cmd->add_option("--n-experiments", n_experiments, "Experiments to generate");
    sim_cmd->add_option("--seed", sim_seed, "Master seed");
    sim_cmd->add_option("--out", sim_out, "Output directory");
    sim_cmd->add_option("--format", sim_format, "csv or jsonl")
        ->check(CLI::IsMember({"csv", "jsonl"}));

    // ---- analyze ----
    auto* an_cmd = app.add_subcommand("analyze", "Analyze one experiment file");
    std::string an_config_path;
    std::string an_input;
    std::string an_output;
    std::string an_method = "pred";
    std::string an_control = "control";
    double an_alpha = 0.05;
    int an_folds = 5;
    std::uint64_t an_seed = 0;
    an_cmd->add_option("--config", an_config_path, "Analysis config JSON");
    an_cmd->add_option("--input", an_input, "Experiment file (csv or jsonl)");
    an_cmd->add_option("--out", an_output, "Output JSON path (default stdout)");
    an_cmd->add_option("--method", an_method, "Covariate set: pre, pred, or union")
        ->check(CLI::IsMember({"pre", "pred", "union"}));
    an_cmd->add_option("--control", an_control, "Control variant label");
    an_cmd->add_option("--alpha", an_alpha, "Significance level");
    an_cmd->add_option("--folds", an_folds, "Cross-fitting folds (0 = in-sample)");
    an_cmd->add_option("--seed", an_seed, "Seed for GBDT training");

    // ---- evaluate ----
    auto* ev_cmd = app.add_subcommand("evaluate", "Evaluate a suite of experiments");
    std::string ev_ab;
    std::string ev_aa;
    std::string ev_methods = "pre,pred,union";
    std::string ev_out;
    std::string ev_csv;
    std::string ev_control = "control";
    double ev_alpha = 0.05;
    int ev_folds = 5;
    int ev_trees = 100;
    int ev_depth = 4;
    double ev_lr = 0.1;
    int ev_min_leaf = 50;
    bool ev_table = false;
    std::uint64_t ev_seed = 0;
    ev_cmd->add_option("--ab", ev_ab, "Directory of A/B experiment files")->required();
    ev_cmd->add_option("--aa", ev_aa, "Directory of A/A experiment files (optional)");
    ev_cmd->add_option("--methods", ev_methods, "Comma-separated methods (pre,pred,union)");
    ev_cmd->add_option("--control", ev_control, "Control variant label");
    ev_cmd->add_option("--alpha", ev_alpha, "Significance level");
    ev_cmd->add_option("--folds", ev_folds, "Cross-fitting folds (0 = in-sample)");
    ev_cmd->add_option("--trees", ev_trees, "GBDT trees");
    ev_cmd->add_option("--depth", ev_depth, "GBDT max depth");
    ev_cmd->add_option("--lr", ev_lr, "GBDT learning rate");
    ev_cmd->add_option("--min-leaf", ev_min_leaf, "GBDT min samples per leaf");
    ev_cmd->add_option("--seed", ev_seed, "Seed for GBDT training");
    ev_cmd->add_option("--out", ev_out, "Report JSON path (default stdout)");
    ev_cmd->add_option("--csv", ev_csv, "Per-experiment detail CSV path");
    ev_cmd->add_flag("--table", ev_table, "Print the aligned-text table");

    auto* ver_cmd = app.add_subcommand("version", "Print version");

    CLI11_PARSE(app, argc, argv);

    if (ver_cmd->parsed()) {
        std::cout << "abvr " << kVersion << '\n';
        return 0;
    }

    if (sim_cmd->parsed()) {
        sim_config.seed = sim_seed;
        sim_config.validate();
        const fs::path out_dir(sim_out);
        fs::create_directories(out_dir);
        const auto format = sim_format == "csv" ? abvr::io::Format::Csv : abvr::io::Format::Jsonl;
        const abvr::simulate::EffectDistribution effects{sim_config.effect, effect_sd};
        const auto suite =
            abvr::simulate::generate_suite(n_experiments, sim_config, effects, sim_seed);
        nlohmann::json manifest;
        manifest["schema_version"] = abvr::io::kUnitSchemaVersion;
        manifest["seed"] = sim_seed;
        manifest["n_experiments"] = n_experiments;
        manifest["config"] = {{"users", sim_config.n_users},
                              {"days", sim_config.window_days},
                              {"pre_days", sim_config.pre_window_days},
                              {"effect", sim_config.effect},
                              {"effect_sd", effect_sd},
                              {"base_retention", sim_config.base_retention},
                              {"heterogeneity", sim_config.user_heterogeneity},
                              {"pre_post_corr", sim_config.pre_post_correlation},
                              {"features", sim_config.n_features},
                              {"signal_fraction", sim_config.feature_signal_fraction},
                              {"feature_noise", sim_config.feature_noise}};
        nlohmann::json files = nlohmann::json::array();
        for (std::size_t i = 0; i < suite.size(); ++i) {
            const std::string name = "experiment_" + zero_pad(static_cast<int>(i), 4) +
                                     (format == abvr::io::Format::Csv ? ".csv" : ".jsonl");
            abvr::io::write_units(out_dir / name, suite[i].units, format);
            files.push_back({{"file", name},
                             {"true_effect", suite[i].true_effect},
                             {"units", suite[i].units.size()},
                             {"clamp_count", suite[i].clamp_count}});
        }
        manifest["experiments"] = std::move(files);
        write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
        return 0;
    }

    if (an_cmd->parsed()) {
        abvr::io::AnalysisConfig config;
        if (!an_config_path.empty()) {
            config = abvr::io::load_analysis_config(an_config_path);
        }
        if (!an_input.empty()) {
            config.input = an_input;
        }
        if (an_cmd->count("--method") > 0 || an_config_path.empty()) {
            config.vr.covariate_set = abvr::io::parse_covariate_set(an_method);
        }
        if (an_cmd->count("--control") > 0 || an_config_path.empty()) {
            config.control_variant = an_control;
        }
        if (an_cmd->count("--alpha") > 0) {
            config.alpha = an_alpha;
        }
        if (an_cmd->count("--folds") > 0) {
            config.vr.cross_fit_folds = an_folds;
        }
        if (an_cmd->count("--seed") > 0) {
            config.seed = an_seed;
            config.vr.gbdt_params.seed = an_seed;
        }
        if (an_cmd->count("--out") > 0) {
            config.output = an_output;
        }
        if (config.input.empty()) {
            throw std::invalid_argument("analyze needs --input or a config with an input path");
        }
        abvr::io::IngestOptions options;
        options.enforce_component_bound = config.metric.enforce_component_bound;
        const fs::path input(config.input);
        abvr::io::IngestReport ingest_report;
        const auto units =
            abvr::io::ingest(input, abvr::io::format_from_path(input), options, &ingest_report);
        const auto result =
            abvr::cuped::run_vr_test(units, config.control_variant, config.metric, config.vr);

        nlohmann::json j;
        j["schema_version"] = abvr::io::kReportSchemaVersion;
        j["alpha"] = config.alpha;
        j["input"] = config.input;
        j["rows_read"] = ingest_report.rows_read;
        j["rows_rejected"] = ingest_report.rejects.size();
        j["linearization_c"] = result.c;
        j["raw"] = abvr::io::test_result_json(result.raw);
        j["reduced"] = abvr::io::test_result_json(result.reduced);
        j["pooled_var_outcome"] = result.pooled_var_outcome;
        j["pooled_var_reduced"] = result.pooled_var_reduced;
        j["variance_reduction_pct"] = abvr::evaluate::variance_reduction_pct(
            result.pooled_var_outcome, result.pooled_var_reduced);
        const std::string text = j.dump(2) + "\n";
        if (config.output.empty()) {
            std::cout << text;
        } else {
            write_text(config.output, text);
        }
        return 0;
    }

    // evaluate
    std::vector<abvr::cuped::VRConfig> methods;
    {
        std::stringstream labels(ev_methods);
        std::string label;
        while (std::getline(labels, label, ',')) {
            abvr::cuped::VRConfig config;
            config.covariate_set = abvr::io::parse_covariate_set(label);
            config.cross_fit_folds = ev_folds;
            config.gbdt_params.n_trees = ev_trees;
            config.gbdt_params.max_depth = ev_depth;
            config.gbdt_params.learning_rate = ev_lr;
            config.gbdt_params.min_samples_leaf = ev_min_leaf;
            config.gbdt_params.seed = ev_seed;
            methods.push_back(config);
        }
    }
    const auto suite_ab = load_suite(ev_ab, ev_control);
    std::vector<abvr::evaluate::ExperimentData> suite_aa;
    if (!ev_aa.empty()) {
        suite_aa = load_suite(ev_aa, ev_control);
    }
    abvr::ratio::RatioMetricSpec metric;
    metric.name = "retention";
    const auto rows = abvr::evaluate::run_table(suite_ab, suite_aa, metric, methods, ev_alpha);
    const std::string report = abvr::io::report_json(rows, ev_alpha, true).dump(2) + "\n";
    if (ev_out.empty()) {
        std::cout << report;
    } else {
        write_text(ev_out, report);
    }
    if (!ev_csv.empty()) {
        write_text(ev_csv, abvr::io::details_csv(rows));
    }
    if (ev_table) {
        std::cout << abvr::io::report_table(rows);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::domain_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 2;
    }
}
