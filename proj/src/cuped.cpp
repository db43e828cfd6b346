#include "abvr/cuped.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace abvr::cuped {

namespace {

void center_column(Eigen::Ref<Eigen::VectorXd> column) {
    column.array() -= column.mean();
}

stats::SampleStats masked_stats(const Eigen::VectorXd& values, const std::vector<bool>& mask,
                                bool keep) {
    stats::MomentAccumulator acc;
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        if (mask[static_cast<std::size_t>(i)] == keep) {
            acc.add(values[i]);
        }
    }
    return acc.stats();
}

std::vector<ratio::UnitMetricComponents> masked_components(std::span<const UnitRecord> units,
                                                           const std::vector<bool>& mask,
                                                           bool keep) {
    std::vector<ratio::UnitMetricComponents> out;
    for (std::size_t i = 0; i < units.size(); ++i) {
        if (mask[i] == keep) {
            out.push_back(
                ratio::UnitMetricComponents{units[i].unit_id, units[i].numerator,
                                            units[i].denominator});
        }
    }
    return out;
}

Eigen::MatrixXd feature_matrix(std::span<const UnitRecord> units) {
    if (units.empty()) {
        throw std::invalid_argument("empty experiment");
    }
    const std::size_t d = units.front().features.size();
    if (d == 0) {
        throw std::invalid_argument("missing prediction features");
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(units.size()), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < units.size(); ++i) {
        if (units[i].features.size() != d) {
            throw std::invalid_argument("inconsistent feature dimensionality");
        }
        for (std::size_t j = 0; j < d; ++j) {
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = units[i].features[j];
        }
    }
    return x;
}

Eigen::VectorXd predict_target(const Eigen::MatrixXd& features, const Eigen::VectorXd& target,
                               const VRConfig& config) {
    if (config.cross_fit_folds >= 2) {
        return gbdt::cross_fit_predict(features, target, config.gbdt_params,
                                       config.cross_fit_folds, config.gbdt_params.seed);
    }
    return gbdt::fit(features, target, config.gbdt_params).predict(features);
}

}  // namespace

std::string method_label(CovariateSet set) {
    switch (set) {
        case CovariateSet::PreOnly:
            return "pre";
        case CovariateSet::PredOnly:
            return "pred";
        case CovariateSet::Union:
            return "union";
    }
    throw std::logic_error("unreachable");
}

void VRConfig::validate() const {
    if (cross_fit_folds == 1 || cross_fit_folds < 0) {
        throw std::invalid_argument("cross_fit_folds must be 0 or >= 2");
    }
    gbdt_params.validate();
}

double cuped_theta(const Eigen::Ref<const Eigen::VectorXd>& metric,
                   const Eigen::Ref<const Eigen::VectorXd>& pre_metric) {
    const double var_pre = stats::summarize(pre_metric).variance;
    if (var_pre <= 0.0) {
        throw std::domain_error("constant covariate");
    }
    return stats::covariance(metric, pre_metric) / var_pre;
}

Eigen::VectorXd apply_control_variate(const Eigen::Ref<const Eigen::VectorXd>& metric,
                                      const Eigen::Ref<const Eigen::VectorXd>& cv) {
    if (metric.size() != cv.size()) {
        throw std::invalid_argument("length mismatch");
    }
    return metric - cv;
}

Eigen::VectorXd RegressionFit::predict(
    const Eigen::Ref<const Eigen::MatrixXd>& covariates) const {
    if (covariates.cols() != k) {
        throw std::invalid_argument("covariate dimension mismatch");
    }
    return covariates * coefficients;
}

RegressionFit fit_pooled_regression(const CovariateMatrix& covariates,
                                    const Eigen::Ref<const Eigen::VectorXd>& outcome) {
    const Eigen::Index n = covariates.columns.rows();
    const Eigen::Index k = covariates.columns.cols();
    if (n != outcome.size()) {
        throw std::invalid_argument("length mismatch");
    }
    if (n <= k) {
        throw std::invalid_argument("underdetermined");
    }
    if (!covariates.columns.allFinite() || !outcome.allFinite()) {
        throw std::invalid_argument("non-finite covariate");
    }

    const Eigen::MatrixXd gram = covariates.columns.transpose() * covariates.columns;
    const Eigen::VectorXd rhs = covariates.columns.transpose() * outcome;

    Eigen::VectorXd beta = gram.ldlt().solve(rhs);
    const double rhs_norm = std::max(rhs.norm(), 1e-300);
    if (!beta.allFinite() || (gram * beta - rhs).norm() / rhs_norm > 1e-8) {
        const double ridge = 1e-10 * gram.trace() / static_cast<double>(k);
        Eigen::MatrixXd regularized = gram;
        regularized.diagonal().array() += ridge;
        beta = regularized.ldlt().solve(rhs);
    }

    RegressionFit fit;
    fit.names = covariates.names;
    fit.coefficients = std::move(beta);
    fit.k = k;
    fit.n = n;
    return fit;
}

CovariateMatrix build_covariates(const Eigen::Ref<const Eigen::VectorXd>& pre_numerator,
                                 const Eigen::Ref<const Eigen::VectorXd>& pre_denominator,
                                 CovariateSet set, const PredictedCovariates* predictions,
                                 bool center) {
    const Eigen::Index n = pre_numerator.size();
    if (pre_denominator.size() != n) {
        throw std::invalid_argument("length mismatch");
    }
    const bool want_pre = set == CovariateSet::PreOnly || set == CovariateSet::Union;
    const bool want_pred = set == CovariateSet::PredOnly || set == CovariateSet::Union;
    if (want_pred &&
        (predictions == nullptr || predictions->pred_n.size() != n ||
         predictions->pred_d.size() != n || predictions->pred_l.size() != n)) {
        throw std::invalid_argument("missing predicted covariates");
    }

    CovariateMatrix out;
    std::vector<Eigen::VectorXd> cols;

    if (want_pre) {
        std::vector<bool> missing(static_cast<std::size_t>(n), false);
        Eigen::Index n_missing = 0;
        double num_sum = 0.0;
        double den_sum = 0.0;
        stats::MomentAccumulator num_mean;
        stats::MomentAccumulator den_mean;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (std::isfinite(pre_numerator[i]) && std::isfinite(pre_denominator[i])) {
                num_sum += pre_numerator[i];
                den_sum += pre_denominator[i];
                num_mean.add(pre_numerator[i]);
                den_mean.add(pre_denominator[i]);
            } else {
                missing[static_cast<std::size_t>(i)] = true;
                ++n_missing;
            }
        }
        if (n_missing == n) {
            throw std::invalid_argument("missing pre-period fields");
        }
        if (den_sum <= 0.0) {
            throw std::domain_error("all-zero pre-period denominators");
        }
        // L_pre uses the pooled pre-period ratio as its c.
        const double c_pre = num_sum / den_sum;
        const double num_fill = num_mean.mean();
        const double den_fill = den_mean.mean();

        Eigen::VectorXd col_n(n);
        Eigen::VectorXd col_d(n);
        Eigen::VectorXd col_l(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double num_i = missing[static_cast<std::size_t>(i)] ? num_fill : pre_numerator[i];
            const double den_i =
                missing[static_cast<std::size_t>(i)] ? den_fill : pre_denominator[i];
            col_n[i] = num_i;
            col_d[i] = den_i;
            col_l[i] = num_i - c_pre * den_i;
        }
        out.names.insert(out.names.end(), {"M_N_pre", "M_D_pre", "L_pre"});
        cols.push_back(std::move(col_n));
        cols.push_back(std::move(col_d));
        cols.push_back(std::move(col_l));
        if (n_missing > 0) {
            Eigen::VectorXd indicator(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                indicator[i] = missing[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
            }
            out.names.emplace_back("pre_missing");
            cols.push_back(std::move(indicator));
        }
    }

    if (want_pred) {
        out.names.insert(out.names.end(), {"pred_N", "pred_D", "pred_L"});
        cols.push_back(predictions->pred_n);
        cols.push_back(predictions->pred_d);
        cols.push_back(predictions->pred_l);
    }

    out.columns.resize(n, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) {
        out.columns.col(static_cast<Eigen::Index>(j)) = cols[j];
        if (center) {
            center_column(out.columns.col(static_cast<Eigen::Index>(j)));
        }
    }
    if (!out.columns.allFinite()) {
        throw std::invalid_argument("non-finite covariate");
    }
    return out;
}

PredictedCovariates predict_components(std::span<const UnitRecord> units, double c,
                                       const VRConfig& config) {
    const Eigen::MatrixXd features = feature_matrix(units);
    const Eigen::Index n = features.rows();
    Eigen::VectorXd outcome_num(n);
    Eigen::VectorXd outcome_den(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        outcome_num[i] = units[static_cast<std::size_t>(i)].numerator;
        outcome_den[i] = units[static_cast<std::size_t>(i)].denominator;
    }
    const Eigen::VectorXd linearized = outcome_num - c * outcome_den;

    PredictedCovariates predictions;
    if (config.cross_fit_folds >= 2) {
        // one multi-target pass shares the fold split and feature binning
        Eigen::MatrixXd targets(n, config.compose_pred_l ? 2 : 3);
        targets.col(0) = outcome_num;
        targets.col(1) = outcome_den;
        if (!config.compose_pred_l) {
            targets.col(2) = linearized;
        }
        const Eigen::MatrixXd oof = gbdt::cross_fit_predict_multi(
            features, targets, config.gbdt_params, config.cross_fit_folds,
            config.gbdt_params.seed);
        predictions.pred_n = oof.col(0);
        predictions.pred_d = oof.col(1);
        predictions.pred_l = config.compose_pred_l
                                 ? Eigen::VectorXd(predictions.pred_n - c * predictions.pred_d)
                                 : Eigen::VectorXd(oof.col(2));
    } else {
        predictions.pred_n = predict_target(features, outcome_num, config);
        predictions.pred_d = predict_target(features, outcome_den, config);
        predictions.pred_l = config.compose_pred_l
                                 ? Eigen::VectorXd(predictions.pred_n - c * predictions.pred_d)
                                 : predict_target(features, linearized, config);
    }
    return predictions;
}

VRTestOutput run_vr_test(std::span<const UnitRecord> units, const std::string& control_variant,
                         const ratio::RatioMetricSpec& spec, const VRConfig& config,
                         const PredictedCovariates* precomputed) {
    config.validate();
    if (units.empty()) {
        throw std::invalid_argument("empty experiment");
    }

    const Eigen::Index n = static_cast<Eigen::Index>(units.size());
    std::vector<bool> is_control(units.size());
    std::string treatment_variant;
    std::size_t n_control = 0;
    for (std::size_t i = 0; i < units.size(); ++i) {
        const std::string& v = units[i].variant;
        if (v == control_variant) {
            is_control[i] = true;
            ++n_control;
        } else {
            if (treatment_variant.empty()) {
                treatment_variant = v;
            } else if (v != treatment_variant) {
                throw std::invalid_argument("more than two variants in experiment");
            }
            is_control[i] = false;
        }
    }
    if (n_control == 0) {
        throw std::invalid_argument("control variant not found");
    }
    if (n_control == units.size()) {
        throw std::invalid_argument("treatment variant empty");
    }

    const auto control_components = masked_components(units, is_control, true);
    const auto treatment_components = masked_components(units, is_control, false);

    VRTestOutput out;
    out.raw = ratio::delta_ratio_test(treatment_components, control_components);
    out.raw.method_label = "raw";

    double c = 0.0;
    if (std::holds_alternative<ratio::FixedConstant>(spec.linearization_source)) {
        c = std::get<ratio::FixedConstant>(spec.linearization_source).value;
    } else {
        c = ratio::linearization_coefficient(control_components);
    }
    out.c = c;

    // Pooled per-unit outcome in input record order, aligned with covariates.
    Eigen::VectorXd outcome_num(n);
    Eigen::VectorXd outcome_den(n);
    Eigen::VectorXd pre_num(n);
    Eigen::VectorXd pre_den(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const UnitRecord& u = units[static_cast<std::size_t>(i)];
        outcome_num[i] = u.numerator;
        outcome_den[i] = u.denominator;
        pre_num[i] = u.pre_numerator;
        pre_den[i] = u.pre_denominator;
    }
    const Eigen::VectorXd linearized = outcome_num - c * outcome_den;

    PredictedCovariates predictions;
    const PredictedCovariates* predictions_ptr = nullptr;
    if (config.covariate_set != CovariateSet::PreOnly) {
        if (precomputed != nullptr) {
            predictions_ptr = precomputed;
        } else {
            predictions = predict_components(units, c, config);
            predictions_ptr = &predictions;
        }
    }

    const CovariateMatrix covariates =
        build_covariates(pre_num, pre_den, config.covariate_set, predictions_ptr,
                         config.center_covariates);

    if (config.outcome == Outcome::Linearized) {
        const RegressionFit fit = fit_pooled_regression(covariates, linearized);
        const Eigen::VectorXd reduced =
            apply_control_variate(linearized, fit.predict(covariates.columns));
        out.reduced = stats::two_sample_test(masked_stats(reduced, is_control, false),
                                             masked_stats(reduced, is_control, true));
        out.pooled_var_outcome = stats::summarize(linearized).variance;
        out.pooled_var_reduced = stats::summarize(reduced).variance;
    } else {
        // Adjust each component separately, then test the ratio of the
        // adjusted components with the Taylor variance.
        const RegressionFit fit_num = fit_pooled_regression(covariates, outcome_num);
        const RegressionFit fit_den = fit_pooled_regression(covariates, outcome_den);
        const Eigen::VectorXd adj_num =
            apply_control_variate(outcome_num, fit_num.predict(covariates.columns));
        const Eigen::VectorXd adj_den =
            apply_control_variate(outcome_den, fit_den.predict(covariates.columns));
        std::vector<ratio::UnitMetricComponents> adj_treat;
        std::vector<ratio::UnitMetricComponents> adj_control;
        for (Eigen::Index i = 0; i < n; ++i) {
            auto& dst = is_control[static_cast<std::size_t>(i)] ? adj_control : adj_treat;
            dst.push_back(ratio::UnitMetricComponents{
                units[static_cast<std::size_t>(i)].unit_id, adj_num[i], adj_den[i]});
        }
        out.reduced = ratio::delta_ratio_test(adj_treat, adj_control);
        stats::CovarianceAccumulator raw_cov;
        stats::MomentAccumulator raw_num_acc;
        stats::MomentAccumulator raw_den_acc;
        for (Eigen::Index i = 0; i < n; ++i) {
            raw_cov.add(outcome_num[i], outcome_den[i]);
            raw_num_acc.add(outcome_num[i]);
            raw_den_acc.add(outcome_den[i]);
        }
        out.pooled_var_outcome = ratio::delta_variance(raw_num_acc.stats(), raw_den_acc.stats(),
                                                       raw_cov.covariance());
        stats::CovarianceAccumulator adj_cov;
        stats::MomentAccumulator adj_num_acc;
        stats::MomentAccumulator adj_den_acc;
        for (Eigen::Index i = 0; i < n; ++i) {
            adj_cov.add(adj_num[i], adj_den[i]);
            adj_num_acc.add(adj_num[i]);
            adj_den_acc.add(adj_den[i]);
        }
        out.pooled_var_reduced = ratio::delta_variance(adj_num_acc.stats(), adj_den_acc.stats(),
                                                       adj_cov.covariance());
    }
    out.reduced.method_label = method_label(config.covariate_set);
    return out;
}

}  // namespace abvr::cuped
