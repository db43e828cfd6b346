#pragma once

#include "abvr/gbdt.hpp"
#include "abvr/ratio.hpp"
#include "abvr/stats.hpp"
#include "abvr/unit.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace abvr::cuped {

/// Which covariates enter the pooled regression: pre-experiment components,
/// GBDT predictions, or their union.
enum class CovariateSet { PreOnly, PredOnly, Union };

/// Per-unit outcome the variance reduction is applied to.
enum class Outcome { Linearized, DeltaRatio };

[[nodiscard]] std::string method_label(CovariateSet set);

struct VRConfig {
    CovariateSet covariate_set = CovariateSet::PredOnly;
    Outcome outcome = Outcome::Linearized;
    gbdt::GBDTParams gbdt_params;
    int cross_fit_folds = 5;  // 0 = in-sample predictions
    bool center_covariates = true;
    bool compose_pred_l = false;  // L-hat = pred_N - c * pred_D instead of a direct target

    void validate() const;
};

/// Named covariate columns over the pooled sample, mean-centered when built
/// with centering on.
struct CovariateMatrix {
    std::vector<std::string> names;
    Eigen::MatrixXd columns;  // n x k
};

/// Pooled OLS fit of the outcome on centered covariates (no intercept).
struct RegressionFit {
    std::vector<std::string> names;
    Eigen::VectorXd coefficients;
    Eigen::Index k = 0;
    Eigen::Index n = 0;

    [[nodiscard]] Eigen::VectorXd predict(const Eigen::Ref<const Eigen::MatrixXd>& covariates) const;
};

/// GBDT predictions of the metric components and the linearized metric.
struct PredictedCovariates {
    Eigen::VectorXd pred_n;
    Eigen::VectorXd pred_d;
    Eigen::VectorXd pred_l;
};

/// Classical single-covariate coefficient cov(M, M_pre) / var(M_pre),
/// estimated over the pooled sample. Throws "constant covariate" when the
/// pre-metric variance is zero.
[[nodiscard]] double cuped_theta(const Eigen::Ref<const Eigen::VectorXd>& metric,
                                 const Eigen::Ref<const Eigen::VectorXd>& pre_metric);

/// Per-unit M_VR = M - CV.
[[nodiscard]] Eigen::VectorXd apply_control_variate(
    const Eigen::Ref<const Eigen::VectorXd>& metric, const Eigen::Ref<const Eigen::VectorXd>& cv);

/// OLS via normal equations; a diagonal ridge of 1e-10 * trace/k is added
/// only when the plain factorization fails numerically.
[[nodiscard]] RegressionFit fit_pooled_regression(const CovariateMatrix& covariates,
                                                  const Eigen::Ref<const Eigen::VectorXd>& outcome);

/// Builds the covariate matrix for one pooled sample. Takes no variant
/// information, so covariates cannot depend on treatment assignment. Missing
/// pre-period entries (NaN) become the column mean and add a binary missing
/// indicator column. All columns are mean-centered when `center` is true.
[[nodiscard]] CovariateMatrix build_covariates(
    const Eigen::Ref<const Eigen::VectorXd>& pre_numerator,
    const Eigen::Ref<const Eigen::VectorXd>& pre_denominator, CovariateSet set,
    const PredictedCovariates* predictions, bool center);

struct VRTestOutput {
    stats::TestResult raw;      // unreduced ratio test (Taylor variance)
    stats::TestResult reduced;  // z-test on the variance-reduced outcome
    double c = 0.0;             // linearization coefficient used
    double pooled_var_outcome = 0.0;
    double pooled_var_reduced = 0.0;
};

/// GBDT predictions of the per-unit components and linearized outcome, from
/// prediction features only. c is the linearization coefficient used for the
/// L target.
[[nodiscard]] PredictedCovariates predict_components(std::span<const UnitRecord> units, double c,
                                                     const VRConfig& config);

/// End-to-end variance-reduced test for one two-variant experiment. The
/// non-control variant is treated as A in the z-statistic. When
/// `precomputed` is non-null it is used instead of training the GBDT
/// (callers evaluating several methods on one experiment share predictions).
[[nodiscard]] VRTestOutput run_vr_test(std::span<const UnitRecord> units,
                                       const std::string& control_variant,
                                       const ratio::RatioMetricSpec& spec, const VRConfig& config,
                                       const PredictedCovariates* precomputed = nullptr);

}  // namespace abvr::cuped
