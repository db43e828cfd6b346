#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace abvr::gbdt {

struct GBDTParams {
    int n_trees = 100;
    double learning_rate = 0.1;
    int max_depth = 4;
    int min_samples_leaf = 50;
    int max_bins = 64;
    double subsample = 1.0;
    std::uint64_t seed = 0;

    void validate() const;  // throws on out-of-range fields
};

/// One node of a regression tree, stored in a flat array. Leaves carry the
/// learning-rate-scaled value; internal nodes route on feature <= threshold.
struct TreeNode {
    bool is_leaf = true;
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
};

struct Tree {
    std::vector<TreeNode> nodes;

    [[nodiscard]] double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
};

/// Additive ensemble of shallow regression trees fit stagewise to residuals
/// under squared loss, with histogram splits on per-feature quantile bins.
struct GBDTModel {
    double base_score = 0.0;
    int n_features = 0;
    GBDTParams params;
    std::vector<Tree> trees;

    [[nodiscard]] Eigen::VectorXd predict(const Eigen::Ref<const Eigen::MatrixXd>& features) const;

    /// Versioned JSON text format; round-trips bit-exactly.
    [[nodiscard]] std::string to_json() const;
    [[nodiscard]] static GBDTModel from_json(const std::string& text);
};

/// Fits the ensemble. Stage m fits a depth-limited tree to the residuals of
/// the running prediction; leaf value is the mean residual, scaled by the
/// learning rate on update. Deterministic for a fixed seed; split-gain ties
/// break toward the lowest feature index, then the lowest threshold.
[[nodiscard]] GBDTModel fit(const Eigen::Ref<const Eigen::MatrixXd>& features,
                            const Eigen::Ref<const Eigen::VectorXd>& targets,
                            const GBDTParams& params);

/// Out-of-fold predictions: units are assigned to folds by a seeded hash of
/// their row index, and each unit is predicted by a model trained on the
/// other folds.
[[nodiscard]] Eigen::VectorXd cross_fit_predict(const Eigen::Ref<const Eigen::MatrixXd>& features,
                                                const Eigen::Ref<const Eigen::VectorXd>& targets,
                                                const GBDTParams& params, int folds,
                                                std::uint64_t seed);

/// Column-wise cross_fit_predict for several targets over one feature
/// matrix: the fold partition, per-fold training matrices, and feature
/// binning are shared, and each column matches what cross_fit_predict would
/// return for it.
[[nodiscard]] Eigen::MatrixXd cross_fit_predict_multi(
    const Eigen::Ref<const Eigen::MatrixXd>& features,
    const Eigen::Ref<const Eigen::MatrixXd>& targets, const GBDTParams& params, int folds,
    std::uint64_t seed);

/// Fold id of one row under the seeded-hash partition used by
/// cross_fit_predict.
[[nodiscard]] int fold_of(std::uint64_t row_index, int folds, std::uint64_t seed);

}  // namespace abvr::gbdt
