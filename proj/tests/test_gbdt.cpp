#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "abvr/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace abvr;

namespace {

Eigen::MatrixXd random_features(int n, int d, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd x(n, d);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            x(i, j) = normal(rng);
        }
    }
    return x;
}

double mse(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return (a - b).squaredNorm() / static_cast<double>(a.size());
}

}  // namespace

TEST_CASE("constant targets give a constant model") {
    std::mt19937_64 rng(1);
    const auto x = random_features(500, 3, rng);
    const Eigen::VectorXd y = Eigen::VectorXd::Constant(500, 4.25);
    gbdt::GBDTParams params;
    params.n_trees = 10;
    params.min_samples_leaf = 10;
    const auto model = gbdt::fit(x, y, params);
    const auto pred = model.predict(x);
    CHECK((pred.array() - 4.25).abs().maxCoeff() < 1e-12);
}

TEST_CASE("zero-tree model predicts base score") {
    std::mt19937_64 rng(2);
    const auto x = random_features(200, 2, rng);
    Eigen::VectorXd y(200);
    for (int i = 0; i < 200; ++i) {
        y[i] = static_cast<double>(i);
    }
    gbdt::GBDTParams params;
    params.n_trees = 0;
    params.min_samples_leaf = 10;
    const auto model = gbdt::fit(x, y, params);
    const auto pred = model.predict(x);
    CHECK((pred.array() - y.mean()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("step function is recovered by depth-1 boosting") {
    std::mt19937_64 rng(3);
    const int n = 4000;
    const auto x = random_features(n, 1, rng);
    Eigen::VectorXd y(n);
    const double threshold = 0.3;
    for (int i = 0; i < n; ++i) {
        y[i] = x(i, 0) > threshold ? 1.0 : -1.0;
    }
    // oracle: a single split at the threshold achieves zero squared error,
    // so boosting must drive training MSE toward zero
    gbdt::GBDTParams params;
    params.n_trees = 200;
    params.learning_rate = 0.1;
    params.max_depth = 1;
    params.min_samples_leaf = 20;
    params.max_bins = n;  // fine enough to land a boundary at the step
    const auto model = gbdt::fit(x, y, params);
    const double var_y = (y.array() - y.mean()).square().sum() / (n - 1);
    CHECK(mse(model.predict(x), y) < 1e-4 * var_y);
    CHECK((model.predict(x) - y).cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("training MSE is non-increasing in tree count") {
    std::mt19937_64 rng(4);
    for (int rep = 0; rep < 5; ++rep) {
        const int n = 1500;
        const auto x = random_features(n, 4, rng);
        std::normal_distribution<double> normal(0.0, 1.0);
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i) {
            y[i] = std::sin(x(i, 0)) + 0.5 * x(i, 1) * x(i, 2) + 0.3 * normal(rng);
        }
        gbdt::GBDTParams params;
        params.n_trees = 40;
        params.min_samples_leaf = 20;
        params.seed = static_cast<std::uint64_t>(rep);
        const auto model = gbdt::fit(x, y, params);

        // replay the ensemble prefix by prefix
        Eigen::VectorXd pred = Eigen::VectorXd::Constant(n, model.base_score);
        double prev_mse = mse(pred, y);
        for (const auto& tree : model.trees) {
            for (int i = 0; i < n; ++i) {
                pred[i] += tree.predict_row(x.row(i));
            }
            const double current = mse(pred, y);
            CHECK(current <= prev_mse + 1e-12);
            prev_mse = current;
        }
    }
}

TEST_CASE("predictions invariant under order-preserving feature rescaling") {
    std::mt19937_64 rng(5);
    const int n = 400;
    Eigen::MatrixXd x = random_features(n, 2, rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        y[i] = x(i, 0) * x(i, 0) + x(i, 1) + 0.1 * normal(rng);
    }
    gbdt::GBDTParams params;
    params.n_trees = 30;
    params.min_samples_leaf = 10;
    params.max_bins = n;  // one distinct value per bin
    const auto model = gbdt::fit(x, y, params);
    const auto pred = model.predict(x);

    // strictly monotone rescale of feature 0 preserves within-bin order
    Eigen::MatrixXd x2 = x;
    for (int i = 0; i < n; ++i) {
        x2(i, 0) = std::exp(0.5 * x(i, 0)) * 3.0 - 1.0;
    }
    const auto model2 = gbdt::fit(x2, y, params);
    const auto pred2 = model2.predict(x2);
    CHECK((pred - pred2).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("row permutation permutes predictions") {
    std::mt19937_64 rng(6);
    const int n = 300;
    const auto x = random_features(n, 3, rng);
    const Eigen::VectorXd y = x.col(0) + x.col(1).cwiseProduct(x.col(2));
    gbdt::GBDTParams params;
    params.n_trees = 15;
    params.min_samples_leaf = 10;
    const auto model = gbdt::fit(x, y, params);
    const auto pred = model.predict(x);

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    Eigen::MatrixXd permuted(n, 3);
    for (int i = 0; i < n; ++i) {
        permuted.row(i) = x.row(order[static_cast<std::size_t>(i)]);
    }
    const auto pred_permuted = model.predict(permuted);
    for (int i = 0; i < n; ++i) {
        CHECK(pred_permuted[i] == pred[order[static_cast<std::size_t>(i)]]);
    }

    Eigen::MatrixXd wrong_dim(n, 2);
    CHECK_THROWS_AS(model.predict(wrong_dim), std::invalid_argument);
}

TEST_CASE("serialization round-trip is bit-exact") {
    std::mt19937_64 rng(7);
    const auto x = random_features(600, 3, rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd y(600);
    for (int i = 0; i < 600; ++i) {
        y[i] = std::tanh(x(i, 0)) - x(i, 2) + 0.2 * normal(rng);
    }
    gbdt::GBDTParams params;
    params.n_trees = 25;
    params.min_samples_leaf = 15;
    params.subsample = 0.8;
    params.seed = 99;
    const auto model = gbdt::fit(x, y, params);
    const std::string text = model.to_json();
    const auto restored = gbdt::GBDTModel::from_json(text);
    CHECK(restored.to_json() == text);
    const auto pred = model.predict(x);
    const auto pred_restored = restored.predict(x);
    for (int i = 0; i < 600; ++i) {
        CHECK(pred[i] == pred_restored[i]);
    }
}

TEST_CASE("same seed gives bit-identical models") {
    std::mt19937_64 rng(8);
    const auto x = random_features(500, 2, rng);
    const Eigen::VectorXd y = x.col(0).array().sin();
    gbdt::GBDTParams params;
    params.n_trees = 10;
    params.min_samples_leaf = 10;
    params.subsample = 0.7;
    params.seed = 1234;
    CHECK(gbdt::fit(x, y, params).to_json() == gbdt::fit(x, y, params).to_json());
}

TEST_CASE("cross-fit predictions carry no leakage on pure noise") {
    std::mt19937_64 rng(9);
    const int n = 50000;
    const auto x = random_features(n, 3, rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        y[i] = normal(rng);
    }
    gbdt::GBDTParams params;
    params.n_trees = 30;
    params.min_samples_leaf = 50;
    const auto oof = gbdt::cross_fit_predict(x, y, params, 5, 17);

    const double sd_oof = std::sqrt((oof.array() - oof.mean()).square().sum() / (n - 1));
    double corr = 0.0;
    if (sd_oof > 1e-12) {
        const double sd_y = std::sqrt((y.array() - y.mean()).square().sum() / (n - 1));
        corr = ((oof.array() - oof.mean()) * (y.array() - y.mean())).sum() / (n - 1) /
               (sd_oof * sd_y);
    }
    CHECK(std::abs(corr) < 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("cross-fit determinism and fold feasibility") {
    std::mt19937_64 rng(10);
    const auto x = random_features(2000, 2, rng);
    const Eigen::VectorXd y = x.col(0);
    gbdt::GBDTParams params;
    params.n_trees = 5;
    params.min_samples_leaf = 20;
    const auto a = gbdt::cross_fit_predict(x, y, params, 4, 5);
    const auto b = gbdt::cross_fit_predict(x, y, params, 4, 5);
    for (int i = 0; i < 2000; ++i) {
        CHECK(a[i] == b[i]);
    }
    CHECK_THROWS_AS(gbdt::cross_fit_predict(x, y, params, 1, 5), std::invalid_argument);

    gbdt::GBDTParams big_leaf = params;
    big_leaf.min_samples_leaf = 900;
    CHECK_THROWS_WITH_AS(gbdt::cross_fit_predict(x, y, big_leaf, 2, 5), "too few rows per fold",
                         std::invalid_argument);
}

TEST_CASE("cross-fit approaches in-sample fit on duplicated halves") {
    std::mt19937_64 rng(11);
    const int half = 3000;
    const auto xh = random_features(half, 2, rng);
    Eigen::VectorXd yh(half);
    for (int i = 0; i < half; ++i) {
        yh[i] = xh(i, 0) > 0.0 ? 1.0 : 0.0;
    }
    Eigen::MatrixXd x(2 * half, 2);
    Eigen::VectorXd y(2 * half);
    x << xh, xh;
    y << yh, yh;
    gbdt::GBDTParams params;
    params.n_trees = 50;
    params.min_samples_leaf = 30;
    const auto oof = gbdt::cross_fit_predict(x, y, params, 2, 3);
    const auto in_sample = gbdt::fit(x, y, params).predict(x);
    CHECK(mse(oof, in_sample) < 0.01);
}
