#include "abvr/gbdt.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace abvr::gbdt {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Row-major so one unit's bins share a cache line during histogram builds.
using BinnedMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Per-feature quantile boundaries; bin(x) = index of first boundary >= x,
// so bin(x) <= t iff x <= boundary[t].
struct BinMap {
    std::vector<std::vector<double>> boundaries;  // per feature, ascending

    [[nodiscard]] int bin(int feature, double x) const {
        const auto& b = boundaries[static_cast<std::size_t>(feature)];
        return static_cast<int>(std::lower_bound(b.begin(), b.end(), x) - b.begin());
    }
};

BinMap build_bins(const Eigen::Ref<const Eigen::MatrixXd>& features, int max_bins) {
    const auto n = static_cast<std::size_t>(features.rows());
    BinMap map;
    map.boundaries.resize(static_cast<std::size_t>(features.cols()));
    std::vector<double> column(n);
    for (Eigen::Index f = 0; f < features.cols(); ++f) {
        for (Eigen::Index i = 0; i < features.rows(); ++i) {
            column[static_cast<std::size_t>(i)] = features(i, f);
        }
        std::sort(column.begin(), column.end());
        auto& bounds = map.boundaries[static_cast<std::size_t>(f)];
        for (int b = 1; b < max_bins; ++b) {
            const std::size_t idx = static_cast<std::size_t>(
                static_cast<double>(b) * static_cast<double>(n) / static_cast<double>(max_bins));
            const double v = column[std::min(idx, n - 1)];
            if (bounds.empty() || v > bounds.back()) {
                bounds.push_back(v);
            }
        }
    }
    return map;
}

struct SplitCandidate {
    bool found = false;
    int feature = -1;
    int bin = -1;
    double score = 0.0;
};

class TreeBuilder {
public:
    TreeBuilder(const BinnedMatrix& binned, const BinMap& bins,
                const Eigen::VectorXd& residuals, const GBDTParams& params)
        : binned_(binned), bins_(bins), residuals_(residuals), params_(params) {}

    // Builds the tree and folds each leaf value straight into `prediction`
    // for the training rows, so training needs no per-row traversal.
    Tree build(std::vector<int>& rows, Eigen::VectorXd& prediction) {
        tree_.nodes.clear();
        double sum = 0.0;
        for (int r : rows) {
            sum += residuals_[r];
        }
        grow(rows, 0, sum, prediction);
        return std::move(tree_);
    }

private:
    int grow(std::vector<int>& rows, int depth, double sum, Eigen::VectorXd& prediction) {
        const int node_id = static_cast<int>(tree_.nodes.size());
        tree_.nodes.emplace_back();
        const double count = static_cast<double>(rows.size());

        SplitCandidate best;
        if (depth < params_.max_depth &&
            rows.size() >= 2 * static_cast<std::size_t>(params_.min_samples_leaf)) {
            best = find_split(rows, sum);
        }

        if (!best.found) {
            const double value = params_.learning_rate * sum / count;
            tree_.nodes[static_cast<std::size_t>(node_id)].is_leaf = true;
            tree_.nodes[static_cast<std::size_t>(node_id)].value = value;
            for (int r : rows) {
                prediction[r] += value;
            }
            return node_id;
        }

        std::vector<int> left_rows;
        std::vector<int> right_rows;
        left_rows.reserve(rows.size());
        right_rows.reserve(rows.size());
        double left_sum = 0.0;
        for (int r : rows) {
            if (binned_(r, best.feature) <= best.bin) {
                left_rows.push_back(r);
                left_sum += residuals_[r];
            } else {
                right_rows.push_back(r);
            }
        }
        rows.clear();
        rows.shrink_to_fit();

        const double threshold =
            bins_.boundaries[static_cast<std::size_t>(best.feature)]
                            [static_cast<std::size_t>(best.bin)];
        const int left = grow(left_rows, depth + 1, left_sum, prediction);
        const int right = grow(right_rows, depth + 1, sum - left_sum, prediction);
        TreeNode& node = tree_.nodes[static_cast<std::size_t>(node_id)];
        node.is_leaf = false;
        node.feature = best.feature;
        node.threshold = threshold;
        node.left = left;
        node.right = right;
        return node_id;
    }

    SplitCandidate find_split(const std::vector<int>& rows, double total_sum) {
        const double total_count = static_cast<double>(rows.size());
        const double baseline = total_sum * total_sum / total_count;
        SplitCandidate best;

        const int n_features = static_cast<int>(binned_.cols());
        const std::size_t stride = static_cast<std::size_t>(params_.max_bins) + 1;
        hist_count_.assign(static_cast<std::size_t>(n_features) * stride, 0.0);
        hist_sum_.assign(static_cast<std::size_t>(n_features) * stride, 0.0);
        // one pass over the rows fills every feature's histogram
        for (int r : rows) {
            const double res = residuals_[r];
            const int* row_bins = binned_.data() + static_cast<std::ptrdiff_t>(r) * n_features;
            for (int f = 0; f < n_features; ++f) {
                const std::size_t idx =
                    static_cast<std::size_t>(f) * stride + static_cast<std::size_t>(row_bins[f]);
                hist_count_[idx] += 1.0;
                hist_sum_[idx] += res;
            }
        }
        for (int f = 0; f < n_features; ++f) {
            const auto n_bins =
                static_cast<int>(bins_.boundaries[static_cast<std::size_t>(f)].size()) + 1;
            if (n_bins < 2) {
                continue;
            }
            const std::size_t offset = static_cast<std::size_t>(f) * stride;
            double left_count = 0.0;
            double left_sum = 0.0;
            for (int b = 0; b + 1 < n_bins; ++b) {
                left_count += hist_count_[offset + static_cast<std::size_t>(b)];
                left_sum += hist_sum_[offset + static_cast<std::size_t>(b)];
                const double right_count = total_count - left_count;
                if (left_count < params_.min_samples_leaf ||
                    right_count < params_.min_samples_leaf) {
                    continue;
                }
                const double right_sum = total_sum - left_sum;
                const double score =
                    left_sum * left_sum / left_count + right_sum * right_sum / right_count;
                if (score > baseline + 1e-12 && (!best.found || score > best.score)) {
                    best.found = true;
                    best.feature = f;
                    best.bin = b;
                    best.score = score;
                }
            }
        }
        return best;
    }

    const BinnedMatrix& binned_;
    const BinMap& bins_;
    const Eigen::VectorXd& residuals_;
    const GBDTParams& params_;
    Tree tree_;
    std::vector<double> hist_count_;
    std::vector<double> hist_sum_;
};

}  // namespace

void GBDTParams::validate() const {
    if (n_trees < 0) throw std::invalid_argument("n_trees must be >= 0");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) {
        throw std::invalid_argument("learning_rate must be in (0, 1]");
    }
    if (max_depth < 1) throw std::invalid_argument("max_depth must be >= 1");
    if (min_samples_leaf < 1) throw std::invalid_argument("min_samples_leaf must be >= 1");
    if (max_bins < 2) throw std::invalid_argument("max_bins must be >= 2");
    if (!(subsample > 0.0 && subsample <= 1.0)) {
        throw std::invalid_argument("subsample must be in (0, 1]");
    }
}

double Tree::predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    int node = 0;
    while (!nodes[static_cast<std::size_t>(node)].is_leaf) {
        const TreeNode& n = nodes[static_cast<std::size_t>(node)];
        node = row[n.feature] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(node)].value;
}

Eigen::VectorXd GBDTModel::predict(const Eigen::Ref<const Eigen::MatrixXd>& features) const {
    if (features.cols() != n_features) {
        throw std::invalid_argument("feature dimension mismatch");
    }
    Eigen::VectorXd out = Eigen::VectorXd::Constant(features.rows(), base_score);
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        double acc = 0.0;
        for (const Tree& tree : trees) {
            int node = 0;
            while (!tree.nodes[static_cast<std::size_t>(node)].is_leaf) {
                const TreeNode& nd = tree.nodes[static_cast<std::size_t>(node)];
                node = features(i, nd.feature) <= nd.threshold ? nd.left : nd.right;
            }
            acc += tree.nodes[static_cast<std::size_t>(node)].value;
        }
        out[i] += acc;
    }
    return out;
}

namespace {

// Core boosting loop over a pre-binned design; shared by fit() and the
// cross-fitting driver so binning is paid once per feature matrix.
GBDTModel fit_binned(const Eigen::Ref<const Eigen::MatrixXd>& features,
                     const BinnedMatrix& binned, const BinMap& bins,
                     const Eigen::Ref<const Eigen::VectorXd>& targets, const GBDTParams& params) {
    params.validate();
    const Eigen::Index n = features.rows();
    if (targets.size() != n) {
        throw std::invalid_argument("targets size mismatch");
    }
    if (n < 2 * static_cast<Eigen::Index>(params.min_samples_leaf)) {
        throw std::invalid_argument("too few rows to fit");
    }
    if (!targets.allFinite()) {
        throw std::invalid_argument("non-finite input");
    }

    GBDTModel model;
    model.params = params;
    model.n_features = static_cast<int>(features.cols());
    model.base_score = targets.mean();

    Eigen::VectorXd prediction = Eigen::VectorXd::Constant(n, model.base_score);
    Eigen::VectorXd residuals(n);
    std::mt19937_64 rng(splitmix64(params.seed));
    std::bernoulli_distribution keep(params.subsample);
    std::vector<std::uint8_t> in_sample(static_cast<std::size_t>(n), 1);

    model.trees.reserve(static_cast<std::size_t>(params.n_trees));
    for (int m = 0; m < params.n_trees; ++m) {
        residuals = targets - prediction;
        std::vector<int> rows;
        rows.reserve(static_cast<std::size_t>(n));
        bool subsampled = false;
        if (params.subsample < 1.0) {
            std::fill(in_sample.begin(), in_sample.end(), std::uint8_t{0});
            for (Eigen::Index i = 0; i < n; ++i) {
                if (keep(rng)) {
                    rows.push_back(static_cast<int>(i));
                    in_sample[static_cast<std::size_t>(i)] = 1;
                }
            }
            if (rows.size() < 2 * static_cast<std::size_t>(params.min_samples_leaf)) {
                rows.clear();
                for (Eigen::Index i = 0; i < n; ++i) {
                    rows.push_back(static_cast<int>(i));
                }
            } else {
                subsampled = true;
            }
        } else {
            for (Eigen::Index i = 0; i < n; ++i) {
                rows.push_back(static_cast<int>(i));
            }
        }

        TreeBuilder builder(binned, bins, residuals, params);
        Tree tree = builder.build(rows, prediction);
        if (subsampled) {
            // rows left out of the sample still move with the new tree
            for (Eigen::Index i = 0; i < n; ++i) {
                if (in_sample[static_cast<std::size_t>(i)] == 0) {
                    prediction[i] += tree.predict_row(features.row(i));
                }
            }
        }
        model.trees.push_back(std::move(tree));
    }
    return model;
}

}  // namespace

GBDTModel fit(const Eigen::Ref<const Eigen::MatrixXd>& features,
              const Eigen::Ref<const Eigen::VectorXd>& targets, const GBDTParams& params) {
    params.validate();
    if (!features.allFinite()) {
        throw std::invalid_argument("non-finite input");
    }
    const Eigen::Index n = features.rows();
    if (n < 2 * static_cast<Eigen::Index>(params.min_samples_leaf)) {
        throw std::invalid_argument("too few rows to fit");
    }
    const BinMap bins = build_bins(features, params.max_bins);
    BinnedMatrix binned(n, features.cols());
    for (Eigen::Index f = 0; f < features.cols(); ++f) {
        for (Eigen::Index i = 0; i < n; ++i) {
            binned(i, f) = bins.bin(static_cast<int>(f), features(i, f));
        }
    }
    return fit_binned(features, binned, bins, targets, params);
}

int fold_of(std::uint64_t row_index, int folds, std::uint64_t seed) {
    return static_cast<int>(splitmix64(seed ^ (row_index * 0x2545f4914f6cdd1dULL)) %
                            static_cast<std::uint64_t>(folds));
}

Eigen::MatrixXd cross_fit_predict_multi(const Eigen::Ref<const Eigen::MatrixXd>& features,
                                        const Eigen::Ref<const Eigen::MatrixXd>& targets,
                                        const GBDTParams& params, int folds, std::uint64_t seed) {
    if (folds < 2) {
        throw std::invalid_argument("folds must be >= 2");
    }
    const Eigen::Index n = features.rows();
    if (targets.rows() != n) {
        throw std::invalid_argument("targets size mismatch");
    }
    if (!features.allFinite()) {
        throw std::invalid_argument("non-finite input");
    }
    std::vector<int> fold_id(static_cast<std::size_t>(n));
    std::vector<Eigen::Index> fold_size(static_cast<std::size_t>(folds), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int f = fold_of(static_cast<std::uint64_t>(i), folds, seed);
        fold_id[static_cast<std::size_t>(i)] = f;
        ++fold_size[static_cast<std::size_t>(f)];
    }
    for (int f = 0; f < folds; ++f) {
        if (n - fold_size[static_cast<std::size_t>(f)] <
            2 * static_cast<Eigen::Index>(params.min_samples_leaf)) {
            throw std::invalid_argument("too few rows per fold");
        }
    }

    Eigen::MatrixXd out(n, targets.cols());
    for (int f = 0; f < folds; ++f) {
        const Eigen::Index train_n = n - fold_size[static_cast<std::size_t>(f)];
        const Eigen::Index test_n = fold_size[static_cast<std::size_t>(f)];
        Eigen::MatrixXd train_x(train_n, features.cols());
        Eigen::MatrixXd train_y(train_n, targets.cols());
        Eigen::MatrixXd test_x(test_n, features.cols());
        std::vector<Eigen::Index> test_rows;
        test_rows.reserve(static_cast<std::size_t>(test_n));
        Eigen::Index ti = 0;
        Eigen::Index si = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (fold_id[static_cast<std::size_t>(i)] == f) {
                test_x.row(si) = features.row(i);
                test_rows.push_back(i);
                ++si;
            } else {
                train_x.row(ti) = features.row(i);
                train_y.row(ti) = targets.row(i);
                ++ti;
            }
        }
        GBDTParams fold_params = params;
        fold_params.seed = splitmix64(seed ^ static_cast<std::uint64_t>(f + 1));

        const BinMap bins = build_bins(train_x, fold_params.max_bins);
        BinnedMatrix binned(train_n, train_x.cols());
        for (Eigen::Index c = 0; c < train_x.cols(); ++c) {
            for (Eigen::Index i = 0; i < train_n; ++i) {
                binned(i, c) = bins.bin(static_cast<int>(c), train_x(i, c));
            }
        }
        for (Eigen::Index t = 0; t < targets.cols(); ++t) {
            const GBDTModel model =
                fit_binned(train_x, binned, bins, train_y.col(t), fold_params);
            const Eigen::VectorXd pred = model.predict(test_x);
            for (Eigen::Index i = 0; i < test_n; ++i) {
                out(test_rows[static_cast<std::size_t>(i)], t) = pred[i];
            }
        }
    }
    return out;
}

Eigen::VectorXd cross_fit_predict(const Eigen::Ref<const Eigen::MatrixXd>& features,
                                  const Eigen::Ref<const Eigen::VectorXd>& targets,
                                  const GBDTParams& params, int folds, std::uint64_t seed) {
    return cross_fit_predict_multi(features, targets, params, folds, seed).col(0);
}

std::string GBDTModel::to_json() const {
    nlohmann::json j;
    j["schema_version"] = "gbdt-1";
    j["base_score"] = base_score;
    j["n_features"] = n_features;
    j["params"] = {{"n_trees", params.n_trees},
                   {"learning_rate", params.learning_rate},
                   {"max_depth", params.max_depth},
                   {"min_samples_leaf", params.min_samples_leaf},
                   {"max_bins", params.max_bins},
                   {"subsample", params.subsample},
                   {"seed", params.seed}};
    nlohmann::json trees_json = nlohmann::json::array();
    for (const Tree& tree : trees) {
        nlohmann::json nodes_json = nlohmann::json::array();
        for (const TreeNode& node : tree.nodes) {
            nodes_json.push_back({{"leaf", node.is_leaf},
                                  {"f", node.feature},
                                  {"t", node.threshold},
                                  {"l", node.left},
                                  {"r", node.right},
                                  {"v", node.value}});
        }
        trees_json.push_back(std::move(nodes_json));
    }
    j["trees"] = std::move(trees_json);
    return j.dump();
}

GBDTModel GBDTModel::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    if (j.at("schema_version").get<std::string>() != "gbdt-1") {
        throw std::invalid_argument("unknown model schema version");
    }
    GBDTModel model;
    model.base_score = j.at("base_score").get<double>();
    model.n_features = j.at("n_features").get<int>();
    const auto& p = j.at("params");
    model.params.n_trees = p.at("n_trees").get<int>();
    model.params.learning_rate = p.at("learning_rate").get<double>();
    model.params.max_depth = p.at("max_depth").get<int>();
    model.params.min_samples_leaf = p.at("min_samples_leaf").get<int>();
    model.params.max_bins = p.at("max_bins").get<int>();
    model.params.subsample = p.at("subsample").get<double>();
    model.params.seed = p.at("seed").get<std::uint64_t>();
    for (const auto& nodes_json : j.at("trees")) {
        Tree tree;
        for (const auto& nj : nodes_json) {
            TreeNode node;
            node.is_leaf = nj.at("leaf").get<bool>();
            node.feature = nj.at("f").get<int>();
            node.threshold = nj.at("t").get<double>();
            node.left = nj.at("l").get<int>();
            node.right = nj.at("r").get<int>();
            node.value = nj.at("v").get<double>();
            tree.nodes.push_back(node);
        }
        model.trees.push_back(std::move(tree));
    }
    return model;
}

}  // namespace abvr::gbdt
