#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mtp/encoding.hpp"
#include "mtp/rng.hpp"

#include "json.hpp"

// Tabular prognosis models: a CART-style decision tree (Gini impurity) and a
// logistic regression, used to locate the prognostic decision boundaries
// (GCS 8/9, age 80) that parameterize the discretization module.
namespace mtp::tab {

// One subject's tabular data. Feature layout is fixed: feature 0 is the GCS
// score, feature 1 is age, features 2.. are the optional extras.
struct TabularRecord {
    double gcs = 0.0;
    double age = 0.0;
    std::vector<double> extras;
    int label = 0;  // 0 good prognosis, 1 poor
    std::string id;
};

// number of features per record (2 + extras); throws std::invalid_argument on
// empty input or ragged extras
size_t feature_count(const std::vector<TabularRecord>& records);
double feature_value(const TabularRecord& r, size_t feature);
std::string feature_name(size_t feature);  // "gcs", "age", "x0", "x1", ...

// Min-max normalization over the feature columns, keyed by feature name.
enc::NormalizationSpec fit_normalization(const std::vector<TabularRecord>& records);
std::vector<TabularRecord> apply_normalization(const std::vector<TabularRecord>& records,
                                               const enc::NormalizationSpec& spec);

// ---------------------------------------------------------------------------
// decision tree
// ---------------------------------------------------------------------------

struct TreeNode {
    bool is_leaf = true;
    // internal nodes; records with feature value <= threshold go left
    size_t feature = 0;
    double threshold = 0.0;
    int left = -1, right = -1;  // indices into DecisionTree::nodes
    // leaves (class counts kept on every node for inspection)
    int pred = 0;  // majority class; ties predict poor
    size_t count_good = 0, count_poor = 0;
};

struct DecisionTree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root when fitted
    size_t max_depth = 0;         // configured depth limit
    size_t min_leaf = 0;
    // set when the training data held a single class and the tree degenerated
    // to one leaf without splitting
    bool single_class_warning = false;
    bool fitted() const { return !nodes.empty(); }
};

// Greedy Gini-impurity minimization. Split thresholds sit at midpoints of
// adjacent sorted distinct feature values; every candidate must leave at
// least min_leaf records on each side; the winning split is the global
// minimum of the weighted Gini over all (feature, midpoint) candidates with
// ties broken by lowest feature index, then lowest threshold. A node splits
// only if the best candidate strictly decreases impurity. Single-class input
// yields a trivial leaf with single_class_warning set instead of an error.
DecisionTree fit_dtc(const std::vector<TabularRecord>& records, size_t max_depth,
                     size_t min_leaf = 5);

struct Boundary {
    size_t feature = 0;
    double threshold = 0.0;
    bool operator==(const Boundary&) const = default;
};

// Thresholds of the root and its immediate children, ordered by depth then
// feature index (then threshold). Empty for a leaf-only tree.
std::vector<Boundary> extract_boundaries(const DecisionTree& tree);

// JSON serialization: nested node objects under "root"
nlohmann::ordered_json tree_to_json(const DecisionTree& tree);
DecisionTree tree_from_json(const nlohmann::json& j);
void save_tree(const std::filesystem::path& path, const DecisionTree& tree);
DecisionTree load_tree(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// logistic regression
// ---------------------------------------------------------------------------

struct LogisticModel {
    std::vector<double> weights;  // one per feature
    double intercept = 0.0;
    size_t epochs_run = 0;
    double final_loss = 0.0;
    bool fitted() const { return !weights.empty(); }
};

// Mean BCE over the records plus the ridge penalty l2/2 * |w|^2 (the
// intercept is not penalized), with its gradient. Exposed so the training
// loop's gradient can be checked against finite differences.
struct LogisticLossGrad {
    double loss = 0.0;
    std::vector<double> grad_weights;
    double grad_intercept = 0.0;
};
LogisticLossGrad logistic_loss_and_grad(const std::vector<TabularRecord>& records,
                                        const std::vector<double>& weights, double intercept,
                                        double l2);

// Full-batch gradient descent from a zero initialization; stops when the
// loss changes by less than 1e-9 between epochs or the epoch limit is hit.
// Callers pass min-max normalized features. Throws std::runtime_error if the
// loss turns non-finite (divergence).
LogisticModel fit_logistic(const std::vector<TabularRecord>& records, double learning_rate,
                           size_t epochs, double l2);

// ---------------------------------------------------------------------------
// prediction and inspection
// ---------------------------------------------------------------------------

struct TabularPrediction {
    int label = 0;
    double probability = 0.0;  // probability of the poor class (label 1)
};

// DTC: leaf majority class with the leaf's poor-class fraction.
// LR: sigmoid(w.x + b) thresholded at 0.5; the tie predicts poor.
TabularPrediction predict_tabular(const DecisionTree& tree, const TabularRecord& r);
TabularPrediction predict_tabular(const LogisticModel& model, const TabularRecord& r);

// Mean accuracy drop over n_repeats random permutations of one feature
// column, per feature. `predict` is either fitted model wrapped in a lambda.
std::vector<double> permutation_importance(
    const std::function<TabularPrediction(const TabularRecord&)>& predict,
    const std::vector<TabularRecord>& records, Rng& rng, size_t n_repeats = 10);

// ---------------------------------------------------------------------------
// cohort CSV
// ---------------------------------------------------------------------------

// Header: optional "id" column, required "gcs" and "age", optional extra
// numeric columns, and a label column named "label" or "prognosis". Rejects
// malformed rows, non-finite features, labels outside {0,1}, and GCS outside
// [3,15] with std::runtime_error naming the file and line.
std::vector<TabularRecord> load_cohort_csv(const std::filesystem::path& path);
// writes: id,gcs,age[,x0,...],prognosis
void save_cohort_csv(const std::filesystem::path& path,
                     const std::vector<TabularRecord>& records);

}  // namespace mtp::tab
