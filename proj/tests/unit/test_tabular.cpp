#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "mtp/rng.hpp"
#include "mtp/tabular.hpp"

using namespace mtp;
using namespace mtp::tab;

namespace {

TabularRecord rec(double gcs, double age, int label) {
    TabularRecord r;
    r.gcs = gcs;
    r.age = age;
    r.label = label;
    return r;
}

// 26 subjects engineered so the optimal depth-2 tree splits age at 79.5 and,
// in the young branch, GCS at 8.5
std::vector<TabularRecord> boundary_cohort() {
    std::vector<TabularRecord> rs;
    // poor outcomes, low GCS, under 80
    for (auto [g, a] : {std::pair{7, 70}, {7, 72}, {8, 74}, {8, 76}, {3, 77}})
        rs.push_back(rec(g, a, 1));
    // good outcomes, high GCS, under 80
    for (auto [g, a] : {std::pair{9, 60}, {13, 62}, {10, 65}, {11, 68}, {11, 69},
                        {9, 71}, {12, 73}, {9, 75}, {10, 78}, {9, 79}})
        rs.push_back(rec(g, a, 0));
    // poor outcomes, 80 and older
    for (auto [g, a] : {std::pair{9, 80}, {10, 81}, {10, 82}, {9, 83}, {11, 84},
                        {11, 85}, {9, 86}, {13, 87}, {12, 88}, {9, 89}, {10, 90}})
        rs.push_back(rec(g, a, 1));
    return rs;
}

// ---------------------------------------------------------------------------
// independent oracles
// ---------------------------------------------------------------------------

double oracle_gini(size_t good, size_t poor) {
    const size_t n = good + poor;
    if (n == 0) return 0.0;
    const double pg = (double)good / (double)n, pp = (double)poor / (double)n;
    return 1.0 - pg * pg - pp * pp;
}

struct OracleSplit {
    bool found = false;
    size_t feature = 0;
    double threshold = 0.0;
    double gini = std::numeric_limits<double>::infinity();
};

// brute force over every (feature, adjacent-distinct-midpoint) candidate,
// recounting each partition from scratch; visits candidates in tie-break
// order (feature ascending, threshold ascending) and keeps strict winners
OracleSplit oracle_best_split(const std::vector<TabularRecord>& records,
                              const std::vector<size_t>& idx, size_t nf, size_t min_leaf) {
    OracleSplit best;
    for (size_t f = 0; f < nf; ++f) {
        std::vector<double> values;
        for (size_t i : idx) values.push_back(feature_value(records[i], f));
        std::sort(values.begin(), values.end());
        values.erase(std::unique(values.begin(), values.end()), values.end());
        for (size_t v = 0; v + 1 < values.size(); ++v) {
            const double thr = 0.5 * (values[v] + values[v + 1]);
            size_t lg = 0, lp = 0, rg = 0, rp = 0;
            for (size_t i : idx) {
                const bool left = feature_value(records[i], f) <= thr;
                if (records[i].label == 0)
                    (left ? lg : rg)++;
                else
                    (left ? lp : rp)++;
            }
            if (lg + lp < min_leaf || rg + rp < min_leaf) continue;
            const size_t n = idx.size();
            const double g = ((double)(lg + lp) * oracle_gini(lg, lp) +
                              (double)(rg + rp) * oracle_gini(rg, rp)) /
                             (double)n;
            if (g < best.gini) {
                best = {true, f, thr, g};
            }
        }
    }
    return best;
}

// walk the fitted tree with each node's training subset reconstructed from
// the splits above it, checking the split choice against the oracle
void verify_tree_node(const DecisionTree& tree, const std::vector<TabularRecord>& records,
                      size_t node_idx, const std::vector<size_t>& idx, size_t depth) {
    const TreeNode& node = tree.nodes[node_idx];
    size_t good = 0, poor = 0;
    for (size_t i : idx) (records[i].label == 0 ? good : poor)++;
    REQUIRE(node.count_good == good);
    REQUIRE(node.count_poor == poor);
    CHECK(node.pred == (poor >= good ? 1 : 0));

    const size_t nf = feature_count(records);
    const auto oracle = oracle_best_split(records, idx, nf, tree.min_leaf);
    const double node_gini = oracle_gini(good, poor);
    if (!node.is_leaf) {
        REQUIRE(depth < tree.max_depth);
        REQUIRE(oracle.found);
        CHECK(node.feature == oracle.feature);
        CHECK(node.threshold == oracle.threshold);
        CHECK(oracle.gini < node_gini);  // strict impurity decrease
        std::vector<size_t> li, ri;
        for (size_t i : idx)
            (feature_value(records[i], node.feature) <= node.threshold ? li : ri).push_back(i);
        REQUIRE(li.size() >= tree.min_leaf);
        REQUIRE(ri.size() >= tree.min_leaf);
        verify_tree_node(tree, records, (size_t)node.left, li, depth + 1);
        verify_tree_node(tree, records, (size_t)node.right, ri, depth + 1);
    } else {
        // a leaf must be justified: pure, at the depth limit, or no candidate
        // strictly improves on the node impurity
        const bool justified = good == 0 || poor == 0 || depth >= tree.max_depth ||
                               !oracle.found || !(oracle.gini < node_gini);
        CHECK(justified);
    }
}

int oracle_traverse(const DecisionTree& tree, size_t node_idx, const TabularRecord& r) {
    const TreeNode& n = tree.nodes[node_idx];
    if (n.is_leaf) return (int)node_idx;
    return feature_value(r, n.feature) <= n.threshold
               ? oracle_traverse(tree, (size_t)n.left, r)
               : oracle_traverse(tree, (size_t)n.right, r);
}

std::vector<TabularRecord> random_cohort(Rng& rng, size_t n, bool correlated_labels,
                                         bool with_extra) {
    std::vector<TabularRecord> rs;
    for (size_t i = 0; i < n; ++i) {
        TabularRecord r;
        r.gcs = (double)(3 + rng.uniform_index(13));
        r.age = rng.uniform(30.0, 100.0);
        if (with_extra) r.extras.push_back(rng.uniform());
        if (correlated_labels) {
            const double z = 0.6 * (8.5 - r.gcs) + 0.08 * (r.age - 80.0);
            r.label = rng.uniform() < 1.0 / (1.0 + std::exp(-z)) ? 1 : 0;
        } else {
            r.label = (int)rng.uniform_index(2);
        }
        rs.push_back(r);
    }
    // both classes present so fit preconditions hold
    rs[0].label = 0;
    rs[1].label = 1;
    return rs;
}

std::filesystem::path temp_file(const std::string& stem) {
    return std::filesystem::temp_directory_path() / stem;
}

}  // namespace

// ---------------------------------------------------------------------------
// decision tree
// ---------------------------------------------------------------------------

TEST_CASE("fit_dtc places the separable boundary at the adjacent-value midpoint") {
    // GCS varies but carries no signal; age separates perfectly between 79 and 80
    std::vector<TabularRecord> rs;
    for (auto [g, a] : {std::pair{9, 70}, {11, 72}, {10, 75}, {12, 79}})
        rs.push_back(rec(g, a, 0));
    for (auto [g, a] : {std::pair{9, 80}, {10, 85}, {13, 90}, {11, 95}})
        rs.push_back(rec(g, a, 1));
    const auto tree = fit_dtc(rs, 1, 1);
    REQUIRE(tree.fitted());
    REQUIRE_FALSE(tree.nodes[0].is_leaf);
    CHECK(tree.nodes[0].feature == 1);
    CHECK(tree.nodes[0].threshold == 79.5);
    CHECK_FALSE(tree.single_class_warning);
    // both leaves are pure
    const auto& l = tree.nodes[(size_t)tree.nodes[0].left];
    const auto& r = tree.nodes[(size_t)tree.nodes[0].right];
    CHECK(l.count_poor == 0);
    CHECK(r.count_good == 0);
}

TEST_CASE("fit_dtc on a single-class cohort degrades to a flagged leaf") {
    std::vector<TabularRecord> rs;
    for (auto [g, a] : {std::pair{9, 70}, {11, 72}, {10, 75}, {12, 79}})
        rs.push_back(rec(g, a, 0));
    const auto tree = fit_dtc(rs, 3, 1);
    REQUIRE(tree.nodes.size() == 1);
    CHECK(tree.nodes[0].is_leaf);
    CHECK(tree.nodes[0].pred == 0);
    CHECK(tree.single_class_warning);
    CHECK(extract_boundaries(tree).empty());
}

TEST_CASE("fit_dtc rejects degenerate input") {
    CHECK_THROWS_AS(fit_dtc({}, 2), std::invalid_argument);
    CHECK_THROWS_AS(fit_dtc({rec(9, 70, 0)}, 2), std::invalid_argument);
    CHECK_THROWS_AS(fit_dtc({rec(9, 70, 0), rec(9, 80, 1)}, 2, 0), std::invalid_argument);
    std::vector<TabularRecord> ragged{rec(9, 70, 0), rec(9, 80, 1)};
    ragged[1].extras.push_back(0.5);
    CHECK_THROWS_AS(fit_dtc(ragged, 2), std::invalid_argument);
    std::vector<TabularRecord> badlabel{rec(9, 70, 0), rec(9, 80, 2)};
    CHECK_THROWS_AS(fit_dtc(badlabel, 2), std::invalid_argument);
}

TEST_CASE("every split in a fitted tree is the exhaustive-enumeration optimum") {
    Rng rng(424242u);
    for (int rep = 0; rep < 10; ++rep) {
        const size_t n = 20 + rng.uniform_index(181);
        auto rs = random_cohort(rng, n, rep % 2 == 0, rep % 3 == 0);
        const auto tree = fit_dtc(rs, 3, 5);
        std::vector<size_t> idx(rs.size());
        std::iota(idx.begin(), idx.end(), 0);
        CAPTURE(rep);
        CAPTURE(n);
        verify_tree_node(tree, rs, 0, idx, 0);
    }
}

TEST_CASE("training accuracy is non-decreasing in max_depth") {
    Rng rng(99u);
    const auto rs = random_cohort(rng, 150, true, false);
    double prev = -1.0;
    for (size_t depth = 0; depth <= 5; ++depth) {
        const auto tree = fit_dtc(rs, depth, 5);
        size_t hits = 0;
        for (const auto& r : rs) hits += (size_t)(predict_tabular(tree, r).label == r.label);
        const double acc = (double)hits / (double)rs.size();
        CAPTURE(depth);
        CHECK(acc >= prev);
        prev = acc;
    }
}

TEST_CASE("planted cohort recovers the GCS 8/9 and age 80 boundaries") {
    const auto rs = boundary_cohort();
    const auto tree = fit_dtc(rs, 2, 5);
    const auto bounds = extract_boundaries(tree);
    REQUIRE(bounds.size() == 2);
    CHECK(bounds[0] == Boundary{1, 79.5});  // root: age
    CHECK(bounds[1] == Boundary{0, 8.5});   // child: GCS
}

TEST_CASE("extract_boundaries orders children by feature and skips leaves") {
    // leaf-only tree
    std::vector<TabularRecord> rs{rec(9, 70, 0), rec(10, 80, 1)};
    const auto leaf_tree = fit_dtc(rs, 0, 1);
    CHECK(extract_boundaries(leaf_tree).empty());
    CHECK_THROWS_AS(extract_boundaries(DecisionTree{}), std::runtime_error);

    // hand-built: root splits age, both children split gcs
    DecisionTree t;
    t.nodes.resize(7);
    t.nodes[0] = {false, 1, 79.5, 1, 2, 0, 10, 10};
    t.nodes[1] = {false, 0, 8.5, 3, 4, 0, 6, 4};
    t.nodes[2] = {false, 0, 10.5, 5, 6, 1, 4, 6};
    t.nodes[3] = {true, 0, 0, -1, -1, 1, 1, 4};
    t.nodes[4] = {true, 0, 0, -1, -1, 0, 5, 0};
    t.nodes[5] = {true, 0, 0, -1, -1, 1, 0, 4};
    t.nodes[6] = {true, 0, 0, -1, -1, 0, 4, 2};
    const auto bounds = extract_boundaries(t);
    REQUIRE(bounds.size() == 3);
    CHECK(bounds[0] == Boundary{1, 79.5});
    CHECK(bounds[1] == Boundary{0, 8.5});
    CHECK(bounds[2] == Boundary{0, 10.5});
}

TEST_CASE("tree predictions agree with recursive traversal on random records") {
    Rng rng(7u);
    auto rs = random_cohort(rng, 120, true, false);
    const auto tree = fit_dtc(rs, 3, 5);
    for (int i = 0; i < 100; ++i) {
        const auto probe = rec((double)(3 + rng.uniform_index(13)), rng.uniform(30.0, 100.0),
                               0);
        const auto got = predict_tabular(tree, probe);
        const auto& leaf = tree.nodes[(size_t)oracle_traverse(tree, 0, probe)];
        CHECK(got.label == leaf.pred);
        CHECK(got.probability ==
              (double)leaf.count_poor / (double)(leaf.count_good + leaf.count_poor));
    }
}

TEST_CASE("leaf class fraction is the poor-class share") {
    DecisionTree t;
    TreeNode leaf;
    leaf.is_leaf = true;
    leaf.pred = 1;
    leaf.count_good = 3;
    leaf.count_poor = 9;
    t.nodes.push_back(leaf);
    const auto p = predict_tabular(t, rec(9, 50, 0));
    CHECK(p.label == 1);
    CHECK(p.probability == 0.75);
    CHECK_THROWS_AS(predict_tabular(DecisionTree{}, rec(9, 50, 0)), std::runtime_error);
}

TEST_CASE("tree json round-trips bitwise") {
    const auto rs = boundary_cohort();
    const auto tree = fit_dtc(rs, 2, 5);
    const auto path = temp_file("mtp_tree_roundtrip.json");
    save_tree(path, tree);
    const auto back = load_tree(path);
    REQUIRE(back.nodes.size() == tree.nodes.size());
    CHECK(back.max_depth == tree.max_depth);
    CHECK(back.min_leaf == tree.min_leaf);
    CHECK(back.single_class_warning == tree.single_class_warning);
    for (size_t i = 0; i < tree.nodes.size(); ++i) {
        CAPTURE(i);
        CHECK(back.nodes[i].is_leaf == tree.nodes[i].is_leaf);
        CHECK(back.nodes[i].feature == tree.nodes[i].feature);
        CHECK(back.nodes[i].threshold == tree.nodes[i].threshold);
        CHECK(back.nodes[i].pred == tree.nodes[i].pred);
        CHECK(back.nodes[i].count_good == tree.nodes[i].count_good);
        CHECK(back.nodes[i].count_poor == tree.nodes[i].count_poor);
    }
    // predictions agree everywhere
    Rng rng(3u);
    for (int i = 0; i < 50; ++i) {
        const auto probe =
            rec((double)(3 + rng.uniform_index(13)), rng.uniform(30.0, 100.0), 0);
        CHECK(predict_tabular(back, probe).probability ==
              predict_tabular(tree, probe).probability);
    }
    std::filesystem::remove(path);

    CHECK_THROWS_AS(load_tree(temp_file("mtp_no_such_tree.json")), std::runtime_error);
    const auto bad = temp_file("mtp_bad_tree.json");
    std::ofstream(bad) << "{\"version\": 1, \"oops\": true}";
    CHECK_THROWS_AS(load_tree(bad), std::runtime_error);
    std::filesystem::remove(bad);
}

// ---------------------------------------------------------------------------
// logistic regression
// ---------------------------------------------------------------------------

TEST_CASE("logistic gradient matches central finite differences") {
    Rng rng(31u);
    std::vector<TabularRecord> rs;
    for (int i = 0; i < 12; ++i) {
        TabularRecord r;
        r.gcs = rng.uniform();
        r.age = rng.uniform();
        r.extras.push_back(rng.uniform());
        r.label = (int)rng.uniform_index(2);
        rs.push_back(r);
    }
    std::vector<double> w{0.4, -0.7, 0.2};
    const double b = 0.3, l2 = 0.1, h = 1e-6;
    const auto lg = logistic_loss_and_grad(rs, w, b, l2);
    auto loss_at = [&](const std::vector<double>& ww, double bb) {
        return logistic_loss_and_grad(rs, ww, bb, l2).loss;
    };
    for (size_t f = 0; f < w.size(); ++f) {
        auto wp = w, wm = w;
        wp[f] += h;
        wm[f] -= h;
        const double fd = (loss_at(wp, b) - loss_at(wm, b)) / (2.0 * h);
        CAPTURE(f);
        CHECK(std::abs(fd - lg.grad_weights[f]) / std::max(std::abs(fd), 1e-8) < 1e-6);
    }
    const double fd_b = (loss_at(w, b + h) - loss_at(w, b - h)) / (2.0 * h);
    CHECK(std::abs(fd_b - lg.grad_intercept) / std::max(std::abs(fd_b), 1e-8) < 1e-6);
}

TEST_CASE("zero-initialized logistic loss starts at ln 2") {
    std::vector<TabularRecord> rs;
    for (int i = 0; i < 4; ++i) rs.push_back(rec(5 + i, 40.0 + 10 * i, 0));
    for (int i = 0; i < 4; ++i) rs.push_back(rec(9 + i, 50.0 + 10 * i, 1));
    const auto m = fit_logistic(rs, 0.5, 0, 0.01);
    CHECK(m.epochs_run == 0);
    CHECK(m.final_loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    for (double wv : m.weights) CHECK(wv == 0.0);
    CHECK(m.intercept == 0.0);
    // and a zero model scores exactly 0.5 everywhere, predicting poor
    const auto p = predict_tabular(m, rec(12, 33, 0));
    CHECK(p.probability == 0.5);
    CHECK(p.label == 1);
}

TEST_CASE("logistic regression separates a separable normalized cohort") {
    Rng rng(17u);
    std::vector<TabularRecord> rs;
    for (int i = 0; i < 12; ++i)
        rs.push_back(
            rec((double)(3 + rng.uniform_index(13)), rng.uniform(30.0, 65.0), 0));
    for (int i = 0; i < 12; ++i)
        rs.push_back(
            rec((double)(3 + rng.uniform_index(13)), rng.uniform(85.0, 100.0), 1));
    const auto spec = fit_normalization(rs);
    const auto norm = apply_normalization(rs, spec);
    const auto m = fit_logistic(norm, 1.0, 20000, 0.01);
    size_t hits = 0;
    for (const auto& r : norm) hits += (size_t)(predict_tabular(m, r).label == r.label);
    CHECK(hits == norm.size());
    for (double wv : m.weights) CHECK(std::isfinite(wv));
    CHECK(std::isfinite(m.intercept));
}

TEST_CASE("logistic decision boundary is invariant to a constant feature shift") {
    Rng rng(23u);
    std::vector<TabularRecord> rs;
    for (int i = 0; i < 40; ++i) {
        // integer-valued features keep the shifted normalization bitwise equal
        TabularRecord r;
        r.gcs = (double)(3 + rng.uniform_index(13));
        r.age = (double)(30 + rng.uniform_index(71));
        r.label = r.age >= 75.0 && r.gcs <= 9.0 ? 1 : (int)rng.uniform_index(2);
        rs.push_back(r);
    }
    rs[0].label = 0;
    rs[1].label = 1;
    auto shifted = rs;
    for (auto& r : shifted) {
        r.gcs += 100.0;
        r.age += 100.0;
    }
    const auto norm_a = apply_normalization(rs, fit_normalization(rs));
    const auto norm_b = apply_normalization(shifted, fit_normalization(shifted));
    const auto ma = fit_logistic(norm_a, 0.8, 3000, 0.05);
    const auto mb = fit_logistic(norm_b, 0.8, 3000, 0.05);
    for (size_t i = 0; i < rs.size(); ++i) {
        CHECK(predict_tabular(ma, norm_a[i]).probability ==
              predict_tabular(mb, norm_b[i]).probability);
    }
}

TEST_CASE("logistic divergence raises instead of returning garbage") {
    std::vector<TabularRecord> rs;
    for (int i = 0; i < 6; ++i) rs.push_back(rec(4 + i, 40.0 + 5 * i, 0));
    for (int i = 0; i < 6; ++i) rs.push_back(rec(8 + i, 60.0 + 5 * i, 1));
    const auto spec = fit_normalization(rs);
    const auto norm = apply_normalization(rs, spec);
    CHECK_THROWS_AS(fit_logistic(norm, 1e6, 200, 0.01), std::runtime_error);
}

TEST_CASE("fit_logistic validates input") {
    std::vector<TabularRecord> one_class{rec(9, 70, 0), rec(10, 80, 0)};
    CHECK_THROWS_AS(fit_logistic(one_class, 0.1, 10, 0.0), std::invalid_argument);
    std::vector<TabularRecord> ok{rec(9, 70, 0), rec(10, 80, 1)};
    CHECK_THROWS_AS(fit_logistic(ok, -0.1, 10, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(fit_logistic(ok, 0.1, 10, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(predict_tabular(LogisticModel{}, rec(9, 70, 0)), std::runtime_error);
}

// ---------------------------------------------------------------------------
// permutation importance, normalization plumbing
// ---------------------------------------------------------------------------

TEST_CASE("permutation importance isolates the informative feature") {
    Rng rng(5u);
    std::vector<TabularRecord> rs;
    for (int i = 0; i < 60; ++i) {
        TabularRecord r;
        r.gcs = (double)(3 + rng.uniform_index(13));  // pure noise
        r.age = rng.uniform(30.0, 100.0);
        r.label = r.age > 75.0 ? 1 : 0;
        rs.push_back(r);
    }
    rs[0].label = 1 - rs[0].label;  // both classes guaranteed, tiny label noise
    const auto tree = fit_dtc(rs, 1, 5);
    Rng perm_rng(6u);
    const auto imp = permutation_importance(
        [&](const TabularRecord& r) { return predict_tabular(tree, r); }, rs, perm_rng, 10);
    REQUIRE(imp.size() == 2);
    CHECK(imp[1] > 0.2);               // shuffling age destroys the signal
    CHECK(std::abs(imp[0]) < 1e-12);   // depth-1 tree never consults GCS
}

TEST_CASE("normalization spec round-trips through feature names") {
    const auto rs = boundary_cohort();
    const auto spec = fit_normalization(rs);
    REQUIRE(spec.count("gcs") == 1);
    REQUIRE(spec.count("age") == 1);
    CHECK(spec.at("gcs").min == 3.0);
    CHECK(spec.at("gcs").max == 13.0);
    CHECK(spec.at("age").min == 60.0);
    CHECK(spec.at("age").max == 90.0);
    const auto norm = apply_normalization(rs, spec);
    for (const auto& r : norm) {
        CHECK(r.gcs >= 0.0);
        CHECK(r.gcs <= 1.0);
        CHECK(r.age >= 0.0);
        CHECK(r.age <= 1.0);
    }
    // missing feature in the spec is an error
    enc::NormalizationSpec incomplete;
    incomplete["gcs"] = spec.at("gcs");
    CHECK_THROWS_AS(apply_normalization(rs, incomplete), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// cohort CSV
// ---------------------------------------------------------------------------

TEST_CASE("cohort csv round-trips ids, features, extras, and labels") {
    std::vector<TabularRecord> rs;
    Rng rng(13u);
    for (int i = 0; i < 25; ++i) {
        TabularRecord r;
        r.id = "subj" + std::to_string(i);
        r.gcs = (double)(3 + rng.uniform_index(13));
        r.age = rng.uniform(30.0, 100.0);
        r.extras.push_back(rng.uniform());
        r.label = (int)rng.uniform_index(2);
        rs.push_back(r);
    }
    const auto path = temp_file("mtp_cohort_roundtrip.csv");
    save_cohort_csv(path, rs);
    const auto back = load_cohort_csv(path);
    REQUIRE(back.size() == rs.size());
    for (size_t i = 0; i < rs.size(); ++i) {
        CAPTURE(i);
        CHECK(back[i].id == rs[i].id);
        CHECK(back[i].gcs == rs[i].gcs);
        CHECK(back[i].age == rs[i].age);
        REQUIRE(back[i].extras.size() == 1);
        CHECK(back[i].extras[0] == rs[i].extras[0]);
        CHECK(back[i].label == rs[i].label);
    }
    std::filesystem::remove(path);
}

TEST_CASE("cohort csv accepts label or prognosis headers and CRLF endings") {
    const auto path = temp_file("mtp_cohort_crlf.csv");
    std::ofstream(path) << "gcs,age,label\r\n9,70,0\r\n7,85,1\r\n";
    const auto rs = load_cohort_csv(path);
    REQUIRE(rs.size() == 2);
    CHECK(rs[0].gcs == 9.0);
    CHECK(rs[1].label == 1);
    CHECK(rs[0].id.empty());
    std::filesystem::remove(path);
}

TEST_CASE("cohort csv rejects malformed content with the file and line") {
    const auto path = temp_file("mtp_cohort_bad.csv");
    auto write_and_expect_throw = [&](const std::string& content) {
        std::ofstream(path) << content;
        CHECK_THROWS_AS(load_cohort_csv(path), std::runtime_error);
    };
    write_and_expect_throw("gcs,age\n9,70\n");                 // no label column
    write_and_expect_throw("gcs,age,label\n9,70\n");           // short row
    write_and_expect_throw("gcs,age,label\n9,abc,0\n");        // bad number
    write_and_expect_throw("gcs,age,label\n9,70,2\n");         // bad label
    write_and_expect_throw("gcs,age,label\n2,70,0\n");         // gcs below range
    write_and_expect_throw("gcs,age,label\n9.5,70,0\n");       // non-integer gcs
    write_and_expect_throw("gcs,age,label\n9,inf,0\n");        // non-finite age
    write_and_expect_throw("gcs,age,label\n");                 // no data rows
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_cohort_csv(temp_file("mtp_cohort_missing.csv")),
                    std::runtime_error);

    // line number appears in the message
    std::ofstream(path) << "gcs,age,label\n9,70,0\n9,70,7\n";
    try {
        load_cohort_csv(path);
        FAIL("expected a parse error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find(":3") != std::string::npos);
    }
    std::filesystem::remove(path);
}
