#include "mtp/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mtp/nn.hpp"

namespace mtp::tab {

namespace {

void check_cohort(const std::vector<TabularRecord>& records) {
    if (records.empty()) throw std::invalid_argument("tabular: empty cohort");
    const size_t extras = records[0].extras.size();
    for (const auto& r : records) {
        if (r.extras.size() != extras)
            throw std::invalid_argument("tabular: ragged extra-feature columns");
        if (r.label != 0 && r.label != 1)
            throw std::invalid_argument("tabular: label must be 0 or 1");
        for (size_t f = 0; f < 2 + extras; ++f)
            if (!std::isfinite(feature_value(r, f)))
                throw std::invalid_argument("tabular: non-finite feature value");
    }
}

}  // namespace

size_t feature_count(const std::vector<TabularRecord>& records) {
    check_cohort(records);
    return 2 + records[0].extras.size();
}

double feature_value(const TabularRecord& r, size_t feature) {
    if (feature == 0) return r.gcs;
    if (feature == 1) return r.age;
    if (feature - 2 >= r.extras.size())
        throw std::invalid_argument("tabular: feature index out of range");
    return r.extras[feature - 2];
}

std::string feature_name(size_t feature) {
    if (feature == 0) return "gcs";
    if (feature == 1) return "age";
    return "x" + std::to_string(feature - 2);
}

enc::NormalizationSpec fit_normalization(const std::vector<TabularRecord>& records) {
    const size_t nf = feature_count(records);
    enc::NormalizationSpec spec;
    std::vector<double> column(records.size());
    for (size_t f = 0; f < nf; ++f) {
        for (size_t i = 0; i < records.size(); ++i)
            column[i] = feature_value(records[i], f);
        spec[feature_name(f)] = enc::minmax_fit(column);
    }
    return spec;
}

std::vector<TabularRecord> apply_normalization(const std::vector<TabularRecord>& records,
                                               const enc::NormalizationSpec& spec) {
    const size_t nf = feature_count(records);
    auto range_for = [&](size_t f) -> const enc::MinMax& {
        const auto it = spec.find(feature_name(f));
        if (it == spec.end())
            throw std::invalid_argument("tabular: normalization spec missing feature " +
                                        feature_name(f));
        return it->second;
    };
    std::vector<TabularRecord> out = records;
    for (auto& r : out) {
        r.gcs = range_for(0).apply(r.gcs);
        r.age = range_for(1).apply(r.age);
        for (size_t e = 0; e < r.extras.size(); ++e)
            r.extras[e] = range_for(2 + e).apply(r.extras[e]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// decision tree
// ---------------------------------------------------------------------------

namespace {

struct SplitChoice {
    bool found = false;
    size_t feature = 0;
    double threshold = 0.0;
    double gini = std::numeric_limits<double>::infinity();
};

double gini_of(size_t good, size_t poor) {
    const size_t n = good + poor;
    if (n == 0) return 0.0;
    const double pg = (double)good / (double)n, pp = (double)poor / (double)n;
    return 1.0 - pg * pg - pp * pp;
}

// global minimum of the weighted Gini over (feature, midpoint) candidates;
// ties keep the lowest feature index, then the lowest threshold (the scan
// visits candidates in exactly that order and only accepts strict
// improvements)
SplitChoice best_split(const std::vector<TabularRecord>& records,
                       const std::vector<size_t>& idx, size_t nf, size_t min_leaf) {
    SplitChoice best;
    const size_t n = idx.size();
    if (n < 2 * min_leaf || n < 2) return best;
    std::vector<size_t> order(idx);
    for (size_t f = 0; f < nf; ++f) {
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            return feature_value(records[a], f) < feature_value(records[b], f);
        });
        size_t left_good = 0, left_poor = 0, total_good = 0, total_poor = 0;
        for (size_t i : order) (records[i].label == 0 ? total_good : total_poor)++;
        for (size_t i = 0; i + 1 < n; ++i) {
            (records[order[i]].label == 0 ? left_good : left_poor)++;
            const double v = feature_value(records[order[i]], f);
            const double next = feature_value(records[order[i + 1]], f);
            if (v == next) continue;  // not a boundary between distinct values
            const size_t nl = i + 1, nr = n - nl;
            if (nl < min_leaf || nr < min_leaf) continue;
            const double g =
                ((double)nl * gini_of(left_good, left_poor) +
                 (double)nr * gini_of(total_good - left_good, total_poor - left_poor)) /
                (double)n;
            if (g < best.gini) {
                best.found = true;
                best.feature = f;
                best.threshold = 0.5 * (v + next);
                best.gini = g;
            }
        }
    }
    return best;
}

struct TreeBuilder {
    const std::vector<TabularRecord>& records;
    size_t nf, max_depth, min_leaf;
    std::vector<TreeNode> nodes;

    int build(std::vector<size_t>& idx, size_t depth) {
        TreeNode node;
        size_t good = 0, poor = 0;
        for (size_t i : idx) (records[i].label == 0 ? good : poor)++;
        node.count_good = good;
        node.count_poor = poor;
        node.pred = poor >= good ? 1 : 0;  // tie predicts poor

        const double node_gini = gini_of(good, poor);
        if (depth < max_depth && good > 0 && poor > 0) {
            const auto split = best_split(records, idx, nf, min_leaf);
            if (split.found && split.gini < node_gini) {
                std::vector<size_t> li, ri;
                for (size_t i : idx)
                    (feature_value(records[i], split.feature) <= split.threshold ? li : ri)
                        .push_back(i);
                node.is_leaf = false;
                node.feature = split.feature;
                node.threshold = split.threshold;
                const int self = (int)nodes.size();
                nodes.push_back(node);
                nodes[(size_t)self].left = build(li, depth + 1);
                nodes[(size_t)self].right = build(ri, depth + 1);
                return self;
            }
        }
        const int self = (int)nodes.size();
        nodes.push_back(node);
        return self;
    }
};

}  // namespace

DecisionTree fit_dtc(const std::vector<TabularRecord>& records, size_t max_depth,
                     size_t min_leaf) {
    if (records.size() < 2) throw std::invalid_argument("fit_dtc: need at least 2 records");
    if (min_leaf == 0) throw std::invalid_argument("fit_dtc: min_leaf must be positive");
    const size_t nf = feature_count(records);

    DecisionTree tree;
    tree.max_depth = max_depth;
    tree.min_leaf = min_leaf;

    std::vector<size_t> idx(records.size());
    std::iota(idx.begin(), idx.end(), 0);
    size_t poor = 0;
    for (const auto& r : records) poor += (size_t)r.label;
    tree.single_class_warning = (poor == 0 || poor == records.size());

    TreeBuilder builder{records, nf, tree.single_class_warning ? 0 : max_depth, min_leaf, {}};
    builder.build(idx, 0);
    tree.nodes = std::move(builder.nodes);
    return tree;
}

std::vector<Boundary> extract_boundaries(const DecisionTree& tree) {
    if (!tree.fitted()) throw std::runtime_error("extract_boundaries: unfitted tree");
    std::vector<Boundary> out;
    const TreeNode& root = tree.nodes[0];
    if (root.is_leaf) return out;
    out.push_back({root.feature, root.threshold});
    std::vector<Boundary> children;
    for (int child : {root.left, root.right}) {
        const TreeNode& c = tree.nodes[(size_t)child];
        if (!c.is_leaf) children.push_back({c.feature, c.threshold});
    }
    std::sort(children.begin(), children.end(), [](const Boundary& a, const Boundary& b) {
        return a.feature != b.feature ? a.feature < b.feature : a.threshold < b.threshold;
    });
    out.insert(out.end(), children.begin(), children.end());
    return out;
}

namespace {

nlohmann::ordered_json node_to_json(const DecisionTree& tree, size_t i) {
    const TreeNode& n = tree.nodes[i];
    nlohmann::ordered_json j;
    if (n.is_leaf) {
        j["kind"] = "leaf";
    } else {
        j["kind"] = "split";
        j["feature"] = n.feature;
        j["feature_name"] = feature_name(n.feature);
        j["threshold"] = n.threshold;
    }
    j["pred"] = n.pred;
    j["count_good"] = n.count_good;
    j["count_poor"] = n.count_poor;
    if (!n.is_leaf) {
        j["left"] = node_to_json(tree, (size_t)n.left);
        j["right"] = node_to_json(tree, (size_t)n.right);
    }
    return j;
}

int node_from_json(const nlohmann::json& j, DecisionTree& tree, size_t depth) {
    if (depth > 64) throw std::runtime_error("tree json: nesting too deep");
    TreeNode n;
    const std::string kind = j.at("kind").get<std::string>();
    n.pred = j.at("pred").get<int>();
    n.count_good = j.at("count_good").get<size_t>();
    n.count_poor = j.at("count_poor").get<size_t>();
    if (kind == "split") {
        n.is_leaf = false;
        n.feature = j.at("feature").get<size_t>();
        n.threshold = j.at("threshold").get<double>();
    } else if (kind != "leaf") {
        throw std::runtime_error("tree json: unknown node kind '" + kind + "'");
    }
    const int self = (int)tree.nodes.size();
    tree.nodes.push_back(n);
    if (!n.is_leaf) {
        tree.nodes[(size_t)self].left = node_from_json(j.at("left"), tree, depth + 1);
        tree.nodes[(size_t)self].right = node_from_json(j.at("right"), tree, depth + 1);
    }
    return self;
}

}  // namespace

nlohmann::ordered_json tree_to_json(const DecisionTree& tree) {
    if (!tree.fitted()) throw std::runtime_error("tree_to_json: unfitted tree");
    nlohmann::ordered_json j;
    j["version"] = 1;
    j["max_depth"] = tree.max_depth;
    j["min_leaf"] = tree.min_leaf;
    j["single_class_warning"] = tree.single_class_warning;
    j["root"] = node_to_json(tree, 0);
    return j;
}

DecisionTree tree_from_json(const nlohmann::json& j) {
    DecisionTree tree;
    if (j.at("version").get<int>() != 1)
        throw std::runtime_error("tree json: unsupported version");
    tree.max_depth = j.at("max_depth").get<size_t>();
    tree.min_leaf = j.at("min_leaf").get<size_t>();
    tree.single_class_warning = j.at("single_class_warning").get<bool>();
    node_from_json(j.at("root"), tree, 0);
    return tree;
}

void save_tree(const std::filesystem::path& path, const DecisionTree& tree) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_tree: cannot open " + path.string());
    out << tree_to_json(tree).dump(2) << "\n";
    if (!out) throw std::runtime_error("save_tree: write failed for " + path.string());
}

DecisionTree load_tree(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_tree: cannot open " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_tree: " + path.string() + ": " + e.what());
    }
    try {
        return tree_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_tree: " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// logistic regression
// ---------------------------------------------------------------------------

LogisticLossGrad logistic_loss_and_grad(const std::vector<TabularRecord>& records,
                                        const std::vector<double>& weights, double intercept,
                                        double l2) {
    const size_t nf = feature_count(records);
    if (weights.size() != nf)
        throw std::invalid_argument("logistic_loss_and_grad: weight/feature count mismatch");
    const size_t n = records.size();
    LogisticLossGrad out;
    out.grad_weights.assign(nf, 0.0);
    for (const auto& r : records) {
        double z = intercept;
        for (size_t f = 0; f < nf; ++f) z += weights[f] * feature_value(r, f);
        const double t = (double)r.label;
        out.loss += nn::bce_with_logits_value(z, t);
        const double resid = nn::sigmoid_value(z) - t;
        for (size_t f = 0; f < nf; ++f) out.grad_weights[f] += resid * feature_value(r, f);
        out.grad_intercept += resid;
    }
    out.loss /= (double)n;
    out.grad_intercept /= (double)n;
    double w2 = 0.0;
    for (size_t f = 0; f < nf; ++f) {
        out.grad_weights[f] = out.grad_weights[f] / (double)n + l2 * weights[f];
        w2 += weights[f] * weights[f];
    }
    out.loss += 0.5 * l2 * w2;
    return out;
}

LogisticModel fit_logistic(const std::vector<TabularRecord>& records, double learning_rate,
                           size_t epochs, double l2) {
    const size_t nf = feature_count(records);
    size_t poor = 0;
    for (const auto& r : records) poor += (size_t)r.label;
    if (poor == 0 || poor == records.size())
        throw std::invalid_argument("fit_logistic: both classes must be present");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("fit_logistic: learning_rate <= 0");
    if (l2 < 0.0) throw std::invalid_argument("fit_logistic: negative l2");

    LogisticModel m;
    m.weights.assign(nf, 0.0);
    auto lg = logistic_loss_and_grad(records, m.weights, m.intercept, l2);
    m.final_loss = lg.loss;
    for (size_t e = 0; e < epochs; ++e) {
        for (size_t f = 0; f < nf; ++f) m.weights[f] -= learning_rate * lg.grad_weights[f];
        m.intercept -= learning_rate * lg.grad_intercept;
        lg = logistic_loss_and_grad(records, m.weights, m.intercept, l2);
        ++m.epochs_run;
        if (!std::isfinite(lg.loss))
            throw std::runtime_error("fit_logistic: loss diverged to non-finite");
        const double prev = m.final_loss;
        m.final_loss = lg.loss;
        if (std::abs(prev - lg.loss) < 1e-9) break;  // converged
    }
    return m;
}

// ---------------------------------------------------------------------------
// prediction and inspection
// ---------------------------------------------------------------------------

TabularPrediction predict_tabular(const DecisionTree& tree, const TabularRecord& r) {
    if (!tree.fitted()) throw std::runtime_error("predict_tabular: unfitted tree");
    size_t i = 0;
    while (!tree.nodes[i].is_leaf) {
        const TreeNode& n = tree.nodes[i];
        i = (size_t)(feature_value(r, n.feature) <= n.threshold ? n.left : n.right);
    }
    const TreeNode& leaf = tree.nodes[i];
    const size_t n = leaf.count_good + leaf.count_poor;
    TabularPrediction p;
    p.label = leaf.pred;
    p.probability = n == 0 ? 0.5 : (double)leaf.count_poor / (double)n;
    return p;
}

TabularPrediction predict_tabular(const LogisticModel& model, const TabularRecord& r) {
    if (!model.fitted()) throw std::runtime_error("predict_tabular: unfitted model");
    double z = model.intercept;
    for (size_t f = 0; f < model.weights.size(); ++f)
        z += model.weights[f] * feature_value(r, f);
    TabularPrediction p;
    p.probability = nn::sigmoid_value(z);
    p.label = p.probability >= 0.5 ? 1 : 0;
    return p;
}

std::vector<double> permutation_importance(
    const std::function<TabularPrediction(const TabularRecord&)>& predict,
    const std::vector<TabularRecord>& records, Rng& rng, size_t n_repeats) {
    const size_t nf = feature_count(records);
    if (n_repeats == 0) throw std::invalid_argument("permutation_importance: n_repeats == 0");
    const size_t n = records.size();
    auto accuracy = [&](const std::vector<TabularRecord>& rs) {
        size_t hits = 0;
        for (const auto& r : rs) hits += (size_t)(predict(r).label == r.label);
        return (double)hits / (double)n;
    };
    const double base = accuracy(records);
    std::vector<double> importance(nf, 0.0);
    for (size_t f = 0; f < nf; ++f) {
        double drop_sum = 0.0;
        for (size_t rep = 0; rep < n_repeats; ++rep) {
            std::vector<TabularRecord> shuffled = records;
            // Fisher-Yates over the one feature column
            for (size_t i = n - 1; i > 0; --i) {
                const size_t j = (size_t)rng.uniform_index(i + 1);
                double vi = feature_value(shuffled[i], f);
                double vj = feature_value(shuffled[j], f);
                auto set = [&](TabularRecord& r, double v) {
                    if (f == 0)
                        r.gcs = v;
                    else if (f == 1)
                        r.age = v;
                    else
                        r.extras[f - 2] = v;
                };
                set(shuffled[i], vj);
                set(shuffled[j], vi);
            }
            drop_sum += base - accuracy(shuffled);
        }
        importance[f] = drop_sum / (double)n_repeats;
    }
    return importance;
}

// ---------------------------------------------------------------------------
// cohort CSV
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

double parse_number(const std::string& s, const std::string& where) {
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error(where + ": malformed number '" + s + "'");
    }
}

}  // namespace

std::vector<TabularRecord> load_cohort_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_cohort_csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw std::runtime_error("load_cohort_csv: empty file " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();

    const auto header = split_csv_line(line);
    int id_col = -1, gcs_col = -1, age_col = -1, label_col = -1;
    std::vector<size_t> extra_cols;
    for (size_t c = 0; c < header.size(); ++c) {
        const std::string& h = header[c];
        if (h == "id")
            id_col = (int)c;
        else if (h == "gcs")
            gcs_col = (int)c;
        else if (h == "age")
            age_col = (int)c;
        else if (h == "label" || h == "prognosis")
            label_col = (int)c;
        else
            extra_cols.push_back(c);
    }
    if (gcs_col < 0 || age_col < 0 || label_col < 0)
        throw std::runtime_error("load_cohort_csv: " + path.string() +
                                 ": header must declare gcs, age, and label/prognosis");

    std::vector<TabularRecord> records;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        const std::string where =
            "load_cohort_csv: " + path.string() + ":" + std::to_string(line_no);
        if (cells.size() != header.size())
            throw std::runtime_error(where + ": expected " + std::to_string(header.size()) +
                                     " cells, got " + std::to_string(cells.size()));
        TabularRecord r;
        if (id_col >= 0) r.id = cells[(size_t)id_col];
        r.gcs = parse_number(cells[(size_t)gcs_col], where);
        r.age = parse_number(cells[(size_t)age_col], where);
        const double label = parse_number(cells[(size_t)label_col], where);
        if (label != 0.0 && label != 1.0)
            throw std::runtime_error(where + ": label must be 0 or 1");
        r.label = (int)label;
        if (r.gcs < (double)enc::kGcsMin || r.gcs > (double)enc::kGcsMax ||
            r.gcs != std::floor(r.gcs))
            throw std::runtime_error(where + ": gcs must be an integer in [3,15]");
        if (!std::isfinite(r.age)) throw std::runtime_error(where + ": non-finite age");
        for (size_t c : extra_cols) {
            const double v = parse_number(cells[c], where);
            if (!std::isfinite(v)) throw std::runtime_error(where + ": non-finite feature");
            r.extras.push_back(v);
        }
        records.push_back(std::move(r));
    }
    if (records.empty())
        throw std::runtime_error("load_cohort_csv: no data rows in " + path.string());
    return records;
}

void save_cohort_csv(const std::filesystem::path& path,
                     const std::vector<TabularRecord>& records) {
    const size_t nf = feature_count(records);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_cohort_csv: cannot open " + path.string());
    out << "id,gcs,age";
    for (size_t f = 2; f < nf; ++f) out << "," << feature_name(f);
    out << ",prognosis\n";
    out.precision(17);
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        out << (r.id.empty() ? "s" + std::to_string(i) : r.id);
        out << "," << r.gcs << "," << r.age;
        for (double v : r.extras) out << "," << v;
        out << "," << r.label << "\n";
    }
    if (!out) throw std::runtime_error("save_cohort_csv: write failed for " + path.string());
}

}  // namespace mtp::tab
