#include "mtp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mtp/rng.hpp"

namespace mtp::metrics {

BinaryCounts BinaryCounts::from_predictions(std::span<const int> labels,
                                            std::span<const int> preds) {
    if (labels.size() != preds.size())
        throw std::invalid_argument("binary counts: labels/preds length mismatch");
    BinaryCounts c;
    for (size_t i = 0; i < labels.size(); ++i) {
        if ((labels[i] != 0 && labels[i] != 1) || (preds[i] != 0 && preds[i] != 1))
            throw std::invalid_argument("binary counts: labels and predictions must be 0/1");
        if (labels[i] == 1)
            preds[i] == 1 ? ++c.tp : ++c.fn;
        else
            preds[i] == 1 ? ++c.fp : ++c.tn;
    }
    return c;
}

namespace {
MetricValue ratio(size_t num, size_t den) {
    if (den == 0) return {0.0, false};
    return {(double)num / (double)den, true};
}
}  // namespace

BinaryReport binary_suite(const BinaryCounts& c) {
    if (c.n() == 0) throw std::invalid_argument("binary_suite: empty counts");
    BinaryReport r;
    r.acc = ratio(c.tp + c.tn, c.n());
    r.recall = ratio(c.tp, c.tp + c.fn);
    r.spec = ratio(c.tn, c.tn + c.fp);
    r.prec = ratio(c.tp, c.tp + c.fp);
    r.npv = ratio(c.tn, c.tn + c.fn);
    if (r.recall.defined && r.spec.defined)
        r.b_acc = {(r.recall.value + r.spec.value) / 2.0, true};
    if (r.prec.defined && r.recall.defined && r.prec.value + r.recall.value > 0.0)
        r.f1 = {2.0 * r.prec.value * r.recall.value / (r.prec.value + r.recall.value), true};
    return r;
}

std::string binary_csv_header() { return "acc,b_acc,spec,npv,prec,recall,f1"; }

namespace {
void append_metric(std::ostringstream& os, const MetricValue& m, bool first = false) {
    if (!first) os << ",";
    if (m.defined)
        os << m.value;
    else
        os << "NA";
}
}  // namespace

std::string binary_csv_row(const BinaryReport& r) {
    std::ostringstream os;
    os.precision(17);
    append_metric(os, r.acc, true);
    append_metric(os, r.b_acc);
    append_metric(os, r.spec);
    append_metric(os, r.npv);
    append_metric(os, r.prec);
    append_metric(os, r.recall);
    append_metric(os, r.f1);
    return os.str();
}

std::map<std::string, MetricValue> binary_as_map(const BinaryReport& r) {
    return {{"acc", r.acc},   {"b_acc", r.b_acc}, {"spec", r.spec}, {"npv", r.npv},
            {"prec", r.prec}, {"recall", r.recall}, {"f1", r.f1}};
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("roc_auc: scores/labels length mismatch");
    const size_t n = scores.size();
    size_t n_pos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw std::invalid_argument("roc_auc: labels must be 0/1");
        n_pos += (size_t)l;
    }
    const size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("roc_auc: needs both classes present");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // tie-averaged ranks, then the Mann-Whitney identity
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (double)(i + 1 + j);  // ranks are 1-based
        for (size_t t = i; t < j; ++t)
            if (labels[order[t]] == 1) rank_sum_pos += avg_rank;
        i = j;
    }
    const double u = rank_sum_pos - 0.5 * (double)n_pos * (double)(n_pos + 1);
    return u / ((double)n_pos * (double)n_neg);
}

OrdinalErrors ordinal_errors(std::span<const int> true_classes,
                             std::span<const int> pred_classes) {
    if (true_classes.size() != pred_classes.size())
        throw std::invalid_argument("ordinal_errors: length mismatch");
    if (true_classes.empty()) throw std::invalid_argument("ordinal_errors: empty input");
    double abs_sum = 0.0, sq_sum = 0.0;
    for (size_t i = 0; i < true_classes.size(); ++i) {
        const double d = (double)true_classes[i] - (double)pred_classes[i];
        abs_sum += std::abs(d);
        sq_sum += d * d;
    }
    const double n = (double)true_classes.size();
    return {abs_sum / n, std::sqrt(sq_sum / n)};
}

ConfusionMatrix confusion_matrix(std::span<const int> true_classes,
                                 std::span<const int> pred_classes, size_t num_classes) {
    if (true_classes.size() != pred_classes.size())
        throw std::invalid_argument("confusion_matrix: length mismatch");
    ConfusionMatrix m(num_classes, std::vector<size_t>(num_classes, 0));
    for (size_t i = 0; i < true_classes.size(); ++i) {
        const int t = true_classes[i], p = pred_classes[i];
        if (t < 0 || (size_t)t >= num_classes || p < 0 || (size_t)p >= num_classes)
            throw std::invalid_argument("confusion_matrix: class out of range");
        ++m[(size_t)t][(size_t)p];
    }
    return m;
}

MetricValue kappa_quadratic(const ConfusionMatrix& m) {
    const size_t k = m.size();
    if (k == 0) throw std::invalid_argument("kappa_quadratic: empty matrix");
    for (const auto& row : m)
        if (row.size() != k) throw std::invalid_argument("kappa_quadratic: matrix not square");
    size_t n = 0;
    std::vector<size_t> row_sum(k, 0), col_sum(k, 0);
    for (size_t i = 0; i < k; ++i)
        for (size_t j = 0; j < k; ++j) {
            n += m[i][j];
            row_sum[i] += m[i][j];
            col_sum[j] += m[i][j];
        }
    if (n == 0) throw std::invalid_argument("kappa_quadratic: empty counts");
    if (k == 1) return {0.0, false};  // no possible disagreement

    const double denom_w = (double)((k - 1) * (k - 1));
    double observed = 0.0, expected = 0.0;
    for (size_t i = 0; i < k; ++i)
        for (size_t j = 0; j < k; ++j) {
            const double w = (double)((i > j ? i - j : j - i) * (i > j ? i - j : j - i)) / denom_w;
            observed += w * (double)m[i][j] / (double)n;
            expected += w * ((double)row_sum[i] / (double)n) * ((double)col_sum[j] / (double)n);
        }
    if (expected == 0.0) return {0.0, false};
    return {1.0 - observed / expected, true};
}

namespace {
// OC index at one beta: 1 + cheapest monotone-path cost through the cost grid
double oc_at_beta(const ConfusionMatrix& m, double n_plus_td, double beta) {
    const size_t k = m.size();
    std::vector<std::vector<double>> err(k, std::vector<double>(k, 0.0));
    auto cost = [&](size_t r, size_t c) {
        const double dist = (double)(r > c ? r - c : c - r);
        return -(double)m[r][c] / n_plus_td + beta * (double)m[r][c] * dist;
    };
    err[0][0] = 1.0 + cost(0, 0);
    for (size_t c = 1; c < k; ++c) err[0][c] = err[0][c - 1] + cost(0, c);
    for (size_t r = 1; r < k; ++r) {
        err[r][0] = err[r - 1][0] + cost(r, 0);
        for (size_t c = 1; c < k; ++c)
            err[r][c] = std::min({err[r - 1][c], err[r][c - 1], err[r - 1][c - 1]}) + cost(r, c);
    }
    return err[k - 1][k - 1];
}
}  // namespace

double uoc_index(const ConfusionMatrix& m) {
    const size_t k = m.size();
    if (k == 0) throw std::invalid_argument("uoc_index: empty matrix");
    for (const auto& row : m)
        if (row.size() != k) throw std::invalid_argument("uoc_index: matrix not square");
    size_t n = 0;
    double td = 0.0;
    for (size_t r = 0; r < k; ++r)
        for (size_t c = 0; c < k; ++c) {
            n += m[r][c];
            td += (double)m[r][c] * (double)(r > c ? r - c : c - r);
        }
    if (n == 0) throw std::invalid_argument("uoc_index: empty counts");
    if (k == 1) return 0.0;  // single class: trivially perfect

    // A_UOC: trapezoidal mean of OC over beta' in [0,1] with beta scaled by
    // the worst-case dispersion N*(K-1)
    const double n_plus_td = (double)n + td;
    const size_t intervals = 1000;
    double acc = 0.0;
    for (size_t i = 0; i <= intervals; ++i) {
        const double beta_prime = (double)i / (double)intervals;
        const double beta = beta_prime / ((double)n * (double)(k - 1));
        const double oc = oc_at_beta(m, n_plus_td, beta);
        acc += (i == 0 || i == intervals) ? 0.5 * oc : oc;
    }
    return acc / (double)intervals;
}

BootstrapCI bootstrap_ci(
    size_t n, const std::function<std::optional<double>(const std::vector<size_t>&)>& metric,
    size_t n_resamples, double level, uint64_t seed) {
    if (n < 2) throw std::invalid_argument("bootstrap_ci: need n >= 2");
    if (n_resamples < 100) throw std::invalid_argument("bootstrap_ci: need >= 100 resamples");
    if (!(level > 0.0 && level < 1.0))
        throw std::invalid_argument("bootstrap_ci: level must be in (0,1)");

    std::vector<size_t> identity(n);
    std::iota(identity.begin(), identity.end(), 0);
    const auto point = metric(identity);
    if (!point) throw std::runtime_error("bootstrap_ci: metric undefined on the full sample");

    Rng base(seed);
    std::vector<double> values;
    values.reserve(n_resamples);
    size_t undefined = 0;
    std::vector<size_t> idx(n);
    for (size_t r = 0; r < n_resamples; ++r) {
        Rng rr = base.fork(r);  // per-resample stream: order-independent
        for (size_t i = 0; i < n; ++i) idx[i] = (size_t)rr.uniform_index(n);
        const auto v = metric(idx);
        if (v)
            values.push_back(*v);
        else
            ++undefined;
    }
    if (undefined * 2 > n_resamples)
        throw std::runtime_error("bootstrap_ci: metric undefined on more than half the resamples");

    std::sort(values.begin(), values.end());
    auto quantile = [&](double q) {
        const double pos = q * (double)(values.size() - 1);
        const size_t lo = (size_t)pos;
        const size_t hi = std::min(lo + 1, values.size() - 1);
        const double frac = pos - (double)lo;
        return values[lo] * (1.0 - frac) + values[hi] * frac;
    };
    const double alpha = (1.0 - level) / 2.0;
    BootstrapCI ci;
    ci.point = *point;
    ci.lower = quantile(alpha);
    ci.upper = quantile(1.0 - alpha);
    ci.n_resamples = n_resamples;
    ci.undefined_count = undefined;
    ci.level = level;
    return ci;
}

}  // namespace mtp::metrics
