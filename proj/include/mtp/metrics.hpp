#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mtp::metrics {

// ---------------------------------------------------------------------------
// binary suite

struct BinaryCounts {
    size_t tp = 0, fp = 0, tn = 0, fn = 0;
    size_t n() const { return tp + fp + tn + fn; }
    static BinaryCounts from_predictions(std::span<const int> labels, std::span<const int> preds);
};

// a metric value that may be undefined (zero denominator); undefined values
// are flagged, never coerced to 0
struct MetricValue {
    double value = 0.0;
    bool defined = false;
};

struct BinaryReport {
    MetricValue acc, b_acc, spec, npv, prec, recall, f1;
};

BinaryReport binary_suite(const BinaryCounts& c);

// column order mirrors the reporting tables: Acc, B.Acc, Spec, NPV, Prec, Recall, F1
std::string binary_csv_header();
std::string binary_csv_row(const BinaryReport& r);
std::map<std::string, MetricValue> binary_as_map(const BinaryReport& r);

// Mann-Whitney concordance via tie-averaged rank sum
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// ---------------------------------------------------------------------------
// ordinal suite

struct OrdinalErrors {
    double mae = 0.0;
    double rmse = 0.0;
};

OrdinalErrors ordinal_errors(std::span<const int> true_classes, std::span<const int> pred_classes);

// K x K counts, row = true class, column = predicted class
using ConfusionMatrix = std::vector<std::vector<size_t>>;

ConfusionMatrix confusion_matrix(std::span<const int> true_classes,
                                 std::span<const int> pred_classes, size_t num_classes);

MetricValue kappa_quadratic(const ConfusionMatrix& m);

// Uniform ordinal classification index A_UOC in [0,1], 0 = perfect.
//
// For a K x K confusion matrix M with N samples and gamma = 1:
//   TD        = sum_{r,c} M[r][c] * |r-c|         (total dispersion)
//   cost(r,c) = -M[r][c]/(N + TD) + beta * M[r][c] * |r-c|
//   OC(beta)  = 1 + min over monotone paths from (0,0) to (K-1,K-1)
//               (moves: down, right, diagonal) of the summed path cost
//   beta      = beta' / (N * (K-1))
//   A_UOC     = integral of OC over beta' in [0,1], trapezoidal rule with
//               1000 uniform intervals
//
// Worked 3x3 example, M = [[4,1,0],[1,3,1],[0,2,4]], N = 16, TD = 5:
//   at beta' = 0 the cheapest path is (0,0)->(0,1)->(1,1)->(2,1)->(2,2),
//   collecting mass 14 of 16, so OC(0) = 1 - 14/21 = 1/3; increasing beta'
//   penalizes the dispersion collected by off-diagonal cells. The test suite
//   pins the integral against an exhaustive path-enumeration oracle.
// A diagonal matrix gives A_UOC = 0: the diagonal path collects all N samples
// at zero dispersion, so OC(beta) = 1 - N/(N+0) = 0 for every beta.
double uoc_index(const ConfusionMatrix& m);

// ---------------------------------------------------------------------------
// bootstrap

struct BootstrapCI {
    double point = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    size_t n_resamples = 0;
    size_t undefined_count = 0;  // resamples where the metric was undefined
    double level = 0.95;
};

// Percentile bootstrap over a metric computed on index multisets into the
// caller's sample arrays. The metric is called once on the identity indices
// (point estimate), then once per resample; returning nullopt marks that
// resample undefined (skipped and counted). Resample r draws its indices
// from the fork of `seed` tagged r, so results are deterministic and
// independent of evaluation order.
BootstrapCI bootstrap_ci(size_t n,
                         const std::function<std::optional<double>(const std::vector<size_t>&)>& metric,
                         size_t n_resamples, double level, uint64_t seed);

}  // namespace mtp::metrics
