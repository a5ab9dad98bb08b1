#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

namespace mtp::enc {

// GCS 3..15, age 0..130 years; both validated at every entry point
inline constexpr int kGcsMin = 3;
inline constexpr int kGcsMax = 15;
inline constexpr double kAgeMax = 130.0;

// binary split at the severe boundary: 1 iff gcs <= 8
int binarize_gcs(int gcs);
// three ordered classes: 0 mild (13-15), 1 moderate (9-12), 2 severe (3-8)
int ordinal_class_gcs(int gcs);
// binary split at 80 years: 1 iff age >= 80
int binarize_age(double age);

// cumulative-bit code of length K-1: first `cls` bits set
std::vector<int> encode_ordinal(int cls, int num_classes);

// How to map a (possibly non-monotone) per-bit probability vector back to a
// class. leading_consecutive stops at the first bit below threshold;
// count_ones counts every bit above it. The former is the default, the
// latter is kept for sensitivity checks.
enum class DecodeRule { leading_consecutive, count_ones };

int decode_ordinal(std::span<const double> probs, double threshold = 0.5,
                   DecodeRule rule = DecodeRule::leading_consecutive);

// ---------------------------------------------------------------------------
// min-max normalization fitted on the training split only

struct MinMax {
    double min = 0.0;
    double max = 1.0;
    double apply(double x) const { return (x - min) / (max - min); }
};

MinMax minmax_fit(std::span<const double> train_values);

using NormalizationSpec = std::map<std::string, MinMax>;

std::string normalization_to_json(const NormalizationSpec& spec);
NormalizationSpec normalization_from_json(const std::string& text);
void save_normalization(const std::string& path, const NormalizationSpec& spec);
NormalizationSpec load_normalization(const std::string& path);

}  // namespace mtp::enc
