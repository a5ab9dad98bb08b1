#include "mtp/encoding.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace mtp::enc {

namespace {
void check_gcs(int gcs) {
    if (gcs < kGcsMin || gcs > kGcsMax)
        throw std::invalid_argument("GCS out of range [3,15]: " + std::to_string(gcs));
}
void check_age(double age) {
    if (!(age >= 0.0 && age <= kAgeMax))
        throw std::invalid_argument("age out of range [0,130]: " + std::to_string(age));
}
}  // namespace

int binarize_gcs(int gcs) {
    check_gcs(gcs);
    return gcs <= 8 ? 1 : 0;
}

int ordinal_class_gcs(int gcs) {
    check_gcs(gcs);
    if (gcs <= 8) return 2;
    if (gcs <= 12) return 1;
    return 0;
}

int binarize_age(double age) {
    check_age(age);
    return age >= 80.0 ? 1 : 0;
}

std::vector<int> encode_ordinal(int cls, int num_classes) {
    if (num_classes < 1) throw std::invalid_argument("encode_ordinal: K must be >= 1");
    if (cls < 0 || cls >= num_classes)
        throw std::invalid_argument("encode_ordinal: class " + std::to_string(cls) +
                                    " out of range for K=" + std::to_string(num_classes));
    std::vector<int> bits(num_classes - 1, 0);
    for (int i = 0; i < cls; ++i) bits[i] = 1;
    return bits;
}

int decode_ordinal(std::span<const double> probs, double threshold, DecodeRule rule) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw std::invalid_argument("decode_ordinal: threshold must be in (0,1)");
    for (double p : probs)
        if (!(p >= 0.0 && p <= 1.0))
            throw std::invalid_argument("decode_ordinal: probability outside [0,1]");
    int cls = 0;
    if (rule == DecodeRule::leading_consecutive) {
        for (double p : probs) {
            if (p < threshold) break;  // ties at the threshold count as set
            ++cls;
        }
    } else {
        for (double p : probs)
            if (p >= threshold) ++cls;
    }
    return cls;
}

MinMax minmax_fit(std::span<const double> train_values) {
    if (train_values.empty()) throw std::invalid_argument("minmax_fit: empty training values");
    MinMax mm{train_values[0], train_values[0]};
    for (double v : train_values) {
        mm.min = std::min(mm.min, v);
        mm.max = std::max(mm.max, v);
    }
    if (!(mm.max > mm.min))
        throw std::invalid_argument("minmax_fit: degenerate range, max must exceed min");
    return mm;
}

std::string normalization_to_json(const NormalizationSpec& spec) {
    nlohmann::ordered_json j;
    for (const auto& [name, mm] : spec) j[name] = {{"min", mm.min}, {"max", mm.max}};
    return j.dump(2);
}

NormalizationSpec normalization_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    NormalizationSpec spec;
    for (const auto& [name, entry] : j.items())
        spec[name] = MinMax{entry.at("min").get<double>(), entry.at("max").get<double>()};
    return spec;
}

void save_normalization(const std::string& path, const NormalizationSpec& spec) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os << normalization_to_json(spec) << "\n";
    if (!os) throw std::runtime_error("write failed: " + path);
}

NormalizationSpec load_normalization(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return normalization_from_json(ss.str());
}

}  // namespace mtp::enc
