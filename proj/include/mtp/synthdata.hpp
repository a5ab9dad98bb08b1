#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtp/rng.hpp"
#include "mtp/tabular.hpp"

#include "json.hpp"

// Synthetic cohorts: hemorrhage-like volumetric phantoms plus correlated
// tabular variables with planted decision boundaries (GCS 8/9, age 80), so
// every end-to-end experiment runs without clinical data.
namespace mtp::synth {

// ---------------------------------------------------------------------------
// phantoms
// ---------------------------------------------------------------------------

struct PhantomSpec {
    size_t d = 8, h = 32, w = 32;  // volume extents: slices, rows, columns
    size_t blob_count = 1;
    // in-plane blob radius in voxels at severity 0 and 1; the through-plane
    // semi-axis scales by d/h (at least one voxel)
    double radius_min = 2.0;
    double radius_max = 6.4;
    // peak blob intensity at severity 0 and 1
    double intensity_min = 0.35;
    double intensity_max = 0.85;
    // adds a small central blob, mimicking an intraventricular component
    bool intraventricular = false;
    double noise_std = 0.05;  // Gaussian background noise, clipped with the rest
};

// One volume, layout [d][h][w] with w fastest. Pure in (spec, severity, rng):
// the generator only forks the passed rng, so regeneration is bit-identical.
// Blob centers come from severity-independent forks, which makes total blob
// volume and summed intensity strictly increasing in severity. Values are
// clipped to [0,1]. Throws std::invalid_argument when radius_max cannot fit
// inside the extents.
std::vector<double> generate_phantom(const PhantomSpec& spec, double severity,
                                     const Rng& rng);

// ---------------------------------------------------------------------------
// cohorts
// ---------------------------------------------------------------------------

// Planted decision boundaries: GCS <= gcs_severe_max counts as severe (the
// 8/9 split) and age >= age_cut counts as old (the 80 split).
struct BoundarySpec {
    int gcs_severe_max = 8;
    double age_cut = 80.0;
};

struct CohortConfig {
    size_t n = 64;
    size_t d = 8, h = 32, w = 32;
    uint64_t seed = 1;
    BoundarySpec boundaries;
    // scales the GCS-class sampling noise, the image noise, and the label
    // temperature; 0 makes the prognosis a deterministic threshold
    double noise_level = 1.0;
};

// Label-generating constants for
//   P(poor) = sigmoid((a*s + b*age_bin + c*gcs_severe - d) / noise_level),
// with latent severity s ~ Uniform(0,1). Chosen so that at the default noise
// level the poor fraction sits near the 62% target and the best tabular-only
// classifier reaches roughly 0.75 accuracy, leaving recoverable signal in
// the volumes (which see s directly). Two alignments matter at noise 0,
// where the label becomes the hard threshold a*s + b*age_bin + c*gcs_severe
// >= d and the severe band is exactly s >= 2/3: d = 2a/3 makes the young
// subjects' label flip precisely at the severe boundary, and b > d makes
// every old subject poor, so the zero-noise rule is exactly
// "severe or old" and a depth-2 tree on (gcs, age) recovers it.
inline constexpr double kLabelA = 2.2;
inline constexpr double kLabelB = 1.6;
inline constexpr double kLabelC = 1.6;
inline constexpr double kLabelD = 2.0 * kLabelA / 3.0;  // alignment by construction

// Ratio steering: a cohort draw is accepted when its poor fraction lies
// within kSteerBand of kPoorTarget (162/261); otherwise the generator
// retries with a derived seed, falling back to the first two-class draw
// after the bounded attempts.
inline constexpr double kPoorTarget = 162.0 / 261.0;
inline constexpr double kSteerBand = 0.03;

struct SyntheticCohort {
    CohortConfig config;
    std::vector<tab::TabularRecord> records;   // id, gcs, age, prognosis label
    std::vector<std::vector<double>> volumes;  // one per record, d*h*w doubles
    std::vector<double> severities;            // latent s per subject
    std::vector<int> gcs_classes;              // enc::ordinal_class_gcs(gcs)
    std::vector<int> age_bins;                 // 1 when age >= age_cut
    size_t attempts_used = 1;                  // degenerate-cohort regenerations + 1
    size_t voxels() const { return config.d * config.h * config.w; }
};

// Deterministic in config (subject i draws from fork i of the cohort seed).
// If every prognosis label lands in one class, regenerates with a derived
// seed a bounded number of times, then throws std::runtime_error. Requires
// n >= 20. GCS values stay in [3,15] and integer ages in [30,100]; the poor
// fraction is steered toward ~62% at default noise.
SyntheticCohort generate_cohort(const CohortConfig& config);

// ---------------------------------------------------------------------------
// on-disk layout
// ---------------------------------------------------------------------------

// Writes into `dir`: <id>.raw (little-endian doubles) with <id>.json shape
// sidecars, cohort.csv (id,gcs,age,prognosis), and manifest.json carrying
// the schema version, seed, config, label constants, per-subject latents,
// and FNV-1a checksums of every data file. Returns the manifest.
nlohmann::ordered_json export_cohort(const SyntheticCohort& cohort,
                                     const std::filesystem::path& dir);

// Reloads an exported cohort, verifying the manifest version and every
// checksum; mismatches and missing files raise std::runtime_error naming the
// offending file.
SyntheticCohort load_cohort(const std::filesystem::path& dir);

inline constexpr int kManifestVersion = 1;

}  // namespace mtp::synth
