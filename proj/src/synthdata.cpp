#include "mtp/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mtp/binio.hpp"
#include "mtp/encoding.hpp"
#include "mtp/nn.hpp"

namespace mtp::synth {

// ---------------------------------------------------------------------------
// phantoms
// ---------------------------------------------------------------------------

namespace {

struct Blob {
    double cz, cy, cx;  // center
    double az, ay, ax;  // semi-axes
    double peak;
};

void render_blob(std::vector<double>& vol, const PhantomSpec& s, const Blob& b) {
    // quadratic falloff inside the ellipsoid, zero outside
    const long z_lo = std::max(0l, (long)std::floor(b.cz - b.az));
    const long z_hi = std::min((long)s.d - 1, (long)std::ceil(b.cz + b.az));
    const long y_lo = std::max(0l, (long)std::floor(b.cy - b.ay));
    const long y_hi = std::min((long)s.h - 1, (long)std::ceil(b.cy + b.ay));
    const long x_lo = std::max(0l, (long)std::floor(b.cx - b.ax));
    const long x_hi = std::min((long)s.w - 1, (long)std::ceil(b.cx + b.ax));
    for (long z = z_lo; z <= z_hi; ++z)
        for (long y = y_lo; y <= y_hi; ++y)
            for (long x = x_lo; x <= x_hi; ++x) {
                const double dz = ((double)z - b.cz) / b.az;
                const double dy = ((double)y - b.cy) / b.ay;
                const double dx = ((double)x - b.cx) / b.ax;
                const double rho2 = dz * dz + dy * dy + dx * dx;
                if (rho2 < 1.0)
                    vol[(size_t)((z * (long)s.h + y) * (long)s.w + x)] +=
                        b.peak * (1.0 - rho2);
            }
}

double z_axis_of(const PhantomSpec& s, double radius) {
    return std::max(1.0, radius * (double)s.d / (double)s.h);
}

double center_in(Rng& rng, double semi_axis, size_t extent) {
    const double lo = semi_axis, hi = (double)extent - 1.0 - semi_axis;
    return lo + rng.uniform() * (hi - lo);
}

}  // namespace

std::vector<double> generate_phantom(const PhantomSpec& spec, double severity,
                                     const Rng& rng) {
    if (spec.d == 0 || spec.h == 0 || spec.w == 0)
        throw std::invalid_argument("generate_phantom: zero extent");
    if (!(severity >= 0.0 && severity <= 1.0))
        throw std::invalid_argument("generate_phantom: severity must lie in [0,1]");
    if (!(spec.radius_min > 0.0) || spec.radius_max < spec.radius_min)
        throw std::invalid_argument("generate_phantom: bad radius range");
    if (spec.blob_count == 0)
        throw std::invalid_argument("generate_phantom: blob_count must be positive");
    // the largest blob must fit regardless of severity
    const double az_max = z_axis_of(spec, spec.radius_max);
    if (2.0 * az_max > (double)spec.d - 1.0 || 2.0 * spec.radius_max > (double)spec.h - 1.0 ||
        2.0 * spec.radius_max > (double)spec.w - 1.0)
        throw std::invalid_argument("generate_phantom: radius range cannot fit the extents");

    const double r = spec.radius_min + severity * (spec.radius_max - spec.radius_min);
    const double peak =
        spec.intensity_min + severity * (spec.intensity_max - spec.intensity_min);

    std::vector<double> vol(spec.d * spec.h * spec.w, 0.0);
    for (size_t b = 0; b < spec.blob_count; ++b) {
        // severity-independent center stream: higher severity strictly
        // enlarges each blob in place
        Rng crng = rng.fork(100 + b);
        Blob blob;
        blob.az = z_axis_of(spec, r);
        blob.ay = blob.ax = r;
        blob.cz = center_in(crng, z_axis_of(spec, spec.radius_max), spec.d);
        blob.cy = center_in(crng, spec.radius_max, spec.h);
        blob.cx = center_in(crng, spec.radius_max, spec.w);
        blob.peak = peak;
        render_blob(vol, spec, blob);
    }
    if (spec.intraventricular) {
        Rng crng = rng.fork(200);
        Blob blob;
        blob.ax = blob.ay = std::max(1.2, 0.35 * r);
        blob.az = std::max(1.0, blob.ax * (double)spec.d / (double)spec.h);
        blob.cz = 0.5 * (double)(spec.d - 1) + (crng.uniform() - 0.5);
        blob.cy = 0.5 * (double)(spec.h - 1) + 3.0 * (crng.uniform() - 0.5);
        blob.cx = 0.5 * (double)(spec.w - 1) + 3.0 * (crng.uniform() - 0.5);
        blob.peak = peak;
        render_blob(vol, spec, blob);
    }
    if (spec.noise_std > 0.0) {
        Rng nrng = rng.fork(1);
        for (auto& v : vol) v += spec.noise_std * nrng.normal();
    }
    for (auto& v : vol) v = std::clamp(v, 0.0, 1.0);
    return vol;
}

// ---------------------------------------------------------------------------
// cohorts
// ---------------------------------------------------------------------------

namespace {

PhantomSpec phantom_spec_for(const CohortConfig& c) {
    PhantomSpec s;
    s.d = c.d;
    s.h = c.h;
    s.w = c.w;
    const double m = (double)std::min(c.h, c.w);
    s.radius_min = std::max(1.2, 0.07 * m);
    s.radius_max = std::max(s.radius_min, 0.20 * m);
    s.noise_std = 0.05 * c.noise_level;
    return s;
}

struct SubjectDraw {
    tab::TabularRecord record;
    double severity;
};

SubjectDraw draw_subject(const CohortConfig& c, const PhantomSpec& base_spec, Rng& srng,
                         size_t index) {
    SubjectDraw out;
    const double s = srng.uniform();
    out.severity = s;

    // age: a mixture straddling the cut, rounded to whole years in [30,100]
    const bool old_component = srng.uniform() < 0.35;
    const double mean = old_component ? c.boundaries.age_cut + 6.0 : c.boundaries.age_cut - 16.0;
    const double sd = old_component ? 5.0 : 9.0;
    double age = std::round(mean + sd * srng.normal());
    age = std::clamp(age, 30.0, 100.0);

    // GCS: the ordinal band is a noisy monotone function of severity, the
    // value uniform inside its band
    const double u = s + 0.12 * c.noise_level * srng.normal();
    int gcs_lo, gcs_hi;
    if (u >= 2.0 / 3.0) {  // severe band
        gcs_lo = enc::kGcsMin;
        gcs_hi = c.boundaries.gcs_severe_max;
    } else if (u >= 1.0 / 3.0) {  // moderate band
        gcs_lo = c.boundaries.gcs_severe_max + 1;
        gcs_hi = 12;
    } else {  // mild band
        gcs_lo = 13;
        gcs_hi = enc::kGcsMax;
    }
    gcs_lo = std::clamp(gcs_lo, enc::kGcsMin, enc::kGcsMax);
    gcs_hi = std::clamp(gcs_hi, gcs_lo, enc::kGcsMax);
    const int gcs = gcs_lo + (int)srng.uniform_index((uint64_t)(gcs_hi - gcs_lo + 1));

    const int age_bin = age >= c.boundaries.age_cut ? 1 : 0;
    const int gcs_severe = gcs <= c.boundaries.gcs_severe_max ? 1 : 0;
    const double z =
        kLabelA * s + kLabelB * (double)age_bin + kLabelC * (double)gcs_severe - kLabelD;
    int label;
    if (c.noise_level == 0.0) {
        label = z >= 0.0 ? 1 : 0;  // deterministic threshold
    } else {
        const double p = nn::sigmoid_value(z / c.noise_level);
        label = srng.uniform() < p ? 1 : 0;
    }

    out.record.gcs = (double)gcs;
    out.record.age = age;
    out.record.label = label;
    out.record.id = "s" + std::to_string(index);
    return out;
}

// Volumes are rendered only for the accepted draw. Each subject's phantom
// stream is forked from its scalar stream by a fixed tag, so rendering after
// acceptance yields exactly the volume an inline render would have produced.
void render_volumes(SyntheticCohort& cohort, const PhantomSpec& base_spec, uint64_t eff_seed) {
    Rng root(eff_seed);
    cohort.volumes.resize(cohort.records.size());
    for (size_t i = 0; i < cohort.records.size(); ++i) {
        PhantomSpec spec = base_spec;
        spec.intraventricular = cohort.severities[i] > 0.7;
        cohort.volumes[i] = generate_phantom(spec, cohort.severities[i], root.fork(i).fork(1000));
    }
}

}  // namespace

SyntheticCohort generate_cohort(const CohortConfig& config) {
    if (config.n < 20) throw std::invalid_argument("generate_cohort: need n >= 20");
    if (config.noise_level < 0.0)
        throw std::invalid_argument("generate_cohort: negative noise level");
    if (config.boundaries.gcs_severe_max < enc::kGcsMin ||
        config.boundaries.gcs_severe_max >= enc::kGcsMax)
        throw std::invalid_argument("generate_cohort: gcs_severe_max outside [3,14]");
    const PhantomSpec base_spec = phantom_spec_for(config);

    constexpr size_t kMaxAttempts = 8;
    SyntheticCohort fallback;
    uint64_t fallback_seed = 0;
    bool have_fallback = false;
    for (size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
        // derived seed per regeneration attempt; attempt 0 uses the seed as-is
        const uint64_t eff_seed = config.seed + attempt * 0x9E3779B97F4A7C15ull;
        Rng root(eff_seed);
        SyntheticCohort cohort;
        cohort.config = config;
        cohort.attempts_used = attempt + 1;
        size_t poor = 0;
        for (size_t i = 0; i < config.n; ++i) {
            Rng srng = root.fork(i);
            auto subject = draw_subject(config, base_spec, srng, i);
            poor += (size_t)subject.record.label;
            cohort.severities.push_back(subject.severity);
            cohort.gcs_classes.push_back(enc::ordinal_class_gcs((int)subject.record.gcs));
            cohort.age_bins.push_back(subject.record.age >= config.boundaries.age_cut ? 1 : 0);
            cohort.records.push_back(std::move(subject.record));
        }
        if (poor == 0 || poor == config.n) continue;  // degenerate: retry
        const double frac = (double)poor / (double)config.n;
        if (std::abs(frac - kPoorTarget) <= kSteerBand) {
            render_volumes(cohort, base_spec, eff_seed);
            return cohort;
        }
        // Two classes present but the ratio drifted: keep as best effort and
        // retry in hope of a draw nearer the target composition.
        if (!have_fallback) {
            fallback = std::move(cohort);
            fallback_seed = eff_seed;
            have_fallback = true;
        }
    }
    if (have_fallback) {
        render_volumes(fallback, base_spec, fallback_seed);
        return fallback;
    }
    throw std::runtime_error(
        "generate_cohort: degenerate single-class cohort after bounded retries");
}

// ---------------------------------------------------------------------------
// on-disk layout
// ---------------------------------------------------------------------------

namespace {

std::string hex64(uint64_t v) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << v;
    return os.str();
}

uint64_t file_checksum(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for checksum: " + p.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string bytes = buf.str();
    return binio::fnv1a64(bytes.data(), bytes.size());
}

void write_volume(const std::filesystem::path& raw_path, const std::vector<double>& vol) {
    std::ofstream out(raw_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for write: " + raw_path.string());
    binio::write_doubles(out, vol);
    if (!out) throw std::runtime_error("write failed: " + raw_path.string());
}

}  // namespace

nlohmann::ordered_json export_cohort(const SyntheticCohort& cohort,
                                     const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto& c = cohort.config;

    nlohmann::ordered_json manifest;
    manifest["schema_version"] = kManifestVersion;
    manifest["seed"] = c.seed;
    manifest["n"] = c.n;
    manifest["extents"] = {c.d, c.h, c.w};
    manifest["noise_level"] = c.noise_level;
    manifest["boundaries"] = {{"gcs_severe_max", c.boundaries.gcs_severe_max},
                              {"age_cut", c.boundaries.age_cut}};
    manifest["label_constants"] = {
        {"a", kLabelA}, {"b", kLabelB}, {"c", kLabelC}, {"d", kLabelD}};
    manifest["attempts_used"] = cohort.attempts_used;

    const auto csv_path = dir / "cohort.csv";
    tab::save_cohort_csv(csv_path, cohort.records);
    manifest["files"] = nlohmann::ordered_json::object();
    manifest["files"]["cohort.csv"] = hex64(file_checksum(csv_path));

    manifest["subjects"] = nlohmann::ordered_json::array();
    for (size_t i = 0; i < cohort.records.size(); ++i) {
        const std::string& id = cohort.records[i].id;
        const std::string raw_name = id + ".raw";
        write_volume(dir / raw_name, cohort.volumes[i]);

        nlohmann::ordered_json sidecar;
        sidecar["shape"] = {c.d, c.h, c.w};
        sidecar["order"] = "dhw";
        sidecar["dtype"] = "f64le";
        std::ofstream sc(dir / (id + ".json"));
        sc << sidecar.dump(2) << "\n";
        if (!sc) throw std::runtime_error("write failed: " + (dir / (id + ".json")).string());

        nlohmann::ordered_json subject;
        subject["id"] = id;
        subject["severity"] = cohort.severities[i];
        subject["gcs_class"] = cohort.gcs_classes[i];
        subject["age_bin"] = cohort.age_bins[i];
        subject["volume"] = raw_name;
        subject["checksum"] = hex64(file_checksum(dir / raw_name));
        manifest["subjects"].push_back(std::move(subject));
    }

    std::ofstream mf(dir / "manifest.json");
    if (!mf) throw std::runtime_error("cannot open for write: " +
                                      (dir / "manifest.json").string());
    mf << manifest.dump(2) << "\n";
    if (!mf) throw std::runtime_error("write failed: " + (dir / "manifest.json").string());
    return manifest;
}

SyntheticCohort load_cohort(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream mf(manifest_path);
    if (!mf) throw std::runtime_error("cannot open: " + manifest_path.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mf);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("manifest parse error: " + manifest_path.string() + ": " +
                                 e.what());
    }
    try {
        if (manifest.at("schema_version").get<int>() != kManifestVersion)
            throw std::runtime_error("unsupported cohort manifest version in " +
                                     manifest_path.string());

        SyntheticCohort cohort;
        cohort.config.seed = manifest.at("seed").get<uint64_t>();
        cohort.config.n = manifest.at("n").get<size_t>();
        const auto& ext = manifest.at("extents");
        cohort.config.d = ext.at(0).get<size_t>();
        cohort.config.h = ext.at(1).get<size_t>();
        cohort.config.w = ext.at(2).get<size_t>();
        cohort.config.noise_level = manifest.at("noise_level").get<double>();
        cohort.config.boundaries.gcs_severe_max =
            manifest.at("boundaries").at("gcs_severe_max").get<int>();
        cohort.config.boundaries.age_cut = manifest.at("boundaries").at("age_cut").get<double>();
        cohort.attempts_used = manifest.at("attempts_used").get<size_t>();

        const auto csv_path = dir / "cohort.csv";
        const std::string want_csv = manifest.at("files").at("cohort.csv").get<std::string>();
        if (hex64(file_checksum(csv_path)) != want_csv)
            throw std::runtime_error("checksum mismatch: " + csv_path.string());
        cohort.records = tab::load_cohort_csv(csv_path);
        if (cohort.records.size() != cohort.config.n)
            throw std::runtime_error("cohort.csv row count disagrees with manifest in " +
                                     dir.string());

        const size_t voxels = cohort.voxels();
        size_t i = 0;
        for (const auto& subject : manifest.at("subjects")) {
            if (i >= cohort.records.size())
                throw std::runtime_error("manifest lists more subjects than cohort.csv in " +
                                         dir.string());
            const std::string id = subject.at("id").get<std::string>();
            if (id != cohort.records[i].id)
                throw std::runtime_error("manifest/cohort.csv id mismatch at row " +
                                         std::to_string(i) + " in " + dir.string());
            const auto raw_path = dir / subject.at("volume").get<std::string>();
            const std::string want = subject.at("checksum").get<std::string>();
            if (hex64(file_checksum(raw_path)) != want)
                throw std::runtime_error("checksum mismatch: " + raw_path.string());
            std::ifstream raw(raw_path, std::ios::binary);
            if (!raw) throw std::runtime_error("cannot open: " + raw_path.string());
            cohort.volumes.push_back(binio::read_doubles(raw, voxels, "volume file"));
            raw.peek();
            if (!raw.eof())
                throw std::runtime_error("volume file larger than declared shape: " +
                                         raw_path.string());
            cohort.severities.push_back(subject.at("severity").get<double>());
            cohort.gcs_classes.push_back(subject.at("gcs_class").get<int>());
            cohort.age_bins.push_back(subject.at("age_bin").get<int>());
            ++i;
        }
        if (i != cohort.records.size())
            throw std::runtime_error("manifest lists fewer subjects than cohort.csv in " +
                                     dir.string());
        return cohort;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("manifest field error: " + manifest_path.string() + ": " +
                                 e.what());
    }
}

}  // namespace mtp::synth
