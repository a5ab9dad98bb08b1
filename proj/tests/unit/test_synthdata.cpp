// Tests for the synthetic cohort generator: phantom rendering, label
// construction against the planted boundaries, ratio steering, and the
// on-disk export format. Oracles are independent recomputations: the
// zero-noise label rule is recomputed from the published constants, volume
// ordering is checked by rank statistics, and round-trips must be bitwise.

#include "mtp/encoding.hpp"
#include "mtp/rng.hpp"
#include "mtp/synthdata.hpp"
#include "mtp/tabular.hpp"

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

using namespace mtp;
using namespace mtp::synth;

namespace {

double volume_sum(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0);
}

size_t count_nonzero(const std::vector<double>& v) {
    return (size_t)std::count_if(v.begin(), v.end(), [](double x) { return x != 0.0; });
}

// Spearman rank correlation with average ranks for ties; independent of the
// library's metric code so volume/label ordering checks have their own oracle.
double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](size_t x, size_t y) { return v[x] < v[y]; });
        std::vector<double> r(v.size());
        size_t i = 0;
        while (i < idx.size()) {
            size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * (double)(i + j) + 1.0;
            for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    const double n = (double)a.size();
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double num = 0.0, da = 0.0, db = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    return num / std::sqrt(da * db);
}

std::filesystem::path temp_dir(const std::string& stem) {
    const auto p = std::filesystem::temp_directory_path() / stem;
    std::filesystem::remove_all(p);
    return p;
}

// flip one byte in the middle of a file
void corrupt_file(const std::filesystem::path& p) {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    REQUIRE(f.good());
    f.seekg(0, std::ios::end);
    const auto size = f.tellg();
    REQUIRE(size > 0);
    f.seekg((std::streamoff)size / 2);
    char c = 0;
    f.read(&c, 1);
    c = (char)(c ^ 0x5a);
    f.seekp((std::streamoff)size / 2);
    f.write(&c, 1);
}

}  // namespace

// ---------------------------------------------------------------------------
// phantom rendering
// ---------------------------------------------------------------------------

TEST_CASE("generate_phantom total intensity grows strictly with severity") {
    PhantomSpec spec;
    spec.noise_std = 0.0;  // isolate the deterministic geometry
    const Rng rng(42);
    double prev = -1.0;
    for (double s : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        const auto vol = generate_phantom(spec, s, rng);
        const double total = volume_sum(vol);
        CAPTURE(s);
        CHECK(total > prev);
        prev = total;
    }
}

TEST_CASE("generate_phantom support stays compact at low severity and expands at high") {
    PhantomSpec spec;
    spec.noise_std = 0.0;
    const Rng rng(7);
    const auto lo = generate_phantom(spec, 0.0, rng);
    const auto hi = generate_phantom(spec, 1.0, rng);
    // severity 0 blob radius is radius_min = 2.24 at the 32x32x8 default, so
    // its support fits in a (2r+1)^2 x (2r_z+1) box of at most ~108 voxels
    CHECK(count_nonzero(lo) <= 150);
    // severity 1 blob is an ellipsoid of semi-axes (6.4, 6.4, 1.6): ~270
    // interior voxels
    CHECK(count_nonzero(hi) >= 200);
    CHECK(count_nonzero(hi) > count_nonzero(lo));
}

TEST_CASE("generate_phantom is deterministic in the rng seed") {
    PhantomSpec spec;
    const Rng rng(123);
    const auto a = generate_phantom(spec, 0.6, rng);
    const auto b = generate_phantom(spec, 0.6, rng);
    CHECK(a == b);  // bitwise: same seed, same volume
    const auto c = generate_phantom(spec, 0.6, rng.fork(1));
    CHECK(a != c);
}

TEST_CASE("generate_phantom clamps all voxels to [0,1] under heavy noise") {
    PhantomSpec spec;
    spec.noise_std = 5.0;
    const auto vol = generate_phantom(spec, 0.9, Rng(3));
    for (double v : vol) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }
    // heavy noise must actually touch both clamp rails somewhere
    CHECK(*std::min_element(vol.begin(), vol.end()) == 0.0);
    CHECK(*std::max_element(vol.begin(), vol.end()) == 1.0);
}

TEST_CASE("generate_phantom rejects invalid specs") {
    const Rng rng(1);
    PhantomSpec big;
    big.radius_max = 40.0;  // cannot fit inside a 32-voxel extent
    CHECK_THROWS_AS(generate_phantom(big, 0.5, rng), std::invalid_argument);

    PhantomSpec spec;
    CHECK_THROWS_AS(generate_phantom(spec, -0.1, rng), std::invalid_argument);
    CHECK_THROWS_AS(generate_phantom(spec, 1.1, rng), std::invalid_argument);

    PhantomSpec zero;
    zero.d = 0;
    CHECK_THROWS_AS(generate_phantom(zero, 0.5, rng), std::invalid_argument);

    PhantomSpec none;
    none.blob_count = 0;
    CHECK_THROWS_AS(generate_phantom(none, 0.5, rng), std::invalid_argument);

    PhantomSpec inverted;
    inverted.radius_min = 5.0;
    inverted.radius_max = 2.0;
    CHECK_THROWS_AS(generate_phantom(inverted, 0.5, rng), std::invalid_argument);
}

TEST_CASE("intraventricular flag adds mass concentrated in the central region") {
    PhantomSpec plain;
    plain.noise_std = 0.0;
    PhantomSpec ivh = plain;
    ivh.intraventricular = true;
    const Rng rng(19);
    const auto a = generate_phantom(plain, 0.9, rng);
    const auto b = generate_phantom(ivh, 0.9, rng);
    CHECK(volume_sum(b) > volume_sum(a));

    // the extra blob sits at the volume center (+- small jitter), so all the
    // added mass falls inside the middle half of each axis
    double central_gain = 0.0, outer_gain = 0.0;
    for (size_t z = 0; z < plain.d; ++z)
        for (size_t y = 0; y < plain.h; ++y)
            for (size_t x = 0; x < plain.w; ++x) {
                const size_t i = (z * plain.h + y) * plain.w + x;
                const double gain = b[i] - a[i];
                const bool central = z >= plain.d / 4 && z < 3 * plain.d / 4 &&
                                     y >= plain.h / 4 && y < 3 * plain.h / 4 &&
                                     x >= plain.w / 4 && x < 3 * plain.w / 4;
                (central ? central_gain : outer_gain) += gain;
            }
    CHECK(central_gain > 0.0);
    CHECK(outer_gain == 0.0);
}

// ---------------------------------------------------------------------------
// cohort generation
// ---------------------------------------------------------------------------

TEST_CASE("generate_cohort satisfies the clinical range invariants") {
    CohortConfig cfg;
    cfg.n = 64;
    cfg.seed = 11;
    const auto cohort = generate_cohort(cfg);
    REQUIRE(cohort.records.size() == 64);
    REQUIRE(cohort.volumes.size() == 64);
    REQUIRE(cohort.severities.size() == 64);
    REQUIRE(cohort.gcs_classes.size() == 64);
    REQUIRE(cohort.age_bins.size() == 64);

    std::set<std::string> ids;
    size_t poor = 0;
    for (size_t i = 0; i < 64; ++i) {
        const auto& r = cohort.records[i];
        CAPTURE(i);
        // GCS and age are whole-valued and inside their clinical ranges
        CHECK(r.gcs == std::floor(r.gcs));
        CHECK(r.gcs >= 3.0);
        CHECK(r.gcs <= 15.0);
        CHECK(r.age == std::floor(r.age));
        CHECK(r.age >= 30.0);
        CHECK(r.age <= 100.0);
        CHECK(r.extras.empty());
        ids.insert(r.id);
        poor += (size_t)r.label;

        CHECK(cohort.gcs_classes[i] == enc::ordinal_class_gcs((int)r.gcs));
        CHECK(cohort.age_bins[i] == (r.age >= cfg.boundaries.age_cut ? 1 : 0));
        CHECK(cohort.severities[i] >= 0.0);
        CHECK(cohort.severities[i] < 1.0);

        REQUIRE(cohort.volumes[i].size() == cohort.voxels());
        for (double v : cohort.volumes[i]) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
    }
    CHECK(ids.size() == 64);         // unique ids
    CHECK(cohort.records[0].id == "s0");
    CHECK(cohort.records[63].id == "s63");
    CHECK(poor > 0);                 // both outcomes present
    CHECK(poor < 64);
}

TEST_CASE("generate_cohort is deterministic in the seed and sensitive to it") {
    CohortConfig cfg;
    cfg.n = 24;
    cfg.seed = 5;
    cfg.d = 4;
    cfg.h = 8;
    cfg.w = 8;
    const auto a = generate_cohort(cfg);
    const auto b = generate_cohort(cfg);
    REQUIRE(a.records.size() == b.records.size());
    for (size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].gcs == b.records[i].gcs);
        CHECK(a.records[i].age == b.records[i].age);
        CHECK(a.records[i].label == b.records[i].label);
        CHECK(a.volumes[i] == b.volumes[i]);  // bitwise
        CHECK(a.severities[i] == b.severities[i]);
    }
    cfg.seed = 6;
    const auto c = generate_cohort(cfg);
    bool any_diff = false;
    for (size_t i = 0; i < a.records.size() && !any_diff; ++i)
        any_diff = a.records[i].gcs != c.records[i].gcs || a.records[i].age != c.records[i].age ||
                   a.volumes[i] != c.volumes[i];
    CHECK(any_diff);
}

TEST_CASE("cohort class ratio lands within 5% of the 99/162 composition") {
    for (uint64_t seed : {1, 2, 3}) {
        CohortConfig cfg;
        cfg.n = 261;
        cfg.seed = seed;
        const auto cohort = generate_cohort(cfg);
        size_t poor = 0;
        for (const auto& r : cohort.records) poor += (size_t)r.label;
        const double frac = (double)poor / 261.0;
        CAPTURE(seed);
        CAPTURE(frac);
        CHECK(std::abs(frac - 162.0 / 261.0) <= 0.05);
    }
}

TEST_CASE("ratio steering retries out-of-band draws deterministically") {
    // scanned constants: at n = 20 this seed's first draw misses the band and
    // the second lands inside it
    CohortConfig cfg;
    cfg.n = 20;
    cfg.seed = 2;
    cfg.d = 4;
    cfg.h = 8;
    cfg.w = 8;
    const auto cohort = generate_cohort(cfg);
    CHECK(cohort.attempts_used == 2);
    size_t poor = 0;
    for (const auto& r : cohort.records) poor += (size_t)r.label;
    CHECK(std::abs((double)poor / 20.0 - kPoorTarget) <= kSteerBand);
}

TEST_CASE("ratio steering falls back to the first two-class draw when no attempt lands") {
    // scanned constants: every attempt for this seed misses the band, so the
    // generator returns its first two-class draw as a best effort
    CohortConfig cfg;
    cfg.n = 20;
    cfg.seed = 3;
    cfg.d = 4;
    cfg.h = 8;
    cfg.w = 8;
    const auto cohort = generate_cohort(cfg);
    CHECK(cohort.attempts_used == 1);
    size_t poor = 0;
    for (const auto& r : cohort.records) poor += (size_t)r.label;
    CHECK(poor > 0);
    CHECK(poor < 20);
    CHECK(std::abs((double)poor / 20.0 - kPoorTarget) > kSteerBand);
}

TEST_CASE("first draw is accepted at the reference size") {
    CohortConfig cfg;
    cfg.n = 261;
    cfg.seed = 1;
    const auto cohort = generate_cohort(cfg);
    CHECK(cohort.attempts_used == 1);
}

TEST_CASE("zero noise makes the label exactly the planted severe-or-old rule") {
    CohortConfig cfg;
    cfg.n = 200;
    cfg.seed = 7;
    cfg.noise_level = 0.0;
    const auto cohort = generate_cohort(cfg);
    for (size_t i = 0; i < cfg.n; ++i) {
        // independent restatement of the labels: with zero noise the linear
        // score a*s + b*[age >= cut] + c*[gcs <= severe_max] - d is
        // nonnegative exactly when the subject is severe or old, because
        // d = 2a/3 puts the young flip at the severe band edge and b > d
        // makes age membership sufficient on its own
        const int want = (cohort.gcs_classes[i] == 2 || cohort.age_bins[i] == 1) ? 1 : 0;
        CAPTURE(i);
        CHECK(cohort.records[i].label == want);
    }
}

TEST_CASE("a depth-2 tree recovers the planted boundaries from a zero-noise cohort") {
    CohortConfig cfg;
    cfg.n = 200;
    cfg.seed = 7;
    cfg.noise_level = 0.0;
    const auto cohort = generate_cohort(cfg);
    const auto tree = tab::fit_dtc(cohort.records, 2, 5);
    size_t hits = 0;
    for (const auto& r : cohort.records)
        hits += (size_t)(tab::predict_tabular(tree, r).label == r.label);
    CHECK((double)hits / (double)cfg.n >= 0.95);

    const auto bounds = tab::extract_boundaries(tree);
    const bool has_gcs = std::any_of(bounds.begin(), bounds.end(), [](const tab::Boundary& b) {
        return b.feature == 0 && b.threshold == 8.5;
    });
    const bool has_age = std::any_of(bounds.begin(), bounds.end(), [](const tab::Boundary& b) {
        return b.feature == 1 && b.threshold == 79.5;
    });
    CHECK(has_gcs);
    CHECK(has_age);
}

TEST_CASE("latent severity drives the outcome monotonically") {
    // a logistic fit on (gcs, age, severity) should give severity a positive
    // weight: higher severity means worse prognosis by construction
    int positive = 0;
    const int trials = 20;
    for (int t = 0; t < trials; ++t) {
        CohortConfig cfg;
        cfg.n = 200;
        cfg.seed = (uint64_t)t * 31 + 5;
        const auto cohort = generate_cohort(cfg);
        auto recs = cohort.records;
        for (size_t i = 0; i < recs.size(); ++i) recs[i].extras = {cohort.severities[i]};
        const auto spec = tab::fit_normalization(recs);
        const auto norm = tab::apply_normalization(recs, spec);
        const auto model = tab::fit_logistic(norm, 0.5, 4000, 0.001);
        positive += (int)(model.weights[2] > 0.0);
    }
    CHECK(positive >= 19);
}

TEST_CASE("volume intensity tracks severity and the GCS ordinal") {
    for (uint64_t seed : {11, 12}) {
        CohortConfig cfg;
        cfg.n = 64;
        cfg.seed = seed;
        const auto cohort = generate_cohort(cfg);
        std::vector<double> sums, cls;
        for (size_t i = 0; i < cfg.n; ++i) {
            sums.push_back(volume_sum(cohort.volumes[i]));
            cls.push_back((double)cohort.gcs_classes[i]);
        }
        CAPTURE(seed);
        CHECK(spearman(sums, cohort.severities) > 0.9);
        CHECK(spearman(sums, cls) > 0.5);
    }
}

TEST_CASE("generate_cohort rejects invalid configurations") {
    CohortConfig small;
    small.n = 19;
    CHECK_THROWS_AS(generate_cohort(small), std::invalid_argument);

    CohortConfig neg;
    neg.noise_level = -0.5;
    CHECK_THROWS_AS(generate_cohort(neg), std::invalid_argument);

    CohortConfig low;
    low.boundaries.gcs_severe_max = 2;
    CHECK_THROWS_AS(generate_cohort(low), std::invalid_argument);

    CohortConfig high;
    high.boundaries.gcs_severe_max = 15;
    CHECK_THROWS_AS(generate_cohort(high), std::invalid_argument);
}

TEST_CASE("an unsatisfiable configuration fails after bounded retries") {
    // with the cut at the age floor every subject is old, and with zero noise
    // old implies poor, so every attempt draws a single-class cohort
    CohortConfig cfg;
    cfg.n = 24;
    cfg.seed = 9;
    cfg.d = 4;
    cfg.h = 8;
    cfg.w = 8;
    cfg.noise_level = 0.0;
    cfg.boundaries.age_cut = 30.0;
    CHECK_THROWS_AS(generate_cohort(cfg), std::runtime_error);
}

// ---------------------------------------------------------------------------
// export / load
// ---------------------------------------------------------------------------

namespace {

CohortConfig small_export_config() {
    CohortConfig cfg;
    cfg.n = 20;
    cfg.seed = 31;
    cfg.d = 4;
    cfg.h = 8;
    cfg.w = 8;
    return cfg;
}

}  // namespace

TEST_CASE("export_cohort then load_cohort round-trips bitwise") {
    const auto dir = temp_dir("mtp_synth_roundtrip");
    const auto cohort = generate_cohort(small_export_config());
    export_cohort(cohort, dir);

    REQUIRE(std::filesystem::exists(dir / "manifest.json"));
    REQUIRE(std::filesystem::exists(dir / "cohort.csv"));
    REQUIRE(std::filesystem::exists(dir / "s0.raw"));

    const auto back = load_cohort(dir);
    REQUIRE(back.records.size() == cohort.records.size());
    CHECK(back.config.seed == cohort.config.seed);
    CHECK(back.config.n == cohort.config.n);
    CHECK(back.config.d == cohort.config.d);
    CHECK(back.config.h == cohort.config.h);
    CHECK(back.config.w == cohort.config.w);
    CHECK(back.config.noise_level == cohort.config.noise_level);
    CHECK(back.config.boundaries.gcs_severe_max == cohort.config.boundaries.gcs_severe_max);
    CHECK(back.config.boundaries.age_cut == cohort.config.boundaries.age_cut);
    CHECK(back.attempts_used == cohort.attempts_used);
    for (size_t i = 0; i < cohort.records.size(); ++i) {
        CAPTURE(i);
        CHECK(back.records[i].id == cohort.records[i].id);
        CHECK(back.records[i].gcs == cohort.records[i].gcs);
        CHECK(back.records[i].age == cohort.records[i].age);
        CHECK(back.records[i].label == cohort.records[i].label);
        CHECK(back.volumes[i] == cohort.volumes[i]);  // bitwise through the .raw file
        CHECK(back.severities[i] == cohort.severities[i]);
        CHECK(back.gcs_classes[i] == cohort.gcs_classes[i]);
        CHECK(back.age_bins[i] == cohort.age_bins[i]);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("export stays desk-scale on disk") {
    const auto dir = temp_dir("mtp_synth_size");
    CohortConfig cfg;
    cfg.n = 30;
    cfg.seed = 2;
    const auto cohort = generate_cohort(cfg);  // default 32x32x8 volumes
    export_cohort(cohort, dir);
    uintmax_t total = 0;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
        if (e.is_regular_file()) total += e.file_size();
    CHECK(total < 20u * 1024 * 1024);
    std::filesystem::remove_all(dir);
}

TEST_CASE("load_cohort rejects a tampered volume file") {
    const auto dir = temp_dir("mtp_synth_tamper_raw");
    export_cohort(generate_cohort(small_export_config()), dir);
    corrupt_file(dir / "s3.raw");
    CHECK_THROWS_AS(load_cohort(dir), std::runtime_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("load_cohort rejects a tampered cohort csv") {
    const auto dir = temp_dir("mtp_synth_tamper_csv");
    export_cohort(generate_cohort(small_export_config()), dir);
    corrupt_file(dir / "cohort.csv");
    CHECK_THROWS_AS(load_cohort(dir), std::runtime_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("load_cohort rejects a missing volume file") {
    const auto dir = temp_dir("mtp_synth_missing_raw");
    export_cohort(generate_cohort(small_export_config()), dir);
    std::filesystem::remove(dir / "s7.raw");
    CHECK_THROWS_AS(load_cohort(dir), std::runtime_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("load_cohort rejects an unsupported manifest version") {
    const auto dir = temp_dir("mtp_synth_bad_version");
    export_cohort(generate_cohort(small_export_config()), dir);
    std::ifstream in(dir / "manifest.json");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const auto pos = text.find("\"schema_version\": 1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, std::string("\"schema_version\": 1").size(), "\"schema_version\": 99");
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << text;
    out.close();
    CHECK_THROWS_AS(load_cohort(dir), std::runtime_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("load_cohort rejects a directory without a manifest") {
    const auto dir = temp_dir("mtp_synth_no_manifest");
    std::filesystem::create_directories(dir);
    CHECK_THROWS_AS(load_cohort(dir), std::runtime_error);
    std::filesystem::remove_all(dir);
}
