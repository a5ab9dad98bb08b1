// mtprog: command-line front end for the pipeline: cohort synthesis, tabular
// boundary models, CNN cross-validation, checkpoint evaluation with bootstrap
// confidence intervals, and saliency export.
//
// Exit codes: 0 success, 2 usage/validation, 3 I/O or data failure,
// 4 partial failure (some CV folds failed).

#include "mtp/encoding.hpp"
#include "mtp/kernels.hpp"
#include "mtp/metrics.hpp"
#include "mtp/model.hpp"
#include "mtp/rng.hpp"
#include "mtp/saliency.hpp"
#include "mtp/synthdata.hpp"
#include "mtp/tabular.hpp"
#include "mtp/tape.hpp"
#include "mtp/tensor.hpp"
#include "mtp/train.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace mtp;

namespace {

// ---------------------------------------------------------------------------
// JSON config files: {"cv": {"k": 5}} sets cv's --k unless the flag is given
// on the command line. Unknown keys are rejected by the parser.

class JsonConfig : public CLI::Config {
  public:
    std::string to_config(const CLI::App*, bool, bool, std::string) const override {
        return "{}\n";
    }
    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(input);
        } catch (const std::exception& e) {
            throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
        }
        std::vector<CLI::ConfigItem> out;
        flatten(j, {}, out);
        return out;
    }

  private:
    static std::string scalar(const nlohmann::json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
        return v.dump();
    }
    static void flatten(const nlohmann::json& j, std::vector<std::string> parents,
                        std::vector<CLI::ConfigItem>& out) {
        if (!j.is_object())
            throw CLI::ConversionError("config root and sections must be JSON objects");
        for (const auto& [key, val] : j.items()) {
            if (val.is_object()) {
                auto deeper = parents;
                deeper.push_back(key);
                flatten(val, deeper, out);
            } else {
                CLI::ConfigItem item;
                item.parents = parents;
                item.name = key;
                if (val.is_array())
                    for (const auto& e : val) item.inputs.push_back(scalar(e));
                else
                    item.inputs.push_back(scalar(val));
                out.push_back(item);
            }
        }
    }
};

// 17 significant digits: round-trips doubles exactly, keeping artifacts
// byte-identical across reruns
std::string fmt17(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

void apply_jobs(int jobs) {
    if (jobs > 0) kernels::set_threads(jobs);
}

// "3", "1,2,5", and "1..5" (inclusive) all describe seed lists
std::vector<uint64_t> parse_seeds(const std::string& text) {
    std::vector<uint64_t> seeds;
    const auto parse_one = [](const std::string& s) {
        size_t used = 0;
        const unsigned long long v = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument("bad seed token '" + s + "'");
        return static_cast<uint64_t>(v);
    };
    const auto range_at = text.find("..");
    if (range_at != std::string::npos) {
        const uint64_t lo = parse_one(text.substr(0, range_at));
        const uint64_t hi = parse_one(text.substr(range_at + 2));
        if (hi < lo) throw std::invalid_argument("seed range '" + text + "' is descending");
        if (hi - lo > 1000) throw std::invalid_argument("seed range wider than 1000");
        for (uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
        return seeds;
    }
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) seeds.push_back(parse_one(tok));
    }
    if (seeds.empty()) throw std::invalid_argument("no seeds in '" + text + "'");
    return seeds;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    size_t n = 64;
    size_t d = 8, h = 32, w = 32;
    uint64_t seed = 1;
    double noise = 1.0;
    std::string out;
};

int cmd_synth(const SynthArgs& a) {
    synth::CohortConfig cfg;
    cfg.n = a.n;
    cfg.d = a.d;
    cfg.h = a.h;
    cfg.w = a.w;
    cfg.seed = a.seed;
    cfg.noise_level = a.noise;
    const auto cohort = synth::generate_cohort(cfg);
    const auto manifest = synth::export_cohort(cohort, a.out);
    size_t poor = 0;
    for (const auto& r : cohort.records) poor += r.label;
    std::cout << "cohort: n=" << cohort.records.size() << " poor=" << poor
              << " good=" << (cohort.records.size() - poor)
              << " volume=" << cfg.d << "x" << cfg.h << "x" << cfg.w << "\n";
    std::cout << "manifest: " << (fs::path(a.out) / "manifest.json").string() << "\n";
    (void)manifest;
    return 0;
}

// ---------------------------------------------------------------------------
// tabular

struct TabularArgs {
    std::string data;
    std::string model = "both";
    size_t k = 10;
    uint64_t seed = 1;
    size_t max_depth = 2;
    size_t min_leaf = 5;
    double lr_rate = 0.8;
    size_t lr_epochs = 3000;
    double lr_l2 = 0.05;
};

struct FoldScores {
    std::map<std::string, std::vector<double>> values;  // metric -> defined fold values
    void add(const std::string& name, const metrics::MetricValue& v) {
        if (v.defined) values[name].push_back(v.value);
    }
    void add(const std::string& name, std::optional<double> v) {
        if (v) values[name].push_back(*v);
    }
};

std::optional<double> safe_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    const bool has0 = std::count(labels.begin(), labels.end(), 0) > 0;
    const bool has1 = std::count(labels.begin(), labels.end(), 1) > 0;
    if (!has0 || !has1) return std::nullopt;
    return metrics::roc_auc(scores, labels);
}

// Table-1 column order, AUC appended
const std::vector<std::string> kBinaryOrder = {"Acc",  "B.Acc",  "Spec", "NPV",
                                               "Prec", "Recall", "F1",   "AUC"};

void print_mean_sd(const FoldScores& scores, size_t k) {
    for (const auto& name : kBinaryOrder) {
        const auto it = scores.values.find(name);
        if (it == scores.values.end() || it->second.empty()) {
            std::cout << "  " << name << " NA\n";
            continue;
        }
        const auto& v = it->second;
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        if (v.size() > 1) {
            for (double x : v) var += (x - mean) * (x - mean);
            var /= static_cast<double>(v.size() - 1);
        }
        std::cout << "  " << name << " " << fmt2(mean) << " ± " << fmt2(std::sqrt(var));
        if (v.size() < k) std::cout << " (defined in " << v.size() << "/" << k << " folds)";
        std::cout << "\n";
    }
}

void score_fold(FoldScores& scores, const std::vector<int>& labels, const std::vector<int>& preds,
                const std::vector<double>& probs) {
    const auto counts = metrics::BinaryCounts::from_predictions(labels, preds);
    const auto r = metrics::binary_suite(counts);
    scores.add("Acc", r.acc);
    scores.add("B.Acc", r.b_acc);
    scores.add("Spec", r.spec);
    scores.add("NPV", r.npv);
    scores.add("Prec", r.prec);
    scores.add("Recall", r.recall);
    scores.add("F1", r.f1);
    scores.add("AUC", safe_auc(probs, labels));
}

int cmd_tabular(const TabularArgs& a) {
    fs::path csv = a.data;
    if (fs::is_directory(csv)) csv /= "cohort.csv";
    const auto records = tab::load_cohort_csv(csv);

    const bool run_dtc = a.model == "dtc" || a.model == "both";
    const bool run_lr = a.model == "lr" || a.model == "both";

    if (run_dtc) {
        // headline fit on the full cohort: this is where the decision
        // boundaries come from
        const auto tree = tab::fit_dtc(records, a.max_depth, a.min_leaf);
        if (tree.single_class_warning)
            std::cout << "warning: single-class cohort, tree is a bare leaf\n";
        std::cout << "decision-tree boundaries (depth " << a.max_depth << "):\n";
        const auto bounds = tab::extract_boundaries(tree);
        if (bounds.empty()) std::cout << "  (none: tree did not split)\n";
        for (const auto& b : bounds)
            std::cout << "  " << tab::feature_name(b.feature) << " <= " << b.threshold << "\n";
    }

    std::vector<int> labels(records.size());
    for (size_t i = 0; i < records.size(); ++i) labels[i] = records[i].label;
    const auto folds = train::stratified_kfold(labels, a.k, a.seed);

    const auto gather = [&](const std::vector<size_t>& idx) {
        std::vector<tab::TabularRecord> out;
        out.reserve(idx.size());
        for (size_t i : idx) out.push_back(records[i]);
        return out;
    };

    if (run_dtc) {
        FoldScores scores;
        for (const auto& fold : folds) {
            auto train_idx = fold.train;
            train_idx.insert(train_idx.end(), fold.validation.begin(), fold.validation.end());
            const auto tree = tab::fit_dtc(gather(train_idx), a.max_depth, a.min_leaf);
            std::vector<int> truth, preds;
            std::vector<double> probs;
            for (size_t i : fold.test) {
                const auto p = tab::predict_tabular(tree, records[i]);
                truth.push_back(records[i].label);
                preds.push_back(p.label);
                probs.push_back(p.probability);
            }
            score_fold(scores, truth, preds, probs);
        }
        std::cout << "dtc " << a.k << "-fold CV (mean ± SD):\n";
        print_mean_sd(scores, folds.size());
    }

    if (run_lr) {
        FoldScores scores;
        for (const auto& fold : folds) {
            auto train_idx = fold.train;
            train_idx.insert(train_idx.end(), fold.validation.begin(), fold.validation.end());
            const auto train_recs = gather(train_idx);
            const auto norm = tab::fit_normalization(train_recs);
            const auto model =
                tab::fit_logistic(tab::apply_normalization(train_recs, norm), a.lr_rate,
                                  a.lr_epochs, a.lr_l2);
            const auto test_recs = tab::apply_normalization(gather(fold.test), norm);
            std::vector<int> truth, preds;
            std::vector<double> probs;
            for (size_t i = 0; i < test_recs.size(); ++i) {
                const auto p = tab::predict_tabular(model, test_recs[i]);
                truth.push_back(test_recs[i].label);
                preds.push_back(p.label);
                probs.push_back(p.probability);
            }
            score_fold(scores, truth, preds, probs);
        }
        std::cout << "lr " << a.k << "-fold CV (mean ± SD):\n";
        print_mean_sd(scores, folds.size());

        // full-cohort fit for the reported coefficients (min-max space)
        const auto norm = tab::fit_normalization(records);
        const auto model = tab::fit_logistic(tab::apply_normalization(records, norm), a.lr_rate,
                                             a.lr_epochs, a.lr_l2);
        std::cout << "lr coefficients (min-max feature space):\n";
        for (size_t f = 0; f < model.weights.size(); ++f)
            std::cout << "  " << tab::feature_name(f) << " " << fmt2(model.weights[f]) << "\n";
        std::cout << "  intercept " << fmt2(model.intercept) << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// cv

struct CvArgs {
    std::string data;
    std::string out;
    std::string variant = "mt_ord";
    bool ablation = false;
    std::string seeds;  // overrides --seed when set
    size_t k = 10;
    uint64_t seed = 1;
    train::TrainConfig train;
    model::ModelConfig model;
};

int cmd_cv(const CvArgs& a) {
    const auto cohort = synth::load_cohort(a.data);
    const auto view = train::view_of(cohort);

    std::vector<model::Variant> variants;
    if (a.ablation) {
        // the loss-ablation ladder: prognosis alone (both auxiliary weights
        // zeroed), auxiliary heads binary, and the full ordinal treatment
        variants = {model::Variant::baseline_prognosis, model::Variant::mt_bin,
                    model::Variant::mt_ord};
    } else {
        variants = {model::variant_from_name(a.variant)};
    }
    const std::vector<uint64_t> seeds =
        a.seeds.empty() ? std::vector<uint64_t>{a.seed} : parse_seeds(a.seeds);

    std::ostringstream dist;
    dist << "variant,seed,fold,metric,value\n";
    bool any_partial = false;

    for (const auto variant : variants) {
        for (const uint64_t seed : seeds) {
            train::CvConfig cfg;
            cfg.k = a.k;
            cfg.model = a.model;
            cfg.model.variant = variant;
            cfg.model.d = view.d;
            cfg.model.h = view.h;
            cfg.model.w = view.w;
            model::validate_config(cfg.model);
            cfg.train = a.train;
            cfg.train.seed = seed;

            const fs::path run_dir =
                fs::path(a.out) / model::variant_name(variant) / ("seed" + std::to_string(seed));
            fs::create_directories(run_dir);
            cfg.checkpoint_dir = run_dir.string();

            std::cout << "== " << model::variant_name(variant) << " seed " << seed << " (k=" << a.k
                      << ") ==\n";
            const auto result = train::run_cv(view, cfg);

            train::save_epoch_logs_csv((run_dir / "epoch_logs.csv").string(), result);
            train::save_fold_metrics_csv((run_dir / "fold_metrics.csv").string(), result);
            train::save_aggregate_json((run_dir / "aggregate.json").string(), result);

            for (const auto& fold : result.folds) {
                if (fold.failed) {
                    std::cout << "  fold " << fold.fold << " FAILED: " << fold.error << "\n";
                    any_partial = true;
                    continue;
                }
                for (const auto& [name, value] : fold.metrics)
                    dist << model::variant_name(variant) << "," << seed << "," << fold.fold << ","
                         << name << "," << fmt17(value) << "\n";
            }
            for (const auto& name :
                 {std::string("prog_b_acc"), std::string("prog_auc")}) {
                const auto it = result.aggregate.find(name);
                if (it == result.aggregate.end()) continue;
                std::cout << "  " << name << " " << fmt2(it->second.mean) << " ± "
                          << fmt2(it->second.sd) << " (" << it->second.count << " folds)\n";
            }
            std::cout << "  reports: " << run_dir.string() << "\n";
        }
    }

    const fs::path dist_path = fs::path(a.out) / "distribution.csv";
    std::ofstream out(dist_path);
    if (!out) throw std::runtime_error("cannot write " + dist_path.string());
    out << dist.str();
    out.close();
    std::cout << "distribution: " << dist_path.string() << "\n";

    if (any_partial) {
        std::cout << "partial failure: at least one fold failed\n";
        return 4;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    double threshold = 0.5;
    size_t resamples = 1000;
    double level = 0.95;
    uint64_t seed = 1;
    size_t batch = 8;
};

std::vector<double> prognosis_probabilities(model::MultiTaskModel& m, const train::CohortView& view,
                                            size_t batch) {
    const size_t n = view.size();
    const size_t voxels = view.d * view.h * view.w;
    std::vector<double> probs(n);
    for (size_t start = 0; start < n; start += batch) {
        const size_t b = std::min(batch, n - start);
        Tensor x({b, 1, view.d, view.h, view.w});
        double* xd = x.data();
        for (size_t i = 0; i < b; ++i)
            std::copy((*view.volumes)[start + i].begin(), (*view.volumes)[start + i].end(),
                      xd + i * voxels);
        Tape tape;
        Rng rng(0);
        const auto out = m.forward(tape, x, false, rng);
        const auto logits = out.prog_logit.values();
        for (size_t i = 0; i < b; ++i) probs[start + i] = 1.0 / (1.0 + std::exp(-logits[i]));
    }
    return probs;
}

int cmd_eval(const EvalArgs& a) {
    model::CheckpointMeta meta;
    auto m = model::load_checkpoint(a.checkpoint, &meta);
    const auto cohort = synth::load_cohort(a.data);
    const auto view = train::view_of(cohort);

    const auto& cfg = m.config();
    if (cfg.d != view.d || cfg.h != view.h || cfg.w != view.w)
        throw std::invalid_argument(
            "checkpoint/config mismatch: model expects " + std::to_string(cfg.d) + "x" +
            std::to_string(cfg.h) + "x" + std::to_string(cfg.w) + " volumes, cohort has " +
            std::to_string(view.d) + "x" + std::to_string(view.h) + "x" + std::to_string(view.w));
    if (!model::has_prog_head(cfg.variant))
        throw std::invalid_argument("checkpoint variant " + model::variant_name(cfg.variant) +
                                    " has no prognosis head to evaluate");
    if (a.threshold <= 0.0 || a.threshold >= 1.0)
        throw std::invalid_argument("--threshold must lie in (0, 1)");
    if (a.level <= 0.0 || a.level >= 1.0)
        throw std::invalid_argument("--level must lie in (0, 1)");
    if (a.resamples == 0) throw std::invalid_argument("--resamples must be positive");

    const auto probs = prognosis_probabilities(m, view, a.batch);
    const size_t n = view.size();
    std::vector<int> preds(n);
    for (size_t i = 0; i < n; ++i) preds[i] = probs[i] >= a.threshold ? 1 : 0;
    const auto& labels = view.prog;

    std::cout << "checkpoint: " << a.checkpoint << " (" << model::variant_name(cfg.variant)
              << ", epoch " << meta.epoch << ", " << meta.monitor << " " << fmt2(meta.value)
              << ")\n";
    std::cout << "subjects: " << n << ", threshold " << a.threshold << ", "
              << a.resamples << " resamples, " << fmt2(a.level * 100.0) << "% CI\n";

    using Picker = std::function<metrics::MetricValue(const metrics::BinaryReport&)>;
    const std::vector<std::pair<std::string, Picker>> suite = {
        {"Acc", [](const auto& r) { return r.acc; }},
        {"B.Acc", [](const auto& r) { return r.b_acc; }},
        {"Spec", [](const auto& r) { return r.spec; }},
        {"NPV", [](const auto& r) { return r.npv; }},
        {"Prec", [](const auto& r) { return r.prec; }},
        {"Recall", [](const auto& r) { return r.recall; }},
        {"F1", [](const auto& r) { return r.f1; }},
    };

    for (const auto& [name, pick] : suite) {
        const auto metric = [&](const std::vector<size_t>& idx) -> std::optional<double> {
            std::vector<int> lab, prd;
            lab.reserve(idx.size());
            prd.reserve(idx.size());
            for (size_t i : idx) {
                lab.push_back(labels[i]);
                prd.push_back(preds[i]);
            }
            const auto v = pick(metrics::binary_suite(metrics::BinaryCounts::from_predictions(
                lab, prd)));
            if (!v.defined) return std::nullopt;
            return v.value;
        };
        std::vector<size_t> identity(n);
        for (size_t i = 0; i < n; ++i) identity[i] = i;
        if (!metric(identity)) {
            std::cout << "  " << name << " NA (undefined on this split)\n";
            continue;
        }
        const auto ci = metrics::bootstrap_ci(n, metric, a.resamples, a.level, a.seed);
        std::cout << "  " << name << " " << fmt2(ci.point) << " (" << fmt2(ci.lower) << "-"
                  << fmt2(ci.upper) << ")\n";
    }

    const auto auc_metric = [&](const std::vector<size_t>& idx) -> std::optional<double> {
        std::vector<double> sc;
        std::vector<int> lab;
        sc.reserve(idx.size());
        lab.reserve(idx.size());
        for (size_t i : idx) {
            sc.push_back(probs[i]);
            lab.push_back(labels[i]);
        }
        return safe_auc(sc, lab);
    };
    std::vector<size_t> identity(n);
    for (size_t i = 0; i < n; ++i) identity[i] = i;
    if (auc_metric(identity)) {
        const auto ci = metrics::bootstrap_ci(n, auc_metric, a.resamples, a.level, a.seed);
        std::cout << "  AUC " << fmt2(ci.point) << " (" << fmt2(ci.lower) << "-" << fmt2(ci.upper)
                  << ")\n";
    } else {
        std::cout << "  AUC NA (single-class split)\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// saliency

struct SaliencyArgs {
    std::string checkpoint;
    std::string data;
    std::string out;
    std::string method = "gbp";
    std::string head = "prognosis";
    std::string subjects = "all";
    double quantile = 0.9;
    int layer = -1;  // -1 selects the deepest feature layer
    std::string upsample = "trilinear";
    bool per_slice_norm = false;
};

int cmd_saliency(const SaliencyArgs& a) {
    model::CheckpointMeta meta;
    auto m = model::load_checkpoint(a.checkpoint, &meta);
    const auto cohort = synth::load_cohort(a.data);
    const auto view = train::view_of(cohort);
    const auto& cfg = m.config();
    if (cfg.d != view.d || cfg.h != view.h || cfg.w != view.w)
        throw std::invalid_argument("checkpoint/config mismatch: model volume " +
                                    std::to_string(cfg.d) + "x" + std::to_string(cfg.h) + "x" +
                                    std::to_string(cfg.w) + " differs from the cohort's");

    const auto head = saliency::head_from_name(a.head);
    const auto up = a.upsample == "nearest" ? saliency::Upsample::nearest
                                            : saliency::Upsample::trilinear;
    const size_t layer =
        a.layer < 0 ? saliency::kDeepestLayer : static_cast<size_t>(a.layer);

    std::vector<size_t> chosen;
    if (a.subjects == "all") {
        chosen.resize(view.size());
        for (size_t i = 0; i < chosen.size(); ++i) chosen[i] = i;
    } else {
        std::stringstream ss(a.subjects);
        std::string id;
        while (std::getline(ss, id, ',')) {
            if (id.empty()) continue;
            bool found = false;
            for (size_t i = 0; i < cohort.records.size(); ++i) {
                if (cohort.records[i].id == id) {
                    chosen.push_back(i);
                    found = true;
                    break;
                }
            }
            if (!found)
                throw std::invalid_argument("unknown subject id '" + id + "' (cohort has " +
                                            std::to_string(cohort.records.size()) + " subjects)");
        }
        if (chosen.empty()) throw std::invalid_argument("no subjects selected");
    }

    fs::create_directories(a.out);
    size_t files = 0;
    for (const size_t i : chosen) {
        const auto& volume = (*view.volumes)[i];
        saliency::SaliencyVolume sal;
        if (a.method == "gbp") {
            sal = saliency::guided_backprop(m, volume, head);
        } else if (a.method == "gradcam") {
            sal = saliency::cam_saliency(saliency::grad_cam(m, volume, head, layer, up));
        } else if (a.method == "ggcam") {
            const auto gbp = saliency::guided_backprop(m, volume, head);
            const auto cam = saliency::grad_cam(m, volume, head, layer, up);
            sal = saliency::guided_grad_cam(gbp, cam);
        } else {
            throw std::invalid_argument("unknown method '" + a.method +
                                        "' (supported: gbp, gradcam, ggcam)");
        }
        const auto post = saliency::normalize_threshold(sal, a.quantile);
        const auto& id = cohort.records[i].id;
        const std::string base =
            (fs::path(a.out) / (id + "_" + saliency::method_name(post.method) + "_" +
                                saliency::head_name(post.head)))
                .string();
        saliency::export_raw(base, post);
        const auto pgms = saliency::export_pgm_slices(a.out, id, post, a.per_slice_norm);
        files += 2 + pgms.size();
        std::cout << "  " << id << ": raw + " << pgms.size() << " slices"
                  << (post.degenerate ? " (degenerate: constant map)" : "") << "\n";
    }
    std::cout << "exported " << chosen.size() << " subjects, " << files << " files to " << a.out
              << "\n";
    return 0;
}

int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-task prognosis pipeline"};
    app.require_subcommand(1);
    app.set_config("--config")->check(CLI::ExistingFile);
    app.config_formatter(std::make_shared<JsonConfig>());
    int jobs = 0;
    app.add_option("--jobs", jobs, "worker thread cap (0 keeps the default)");

    int rc = 0;

    SynthArgs sa;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic cohort");
    synth_cmd->add_option("--n", sa.n, "subjects (>= 20)");
    synth_cmd->add_option("--depth", sa.d, "volume depth");
    synth_cmd->add_option("--height", sa.h, "volume height");
    synth_cmd->add_option("--width", sa.w, "volume width");
    synth_cmd->add_option("--seed", sa.seed, "generator seed");
    synth_cmd->add_option("--noise", sa.noise, "noise level (0 = deterministic labels)");
    synth_cmd->add_option("--out", sa.out, "output directory")->required();
    synth_cmd->callback([&] {
        rc = guarded([&] {
            apply_jobs(jobs);
            return cmd_synth(sa);
        });
    });

    TabularArgs ta;
    auto* tab_cmd = app.add_subcommand("tabular", "fit boundary models on a cohort CSV");
    tab_cmd->add_option("--data", ta.data, "cohort CSV (or directory holding cohort.csv)")
        ->required();
    tab_cmd->add_option("--model", ta.model, "which models to fit")
        ->check(CLI::IsMember({"dtc", "lr", "both"}));
    tab_cmd->add_option("--k", ta.k, "CV folds");
    tab_cmd->add_option("--seed", ta.seed, "CV shuffle seed");
    tab_cmd->add_option("--max-depth", ta.max_depth, "decision-tree depth");
    tab_cmd->add_option("--min-leaf", ta.min_leaf, "minimum records per leaf");
    tab_cmd->add_option("--lr-rate", ta.lr_rate, "logistic learning rate");
    tab_cmd->add_option("--lr-epochs", ta.lr_epochs, "logistic epochs");
    tab_cmd->add_option("--lr-l2", ta.lr_l2, "logistic L2 strength");
    tab_cmd->callback([&] {
        rc = guarded([&] {
            apply_jobs(jobs);
            return cmd_tabular(ta);
        });
    });

    CvArgs ca;
    auto* cv_cmd = app.add_subcommand("cv", "stratified cross-validated training");
    cv_cmd->add_option("--data", ca.data, "exported cohort directory")->required();
    cv_cmd->add_option("--out", ca.out, "report/checkpoint directory")->required();
    cv_cmd->add_option("--variant", ca.variant, "model variant")
        ->check(CLI::IsMember({"baseline_prognosis", "baseline_gcs_bin", "baseline_gcs_ord",
                               "baseline_age", "mt_bin", "mt_ord"}));
    cv_cmd->add_flag("--ablation", ca.ablation,
                     "run the loss ablation ladder instead of a single variant");
    cv_cmd->add_option("--seeds", ca.seeds, "seed list: N, N,M,..., or A..B");
    cv_cmd->add_option("--k", ca.k, "folds");
    cv_cmd->add_option("--seed", ca.seed, "training seed");
    cv_cmd->add_option("--epochs", ca.train.max_epochs, "epoch cap");
    cv_cmd->add_option("--patience", ca.train.patience_epochs, "early-stop patience");
    cv_cmd->add_option("--batch", ca.train.batch_size, "micro-batch size");
    cv_cmd->add_option("--accum", ca.train.grad_accum_steps, "gradient accumulation steps");
    cv_cmd->add_option("--lr", ca.train.learning_rate, "learning rate");
    cv_cmd->add_option("--wd", ca.train.weight_decay, "weight decay");
    cv_cmd->add_option("--augment-prob", ca.train.augment_prob, "per-transform probability");
    cv_cmd->add_option("--lambda-prog", ca.model.lambda_prog, "prognosis loss weight");
    cv_cmd->add_option("--lambda-gcs", ca.model.lambda_gcs, "GCS loss weight");
    cv_cmd->add_option("--lambda-age", ca.model.lambda_age, "age loss weight");
    cv_cmd->add_option("--blocks", ca.model.blocks, "dense blocks");
    cv_cmd->add_option("--block-layers", ca.model.block_layers, "layers per block");
    cv_cmd->add_option("--growth", ca.model.growth, "growth rate");
    cv_cmd->add_option("--init-channels", ca.model.init_channels, "stem channels");
    cv_cmd->add_option("--dropout", ca.model.dropout, "head dropout rate");
    cv_cmd->callback([&] {
        rc = guarded([&] {
            apply_jobs(jobs);
            return cmd_cv(ca);
        });
    });

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint with bootstrap CIs");
    eval_cmd->add_option("--checkpoint", ea.checkpoint, "model checkpoint")->required();
    eval_cmd->add_option("--data", ea.data, "exported cohort directory")->required();
    eval_cmd->add_option("--threshold", ea.threshold, "decision threshold");
    eval_cmd->add_option("--resamples", ea.resamples, "bootstrap resamples");
    eval_cmd->add_option("--level", ea.level, "confidence level");
    eval_cmd->add_option("--seed", ea.seed, "bootstrap seed");
    eval_cmd->add_option("--batch", ea.batch, "forward batch size");
    eval_cmd->callback([&] {
        rc = guarded([&] {
            apply_jobs(jobs);
            return cmd_eval(ea);
        });
    });

    SaliencyArgs za;
    auto* sal_cmd = app.add_subcommand("saliency", "export attribution volumes and slices");
    sal_cmd->add_option("--checkpoint", za.checkpoint, "model checkpoint")->required();
    sal_cmd->add_option("--data", za.data, "exported cohort directory")->required();
    sal_cmd->add_option("--out", za.out, "output directory")->required();
    sal_cmd->add_option("--method", za.method, "attribution method")
        ->check(CLI::IsMember({"gbp", "gradcam", "ggcam"}));
    sal_cmd->add_option("--head", za.head, "target head")
        ->check(CLI::IsMember({"prognosis", "gcs", "age"}));
    sal_cmd->add_option("--subjects", za.subjects, "'all' or comma-separated subject ids");
    sal_cmd->add_option("--quantile", za.quantile, "survival quantile in (0, 1)");
    sal_cmd->add_option("--layer", za.layer, "feature layer id (-1 = deepest)");
    sal_cmd->add_option("--upsample", za.upsample, "CAM upsampling mode")
        ->check(CLI::IsMember({"trilinear", "nearest"}));
    sal_cmd->add_flag("--per-slice-norm", za.per_slice_norm, "normalize each PGM slice alone");
    sal_cmd->callback([&] {
        rc = guarded([&] {
            apply_jobs(jobs);
            return cmd_saliency(za);
        });
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return rc;
}
