#include "mtp/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mtp/encoding.hpp"
#include "mtp/metrics.hpp"
#include "mtp/nn.hpp"
#include "mtp/tape.hpp"

#include "json.hpp"

namespace mtp::train {

namespace {

using nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

// ---------------------------------------------------------------------------
// configuration

void validate_train_config(const TrainConfig& cfg) {
    if (cfg.batch_size == 0) fail("train config: batch_size must be positive");
    if (cfg.grad_accum_steps == 0) fail("train config: grad_accum_steps must be positive");
    if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate))
        fail("train config: learning_rate must be positive and finite");
    if (cfg.weight_decay < 0.0 || !std::isfinite(cfg.weight_decay))
        fail("train config: weight_decay must be non-negative and finite");
    if (cfg.patience_epochs == 0) fail("train config: patience_epochs must be positive");
    if (cfg.max_epochs == 0) fail("train config: max_epochs must be positive");
    if (cfg.augment_prob < 0.0 || cfg.augment_prob > 1.0)
        fail("train config: augment_prob must lie in [0,1]");
    if (cfg.rotation_limit_deg < 0.0) fail("train config: rotation_limit_deg must be >= 0");
    if (cfg.zoom_limit < 0.0 || cfg.zoom_limit >= 1.0)
        fail("train config: zoom_limit must lie in [0,1)");
    if (cfg.noise_std < 0.0) fail("train config: noise_std must be >= 0");
}

// ---------------------------------------------------------------------------
// cohort view

CohortView view_of(const synth::SyntheticCohort& cohort) {
    CohortView view;
    view.volumes = &cohort.volumes;
    view.d = cohort.config.d;
    view.h = cohort.config.h;
    view.w = cohort.config.w;
    const size_t n = cohort.records.size();
    view.prog.reserve(n);
    for (const auto& r : cohort.records) view.prog.push_back(r.label);
    view.gcs_cls = cohort.gcs_classes;
    view.age_bin = cohort.age_bins;
    return view;
}

// ---------------------------------------------------------------------------
// splits

namespace {

void shuffle_indices(std::vector<size_t>& idx, Rng& rng) {
    for (size_t i = idx.size(); i > 1; --i) {
        const size_t j = rng.uniform_index(i);
        std::swap(idx[i - 1], idx[j]);
    }
}

}  // namespace

std::vector<FoldSplit> stratified_kfold(std::span<const int> labels, size_t k, uint64_t seed) {
    if (k < 2) fail("stratified_kfold: k must be at least 2");
    if (labels.empty()) fail("stratified_kfold: empty label list");

    // shuffled member lists per distinct class, in sorted class order
    std::map<int, std::vector<size_t>> by_class;
    for (size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    Rng root(seed);
    for (auto& [cls, members] : by_class) {
        if (members.size() < k)
            fail("stratified_kfold: class " + std::to_string(cls) + " has " +
                 std::to_string(members.size()) + " members, fewer than k=" + std::to_string(k));
        Rng class_rng = root.fork(static_cast<uint64_t>(static_cast<int64_t>(cls)));
        shuffle_indices(members, class_rng);
    }

    // Bucket j%k of each class tests in fold j. The rotationally next bucket
    // is the validation share: (n_c - n_c/k)/(k-1) == n_c/k, so one bucket is
    // exactly the 1/(k-1) stratified share of the non-test remainder.
    std::vector<FoldSplit> folds(k);
    for (size_t f = 0; f < k; ++f) folds[f].fold = f;
    for (const auto& [cls, members] : by_class) {
        for (size_t j = 0; j < members.size(); ++j) {
            const size_t test_fold = j % k;
            for (size_t f = 0; f < k; ++f) {
                if (f == test_fold)
                    folds[f].test.push_back(members[j]);
                else if ((f + 1) % k == test_fold)
                    folds[f].validation.push_back(members[j]);
                else
                    folds[f].train.push_back(members[j]);
            }
        }
    }
    for (auto& fold : folds) {
        std::sort(fold.train.begin(), fold.train.end());
        std::sort(fold.validation.begin(), fold.validation.end());
        std::sort(fold.test.begin(), fold.test.end());
    }
    return folds;
}

std::vector<size_t> oversample_train(const FoldSplit& split, std::span<const int> labels,
                                     Rng& rng) {
    if (split.train.empty()) throw std::runtime_error("oversample_train: empty training split");
    std::map<int, std::vector<size_t>> by_class;  // class -> positions in split.train
    for (size_t idx : split.train) {
        if (idx >= labels.size())
            throw std::runtime_error("oversample_train: train index out of label range");
        by_class[labels[idx]].push_back(idx);
    }
    if (by_class.size() < 2)
        throw std::runtime_error("oversample_train: training split holds a single class");
    if (by_class.size() > 2)
        throw std::runtime_error("oversample_train: expected binary labels");

    auto it = by_class.begin();
    const auto& first = it->second;
    const auto& second = std::next(it)->second;
    const auto& minority = first.size() <= second.size() ? first : second;
    const auto& majority = first.size() <= second.size() ? second : first;

    std::vector<size_t> out = split.train;
    const size_t deficit = majority.size() - minority.size();
    for (size_t i = 0; i < deficit; ++i)
        out.push_back(minority[rng.uniform_index(minority.size())]);
    return out;
}

// ---------------------------------------------------------------------------
// augmentation

namespace {

// trilinear lookup with zero padding; exact (bitwise) on integer coordinates
double sample_trilinear(const std::vector<double>& v, size_t d, size_t h, size_t w, double z,
                        double y, double x) {
    const double fz = std::floor(z), fy = std::floor(y), fx = std::floor(x);
    const double tz = z - fz, ty = y - fy, tx = x - fx;
    const auto at = [&](double zi, double yi, double xi) -> double {
        if (zi < 0.0 || yi < 0.0 || xi < 0.0) return 0.0;
        const size_t zz = (size_t)zi, yy = (size_t)yi, xx = (size_t)xi;
        if (zz >= d || yy >= h || xx >= w) return 0.0;
        return v[(zz * h + yy) * w + xx];
    };
    double acc = 0.0;
    for (int dz = 0; dz <= 1; ++dz)
        for (int dy = 0; dy <= 1; ++dy)
            for (int dx = 0; dx <= 1; ++dx) {
                const double wz = dz ? tz : 1.0 - tz;
                const double wy = dy ? ty : 1.0 - ty;
                const double wx = dx ? tx : 1.0 - tx;
                const double weight = wz * wy * wx;
                if (weight == 0.0) continue;
                acc += weight * at(fz + dz, fy + dy, fx + dx);
            }
    return acc;
}

void check_volume(const std::vector<double>& volume, size_t d, size_t h, size_t w,
                  const char* what) {
    if (d == 0 || h == 0 || w == 0) fail(std::string(what) + ": extents must be positive");
    if (volume.size() != d * h * w) fail(std::string(what) + ": volume size does not match extents");
}

}  // namespace

std::vector<double> rotate_axial(const std::vector<double>& volume, size_t d, size_t h, size_t w,
                                 double degrees) {
    check_volume(volume, d, h, w, "rotate_axial");
    const double theta = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);
    const double cy = 0.5 * (double)(h - 1), cx = 0.5 * (double)(w - 1);
    std::vector<double> out(volume.size());
    for (size_t z = 0; z < d; ++z)
        for (size_t y = 0; y < h; ++y)
            for (size_t x = 0; x < w; ++x) {
                const double dy = (double)y - cy, dx = (double)x - cx;
                const double sy = cy + dy * c + dx * s;
                const double sx = cx - dy * s + dx * c;
                out[(z * h + y) * w + x] =
                    sample_trilinear(volume, d, h, w, (double)z, sy, sx);
            }
    return out;
}

std::vector<double> zoom_volume(const std::vector<double>& volume, size_t d, size_t h, size_t w,
                                double factor) {
    check_volume(volume, d, h, w, "zoom_volume");
    if (!(factor > 0.0) || !std::isfinite(factor)) fail("zoom_volume: factor must be positive");
    const double cz = 0.5 * (double)(d - 1), cy = 0.5 * (double)(h - 1), cx = 0.5 * (double)(w - 1);
    std::vector<double> out(volume.size());
    for (size_t z = 0; z < d; ++z)
        for (size_t y = 0; y < h; ++y)
            for (size_t x = 0; x < w; ++x) {
                const double sz = cz + ((double)z - cz) / factor;
                const double sy = cy + ((double)y - cy) / factor;
                const double sx = cx + ((double)x - cx) / factor;
                out[(z * h + y) * w + x] = sample_trilinear(volume, d, h, w, sz, sy, sx);
            }
    return out;
}

std::vector<double> add_gaussian_noise(const std::vector<double>& volume, double mean,
                                       double stddev, Rng& rng) {
    if (stddev < 0.0) fail("add_gaussian_noise: stddev must be >= 0");
    std::vector<double> out = volume;
    for (double& v : out) v += mean + stddev * rng.normal();
    return out;
}

std::vector<double> augment(const std::vector<double>& volume, size_t d, size_t h, size_t w,
                            const TrainConfig& cfg, Rng& rng) {
    check_volume(volume, d, h, w, "augment");
    std::vector<double> out = volume;
    // decision then parameter, per transform, so misses consume exactly one
    // draw each and an all-miss pass is the identity
    if (rng.bernoulli(cfg.augment_prob)) {
        const double deg = rng.uniform(-cfg.rotation_limit_deg, cfg.rotation_limit_deg);
        out = rotate_axial(out, d, h, w, deg);
    }
    if (rng.bernoulli(cfg.augment_prob)) {
        const double factor = rng.uniform(1.0 - cfg.zoom_limit, 1.0 + cfg.zoom_limit);
        out = zoom_volume(out, d, h, w, factor);
    }
    if (rng.bernoulli(cfg.augment_prob)) {
        out = add_gaussian_noise(out, cfg.noise_mean, cfg.noise_std, rng);
    }
    return out;
}

// ---------------------------------------------------------------------------
// optimizer

OptimizerState make_optimizer_state(const std::vector<Tensor>& params) {
    OptimizerState state;
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const Tensor& p : params) {
        state.m.emplace_back(p.numel(), 0.0);
        state.v.emplace_back(p.numel(), 0.0);
    }
    return state;
}

void adamw_step(std::vector<Tensor>& params, OptimizerState& state, const TrainConfig& cfg) {
    if (params.size() != state.m.size() || params.size() != state.v.size())
        throw std::runtime_error("adamw_step: optimizer state does not match parameter list");
    state.step += 1;
    const double t = (double)state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        if (state.m[i].size() != p.numel())
            throw std::runtime_error("adamw_step: optimizer state shape mismatch");
        const double* g = p.grad_if_allocated();
        auto vals = p.values();
        for (size_t j = 0; j < vals.size(); ++j) {
            const double grad = g ? g[j] : 0.0;
            if (!std::isfinite(grad))
                throw std::runtime_error("adamw_step: non-finite gradient encountered");
            double& m = state.m[i][j];
            double& v = state.v[i][j];
            m = state.beta1 * m + (1.0 - state.beta1) * grad;
            v = state.beta2 * v + (1.0 - state.beta2) * grad * grad;
            const double m_hat = m / bc1;
            const double v_hat = v / bc2;
            // both terms read the incoming parameter value: decoupled decay
            const double p0 = vals[j];
            vals[j] = p0 - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + state.eps) -
                      cfg.learning_rate * cfg.weight_decay * p0;
        }
    }
}

// ---------------------------------------------------------------------------
// early stopping

bool EarlyStopper::record(size_t epoch, double value) {
    improved_last_ = value > best_value_;
    if (improved_last_) {
        best_value_ = value;
        best_epoch_ = epoch;
        stale_ = 0;
    } else {
        ++stale_;
    }
    return stale_ >= patience_;
}

// ---------------------------------------------------------------------------
// evaluation helpers

namespace {

struct Collected {
    std::vector<int> prog_true, prog_pred;
    std::vector<double> prog_score;
    std::vector<int> gcs_true, gcs_pred;     // binary flag or ordinal class
    std::vector<double> gcs_score;           // binary head only
    std::vector<int> age_true, age_pred;
    std::vector<double> age_score;
};

Tensor batch_tensor(const CohortView& view, std::span<const size_t> indices,
                    const std::vector<std::vector<double>>* override_volumes) {
    const size_t voxels = view.d * view.h * view.w;
    std::vector<double> data(indices.size() * voxels);
    for (size_t i = 0; i < indices.size(); ++i) {
        const std::vector<double>& vol =
            override_volumes ? (*override_volumes)[i] : (*view.volumes)[indices[i]];
        if (vol.size() != voxels)
            throw std::runtime_error("training: volume size does not match view extents");
        std::copy(vol.begin(), vol.end(), data.begin() + (ptrdiff_t)(i * voxels));
    }
    return Tensor::from_data({indices.size(), 1, view.d, view.h, view.w}, std::move(data));
}

void gather_targets(const CohortView& view, std::span<const size_t> indices,
                    std::vector<int>& prog, std::vector<int>& gcs, std::vector<int>& age) {
    prog.clear();
    gcs.clear();
    age.clear();
    for (size_t idx : indices) {
        prog.push_back(view.prog[idx]);
        gcs.push_back(view.gcs_cls[idx]);
        age.push_back(view.age_bin[idx]);
    }
}

Collected collect_predictions(model::MultiTaskModel& m, const CohortView& view,
                              std::span<const size_t> indices, size_t batch_size) {
    const model::ModelConfig& cfg = m.config();
    Collected col;
    Rng eval_rng(0);  // eval-mode dropout never consumes randomness
    std::vector<int> prog, gcs, age;
    for (size_t start = 0; start < indices.size(); start += batch_size) {
        const size_t count = std::min(batch_size, indices.size() - start);
        auto chunk = indices.subspan(start, count);
        Tape tape;
        Tensor x = batch_tensor(view, chunk, nullptr);
        model::MultiTaskOutput out = m.forward(tape, x, /*training=*/false, eval_rng);
        model::Predictions pred = model::predict(out, cfg.variant);
        gather_targets(view, chunk, prog, gcs, age);
        if (model::has_prog_head(cfg.variant)) {
            for (size_t i = 0; i < count; ++i) {
                col.prog_true.push_back(prog[i]);
                col.prog_pred.push_back(pred.prognosis[i]);
                col.prog_score.push_back(nn::sigmoid_value(out.prog_logit.values()[i]));
            }
        }
        if (model::has_gcs_head(cfg.variant)) {
            const bool binary = model::gcs_head_width(cfg.variant) == 1;
            for (size_t i = 0; i < count; ++i) {
                col.gcs_true.push_back(binary ? (gcs[i] == 2 ? 1 : 0) : gcs[i]);
                col.gcs_pred.push_back(pred.gcs[i]);
                if (binary)
                    col.gcs_score.push_back(nn::sigmoid_value(out.gcs_logits.values()[i]));
            }
        }
        if (model::has_age_head(cfg.variant)) {
            for (size_t i = 0; i < count; ++i) {
                col.age_true.push_back(age[i]);
                col.age_pred.push_back(pred.age[i]);
                col.age_score.push_back(nn::sigmoid_value(out.age_logit.values()[i]));
            }
        }
    }
    return col;
}

void put_binary(std::map<std::string, double>& out, const std::string& prefix,
                std::span<const int> truth, std::span<const int> preds,
                std::span<const double> scores) {
    const auto counts = metrics::BinaryCounts::from_predictions(truth, preds);
    const auto report = metrics::binary_suite(counts);
    const auto push = [&](const char* name, const metrics::MetricValue& v) {
        if (v.defined) out[prefix + name] = v.value;
    };
    push("acc", report.acc);
    push("b_acc", report.b_acc);
    push("spec", report.spec);
    push("npv", report.npv);
    push("prec", report.prec);
    push("recall", report.recall);
    push("f1", report.f1);
    const bool both = counts.tp + counts.fn > 0 && counts.tn + counts.fp > 0;
    if (both && !scores.empty()) out[prefix + "auc"] = metrics::roc_auc(scores, truth);
}

// macro recall over the classes present in the truth column
metrics::MetricValue macro_recall(std::span<const int> truth, std::span<const int> preds,
                                  size_t num_classes) {
    const auto cm = metrics::confusion_matrix(truth, preds, num_classes);
    double sum = 0.0;
    size_t present = 0;
    for (size_t r = 0; r < num_classes; ++r) {
        size_t support = 0, hit = 0;
        for (size_t c = 0; c < num_classes; ++c) support += cm[r][c];
        if (support == 0) continue;
        hit = cm[r][r];
        sum += (double)hit / (double)support;
        ++present;
    }
    if (present == 0) return {0.0, false};
    return {sum / (double)present, true};
}

void put_ordinal(std::map<std::string, double>& out, const std::string& prefix,
                 std::span<const int> truth, std::span<const int> preds, size_t num_classes) {
    size_t correct = 0;
    for (size_t i = 0; i < truth.size(); ++i) correct += truth[i] == preds[i];
    out[prefix + "acc"] = (double)correct / (double)truth.size();
    const auto ba = macro_recall(truth, preds, num_classes);
    if (ba.defined) out[prefix + "b_acc"] = ba.value;
    const auto errs = metrics::ordinal_errors(truth, preds);
    out[prefix + "mae"] = errs.mae;
    out[prefix + "rmse"] = errs.rmse;
    const auto cm = metrics::confusion_matrix(truth, preds, num_classes);
    const auto kappa = metrics::kappa_quadratic(cm);
    if (kappa.defined) out[prefix + "kappa_qw"] = kappa.value;
    out[prefix + "a_uoc"] = metrics::uoc_index(cm);
}

struct Monitor {
    std::string metric_key;  // key into evaluate_split's map
    std::string name;        // human-readable monitor name for logs/checkpoints
};

Monitor monitor_for(model::Variant variant) {
    if (model::has_prog_head(variant)) return {"prog_b_acc", "val_prog_balanced_accuracy"};
    if (model::has_gcs_head(variant)) return {"gcs_b_acc", "val_gcs_balanced_accuracy"};
    return {"age_b_acc", "val_age_balanced_accuracy"};
}

}  // namespace

std::map<std::string, double> evaluate_split(model::MultiTaskModel& m, const CohortView& view,
                                             std::span<const size_t> indices, size_t batch_size) {
    if (!m.initialized()) throw std::runtime_error("evaluate_split: model is not initialized");
    if (indices.empty()) throw std::invalid_argument("evaluate_split: empty index list");
    if (batch_size == 0) throw std::invalid_argument("evaluate_split: batch_size must be positive");
    const Collected col = collect_predictions(m, view, indices, batch_size);
    const model::Variant variant = m.config().variant;
    std::map<std::string, double> out;
    if (model::has_prog_head(variant))
        put_binary(out, "prog_", col.prog_true, col.prog_pred, col.prog_score);
    if (model::has_gcs_head(variant)) {
        if (model::gcs_head_width(variant) == 1)
            put_binary(out, "gcs_", col.gcs_true, col.gcs_pred, col.gcs_score);
        else
            put_ordinal(out, "gcs_", col.gcs_true, col.gcs_pred, model::kGcsNumClasses);
    }
    if (model::has_age_head(variant))
        put_binary(out, "age_", col.age_true, col.age_pred, col.age_score);
    return out;
}

// ---------------------------------------------------------------------------
// training

FoldResult train_one_fold(const model::ModelConfig& mcfg, const CohortView& view,
                          const FoldSplit& split, const TrainConfig& tcfg) {
    model::validate_config(mcfg);
    validate_train_config(tcfg);
    if (view.volumes == nullptr) throw std::invalid_argument("train_one_fold: view has no volumes");
    if (view.d != mcfg.d || view.h != mcfg.h || view.w != mcfg.w)
        throw std::invalid_argument("train_one_fold: view extents do not match the model config");
    if (view.prog.size() != view.gcs_cls.size() || view.prog.size() != view.age_bin.size() ||
        view.prog.size() != view.volumes->size())
        throw std::invalid_argument("train_one_fold: inconsistent view columns");
    if (split.validation.empty())
        throw std::runtime_error("train_one_fold: validation split is empty");

    Rng root(tcfg.seed);
    Rng init_rng = root.fork(0);
    model::MultiTaskModel m(mcfg, init_rng);
    std::vector<Tensor> params = m.parameters();
    OptimizerState opt = make_optimizer_state(params);

    Rng oversample_rng = root.fork(4);
    const std::vector<size_t> train_base = oversample_train(split, view.prog, oversample_rng);

    const Monitor monitor = monitor_for(mcfg.variant);
    EarlyStopper stopper(tcfg.patience_epochs);
    std::vector<nn::ParamEntry> best_state;
    FoldResult result;
    result.fold = split.fold;
    result.monitor = monitor.name;

    std::vector<size_t> order = train_base;
    std::vector<int> prog, gcs, age;
    for (size_t epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
        order = train_base;
        Rng shuffle_rng = root.fork(1).fork(epoch);
        shuffle_indices(order, shuffle_rng);
        Rng augment_rng = root.fork(2).fork(epoch);
        Rng dropout_rng = root.fork(3).fork(epoch);

        double loss_sum = 0.0;
        size_t seen = 0;
        size_t group = 0;
        const size_t n_batches = (order.size() + tcfg.batch_size - 1) / tcfg.batch_size;
        for (size_t b = 0; b < n_batches; ++b) {
            const size_t start = b * tcfg.batch_size;
            const size_t count = std::min(tcfg.batch_size, order.size() - start);
            std::span<const size_t> chunk(order.data() + start, count);

            std::vector<std::vector<double>> volumes(count);
            for (size_t i = 0; i < count; ++i)
                volumes[i] = augment((*view.volumes)[chunk[i]], view.d, view.h, view.w, tcfg,
                                     augment_rng);
            Tape tape;
            Tensor x = batch_tensor(view, chunk, &volumes);
            model::MultiTaskOutput out = m.forward(tape, x, /*training=*/true, dropout_rng);
            gather_targets(view, chunk, prog, gcs, age);
            model::TargetBatch targets = model::make_targets(mcfg.variant, prog, gcs, age);
            model::LossBreakdown loss = model::combined_loss(tape, out, targets, mcfg);
            if (!std::isfinite(loss.l_total))
                throw std::runtime_error("train_one_fold: training diverged (non-finite loss) at epoch " +
                                         std::to_string(epoch));
            tape.backward(loss.total);
            loss_sum += loss.l_total * (double)count;
            seen += count;
            ++group;
            if (group == tcfg.grad_accum_steps || b + 1 == n_batches) {
                const double scale = 1.0 / (double)group;
                for (Tensor& p : params) {
                    double* g = p.grad();
                    for (size_t j = 0; j < p.numel(); ++j) g[j] *= scale;
                }
                adamw_step(params, opt, tcfg);
                for (Tensor& p : params) p.zero_grad();
                ++result.optimizer_steps;
                group = 0;
            }
        }

        const auto val_metrics = evaluate_split(m, view, split.validation, tcfg.batch_size);
        const auto it = val_metrics.find(monitor.metric_key);
        // an undefined monitor scores 0, conservatively counting as no improvement
        const double val_ba = it == val_metrics.end() ? 0.0 : it->second;
        const bool stop = stopper.record(epoch, val_ba);
        if (stopper.improved_last()) best_state = m.state();
        result.epochs.push_back({epoch, loss_sum / (double)seen, val_ba, stopper.improved_last()});
        if (stop) break;
    }

    if (!best_state.empty()) m.load_state(best_state);
    result.best_model = std::move(m);
    result.best_epoch = stopper.best_epoch();
    result.best_val_ba = stopper.best_value();
    return result;
}

// ---------------------------------------------------------------------------
// cross-validation

std::map<std::string, AggregateMetric> aggregate_fold_metrics(
    const std::vector<FoldReport>& folds) {
    std::map<std::string, std::vector<double>> values;
    for (const FoldReport& fr : folds) {
        if (fr.failed) continue;
        for (const auto& [name, value] : fr.metrics) values[name].push_back(value);
    }
    std::map<std::string, AggregateMetric> out;
    for (const auto& [name, xs] : values) {
        AggregateMetric agg;
        agg.count = xs.size();
        double sum = 0.0;
        for (double x : xs) sum += x;
        agg.mean = sum / (double)xs.size();
        if (xs.size() >= 2) {
            double ss = 0.0;
            for (double x : xs) ss += (x - agg.mean) * (x - agg.mean);
            agg.sd = std::sqrt(ss / (double)(xs.size() - 1));
        }
        out[name] = agg;
    }
    return out;
}

CvResult run_cv(const CohortView& view, const CvConfig& cfg) {
    model::validate_config(cfg.model);
    validate_train_config(cfg.train);
    if (cfg.k < 2) fail("run_cv: k must be at least 2");

    const auto splits = stratified_kfold(view.prog, cfg.k, cfg.train.seed);
    if (!cfg.checkpoint_dir.empty())
        std::filesystem::create_directories(cfg.checkpoint_dir);

    CvResult result;
    result.k = cfg.k;
    result.variant = model::variant_name(cfg.model.variant);
    for (size_t f = 0; f < cfg.k; ++f) {
        FoldReport report;
        report.fold = f;
        try {
            TrainConfig tc = cfg.train;
            tc.seed = cfg.train.seed ^ (uint64_t)f;
            FoldResult fr = train_one_fold(cfg.model, view, splits[f], tc);
            report.best_epoch = fr.best_epoch;
            report.best_val_ba = fr.best_val_ba;
            report.monitor = fr.monitor;
            report.epochs = fr.epochs;
            report.metrics =
                evaluate_split(fr.best_model, view, splits[f].test, cfg.train.batch_size);
            if (!cfg.checkpoint_dir.empty()) {
                model::CheckpointMeta meta;
                meta.epoch = (int)fr.best_epoch;
                meta.monitor = fr.monitor;
                meta.value = fr.best_val_ba;
                const std::string path = (std::filesystem::path(cfg.checkpoint_dir) /
                                          ("fold" + std::to_string(f) + ".ckpt"))
                                             .string();
                model::save_checkpoint(path, fr.best_model, meta);
            }
        } catch (const std::exception& e) {
            report.failed = true;
            report.error = e.what();
            result.partial = true;
        }
        result.folds.push_back(std::move(report));
    }
    result.aggregate = aggregate_fold_metrics(result.folds);
    return result;
}

// ---------------------------------------------------------------------------
// reports

namespace {

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace

void save_epoch_logs_csv(const std::string& path, const CvResult& result) {
    std::ostringstream os;
    os << "fold,epoch,train_loss,val_balanced_accuracy,improved\n";
    for (const FoldReport& fr : result.folds)
        for (const EpochLog& e : fr.epochs)
            os << fr.fold << ',' << e.epoch << ',' << fmt_double(e.train_loss) << ','
               << fmt_double(e.val_balanced_accuracy) << ',' << (e.improved ? 1 : 0) << '\n';
    write_text_file(path, os.str());
}

void save_fold_metrics_csv(const std::string& path, const CvResult& result) {
    std::set<std::string> keys;
    for (const FoldReport& fr : result.folds)
        for (const auto& [name, _] : fr.metrics) keys.insert(name);
    std::ostringstream os;
    os << "fold,failed";
    for (const auto& k : keys) os << ',' << k;
    os << '\n';
    for (const FoldReport& fr : result.folds) {
        os << fr.fold << ',' << (fr.failed ? 1 : 0);
        for (const auto& k : keys) {
            const auto it = fr.metrics.find(k);
            os << ',';
            if (it == fr.metrics.end())
                os << "NA";
            else
                os << fmt_double(it->second);
        }
        os << '\n';
    }
    write_text_file(path, os.str());
}

void save_aggregate_json(const std::string& path, const CvResult& result) {
    ordered_json j;
    j["variant"] = result.variant;
    j["k"] = result.k;
    j["partial"] = result.partial;
    j["folds"] = ordered_json::array();
    for (const FoldReport& fr : result.folds) {
        ordered_json jf;
        jf["fold"] = fr.fold;
        jf["failed"] = fr.failed;
        if (fr.failed) jf["error"] = fr.error;
        jf["best_epoch"] = fr.best_epoch;
        jf["best_val_balanced_accuracy"] = fr.best_val_ba;
        jf["monitor"] = fr.monitor;
        jf["epochs_trained"] = fr.epochs.size();
        ordered_json jm = ordered_json::object();
        for (const auto& [name, value] : fr.metrics) jm[name] = value;
        jf["metrics"] = jm;
        j["folds"].push_back(jf);
    }
    ordered_json ja = ordered_json::object();
    for (const auto& [name, agg] : result.aggregate) {
        ja[name] = {{"mean", agg.mean}, {"sd", agg.sd}, {"count", agg.count}};
    }
    j["aggregate"] = ja;
    write_text_file(path, j.dump(2) + "\n");
}

}  // namespace mtp::train
