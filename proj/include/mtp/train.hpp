#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mtp/model.hpp"
#include "mtp/rng.hpp"
#include "mtp/synthdata.hpp"
#include "mtp/tensor.hpp"

namespace mtp::train {

// ---------------------------------------------------------------------------
// configuration

struct TrainConfig {
    size_t batch_size = 8;
    size_t grad_accum_steps = 3;  // effective batch = batch_size * accum
    double learning_rate = 0.001;
    double weight_decay = 0.0001;
    size_t patience_epochs = 20;
    size_t max_epochs = 200;
    // each augmentation applies independently with this probability
    double augment_prob = 0.5;
    double rotation_limit_deg = 5.0;  // axial rotation, degrees
    double zoom_limit = 0.10;         // zoom factor in [1-z, 1+z]
    double noise_mean = 0.0;
    double noise_std = 0.01;
    uint64_t seed = 1;
};

void validate_train_config(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// cohort view
//
// A borrowed, model-agnostic window onto a cohort: volumes plus the three
// integer target columns. The view does not own the volumes; keep the
// backing cohort alive while the view is in use.

struct CohortView {
    const std::vector<std::vector<double>>* volumes = nullptr;
    size_t d = 0, h = 0, w = 0;
    std::vector<int> prog;     // prognosis 0/1
    std::vector<int> gcs_cls;  // ordinal GCS class 0/1/2
    std::vector<int> age_bin;  // age bin 0/1
    size_t size() const { return prog.size(); }
};

CohortView view_of(const synth::SyntheticCohort& cohort);

// ---------------------------------------------------------------------------
// splits

struct FoldSplit {
    size_t fold = 0;
    std::vector<size_t> train;
    std::vector<size_t> validation;
    std::vector<size_t> test;
};

// Per-class shuffled round-robin assignment: class members are shuffled
// once, bucket j%k tests in fold j; the next bucket in rotation serves as
// validation (one stratified 1/(k-1) share of the non-test data) and the
// remaining k-2 buckets train. Throws when any class has fewer than k
// members.
std::vector<FoldSplit> stratified_kfold(std::span<const int> labels, size_t k, uint64_t seed);

// Duplicate minority-class training indices uniformly at random until both
// classes are equally frequent. Validation and test stay untouched; throws
// on an empty or single-class training list.
std::vector<size_t> oversample_train(const FoldSplit& split, std::span<const int> labels,
                                     Rng& rng);

// ---------------------------------------------------------------------------
// augmentation
//
// All resampling is trilinear with zero padding outside the volume; a
// rotation of 0 degrees and a zoom factor of 1 reproduce the input bitwise
// because the sampling grid then lands exactly on voxel centers.

std::vector<double> rotate_axial(const std::vector<double>& volume, size_t d, size_t h, size_t w,
                                 double degrees);
std::vector<double> zoom_volume(const std::vector<double>& volume, size_t d, size_t h, size_t w,
                                double factor);
std::vector<double> add_gaussian_noise(const std::vector<double>& volume, double mean,
                                       double stddev, Rng& rng);

// Rotation, zoom, and noise applied in that order, each independently with
// probability cfg.augment_prob; parameters are drawn only for the
// transforms that fire, so an all-miss draw is the identity.
std::vector<double> augment(const std::vector<double>& volume, size_t d, size_t h, size_t w,
                            const TrainConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// optimizer

struct OptimizerState {
    std::vector<std::vector<double>> m;  // first moments, parameter shapes
    std::vector<std::vector<double>> v;  // second moments
    size_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

OptimizerState make_optimizer_state(const std::vector<Tensor>& params);

// One decoupled-weight-decay update from the gradients currently stored on
// the parameters: p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p,
// with bias-corrected moments. Throws on any non-finite gradient.
void adamw_step(std::vector<Tensor>& params, OptimizerState& state, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// early stopping

// Strict-improvement tracker: record() returns true when training should
// stop because `patience` consecutive epochs failed to beat the best value.
// Ties keep the earlier epoch.
class EarlyStopper {
  public:
    explicit EarlyStopper(size_t patience) : patience_(patience) {}
    bool record(size_t epoch, double value);
    bool improved_last() const { return improved_last_; }
    size_t best_epoch() const { return best_epoch_; }
    double best_value() const { return best_value_; }

  private:
    size_t patience_;
    double best_value_ = -std::numeric_limits<double>::infinity();
    size_t best_epoch_ = 0;
    size_t stale_ = 0;
    bool improved_last_ = false;
};

// ---------------------------------------------------------------------------
// training

struct EpochLog {
    size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_balanced_accuracy = 0.0;
    bool improved = false;
};

struct FoldResult {
    size_t fold = 0;
    model::MultiTaskModel best_model;  // parameters restored to the best epoch
    size_t best_epoch = 0;             // 1-based
    double best_val_ba = 0.0;
    std::string monitor;               // name of the stopping metric
    std::vector<EpochLog> epochs;
    size_t optimizer_steps = 0;
};

// Trains one model from fresh initialization on the split's training
// indices (oversampled and augmented), stopping early on the validation
// balanced accuracy of the prognosis head (or of the variant's own task
// for single-task baselines). Deterministic for a fixed cfg.seed.
FoldResult train_one_fold(const model::ModelConfig& mcfg, const CohortView& view,
                          const FoldSplit& split, const TrainConfig& tcfg);

// Test-split metrics for every active head; only defined metrics appear.
// Keys: prog_{acc,b_acc,spec,npv,prec,recall,f1,auc}; gcs_{...} likewise
// for the binary head, or gcs_{acc,b_acc,mae,rmse,kappa_qw,a_uoc} for the
// ordinal head; age_{acc,...,auc} for the age head.
std::map<std::string, double> evaluate_split(model::MultiTaskModel& m, const CohortView& view,
                                             std::span<const size_t> indices, size_t batch_size);

// ---------------------------------------------------------------------------
// cross-validation

struct CvConfig {
    size_t k = 10;
    model::ModelConfig model;
    TrainConfig train;
    // when non-empty, fold checkpoints are written here as fold<j>.ckpt
    std::string checkpoint_dir;
};

struct FoldReport {
    size_t fold = 0;
    bool failed = false;
    std::string error;
    size_t best_epoch = 0;
    double best_val_ba = 0.0;
    std::string monitor;
    std::map<std::string, double> metrics;
    std::vector<EpochLog> epochs;
};

struct AggregateMetric {
    double mean = 0.0;
    double sd = 0.0;    // sample standard deviation; 0 when count < 2
    size_t count = 0;   // folds where the metric was defined
};

struct CvResult {
    size_t k = 0;
    std::string variant;
    bool partial = false;  // at least one fold failed
    std::vector<FoldReport> folds;
    std::map<std::string, AggregateMetric> aggregate;
};

// Mean and sample SD per metric over the folds where it is defined.
std::map<std::string, AggregateMetric> aggregate_fold_metrics(
    const std::vector<FoldReport>& folds);

// One model per fold from fresh initialization; fold seeds derive as
// cfg.train.seed XOR fold index. Folds are stratified by prognosis labels
// for every variant so ablations compare on identical splits. A fold that
// throws is flagged and aggregation continues without it.
CvResult run_cv(const CohortView& view, const CvConfig& cfg);

// ---------------------------------------------------------------------------
// reports

void save_epoch_logs_csv(const std::string& path, const CvResult& result);
void save_fold_metrics_csv(const std::string& path, const CvResult& result);
void save_aggregate_json(const std::string& path, const CvResult& result);

}  // namespace mtp::train
