#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mtp/nn.hpp"
#include "mtp/rng.hpp"
#include "mtp/tape.hpp"
#include "mtp/tensor.hpp"

namespace mtp::model {

// ---------------------------------------------------------------------------
// configuration

// Four single-task baselines plus the two multi-task variants (binary or
// ordinal GCS auxiliary head). The prognosis head is the clinical endpoint;
// GCS and age heads inject the tabular signal as training-time outputs.
enum class Variant {
    baseline_prognosis,
    baseline_gcs_bin,
    baseline_gcs_ord,
    baseline_age,
    mt_bin,
    mt_ord,
};

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

bool has_prog_head(Variant v);
bool has_gcs_head(Variant v);
bool has_age_head(Variant v);
// 0 when the variant has no GCS head, 1 for binary, K-1 = 2 for ordinal
size_t gcs_head_width(Variant v);

inline constexpr int kGcsNumClasses = 3;

struct ModelConfig {
    Variant variant = Variant::mt_ord;
    // loss mixture weights; the defaults are the empirically optimized triple
    double lambda_prog = 0.4;
    double lambda_gcs = 0.3;
    double lambda_age = 0.3;
    // densely connected backbone: stem channels, then `blocks` dense blocks
    // of `block_layers` layers each at the given growth rate, joined by
    // channel-halving transitions with stride-2 average pooling
    size_t blocks = 2;
    size_t block_layers = 2;
    size_t growth = 4;
    size_t init_channels = 8;
    // input volume extents, depth x height x width
    size_t d = 8;
    size_t h = 32;
    size_t w = 32;
    double dropout = 0.2;
};

// Throws invalid_argument when the configuration is internally inconsistent:
// non-positive extents or backbone sizes, spatial extents not divisible by
// the transition downsampling factor, channel counts that cannot be halved
// evenly, dropout outside [0,1), a negative lambda, a zero lambda on an
// active head, or (for multi-task variants) any lambda not strictly positive.
void validate_config(const ModelConfig& cfg);

// pooled feature width after the final block, i.e. the head input dimension
size_t feature_dim(const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// batched model I/O types

// Per-head logits for a batch; tensors are defined only for the heads the
// variant activates. Widths: prognosis [N,1], GCS [N,1] or [N,2], age [N,1].
struct MultiTaskOutput {
    Tensor prog_logit;
    Tensor gcs_logits;
    Tensor age_logit;
};

// Training targets matching the active heads. prog/age are 0-1 columns; gcs
// is the binary severe flag [N,1] or the cumulative ordinal code [N,2].
struct TargetBatch {
    Tensor prog;
    Tensor gcs;
    Tensor age;
};

// Build a TargetBatch from integer labels: prognosis 0/1, ordinal GCS class
// 0/1/2, age bin 0/1. The binary-GCS target is class == 2 (severe); the
// ordinal target is the cumulative encoding of the class.
TargetBatch make_targets(Variant variant, std::span<const int> prog_labels,
                         std::span<const int> gcs_classes, std::span<const int> age_bins);

// Per-head batch-mean losses and their weighted combination. `total` is the
// live tape scalar: backpropagating it sends gradient into the shared
// backbone through every active head. Inactive heads report 0.
struct LossBreakdown {
    double l_prog = 0.0;
    double l_gcs = 0.0;
    double l_age = 0.0;
    double l_total = 0.0;
    Tensor total;
};

LossBreakdown combined_loss(Tape& tape, const MultiTaskOutput& output, const TargetBatch& targets,
                            const ModelConfig& cfg);

// Hard per-sample decisions; vectors are empty for inactive heads. The
// probability tie at exactly `threshold` resolves to the positive class /
// the higher ordinal bit, documented for reproducibility.
struct Predictions {
    std::vector<int> prognosis;
    std::vector<int> gcs;  // class 0/1/2 for ordinal, 0/1 severe flag for binary
    std::vector<int> age;
};

Predictions predict(const MultiTaskOutput& output, Variant variant, double threshold = 0.5);

// ---------------------------------------------------------------------------
// the model

class MultiTaskModel {
  public:
    MultiTaskModel() = default;
    // initializes all parameters from the rng (He-uniform conv/dense weights,
    // zero biases, identity batch norm)
    MultiTaskModel(const ModelConfig& cfg, Rng& rng);

    const ModelConfig& config() const { return cfg_; }
    bool initialized() const { return initialized_; }

    // One batched pass. Training mode uses batch statistics, updates the
    // running batch-norm moments, and samples dropout from `rng`; eval mode
    // is deterministic and reads the running moments. The final pre-pooling
    // feature map is retained for attribution (last_feature_map()).
    MultiTaskOutput forward(Tape& tape, const Tensor& x, bool training, Rng& rng);

    // shared handle to the most recent forward's final feature map
    // [N, C, d', h', w']; after a backward pass its grad buffer holds the
    // upstream gradient needed by Grad-CAM
    Tensor last_feature_map() const { return last_features_; }

    // Spatial feature layers retained by the most recent forward, one per
    // dense block: layer b < blocks-1 is block b's post-transition output,
    // and the deepest layer (blocks-1) is the final pre-pooling feature map
    // (== last_feature_map()). Throws std::invalid_argument on a bad id.
    size_t num_feature_layers() const { return block_features_.size(); }
    Tensor block_feature(size_t layer) const;

    // every learned tensor in a stable order (no running stats)
    std::vector<Tensor> parameters();

    // named snapshot including batch-norm running moments
    std::vector<nn::ParamEntry> state() const;
    // restore from a snapshot produced by state(); throws on any mismatch
    void load_state(const std::vector<nn::ParamEntry>& entries);

  private:
    struct Transition {
        nn::Conv3dParams conv;  // 1x1x1 channel-halving projection
    };

    // Single canonical traversal over all parameters, shared by
    // parameters(), state(), and load_state() so a checkpoint can never
    // silently drop or reorder a tensor. `moments` may be null to skip the
    // batch-norm running statistics.
    struct Visitor {
        std::function<void(const std::string&, Tensor&)> tensor;
        std::function<void(const std::string&, std::vector<double>&)> moments;
    };
    void visit(const Visitor& v);

    ModelConfig cfg_;
    bool initialized_ = false;

    nn::Conv3dParams stem_conv_;
    nn::BatchNormParams stem_bn_;
    std::vector<nn::DenseBlockParams> blocks_;
    std::vector<Transition> transitions_;
    nn::BatchNormParams final_bn_;
    nn::DenseParams head_prog_;
    nn::DenseParams head_gcs_;
    nn::DenseParams head_age_;

    Tensor last_features_;
    std::vector<Tensor> block_features_;
};

// ---------------------------------------------------------------------------
// checkpoints: binary parameter file plus a JSON sidecar at <path>.json

struct CheckpointMeta {
    int epoch = -1;
    std::string monitor;          // name of the tracked validation metric
    double value = 0.0;           // its value at save time
};

void save_checkpoint(const std::string& path, const MultiTaskModel& model,
                     const CheckpointMeta& meta);
MultiTaskModel load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

}  // namespace mtp::model
