#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mtp/model.hpp"

namespace mtp::saliency {

// ---------------------------------------------------------------------------
// tags

enum class Head { prognosis, gcs, age };
enum class Method { guided_bp, grad_cam, guided_grad_cam };

const char* head_name(Head head);
const char* method_name(Method method);
Head head_from_name(const std::string& name);

// whether the given model variant carries the head at all
bool head_available(model::Variant variant, Head head);

// ---------------------------------------------------------------------------
// domain types

struct SaliencyVolume {
    std::vector<double> values;  // input spatial shape, d*h*w, w fastest
    size_t d = 0, h = 0, w = 0;
    Head head = Head::prognosis;
    Method method = Method::guided_bp;
    bool degenerate = false;       // set by normalize_threshold on a flat input
    double threshold_value = 0.0;  // normalized-scale cut applied, 0 if none
};

struct CamMap {
    std::vector<double> low;       // feature-layer shape, all values >= 0
    size_t ld = 0, lh = 0, lw = 0;
    std::vector<double> up;        // upsampled to the input shape, >= 0
    size_t d = 0, h = 0, w = 0;
    Head head = Head::prognosis;
};

enum class Upsample { trilinear, nearest };

// sentinel selecting the deepest retained feature layer
inline constexpr size_t kDeepestLayer = SIZE_MAX;

// ---------------------------------------------------------------------------
// attribution
//
// Every pass runs the frozen model in eval mode on a private tape and
// targets the head's pre-sigmoid logit (the mean of the two cumulative
// logits for the ordinal GCS head — the constant factor is irrelevant after
// min-max normalization). Parameter values and batch-norm running moments
// are left bit-identical; accumulated parameter gradients are cleared
// before returning. The model object itself buffers its feature maps, so
// concurrent passes need either one model instance per thread (via
// state()/load_state()) or external serialization.

// Gradient of the target logit w.r.t. the input volume, with every ReLU
// backward gated to pass only where forward input and upstream gradient
// are both positive.
SaliencyVolume guided_backprop(model::MultiTaskModel& m, std::span<const double> volume,
                               Head head);

// Per-channel weights = spatial average of the logit's gradient at the
// chosen feature layer; map = ReLU(sum_c weight_c * activation_c),
// upsampled to the input shape.
CamMap grad_cam(model::MultiTaskModel& m, std::span<const double> volume, Head head,
                size_t layer = kDeepestLayer, Upsample mode = Upsample::trilinear);

// The CAM arithmetic on raw activation/gradient buffers (layout [C, ld, lh,
// lw]), exposed so the closed-form examples can pin it directly.
CamMap cam_from_feature(std::span<const double> activations, std::span<const double> gradients,
                        size_t channels, size_t ld, size_t lh, size_t lw, size_t d, size_t h,
                        size_t w, Upsample mode = Upsample::trilinear);

// Align-corners resampling of a single-channel low-resolution map onto the
// full grid; trilinear keeps constants exactly, nearest copies voxels.
std::vector<double> upsample_map(std::span<const double> low, size_t ld, size_t lh, size_t lw,
                                 size_t d, size_t h, size_t w, Upsample mode);

// elementwise product of the guided-backprop volume and the upsampled CAM
SaliencyVolume guided_grad_cam(const SaliencyVolume& gbp, const CamMap& cam);

// the upsampled CAM alone, wrapped for export alongside the other methods
SaliencyVolume cam_saliency(const CamMap& cam);

// Absolute values min-max normalized to [0,1] over the whole volume, then
// everything strictly below the given quantile of the nonzero normalized
// values is zeroed (the quantile uses linear interpolation between order
// statistics). A constant input yields an all-zero volume with the
// degenerate flag set. quantile must lie in (0,1).
SaliencyVolume normalize_threshold(const SaliencyVolume& sal, double quantile = 0.9);

// ---------------------------------------------------------------------------
// export

// writes <path_base>.raw (little-endian float64) plus a <path_base>.json
// sidecar recording shape, head, method, and threshold metadata
void export_raw(const std::string& path_base, const SaliencyVolume& sal);

// One 8-bit binary PGM per axial slice, named <id>_<method>_<head>_z<k>.pgm
// inside dir. Values are clamped to [0,1] and scaled to 0..255; with
// per_slice_normalize each slice is min-max normalized on its own first
// (flat slices render black). Returns the written paths in z order.
std::vector<std::string> export_pgm_slices(const std::string& dir, const std::string& subject_id,
                                           const SaliencyVolume& sal,
                                           bool per_slice_normalize = false);

}  // namespace mtp::saliency
