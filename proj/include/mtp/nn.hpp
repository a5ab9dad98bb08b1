#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mtp/rng.hpp"
#include "mtp/tape.hpp"
#include "mtp/tensor.hpp"

namespace mtp::nn {

// ---------------------------------------------------------------------------
// parameter bundles

struct Conv3dParams {
    Tensor weight;  // [cout, cin, k, k, k]
    Tensor bias;    // [cout]
    Conv3dParams() = default;
    Conv3dParams(size_t cin, size_t cout, size_t k, Rng& rng);
};

struct DenseParams {
    Tensor weight;  // [fin, fout]
    Tensor bias;    // [fout]
    DenseParams() = default;
    DenseParams(size_t fin, size_t fout, Rng& rng);
};

struct BatchNormParams {
    Tensor gamma;  // [c], init 1
    Tensor beta;   // [c], init 0
    std::vector<double> running_mean;  // init 0
    std::vector<double> running_var;   // init 1
    double eps = 1e-5;
    double momentum = 0.1;
    BatchNormParams() = default;
    explicit BatchNormParams(size_t channels);
    size_t channels() const { return running_mean.size(); }
};

// one BN -> ReLU -> conv3d(3x3x3, pad 1) layer of a dense block
struct DenseLayerParams {
    BatchNormParams bn;
    Conv3dParams conv;
    DenseLayerParams() = default;
    DenseLayerParams(size_t cin, size_t growth, Rng& rng);
};

struct DenseBlockParams {
    std::vector<DenseLayerParams> layers;
    DenseBlockParams() = default;
    DenseBlockParams(size_t cin, size_t growth, size_t num_layers, Rng& rng);
    size_t out_channels(size_t cin) const { return cin + layers.size() * growth_(); }

  private:
    size_t growth_() const;
};

// ---------------------------------------------------------------------------
// tape-recorded ops

Tensor conv3d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
              size_t stride, size_t padding);
Tensor dense(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor global_avg_pool(Tape& tape, const Tensor& x);      // [N,C,D,H,W] -> [N,C]
Tensor avg_pool3d_2(Tape& tape, const Tensor& x);         // 2x2x2 stride 2
Tensor batch_norm(Tape& tape, const Tensor& x, BatchNormParams& p, bool training);
Tensor dropout(Tape& tape, const Tensor& x, double rate, bool training, Rng& rng);
Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b);
Tensor dense_block(Tape& tape, const Tensor& x, DenseBlockParams& p, bool training);

// mean over all elements of the stable elementwise BCE given logits
Tensor bce_with_logits_mean(Tape& tape, const Tensor& logits, const Tensor& targets);
// scalar mean over every element; backward spreads grad/numel uniformly
Tensor mean_all(Tape& tape, const Tensor& x);
// sum of weight[i]*terms[i], skipping zero weights entirely so a zeroed
// term contributes neither value nor gradient
Tensor weighted_sum(Tape& tape, const std::vector<Tensor>& terms,
                    const std::vector<double>& weights);

// stable scalar helpers (no tape)
double sigmoid_value(double z);
double bce_with_logits_value(double logit, double target);

// ---------------------------------------------------------------------------
// flat binary parameter serialization
//
// layout: magic "MTPG", version u32, count u64, then per parameter:
// name length u32, UTF-8 name, rank u32, extents u64 each, values as
// little-endian IEEE-754 doubles.

struct ParamEntry {
    std::string name;
    std::vector<size_t> shape;
    std::vector<double> values;
};

inline constexpr uint32_t kParamFormatVersion = 1;

void save_params(const std::string& path, const std::vector<ParamEntry>& params);
std::vector<ParamEntry> load_params(const std::string& path);

}  // namespace mtp::nn
