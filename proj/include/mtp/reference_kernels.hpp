#pragma once

#include "mtp/kernels.hpp"

// Naive serial kernels. Straight transcription of the definitions, every
// index bounds-checked against the zero-padded input. Slow on purpose:
// these are the oracle the parallel kernels are tested against, and the
// baseline the benchmark compares with.
namespace mtp::refk {

using kernels::Conv3dShape;
using kernels::Pool2Shape;

void conv3d_forward(const Conv3dShape& s, const double* in, const double* w,
                    const double* b, double* out);
void conv3d_backward_input(const Conv3dShape& s, const double* gout,
                           const double* w, double* gin);
void conv3d_backward_weight(const Conv3dShape& s, const double* in,
                            const double* gout, double* gw);
void conv3d_backward_bias(const Conv3dShape& s, const double* gout, double* gb);

void avg_pool2_forward(const Pool2Shape& s, const double* in, double* out);
void avg_pool2_backward(const Pool2Shape& s, const double* gout, double* gin);

// out[n,g] = sum_f in[n,f] * w[f,g] + b[g]
void dense_forward(std::size_t n, std::size_t f, std::size_t g,
                   const double* in, const double* w, const double* b,
                   double* out);

}  // namespace mtp::refk
