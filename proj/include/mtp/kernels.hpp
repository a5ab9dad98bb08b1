#pragma once

#include <cstddef>

namespace mtp::kernels {

// Worker-thread budget for the OpenMP kernels. Every kernel assigns each
// output element to exactly one thread and accumulates it serially, so results
// are bit-identical for any thread count.
void set_threads(int n);
int threads();

struct Conv3dShape {
    size_t n, cin, d, h, w;       // input
    size_t cout, kd, kh, kw;      // kernel
    size_t stride, padding;
    size_t od() const { return (d + 2 * padding - kd) / stride + 1; }
    size_t oh() const { return (h + 2 * padding - kh) / stride + 1; }
    size_t ow() const { return (w + 2 * padding - kw) / stride + 1; }
};

void conv3d_forward(const Conv3dShape& s, const double* in, const double* weight,
                    const double* bias, double* out);
void conv3d_backward_input(const Conv3dShape& s, const double* grad_out, const double* weight,
                           double* grad_in_accum);
void conv3d_backward_weight(const Conv3dShape& s, const double* in, const double* grad_out,
                            double* grad_weight_accum);
void conv3d_backward_bias(const Conv3dShape& s, const double* grad_out, double* grad_bias_accum);

// 2x2x2 average pooling, stride 2, floor semantics on odd extents
struct Pool2Shape {
    size_t n, c, d, h, w;
    size_t od() const { return d / 2; }
    size_t oh() const { return h / 2; }
    size_t ow() const { return w / 2; }
};

void avg_pool2_forward(const Pool2Shape& s, const double* in, double* out);
void avg_pool2_backward(const Pool2Shape& s, const double* grad_out, double* grad_in_accum);

// out[n,g] = sum_f in[n,f] * w[f,g] + b[g]
void dense_forward(size_t n, size_t f, size_t g, const double* in, const double* weight,
                   const double* bias, double* out);

}  // namespace mtp::kernels
