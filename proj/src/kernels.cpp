#include "mtp/kernels.hpp"

#include <algorithm>
#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mtp::kernels {

namespace {
std::atomic<int> g_threads{0};  // 0 = library default

inline long clamp_lo(long v, long lo) { return v < lo ? lo : v; }
inline long clamp_hi(long v, long hi) { return v > hi ? hi : v; }
// floor(num/den) for den > 0 with the only negative case mapped below zero
inline long floor_div(long num, long den) { return num < 0 ? -1 : num / den; }
}  // namespace

void set_threads(int n) { g_threads.store(n < 1 ? 1 : n); }

int threads() {
    int t = g_threads.load();
    if (t > 0) return t;
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void conv3d_forward(const Conv3dShape& s, const double* in, const double* weight,
                    const double* bias, double* out) {
    const long OD = (long)s.od(), OH = (long)s.oh(), OW = (long)s.ow();
    const long D = (long)s.d, H = (long)s.h, W = (long)s.w;
    const long KD = (long)s.kd, KH = (long)s.kh, KW = (long)s.kw;
    const long st = (long)s.stride, pad = (long)s.padding;
    const size_t in_c_stride = (size_t)(D * H * W);
    const size_t out_c_stride = (size_t)(OD * OH * OW);
    const long tasks = (long)(s.n * s.cout);

#pragma omp parallel for schedule(static) num_threads(threads())
    for (long task = 0; task < tasks; ++task) {
        const size_t n = (size_t)task / s.cout;
        const size_t oc = (size_t)task % s.cout;
        double* out_base = out + (n * s.cout + oc) * out_c_stride;
        const double* w_base = weight + oc * s.cin * (size_t)(KD * KH * KW);
        const double b = bias ? bias[oc] : 0.0;
        for (size_t i = 0; i < out_c_stride; ++i) out_base[i] = b;

        for (size_t ic = 0; ic < s.cin; ++ic) {
            const double* in_base = in + (n * s.cin + ic) * in_c_stride;
            const double* w_ic = w_base + ic * (size_t)(KD * KH * KW);
            for (long kd = 0; kd < KD; ++kd) {
                for (long kh = 0; kh < KH; ++kh) {
                    for (long kw = 0; kw < KW; ++kw) {
                        const double wv = w_ic[(kd * KH + kh) * KW + kw];
                        if (wv == 0.0) continue;
                        // valid output ranges so the input index stays in bounds
                        const long od_lo = clamp_lo((pad - kd + st - 1) / st, 0);
                        const long od_hi = clamp_hi(floor_div(D - 1 + pad - kd, st), OD - 1);
                        const long oh_lo = clamp_lo((pad - kh + st - 1) / st, 0);
                        const long oh_hi = clamp_hi(floor_div(H - 1 + pad - kh, st), OH - 1);
                        const long ow_lo = clamp_lo((pad - kw + st - 1) / st, 0);
                        const long ow_hi = clamp_hi(floor_div(W - 1 + pad - kw, st), OW - 1);
                        for (long od = od_lo; od <= od_hi; ++od) {
                            const long id = od * st + kd - pad;
                            for (long oh = oh_lo; oh <= oh_hi; ++oh) {
                                const long ih = oh * st + kh - pad;
                                const double* in_row = in_base + (id * H + ih) * W;
                                double* out_row = out_base + (od * OH + oh) * OW;
                                if (st == 1) {
                                    const double* ir = in_row + (kw - pad);
                                    for (long ow = ow_lo; ow <= ow_hi; ++ow)
                                        out_row[ow] += wv * ir[ow];
                                } else {
                                    for (long ow = ow_lo; ow <= ow_hi; ++ow)
                                        out_row[ow] += wv * in_row[ow * st + kw - pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv3d_backward_input(const Conv3dShape& s, const double* grad_out, const double* weight,
                           double* grad_in_accum) {
    const long OD = (long)s.od(), OH = (long)s.oh(), OW = (long)s.ow();
    const long D = (long)s.d, H = (long)s.h, W = (long)s.w;
    const long KD = (long)s.kd, KH = (long)s.kh, KW = (long)s.kw;
    const long st = (long)s.stride, pad = (long)s.padding;
    const size_t in_c_stride = (size_t)(D * H * W);
    const size_t out_c_stride = (size_t)(OD * OH * OW);
    const long tasks = (long)(s.n * s.cin);

    // gather formulation: each input element sums the outputs it reached
#pragma omp parallel for schedule(static) num_threads(threads())
    for (long task = 0; task < tasks; ++task) {
        const size_t n = (size_t)task / s.cin;
        const size_t ic = (size_t)task % s.cin;
        double* gin_base = grad_in_accum + (n * s.cin + ic) * in_c_stride;
        for (size_t oc = 0; oc < s.cout; ++oc) {
            const double* gout_base = grad_out + (n * s.cout + oc) * out_c_stride;
            const double* w_ic =
                weight + (oc * s.cin + ic) * (size_t)(KD * KH * KW);
            for (long kd = 0; kd < KD; ++kd) {
                for (long kh = 0; kh < KH; ++kh) {
                    for (long kw = 0; kw < KW; ++kw) {
                        const double wv = w_ic[(kd * KH + kh) * KW + kw];
                        if (wv == 0.0) continue;
                        const long od_lo = clamp_lo((pad - kd + st - 1) / st, 0);
                        const long od_hi = clamp_hi(floor_div(D - 1 + pad - kd, st), OD - 1);
                        const long oh_lo = clamp_lo((pad - kh + st - 1) / st, 0);
                        const long oh_hi = clamp_hi(floor_div(H - 1 + pad - kh, st), OH - 1);
                        const long ow_lo = clamp_lo((pad - kw + st - 1) / st, 0);
                        const long ow_hi = clamp_hi(floor_div(W - 1 + pad - kw, st), OW - 1);
                        for (long od = od_lo; od <= od_hi; ++od) {
                            const long id = od * st + kd - pad;
                            for (long oh = oh_lo; oh <= oh_hi; ++oh) {
                                const long ih = oh * st + kh - pad;
                                const double* gout_row = gout_base + (od * OH + oh) * OW;
                                double* gin_row = gin_base + (id * H + ih) * W;
                                if (st == 1) {
                                    double* gr = gin_row + (kw - pad);
                                    for (long ow = ow_lo; ow <= ow_hi; ++ow)
                                        gr[ow] += wv * gout_row[ow];
                                } else {
                                    for (long ow = ow_lo; ow <= ow_hi; ++ow)
                                        gin_row[ow * st + kw - pad] += wv * gout_row[ow];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv3d_backward_weight(const Conv3dShape& s, const double* in, const double* grad_out,
                            double* grad_weight_accum) {
    const long OD = (long)s.od(), OH = (long)s.oh(), OW = (long)s.ow();
    const long D = (long)s.d, H = (long)s.h, W = (long)s.w;
    const long KD = (long)s.kd, KH = (long)s.kh, KW = (long)s.kw;
    const long st = (long)s.stride, pad = (long)s.padding;
    const size_t in_c_stride = (size_t)(D * H * W);
    const size_t out_c_stride = (size_t)(OD * OH * OW);
    const long tasks = (long)(s.cout * s.cin);

#pragma omp parallel for schedule(static) num_threads(threads())
    for (long task = 0; task < tasks; ++task) {
        const size_t oc = (size_t)task / s.cin;
        const size_t ic = (size_t)task % s.cin;
        double* gw = grad_weight_accum + (oc * s.cin + ic) * (size_t)(KD * KH * KW);
        for (long kd = 0; kd < KD; ++kd) {
            for (long kh = 0; kh < KH; ++kh) {
                for (long kw = 0; kw < KW; ++kw) {
                    const long od_lo = clamp_lo((pad - kd + st - 1) / st, 0);
                    const long od_hi = clamp_hi(floor_div(D - 1 + pad - kd, st), OD - 1);
                    const long oh_lo = clamp_lo((pad - kh + st - 1) / st, 0);
                    const long oh_hi = clamp_hi(floor_div(H - 1 + pad - kh, st), OH - 1);
                    const long ow_lo = clamp_lo((pad - kw + st - 1) / st, 0);
                    const long ow_hi = clamp_hi(floor_div(W - 1 + pad - kw, st), OW - 1);
                    double acc = 0.0;
                    for (size_t n = 0; n < s.n; ++n) {
                        const double* in_base = in + (n * s.cin + ic) * in_c_stride;
                        const double* gout_base = grad_out + (n * s.cout + oc) * out_c_stride;
                        for (long od = od_lo; od <= od_hi; ++od) {
                            const long id = od * st + kd - pad;
                            for (long oh = oh_lo; oh <= oh_hi; ++oh) {
                                const long ih = oh * st + kh - pad;
                                const double* in_row = in_base + (id * H + ih) * W;
                                const double* gout_row = gout_base + (od * OH + oh) * OW;
                                if (st == 1) {
                                    const double* ir = in_row + (kw - pad);
                                    for (long ow = ow_lo; ow <= ow_hi; ++ow)
                                        acc += ir[ow] * gout_row[ow];
                                } else {
                                    for (long ow = ow_lo; ow <= ow_hi; ++ow)
                                        acc += in_row[ow * st + kw - pad] * gout_row[ow];
                                }
                            }
                        }
                    }
                    gw[(kd * KH + kh) * KW + kw] += acc;
                }
            }
        }
    }
}

void conv3d_backward_bias(const Conv3dShape& s, const double* grad_out, double* grad_bias_accum) {
    const size_t out_c_stride = s.od() * s.oh() * s.ow();
    const long C = (long)s.cout;
#pragma omp parallel for schedule(static) num_threads(threads())
    for (long oc = 0; oc < C; ++oc) {
        double acc = 0.0;
        for (size_t n = 0; n < s.n; ++n) {
            const double* g = grad_out + (n * s.cout + (size_t)oc) * out_c_stride;
            for (size_t i = 0; i < out_c_stride; ++i) acc += g[i];
        }
        grad_bias_accum[oc] += acc;
    }
}

void avg_pool2_forward(const Pool2Shape& s, const double* in, double* out) {
    const size_t OD = s.od(), OH = s.oh(), OW = s.ow();
    const size_t in_c = s.d * s.h * s.w, out_c = OD * OH * OW;
    const long tasks = (long)(s.n * s.c);
#pragma omp parallel for schedule(static) num_threads(threads())
    for (long task = 0; task < tasks; ++task) {
        const double* ib = in + (size_t)task * in_c;
        double* ob = out + (size_t)task * out_c;
        for (size_t od = 0; od < OD; ++od)
            for (size_t oh = 0; oh < OH; ++oh)
                for (size_t ow = 0; ow < OW; ++ow) {
                    double acc = 0.0;
                    for (size_t dz = 0; dz < 2; ++dz)
                        for (size_t dy = 0; dy < 2; ++dy)
                            for (size_t dx = 0; dx < 2; ++dx)
                                acc += ib[((od * 2 + dz) * s.h + oh * 2 + dy) * s.w + ow * 2 + dx];
                    ob[(od * OH + oh) * OW + ow] = acc * 0.125;
                }
    }
}

void avg_pool2_backward(const Pool2Shape& s, const double* grad_out, double* grad_in_accum) {
    const size_t OD = s.od(), OH = s.oh(), OW = s.ow();
    const size_t in_c = s.d * s.h * s.w, out_c = OD * OH * OW;
    const long tasks = (long)(s.n * s.c);
#pragma omp parallel for schedule(static) num_threads(threads())
    for (long task = 0; task < tasks; ++task) {
        const double* gob = grad_out + (size_t)task * out_c;
        double* gib = grad_in_accum + (size_t)task * in_c;
        for (size_t od = 0; od < OD; ++od)
            for (size_t oh = 0; oh < OH; ++oh)
                for (size_t ow = 0; ow < OW; ++ow) {
                    const double g = gob[(od * OH + oh) * OW + ow] * 0.125;
                    for (size_t dz = 0; dz < 2; ++dz)
                        for (size_t dy = 0; dy < 2; ++dy)
                            for (size_t dx = 0; dx < 2; ++dx)
                                gib[((od * 2 + dz) * s.h + oh * 2 + dy) * s.w + ow * 2 + dx] += g;
                }
    }
}

void dense_forward(size_t n, size_t f, size_t g, const double* in, const double* weight,
                   const double* bias, double* out) {
    for (size_t i = 0; i < n; ++i) {
        const double* row = in + i * f;
        double* orow = out + i * g;
        for (size_t j = 0; j < g; ++j) orow[j] = bias ? bias[j] : 0.0;
        for (size_t k = 0; k < f; ++k) {
            const double v = row[k];
            const double* wrow = weight + k * g;
            for (size_t j = 0; j < g; ++j) orow[j] += v * wrow[j];
        }
    }
}

}  // namespace mtp::kernels
