#include "mtp/reference_kernels.hpp"

#include <cstddef>

namespace mtp::refk {

namespace {
// value of the zero-padded input at (possibly out-of-range) spatial index
inline double padded_at(const double* in, long n, long c, long d, long h,
                        long w, long C, long D, long H, long W) {
  if (d < 0 || d >= D || h < 0 || h >= H || w < 0 || w >= W) return 0.0;
  return in[(((n * C + c) * D + d) * H + h) * W + w];
}
}  // namespace

void conv3d_forward(const Conv3dShape& s, const double* in, const double* w,
                    const double* b, double* out) {
  const long OD = (long)s.od(), OH = (long)s.oh(), OW = (long)s.ow();
  for (long n = 0; n < (long)s.n; ++n)
    for (long co = 0; co < (long)s.cout; ++co)
      for (long od = 0; od < OD; ++od)
        for (long oh = 0; oh < OH; ++oh)
          for (long ow = 0; ow < OW; ++ow) {
            double acc = b ? b[co] : 0.0;
            for (long ci = 0; ci < (long)s.cin; ++ci)
              for (long kd = 0; kd < (long)s.kd; ++kd)
                for (long kh = 0; kh < (long)s.kh; ++kh)
                  for (long kw = 0; kw < (long)s.kw; ++kw) {
                    const long id = od * (long)s.stride + kd - (long)s.padding;
                    const long ih = oh * (long)s.stride + kh - (long)s.padding;
                    const long iw = ow * (long)s.stride + kw - (long)s.padding;
                    const double v =
                        padded_at(in, n, ci, id, ih, iw, (long)s.cin,
                                  (long)s.d, (long)s.h, (long)s.w);
                    const double wv =
                        w[((((co * (long)s.cin) + ci) * (long)s.kd + kd) *
                               (long)s.kh +
                           kh) *
                              (long)s.kw +
                          kw];
                    acc += v * wv;
                  }
            out[(((n * (long)s.cout + co) * OD + od) * OH + oh) * OW + ow] =
                acc;
          }
}

void conv3d_backward_input(const Conv3dShape& s, const double* gout,
                           const double* w, double* gin) {
  const long OD = (long)s.od(), OH = (long)s.oh(), OW = (long)s.ow();
  // scatter: walk every output position and push its grad back to the inputs
  for (long n = 0; n < (long)s.n; ++n)
    for (long co = 0; co < (long)s.cout; ++co)
      for (long od = 0; od < OD; ++od)
        for (long oh = 0; oh < OH; ++oh)
          for (long ow = 0; ow < OW; ++ow) {
            const double g =
                gout[(((n * (long)s.cout + co) * OD + od) * OH + oh) * OW + ow];
            if (g == 0.0) continue;
            for (long ci = 0; ci < (long)s.cin; ++ci)
              for (long kd = 0; kd < (long)s.kd; ++kd)
                for (long kh = 0; kh < (long)s.kh; ++kh)
                  for (long kw = 0; kw < (long)s.kw; ++kw) {
                    const long id = od * (long)s.stride + kd - (long)s.padding;
                    const long ih = oh * (long)s.stride + kh - (long)s.padding;
                    const long iw = ow * (long)s.stride + kw - (long)s.padding;
                    if (id < 0 || id >= (long)s.d || ih < 0 ||
                        ih >= (long)s.h || iw < 0 || iw >= (long)s.w)
                      continue;
                    const double wv =
                        w[((((co * (long)s.cin) + ci) * (long)s.kd + kd) *
                               (long)s.kh +
                           kh) *
                              (long)s.kw +
                          kw];
                    gin[(((n * (long)s.cin + ci) * (long)s.d + id) *
                             (long)s.h +
                         ih) *
                            (long)s.w +
                        iw] += g * wv;
                  }
          }
}

void conv3d_backward_weight(const Conv3dShape& s, const double* in,
                            const double* gout, double* gw) {
  const long OD = (long)s.od(), OH = (long)s.oh(), OW = (long)s.ow();
  for (long n = 0; n < (long)s.n; ++n)
    for (long co = 0; co < (long)s.cout; ++co)
      for (long od = 0; od < OD; ++od)
        for (long oh = 0; oh < OH; ++oh)
          for (long ow = 0; ow < OW; ++ow) {
            const double g =
                gout[(((n * (long)s.cout + co) * OD + od) * OH + oh) * OW + ow];
            if (g == 0.0) continue;
            for (long ci = 0; ci < (long)s.cin; ++ci)
              for (long kd = 0; kd < (long)s.kd; ++kd)
                for (long kh = 0; kh < (long)s.kh; ++kh)
                  for (long kw = 0; kw < (long)s.kw; ++kw) {
                    const long id = od * (long)s.stride + kd - (long)s.padding;
                    const long ih = oh * (long)s.stride + kh - (long)s.padding;
                    const long iw = ow * (long)s.stride + kw - (long)s.padding;
                    const double v =
                        padded_at(in, n, ci, id, ih, iw, (long)s.cin,
                                  (long)s.d, (long)s.h, (long)s.w);
                    gw[((((co * (long)s.cin) + ci) * (long)s.kd + kd) *
                            (long)s.kh +
                        kh) *
                           (long)s.kw +
                       kw] += g * v;
                  }
          }
}

void conv3d_backward_bias(const Conv3dShape& s, const double* gout,
                          double* gb) {
  const long OD = (long)s.od(), OH = (long)s.oh(), OW = (long)s.ow();
  for (long n = 0; n < (long)s.n; ++n)
    for (long co = 0; co < (long)s.cout; ++co)
      for (long i = 0; i < OD * OH * OW; ++i)
        gb[co] += gout[(n * (long)s.cout + co) * OD * OH * OW + i];
}

void avg_pool2_forward(const Pool2Shape& s, const double* in, double* out) {
  const long OD = (long)s.od(), OH = (long)s.oh(), OW = (long)s.ow();
  for (long n = 0; n < (long)s.n; ++n)
    for (long c = 0; c < (long)s.c; ++c)
      for (long od = 0; od < OD; ++od)
        for (long oh = 0; oh < OH; ++oh)
          for (long ow = 0; ow < OW; ++ow) {
            double acc = 0.0;
            for (long kd = 0; kd < 2; ++kd)
              for (long kh = 0; kh < 2; ++kh)
                for (long kw = 0; kw < 2; ++kw)
                  acc += in[(((n * (long)s.c + c) * (long)s.d +
                              (od * 2 + kd)) *
                                 (long)s.h +
                             (oh * 2 + kh)) *
                                (long)s.w +
                            (ow * 2 + kw)];
            out[(((n * (long)s.c + c) * OD + od) * OH + oh) * OW + ow] =
                acc * 0.125;
          }
}

void avg_pool2_backward(const Pool2Shape& s, const double* gout, double* gin) {
  const long OD = (long)s.od(), OH = (long)s.oh(), OW = (long)s.ow();
  for (long n = 0; n < (long)s.n; ++n)
    for (long c = 0; c < (long)s.c; ++c)
      for (long od = 0; od < OD; ++od)
        for (long oh = 0; oh < OH; ++oh)
          for (long ow = 0; ow < OW; ++ow) {
            const double g =
                gout[(((n * (long)s.c + c) * OD + od) * OH + oh) * OW + ow] *
                0.125;
            for (long kd = 0; kd < 2; ++kd)
              for (long kh = 0; kh < 2; ++kh)
                for (long kw = 0; kw < 2; ++kw)
                  gin[(((n * (long)s.c + c) * (long)s.d + (od * 2 + kd)) *
                           (long)s.h +
                       (oh * 2 + kh)) *
                          (long)s.w +
                      (ow * 2 + kw)] += g;
          }
}

void dense_forward(std::size_t n, std::size_t f, std::size_t g,
                   const double* in, const double* w, const double* b,
                   double* out) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < g; ++j) {
      double acc = b ? b[j] : 0.0;
      for (std::size_t k = 0; k < f; ++k) acc += in[i * f + k] * w[k * g + j];
      out[i * g + j] = acc;
    }
}

}  // namespace mtp::refk
