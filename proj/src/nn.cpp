#include "mtp/nn.hpp"

#include "mtp/binio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "mtp/kernels.hpp"

namespace mtp::nn {

using kernels::Conv3dShape;
using kernels::Pool2Shape;

namespace {

// view a rank >= 2 tensor as [N, C, S] with channels on axis 1
struct ChanLayout {
    size_t n, c, s;
};

ChanLayout chan_layout(const Tensor& x) {
    check_shape(x.rank() >= 2, "batch_norm/concat expect rank >= 2, got " + x.shape_str());
    size_t s = 1;
    for (size_t a = 2; a < x.rank(); ++a) s *= x.extent(a);
    return {x.extent(0), x.extent(1), s};
}

Conv3dShape make_conv_shape(const Tensor& x, const Tensor& w, size_t stride, size_t padding) {
    check_shape(x.rank() == 5, "conv3d input must be rank 5, got " + x.shape_str());
    check_shape(w.rank() == 5, "conv3d weight must be rank 5, got " + w.shape_str());
    if (stride < 1) throw std::invalid_argument("conv3d: stride must be >= 1");
    check_shape(w.extent(1) == x.extent(1),
                "conv3d channel mismatch: input " + x.shape_str() + " vs weight " + w.shape_str());
    Conv3dShape s{};
    s.n = x.extent(0);
    s.cin = x.extent(1);
    s.d = x.extent(2);
    s.h = x.extent(3);
    s.w = x.extent(4);
    s.cout = w.extent(0);
    s.kd = w.extent(2);
    s.kh = w.extent(3);
    s.kw = w.extent(4);
    s.stride = stride;
    s.padding = padding;
    check_shape(s.kd <= s.d + 2 * padding && s.kh <= s.h + 2 * padding &&
                    s.kw <= s.w + 2 * padding,
                "conv3d kernel larger than padded input");
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// parameter bundles

Conv3dParams::Conv3dParams(size_t cin, size_t cout, size_t k, Rng& rng) {
    weight = Tensor::he_uniform({cout, cin, k, k, k}, cin * k * k * k, rng);
    bias = Tensor({cout}, 0.0, true);
}

DenseParams::DenseParams(size_t fin, size_t fout, Rng& rng) {
    weight = Tensor::he_uniform({fin, fout}, fin, rng);
    bias = Tensor({fout}, 0.0, true);
}

BatchNormParams::BatchNormParams(size_t channels)
    : gamma({channels}, 1.0, true),
      beta({channels}, 0.0, true),
      running_mean(channels, 0.0),
      running_var(channels, 1.0) {}

DenseLayerParams::DenseLayerParams(size_t cin, size_t growth, Rng& rng)
    : bn(cin), conv(cin, growth, 3, rng) {}

DenseBlockParams::DenseBlockParams(size_t cin, size_t growth, size_t num_layers, Rng& rng) {
    layers.reserve(num_layers);
    for (size_t i = 0; i < num_layers; ++i) layers.emplace_back(cin + i * growth, growth, rng);
}

size_t DenseBlockParams::growth_() const {
    return layers.empty() ? 0 : layers.front().conv.weight.extent(0);
}

// ---------------------------------------------------------------------------
// ops

Tensor conv3d(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
              size_t stride, size_t padding) {
    const Conv3dShape s = make_conv_shape(x, weight, stride, padding);
    check_shape(bias.rank() == 1 && bias.extent(0) == s.cout,
                "conv3d bias must be [cout], got " + bias.shape_str());
    Tensor out({s.n, s.cout, s.od(), s.oh(), s.ow()});
    kernels::conv3d_forward(s, x.data(), weight.data(), bias.data(), out.data());
    out.set_requires_grad(x.requires_grad() || weight.requires_grad() || bias.requires_grad());
    if (out.requires_grad()) {
        Tensor xc = x, wc = weight, bc = bias, oc = out;
        tape.record(OpKind::conv3d, [s, xc, wc, bc, oc](GradMode) mutable {
            const double* go = oc.grad_if_allocated();
            if (!go) return;
            if (xc.requires_grad()) kernels::conv3d_backward_input(s, go, wc.data(), xc.grad());
            if (wc.requires_grad()) kernels::conv3d_backward_weight(s, xc.data(), go, wc.grad());
            if (bc.requires_grad()) kernels::conv3d_backward_bias(s, go, bc.grad());
        });
    }
    return out;
}

Tensor dense(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
    check_shape(x.rank() == 2, "dense input must be rank 2, got " + x.shape_str());
    check_shape(weight.rank() == 2 && weight.extent(0) == x.extent(1),
                "dense weight mismatch: input " + x.shape_str() + " vs weight " +
                    weight.shape_str());
    const size_t n = x.extent(0), f = x.extent(1), g = weight.extent(1);
    check_shape(bias.rank() == 1 && bias.extent(0) == g,
                "dense bias must be [out], got " + bias.shape_str());
    Tensor out({n, g});
    kernels::dense_forward(n, f, g, x.data(), weight.data(), bias.data(), out.data());
    out.set_requires_grad(x.requires_grad() || weight.requires_grad() || bias.requires_grad());
    if (out.requires_grad()) {
        Tensor xc = x, wc = weight, bc = bias, oc = out;
        tape.record(OpKind::dense, [n, f, g, xc, wc, bc, oc](GradMode) mutable {
            const double* go = oc.grad_if_allocated();
            if (!go) return;
            if (xc.requires_grad()) {
                double* gx = xc.grad();
                const double* w = wc.data();
                for (size_t i = 0; i < n; ++i)
                    for (size_t k = 0; k < f; ++k) {
                        double acc = 0.0;
                        for (size_t j = 0; j < g; ++j) acc += go[i * g + j] * w[k * g + j];
                        gx[i * f + k] += acc;
                    }
            }
            if (wc.requires_grad()) {
                double* gw = wc.grad();
                const double* xv = xc.data();
                for (size_t k = 0; k < f; ++k)
                    for (size_t j = 0; j < g; ++j) {
                        double acc = 0.0;
                        for (size_t i = 0; i < n; ++i) acc += xv[i * f + k] * go[i * g + j];
                        gw[k * g + j] += acc;
                    }
            }
            if (bc.requires_grad()) {
                double* gb = bc.grad();
                for (size_t j = 0; j < g; ++j) {
                    double acc = 0.0;
                    for (size_t i = 0; i < n; ++i) acc += go[i * g + j];
                    gb[j] += acc;
                }
            }
        });
    }
    return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
    Tensor out(x.shape());
    const size_t m = x.numel();
    const double* xv = x.data();
    double* ov = out.data();
    for (size_t i = 0; i < m; ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    out.set_requires_grad(x.requires_grad());
    if (out.requires_grad()) {
        Tensor xc = x, oc = out;
        tape.record(OpKind::relu, [m, xc, oc](GradMode mode) mutable {
            const double* go = oc.grad_if_allocated();
            if (!go) return;
            double* gx = xc.grad();
            const double* xv2 = xc.data();
            if (mode == GradMode::guided_relu) {
                // guided backprop: gradient passes only where the forward
                // input and the upstream gradient are both positive
                for (size_t i = 0; i < m; ++i)
                    if (xv2[i] > 0.0 && go[i] > 0.0) gx[i] += go[i];
            } else {
                for (size_t i = 0; i < m; ++i)
                    if (xv2[i] > 0.0) gx[i] += go[i];
            }
        });
    }
    return out;
}

double sigmoid_value(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
    Tensor out(x.shape());
    const size_t m = x.numel();
    const double* xv = x.data();
    double* ov = out.data();
    for (size_t i = 0; i < m; ++i) ov[i] = sigmoid_value(xv[i]);
    out.set_requires_grad(x.requires_grad());
    if (out.requires_grad()) {
        Tensor xc = x, oc = out;
        tape.record(OpKind::sigmoid, [m, xc, oc](GradMode) mutable {
            const double* go = oc.grad_if_allocated();
            if (!go) return;
            double* gx = xc.grad();
            const double* y = oc.data();
            for (size_t i = 0; i < m; ++i) gx[i] += go[i] * y[i] * (1.0 - y[i]);
        });
    }
    return out;
}

Tensor global_avg_pool(Tape& tape, const Tensor& x) {
    check_shape(x.rank() == 5, "global_avg_pool expects rank 5, got " + x.shape_str());
    const size_t n = x.extent(0), c = x.extent(1);
    const size_t s = x.extent(2) * x.extent(3) * x.extent(4);
    Tensor out({n, c});
    const double* xv = x.data();
    double* ov = out.data();
    for (size_t i = 0; i < n * c; ++i) {
        double acc = 0.0;
        for (size_t j = 0; j < s; ++j) acc += xv[i * s + j];
        ov[i] = acc / (double)s;
    }
    out.set_requires_grad(x.requires_grad());
    if (out.requires_grad()) {
        Tensor xc = x, oc = out;
        tape.record(OpKind::global_avg_pool, [n, c, s, xc, oc](GradMode) mutable {
            const double* go = oc.grad_if_allocated();
            if (!go) return;
            double* gx = xc.grad();
            for (size_t i = 0; i < n * c; ++i) {
                const double g = go[i] / (double)s;
                for (size_t j = 0; j < s; ++j) gx[i * s + j] += g;
            }
        });
    }
    return out;
}

Tensor avg_pool3d_2(Tape& tape, const Tensor& x) {
    check_shape(x.rank() == 5, "avg_pool3d_2 expects rank 5, got " + x.shape_str());
    check_shape(x.extent(2) >= 2 && x.extent(3) >= 2 && x.extent(4) >= 2,
                "avg_pool3d_2 needs spatial extents >= 2, got " + x.shape_str());
    Pool2Shape s{x.extent(0), x.extent(1), x.extent(2), x.extent(3), x.extent(4)};
    Tensor out({s.n, s.c, s.od(), s.oh(), s.ow()});
    kernels::avg_pool2_forward(s, x.data(), out.data());
    out.set_requires_grad(x.requires_grad());
    if (out.requires_grad()) {
        Tensor xc = x, oc = out;
        tape.record(OpKind::avg_pool3d, [s, xc, oc](GradMode) mutable {
            const double* go = oc.grad_if_allocated();
            if (!go) return;
            kernels::avg_pool2_backward(s, go, xc.grad());
        });
    }
    return out;
}

Tensor batch_norm(Tape& tape, const Tensor& x, BatchNormParams& p, bool training) {
    const ChanLayout lay = chan_layout(x);
    check_shape(lay.c == p.channels(), "batch_norm channels: input " + x.shape_str() +
                                           " vs params " + std::to_string(p.channels()));
    if (training && lay.n < 2)
        throw std::invalid_argument("batch_norm: training mode needs batch size >= 2");
    const size_t N = lay.n, C = lay.c, S = lay.s;
    const double M = (double)(N * S);
    const double* xv = x.data();

    std::vector<double> mean(C), invstd(C);
    if (training) {
        for (size_t c = 0; c < C; ++c) {
            double acc = 0.0;
            for (size_t n = 0; n < N; ++n)
                for (size_t j = 0; j < S; ++j) acc += xv[(n * C + c) * S + j];
            mean[c] = acc / M;
            double vacc = 0.0;
            for (size_t n = 0; n < N; ++n)
                for (size_t j = 0; j < S; ++j) {
                    const double d = xv[(n * C + c) * S + j] - mean[c];
                    vacc += d * d;
                }
            const double var = vacc / M;  // biased, used consistently
            invstd[c] = 1.0 / std::sqrt(var + p.eps);
            p.running_mean[c] = (1.0 - p.momentum) * p.running_mean[c] + p.momentum * mean[c];
            p.running_var[c] = (1.0 - p.momentum) * p.running_var[c] + p.momentum * var;
        }
    } else {
        for (size_t c = 0; c < C; ++c) {
            mean[c] = p.running_mean[c];
            invstd[c] = 1.0 / std::sqrt(p.running_var[c] + p.eps);
        }
    }

    Tensor out(x.shape());
    double* ov = out.data();
    const double* gv = p.gamma.data();
    const double* bv = p.beta.data();
    for (size_t n = 0; n < N; ++n)
        for (size_t c = 0; c < C; ++c)
            for (size_t j = 0; j < S; ++j) {
                const size_t i = (n * C + c) * S + j;
                ov[i] = gv[c] * (xv[i] - mean[c]) * invstd[c] + bv[c];
            }

    out.set_requires_grad(true);  // gamma/beta are parameters
    Tensor xc = x, oc = out, gamma = p.gamma, beta = p.beta;
    tape.record(OpKind::batch_norm,
                [N, C, S, M, mean, invstd, training, xc, oc, gamma, beta](GradMode) mutable {
                    const double* go = oc.grad_if_allocated();
                    if (!go) return;
                    const double* xv2 = xc.data();
                    const double* gv2 = gamma.data();
                    for (size_t c = 0; c < C; ++c) {
                        double sum_go = 0.0, sum_go_xhat = 0.0;
                        for (size_t n = 0; n < N; ++n)
                            for (size_t j = 0; j < S; ++j) {
                                const size_t i = (n * C + c) * S + j;
                                const double xhat = (xv2[i] - mean[c]) * invstd[c];
                                sum_go += go[i];
                                sum_go_xhat += go[i] * xhat;
                            }
                        if (gamma.requires_grad()) gamma.grad()[c] += sum_go_xhat;
                        if (beta.requires_grad()) beta.grad()[c] += sum_go;
                        if (!xc.requires_grad()) continue;
                        double* gx = xc.grad();
                        if (training) {
                            // batch statistics depend on x: fused backward
                            const double k = gv2[c] * invstd[c];
                            for (size_t n = 0; n < N; ++n)
                                for (size_t j = 0; j < S; ++j) {
                                    const size_t i = (n * C + c) * S + j;
                                    const double xhat = (xv2[i] - mean[c]) * invstd[c];
                                    gx[i] += k * (go[i] - sum_go / M - xhat * sum_go_xhat / M);
                                }
                        } else {
                            const double k = gv2[c] * invstd[c];
                            for (size_t n = 0; n < N; ++n)
                                for (size_t j = 0; j < S; ++j) gx[(n * C + c) * S + j] +=
                                    k * go[(n * C + c) * S + j];
                        }
                    }
                });
    return out;
}

Tensor dropout(Tape& tape, const Tensor& x, double rate, bool training, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0))
        throw std::invalid_argument("dropout: rate must be in [0,1)");
    if (!training || rate == 0.0) return x;  // identity, gradient flows through unchanged
    const size_t m = x.numel();
    std::vector<uint8_t> keep(m);
    for (size_t i = 0; i < m; ++i) keep[i] = rng.uniform() >= rate ? 1 : 0;
    const double scale = 1.0 / (1.0 - rate);
    Tensor out(x.shape());
    const double* xv = x.data();
    double* ov = out.data();
    for (size_t i = 0; i < m; ++i) ov[i] = keep[i] ? xv[i] * scale : 0.0;
    out.set_requires_grad(x.requires_grad());
    if (out.requires_grad()) {
        Tensor xc = x, oc = out;
        tape.record(OpKind::dropout, [m, scale, keep = std::move(keep), xc, oc](GradMode) mutable {
            const double* go = oc.grad_if_allocated();
            if (!go) return;
            double* gx = xc.grad();
            for (size_t i = 0; i < m; ++i)
                if (keep[i]) gx[i] += go[i] * scale;
        });
    }
    return out;
}

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
    const ChanLayout la = chan_layout(a), lb = chan_layout(b);
    check_shape(a.rank() == b.rank() && la.n == lb.n && la.s == lb.s,
                "concat_channels mismatch: " + a.shape_str() + " vs " + b.shape_str());
    for (size_t ax = 2; ax < a.rank(); ++ax)
        check_shape(a.extent(ax) == b.extent(ax),
                    "concat_channels mismatch: " + a.shape_str() + " vs " + b.shape_str());
    std::vector<size_t> oshape = a.shape();
    oshape[1] = la.c + lb.c;
    Tensor out(oshape);
    const size_t N = la.n, S = la.s, Ca = la.c, Cb = lb.c, Co = Ca + Cb;
    const double* av = a.data();
    const double* bv = b.data();
    double* ov = out.data();
    for (size_t n = 0; n < N; ++n) {
        std::memcpy(ov + (n * Co) * S, av + (n * Ca) * S, Ca * S * sizeof(double));
        std::memcpy(ov + (n * Co + Ca) * S, bv + (n * Cb) * S, Cb * S * sizeof(double));
    }
    out.set_requires_grad(a.requires_grad() || b.requires_grad());
    if (out.requires_grad()) {
        Tensor ac = a, bc = b, oc = out;
        tape.record(OpKind::concat_channels, [N, S, Ca, Cb, Co, ac, bc, oc](GradMode) mutable {
            const double* go = oc.grad_if_allocated();
            if (!go) return;
            if (ac.requires_grad()) {
                double* ga = ac.grad();
                for (size_t n = 0; n < N; ++n)
                    for (size_t i = 0; i < Ca * S; ++i) ga[(n * Ca) * S + i] +=
                        go[(n * Co) * S + i];
            }
            if (bc.requires_grad()) {
                double* gb = bc.grad();
                for (size_t n = 0; n < N; ++n)
                    for (size_t i = 0; i < Cb * S; ++i) gb[(n * Cb) * S + i] +=
                        go[(n * Co + Ca) * S + i];
            }
        });
    }
    return out;
}

Tensor dense_block(Tape& tape, const Tensor& x, DenseBlockParams& p, bool training) {
    if (p.layers.empty()) throw std::invalid_argument("dense_block: needs >= 1 layer");
    Tensor cur = x;
    for (auto& layer : p.layers) {
        Tensor t = batch_norm(tape, cur, layer.bn, training);
        t = relu(tape, t);
        t = conv3d(tape, t, layer.conv.weight, layer.conv.bias, 1, 1);
        cur = concat_channels(tape, cur, t);
    }
    return cur;
}

double bce_with_logits_value(double logit, double target) {
    const double z = logit, t = target;
    return std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
}

Tensor mean_all(Tape& tape, const Tensor& x) {
    if (x.numel() == 0) throw std::invalid_argument("mean_all: empty tensor");
    const size_t m = x.numel();
    double sum = 0.0;
    const double* xv = x.data();
    for (size_t i = 0; i < m; ++i) sum += xv[i];
    Tensor out({1});
    out.data()[0] = sum / (double)m;
    out.set_requires_grad(x.requires_grad());
    if (out.requires_grad()) {
        Tensor xc = x, oc = out;
        tape.record(OpKind::mean_all, [m, xc, oc](GradMode) mutable {
            const double* go = oc.grad_if_allocated();
            if (!go) return;
            double* gx = xc.grad();
            const double g = go[0] / (double)m;
            for (size_t i = 0; i < m; ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor bce_with_logits_mean(Tape& tape, const Tensor& logits, const Tensor& targets) {
    check_shape(logits.shape() == targets.shape(), "bce: logits " + logits.shape_str() +
                                                       " vs targets " + targets.shape_str());
    const size_t m = logits.numel();
    const double* zv = logits.data();
    const double* tv = targets.data();
    double acc = 0.0;
    for (size_t i = 0; i < m; ++i) acc += bce_with_logits_value(zv[i], tv[i]);
    Tensor out = Tensor::scalar(acc / (double)m);
    out.set_requires_grad(logits.requires_grad());
    if (out.requires_grad()) {
        Tensor zc = logits, tc = targets, oc = out;
        tape.record(OpKind::bce_mean, [m, zc, tc, oc](GradMode) mutable {
            const double* go = oc.grad_if_allocated();
            if (!go) return;
            double* gz = zc.grad();
            const double* zv2 = zc.data();
            const double* tv2 = tc.data();
            const double g = go[0] / (double)m;
            for (size_t i = 0; i < m; ++i) gz[i] += g * (sigmoid_value(zv2[i]) - tv2[i]);
        });
    }
    return out;
}

Tensor weighted_sum(Tape& tape, const std::vector<Tensor>& terms,
                    const std::vector<double>& weights) {
    if (terms.size() != weights.size())
        throw std::invalid_argument("weighted_sum: terms/weights length mismatch");
    if (terms.empty()) throw std::invalid_argument("weighted_sum: empty");
    double acc = 0.0;
    bool needs_grad = false;
    for (size_t i = 0; i < terms.size(); ++i) {
        check_shape(terms[i].numel() == 1, "weighted_sum term must be scalar");
        if (weights[i] == 0.0) continue;  // zero weight: no value, no gradient
        acc += weights[i] * terms[i].item();
        needs_grad = needs_grad || terms[i].requires_grad();
    }
    Tensor out = Tensor::scalar(acc);
    out.set_requires_grad(needs_grad);
    if (out.requires_grad()) {
        std::vector<Tensor> tc = terms;
        std::vector<double> wc = weights;
        Tensor oc = out;
        tape.record(OpKind::weighted_sum, [tc, wc, oc](GradMode) mutable {
            const double* go = oc.grad_if_allocated();
            if (!go) return;
            for (size_t i = 0; i < tc.size(); ++i)
                if (wc[i] != 0.0 && tc[i].requires_grad()) tc[i].grad()[0] += wc[i] * go[0];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// serialization


void save_params(const std::string& path, const std::vector<ParamEntry>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os.write("MTPG", 4);
    binio::wr_u32(os, kParamFormatVersion);
    binio::wr_u64(os, params.size());
    for (const auto& p : params) {
        if (shape_numel(p.shape) != p.values.size())
            throw std::invalid_argument("param entry '" + p.name + "': shape/value mismatch");
        binio::wr_u32(os, (uint32_t)p.name.size());
        os.write(p.name.data(), (std::streamsize)p.name.size());
        binio::wr_u32(os, (uint32_t)p.shape.size());
        for (size_t e : p.shape) binio::wr_u64(os, e);
        for (double v : p.values) binio::wr_f64(os, v);
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<ParamEntry> load_params(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "MTPG", 4) != 0)
        throw std::runtime_error("not a MTPG parameter file: " + path);
    const uint32_t version = binio::rd_u32(is, "param file");
    if (version != kParamFormatVersion)
        throw std::runtime_error("unsupported MTPG version " + std::to_string(version));
    const uint64_t count = binio::rd_u64(is, "param file");
    if (count > (1u << 20)) throw std::runtime_error("corrupt MTPG header: " + path);
    std::vector<ParamEntry> out;
    out.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        ParamEntry e;
        const uint32_t name_len = binio::rd_u32(is, "param file");
        if (name_len > (1u << 16)) throw std::runtime_error("corrupt MTPG entry: " + path);
        e.name.resize(name_len);
        if (!is.read(e.name.data(), name_len)) throw std::runtime_error("param file truncated");
        const uint32_t rank = binio::rd_u32(is, "param file");
        if (rank > 32) throw std::runtime_error("corrupt MTPG entry: " + path);
        e.shape.resize(rank);
        size_t numel = 1;
        for (uint32_t a = 0; a < rank; ++a) {
            e.shape[a] = (size_t)binio::rd_u64(is, "param file");
            numel *= e.shape[a];
        }
        if (numel > (1ull << 32)) throw std::runtime_error("corrupt MTPG entry: " + path);
        e.values.resize(numel);
        for (size_t j = 0; j < numel; ++j) e.values[j] = binio::rd_f64(is, "param file");
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace mtp::nn
