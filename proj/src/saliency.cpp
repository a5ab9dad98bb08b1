#include "mtp/saliency.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mtp/nn.hpp"
#include "mtp/rng.hpp"
#include "mtp/tape.hpp"

#include "json.hpp"

namespace mtp::saliency {

namespace {

using nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

// ---------------------------------------------------------------------------
// tags

const char* head_name(Head head) {
    switch (head) {
        case Head::prognosis: return "prognosis";
        case Head::gcs: return "gcs";
        case Head::age: return "age";
    }
    fail("head_name: unknown head");
}

const char* method_name(Method method) {
    switch (method) {
        case Method::guided_bp: return "guided_bp";
        case Method::grad_cam: return "grad_cam";
        case Method::guided_grad_cam: return "guided_grad_cam";
    }
    fail("method_name: unknown method");
}

Head head_from_name(const std::string& name) {
    if (name == "prognosis") return Head::prognosis;
    if (name == "gcs") return Head::gcs;
    if (name == "age") return Head::age;
    fail("head_from_name: unknown head '" + name + "'");
}

bool head_available(model::Variant variant, Head head) {
    switch (head) {
        case Head::prognosis: return model::has_prog_head(variant);
        case Head::gcs: return model::has_gcs_head(variant);
        case Head::age: return model::has_age_head(variant);
    }
    return false;
}

// ---------------------------------------------------------------------------
// forward/backward plumbing

namespace {

struct Pass {
    Tensor input;                 // [1,1,d,h,w], requires_grad
    model::MultiTaskOutput out;
};

// Eval-mode forward over a private tape with a gradient-tracking input.
Pass run_forward(model::MultiTaskModel& m, std::span<const double> volume, Head head,
                 Tape& tape) {
    if (!m.initialized()) throw std::runtime_error("saliency: model is not initialized");
    const model::ModelConfig& cfg = m.config();
    if (!head_available(cfg.variant, head))
        fail(std::string("saliency: head '") + head_name(head) + "' is absent in variant '" +
             model::variant_name(cfg.variant) + "'");
    if (volume.size() != cfg.d * cfg.h * cfg.w)
        fail("saliency: volume size " + std::to_string(volume.size()) +
             " does not match the model's input shape");
    Pass pass;
    pass.input = Tensor::from_data({1, 1, cfg.d, cfg.h, cfg.w},
                                   std::vector<double>(volume.begin(), volume.end()),
                                   /*requires_grad=*/true);
    Rng unused(0);  // eval-mode dropout consumes no randomness
    pass.out = m.forward(tape, pass.input, /*training=*/false, unused);
    return pass;
}

// The target scalar: the head's pre-sigmoid logit; the two-logit ordinal
// head reduces by mean (scale washes out in normalization).
Tensor target_logit(Tape& tape, const model::MultiTaskOutput& out, Head head) {
    Tensor logit;
    switch (head) {
        case Head::prognosis: logit = out.prog_logit; break;
        case Head::gcs: logit = out.gcs_logits; break;
        case Head::age: logit = out.age_logit; break;
    }
    if (logit.numel() == 1) return logit;
    return nn::mean_all(tape, logit);
}

void clear_param_grads(model::MultiTaskModel& m) {
    for (Tensor& p : m.parameters()) p.zero_grad();
}

}  // namespace

// ---------------------------------------------------------------------------
// attribution

SaliencyVolume guided_backprop(model::MultiTaskModel& m, std::span<const double> volume,
                               Head head) {
    Tape tape;
    Pass pass = run_forward(m, volume, head, tape);
    Tensor logit = target_logit(tape, pass.out, head);
    tape.backward(logit, GradMode::guided_relu);

    const model::ModelConfig& cfg = m.config();
    SaliencyVolume sal;
    sal.d = cfg.d;
    sal.h = cfg.h;
    sal.w = cfg.w;
    sal.head = head;
    sal.method = Method::guided_bp;
    const double* g = pass.input.grad_if_allocated();
    sal.values.assign(volume.size(), 0.0);
    if (g) std::copy(g, g + volume.size(), sal.values.begin());
    clear_param_grads(m);
    return sal;
}

std::vector<double> upsample_map(std::span<const double> low, size_t ld, size_t lh, size_t lw,
                                 size_t d, size_t h, size_t w, Upsample mode) {
    if (ld == 0 || lh == 0 || lw == 0 || d == 0 || h == 0 || w == 0)
        fail("upsample_map: extents must be positive");
    if (low.size() != ld * lh * lw) fail("upsample_map: map size does not match extents");
    // align-corners source coordinate for one axis
    const auto src = [](size_t i, size_t out_n, size_t in_n) -> double {
        if (out_n <= 1 || in_n <= 1) return 0.0;
        return (double)i * (double)(in_n - 1) / (double)(out_n - 1);
    };
    std::vector<double> up(d * h * w);
    for (size_t z = 0; z < d; ++z) {
        const double sz = src(z, d, ld);
        for (size_t y = 0; y < h; ++y) {
            const double sy = src(y, h, lh);
            for (size_t x = 0; x < w; ++x) {
                const double sx = src(x, w, lw);
                double value;
                if (mode == Upsample::nearest) {
                    const size_t nz = std::min(ld - 1, (size_t)std::llround(sz));
                    const size_t ny = std::min(lh - 1, (size_t)std::llround(sy));
                    const size_t nx = std::min(lw - 1, (size_t)std::llround(sx));
                    value = low[(nz * lh + ny) * lw + nx];
                } else {
                    const size_t z0 = std::min(ld - 1, (size_t)sz), z1 = std::min(ld - 1, z0 + 1);
                    const size_t y0 = std::min(lh - 1, (size_t)sy), y1 = std::min(lh - 1, y0 + 1);
                    const size_t x0 = std::min(lw - 1, (size_t)sx), x1 = std::min(lw - 1, x0 + 1);
                    const double tz = sz - (double)z0, ty = sy - (double)y0, tx = sx - (double)x0;
                    const auto at = [&](size_t zz, size_t yy, size_t xx) {
                        return low[(zz * lh + yy) * lw + xx];
                    };
                    const double c00 = at(z0, y0, x0) * (1.0 - tx) + at(z0, y0, x1) * tx;
                    const double c01 = at(z0, y1, x0) * (1.0 - tx) + at(z0, y1, x1) * tx;
                    const double c10 = at(z1, y0, x0) * (1.0 - tx) + at(z1, y0, x1) * tx;
                    const double c11 = at(z1, y1, x0) * (1.0 - tx) + at(z1, y1, x1) * tx;
                    const double c0 = c00 * (1.0 - ty) + c01 * ty;
                    const double c1 = c10 * (1.0 - ty) + c11 * ty;
                    value = c0 * (1.0 - tz) + c1 * tz;
                }
                up[(z * h + y) * w + x] = value;
            }
        }
    }
    return up;
}

CamMap cam_from_feature(std::span<const double> activations, std::span<const double> gradients,
                        size_t channels, size_t ld, size_t lh, size_t lw, size_t d, size_t h,
                        size_t w, Upsample mode) {
    const size_t spatial = ld * lh * lw;
    if (channels == 0 || spatial == 0) fail("cam_from_feature: empty feature layer");
    if (activations.size() != channels * spatial || gradients.size() != channels * spatial)
        fail("cam_from_feature: buffer sizes do not match the feature shape");

    CamMap cam;
    cam.ld = ld;
    cam.lh = lh;
    cam.lw = lw;
    cam.d = d;
    cam.h = h;
    cam.w = w;

    // per-channel weights: global average of the gradient over space
    std::vector<double> weights(channels, 0.0);
    for (size_t c = 0; c < channels; ++c) {
        double sum = 0.0;
        for (size_t p = 0; p < spatial; ++p) sum += gradients[c * spatial + p];
        weights[c] = sum / (double)spatial;
    }
    cam.low.assign(spatial, 0.0);
    for (size_t p = 0; p < spatial; ++p) {
        double acc = 0.0;
        for (size_t c = 0; c < channels; ++c) acc += weights[c] * activations[c * spatial + p];
        cam.low[p] = acc > 0.0 ? acc : 0.0;  // ReLU
    }
    cam.up = upsample_map(cam.low, ld, lh, lw, d, h, w, mode);
    return cam;
}

CamMap grad_cam(model::MultiTaskModel& m, std::span<const double> volume, Head head, size_t layer,
                Upsample mode) {
    Tape tape;
    Pass pass = run_forward(m, volume, head, tape);
    if (layer == kDeepestLayer) layer = m.num_feature_layers() - 1;
    Tensor feat = m.block_feature(layer);  // throws on an invalid id
    Tensor logit = target_logit(tape, pass.out, head);
    tape.backward(logit, GradMode::standard);

    const size_t channels = feat.extent(1);
    const size_t ld = feat.extent(2), lh = feat.extent(3), lw = feat.extent(4);
    const size_t count = channels * ld * lh * lw;
    std::vector<double> grads(count, 0.0);
    if (const double* g = feat.grad_if_allocated()) std::copy(g, g + count, grads.begin());

    const model::ModelConfig& cfg = m.config();
    CamMap cam = cam_from_feature(std::span<const double>(feat.data(), count), grads, channels,
                                  ld, lh, lw, cfg.d, cfg.h, cfg.w, mode);
    cam.head = head;
    clear_param_grads(m);
    return cam;
}

SaliencyVolume guided_grad_cam(const SaliencyVolume& gbp, const CamMap& cam) {
    if (gbp.d != cam.d || gbp.h != cam.h || gbp.w != cam.w)
        fail("guided_grad_cam: saliency and CAM shapes do not match");
    if (gbp.values.size() != cam.up.size())
        fail("guided_grad_cam: buffer sizes do not match");
    SaliencyVolume out = gbp;
    out.method = Method::guided_grad_cam;
    for (size_t i = 0; i < out.values.size(); ++i) out.values[i] = gbp.values[i] * cam.up[i];
    return out;
}

SaliencyVolume cam_saliency(const CamMap& cam) {
    SaliencyVolume sal;
    sal.values = cam.up;
    sal.d = cam.d;
    sal.h = cam.h;
    sal.w = cam.w;
    sal.head = cam.head;
    sal.method = Method::grad_cam;
    return sal;
}

SaliencyVolume normalize_threshold(const SaliencyVolume& sal, double quantile) {
    if (!(quantile > 0.0) || !(quantile < 1.0))
        fail("normalize_threshold: quantile must lie in (0,1)");
    if (sal.values.size() != sal.d * sal.h * sal.w)
        fail("normalize_threshold: volume size does not match its extents");
    if (sal.values.empty()) fail("normalize_threshold: empty volume");

    SaliencyVolume out = sal;
    std::vector<double> mag(sal.values.size());
    for (size_t i = 0; i < mag.size(); ++i) mag[i] = std::abs(sal.values[i]);
    const auto [lo_it, hi_it] = std::minmax_element(mag.begin(), mag.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo)) {  // constant (or non-finite) volume: nothing to rank
        out.values.assign(out.values.size(), 0.0);
        out.degenerate = true;
        out.threshold_value = 0.0;
        return out;
    }
    for (double& v : mag) v = (v - lo) / (hi - lo);

    std::vector<double> nonzero;
    nonzero.reserve(mag.size());
    for (double v : mag)
        if (v > 0.0) nonzero.push_back(v);
    // hi > lo guarantees at least the maximum is nonzero
    std::sort(nonzero.begin(), nonzero.end());
    const double pos = quantile * (double)(nonzero.size() - 1);
    const size_t i0 = (size_t)pos;
    const size_t i1 = std::min(nonzero.size() - 1, i0 + 1);
    const double frac = pos - (double)i0;
    const double threshold = nonzero[i0] + frac * (nonzero[i1] - nonzero[i0]);

    for (size_t i = 0; i < mag.size(); ++i) out.values[i] = mag[i] >= threshold ? mag[i] : 0.0;
    out.degenerate = false;
    out.threshold_value = threshold;
    return out;
}

// ---------------------------------------------------------------------------
// export

namespace {

void write_or_throw(std::ofstream& out, const char* data, size_t bytes, const std::string& path) {
    out.write(data, (std::streamsize)bytes);
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace

void export_raw(const std::string& path_base, const SaliencyVolume& sal) {
    if (sal.values.size() != sal.d * sal.h * sal.w)
        fail("export_raw: volume size does not match its extents");
    const std::string raw_path = path_base + ".raw";
    std::ofstream raw(raw_path, std::ios::binary | std::ios::trunc);
    if (!raw) throw std::runtime_error("cannot open for writing: " + raw_path);
    if constexpr (std::endian::native == std::endian::little) {
        write_or_throw(raw, reinterpret_cast<const char*>(sal.values.data()),
                       sal.values.size() * sizeof(double), raw_path);
    } else {
        for (double v : sal.values) {
            auto bits = std::bit_cast<uint64_t>(v);
            char bytes[8];
            for (int b = 0; b < 8; ++b) bytes[b] = (char)((bits >> (8 * b)) & 0xff);
            write_or_throw(raw, bytes, 8, raw_path);
        }
    }
    raw.flush();
    if (!raw) throw std::runtime_error("write failed: " + raw_path);

    ordered_json j;
    j["format_version"] = 1;
    j["dtype"] = "float64_le";
    j["shape"] = {sal.d, sal.h, sal.w};
    j["head"] = head_name(sal.head);
    j["method"] = method_name(sal.method);
    j["degenerate"] = sal.degenerate;
    j["threshold_value"] = sal.threshold_value;
    const std::string json_path = path_base + ".json";
    std::ofstream meta(json_path, std::ios::binary | std::ios::trunc);
    if (!meta) throw std::runtime_error("cannot open for writing: " + json_path);
    meta << j.dump(2) << '\n';
    meta.flush();
    if (!meta) throw std::runtime_error("write failed: " + json_path);
}

std::vector<std::string> export_pgm_slices(const std::string& dir, const std::string& subject_id,
                                           const SaliencyVolume& sal, bool per_slice_normalize) {
    if (sal.values.size() != sal.d * sal.h * sal.w)
        fail("export_pgm_slices: volume size does not match its extents");
    std::filesystem::create_directories(dir);
    std::vector<std::string> paths;
    paths.reserve(sal.d);
    const size_t slice = sal.h * sal.w;
    for (size_t z = 0; z < sal.d; ++z) {
        const double* s = sal.values.data() + z * slice;
        double lo = 0.0, hi = 1.0;
        if (per_slice_normalize) {
            const auto [lo_it, hi_it] = std::minmax_element(s, s + slice);
            lo = *lo_it;
            hi = *hi_it;
        }
        std::vector<unsigned char> bytes(slice);
        for (size_t i = 0; i < slice; ++i) {
            double v;
            if (per_slice_normalize)
                v = hi > lo ? (s[i] - lo) / (hi - lo) : 0.0;  // flat slice renders black
            else
                v = std::clamp(s[i], 0.0, 1.0);
            bytes[i] = (unsigned char)std::lround(255.0 * v);
        }
        std::ostringstream name;
        name << subject_id << '_' << method_name(sal.method) << '_' << head_name(sal.head) << "_z"
             << z << ".pgm";
        const std::string path = (std::filesystem::path(dir) / name.str()).string();
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + path);
        out << "P5\n" << sal.w << ' ' << sal.h << "\n255\n";
        write_or_throw(out, reinterpret_cast<const char*>(bytes.data()), bytes.size(), path);
        out.flush();
        if (!out) throw std::runtime_error("write failed: " + path);
        paths.push_back(path);
    }
    return paths;
}

}  // namespace mtp::saliency
