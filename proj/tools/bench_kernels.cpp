// Benchmark comparing the OpenMP kernels against the naive serial reference.
// Both paths compute every output element with the same serial accumulation
// order, so the max absolute difference must be exactly zero; the table
// reports it alongside the timings as a standing cross-check.

#include "mtp/kernels.hpp"
#include "mtp/reference_kernels.hpp"
#include "mtp/rng.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

using namespace mtp;
using kernels::Conv3dShape;
using kernels::Pool2Shape;

namespace {

std::vector<double> random_buffer(size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

double time_ms(const std::function<void()>& fn, size_t repeats) {
    // one warm-up, then the best of `repeats` to suppress scheduler noise
    fn();
    double best = 1e300;
    for (size_t r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void report(const std::string& name, double serial_ms, double parallel_ms, double diff) {
    std::printf("%-22s %10.2f ms %10.2f ms %8.2fx %12g\n", name.c_str(), serial_ms, parallel_ms,
                serial_ms / parallel_ms, diff);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kernel benchmark: serial reference vs OpenMP"};
    size_t repeats = 3;
    int threads = 0;
    size_t scale = 1;
    app.add_option("--repeats", repeats, "timed repetitions per kernel (best-of)");
    app.add_option("--threads", threads, "OpenMP thread cap (0 keeps the default)");
    app.add_option("--scale", scale, "multiply the batch dimension");
    CLI11_PARSE(app, argc, argv);
    if (threads > 0) kernels::set_threads(threads);

    Rng rng(7);
    std::printf("%-22s %13s %13s %9s %12s\n", "kernel", "serial", "parallel", "speedup",
                "max|diff|");

    {
        Conv3dShape s{2 * scale, 8, 8, 16, 16, 8, 3, 3, 3, 1, 1};
        const auto in = random_buffer(s.n * s.cin * s.d * s.h * s.w, rng);
        const auto w = random_buffer(s.cout * s.cin * s.kd * s.kh * s.kw, rng);
        const auto b = random_buffer(s.cout, rng);
        const size_t out_n = s.n * s.cout * s.od() * s.oh() * s.ow();
        std::vector<double> out_ref(out_n), out_par(out_n);
        const double t_ref =
            time_ms([&] { refk::conv3d_forward(s, in.data(), w.data(), b.data(), out_ref.data()); },
                    repeats);
        const double t_par = time_ms(
            [&] { kernels::conv3d_forward(s, in.data(), w.data(), b.data(), out_par.data()); },
            repeats);
        report("conv3d_forward", t_ref, t_par, max_abs_diff(out_ref, out_par));

        const auto gout = random_buffer(out_n, rng);
        std::vector<double> gin_ref(in.size()), gin_par(in.size());
        const double tb_ref = time_ms(
            [&] {
                std::fill(gin_ref.begin(), gin_ref.end(), 0.0);
                refk::conv3d_backward_input(s, gout.data(), w.data(), gin_ref.data());
            },
            repeats);
        const double tb_par = time_ms(
            [&] {
                std::fill(gin_par.begin(), gin_par.end(), 0.0);
                kernels::conv3d_backward_input(s, gout.data(), w.data(), gin_par.data());
            },
            repeats);
        report("conv3d_backward_input", tb_ref, tb_par, max_abs_diff(gin_ref, gin_par));

        std::vector<double> gw_ref(w.size()), gw_par(w.size());
        const double tw_ref = time_ms(
            [&] {
                std::fill(gw_ref.begin(), gw_ref.end(), 0.0);
                refk::conv3d_backward_weight(s, in.data(), gout.data(), gw_ref.data());
            },
            repeats);
        const double tw_par = time_ms(
            [&] {
                std::fill(gw_par.begin(), gw_par.end(), 0.0);
                kernels::conv3d_backward_weight(s, in.data(), gout.data(), gw_par.data());
            },
            repeats);
        report("conv3d_backward_weight", tw_ref, tw_par, max_abs_diff(gw_ref, gw_par));
    }

    {
        Pool2Shape s{4 * scale, 16, 8, 32, 32};
        const auto in = random_buffer(s.n * s.c * s.d * s.h * s.w, rng);
        const size_t out_n = s.n * s.c * s.od() * s.oh() * s.ow();
        std::vector<double> out_ref(out_n), out_par(out_n);
        const double t_ref =
            time_ms([&] { refk::avg_pool2_forward(s, in.data(), out_ref.data()); }, repeats);
        const double t_par =
            time_ms([&] { kernels::avg_pool2_forward(s, in.data(), out_par.data()); }, repeats);
        report("avg_pool2_forward", t_ref, t_par, max_abs_diff(out_ref, out_par));
    }

    {
        const size_t n = 256 * scale, f = 512, g = 64;
        const auto in = random_buffer(n * f, rng);
        const auto w = random_buffer(f * g, rng);
        const auto b = random_buffer(g, rng);
        std::vector<double> out_ref(n * g), out_par(n * g);
        const double t_ref = time_ms(
            [&] { refk::dense_forward(n, f, g, in.data(), w.data(), b.data(), out_ref.data()); },
            repeats);
        const double t_par = time_ms(
            [&] { kernels::dense_forward(n, f, g, in.data(), w.data(), b.data(), out_par.data()); },
            repeats);
        report("dense_forward", t_ref, t_par, max_abs_diff(out_ref, out_par));
    }

    return 0;
}
