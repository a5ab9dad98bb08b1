#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <vector>

#include "doctest.h"
#include "mtp/kernels.hpp"
#include "mtp/nn.hpp"
#include "mtp/reference_kernels.hpp"
#include "mtp/tape.hpp"
#include "mtp/tensor.hpp"

using namespace mtp;
using kernels::Conv3dShape;
using kernels::Pool2Shape;

namespace {

std::vector<double> random_vec(size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// central-difference gradient of a scalar-valued function of one tensor,
// compared against the analytic grad already stored in t
double fd_max_rel_err(Tensor& t, const std::function<double()>& loss_fn, double eps = 1e-5) {
    double worst = 0.0;
    REQUIRE(t.has_grad());
    const double* g = t.grad_if_allocated();
    for (size_t i = 0; i < t.numel(); ++i) {
        const double orig = t.data()[i];
        t.data()[i] = orig + eps;
        const double lp = loss_fn();
        t.data()[i] = orig - eps;
        const double lm = loss_fn();
        t.data()[i] = orig;
        const double fd = (lp - lm) / (2.0 * eps);
        const double denom = std::max({std::abs(fd), std::abs(g[i]), 1e-6});
        worst = std::max(worst, std::abs(fd - g[i]) / denom);
    }
    return worst;
}

struct ConvCase {
    size_t n, cin, d, h, w, cout, k, stride, pad;
};

}  // namespace

// ---------------------------------------------------------------------------
// conv3d kernels vs brute-force reference

TEST_CASE("conv3d: all-ones 3x3x3 sums to 27") {
    Conv3dShape s{1, 1, 3, 3, 3, 1, 3, 3, 3, 1, 0};
    std::vector<double> in(27, 1.0), w(27, 1.0), b(1, 0.0), out(1, -1.0);
    kernels::conv3d_forward(s, in.data(), w.data(), b.data(), out.data());
    CHECK(out[0] == doctest::Approx(27.0).epsilon(1e-14));
}

TEST_CASE("conv3d: centered identity kernel with padding 1 reproduces input") {
    Rng rng(11);
    Conv3dShape s{1, 1, 4, 5, 3, 1, 3, 3, 3, 1, 1};
    auto in = random_vec(4 * 5 * 3, rng);
    std::vector<double> w(27, 0.0), b(1, 0.0), out(in.size(), 0.0);
    w[13] = 1.0;  // center of the 3x3x3 kernel
    kernels::conv3d_forward(s, in.data(), w.data(), b.data(), out.data());
    CHECK(max_abs_diff(in, out) == 0.0);
}

TEST_CASE("conv3d forward/backward match the nested-loop reference") {
    const std::vector<ConvCase> cases = {
        {1, 2, 4, 4, 4, 3, 2, 1, 0},  // oracle case from the op contract
        {2, 3, 5, 4, 6, 2, 3, 1, 1},
        {1, 2, 6, 5, 7, 3, 3, 2, 1},
        {2, 1, 4, 4, 4, 2, 2, 2, 0},
        {1, 1, 5, 5, 5, 2, 3, 2, 2},
        {1, 2, 2, 6, 6, 1, 4, 2, 1},  // kernel reaches into padding on both sides
    };
    Rng rng(29);
    for (const auto& c : cases) {
        CAPTURE(c.d);
        CAPTURE(c.k);
        CAPTURE(c.stride);
        CAPTURE(c.pad);
        Conv3dShape s{c.n, c.cin, c.d, c.h, c.w, c.cout, c.k, c.k, c.k, c.stride, c.pad};
        const size_t nin = c.n * c.cin * c.d * c.h * c.w;
        const size_t nw = c.cout * c.cin * c.k * c.k * c.k;
        const size_t nout = c.n * c.cout * s.od() * s.oh() * s.ow();
        auto in = random_vec(nin, rng);
        auto w = random_vec(nw, rng);
        auto b = random_vec(c.cout, rng);
        std::vector<double> out(nout, 0.0), ref(nout, 0.0);
        kernels::conv3d_forward(s, in.data(), w.data(), b.data(), out.data());
        refk::conv3d_forward(s, in.data(), w.data(), b.data(), ref.data());
        CHECK(max_abs_diff(out, ref) < 1e-12);

        auto gout = random_vec(nout, rng);
        std::vector<double> gin(nin, 0.0), gin_ref(nin, 0.0);
        kernels::conv3d_backward_input(s, gout.data(), w.data(), gin.data());
        refk::conv3d_backward_input(s, gout.data(), w.data(), gin_ref.data());
        CHECK(max_abs_diff(gin, gin_ref) < 1e-12);

        std::vector<double> gw(nw, 0.0), gw_ref(nw, 0.0);
        kernels::conv3d_backward_weight(s, in.data(), gout.data(), gw.data());
        refk::conv3d_backward_weight(s, in.data(), gout.data(), gw_ref.data());
        CHECK(max_abs_diff(gw, gw_ref) < 1e-12);

        std::vector<double> gb(c.cout, 0.0), gb_ref(c.cout, 0.0);
        kernels::conv3d_backward_bias(s, gout.data(), gb.data());
        refk::conv3d_backward_bias(s, gout.data(), gb_ref.data());
        CHECK(max_abs_diff(gb, gb_ref) < 1e-12);
    }
}

TEST_CASE("conv3d kernels are bit-identical across thread counts") {
    Rng rng(31);
    Conv3dShape s{2, 3, 6, 5, 7, 4, 3, 3, 3, 2, 1};
    const size_t nin = 2 * 3 * 6 * 5 * 7, nw = 4 * 3 * 27;
    const size_t nout = 2 * 4 * s.od() * s.oh() * s.ow();
    auto in = random_vec(nin, rng);
    auto w = random_vec(nw, rng);
    auto b = random_vec(4, rng);
    auto gout = random_vec(nout, rng);

    auto run = [&](int threads) {
        kernels::set_threads(threads);
        std::vector<double> out(nout, 0.0), gin(nin, 0.0), gw(nw, 0.0), gb(4, 0.0);
        kernels::conv3d_forward(s, in.data(), w.data(), b.data(), out.data());
        kernels::conv3d_backward_input(s, gout.data(), w.data(), gin.data());
        kernels::conv3d_backward_weight(s, in.data(), gout.data(), gw.data());
        kernels::conv3d_backward_bias(s, gout.data(), gb.data());
        out.insert(out.end(), gin.begin(), gin.end());
        out.insert(out.end(), gw.begin(), gw.end());
        out.insert(out.end(), gb.begin(), gb.end());
        return out;
    };
    const auto t1 = run(1);
    const auto t3 = run(3);
    const auto t8 = run(8);
    kernels::set_threads(0);
    CHECK(std::memcmp(t1.data(), t3.data(), t1.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(t1.data(), t8.data(), t1.size() * sizeof(double)) == 0);
}

TEST_CASE("avg_pool3d and dense kernels match reference") {
    Rng rng(37);
    Pool2Shape ps{2, 3, 5, 4, 6};  // odd depth exercises floor semantics
    const size_t nin = 2 * 3 * 5 * 4 * 6;
    const size_t nout = 2 * 3 * ps.od() * ps.oh() * ps.ow();
    auto in = random_vec(nin, rng);
    std::vector<double> out(nout, 0.0), ref(nout, 0.0);
    kernels::avg_pool2_forward(ps, in.data(), out.data());
    refk::avg_pool2_forward(ps, in.data(), ref.data());
    CHECK(max_abs_diff(out, ref) < 1e-12);

    auto gout = random_vec(nout, rng);
    std::vector<double> gin(nin, 0.0), gin_ref(nin, 0.0);
    kernels::avg_pool2_backward(ps, gout.data(), gin.data());
    refk::avg_pool2_backward(ps, gout.data(), gin_ref.data());
    CHECK(max_abs_diff(gin, gin_ref) < 1e-12);

    auto x = random_vec(4 * 5, rng);
    auto w = random_vec(5 * 3, rng);
    auto b = random_vec(3, rng);
    std::vector<double> y(4 * 3, 0.0), y_ref(4 * 3, 0.0);
    kernels::dense_forward(4, 5, 3, x.data(), w.data(), b.data(), y.data());
    refk::dense_forward(4, 5, 3, x.data(), w.data(), b.data(), y_ref.data());
    CHECK(max_abs_diff(y, y_ref) < 1e-12);
}

// ---------------------------------------------------------------------------
// tape ops

TEST_CASE("dense: identity weights and hand example") {
    Tape tape;
    Tensor x = Tensor::from_data({1, 2}, {1.0, 2.0});
    Tensor w = Tensor::from_data({2, 2}, {1.0, 0.0, 0.0, 1.0});
    Tensor b = Tensor::from_data({2}, {3.0, 4.0});
    Tensor y = nn::dense(tape, x, w, b);
    CHECK(y.data()[0] == doctest::Approx(4.0));
    CHECK(y.data()[1] == doctest::Approx(6.0));

    Tensor b0({2}, 0.0);
    Tensor y2 = nn::dense(tape, x, w, b0);
    CHECK(y2.data()[0] == doctest::Approx(1.0));
    CHECK(y2.data()[1] == doctest::Approx(2.0));
}

TEST_CASE("dense: shape mismatch throws") {
    Tape tape;
    Tensor x({2, 3});
    Tensor w({4, 2});
    Tensor b({2});
    CHECK_THROWS_AS((void)nn::dense(tape, x, w, b), std::invalid_argument);
}

TEST_CASE("conv3d op: channel mismatch and zero stride throw") {
    Tape tape;
    Tensor x({1, 2, 4, 4, 4});
    Tensor w({1, 3, 2, 2, 2});
    Tensor b({1});
    CHECK_THROWS_AS((void)nn::conv3d(tape, x, w, b, 1, 0), std::invalid_argument);
    Tensor w2({1, 2, 2, 2, 2});
    CHECK_THROWS_AS((void)nn::conv3d(tape, x, w2, b, 0, 0), std::invalid_argument);
}

TEST_CASE("relu: forward values and backward masks") {
    Tape tape;
    Tensor x = Tensor::from_data({3}, {-1.0, 0.0, 2.0}, true);
    Tensor y = nn::relu(tape, x);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == 0.0);
    CHECK(y.data()[2] == 2.0);
    // seed upstream gradient of ones and sweep
    y.grad()[0] = 1.0;
    y.grad()[1] = 1.0;
    y.grad()[2] = 1.0;
    tape.node(tape.size() - 1).backward(GradMode::standard);
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 0.0);  // subgradient choice at exactly 0
    CHECK(x.grad()[2] == 1.0);
}

TEST_CASE("relu: guided mode drops negative upstream gradients") {
    Tape tape;
    Tensor x = Tensor::from_data({3}, {-1.0, 2.0, 3.0}, true);
    Tensor y = nn::relu(tape, x);
    y.grad()[0] = 5.0;
    y.grad()[1] = -4.0;
    y.grad()[2] = 7.0;

    tape.node(0).backward(GradMode::standard);
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == -4.0);
    CHECK(x.grad()[2] == 7.0);

    x.zero_grad();
    tape.node(0).backward(GradMode::guided_relu);
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 0.0);  // positive input but negative upstream grad
    CHECK(x.grad()[2] == 7.0);
}

TEST_CASE("sigmoid: midpoint and saturation") {
    Tape tape;
    Tensor x = Tensor::from_data({3}, {0.0, 500.0, -500.0});
    Tensor y = nn::sigmoid(tape, x);
    CHECK(y.data()[0] == doctest::Approx(0.5));
    CHECK(y.data()[1] > 1.0 - 1e-10);
    CHECK(y.data()[1] <= 1.0);
    CHECK(y.data()[2] < 1e-10);
    CHECK(y.all_finite());
}

TEST_CASE("global_avg_pool: constants and 1..8 mean") {
    Tape tape;
    Tensor c({2, 3, 2, 2, 2}, 3.0);
    Tensor y = nn::global_avg_pool(tape, c);
    for (size_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(3.0));

    std::vector<double> v(8);
    for (int i = 0; i < 8; ++i) v[i] = i + 1.0;
    Tensor x = Tensor::from_data({1, 1, 2, 2, 2}, v, true);
    Tensor m = nn::global_avg_pool(tape, x);
    CHECK(m.item() == doctest::Approx(4.5));
    m.grad()[0] = 1.0;
    tape.node(tape.size() - 1).backward(GradMode::standard);
    for (size_t i = 0; i < 8; ++i) CHECK(x.grad()[i] == doctest::Approx(0.125));
}

TEST_CASE("batch_norm: normalizes batch statistics, errors on batch of 1") {
    Tape tape;
    Rng rng(41);
    // per-channel mean 5, sd 2 inputs
    const size_t N = 16, C = 2;
    std::vector<double> v(N * C);
    for (auto& x : v) x = 5.0 + 2.0 * rng.normal();
    Tensor x = Tensor::from_data({N, C}, v);
    nn::BatchNormParams p(C);
    Tensor y = nn::batch_norm(tape, x, p, true);
    for (size_t c = 0; c < C; ++c) {
        double mean = 0.0, var = 0.0;
        for (size_t n = 0; n < N; ++n) mean += y.data()[n * C + c];
        mean /= N;
        for (size_t n = 0; n < N; ++n) {
            const double d = y.data()[n * C + c] - mean;
            var += d * d;
        }
        var /= N;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-4);  // eps 1e-5 shifts variance slightly below 1
        // running stats moved toward batch stats with momentum 0.1
        CHECK(p.running_mean[c] != 0.0);
        CHECK(p.running_var[c] != 1.0);
    }

    Tensor single({1, C}, 0.0);
    CHECK_THROWS_AS((void)nn::batch_norm(tape, single, p, true), std::invalid_argument);
}

TEST_CASE("batch_norm: inference uses running stats") {
    Tape tape;
    nn::BatchNormParams p(1);
    p.gamma.data()[0] = 2.0;
    p.beta.data()[0] = 1.0;
    Tensor x = Tensor::from_data({1, 1}, {3.0});
    Tensor y = nn::batch_norm(tape, x, p, false);
    CHECK(y.item() == doctest::Approx(7.0).epsilon(1e-4));
}

TEST_CASE("dropout: identity cases and survivor statistics") {
    Tape tape;
    Rng rng(43);
    Tensor x({100}, 1.0);
    Tensor y0 = nn::dropout(tape, x, 0.0, true, rng);
    CHECK(y0.same_storage(x));
    Tensor ye = nn::dropout(tape, x, 0.2, false, rng);
    CHECK(ye.same_storage(x));
    CHECK_THROWS_AS((void)nn::dropout(tape, x, 1.0, true, rng), std::invalid_argument);

    const size_t m = 100000;
    Tensor big({m}, 1.0);
    Tensor yd = nn::dropout(tape, big, 0.2, true, rng);
    size_t survivors = 0;
    double sum = 0.0;
    for (size_t i = 0; i < m; ++i) {
        if (yd.data()[i] != 0.0) ++survivors;
        sum += yd.data()[i];
    }
    const double frac = (double)survivors / (double)m;
    CHECK(frac > 0.79);
    CHECK(frac < 0.81);
    CHECK(std::abs(sum / (double)m - 1.0) < 0.02);  // E[output] preserved by 1/(1-rate)
}

TEST_CASE("dropout: same seed gives bit-identical forward passes") {
    Rng base(57);
    auto run = [&] {
        Tape tape;
        Rng r = base.fork(7);
        Tensor x({64}, 1.5);
        return nn::dropout(tape, x, 0.5, true, r);
    };
    Tensor a = run(), b = run();
    CHECK(std::memcmp(a.data(), b.data(), a.numel() * sizeof(double)) == 0);
}

TEST_CASE("concat_channels: layout and backward split") {
    Tape tape;
    Tensor a({1, 1, 1, 1, 2}, 1.0, true);
    Tensor b({1, 2, 1, 1, 2}, 2.0, true);
    Tensor y = nn::concat_channels(tape, a, b);
    REQUIRE(y.shape() == std::vector<size_t>{1, 3, 1, 1, 2});
    CHECK(y.data()[0] == 1.0);
    CHECK(y.data()[1] == 1.0);
    CHECK(y.data()[2] == 2.0);
    CHECK(y.data()[5] == 2.0);
    for (size_t i = 0; i < 6; ++i) y.grad()[i] = (double)i + 1.0;
    tape.node(0).backward(GradMode::standard);
    CHECK(a.grad()[0] == 1.0);
    CHECK(a.grad()[1] == 2.0);
    CHECK(b.grad()[0] == 3.0);
    CHECK(b.grad()[3] == 6.0);
}

TEST_CASE("dense_block: channel arithmetic") {
    Rng rng(47);
    Tape tape;
    nn::DenseBlockParams p2(8, 4, 2, rng);
    Tensor x({2, 8, 4, 4, 4}, 0.5);
    Tensor y = nn::dense_block(tape, x, p2, true);
    CHECK(y.extent(1) == 16);  // 8 + 2*4

    nn::DenseBlockParams p1(3, 2, 1, rng);
    Tensor x1({2, 3, 4, 4, 4}, 0.5);
    Tensor y1 = nn::dense_block(tape, x1, p1, true);
    CHECK(y1.extent(1) == 5);
    CHECK(y1.all_finite());
}

// ---------------------------------------------------------------------------
// bce / weighted sum

TEST_CASE("bce_with_logits: exact values and saturation") {
    CHECK(nn::bce_with_logits_value(0.0, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(nn::bce_with_logits_value(100.0, 1.0) < 1e-40);
    CHECK(nn::bce_with_logits_value(100.0, 0.0) == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(std::isfinite(nn::bce_with_logits_value(700.0, 0.0)));

    // agrees with the naive two-step sigmoid+log formula away from saturation
    // (complement probability as sigmoid(-z), not 1-sigmoid(z), so the oracle
    // itself keeps its digits at |z| near 20)
    Rng rng(53);
    for (int i = 0; i < 200; ++i) {
        const double z = rng.uniform(-20.0, 20.0);
        const double t = rng.bernoulli(0.5) ? 1.0 : 0.0;
        const double naive =
            -(t * std::log(nn::sigmoid_value(z)) + (1.0 - t) * std::log(nn::sigmoid_value(-z)));
        CHECK(std::abs(nn::bce_with_logits_value(z, t) - naive) < 1e-10);
    }
}

TEST_CASE("weighted_sum: arithmetic and zero-weight skipping") {
    Tape tape;
    Tensor a = Tensor::scalar(0.5, true);
    Tensor b = Tensor::scalar(1.0, true);
    Tensor c = Tensor::scalar(2.0, true);
    Tensor tot = nn::weighted_sum(tape, {a, b, c}, {0.4, 0.3, 0.3});
    CHECK(tot.item() == doctest::Approx(1.1).epsilon(1e-15));

    Tape tape2;
    Tensor tot2 = nn::weighted_sum(tape2, {a, b, c}, {1.0, 0.0, 0.0});
    CHECK(tot2.item() == a.item());  // bitwise: 0 + 1.0*x
    tape2.backward(tot2);
    CHECK(a.grad()[0] == 1.0);
    CHECK_FALSE(b.has_grad());  // zero-weight term never touched
    CHECK_FALSE(c.has_grad());
}

// ---------------------------------------------------------------------------
// tape integration

TEST_CASE("tape: x*x at 3 has gradient 6 via shared storage") {
    Tape tape;
    Tensor x = Tensor::from_data({1, 1}, {3.0}, true);
    Tensor b({1}, 0.0);
    Tensor y = nn::dense(tape, x, x, b);  // x as input and weight: y = x^2
    CHECK(y.item() == doctest::Approx(9.0));
    tape.backward(y);
    CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("tape: branches sharing x add their gradients") {
    Tape tape;
    Tensor x = Tensor::from_data({1, 1}, {2.0}, true);
    Tensor w1 = Tensor::from_data({1, 1}, {3.0});
    Tensor w2 = Tensor::from_data({1, 1}, {5.0});
    Tensor b({1}, 0.0);
    Tensor s1 = nn::dense(tape, x, w1, b);
    Tensor s2 = nn::dense(tape, x, w2, b);
    Tensor tot = nn::weighted_sum(tape, {s1, s2}, {1.0, 1.0});
    tape.backward(tot);
    CHECK(x.grad()[0] == doctest::Approx(8.0));
}

TEST_CASE("tape: backward on non-scalar loss throws") {
    Tape tape;
    Tensor x({3}, 1.0, true);
    CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// finite-difference gradient checks

TEST_CASE("grad check: relu away from zero") {
    Rng rng(61);
    Tensor x = Tensor::from_data({20, 1}, random_vec(20, rng, -2.0, 2.0), true);
    for (size_t i = 0; i < x.numel(); ++i)  // push points away from the kink
        if (std::abs(x.data()[i]) < 1e-3) x.data()[i] = 0.5;
    Tensor ones = Tensor::from_data({1, 20}, std::vector<double>(20, 1.0));
    Tensor b({1}, 0.0);

    auto loss = [&] {
        Tape t;
        Tensor y = nn::relu(t, x);
        Tensor yt = nn::dense(t, ones, y, b);  // [1,20]x[20,1] contraction
        return yt.item();
    };
    Tape tape;
    Tensor y = nn::relu(tape, x);
    Tensor l = nn::dense(tape, ones, y, b);
    tape.backward(l);
    CHECK(fd_max_rel_err(x, loss) < 1e-6);
}

TEST_CASE("grad check: sigmoid") {
    Rng rng(67);
    Tensor x = Tensor::from_data({1, 15}, random_vec(15, rng, -5.0, 5.0), true);
    Tensor w = Tensor::from_data({15, 1}, random_vec(15, rng));
    Tensor b({1}, 0.0);
    Tape tape;
    Tensor l = nn::dense(tape, nn::sigmoid(tape, x), w, b);
    tape.backward(l);
    auto loss = [&] {
        Tape t;
        return nn::dense(t, nn::sigmoid(t, x), w, b).item();
    };
    CHECK(fd_max_rel_err(x, loss) < 1e-6);
}

TEST_CASE("grad check: batch_norm input, scale and shift") {
    Rng rng(71);
    const size_t N = 6, C = 3;
    Tensor x = Tensor::from_data({N, C}, random_vec(N * C, rng, -2.0, 2.0), true);
    nn::BatchNormParams p(C);
    for (size_t c = 0; c < C; ++c) {
        p.gamma.data()[c] = rng.uniform(0.5, 1.5);
        p.beta.data()[c] = rng.uniform(-0.5, 0.5);
    }
    Tensor w = Tensor::from_data({C, 1}, random_vec(C, rng));
    Tensor ones = Tensor::from_data({1, N}, std::vector<double>(N, 1.0));
    Tensor b({1}, 0.0);

    // nonlinear readout: a plain linear sum of xhat is identically zero, which
    // would leave nothing but roundoff to compare against
    auto loss = [&] {
        Tape t;
        nn::BatchNormParams q(C);  // fresh running stats; batch stats drive training mode
        q.gamma = p.gamma;
        q.beta = p.beta;
        Tensor h = nn::sigmoid(t, nn::batch_norm(t, x, q, true));
        Tensor row = nn::dense(t, ones, nn::dense(t, h, w, b), b);
        return row.item();
    };
    Tape tape;
    nn::BatchNormParams q(C);
    q.gamma = p.gamma;
    q.beta = p.beta;
    Tensor h = nn::sigmoid(tape, nn::batch_norm(tape, x, q, true));
    Tensor l = nn::dense(tape, ones, nn::dense(tape, h, w, b), b);
    tape.backward(l);
    CHECK(fd_max_rel_err(x, loss) < 1e-5);
    CHECK(fd_max_rel_err(p.gamma, loss) < 1e-5);
    CHECK(fd_max_rel_err(p.beta, loss) < 1e-5);
}

TEST_CASE("grad check: full tiny network conv-relu-pool-dense-bce") {
    Rng rng(73);
    const size_t N = 2;
    Tensor x = Tensor::from_data({N, 1, 4, 4, 4}, random_vec(N * 64, rng), true);
    nn::Conv3dParams conv(1, 2, 3, rng);
    nn::DenseParams head(2, 1, rng);
    for (size_t i = 0; i < head.weight.numel(); ++i) head.weight.data()[i] = rng.uniform(-1, 1);
    Tensor targets = Tensor::from_data({N, 1}, {1.0, 0.0});

    auto loss = [&] {
        Tape t;
        Tensor h = nn::conv3d(t, x, conv.weight, conv.bias, 1, 1);
        h = nn::relu(t, h);
        h = nn::avg_pool3d_2(t, h);
        h = nn::global_avg_pool(t, h);
        Tensor z = nn::dense(t, h, head.weight, head.bias);
        return nn::bce_with_logits_mean(t, z, targets).item();
    };
    Tape tape;
    Tensor h = nn::conv3d(tape, x, conv.weight, conv.bias, 1, 1);
    h = nn::relu(tape, h);
    h = nn::avg_pool3d_2(tape, h);
    h = nn::global_avg_pool(tape, h);
    Tensor z = nn::dense(tape, h, head.weight, head.bias);
    Tensor l = nn::bce_with_logits_mean(tape, z, targets);
    tape.backward(l);

    CHECK(fd_max_rel_err(conv.weight, loss) < 1e-4);
    CHECK(fd_max_rel_err(conv.bias, loss) < 1e-4);
    CHECK(fd_max_rel_err(head.weight, loss) < 1e-4);
    CHECK(fd_max_rel_err(head.bias, loss) < 1e-4);
    CHECK(fd_max_rel_err(x, loss) < 1e-4);
}

TEST_CASE("grad check: two-layer dense block end to end") {
    Rng rng(79);
    const size_t N = 2;
    Tensor x = Tensor::from_data({N, 2, 4, 4, 4}, random_vec(N * 2 * 64, rng), true);
    nn::DenseBlockParams block(2, 2, 2, rng);
    nn::DenseParams head(6, 1, rng);
    Tensor targets = Tensor::from_data({N, 1}, {0.0, 1.0});

    auto run = [&](Tape& t) {
        Tensor h = nn::dense_block(t, x, block, true);
        h = nn::global_avg_pool(t, h);
        Tensor z = nn::dense(t, h, head.weight, head.bias);
        return nn::bce_with_logits_mean(t, z, targets);
    };
    auto loss = [&] {
        Tape t;
        return run(t).item();
    };
    Tape tape;
    Tensor l = run(tape);
    tape.backward(l);

    for (auto& layer : block.layers) {
        CHECK(fd_max_rel_err(layer.conv.weight, loss) < 1e-4);
        CHECK(fd_max_rel_err(layer.bn.gamma, loss) < 1e-4);
        CHECK(fd_max_rel_err(layer.bn.beta, loss) < 1e-4);
    }
    CHECK(fd_max_rel_err(x, loss) < 1e-4);
}

TEST_CASE("grad check: dropout with a frozen mask") {
    Rng base(83);
    Tensor x = Tensor::from_data({1, 16}, std::vector<double>(16, 1.0), true);
    Rng probe(97);
    for (size_t i = 0; i < 16; ++i) x.data()[i] = probe.uniform(-1.0, 1.0);
    Tensor w = Tensor::from_data({16, 1}, random_vec(16, probe));
    Tensor b({1}, 0.0);
    auto loss = [&] {
        Tape t;
        Rng r = base.fork(1);  // same mask every evaluation
        Tensor h = nn::dropout(t, x, 0.5, true, r);
        return nn::dense(t, h, w, b).item();
    };
    Tape tape;
    Rng r = base.fork(1);
    Tensor h = nn::dropout(tape, x, 0.5, true, r);
    Tensor l = nn::dense(tape, h, w, b);
    tape.backward(l);
    CHECK(fd_max_rel_err(x, loss) < 1e-6);
}

// ---------------------------------------------------------------------------
// serialization

TEST_CASE("param serialization round-trips bitwise") {
    Rng rng(89);
    std::vector<nn::ParamEntry> params;
    params.push_back({"backbone.stem.weight", {2, 1, 3, 3, 3}, random_vec(54, rng)});
    params.push_back({"heads.prognosis.bias", {1}, {0.25}});
    params.push_back({"bn.running_mean", {4}, random_vec(4, rng)});

    const std::string path = "roundtrip_params.bin";
    nn::save_params(path, params);
    const auto back = nn::load_params(path);
    REQUIRE(back.size() == params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        CHECK(back[i].name == params[i].name);
        CHECK(back[i].shape == params[i].shape);
        REQUIRE(back[i].values.size() == params[i].values.size());
        CHECK(std::memcmp(back[i].values.data(), params[i].values.data(),
                          params[i].values.size() * sizeof(double)) == 0);
    }
    std::remove(path.c_str());
}

TEST_CASE("param load rejects bad magic") {
    const std::string path = "bad_magic.bin";
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE         garbage";
    }
    CHECK_THROWS_AS((void)nn::load_params(path), std::runtime_error);
    std::remove(path.c_str());
}
