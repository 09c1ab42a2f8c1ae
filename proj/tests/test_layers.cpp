#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include "lcnn/layers.hpp"
#include "oracles.hpp"

using namespace lcnn;

namespace {

double dot(const TensorD& a, const TensorD& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Checks a layer's analytic input and parameter gradients against 64-bit
// central finite differences of L = sum(coeff * forward(x)).
void grad_check(LayerT<double>& layer, TensorD x, double h = 1e-5, double tol = 1e-4) {
    Rng rng(99);
    TensorD y0 = layer.forward(x, true, nullptr);
    TensorD coeff(y0.n(), y0.c(), y0.h(), y0.w());
    oracle::fill_random(coeff, rng);

    for (auto* b : layer.param_blocks()) b->zero_grad();
    layer.forward(x, true, nullptr);
    TensorD dx = layer.backward(coeff);

    auto loss_at = [&](TensorD& input) {
        TensorD y = layer.forward(input, true, nullptr);
        return dot(y, coeff);
    };

    REQUIRE(dx.same_shape(x));
    for (size_t i = 0; i < x.size(); ++i) {
        double keep = x[i];
        x[i] = keep + h;
        double lp = loss_at(x);
        x[i] = keep - h;
        double lm = loss_at(x);
        x[i] = keep;
        double numeric = (lp - lm) / (2 * h);
        CHECK(oracle::rel_error(dx[i], numeric) < tol);
    }

    for (auto* block : layer.param_blocks()) {
        for (size_t i = 0; i < block->value.size(); ++i) {
            double keep = block->value[i];
            block->value[i] = keep + h;
            double lp = loss_at(x);
            block->value[i] = keep - h;
            double lm = loss_at(x);
            block->value[i] = keep;
            double numeric = (lp - lm) / (2 * h);
            CHECK(oracle::rel_error(block->grad[i], numeric) < tol);
        }
    }

    // restore caches for any later use
    layer.forward(x, true, nullptr);
}

void randomize_params(LayerT<double>& layer, Rng& rng) {
    for (auto* b : layer.param_blocks()) oracle::fill_random(b->value, rng, -0.5, 0.5);
}

}  // namespace

TEST_CASE("mfm forward takes elementwise max of the two halves") {
    TensorD c(1, 2, 1, 1);
    c[0] = 3;
    c[1] = 5;
    MfmT<double> mfm("mfm");
    TensorD f = mfm.forward(c, false, nullptr);
    CHECK(f.size() == 1);
    CHECK(f[0] == 5);
}

TEST_CASE("mfm on duplicated halves is the identity") {
    Rng rng(2);
    TensorD x(2, 3, 4, 4);
    oracle::fill_random(x, rng);
    TensorD c(2, 6, 4, 4);
    for (int n = 0; n < 2; ++n)
        for (int k = 0; k < 3; ++k)
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 4; ++w) {
                    c.at(n, k, h, w) = x.at(n, k, h, w);
                    c.at(n, k + 3, h, w) = x.at(n, k, h, w);
                }
    MfmT<double> mfm("mfm");
    TensorD f = mfm.forward(c, false, nullptr);
    for (size_t i = 0; i < x.size(); ++i) CHECK(f[i] == x[i]);
}

TEST_CASE("mfm matches elementwise scan oracle on random input") {
    Rng rng(17);
    TensorD c(2, 6, 4, 4);
    oracle::fill_random(c, rng);
    MfmT<double> mfm("mfm");
    TensorD f = mfm.forward(c, false, nullptr);
    for (int n = 0; n < 2; ++n)
        for (int k = 0; k < 3; ++k)
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 4; ++w)
                    CHECK(f.at(n, k, h, w) ==
                          std::max(c.at(n, k, h, w), c.at(n, k + 3, h, w)));
}

TEST_CASE("mfm rejects odd channel counts") {
    TensorD c(1, 5, 2, 2);
    MfmT<double> mfm("mfm");
    CHECK_THROWS_AS(mfm.forward(c, false, nullptr), std::invalid_argument);
}

TEST_CASE("mfm is swap-invariant and monotone") {
    Rng rng(23);
    TensorD c(1, 8, 3, 3);
    oracle::fill_random(c, rng);
    TensorD swapped(1, 8, 3, 3);
    for (int k = 0; k < 4; ++k)
        for (int h = 0; h < 3; ++h)
            for (int w = 0; w < 3; ++w) {
                swapped.at(0, k, h, w) = c.at(0, k + 4, h, w);
                swapped.at(0, k + 4, h, w) = c.at(0, k, h, w);
            }
    MfmT<double> mfm("mfm");
    TensorD f1 = mfm.forward(c, false, nullptr);
    TensorD f2 = mfm.forward(swapped, false, nullptr);
    for (size_t i = 0; i < f1.size(); ++i) CHECK(f1[i] == f2[i]);

    TensorD bigger = c;
    for (size_t i = 0; i < bigger.size(); ++i) bigger[i] += rng.uniform(0.0, 0.5);
    TensorD fb = mfm.forward(bigger, false, nullptr);
    for (size_t i = 0; i < f1.size(); ++i) CHECK(fb[i] >= f1[i]);
}

TEST_CASE("mfm backward routing, tie rule, and exact 50% sparsity") {
    MfmT<double> mfm("mfm");

    TensorD c(1, 2, 1, 1);
    c[0] = 3;
    c[1] = 5;
    mfm.forward(c, false, nullptr);
    TensorD up(1, 1, 1, 1);
    up[0] = 1;
    TensorD g = mfm.backward(up);
    CHECK(g[0] == 0);
    CHECK(g[1] == 1);

    // tie routes to the first half (>= comparison)
    c[0] = 4;
    c[1] = 4;
    mfm.forward(c, false, nullptr);
    g = mfm.backward(up);
    CHECK(g[0] == 1);
    CHECK(g[1] == 0);

    // tie-free random input: exactly half the entries are zero and per-pair
    // sums equal the upstream value
    Rng rng(31);
    TensorD big(2, 10, 6, 6);
    oracle::fill_random(big, rng);
    mfm.forward(big, false, nullptr);
    TensorD ones(2, 5, 6, 6);
    oracle::fill_random(ones, rng, 0.5, 1.5);
    TensorD grad = mfm.backward(ones);
    size_t zeros = 0;
    for (size_t i = 0; i < grad.size(); ++i)
        if (grad[i] == 0.0) ++zeros;
    CHECK(zeros == grad.size() / 2);
    for (int n = 0; n < 2; ++n)
        for (int k = 0; k < 5; ++k)
            for (int h = 0; h < 6; ++h)
                for (int w = 0; w < 6; ++w)
                    CHECK(grad.at(n, k, h, w) + grad.at(n, k + 5, h, w) ==
                          ones.at(n, k, h, w));
}

TEST_CASE("relu forward and subgradient at zero") {
    TensorD x(1, 3, 1, 1);
    x[0] = -1;
    x[1] = 0;
    x[2] = 2;
    ReluT<double> relu("relu");
    TensorD y = relu.forward(x, false, nullptr);
    CHECK(y[0] == 0);
    CHECK(y[1] == 0);
    CHECK(y[2] == 2);

    TensorD up(1, 3, 1, 1);
    up.fill(1.0);
    TensorD g = relu.backward(up);
    CHECK(g[0] == 0);
    CHECK(g[1] == 0);
    CHECK(g[2] == 1);

    Rng rng(4);
    TensorD r(2, 4, 3, 3);
    oracle::fill_random(r, rng);
    TensorD yr = relu.forward(r, false, nullptr);
    for (size_t i = 0; i < r.size(); ++i) CHECK(yr[i] == std::max(0.0, r[i]));
}

TEST_CASE("dropout identity paths") {
    Rng rng(8);
    TensorD x(1, 1, 10, 10);
    oracle::fill_random(x, rng);

    DropoutT<double> drop("drop", 0.7);
    TensorD y = drop.forward(x, false, nullptr);  // test mode
    for (size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);

    DropoutT<double> zero("drop0", 0.0);
    TensorD y0 = zero.forward(x, true, &rng);
    for (size_t i = 0; i < x.size(); ++i) CHECK(y0[i] == x[i]);

    CHECK_THROWS_AS(DropoutT<double>("bad", 1.0), std::invalid_argument);
}

TEST_CASE("dropout monte-carlo zero fraction and expectation") {
    Rng rng(1234);
    TensorD x(1, 1, 100, 100);
    x.fill(1.0);
    DropoutT<double> drop("drop", 0.7);
    TensorD y = drop.forward(x, true, &rng);

    size_t zeros = 0;
    double sum = 0;
    for (size_t i = 0; i < y.size(); ++i) {
        if (y[i] == 0.0)
            ++zeros;
        else
            CHECK(y[i] == doctest::Approx(1.0 / 0.3));
        sum += y[i];
    }
    double frac = static_cast<double>(zeros) / y.size();
    CHECK(frac > 0.68);
    CHECK(frac < 0.72);
    // inverted scaling keeps the expectation within 3%
    CHECK(std::abs(sum / y.size() - 1.0) < 0.03);
}

TEST_CASE("softmax cross entropy on uniform and extreme logits") {
    std::vector<double> logits(4, 1.25);
    auto [loss, grad] = softmax_cross_entropy<double>(logits, 2);
    CHECK(loss == doctest::Approx(std::log(4.0)));
    for (int i = 0; i < 4; ++i)
        CHECK(grad[i] == doctest::Approx(0.25 - (i == 2 ? 1.0 : 0.0)));

    std::vector<double> big{1000.0, 0.0};
    auto [l2, g2] = softmax_cross_entropy<double>(big, 0);
    CHECK(std::isfinite(l2));
    CHECK(l2 == doctest::Approx(0.0));
    CHECK(std::isfinite(g2[0]));

    CHECK_THROWS_AS(softmax_cross_entropy<double>(logits, 4), std::invalid_argument);
    CHECK_THROWS_AS(softmax_cross_entropy<double>(logits, -1), std::invalid_argument);
}

TEST_CASE("softmax gradient matches finite differences at 1e-6") {
    Rng rng(55);
    const int k = 16;
    std::vector<double> logits(k);
    for (auto& v : logits) v = rng.uniform(-2, 2);
    const int label = 5;

    auto [loss, grad] = softmax_cross_entropy<double>(logits, label);
    (void)loss;
    const double h = 1e-6;
    for (int i = 0; i < k; ++i) {
        double keep = logits[i];
        logits[i] = keep + h;
        double lp = softmax_cross_entropy<double>(logits, label).first;
        logits[i] = keep - h;
        double lm = softmax_cross_entropy<double>(logits, label).first;
        logits[i] = keep;
        double numeric = (lp - lm) / (2 * h);
        CHECK(oracle::rel_error(grad[i], numeric) < 1e-6);
    }
}

TEST_CASE("gradient check: paired convolution + mfm") {
    Rng rng(71);
    ConvPairT<double> conv("conv1", 2, 3, 3, 1, 1);
    randomize_params(conv, rng);
    TensorD x(2, 2, 5, 5);
    oracle::fill_random(x, rng);
    grad_check(conv, x);

    // chained through MFM: check the pair's parameter gradients with the MFM
    // routing in the path
    MfmT<double> mfm("mfm1");
    TensorD coeff;
    {
        TensorD y = mfm.forward(conv.forward(x, true, nullptr), true, nullptr);
        coeff = TensorD(y.n(), y.c(), y.h(), y.w());
        oracle::fill_random(coeff, rng);
    }
    auto loss_at = [&]() {
        TensorD y = mfm.forward(conv.forward(x, true, nullptr), true, nullptr);
        double s = 0;
        for (size_t i = 0; i < y.size(); ++i) s += y[i] * coeff[i];
        return s;
    };
    for (auto* b : conv.param_blocks()) b->zero_grad();
    loss_at();
    conv.backward(mfm.backward(coeff));

    const double h = 1e-5;
    for (auto* block : conv.param_blocks())
        for (size_t i = 0; i < block->value.size(); i += 7) {
            double keep = block->value[i];
            block->value[i] = keep + h;
            double lp = loss_at();
            block->value[i] = keep - h;
            double lm = loss_at();
            block->value[i] = keep;
            CHECK(oracle::rel_error(block->grad[i], (lp - lm) / (2 * h)) < 1e-4);
        }
}

TEST_CASE("gradient check: single convolution") {
    Rng rng(72);
    ConvT<double> conv("nin", 3, 2, 1, 1, 0);
    randomize_params(conv, rng);
    TensorD x(1, 3, 4, 4);
    oracle::fill_random(x, rng);
    grad_check(conv, x);
}

TEST_CASE("gradient check: max pool") {
    Rng rng(73);
    MaxPoolT<double> pool("pool", 2, 2);
    TensorD x(2, 2, 5, 5);
    oracle::fill_random(x, rng);
    grad_check(pool, x);
}

TEST_CASE("gradient check: fully connected") {
    Rng rng(74);
    FullyConnectedT<double> fc("fc", 12, 5);
    randomize_params(fc, rng);
    TensorD x(3, 3, 2, 2);
    oracle::fill_random(x, rng);
    grad_check(fc, x);
}

TEST_CASE("gradient check: mfm") {
    Rng rng(75);
    MfmT<double> mfm("mfm");
    TensorD x(2, 6, 4, 4);
    oracle::fill_random(x, rng);
    grad_check(mfm, x);
}

TEST_CASE("gradient check: relu") {
    Rng rng(76);
    ReluT<double> relu("relu");
    TensorD x(2, 3, 4, 4);
    oracle::fill_random(x, rng);
    grad_check(relu, x);
}

TEST_CASE("gradient check: dropout with fixed mask") {
    Rng rng(77);
    DropoutT<double> drop("drop", 0.5);
    TensorD x(1, 2, 4, 4);
    oracle::fill_random(x, rng);
    std::vector<uint8_t> mask(x.size());
    for (auto& m : mask) m = rng.bernoulli(0.5) ? 1 : 0;
    drop.set_fixed_mask(mask);
    grad_check(drop, x);
}

TEST_CASE("mfm backward deposits exactly one nonzero per pair with mass conservation") {
    Rng rng(78);
    MfmT<double> mfm("mfm");
    TensorD x(3, 8, 5, 5);
    oracle::fill_random(x, rng);
    mfm.forward(x, false, nullptr);
    TensorD up(3, 4, 5, 5);
    oracle::fill_random(up, rng, 0.1, 1.0);
    TensorD g = mfm.backward(up);

    double up_mass = 0, g_mass = 0;
    for (size_t i = 0; i < up.size(); ++i) up_mass += up[i];
    for (size_t i = 0; i < g.size(); ++i) g_mass += g[i];
    CHECK(g_mass == doctest::Approx(up_mass));

    for (int n = 0; n < 3; ++n)
        for (int k = 0; k < 4; ++k)
            for (int h = 0; h < 5; ++h)
                for (int w = 0; w < 5; ++w) {
                    bool first = g.at(n, k, h, w) != 0.0;
                    bool second = g.at(n, k + 4, h, w) != 0.0;
                    CHECK(first != second);
                }
}
