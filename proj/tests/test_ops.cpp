#include <catch2/catch.hpp>

#include <cmath>

#include "oracles.hpp"
#include "tiergan/loss.hpp"
#include "tiergan/ops.hpp"

using namespace tiergan;

namespace {

template <typename T>
NodePtr<T> leaf(Tensor<T> t) {
    return constant(std::move(t));
}

} // namespace

TEST_CASE("dense forward matches the hand-computed cases", "[ops][dense]") {
    // identity weights pass the input through
    auto y1 = dense(leaf<float>({{1, 2}, {1.0f, 1.0f}}),
                    leaf<float>({{2, 2}, {1.0f, 0.0f, 0.0f, 1.0f}}), leaf<float>({{2}, {0.0f, 0.0f}}));
    CHECK(y1->value.data == std::vector<float>{1.0f, 1.0f});

    // x = [1,1], W = [[1,2],[3,4]] -> [4, 6]
    auto y2 = dense(leaf<float>({{1, 2}, {1.0f, 1.0f}}),
                    leaf<float>({{2, 2}, {1.0f, 2.0f, 3.0f, 4.0f}}), leaf<float>({{2}, {0.0f, 0.0f}}));
    CHECK(y2->value.data == std::vector<float>{4.0f, 6.0f});

    // zero input passes the bias
    auto y3 = dense(leaf<float>(Tensor<float>({1, 2})),
                    leaf<float>({{2, 2}, {1.0f, 2.0f, 3.0f, 4.0f}}), leaf<float>({{2}, {5.0f, 5.0f}}));
    CHECK(y3->value.data == std::vector<float>{5.0f, 5.0f});
}

TEST_CASE("dense matches a naive matrix multiply on random inputs", "[ops][dense]") {
    Rng rng(11);
    auto x = oracle::random_tensor<float>({3, 7}, rng);
    auto w = oracle::random_tensor<float>({7, 5}, rng);
    auto b = oracle::random_tensor<float>({5}, rng);
    auto y = dense(leaf(x), leaf(w), leaf(b));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            double acc = b[j];
            for (std::size_t k = 0; k < 7; ++k) acc += double(x.at2(i, k)) * double(w.at2(k, j));
            CHECK(y->value.at2(i, j) == Approx(acc).margin(1e-5));
        }
}

TEST_CASE("dense rejects mismatched shapes and names both", "[ops][dense]") {
    auto x = leaf<float>(Tensor<float>({1, 3}));
    auto w = leaf<float>(Tensor<float>({2, 2}));
    auto b = leaf<float>(Tensor<float>({2}));
    CHECK_THROWS_WITH(dense(x, w, b),
                      Catch::Contains("(1, 3)") && Catch::Contains("(2, 2)"));
}

TEST_CASE("conv2d identity and constant kernels behave analytically", "[ops][conv]") {
    Rng rng(3);
    // 1x1 kernel of value 1 is the identity
    auto x = oracle::random_tensor<float>({1, 1, 5, 5}, rng);
    ConvGeometry id{1, 1, 1, 1, 0, 0, 1, 1};
    auto y = conv2d(leaf(x), leaf<float>({{1, 1, 1, 1}, {1.0f}}), leaf<float>(Tensor<float>({1})), id);
    CHECK(y->value.data == x.data);

    // constant image, all-ones 3x3 kernel, no padding: every output is 9c
    const float c = 0.37f;
    ConvGeometry g3{3, 3, 1, 1, 0, 0, 1, 1};
    auto yc = conv2d(leaf(Tensor<float>::full({1, 1, 6, 6}, c)),
                     leaf(Tensor<float>::full({1, 1, 3, 3}, 1.0f)),
                     leaf<float>(Tensor<float>({1})), g3);
    CHECK(yc->value.shape == Shape{1, 1, 4, 4});
    for (float v : yc->value.data) CHECK(v == Approx(9 * c).epsilon(1e-6));
}

TEST_CASE("conv2d matches the six-nested-loop oracle", "[ops][conv]") {
    Rng rng(5);
    auto x = oracle::random_tensor<float>({1, 1, 4, 4}, rng);
    auto k = oracle::random_tensor<float>({1, 1, 3, 3}, rng);
    auto b = Tensor<float>({1});
    ConvGeometry g{3, 3, 1, 1, 0, 0, 1, 1};
    auto y = conv2d(leaf(x), leaf(k), leaf(b), g);
    auto ref = oracle::conv2d_naive(x, k, b, g);
    CHECK(y->value.shape == Shape{1, 1, 2, 2});
    for (std::size_t i = 0; i < ref.size(); ++i)
        CHECK(y->value[i] == Approx(ref[i]).epsilon(1e-5));
}

TEST_CASE("conv2d over 200 random geometries matches the oracle", "[ops][conv][oracle]") {
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t h = 1 + rng.uniform_index(12), w = 1 + rng.uniform_index(12);
        const std::size_t k = 1 + rng.uniform_index(4);
        const std::size_t s = 1 + rng.uniform_index(3);
        const std::size_t p = rng.uniform_index(3);
        if (h + 2 * p < k || w + 2 * p < k) continue;
        const std::size_t ci = 1 + rng.uniform_index(3), co = 1 + rng.uniform_index(3);
        const std::size_t batch = 1 + rng.uniform_index(2);
        ConvGeometry g{k, k, s, s, p, p, ci, co};
        auto x = oracle::random_tensor<float>({batch, ci, h, w}, rng);
        auto kk = oracle::random_tensor<float>({co, ci, k, k}, rng);
        auto bb = oracle::random_tensor<float>({co}, rng);
        auto y = conv2d(leaf(x), leaf(kk), leaf(bb), g);
        auto ref = oracle::conv2d_naive(x, kk, bb, g);
        REQUIRE(y->value.shape == ref.shape);
        for (std::size_t i = 0; i < ref.size(); ++i)
            REQUIRE(y->value[i] == Approx(ref[i]).epsilon(1e-5).margin(1e-6));
    }
}

TEST_CASE("conv2d rejects geometry with non-positive output", "[ops][conv]") {
    ConvGeometry g{5, 5, 1, 1, 0, 0, 1, 1};
    auto x = leaf<float>(Tensor<float>({1, 1, 3, 3}));
    auto k = leaf<float>(Tensor<float>({1, 1, 5, 5}));
    auto b = leaf<float>(Tensor<float>({1}));
    CHECK_THROWS_AS(conv2d(x, k, b, g), GeometryError);
}

TEST_CASE("conv2d_transpose shape and scaling identities", "[ops][tconv]") {
    Rng rng(7);
    // 16 -> 32 under k4 s2 p1
    ConvGeometry g{4, 4, 2, 2, 1, 1, 1, 1};
    auto x = oracle::random_tensor<float>({1, 1, 16, 16}, rng);
    auto y = conv2d_transpose(leaf(x), leaf(oracle::random_tensor<float>({1, 1, 4, 4}, rng)),
                              leaf<float>(Tensor<float>({1})), g);
    CHECK(y->value.shape == Shape{1, 1, 32, 32});

    // 1x1 kernel of value alpha scales the input
    const float alpha = 2.5f;
    ConvGeometry id{1, 1, 1, 1, 0, 0, 1, 1};
    auto ys = conv2d_transpose(leaf(x), leaf<float>({{1, 1, 1, 1}, {alpha}}),
                               leaf<float>(Tensor<float>({1})), id);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(ys->value[i] == Approx(alpha * x[i]).epsilon(1e-6));
}

TEST_CASE("conv2d_transpose matches the naive scatter oracle", "[ops][tconv][oracle]") {
    Rng rng(19);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t h = 1 + rng.uniform_index(8), w = 1 + rng.uniform_index(8);
        const std::size_t k = 1 + rng.uniform_index(4);
        const std::size_t s = 1 + rng.uniform_index(3);
        const std::size_t p = rng.uniform_index(2);
        if (static_cast<long>((h - 1) * s + k) - 2 * static_cast<long>(p) < 1) continue;
        if (static_cast<long>((w - 1) * s + k) - 2 * static_cast<long>(p) < 1) continue;
        const std::size_t ci = 1 + rng.uniform_index(3), co = 1 + rng.uniform_index(3);
        ConvGeometry g{k, k, s, s, p, p, ci, co};
        auto x = oracle::random_tensor<float>({2, ci, h, w}, rng);
        auto kk = oracle::random_tensor<float>({ci, co, k, k}, rng);
        auto bb = oracle::random_tensor<float>({co}, rng);
        auto y = conv2d_transpose(leaf(x), leaf(kk), leaf(bb), g);
        auto ref = oracle::tconv2d_naive(x, kk, bb, g);
        REQUIRE(y->value.shape == ref.shape);
        for (std::size_t i = 0; i < ref.size(); ++i)
            REQUIRE(y->value[i] == Approx(ref[i]).epsilon(1e-4).margin(1e-5));
    }
}

TEST_CASE("transposed conv is the adjoint of conv", "[ops][tconv][adjoint]") {
    // <conv(x), y> == <x, convT(y)> on exact geometries, same kernel tensor.
    Rng rng(23);
    int tested = 0;
    while (tested < 40) {
        const std::size_t k = 1 + rng.uniform_index(4);
        const std::size_t s = 1 + rng.uniform_index(3);
        const std::size_t p = rng.uniform_index(2);
        const std::size_t oh = 1 + rng.uniform_index(6), ow = 1 + rng.uniform_index(6);
        // choose the input size so the stride divides exactly
        const long h = static_cast<long>((oh - 1) * s + k) - 2 * static_cast<long>(p);
        const long w = static_cast<long>((ow - 1) * s + k) - 2 * static_cast<long>(p);
        if (h < 1 || w < 1) continue;
        const std::size_t ci = 1 + rng.uniform_index(3), co = 1 + rng.uniform_index(3);
        ConvGeometry fwd{k, k, s, s, p, p, ci, co};
        ConvGeometry adj{k, k, s, s, p, p, co, ci};
        auto x = oracle::random_tensor<float>({2, ci, static_cast<std::size_t>(h), static_cast<std::size_t>(w)}, rng);
        auto kk = oracle::random_tensor<float>({co, ci, k, k}, rng);
        Tensor<float> b0c({co}), b0i({ci});
        auto cx = conv2d(leaf(x), leaf(kk), leaf(b0c), fwd);
        auto y = oracle::random_tensor<float>(cx->value.shape, rng);
        auto ty = conv2d_transpose(leaf(y), leaf(kk), leaf(b0i), adj);
        REQUIRE(ty->value.shape == x.shape);
        const double lhs = oracle::inner_product(cx->value, y);
        const double rhs = oracle::inner_product(x, ty->value);
        REQUIRE(lhs == Approx(rhs).epsilon(1e-4).margin(1e-4));
        ++tested;
    }
}

TEST_CASE("the adjoint identity tightens to 1e-8 in 64-bit mode", "[ops][tconv][adjoint]") {
    Rng rng(27);
    for (int trial = 0; trial < 10; ++trial) {
        ConvGeometry fwd{4, 4, 2, 2, 1, 1, 2, 3};
        ConvGeometry adj{4, 4, 2, 2, 1, 1, 3, 2};
        auto x = oracle::random_tensor<double>({2, 2, 8, 8}, rng);
        auto kk = oracle::random_tensor<double>({3, 2, 4, 4}, rng);
        Tensor<double> bc({3}), bi({2});
        auto cx = conv2d(constant(x), constant(kk), constant(bc), fwd);
        auto y = oracle::random_tensor<double>(cx->value.shape, rng);
        auto ty = conv2d_transpose(constant(y), constant(kk), constant(bi), adj);
        const double lhs = oracle::inner_product(cx->value, y);
        const double rhs = oracle::inner_product(x, ty->value);
        REQUIRE(std::abs(lhs - rhs) <= 1e-8 * std::max({std::abs(lhs), std::abs(rhs), 1.0}));
    }
}

TEST_CASE("leaky_relu follows its slope definition", "[ops][activations]") {
    auto y = leaky_relu(leaf<float>({{3}, {2.0f, -1.0f, 0.0f}}), 0.2);
    CHECK(y->value[0] == 2.0f);
    CHECK(y->value[1] == Approx(-0.2f));
    CHECK(y->value[2] == 0.0f);
    CHECK_THROWS_AS(leaky_relu(leaf<float>(Tensor<float>({1})), 1.5), Error);
}

TEST_CASE("leaky_relu is the identity on non-negative inputs", "[ops][activations]") {
    Rng rng(29);
    Tensor<float> x({64});
    for (auto& v : x.data) v = static_cast<float>(rng.uniform() * 10.0);
    auto y = leaky_relu(leaf(x), 0.2);
    CHECK(y->value.data == x.data);
}

TEST_CASE("sigmoid hits its analytic anchors", "[ops][activations]") {
    auto y = sigmoid(leaf<float>({{2}, {0.0f, std::log(3.0f)}}));
    CHECK(y->value[0] == Approx(0.5).margin(1e-7));
    CHECK(y->value[1] == Approx(0.75).margin(1e-6));
}

TEST_CASE("sigmoid symmetry and range over random and extreme inputs", "[ops][activations]") {
    Rng rng(31);
    Tensor<float> x({200});
    for (auto& v : x.data) v = static_cast<float>(rng.normal() * 5.0);
    x[0] = 500.0f;
    x[1] = -500.0f; // overflow-prone without the stable form
    auto s = sigmoid(leaf(x));
    Tensor<float> nx = x;
    for (auto& v : nx.data) v = -v;
    auto sn = sigmoid(leaf(nx));
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(s->value[i] > 0.0f);
        CHECK(s->value[i] < 1.0f);
        CHECK(std::abs((1.0f - s->value[i]) - sn->value[i]) < 1e-6f);
    }
}

TEST_CASE("batchnorm constant batch collapses to beta", "[ops][batchnorm]") {
    auto x = Tensor<float>::full({4, 2, 3, 3}, 0.7f);
    auto y = batchnorm<float>(leaf(x), leaf(Tensor<float>::full({2}, 1.0f)),
                              leaf<float>(Tensor<float>({2})), BnMode::train, nullptr, false);
    for (float v : y->value.data) CHECK(v == Approx(0.0f).margin(1e-6));
}

TEST_CASE("batchnorm leaves a zero-mean unit-variance pair nearly fixed", "[ops][batchnorm]") {
    Tensor<float> x({2, 1, 1, 1}, {-1.0f, 1.0f});
    auto y = batchnorm<float>(leaf(x), leaf(Tensor<float>::full({1}, 1.0f)),
                              leaf<float>(Tensor<float>({1})), BnMode::train, nullptr, false);
    CHECK(y->value[0] == Approx(-1.0f).margin(1e-4));
    CHECK(y->value[1] == Approx(1.0f).margin(1e-4));
}

TEST_CASE("batchnorm normalizes per-channel statistics", "[ops][batchnorm]") {
    Rng rng(37);
    auto x = oracle::random_tensor<float>({8, 3, 4, 4}, rng, 2.0);
    for (auto& v : x.data) v += 1.5f;
    auto y = batchnorm<float>(leaf(x), leaf(Tensor<float>::full({3}, 1.0f)),
                              leaf<float>(Tensor<float>({3})), BnMode::train, nullptr, false);
    const std::size_t n = 8 * 4 * 4;
    for (std::size_t c = 0; c < 3; ++c) {
        double sum = 0, sum2 = 0;
        for (std::size_t b = 0; b < 8; ++b)
            for (std::size_t i = 0; i < 16; ++i) {
                const double v = y->value.data[(b * 3 + c) * 16 + i];
                sum += v;
                sum2 += v * v;
            }
        const double mean = sum / n;
        const double var = sum2 / n - mean * mean;
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(var - 1.0) < 1e-3);
    }
}

TEST_CASE("batchnorm train mode rejects a batch of one", "[ops][batchnorm]") {
    auto x = leaf<float>(Tensor<float>({1, 2, 2, 2}));
    auto g = leaf(Tensor<float>::full({2}, 1.0f));
    auto b = leaf<float>(Tensor<float>({2}));
    CHECK_THROWS_AS(batchnorm<float>(x, g, b, BnMode::train, nullptr, false), ShapeError);
}

TEST_CASE("batchnorm running statistics feed inference", "[ops][batchnorm]") {
    Rng rng(41);
    RunningStats<float> stats(1);
    auto x = oracle::random_tensor<float>({4, 1, 2, 2}, rng, 3.0);
    // fold batch stats into running stats repeatedly
    for (int i = 0; i < 200; ++i)
        batchnorm<float>(leaf(x), leaf(Tensor<float>::full({1}, 1.0f)),
                         leaf<float>(Tensor<float>({1})), BnMode::train, &stats, true);
    auto y_train = batchnorm<float>(leaf(x), leaf(Tensor<float>::full({1}, 1.0f)),
                                    leaf<float>(Tensor<float>({1})), BnMode::train, nullptr, false);
    auto y_infer = batchnorm<float>(leaf(x), leaf(Tensor<float>::full({1}, 1.0f)),
                                    leaf<float>(Tensor<float>({1})), BnMode::infer, &stats, false);
    // after convergence of the running stats the two modes agree
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(y_infer->value[i] == Approx(y_train->value[i]).margin(1e-3));
}

TEST_CASE("upsample replicates pixels into blocks", "[ops][resample]") {
    auto y = upsample_nearest(leaf<float>({{1, 1, 1, 1}, {3.5f}}), 2);
    CHECK(y->value.shape == Shape{1, 1, 2, 2});
    for (float v : y->value.data) CHECK(v == 3.5f);

    auto y2 = upsample_nearest(leaf<float>({{1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f}}), 2);
    CHECK(y2->value.shape == Shape{1, 1, 4, 4});
    CHECK(y2->value.data == std::vector<float>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
}

TEST_CASE("downsample keeps the top-left sample of each block", "[ops][resample]") {
    Tensor<float> x({1, 1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<float>(i);
    auto y = downsample_nearest(leaf(x), 2);
    CHECK(y->value.data == std::vector<float>{0, 2, 8, 10});

    // alternating columns 1,0,1,0 sampled at factor 2 give an all-ones row
    Tensor<float> alt({1, 1, 2, 4}, {1, 0, 1, 0, 1, 0, 1, 0});
    auto y2 = downsample_nearest(leaf(alt), 2);
    CHECK(y2->value.data == std::vector<float>{1, 1});

    CHECK_THROWS_AS(downsample_nearest(leaf<float>(Tensor<float>({1, 1, 3, 3})), 2), ShapeError);
}

TEST_CASE("downsample of upsample is the identity for factors 1..8", "[ops][resample]") {
    Rng rng(43);
    for (std::size_t f = 1; f <= 8; ++f) {
        auto x = oracle::random_tensor<float>({2, 2, 3, 5}, rng);
        auto round = downsample_nearest(upsample_nearest(leaf(x), f), f);
        CHECK(round->value.data == x.data);
    }
}
