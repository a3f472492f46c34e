#include <catch2/catch.hpp>

#include "oracles.hpp"
#include "tiergan/gan.hpp"
#include "tiergan/model.hpp"

using namespace tiergan;

TEST_CASE("latent generator chains shapes to a full image", "[model][builders]") {
    ModelSpec g = build_generator(GenStage::first, GenVariant::latent_upsample, 128, 128);
    CHECK(g.input_shape == Shape{128});
    CHECK(g.output_shape == Shape{1, 128, 128});

    ModelSpec g32 = build_generator(GenStage::first, GenVariant::latent_upsample, 32, 32);
    CHECK(g32.output_shape == Shape{1, 32, 32});
}

TEST_CASE("refine generator keeps the image size", "[model][builders]") {
    ModelSpec g = build_generator(GenStage::refine, GenVariant::latent_upsample, 128, 128);
    CHECK(g.input_shape == Shape{1, 128, 128});
    CHECK(g.output_shape == Shape{1, 128, 128});
}

TEST_CASE("dense_noise generator consumes a full-size noise field", "[model][builders]") {
    ModelSpec g = build_generator(GenStage::first, GenVariant::dense_noise, 64, 64);
    CHECK(g.input_shape == Shape{1, 64, 64});
    CHECK(g.output_shape == Shape{1, 64, 64});
}

TEST_CASE("discriminator flattens to 128 * (h/16) * (w/16) before its head", "[model][builders]") {
    ModelSpec d = build_discriminator(128, 128);
    // after four stride-2 convs a 128x128 input is 8x8 with 128 channels
    bool found_dense = false;
    for (const auto& l : d.layers)
        if (l.kind == LayerKind::dense) {
            found_dense = true;
            CHECK(l.in == 128 * 8 * 8);
            CHECK(l.out == 1);
        }
    CHECK(found_dense);
    CHECK(d.output_shape == Shape{1});
}

TEST_CASE("builders reject unsupported sizes", "[model][builders]") {
    CHECK_THROWS_AS(build_generator(GenStage::first, GenVariant::latent_upsample, 100, 100), Error);
    CHECK_THROWS_AS(build_generator(GenStage::first, GenVariant::latent_upsample, 8, 8), Error);
    CHECK_THROWS_AS(build_discriminator(24, 24), Error);
}

TEST_CASE("spec validation catches broken chains", "[model][spec]") {
    ModelSpec bad;
    bad.input_shape = {16};
    bad.layers = {LayerDesc::make_dense(8, 4)}; // expects 8, gets 16
    CHECK_THROWS_AS(bad.validate(), ShapeError);
}

TEST_CASE("spec digests identify the architecture", "[model][spec]") {
    ModelSpec a = build_discriminator(32, 32);
    ModelSpec b = build_discriminator(32, 32);
    ModelSpec c = build_discriminator(64, 64);
    CHECK(a.digest() == b.digest());
    CHECK(a.digest() != c.digest());
}

TEST_CASE("a fresh latent generator maps zero noise to finite sigmoid output", "[model][forward]") {
    Rng rng(9);
    Model<float> g(build_generator(GenStage::first, GenVariant::latent_upsample, 32, 32));
    g.init(rng, 0.02);
    Tensor<float> z({2, 128});
    Tensor<float> out = g.infer(z, BnMode::train);
    CHECK(out.shape == Shape{2, 1, 32, 32});
    REQUIRE(out.all_finite());
    for (float v : out.data) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
}

TEST_CASE("a fresh discriminator scores random batches near one half", "[model][forward]") {
    Rng rng(13);
    Model<float> d(build_discriminator(32, 32));
    d.init(rng, 0.02);
    Tensor<float> x({4, 1, 32, 32});
    for (auto& v : x.data) v = static_cast<float>(rng.uniform());
    Tensor<float> p = d.infer(x, BnMode::train);
    CHECK(p.shape == Shape{4, 1});
    REQUIRE(p.all_finite());
    for (float v : p.data) {
        CHECK(v > 0.1f);
        CHECK(v < 0.9f);
    }
}

TEST_CASE("model forward rejects a batch of the wrong shape", "[model][forward]") {
    Rng rng(1);
    Model<float> d(build_discriminator(32, 32));
    d.init(rng);
    Tensor<float> wrong({2, 1, 16, 16});
    CHECK_THROWS_AS(d.infer(wrong, BnMode::train), ShapeError);
}

TEST_CASE("init is a pure function of the seed", "[model][init]") {
    Model<float> a(build_discriminator(16, 16)), b(build_discriminator(16, 16));
    Rng r1(77), r2(77);
    a.init(r1);
    b.init(r2);
    for (const auto& [name, t] : a.params) CHECK(t.data == b.params.at(name).data);
}

TEST_CASE("noise sampling honors the spec shapes and seed", "[model][noise]") {
    Rng r1(5), r2(5);
    NoiseSpec latent;
    Tensor<float> z1 = sample_noise<float>(latent, 8, r1);
    Tensor<float> z2 = sample_noise<float>(latent, 8, r2);
    CHECK(z1.shape == Shape{8, 128});
    CHECK(z1.data == z2.data);

    NoiseSpec field;
    field.kind = NoiseKind::image_field;
    field.dist = NoiseDist::uniform;
    field.image_dims = {1, 16, 16};
    Tensor<float> f = sample_noise<float>(field, 3, r1);
    CHECK(f.shape == Shape{3, 1, 16, 16});
    for (float v : f.data) {
        CHECK(v >= 0.0f);
        CHECK(v < 1.0f);
    }
}
