#include <catch2/catch.hpp>

#include <cstdlib>
#include <fstream>

#include "oracles.hpp"
#include "tiergan/config.hpp"
#include "tiergan/image.hpp"

using namespace tiergan;
namespace fs = std::filesystem;

TEST_CASE("run config round trips through its canonical form", "[config]") {
    RunConfig defaults;
    const std::string canon = defaults.canonical();
    RunConfig reparsed = RunConfig::parse(canon);
    CHECK(reparsed.canonical() == canon);

    RunConfig tweaked = RunConfig::parse("epochs=20\nlr_d=0.00001\nfactors=4,2\nseed=7\n");
    CHECK(tweaked.epochs == 20);
    CHECK(tweaked.lr_d == Approx(1e-5));
    CHECK(tweaked.factors == std::vector<std::size_t>{4, 2});
    CHECK(tweaked.seed == 7);
    // canonical output is byte-stable under re-parse
    CHECK(RunConfig::parse(tweaked.canonical()).canonical() == tweaked.canonical());
}

TEST_CASE("run config rejects unknown keys and bad values", "[config]") {
    CHECK_THROWS_WITH(RunConfig::parse("no_such_key=1\n"), Catch::Contains("no_such_key"));
    CHECK_THROWS_AS(RunConfig::parse("epochs=abc\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("g_loss_variant=softmax\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("just a line\n"), ConfigError);
    // comments and blanks are fine
    CHECK_NOTHROW(RunConfig::parse("# comment\n\nepochs=3\n"));
}

TEST_CASE("run config defaults mirror the training defaults", "[config]") {
    RunConfig cfg;
    CHECK(cfg.epochs == 2000);
    CHECK(cfg.batch_size == 8);
    CHECK(cfg.lr_g == Approx(0.0001));
    CHECK(cfg.lr_d == Approx(0.00001));
    CHECK(cfg.lr_d == Approx(cfg.lr_g / 10.0));
    TrainConfig tc = cfg.to_train_config();
    CHECK(tc.epochs == 2000);
    CHECK(tc.batch_size == 8);
    CHECK(tc.g_loss_variant == GLossVariant::non_saturating);
    CHECK(tc.noise.kind == NoiseKind::latent_vector);
}

// ---- end-to-end CLI runs (driven through the installed binary) ----

namespace {

struct CliResult {
    int exit_code = -1;
    std::string output;
};

std::string cli_binary() {
    const char* bin = std::getenv("TIERGAN_BIN");
    REQUIRE(bin != nullptr);
    return bin;
}

CliResult run_cli(const std::string& args, const fs::path& scratch) {
    const fs::path out = scratch / "cli_out.txt";
    const std::string cmd = cli_binary() + " " + args + " > " + out.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WEXITSTATUS(status);
    r.output = oracle::read_file(out);
    return r;
}

void make_input_images(const fs::path& dir, int n, std::uint64_t seed) {
    fs::create_directories(dir);
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        ImageU8 img(32, 32, 3);
        for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_index(256));
        char name[16];
        std::snprintf(name, sizeof name, "in%02d.ppm", i);
        save_ppm(img, (dir / name).string());
    }
}

std::string tiny_train_args(const fs::path& wd, std::size_t epochs) {
    return "train --workdir " + wd.string() +
           " --set size=16 --set factors=2 --set batch_size=2 --set epochs=" +
           std::to_string(epochs) + " --set log_every=0";
}

} // namespace

TEST_CASE("prepare builds tiers and reports per-tier counts", "[cli]") {
    oracle::TempDir tmp("cli_prep");
    make_input_images(tmp.path / "in", 6, 11);
    auto r = run_cli("prepare --input " + (tmp.path / "in").string() + " --output " +
                         (tmp.path / "wd").string() + " --size 16 --factors 2",
                     tmp.path);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("MF:6 M1:6") != std::string::npos);
    CHECK(fs::exists(tmp.path / "wd" / "tiers" / "MF" / "0005.pgm"));
    CHECK(fs::exists(tmp.path / "wd" / "manifest.tsv"));

    // idempotent re-run: manifest checksums unchanged
    const std::string manifest_before = oracle::read_file(tmp.path / "wd" / "manifest.tsv");
    auto r2 = run_cli("prepare --input " + (tmp.path / "in").string() + " --output " +
                          (tmp.path / "wd").string() + " --size 16 --factors 2",
                      tmp.path);
    CHECK(r2.exit_code == 0);
    CHECK(oracle::read_file(tmp.path / "wd" / "manifest.tsv") == manifest_before);
}

TEST_CASE("prepare fails cleanly on an empty input directory", "[cli]") {
    oracle::TempDir tmp("cli_empty");
    fs::create_directories(tmp.path / "in");
    auto r = run_cli("prepare --input " + (tmp.path / "in").string() + " --output " +
                         (tmp.path / "wd").string(),
                     tmp.path);
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("no images found") != std::string::npos);
}

TEST_CASE("train echoes its configuration and writes stage artifacts", "[cli]") {
    oracle::TempDir tmp("cli_train");
    make_input_images(tmp.path / "in", 4, 13);
    run_cli("prepare --input " + (tmp.path / "in").string() + " --output " +
                (tmp.path / "wd").string() + " --size 16 --factors 2",
            tmp.path);
    auto r = run_cli(tiny_train_args(tmp.path / "wd", 2), tmp.path);
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("lr_g=0.0001") != std::string::npos);
    CHECK(r.output.find("lr_d=1e-05") != std::string::npos);
    CHECK(r.output.find("training complete") != std::string::npos);
    CHECK(fs::exists(tmp.path / "wd" / "stages" / "stage1" / "checkpoint.bin"));
    CHECK(fs::exists(tmp.path / "wd" / "stages" / "stage2" / "losses.csv"));
}

TEST_CASE("train refuses a later stage before its predecessor", "[cli]") {
    oracle::TempDir tmp("cli_order");
    make_input_images(tmp.path / "in", 4, 17);
    run_cli("prepare --input " + (tmp.path / "in").string() + " --output " +
                (tmp.path / "wd").string() + " --size 16 --factors 2",
            tmp.path);
    auto r = run_cli(tiny_train_args(tmp.path / "wd", 1) + " --stage 2", tmp.path);
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("stage 1") != std::string::npos);
}

TEST_CASE("interrupted training resumes to the uninterrupted row count", "[cli]") {
    oracle::TempDir tmp("cli_resume");
    make_input_images(tmp.path / "in", 4, 19);
    for (const char* wd : {"wd_a", "wd_b"}) {
        run_cli("prepare --input " + (tmp.path / "in").string() + " --output " +
                    (tmp.path / wd).string() + " --size 16 --factors 2",
                tmp.path);
    }
    // uninterrupted 6-epoch run
    REQUIRE(run_cli(tiny_train_args(tmp.path / "wd_a", 6), tmp.path).exit_code == 0);
    // interrupted: 3 epochs, then resume to 6
    REQUIRE(run_cli(tiny_train_args(tmp.path / "wd_b", 3), tmp.path).exit_code == 0);
    REQUIRE(run_cli(tiny_train_args(tmp.path / "wd_b", 6), tmp.path).exit_code == 0);
    for (int stage : {1, 2}) {
        const auto a = tmp.path / "wd_a" / "stages" / ("stage" + std::to_string(stage)) / "losses.csv";
        const auto b = tmp.path / "wd_b" / "stages" / ("stage" + std::to_string(stage)) / "losses.csv";
        CHECK(oracle::count_lines(oracle::read_file(a)) ==
              oracle::count_lines(oracle::read_file(b)));
    }
}

TEST_CASE("generate writes deterministic images with optional intermediates", "[cli]") {
    oracle::TempDir tmp("cli_gen");
    make_input_images(tmp.path / "in", 4, 23);
    run_cli("prepare --input " + (tmp.path / "in").string() + " --output " +
                (tmp.path / "wd").string() + " --size 16 --factors 2",
            tmp.path);
    REQUIRE(run_cli(tiny_train_args(tmp.path / "wd", 2), tmp.path).exit_code == 0);

    const std::string gen_args = "generate --workdir " + (tmp.path / "wd").string() +
                                 " --set size=16 --set factors=2 --n 2 --seed 5";
    auto r = run_cli(gen_args + " --emit-intermediates", tmp.path);
    REQUIRE(r.exit_code == 0);
    const fs::path out = tmp.path / "wd" / "out";
    CHECK(fs::exists(out / "0000_final.pgm"));
    CHECK(fs::exists(out / "0000_m1.pgm"));
    CHECK(fs::exists(out / "0001_final.pgm"));
    CHECK(fs::exists(out / "0001_m1.pgm"));
    std::size_t count = 0;
    for (const auto& e : fs::directory_iterator(out)) (void)e, ++count;
    CHECK(count == 4);

    // emitted files are valid full-range P5 images
    ImageU8 img = load_pgm_ppm((out / "0000_final.pgm").string());
    CHECK(img.width == 16);
    CHECK(img.height == 16);

    // same seed, byte-identical output
    const std::string bytes = oracle::read_file(out / "0000_final.pgm");
    REQUIRE(run_cli(gen_args, tmp.path).exit_code == 0);
    CHECK(oracle::read_file(out / "0000_final.pgm") == bytes);
}

TEST_CASE("generate refuses an untrained workdir", "[cli]") {
    oracle::TempDir tmp("cli_gen_untrained");
    fs::create_directories(tmp.path / "wd");
    auto r = run_cli("generate --workdir " + (tmp.path / "wd").string() +
                         " --set size=16 --set factors=2 --n 1 --seed 1",
                     tmp.path);
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("stage 1") != std::string::npos);
}

TEST_CASE("gradcheck passes, reports all kinds, and is deterministic", "[cli]") {
    oracle::TempDir tmp("cli_gc");
    auto r = run_cli("gradcheck --seed 7", tmp.path);
    REQUIRE(r.exit_code == 0);
    for (const char* kind : {"dense", "conv2d", "conv2d_transpose", "batchnorm", "leaky_relu",
                             "sigmoid", "bce_loss", "upsample_nearest", "generator",
                             "discriminator"})
        CHECK(r.output.find(kind) != std::string::npos);
    auto r2 = run_cli("gradcheck --seed 7", tmp.path);
    CHECK(r2.output == r.output);
}

TEST_CASE("gradcheck with an injected sigmoid fault exits 1 naming sigmoid", "[cli]") {
    oracle::TempDir tmp("cli_fault");
    auto r = run_cli("gradcheck --seed 7 --inject-fault sigmoid", tmp.path);
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("sigmoid") != std::string::npos);
    CHECK(r.output.find("FAIL") != std::string::npos);
}

TEST_CASE("a diverging run exits with code 3 and names the stage", "[cli]") {
    oracle::TempDir tmp("cli_diverge");
    make_input_images(tmp.path / "in", 4, 29);
    run_cli("prepare --input " + (tmp.path / "in").string() + " --output " +
                (tmp.path / "wd").string() + " --size 16 --factors 2",
            tmp.path);
    auto r = run_cli(tiny_train_args(tmp.path / "wd", 4) + " --set lr_g=1e25 --set lr_d=1e25",
                     tmp.path);
    CHECK(r.exit_code == 3);
    CHECK(r.output.find("stage 1") != std::string::npos);
}

TEST_CASE("results do not depend on the worker thread count", "[cli]") {
    oracle::TempDir tmp("cli_threads");
    const fs::path out1 = tmp.path / "t1.txt", out4 = tmp.path / "t4.txt";
    REQUIRE(WEXITSTATUS(std::system(("TIERGAN_THREADS=1 " + cli_binary() +
                                     " gradcheck --seed 3 > " + out1.string() + " 2>&1")
                                        .c_str())) == 0);
    REQUIRE(WEXITSTATUS(std::system(("TIERGAN_THREADS=4 " + cli_binary() +
                                     " gradcheck --seed 3 > " + out4.string() + " 2>&1")
                                        .c_str())) == 0);
    CHECK(oracle::read_file(out1) == oracle::read_file(out4));
}

TEST_CASE("usage errors exit with code 2", "[cli]") {
    oracle::TempDir tmp("cli_usage");
    CHECK(run_cli("prepare --no-such-flag x", tmp.path).exit_code == 2);
    CHECK(run_cli("train --workdir " + (tmp.path / "none").string() + " --set bogus_key=1",
                  tmp.path)
              .exit_code == 2);
}
