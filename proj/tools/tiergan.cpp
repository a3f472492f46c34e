// Command-line front end: dataset preparation, cascade training, generation,
// and the gradient-check verifier.
//
// Exit codes: 0 success, 1 verification failure, 2 usage/input error,
// 3 training divergence.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tiergan/tiergan.hpp"

namespace fs = std::filesystem;
using namespace tiergan;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_verification = 1;
constexpr int exit_usage = 2;
constexpr int exit_diverged = 3;

RunConfig load_config(const std::string& config_path, const std::vector<std::string>& overrides,
                      const std::string& workdir_flag) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::parse_file(config_path);
    for (const std::string& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!workdir_flag.empty()) cfg.workdir = workdir_flag;
    return cfg;
}

int run_prepare(const std::string& input, const std::string& output, std::size_t size,
                const std::string& factors_str) {
    std::vector<fs::path> files;
    if (!fs::is_directory(input)) {
        std::cerr << "prepare: input directory '" << input << "' does not exist\n";
        return exit_usage;
    }
    for (const auto& e : fs::directory_iterator(input)) {
        const auto ext = e.path().extension();
        if (ext == ".pgm" || ext == ".ppm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        std::cerr << "prepare: no images found in '" << input << "' (want binary .pgm/.ppm)\n";
        return exit_usage;
    }

    RunConfig cfg;
    cfg.size = size;
    cfg.factors = RunConfig::to_factors(factors_str);
    cfg.workdir = output;

    std::vector<Tensor<float>> images;
    std::vector<std::string> sources;
    for (const auto& f : files) {
        ImageU8 img = load_pgm_ppm(f.string());
        if (img.channels == 3) img = to_grayscale(img);
        img = resize_nearest(img, size, size);
        images.push_back(normalize(img));
        sources.push_back(f.filename().string());
    }

    TierDataset ds = build_tier_datasets(images, cfg.factors, sources);
    Workdir wd{fs::path(output)};
    fs::create_directories(wd.root);
    write_tier_workdir(ds, wd);
    {
        std::ofstream out(wd.root / "prepare.cfg", std::ios::trunc);
        out << cfg.canonical();
    }

    // Tier counts, full-detail tier first.
    std::string counts = "MF:" + std::to_string(ds.levels.back().images.size());
    for (std::size_t i = ds.levels.size() - 1; i-- > 0;)
        counts += " " + ds.levels[i].name + ":" + std::to_string(ds.levels[i].images.size());
    std::cout << counts << "\n";
    return exit_ok;
}

int run_train(const RunConfig& cfg, std::optional<std::size_t> stage) {
    std::cout << cfg.canonical();
    Workdir wd{fs::path(cfg.workdir)};
    TierDataset ds = load_tier_workdir(wd, cfg.factors);
    const Shape& s = ds.levels[0].images[0].shape;
    if (s[1] != cfg.size || s[2] != cfg.size)
        throw ConfigError("tier images are " + std::to_string(s[1]) + "x" + std::to_string(s[2]) +
                          " but config size=" + std::to_string(cfg.size));
    CascadeState state = train_tier_cascade(ds, cfg.to_train_config(), wd, stage, &std::cout);
    for (std::size_t k = 0; k < state.stages.size(); ++k) {
        if (state.stages[k].status == StageStatus::diverged) {
            std::cerr << "training diverged at stage " << (k + 1) << "\n";
            return exit_diverged;
        }
    }
    std::cout << "training complete\n";
    return exit_ok;
}

int run_generate(const RunConfig& cfg, std::size_t n, std::uint64_t seed, bool intermediates) {
    Workdir wd{fs::path(cfg.workdir)};
    const std::size_t n_stages = cfg.factors.size() + 1;
    auto samples = generate_cascade(wd, cfg.to_train_config(), n_stages, cfg.size, cfg.size, n, seed);
    const fs::path out_dir = wd.root / "out";
    fs::create_directories(out_dir);
    const auto names = tier_names(cfg.factors.size());
    std::size_t written = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        char prefix[16];
        std::snprintf(prefix, sizeof prefix, "%04zu", i);
        for (std::size_t k = 0; k < samples[i].size(); ++k) {
            const bool final_stage = k + 1 == samples[i].size();
            if (!final_stage && !intermediates) continue;
            std::string label = final_stage ? "final" : names[k];
            for (char& c : label) c = static_cast<char>(std::tolower(c));
            const fs::path p = out_dir / (std::string(prefix) + "_" + label + ".pgm");
            save_pgm(denormalize(samples[i][k]), p.string());
            ++written;
        }
    }
    std::cout << "wrote " << written << " images to " << out_dir.string() << "\n";
    return exit_ok;
}

int run_gradcheck(std::uint64_t seed, const std::string& inject_fault) {
    debug::corrupt_backward_op = inject_fault;
    const double threshold = 1e-4;
    std::printf("gradcheck seed=%llu step=1e-05 threshold=%.0e\n",
                static_cast<unsigned long long>(seed), threshold);
    auto results = run_gradcheck_suite(seed);
    double worst = 0.0;
    std::string worst_kind;
    bool ok = true;
    for (const auto& r : results) {
        const bool pass = r.max_rel_err < threshold;
        ok = ok && pass;
        if (r.max_rel_err >= worst) {
            worst = r.max_rel_err;
            worst_kind = r.kind;
        }
        std::printf("%-18s max_rel_err=%.3e  %s\n", r.kind.c_str(), r.max_rel_err,
                    pass ? "PASS" : "FAIL");
    }
    std::printf("worst: %.3e (%s)\n", worst, worst_kind.c_str());
    debug::corrupt_backward_op.clear();
    return ok ? exit_ok : exit_verification;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"tiergan: tiered GAN training engine for grayscale image generation"};
    app.require_subcommand(1);

    // prepare
    auto* prep = app.add_subcommand("prepare", "Convert a directory of PGM/PPM images into tier datasets");
    std::string prep_input, prep_output;
    std::size_t prep_size = 128;
    std::string prep_factors = "8,4,2";
    prep->add_option("--input", prep_input, "Directory of binary P5/P6 images")->required();
    prep->add_option("--output", prep_output, "Workdir to create")->required();
    prep->add_option("--size", prep_size, "Square output size (default 128)")
        ->capture_default_str();
    prep->add_option("--factors", prep_factors, "Tier degradation factors, decreasing (default 8,4,2)")
        ->capture_default_str();

    // train
    auto* train = app.add_subcommand("train", "Train the tier cascade (resumes from checkpoints)");
    std::string train_config, train_workdir;
    int train_stage = 0;
    std::vector<std::string> train_sets;
    train->add_option("--config", train_config, "key=value config file (defaults apply when omitted)");
    train->add_option("--workdir", train_workdir, "Prepared workdir (overrides config)");
    train->add_option("--stage", train_stage, "Train a single stage K (1-based; default: all)")
        ->check(CLI::PositiveNumber);
    train->add_option("--set", train_sets, "Override a config key, KEY=VALUE (repeatable)");

    // generate
    auto* gen = app.add_subcommand("generate", "Run the trained cascade from noise to final images");
    std::string gen_config, gen_workdir;
    std::size_t gen_n = 1;
    std::uint64_t gen_seed = 1;
    bool gen_intermediates = false;
    std::vector<std::string> gen_sets;
    gen->add_option("--config", gen_config, "key=value config file (defaults apply when omitted)");
    gen->add_option("--workdir", gen_workdir, "Trained workdir (overrides config)");
    gen->add_option("--n", gen_n, "Number of samples (default 1)")->capture_default_str();
    gen->add_option("--seed", gen_seed, "Noise seed (default 1)")->capture_default_str();
    gen->add_flag("--emit-intermediates", gen_intermediates, "Also write every stage's output");
    gen->add_option("--set", gen_sets, "Override a config key, KEY=VALUE (repeatable)");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference verification of every primitive and both reference models");
    std::uint64_t gc_seed = 7;
    std::string gc_fault;
    gc->add_option("--seed", gc_seed, "Seed for the check fixtures (default 7)")
        ->capture_default_str();
    gc->add_option("--inject-fault", gc_fault, "Test fixture: corrupt the named primitive's backward pass")
        ->group(""); // hidden

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_usage;
    }

    try {
        if (prep->parsed()) return run_prepare(prep_input, prep_output, prep_size, prep_factors);
        if (train->parsed()) {
            RunConfig cfg = load_config(train_config, train_sets, train_workdir);
            std::optional<std::size_t> stage;
            if (train_stage > 0) stage = static_cast<std::size_t>(train_stage);
            return run_train(cfg, stage);
        }
        if (gen->parsed()) {
            RunConfig cfg = load_config(gen_config, gen_sets, gen_workdir);
            return run_generate(cfg, gen_n, gen_seed, gen_intermediates);
        }
        if (gc->parsed()) return run_gradcheck(gc_seed, gc_fault);
    } catch (const DivergedError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_diverged;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_usage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_usage;
    }
    return exit_usage;
}
