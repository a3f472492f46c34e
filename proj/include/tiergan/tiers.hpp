#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "tiergan/checkpoint.hpp"
#include "tiergan/csv.hpp"
#include "tiergan/gan.hpp"
#include "tiergan/hash.hpp"
#include "tiergan/image.hpp"
#include "tiergan/ops.hpp"

namespace tiergan {

// One quality tier: MF holds the originals (factor 1); coarser tiers hold
// block-degraded versions at unchanged dimensions.
struct TierLevel {
    std::string name;   // "M3", "M2", "M1", "MF"
    std::size_t factor; // block size of the degradation, 1 for MF
    std::vector<Tensor<float>> images;
};

struct TierDataset {
    std::vector<TierLevel> levels; // coarsest first, MF last
    std::vector<std::string> sources;

    std::size_t count() const { return levels.empty() ? 0 : levels[0].images.size(); }
    std::size_t stage_count() const { return levels.size(); }
};

inline std::vector<std::string> tier_names(std::size_t n_factors) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n_factors; ++i)
        names.push_back("M" + std::to_string(n_factors - i));
    names.push_back("MF");
    return names;
}

// Down-then-up nearest-neighbor resampling: detail of an f x f block collapses
// to its top-left sample while dimensions stay unchanged.
inline Tensor<float> tier_degrade(const Tensor<float>& img, std::size_t factor) {
    if (factor == 1) return img;
    Shape batched = img.shape;
    batched.insert(batched.begin(), 1);
    NodePtr<float> x = constant(Tensor<float>(batched, img.data));
    Tensor<float> out = upsample_nearest(downsample_nearest(x, factor), factor)->value;
    return Tensor<float>(img.shape, std::move(out.data));
}

// Detail proxy for tier ordering: the mean absolute residual between a tier
// and the full-detail reference, i.e. the energy of the Laplacian-pyramid
// bands the degradation removed. Strictly zero for the reference itself and
// non-increasing from coarse to fine tiers.
inline double missing_detail(const Tensor<float>& tier, const Tensor<float>& reference) {
    require_same_shape(tier.shape, reference.shape, "missing_detail");
    double acc = 0.0;
    for (std::size_t i = 0; i < tier.size(); ++i)
        acc += std::abs(static_cast<double>(tier[i]) - reference[i]);
    return acc / static_cast<double>(tier.size());
}

// Builds the full tier cascade from originals. Factors must be strictly
// decreasing and divide both image dimensions.
inline TierDataset build_tier_datasets(const std::vector<Tensor<float>>& images,
                                       std::vector<std::size_t> factors = {8, 4, 2},
                                       std::vector<std::string> sources = {}) {
    if (images.empty()) throw Error("build_tier_datasets: no images");
    if (factors.empty()) throw Error("build_tier_datasets: no factors");
    for (std::size_t i = 0; i + 1 < factors.size(); ++i)
        if (factors[i] <= factors[i + 1])
            throw Error("build_tier_datasets: factors must be strictly decreasing");
    const Shape& s = images[0].shape;
    if (s.size() != 3 || s[0] != 1)
        throw ShapeError("build_tier_datasets: images must be (1, h, w), got " + shape_str(s));
    for (std::size_t f : factors)
        if (s[1] % f || s[2] % f)
            throw ShapeError("build_tier_datasets: factor " + std::to_string(f) +
                             " does not divide " + std::to_string(s[1]) + "x" + std::to_string(s[2]));
    if (sources.empty())
        for (std::size_t i = 0; i < images.size(); ++i)
            sources.push_back("image" + std::to_string(i));

    TierDataset ds;
    ds.sources = std::move(sources);
    const auto names = tier_names(factors.size());
    for (std::size_t li = 0; li < factors.size(); ++li) {
        TierLevel level{names[li], factors[li], {}};
        level.images.reserve(images.size());
        for (const auto& img : images) level.images.push_back(tier_degrade(img, factors[li]));
        ds.levels.push_back(std::move(level));
    }
    TierLevel mf{"MF", 1, images};
    ds.levels.push_back(std::move(mf));
    return ds;
}

// ---- workdir layout ----

struct Workdir {
    std::filesystem::path root;

    explicit Workdir(std::filesystem::path r) : root(std::move(r)) {}

    std::filesystem::path tiers_dir(const std::string& name) const { return root / "tiers" / name; }
    std::filesystem::path manifest_path() const { return root / "manifest.tsv"; }
    std::filesystem::path stage_dir(std::size_t k) const { // 1-based
        return root / "stages" / ("stage" + std::to_string(k));
    }
    std::filesystem::path checkpoint_path(std::size_t k) const {
        return stage_dir(k) / "checkpoint.bin";
    }
    std::filesystem::path losses_path(std::size_t k) const { return stage_dir(k) / "losses.csv"; }
};

inline std::string image_file_name(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04zu.pgm", index);
    return buf;
}

inline std::uint64_t file_checksum(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError(p.string() + ": cannot open for checksum");
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[4096];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    return h;
}

// Writes tiers/<name>/NNNN.pgm for every level plus manifest.tsv
// (index <TAB> source <TAB> checksum).
inline void write_tier_workdir(const TierDataset& ds, const Workdir& wd) {
    namespace fs = std::filesystem;
    std::ostringstream manifest;
    for (const TierLevel& level : ds.levels) {
        fs::create_directories(wd.tiers_dir(level.name));
        for (std::size_t i = 0; i < level.images.size(); ++i) {
            const fs::path p = wd.tiers_dir(level.name) / image_file_name(i);
            save_pgm(denormalize(level.images[i]), p.string());
            manifest << level.name << "/" << image_file_name(i) << "\t"
                     << (i < ds.sources.size() ? ds.sources[i] : "") << "\t"
                     << hex64(file_checksum(p)) << "\n";
        }
    }
    std::ofstream out(wd.manifest_path(), std::ios::trunc);
    if (!out) throw IoError(wd.manifest_path().string() + ": cannot open for writing");
    out << manifest.str();
}

// Reads a prepared workdir back; level names derive from `factors`.
inline TierDataset load_tier_workdir(const Workdir& wd, const std::vector<std::size_t>& factors) {
    namespace fs = std::filesystem;
    TierDataset ds;
    const auto names = tier_names(factors.size());
    for (std::size_t li = 0; li < names.size(); ++li) {
        const fs::path dir = wd.tiers_dir(names[li]);
        if (!fs::is_directory(dir))
            throw IoError("missing tier directory " + dir.string() +
                          " (run prepare first, or check factors)");
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.path().extension() == ".pgm") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw IoError("no images in tier directory " + dir.string());
        TierLevel level{names[li], li < factors.size() ? factors[li] : 1, {}};
        for (const auto& f : files) level.images.push_back(normalize(load_pgm_ppm(f.string())));
        ds.levels.push_back(std::move(level));
    }
    for (std::size_t i = 0; i < ds.levels[0].images.size(); ++i)
        ds.sources.push_back(image_file_name(i));
    return ds;
}

// ---- cascade training and generation ----

enum class StageStatus { untrained, trained, diverged };

struct StageInfo {
    StageStatus status = StageStatus::untrained;
    std::size_t epochs_done = 0;
};

struct CascadeState {
    std::vector<StageInfo> stages; // index 0 = stage 1

    bool all_trained() const {
        for (const auto& s : stages)
            if (s.status != StageStatus::trained) return false;
        return !stages.empty();
    }
};

inline std::uint64_t stage_seed(std::uint64_t base, std::size_t stage_idx) {
    std::uint64_t bytes[2] = {base, static_cast<std::uint64_t>(stage_idx)};
    return fnv1a64(bytes, sizeof bytes);
}

namespace detail {

inline ModelSpec stage_g_spec(std::size_t stage_idx, std::size_t h, std::size_t w,
                              const TrainConfig& cfg) {
    if (stage_idx == 0) {
        const GenVariant variant = cfg.noise.kind == NoiseKind::latent_vector
                                       ? GenVariant::latent_upsample
                                       : GenVariant::dense_noise;
        return build_generator(GenStage::first, variant, h, w, cfg.leaky_alpha);
    }
    return build_generator(GenStage::refine, GenVariant::latent_upsample, h, w, cfg.leaky_alpha);
}

} // namespace detail

inline CascadeState cascade_state(const Workdir& wd, std::size_t n_stages) {
    CascadeState state;
    state.stages.resize(n_stages);
    for (std::size_t k = 0; k < n_stages; ++k) {
        const auto path = wd.checkpoint_path(k + 1);
        if (!std::filesystem::exists(path)) continue;
        Checkpoint ckpt = load_checkpoint(path.string());
        state.stages[k].epochs_done = ckpt.epoch;
        state.stages[k].status = ckpt.diverged() ? StageStatus::diverged : StageStatus::trained;
    }
    return state;
}

// Trains the cascade bottom-up: stage 1 maps noise to the coarsest tier, each
// later stage refines tier k-1 images toward tier k. Per-stage checkpoints and
// loss CSVs land in stages/stageK/. A stage that diverges is checkpointed with
// the diverged tag and halts the cascade; earlier checkpoints are preserved.
inline CascadeState train_tier_cascade(const TierDataset& ds, const TrainConfig& cfg,
                                       const Workdir& wd,
                                       std::optional<std::size_t> only_stage = std::nullopt,
                                       std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    cfg.validate();
    if (ds.levels.empty()) throw Error("train_tier_cascade: empty dataset");
    const std::size_t n_stages = ds.stage_count();
    const Shape& img_shape = ds.levels[0].images[0].shape;
    const std::size_t h = img_shape[1], w = img_shape[2];
    if (only_stage && (*only_stage < 1 || *only_stage > n_stages))
        throw StateError("stage " + std::to_string(*only_stage) + " out of range 1.." +
                         std::to_string(n_stages));

    TrainConfig stage_cfg = cfg;
    stage_cfg.noise.image_dims = {1, h, w};

    CascadeState state = cascade_state(wd, n_stages);
    const std::size_t first = only_stage ? *only_stage - 1 : 0;
    const std::size_t last = only_stage ? *only_stage : n_stages;
    for (std::size_t k = first; k < last; ++k) {
        if (k > 0 && !fs::exists(wd.checkpoint_path(k)))
            throw StateError("stage " + std::to_string(k + 1) + " requires stage " +
                             std::to_string(k) + " to be trained first");
        if (state.stages[k].status == StageStatus::diverged)
            throw DivergedError("stage " + std::to_string(k + 1) +
                                " previously diverged; remove its checkpoint to retrain");
        if (state.stages[k].status == StageStatus::trained &&
            state.stages[k].epochs_done >= cfg.epochs)
            continue; // already complete, idempotent re-run

        GanDataset<float> data;
        data.targets = ds.levels[k].images;
        if (k > 0) data.inputs = ds.levels[k - 1].images;

        Rng rng(stage_seed(cfg.seed, k));
        GanPair<float> gan(detail::stage_g_spec(k, h, w, stage_cfg), build_discriminator(h, w, cfg.leaky_alpha),
                           stage_cfg, rng);
        std::size_t start_epoch = 0;
        fs::create_directories(wd.stage_dir(k + 1));
        if (fs::exists(wd.checkpoint_path(k + 1))) {
            Checkpoint ckpt = load_checkpoint(wd.checkpoint_path(k + 1).string());
            restore_gan(ckpt, gan, rng, wd.checkpoint_path(k + 1).string());
            start_epoch = ckpt.epoch;
        } else {
            fs::remove(wd.losses_path(k + 1)); // stale log from a deleted checkpoint
        }

        if (log)
            *log << "stage " << (k + 1) << "/" << n_stages << ": tier " << ds.levels[k].name
                 << ", " << data.targets.size() << " images, epochs " << start_epoch << ".."
                 << cfg.epochs << "\n";

        std::vector<LossRecord> pending;
        const std::string losses = wd.losses_path(k + 1).string();
        if (start_epoch == 0) write_loss_csv({}, losses, false); // header
        auto sink = [&](const LossRecord& r) { pending.push_back(r); };
        auto hook = [&](std::size_t epoch) {
            if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs) {
                write_loss_csv(pending, losses, true);
                pending.clear();
                save_checkpoint(make_checkpoint(gan, rng, static_cast<std::uint32_t>(epoch + 1)),
                                wd.checkpoint_path(k + 1).string());
            }
            if (log && cfg.log_every && (epoch + 1) % cfg.log_every == 0)
                *log << "stage " << (k + 1) << " epoch " << (epoch + 1) << "/" << cfg.epochs
                     << "\n";
        };
        TrainResult res = train_gan(gan, data, stage_cfg, rng, sink, start_epoch, hook);
        write_loss_csv(pending, losses, true);
        pending.clear();
        if (res.diverged) {
            save_checkpoint(make_checkpoint(gan, rng, static_cast<std::uint32_t>(res.completed_epochs),
                                            Checkpoint::status_diverged),
                            wd.checkpoint_path(k + 1).string());
            state.stages[k] = {StageStatus::diverged, res.completed_epochs};
            return state;
        }
        save_checkpoint(make_checkpoint(gan, rng, static_cast<std::uint32_t>(cfg.epochs)),
                        wd.checkpoint_path(k + 1).string());
        state.stages[k] = {StageStatus::trained, cfg.epochs};
    }
    return state;
}

// One generated sample: every stage's output, coarsest first; back() is the
// final image.
using CascadeSample = std::vector<Tensor<float>>;

// Chains the trained generators from noise to the final tier. Read-only with
// respect to the workdir.
inline std::vector<CascadeSample> generate_cascade(const Workdir& wd, const TrainConfig& cfg,
                                                   std::size_t n_stages, std::size_t h,
                                                   std::size_t w, std::size_t n,
                                                   std::uint64_t seed) {
    TrainConfig stage_cfg = cfg;
    stage_cfg.noise.image_dims = {1, h, w};
    std::vector<Model<float>> generators;
    for (std::size_t k = 0; k < n_stages; ++k) {
        const auto path = wd.checkpoint_path(k + 1);
        if (!std::filesystem::exists(path))
            throw StateError("stage " + std::to_string(k + 1) + " is untrained (no checkpoint at " +
                             path.string() + ")");
        Checkpoint ckpt = load_checkpoint(path.string());
        if (ckpt.diverged())
            throw StateError("stage " + std::to_string(k + 1) + " diverged; cannot generate");
        Rng dummy(0);
        GanPair<float> gan(detail::stage_g_spec(k, h, w, stage_cfg),
                           build_discriminator(h, w, cfg.leaky_alpha), stage_cfg, dummy);
        restore_gan(ckpt, gan, dummy, path.string());
        generators.push_back(std::move(gan.g));
    }

    Rng rng(seed);
    std::vector<CascadeSample> samples;
    for (std::size_t i = 0; i < n; ++i) {
        CascadeSample sample;
        Tensor<float> cur = sample_noise<float>(stage_cfg.noise, 1, rng);
        for (std::size_t k = 0; k < n_stages; ++k) {
            cur = generators[k].infer(cur, BnMode::infer);
            Tensor<float> img({cur.shape[1], cur.shape[2], cur.shape[3]}, cur.data);
            sample.push_back(std::move(img));
        }
        samples.push_back(std::move(sample));
    }
    return samples;
}

} // namespace tiergan
