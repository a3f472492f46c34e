#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tiergan/loss.hpp"
#include "tiergan/model.hpp"
#include "tiergan/optim.hpp"
#include "tiergan/rng.hpp"

namespace tiergan {

enum class NoiseKind { latent_vector, image_field };
enum class NoiseDist { normal, uniform };

struct NoiseSpec {
    static constexpr std::size_t latent_dim = 128;

    NoiseKind kind = NoiseKind::latent_vector;
    NoiseDist dist = NoiseDist::normal;
    Shape image_dims = {1, 128, 128}; // used when kind == image_field

    Shape sample_shape(std::size_t m) const {
        if (kind == NoiseKind::latent_vector) return {m, latent_dim};
        Shape s = image_dims;
        s.insert(s.begin(), m);
        return s;
    }
};

struct TrainConfig {
    std::size_t epochs = 2000;
    std::size_t batch_size = 8;
    double lr_g = 0.0001;
    double lr_d = 0.00001;
    std::uint64_t seed = 42;
    GLossVariant g_loss_variant = GLossVariant::non_saturating;
    std::size_t log_every = 1; // progress print period, epochs
    NoiseSpec noise;
    double leaky_alpha = 0.2;
    double init_std = 0.02;
    double prob_clamp = 1e-7;
    std::size_t checkpoint_every = 1; // epochs

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
        if (!(lr_g > 0) || !(lr_d > 0)) throw ConfigError("learning rates must be positive");
    }
};

// Batch of i.i.d. draws; the rng state advances deterministically.
template <typename T = float>
Tensor<T> sample_noise(const NoiseSpec& spec, std::size_t m, Rng& rng) {
    if (m < 1) throw Error("sample_noise: batch must be >= 1");
    Tensor<T> t(spec.sample_shape(m));
    if (spec.dist == NoiseDist::normal)
        for (T& v : t.data) v = static_cast<T>(rng.normal());
    else
        for (T& v : t.data) v = static_cast<T>(rng.uniform());
    return t;
}

enum class GenStage { first, refine };
enum class GenVariant { dense_noise, latent_upsample };

namespace detail {

inline void require_pow2_size(std::size_t h, std::size_t w, const char* what) {
    auto pow2 = [](std::size_t v) { return v >= 16 && (v & (v - 1)) == 0; };
    if (!pow2(h) || !pow2(w))
        throw Error(std::string(what) + ": size " + std::to_string(h) + "x" + std::to_string(w) +
                    " unsupported; height and width must be powers of two >= 16");
}

} // namespace detail

// First-stage generators map noise to an image; refine generators map a
// coarse image to a finer one at the same size. Output activation is sigmoid,
// matching data in [0, 1].
inline ModelSpec build_generator(GenStage stage, GenVariant variant, std::size_t h, std::size_t w,
                                 double leaky_alpha = 0.2) {
    detail::require_pow2_size(h, w, "build_generator");
    ModelSpec spec;
    if (stage == GenStage::first && variant == GenVariant::latent_upsample) {
        // 128-long latent, dense to a coarse 64-channel field, three stride-2
        // transposed convs with batch norm, each halving channels.
        const std::size_t h8 = h / 8, w8 = w / 8;
        spec.input_shape = {NoiseSpec::latent_dim};
        spec.layers = {
            LayerDesc::make_dense(NoiseSpec::latent_dim, h8 * w8 * 64),
            LayerDesc::make_reshape({64, h8, w8}),
            LayerDesc::make_conv_transpose(64, 32, 4, 2, 1),
            LayerDesc::make_batchnorm(32),
            LayerDesc::make_leaky_relu(leaky_alpha),
            LayerDesc::make_conv_transpose(32, 16, 4, 2, 1),
            LayerDesc::make_batchnorm(16),
            LayerDesc::make_leaky_relu(leaky_alpha),
            LayerDesc::make_conv_transpose(16, 8, 4, 2, 1),
            LayerDesc::make_batchnorm(8),
            LayerDesc::make_leaky_relu(leaky_alpha),
            LayerDesc::make_conv(8, 1, 3, 1, 1),
            LayerDesc::make_sigmoid(),
        };
    } else {
        // Image-to-image encoder/decoder: two stride-2 convs down, two
        // stride-2 transposed convs back up. The dense_noise first stage uses
        // the same topology over a full-size noise field.
        spec.input_shape = {1, h, w};
        spec.layers = {
            LayerDesc::make_conv(1, 16, 4, 2, 1),
            LayerDesc::make_leaky_relu(leaky_alpha),
            LayerDesc::make_conv(16, 32, 4, 2, 1),
            LayerDesc::make_leaky_relu(leaky_alpha),
            LayerDesc::make_conv_transpose(32, 16, 4, 2, 1),
            LayerDesc::make_leaky_relu(leaky_alpha),
            LayerDesc::make_conv_transpose(16, 1, 4, 2, 1),
            LayerDesc::make_sigmoid(),
        };
    }
    spec.validate();
    return spec;
}

// Four stride-2 convs (16, 32, 64, 128 channels), flatten, dense to a single
// sigmoid probability per sample.
inline ModelSpec build_discriminator(std::size_t h, std::size_t w, double leaky_alpha = 0.2) {
    detail::require_pow2_size(h, w, "build_discriminator");
    ModelSpec spec;
    spec.input_shape = {1, h, w};
    spec.layers = {
        LayerDesc::make_conv(1, 16, 4, 2, 1),   LayerDesc::make_leaky_relu(leaky_alpha),
        LayerDesc::make_conv(16, 32, 4, 2, 1),  LayerDesc::make_leaky_relu(leaky_alpha),
        LayerDesc::make_conv(32, 64, 4, 2, 1),  LayerDesc::make_leaky_relu(leaky_alpha),
        LayerDesc::make_conv(64, 128, 4, 2, 1), LayerDesc::make_leaky_relu(leaky_alpha),
        LayerDesc::make_reshape({128 * (h / 16) * (w / 16)}),
        LayerDesc::make_dense(128 * (h / 16) * (w / 16), 1),
        LayerDesc::make_sigmoid(),
    };
    spec.validate();
    return spec;
}

// One generator/discriminator pair with its optimizers.
template <typename T = float>
struct GanPair {
    Model<T> g, d;
    AdamState<T> opt_g, opt_d;

    GanPair(ModelSpec g_spec, ModelSpec d_spec, const TrainConfig& cfg, Rng& rng)
        : g(std::move(g_spec)), d(std::move(d_spec)), opt_g(static_cast<T>(cfg.lr_g)),
          opt_d(static_cast<T>(cfg.lr_d)) {
        g.init(rng, cfg.init_std);
        d.init(rng, cfg.init_std);
    }
};

namespace detail {

// Stacks per-sample tensors (all same shape) into one batch tensor.
template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items, const std::vector<std::size_t>& idx) {
    Shape s = items[idx[0]].shape;
    s.insert(s.begin(), idx.size());
    Tensor<T> out(s);
    const std::size_t stride = items[idx[0]].size();
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(items[idx[i]].data.begin(), items[idx[i]].data.end(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(i * stride));
    return out;
}

template <typename T>
std::map<std::string, Tensor<T>> collect_grads(std::map<std::string, NodePtr<T>>& nodes) {
    std::map<std::string, Tensor<T>> grads;
    for (auto& [name, node] : nodes) {
        if (!node->grad) node->ensure_grad();
        grads.emplace(name, *node->grad);
    }
    return grads;
}

} // namespace detail

// One discriminator update: L_D = BCE(D(real), 1) + BCE(D(fake), 0), stepping
// only the discriminator's parameters. Fakes are generated without a graph,
// so nothing touches the generator. `g_input` carries the paired coarse batch
// for refinement stages; when absent, noise is sampled from the config.
template <typename T>
double d_train_step(GanPair<T>& gan, const Tensor<T>& real_batch,
                    const std::optional<Tensor<T>>& g_input, const TrainConfig& cfg, Rng& rng) {
        const std::size_t m = real_batch.shape[0];
    Tensor<T> g_in = g_input ? *g_input : sample_noise<T>(cfg.noise, m, rng);
    // Batch-norm uses batch statistics here but leaves the generator's running
    // statistics alone; only g_train_step advances generator state.
    Tensor<T> fake = gan.g.forward(constant(std::move(g_in)), BnMode::train, false)->value;

    auto d_nodes = gan.d.make_param_nodes();
    NodePtr<T> p_real = gan.d.forward(constant(real_batch), BnMode::train, false, &d_nodes);
    NodePtr<T> p_fake = gan.d.forward(constant(std::move(fake)), BnMode::train, false, &d_nodes);
    NodePtr<T> loss = add(bce_loss(p_real, Tensor<T>::full(p_real->value.shape, T(1)), cfg.prob_clamp),
                          bce_loss(p_fake, Tensor<T>(p_fake->value.shape), cfg.prob_clamp));
    const double out = static_cast<double>(loss->value[0]);
    if (!std::isfinite(out))
        throw DivergedError("d_train_step: non-finite loss " + std::to_string(out));
    backward(loss);
    auto grads = detail::collect_grads(d_nodes);
    adam_step(gan.d.params, grads, gan.opt_d);
    return out;
}

// One generator update: L_G = BCE(D(G(z)), 1) (non-saturating) or the
// saturating mean log(1 - D(G(z))); only the generator's parameters move.
template <typename T>
double g_train_step(GanPair<T>& gan, const std::optional<Tensor<T>>& g_input,
                    const TrainConfig& cfg, Rng& rng) {
    const std::size_t m = g_input ? g_input->shape[0] : cfg.batch_size;
    Tensor<T> g_in = g_input ? *g_input : sample_noise<T>(cfg.noise, m, rng);
    auto g_nodes = gan.g.make_param_nodes();
    NodePtr<T> fake = gan.g.forward(constant(std::move(g_in)), BnMode::train, true, &g_nodes);
    NodePtr<T> p = gan.d.forward(fake, BnMode::train, false); // D params are throwaway leaves
    NodePtr<T> loss =
        cfg.g_loss_variant == GLossVariant::non_saturating
            ? bce_loss(p, Tensor<T>::full(p->value.shape, T(1)), cfg.prob_clamp)
            : mean_log_one_minus(p, cfg.prob_clamp);
    const double out = static_cast<double>(loss->value[0]);
    if (!std::isfinite(out))
        throw DivergedError("g_train_step: non-finite loss " + std::to_string(out));
    backward(loss);
    auto grads = detail::collect_grads(g_nodes);
    adam_step(gan.g.params, grads, gan.opt_g);
    return out;
}

template <typename T>
double d_train_step(GanPair<T>& gan, const Tensor<T>& real_batch, const TrainConfig& cfg,
                    Rng& rng) {
    return d_train_step(gan, real_batch, std::optional<Tensor<T>>{}, cfg, rng);
}

template <typename T>
double g_train_step(GanPair<T>& gan, const TrainConfig& cfg, Rng& rng) {
    return g_train_step(gan, std::optional<Tensor<T>>{}, cfg, rng);
}

struct LossRecord {
    std::size_t epoch = 0;
    std::size_t step = 0; // batch index within the epoch
    double d_loss = 0;
    double g_loss = 0;
};

// Targets are what the discriminator sees as real; inputs, when non-empty,
// are the paired coarse images fed to the generator (same index order).
template <typename T = float>
struct GanDataset {
    std::vector<Tensor<T>> targets;
    std::vector<Tensor<T>> inputs;

    bool paired() const { return !inputs.empty(); }
};

struct TrainResult {
    std::vector<LossRecord> history;
    bool diverged = false;
    std::size_t completed_epochs = 0;
};

using LossSink = std::function<void(const LossRecord&)>;
using EpochHook = std::function<void(std::size_t epoch)>;

// Alternating update loop: per shuffled batch, one discriminator step then
// one generator step. Deterministic given (models, dataset, config, rng).
// Partial trailing batches are dropped. On a non-finite loss the loop stops
// and reports diverged; the caller owns checkpointing via `epoch_hook`.
template <typename T>
TrainResult train_gan(GanPair<T>& gan, const GanDataset<T>& ds, const TrainConfig& cfg, Rng& rng,
                      const LossSink& sink = nullptr, std::size_t start_epoch = 0,
                      const EpochHook& epoch_hook = nullptr) {
    cfg.validate();
    if (ds.targets.empty()) throw Error("train_gan: dataset is empty");
    if (ds.paired() && ds.inputs.size() != ds.targets.size())
        throw Error("train_gan: paired inputs must match targets in count");
    TrainResult result;
    result.completed_epochs = start_epoch;
    const std::size_t n = ds.targets.size();
    const std::size_t steps_per_epoch = n / cfg.batch_size;
    if (steps_per_epoch == 0)
        throw Error("train_gan: dataset smaller than one batch (" + std::to_string(n) + " < " +
                    std::to_string(cfg.batch_size) + ")");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        shuffle(order, rng);
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(step * cfg.batch_size),
                                         order.begin() + static_cast<std::ptrdiff_t>((step + 1) * cfg.batch_size));
            Tensor<T> real = detail::stack_batch(ds.targets, idx);
            std::optional<Tensor<T>> g_in;
            if (ds.paired()) g_in = detail::stack_batch(ds.inputs, idx);
            LossRecord rec{epoch, step, 0, 0};
            try {
                rec.d_loss = d_train_step(gan, real, g_in, cfg, rng);
                rec.g_loss = g_train_step(gan, g_in, cfg, rng);
            } catch (const DivergedError&) {
                result.diverged = true;
                return result;
            }
            if (!std::isfinite(rec.d_loss) || !std::isfinite(rec.g_loss)) {
                result.diverged = true;
                return result;
            }
            result.history.push_back(rec);
            if (sink) sink(rec);
        }
        result.completed_epochs = epoch + 1;
        if (epoch_hook) epoch_hook(epoch);
    }
    return result;
}

} // namespace tiergan
