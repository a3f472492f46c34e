#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tiergan/gan.hpp"
#include "tiergan/loss.hpp"
#include "tiergan/model.hpp"
#include "tiergan/ops.hpp"
#include "tiergan/rng.hpp"

namespace tiergan {

struct GradCheckResult {
    std::string kind;
    double max_rel_err = 0.0;
};

namespace detail {

struct CheckGraph {
    NodePtr<double> loss;
    std::map<std::string, NodePtr<double>> leaves;
};

// Relative error with an absolute fallback for degenerate (near-zero) pairs.
inline double rel_err(double a, double f) {
    const double denom = std::max(std::abs(a), std::abs(f));
    if (denom < 1e-8) return std::abs(a - f);
    return std::abs(a - f) / denom;
}

// Compares reverse-mode gradients against central differences
// (f(x+h) - f(x-h)) / 2h for every element of every leaf tensor.
inline double max_rel_error_fd(
    const std::function<CheckGraph(std::map<std::string, Tensor<double>>&)>& build,
    std::map<std::string, Tensor<double>>& leaves, double h) {
    CheckGraph g = build(leaves);
    backward(g.loss);
    std::map<std::string, Tensor<double>> analytic;
    for (auto& [name, node] : g.leaves) {
        node->ensure_grad();
        analytic.emplace(name, *node->grad);
    }
    double worst = 0.0;
    for (auto& [name, t] : leaves) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double orig = t[i];
            t[i] = orig + h;
            const double fp = build(leaves).loss->value[0];
            t[i] = orig - h;
            const double fm = build(leaves).loss->value[0];
            t[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            worst = std::max(worst, rel_err(analytic.at(name)[i], fd));
        }
    }
    return worst;
}

inline Tensor<double> random_tensor(Shape s, Rng& rng, double scale = 1.0) {
    Tensor<double> t(std::move(s));
    for (double& v : t.data) v = rng.normal() * scale;
    return t;
}

// Values bounded away from the leaky_relu kink so central differences stay on
// one side of it.
inline Tensor<double> kink_free_tensor(Shape s, Rng& rng) {
    Tensor<double> t = random_tensor(std::move(s), rng);
    for (double& v : t.data) v += v >= 0 ? 0.1 : -0.1;
    return t;
}

} // namespace detail

// Finite-difference check of one model: perturbs every parameter and every
// input element. 64-bit graph; batch-norm runs on batch statistics without
// updating running state, so repeated evaluations see identical functions.
inline double grad_check_model(const ModelSpec& spec, const Tensor<double>& input,
                               const Tensor<double>& labels, double step, std::uint64_t seed) {
    Model<double> model(spec);
    Rng rng(seed);
    model.init(rng, 0.1);
    std::map<std::string, Tensor<double>> leaves = model.params;
    leaves.emplace("input", input);
    auto build = [&](std::map<std::string, Tensor<double>>& lv) {
        model.params.clear();
        for (auto& [name, t] : lv)
            if (name != "input") model.params[name] = t;
        std::map<std::string, NodePtr<double>> nodes = model.make_param_nodes();
        NodePtr<double> in = param(lv.at("input"), "input");
        NodePtr<double> out = model.forward(in, BnMode::train, false, &nodes);
        detail::CheckGraph g;
        g.loss = bce_loss(out, labels);
        g.leaves = std::move(nodes);
        g.leaves.emplace("input", in);
        return g;
    };
    return detail::max_rel_error_fd(build, leaves, step);
}

// Reference fixtures for the model-level checks: the same layer-kind sequences
// as the production architectures at desk scale (latent 8 -> 8x8 image).
inline ModelSpec tiny_generator_spec() {
    ModelSpec spec;
    spec.input_shape = {8};
    spec.layers = {
        LayerDesc::make_dense(8, 16),
        LayerDesc::make_reshape({4, 2, 2}),
        LayerDesc::make_conv_transpose(4, 4, 4, 2, 1),
        LayerDesc::make_batchnorm(4),
        LayerDesc::make_leaky_relu(0.2),
        LayerDesc::make_conv_transpose(4, 2, 4, 2, 1),
        LayerDesc::make_batchnorm(2),
        LayerDesc::make_leaky_relu(0.2),
        LayerDesc::make_conv(2, 1, 3, 1, 1),
        LayerDesc::make_sigmoid(),
    };
    spec.validate();
    return spec;
}

inline ModelSpec tiny_discriminator_spec() {
    ModelSpec spec;
    spec.input_shape = {1, 8, 8};
    spec.layers = {
        LayerDesc::make_conv(1, 4, 4, 2, 1),
        LayerDesc::make_leaky_relu(0.2),
        LayerDesc::make_conv(4, 8, 4, 2, 1),
        LayerDesc::make_leaky_relu(0.2),
        LayerDesc::make_reshape({32}),
        LayerDesc::make_dense(32, 1),
        LayerDesc::make_sigmoid(),
    };
    spec.validate();
    return spec;
}

// Finite-difference suite over every primitive plus both reference models.
inline std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, double step = 1e-5) {
    using detail::CheckGraph;
    std::vector<GradCheckResult> results;
    Rng rng(seed);

    auto check_single = [&](const std::string& kind,
                            std::map<std::string, Tensor<double>> leaves,
                            std::function<NodePtr<double>(std::map<std::string, NodePtr<double>>&)>
                                make_loss) {
        auto build = [&](std::map<std::string, Tensor<double>>& lv) {
            std::map<std::string, NodePtr<double>> nodes;
            for (auto& [name, t] : lv) nodes[name] = param(t, name);
            CheckGraph g;
            g.loss = make_loss(nodes);
            g.leaves = std::move(nodes);
            return g;
        };
        results.push_back({kind, detail::max_rel_error_fd(build, leaves, step)});
    };

    { // dense
        std::map<std::string, Tensor<double>> lv;
        lv["x"] = detail::random_tensor({2, 5}, rng);
        lv["W"] = detail::random_tensor({5, 4}, rng, 0.5);
        lv["b"] = detail::random_tensor({4}, rng, 0.5);
        Tensor<double> w = detail::random_tensor({2, 4}, rng);
        check_single("dense", std::move(lv), [w](auto& n) {
            return weighted_mean(dense(n.at("x"), n.at("W"), n.at("b")), w);
        });
    }
    { // conv2d
        ConvGeometry geom{3, 3, 2, 2, 1, 1, 2, 3};
        std::map<std::string, Tensor<double>> lv;
        lv["x"] = detail::random_tensor({2, 2, 6, 6}, rng);
        lv["K"] = detail::random_tensor({3, 2, 3, 3}, rng, 0.5);
        lv["b"] = detail::random_tensor({3}, rng, 0.5);
        Tensor<double> w = detail::random_tensor({2, 3, 3, 3}, rng);
        check_single("conv2d", std::move(lv), [w, geom](auto& n) {
            return weighted_mean(conv2d(n.at("x"), n.at("K"), n.at("b"), geom), w);
        });
    }
    { // conv2d_transpose
        ConvGeometry geom{4, 4, 2, 2, 1, 1, 3, 2};
        std::map<std::string, Tensor<double>> lv;
        lv["x"] = detail::random_tensor({2, 3, 4, 4}, rng);
        lv["K"] = detail::random_tensor({3, 2, 4, 4}, rng, 0.5);
        lv["b"] = detail::random_tensor({2}, rng, 0.5);
        Tensor<double> w = detail::random_tensor({2, 2, 8, 8}, rng);
        check_single("conv2d_transpose", std::move(lv), [w, geom](auto& n) {
            return weighted_mean(conv2d_transpose(n.at("x"), n.at("K"), n.at("b"), geom), w);
        });
    }
    { // batchnorm (train-mode statistics)
        std::map<std::string, Tensor<double>> lv;
        lv["x"] = detail::random_tensor({2, 3, 4, 4}, rng);
        lv["gamma"] = detail::random_tensor({3}, rng, 0.5);
        lv["beta"] = detail::random_tensor({3}, rng, 0.5);
        for (double& v : lv["gamma"].data) v += 1.0;
        Tensor<double> w = detail::random_tensor({2, 3, 4, 4}, rng);
        check_single("batchnorm", std::move(lv), [w](auto& n) {
            return weighted_mean(batchnorm<double>(n.at("x"), n.at("gamma"), n.at("beta"),
                                                   BnMode::train, nullptr, false),
                                 w);
        });
    }
    { // leaky_relu
        std::map<std::string, Tensor<double>> lv;
        lv["x"] = detail::kink_free_tensor({2, 10}, rng);
        Tensor<double> w = detail::random_tensor({2, 10}, rng);
        check_single("leaky_relu", std::move(lv),
                     [w](auto& n) { return weighted_mean(leaky_relu(n.at("x"), 0.2), w); });
    }
    { // sigmoid
        std::map<std::string, Tensor<double>> lv;
        lv["x"] = detail::random_tensor({2, 10}, rng);
        Tensor<double> w = detail::random_tensor({2, 10}, rng);
        check_single("sigmoid", std::move(lv),
                     [w](auto& n) { return weighted_mean(sigmoid(n.at("x")), w); });
    }
    { // bce_loss over probabilities away from the clamp boundary
        std::map<std::string, Tensor<double>> lv;
        Tensor<double> p({2, 8});
        Tensor<double> y({2, 8});
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] = 0.05 + 0.9 * rng.uniform();
            y[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
        }
        lv["p"] = p;
        check_single("bce_loss", std::move(lv),
                     [y](auto& n) { return bce_loss(n.at("p"), y); });
    }
    { // upsample_nearest
        std::map<std::string, Tensor<double>> lv;
        lv["x"] = detail::random_tensor({2, 2, 3, 3}, rng);
        Tensor<double> w = detail::random_tensor({2, 2, 6, 6}, rng);
        check_single("upsample_nearest", std::move(lv),
                     [w](auto& n) { return weighted_mean(upsample_nearest(n.at("x"), 2), w); });
    }
    { // generator model: latent 8 -> 8x8 image
        Tensor<double> z = detail::random_tensor({2, 8}, rng);
        Tensor<double> y = Tensor<double>::full({2, 1, 8, 8}, 1.0);
        results.push_back({"generator", grad_check_model(tiny_generator_spec(), z, y, step, seed ^ 0x9e37)});
    }
    { // discriminator model: 8x8 image -> probability
        Tensor<double> x = detail::random_tensor({2, 1, 8, 8}, rng, 0.5);
        Tensor<double> y({2, 1});
        y[0] = 1.0;
        y[1] = 0.0;
        results.push_back(
            {"discriminator", grad_check_model(tiny_discriminator_spec(), x, y, step, seed ^ 0x79b9)});
    }
    return results;
}

} // namespace tiergan
