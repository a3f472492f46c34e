#pragma once

#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tiergan/autodiff.hpp"
#include "tiergan/hash.hpp"
#include "tiergan/ops.hpp"
#include "tiergan/rng.hpp"
#include "tiergan/tensor.hpp"

namespace tiergan {

enum class LayerKind { dense, conv, conv_transpose, batchnorm, leaky_relu, sigmoid, reshape, upsample };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv: return "conv";
        case LayerKind::conv_transpose: return "conv_transpose";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::leaky_relu: return "leaky_relu";
        case LayerKind::sigmoid: return "sigmoid";
        case LayerKind::reshape: return "reshape";
        case LayerKind::upsample: return "upsample";
    }
    return "?";
}

struct LayerDesc {
    LayerKind kind = LayerKind::dense;
    std::size_t in = 0, out = 0; // dense
    ConvGeometry geom{};         // conv / conv_transpose
    std::size_t channels = 0;    // batchnorm
    double alpha = 0.2;          // leaky_relu
    Shape target;                // reshape (per-sample)
    std::size_t factor = 1;      // upsample

    static LayerDesc make_dense(std::size_t in, std::size_t out) {
        LayerDesc d;
        d.kind = LayerKind::dense;
        d.in = in;
        d.out = out;
        return d;
    }
    static LayerDesc make_conv(std::size_t ci, std::size_t co, std::size_t k, std::size_t s,
                               std::size_t p) {
        LayerDesc d;
        d.kind = LayerKind::conv;
        d.geom = ConvGeometry{k, k, s, s, p, p, ci, co};
        return d;
    }
    static LayerDesc make_conv_transpose(std::size_t ci, std::size_t co, std::size_t k,
                                         std::size_t s, std::size_t p) {
        LayerDesc d;
        d.kind = LayerKind::conv_transpose;
        d.geom = ConvGeometry{k, k, s, s, p, p, ci, co};
        return d;
    }
    static LayerDesc make_batchnorm(std::size_t c) {
        LayerDesc d;
        d.kind = LayerKind::batchnorm;
        d.channels = c;
        return d;
    }
    static LayerDesc make_leaky_relu(double alpha) {
        LayerDesc d;
        d.kind = LayerKind::leaky_relu;
        d.alpha = alpha;
        return d;
    }
    static LayerDesc make_sigmoid() {
        LayerDesc d;
        d.kind = LayerKind::sigmoid;
        return d;
    }
    static LayerDesc make_reshape(Shape target) {
        LayerDesc d;
        d.kind = LayerKind::reshape;
        d.target = std::move(target);
        return d;
    }
    static LayerDesc make_upsample(std::size_t f) {
        LayerDesc d;
        d.kind = LayerKind::upsample;
        d.factor = f;
        return d;
    }
};

// Ordered layer descriptions defining a generator or discriminator. Shapes are
// per-sample; the batch dimension is implicit.
struct ModelSpec {
    Shape input_shape;
    std::vector<LayerDesc> layers;
    Shape output_shape; // filled by validate()

    // Chains per-sample shapes through every layer; throws on any mismatch.
    void validate() {
        Shape cur = input_shape;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const LayerDesc& l = layers[i];
            const std::string where = "layer " + std::to_string(i) + " (" +
                                      layer_kind_name(l.kind) + ")";
            switch (l.kind) {
                case LayerKind::dense:
                    if (cur != Shape{l.in})
                        throw ShapeError(where + ": expects (" + std::to_string(l.in) + "), got " +
                                         shape_str(cur));
                    cur = {l.out};
                    break;
                case LayerKind::conv: {
                    require_spatial(cur, where);
                    if (cur[0] != l.geom.in_channels)
                        throw ShapeError(where + ": expects " + std::to_string(l.geom.in_channels) +
                                         " channels, got " + shape_str(cur));
                    auto [oh, ow] = l.geom.conv_out_hw(cur[1], cur[2]);
                    cur = {l.geom.out_channels, oh, ow};
                    break;
                }
                case LayerKind::conv_transpose: {
                    require_spatial(cur, where);
                    if (cur[0] != l.geom.in_channels)
                        throw ShapeError(where + ": expects " + std::to_string(l.geom.in_channels) +
                                         " channels, got " + shape_str(cur));
                    auto [oh, ow] = l.geom.tconv_out_hw(cur[1], cur[2]);
                    cur = {l.geom.out_channels, oh, ow};
                    break;
                }
                case LayerKind::batchnorm:
                    require_spatial(cur, where);
                    if (cur[0] != l.channels)
                        throw ShapeError(where + ": expects " + std::to_string(l.channels) +
                                         " channels, got " + shape_str(cur));
                    break;
                case LayerKind::leaky_relu:
                case LayerKind::sigmoid:
                    break;
                case LayerKind::reshape:
                    if (shape_numel(cur) != shape_numel(l.target))
                        throw ShapeError(where + ": cannot view " + shape_str(cur) + " as " +
                                         shape_str(l.target));
                    cur = l.target;
                    break;
                case LayerKind::upsample:
                    require_spatial(cur, where);
                    cur = {cur[0], cur[1] * l.factor, cur[2] * l.factor};
                    break;
            }
        }
        output_shape = cur;
    }

    // Canonical serialization; two specs share a digest iff their layer
    // structure is identical.
    std::string canonical() const {
        std::ostringstream os;
        os << "in=" << shape_str(input_shape) << ";";
        for (const LayerDesc& l : layers) {
            os << layer_kind_name(l.kind);
            switch (l.kind) {
                case LayerKind::dense: os << "[" << l.in << "->" << l.out << "]"; break;
                case LayerKind::conv:
                case LayerKind::conv_transpose:
                    os << "[ci" << l.geom.in_channels << " co" << l.geom.out_channels << " k"
                       << l.geom.kh << "x" << l.geom.kw << " s" << l.geom.sh << "x" << l.geom.sw
                       << " p" << l.geom.ph << "x" << l.geom.pw << "]";
                    break;
                case LayerKind::batchnorm: os << "[" << l.channels << "]"; break;
                case LayerKind::leaky_relu: os << "[" << l.alpha << "]"; break;
                case LayerKind::sigmoid: break;
                case LayerKind::reshape: os << "[" << shape_str(l.target) << "]"; break;
                case LayerKind::upsample: os << "[" << l.factor << "]"; break;
            }
            os << ";";
        }
        return os.str();
    }

    std::uint64_t digest() const { return fnv1a64(canonical()); }

private:
    static void require_spatial(const Shape& s, const std::string& where) {
        if (s.size() != 3)
            throw ShapeError(where + ": expects (c, h, w) input, got " + shape_str(s));
    }
};

// A spec plus its parameter tensors and batch-norm running statistics.
template <typename T = float>
struct Model {
    ModelSpec spec;
    std::map<std::string, Tensor<T>> params;
    std::map<std::string, RunningStats<T>> bn_stats; // keyed like params, "L03"
    double bn_eps = 1e-5;
    double bn_momentum = 0.9;

    explicit Model(ModelSpec s = {}) : spec(std::move(s)) {
        if (!spec.layers.empty()) spec.validate();
    }

    static std::string layer_key(std::size_t i) {
        char buf[8];
        std::snprintf(buf, sizeof buf, "L%02zu", i);
        return buf;
    }

    // Zero-mean normal weights (std configurable), zero biases, identity
    // batch-norm affine. Draw order is fixed by layer order, so a seed fully
    // determines the parameters.
    void init(Rng& rng, double weight_std = 0.02) {
        params.clear();
        bn_stats.clear();
        for (std::size_t i = 0; i < spec.layers.size(); ++i) {
            const LayerDesc& l = spec.layers[i];
            const std::string key = layer_key(i);
            switch (l.kind) {
                case LayerKind::dense:
                    params[key + ".W"] = normal_tensor({l.in, l.out}, rng, weight_std);
                    params[key + ".b"] = Tensor<T>({l.out});
                    break;
                case LayerKind::conv:
                    params[key + ".K"] = normal_tensor(
                        {l.geom.out_channels, l.geom.in_channels, l.geom.kh, l.geom.kw}, rng,
                        weight_std);
                    params[key + ".b"] = Tensor<T>({l.geom.out_channels});
                    break;
                case LayerKind::conv_transpose:
                    params[key + ".K"] = normal_tensor(
                        {l.geom.in_channels, l.geom.out_channels, l.geom.kh, l.geom.kw}, rng,
                        weight_std);
                    params[key + ".b"] = Tensor<T>({l.geom.out_channels});
                    break;
                case LayerKind::batchnorm:
                    params[key + ".gamma"] = Tensor<T>::full({l.channels}, T(1));
                    params[key + ".beta"] = Tensor<T>({l.channels});
                    bn_stats.emplace(key, RunningStats<T>(l.channels));
                    break;
                default: break;
            }
        }
    }

    std::map<std::string, NodePtr<T>> make_param_nodes() {
        std::map<std::string, NodePtr<T>> nodes;
        for (auto& [name, tensor] : params) nodes[name] = param(tensor, name);
        return nodes;
    }

    // Builds the graph for a batch. `param_nodes`, when supplied, lets one set
    // of leaves serve several forward passes in the same step so fan-out
    // gradients accumulate.
    NodePtr<T> forward(NodePtr<T> input, BnMode mode, bool update_running = false,
                       std::map<std::string, NodePtr<T>>* param_nodes = nullptr) {
        const Shape& in = input->value.shape;
        Shape expect = spec.input_shape;
        expect.insert(expect.begin(), in.empty() ? 0 : in[0]);
        if (in != expect)
            throw ShapeError("model forward: input " + shape_str(in) + " does not match spec " +
                             shape_str(expect));
        std::map<std::string, NodePtr<T>> local;
        if (!param_nodes) {
            local = make_param_nodes();
            param_nodes = &local;
        }
        const std::size_t batch = in[0];
        NodePtr<T> cur = std::move(input);
        for (std::size_t i = 0; i < spec.layers.size(); ++i) {
            const LayerDesc& l = spec.layers[i];
            const std::string key = layer_key(i);
            switch (l.kind) {
                case LayerKind::dense:
                    cur = dense(cur, param_nodes->at(key + ".W"), param_nodes->at(key + ".b"));
                    break;
                case LayerKind::conv:
                    cur = conv2d(cur, param_nodes->at(key + ".K"), param_nodes->at(key + ".b"),
                                 l.geom);
                    break;
                case LayerKind::conv_transpose:
                    cur = conv2d_transpose(cur, param_nodes->at(key + ".K"),
                                           param_nodes->at(key + ".b"), l.geom);
                    break;
                case LayerKind::batchnorm:
                    cur = batchnorm(cur, param_nodes->at(key + ".gamma"),
                                    param_nodes->at(key + ".beta"), mode, &bn_stats.at(key),
                                    update_running, bn_eps, bn_momentum);
                    break;
                case LayerKind::leaky_relu: cur = leaky_relu(cur, l.alpha); break;
                case LayerKind::sigmoid: cur = sigmoid(cur); break;
                case LayerKind::reshape: {
                    Shape target = l.target;
                    target.insert(target.begin(), batch);
                    cur = reshape(cur, std::move(target));
                    break;
                }
                case LayerKind::upsample: cur = upsample_nearest(cur, l.factor); break;
            }
        }
        return cur;
    }

    // Forward without keeping the graph.
    Tensor<T> infer(const Tensor<T>& input, BnMode mode = BnMode::infer) {
        return forward(constant(input), mode)->value;
    }

private:
    Tensor<T> normal_tensor(Shape s, Rng& rng, double std_dev) {
        Tensor<T> t(std::move(s));
        for (T& v : t.data) v = static_cast<T>(rng.normal() * std_dev);
        return t;
    }
};

} // namespace tiergan
