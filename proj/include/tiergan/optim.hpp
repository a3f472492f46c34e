#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "tiergan/error.hpp"
#include "tiergan/tensor.hpp"

namespace tiergan {

// Adam with bias correction. One state owns the moments for every parameter
// of one model; t advances once per step.
template <typename T>
struct AdamState {
    T lr;
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    std::uint64_t t = 0;
    std::map<std::string, Tensor<T>> m, v;

    explicit AdamState(T lr_ = T(1e-4)) : lr(lr_) {}
};

template <typename T>
void adam_step(std::map<std::string, Tensor<T>>& params,
               const std::map<std::string, Tensor<T>>& grads, AdamState<T>& st) {
    st.t += 1;
    const T bc1 = T(1) - std::pow(st.beta1, static_cast<T>(st.t));
    const T bc2 = T(1) - std::pow(st.beta2, static_cast<T>(st.t));
    for (auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end())
            throw Error("adam_step: missing gradient for parameter '" + name + "'");
        const Tensor<T>& g = git->second;
        require_same_shape(p.shape, g.shape, "adam_step");
        if (!g.all_finite())
            throw DivergedError("adam_step: non-finite gradient at step " + std::to_string(st.t) +
                                ", parameter '" + name + "'");
        Tensor<T>& m = st.m.try_emplace(name, Tensor<T>(p.shape)).first->second;
        Tensor<T>& v = st.v.try_emplace(name, Tensor<T>(p.shape)).first->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = st.beta1 * m[i] + (T(1) - st.beta1) * g[i];
            v[i] = st.beta2 * v[i] + (T(1) - st.beta2) * g[i] * g[i];
            const T mhat = m[i] / bc1;
            const T vhat = v[i] / bc2;
            p[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

} // namespace tiergan
