#pragma once

#include <algorithm>
#include <cmath>

#include "tiergan/autodiff.hpp"
#include "tiergan/tensor.hpp"

namespace tiergan {

enum class GLossVariant { non_saturating, saturating };

namespace detail {

// Clamp to [lo, hi] that lets NaN through, so a diverged probability still
// surfaces as a non-finite loss.
template <typename T>
T clamp_prob(T p, T lo, T hi) {
    if (p < lo) return lo;
    if (p > hi) return hi;
    return p;
}

} // namespace detail

struct LossConfig {
    GLossVariant g_loss_variant = GLossVariant::non_saturating;
    double label_real = 1.0;
    double label_fake = 0.0;
    double prob_clamp = 1e-7; // probabilities clamped to [clamp, 1-clamp] before log
};

// Mean over elements of -[y*ln(p) + (1-y)*ln(1-p)]. Labels are constants;
// gradients are evaluated at the clamped probability.
template <typename T>
NodePtr<T> bce_loss(const NodePtr<T>& p, Tensor<T> y, double clamp = 1e-7) {
    require_same_shape(p->value.shape, y.shape, "bce_loss");
    if (!(clamp > 0.0 && clamp <= 0.01)) throw Error("bce_loss: clamp must be in (0, 0.01]");
    const T lo = static_cast<T>(clamp), hi = T(1) - static_cast<T>(clamp);
    const std::size_t n = y.size();
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T pc = detail::clamp_prob(p->value[i], lo, hi);
        acc += -(y[i] * std::log(pc) + (T(1) - y[i]) * std::log(T(1) - pc));
    }
    acc /= static_cast<T>(n);
    return make_node<T>("bce_loss", Tensor<T>::scalar(acc), {p},
                        [y = std::move(y), lo, hi, n](Node<T>& self) {
                            const T g = (*self.grad)[0];
                            const Tensor<T>& pv = self.parents[0]->value;
                            auto& pg = self.parents[0]->grad->data;
                            for (std::size_t i = 0; i < n; ++i) {
                                const T pc = detail::clamp_prob(pv[i], lo, hi);
                                pg[i] += g * (-(y[i] / pc) + (T(1) - y[i]) / (T(1) - pc)) /
                                         static_cast<T>(n);
                            }
                        });
}

// Mean over elements of ln(1-p); the saturating generator objective, which is
// minimized directly (its value can be negative).
template <typename T>
NodePtr<T> mean_log_one_minus(const NodePtr<T>& p, double clamp = 1e-7) {
    const T lo = static_cast<T>(clamp), hi = T(1) - static_cast<T>(clamp);
    const std::size_t n = p->value.size();
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T pc = detail::clamp_prob(p->value[i], lo, hi);
        acc += std::log(T(1) - pc);
    }
    acc /= static_cast<T>(n);
    return make_node<T>("mean_log_one_minus", Tensor<T>::scalar(acc), {p},
                        [lo, hi, n](Node<T>& self) {
                            const T g = (*self.grad)[0];
                            const Tensor<T>& pv = self.parents[0]->value;
                            auto& pg = self.parents[0]->grad->data;
                            for (std::size_t i = 0; i < n; ++i) {
                                const T pc = detail::clamp_prob(pv[i], lo, hi);
                                pg[i] += g * (T(-1) / (T(1) - pc)) / static_cast<T>(n);
                            }
                        });
}

// Empirical two-player objective: mean(ln D_real) + mean(ln(1 - D_fake)).
// Plain evaluator, no graph; the discriminator loss equals its negation.
template <typename T>
T value_function(const Tensor<T>& d_real, const Tensor<T>& d_fake, double clamp = 1e-7) {
    const T lo = static_cast<T>(clamp), hi = T(1) - static_cast<T>(clamp);
    T real_acc = T(0);
    for (std::size_t i = 0; i < d_real.size(); ++i)
        real_acc += std::log(detail::clamp_prob(d_real[i], lo, hi));
    real_acc /= static_cast<T>(d_real.size());
    T fake_acc = T(0);
    for (std::size_t i = 0; i < d_fake.size(); ++i)
        fake_acc += std::log(T(1) - detail::clamp_prob(d_fake[i], lo, hi));
    fake_acc /= static_cast<T>(d_fake.size());
    return real_acc + fake_acc;
}

} // namespace tiergan
