#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "l3/params.hpp"

namespace l3 {

// Adam with beta1=0.9, beta2=0.999, bias correction, epsilon added outside
// the square root. Frozen entries must not receive gradients; that is a
// contract violation, not a silent skip.
template <class T>
class Adam {
public:
    template <class U>
    explicit Adam(const ParameterStore<U>& store, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : m_(store.total_size(), T(0)),
          v_(store.total_size(), T(0)),
          beta1_(beta1),
          beta2_(beta2),
          eps_(eps) {}

    void step(ParameterStore<T>& params, const GradientSet<T>& grads, double lr) {
        if (grads.flat.size() != params.total_size() || grads.provided.size() != params.entry_count())
            throw std::invalid_argument("gradient buffer does not match parameter store");
        for (std::size_t i = 0; i < params.entry_count(); ++i) {
            const auto& e = params.entry(i);
            if (e.trainable && !grads.provided[i])
                throw std::invalid_argument("missing gradient for trainable parameter: " + e.name);
            if (!e.trainable && grads.provided[i])
                throw std::invalid_argument("gradient provided for frozen parameter: " + e.name);
        }
        ++t_;
        const T c1 = T(1) - static_cast<T>(std::pow(beta1_, t_));
        const T c2 = T(1) - static_cast<T>(std::pow(beta2_, t_));
        const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
        T* theta = params.flat().data();
        for (std::size_t i = 0; i < params.entry_count(); ++i) {
            const auto& e = params.entry(i);
            if (!e.trainable) continue;
            const T* g = grads.flat.data() + e.offset;
            T* m = m_.data() + e.offset;
            T* v = v_.data() + e.offset;
            T* p = theta + e.offset;
            for (std::size_t j = 0; j < e.size; ++j) {
                m[j] = b1 * m[j] + (T(1) - b1) * g[j];
                v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
                const T mhat = m[j] / c1;
                const T vhat = v[j] / c2;
                p[j] -= static_cast<T>(lr) * mhat / (std::sqrt(vhat) + static_cast<T>(eps_));
            }
        }
    }

    long steps_taken() const { return t_; }

private:
    std::vector<T> m_, v_;
    double beta1_, beta2_, eps_;
    long t_ = 0;
};

}  // namespace l3
