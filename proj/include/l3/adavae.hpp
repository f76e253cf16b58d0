#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace l3 {

// Per-dimension KL(q_a,j || q_b,j) between univariate Gaussians given means
// and log variances:  log(s_b/s_a) + (s_a^2 + (mu_a-mu_b)^2) / (2 s_b^2) - 1/2.
template <class T>
void gaussian_kl_per_dim(const T* mu_a, const T* lv_a, const T* mu_b, const T* lv_b, T* delta,
                         int n) {
    for (int j = 0; j < n; ++j) {
        const T va = std::exp(lv_a[j]);
        const T vb = std::exp(lv_b[j]);
        const T dmu = mu_a[j] - mu_b[j];
        delta[j] = (lv_b[j] - lv_a[j]) / T(2) + (va + dmu * dmu) / (T(2) * vb) - T(0.5);
    }
}

// Indices of the k largest divergences, ties broken toward the lower index.
template <class T>
std::vector<int> top_k_divergent(const T* delta, int n, int k) {
    if (k >= n) throw std::invalid_argument("adavae: k must be smaller than the latent dimension");
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return delta[a] > delta[b]; });
    std::vector<int> kept(order.begin(), order.begin() + k);
    std::sort(kept.begin(), kept.end());
    return kept;
}

// Modified posterior pair: kept dims stay distinct, every other dim is
// replaced (in both elements) by the parameter average: mean of mus, mean of
// variances, logvar = log of the averaged variance.
template <class T>
void adavae_average(const T* mu_a, const T* lv_a, const T* mu_b, const T* lv_b,
                    const std::vector<int>& kept, T* mu_m_a, T* lv_m_a, T* mu_m_b, T* lv_m_b,
                    int n) {
    std::vector<char> is_kept(n, 0);
    for (int j : kept) is_kept[j] = 1;
    for (int j = 0; j < n; ++j) {
        if (is_kept[j]) {
            mu_m_a[j] = mu_a[j];
            lv_m_a[j] = lv_a[j];
            mu_m_b[j] = mu_b[j];
            lv_m_b[j] = lv_b[j];
        } else {
            const T mu_avg = (mu_a[j] + mu_b[j]) / T(2);
            const T var_avg = (std::exp(lv_a[j]) + std::exp(lv_b[j])) / T(2);
            const T lv_avg = std::log(var_avg);
            mu_m_a[j] = mu_avg;
            lv_m_a[j] = lv_avg;
            mu_m_b[j] = mu_avg;
            lv_m_b[j] = lv_avg;
        }
    }
}

// Backward of adavae_average: routes d(mu_m)/d(lv_m) of both elements back to
// the original posteriors. The kept index set is treated as fixed.
template <class T>
void adavae_average_bwd(const T* lv_a, const T* lv_b, const std::vector<int>& kept,
                        const T* d_mu_m_a, const T* d_lv_m_a, const T* d_mu_m_b, const T* d_lv_m_b,
                        T* d_mu_a, T* d_lv_a, T* d_mu_b, T* d_lv_b, int n) {
    std::vector<char> is_kept(n, 0);
    for (int j : kept) is_kept[j] = 1;
    for (int j = 0; j < n; ++j) {
        if (is_kept[j]) {
            d_mu_a[j] += d_mu_m_a[j];
            d_lv_a[j] += d_lv_m_a[j];
            d_mu_b[j] += d_mu_m_b[j];
            d_lv_b[j] += d_lv_m_b[j];
        } else {
            const T d_mu_avg = d_mu_m_a[j] + d_mu_m_b[j];
            const T d_lv_avg = d_lv_m_a[j] + d_lv_m_b[j];
            d_mu_a[j] += d_mu_avg / T(2);
            d_mu_b[j] += d_mu_avg / T(2);
            // lv_avg = log((e^lv_a + e^lv_b)/2);  d lv_avg / d lv_a = e^lv_a / (e^lv_a + e^lv_b)
            const T va = std::exp(lv_a[j]);
            const T vb = std::exp(lv_b[j]);
            d_lv_a[j] += d_lv_avg * va / (va + vb);
            d_lv_b[j] += d_lv_avg * vb / (va + vb);
        }
    }
}

// KL(N(mu, sigma^2) || N(0, I)) summed over dims: 1/2 sum(mu^2 + s^2 - lv - 1).
template <class T>
T gaussian_standard_kl(const T* mu, const T* lv, int n) {
    T acc = T(0);
    for (int j = 0; j < n; ++j) acc += mu[j] * mu[j] + std::exp(lv[j]) - lv[j] - T(1);
    return acc / T(2);
}

template <class T>
void gaussian_standard_kl_bwd(const T* mu, const T* lv, T* d_mu, T* d_lv, int n, T scale) {
    for (int j = 0; j < n; ++j) {
        d_mu[j] += scale * mu[j];
        d_lv[j] += scale * (std::exp(lv[j]) - T(1)) / T(2);
    }
}

// Reparameterization z = mu + exp(lv/2) * eps.
template <class T>
void reparameterize(const T* mu, const T* lv, const T* eps, T* z, int n) {
    for (int j = 0; j < n; ++j) z[j] = mu[j] + std::exp(lv[j] / T(2)) * eps[j];
}

template <class T>
void reparameterize_bwd(const T* lv, const T* eps, const T* d_z, T* d_mu, T* d_lv, int n) {
    for (int j = 0; j < n; ++j) {
        d_mu[j] += d_z[j];
        d_lv[j] += d_z[j] * eps[j] * std::exp(lv[j] / T(2)) / T(2);
    }
}

// KL(N(mu1, s1^2) || N(mu2, s2^2)) summed over dims, with gradients to both
// sides. Used by the optional latent alignment term during target adaptation.
template <class T>
T gaussian_kl_general(const T* mu1, const T* lv1, const T* mu2, const T* lv2, int n) {
    T acc = T(0);
    for (int j = 0; j < n; ++j) {
        const T v1 = std::exp(lv1[j]);
        const T v2 = std::exp(lv2[j]);
        const T dmu = mu1[j] - mu2[j];
        acc += (lv2[j] - lv1[j]) / T(2) + (v1 + dmu * dmu) / (T(2) * v2) - T(0.5);
    }
    return acc;
}

template <class T>
void gaussian_kl_general_bwd(const T* mu1, const T* lv1, const T* mu2, const T* lv2, T* d_mu1,
                             T* d_lv1, T* d_mu2, T* d_lv2, int n, T scale) {
    for (int j = 0; j < n; ++j) {
        const T v1 = std::exp(lv1[j]);
        const T v2 = std::exp(lv2[j]);
        const T dmu = mu1[j] - mu2[j];
        d_mu1[j] += scale * dmu / v2;
        d_mu2[j] -= scale * dmu / v2;
        d_lv1[j] += scale * (-T(0.5) + v1 / (T(2) * v2));
        d_lv2[j] += scale * (T(0.5) - (v1 + dmu * dmu) / (T(2) * v2));
    }
}

}  // namespace l3
