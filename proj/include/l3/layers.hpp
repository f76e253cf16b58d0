#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "l3/kernels.hpp"
#include "l3/params.hpp"

namespace l3 {

// Offset-based references into a ParameterStore's flat buffer. Resolved once
// at net construction so the hot path never does name lookups.
struct ConvRef {
    ConvShape shape{};
    std::size_t w = 0, b = 0;
    bool valid = false;
};

struct DeconvRef {
    DeconvShape shape{};
    std::size_t w = 0, b = 0;
    bool valid = false;
};

struct LinearRef {
    int in = 0, out = 0;
    std::size_t w = 0, b = 0;
    bool valid = false;
};

template <class T>
ConvRef resolve_conv(const ParameterStore<T>& store, const std::string& prefix, ConvShape shape) {
    ConvRef r;
    r.shape = shape;
    r.w = store.entry(prefix + ".weight").offset;
    r.b = store.entry(prefix + ".bias").offset;
    r.valid = true;
    return r;
}

template <class T>
DeconvRef resolve_deconv(const ParameterStore<T>& store, const std::string& prefix, DeconvShape shape) {
    DeconvRef r;
    r.shape = shape;
    r.w = store.entry(prefix + ".weight").offset;
    r.b = store.entry(prefix + ".bias").offset;
    r.valid = true;
    return r;
}

template <class T>
LinearRef resolve_linear(const ParameterStore<T>& store, const std::string& prefix, int in, int out) {
    LinearRef r;
    r.in = in;
    r.out = out;
    r.w = store.entry(prefix + ".weight").offset;
    r.b = store.entry(prefix + ".bias").offset;
    r.valid = true;
    return r;
}

// Registration helpers: weight init is fan-in-scaled uniform, biases zero.
inline void declare_conv(ArchitectureSpec& spec, const std::string& prefix, const ConvShape& s) {
    spec.weight(prefix + ".weight", {s.out_c, s.in_c, s.k, s.k}, s.in_c * s.k * s.k);
    spec.bias(prefix + ".bias", {s.out_c});
}

inline void declare_deconv(ArchitectureSpec& spec, const std::string& prefix, const DeconvShape& s) {
    spec.weight(prefix + ".weight", {s.in_c, s.out_c, s.k, s.k}, s.in_c * s.k * s.k);
    spec.bias(prefix + ".bias", {s.out_c});
}

inline void declare_linear(ArchitectureSpec& spec, const std::string& prefix, int in, int out) {
    spec.weight(prefix + ".weight", {out, in}, in);
    spec.bias(prefix + ".bias", {out});
}

// ---------------------------------------------------------------------------
// Single-head scaled dot-product attention over token matrices (n tokens of
// dimension d), with linear Q/K/V projectors and a residual term chosen by
// the caller. out_i = residual_i + sum_j softmax_j(<q_i,k_j>/sqrt(d)) v_j.
// ---------------------------------------------------------------------------

template <class T>
struct AttentionCache {
    std::vector<T> q, k, v;  // nq*d / nk*d / nk*d
    std::vector<T> attn;     // nq*nk, post softmax
    void resize(int nq, int nk, int d) {
        q.resize(std::size_t(nq) * d);
        k.resize(std::size_t(nk) * d);
        v.resize(std::size_t(nk) * d);
        attn.resize(std::size_t(nq) * nk);
    }
};

template <class T>
void attention_fwd(const T* params, const LinearRef& lq, const LinearRef& lk, const LinearRef& lv,
                   const T* q_tokens, const T* kv_tokens, const T* residual, T* out,
                   AttentionCache<T>& c, int nq, int nk, int d) {
    c.resize(nq, nk, d);
    for (int i = 0; i < nq; ++i)
        linear_fwd(q_tokens + std::size_t(i) * d, params + lq.w, params + lq.b,
                   c.q.data() + std::size_t(i) * d, d, d);
    for (int j = 0; j < nk; ++j) {
        linear_fwd(kv_tokens + std::size_t(j) * d, params + lk.w, params + lk.b,
                   c.k.data() + std::size_t(j) * d, d, d);
        linear_fwd(kv_tokens + std::size_t(j) * d, params + lv.w, params + lv.b,
                   c.v.data() + std::size_t(j) * d, d, d);
    }
    const T scale = T(1) / std::sqrt(static_cast<T>(d));
    std::vector<T> scores(std::size_t(nq) * nk);
    for (int i = 0; i < nq; ++i)
        for (int j = 0; j < nk; ++j) {
            T dot = T(0);
            const T* qi = c.q.data() + std::size_t(i) * d;
            const T* kj = c.k.data() + std::size_t(j) * d;
            for (int t = 0; t < d; ++t) dot += qi[t] * kj[t];
            scores[std::size_t(i) * nk + j] = dot * scale;
        }
    softmax_rows(scores.data(), c.attn.data(), nq, nk);
    for (int i = 0; i < nq; ++i) {
        T* oi = out + std::size_t(i) * d;
        const T* ri = residual + std::size_t(i) * d;
        for (int t = 0; t < d; ++t) oi[t] = ri[t];
        for (int j = 0; j < nk; ++j) {
            const T a = c.attn[std::size_t(i) * nk + j];
            const T* vj = c.v.data() + std::size_t(j) * d;
            for (int t = 0; t < d; ++t) oi[t] += a * vj[t];
        }
    }
}

// d_out feeds d_residual directly (residual add), plus the attention paths
// into d_q_tokens / d_kv_tokens and the projector gradients. All d_* output
// buffers are accumulated into. Pass grads == nullptr (or accumulate_params
// == false) to skip projector gradients, e.g. through frozen modules.
template <class T>
void attention_bwd(const T* params, const LinearRef& lq, const LinearRef& lk, const LinearRef& lv,
                   const T* q_tokens, const T* kv_tokens, const T* d_out, T* d_q_tokens,
                   T* d_kv_tokens, T* d_residual, const AttentionCache<T>& c, int nq, int nk, int d,
                   GradientSet<T>* grads, bool accumulate_params) {
    const T scale = T(1) / std::sqrt(static_cast<T>(d));
    std::vector<T> d_attn(std::size_t(nq) * nk, T(0));
    std::vector<T> d_scores(std::size_t(nq) * nk, T(0));
    std::vector<T> dq(std::size_t(nq) * d, T(0));
    std::vector<T> dk(std::size_t(nk) * d, T(0));
    std::vector<T> dv(std::size_t(nk) * d, T(0));

    for (int i = 0; i < nq; ++i) {
        const T* goi = d_out + std::size_t(i) * d;
        if (d_residual) {
            T* ri = d_residual + std::size_t(i) * d;
            for (int t = 0; t < d; ++t) ri[t] += goi[t];
        }
        for (int j = 0; j < nk; ++j) {
            const T* vj = c.v.data() + std::size_t(j) * d;
            T dot = T(0);
            for (int t = 0; t < d; ++t) dot += goi[t] * vj[t];
            d_attn[std::size_t(i) * nk + j] = dot;
            const T a = c.attn[std::size_t(i) * nk + j];
            T* dvj = dv.data() + std::size_t(j) * d;
            for (int t = 0; t < d; ++t) dvj[t] += a * goi[t];
        }
    }
    softmax_rows_bwd(c.attn.data(), d_attn.data(), d_scores.data(), nq, nk);
    for (int i = 0; i < nq; ++i)
        for (int j = 0; j < nk; ++j) {
            const T g = d_scores[std::size_t(i) * nk + j] * scale;
            const T* kj = c.k.data() + std::size_t(j) * d;
            const T* qi = c.q.data() + std::size_t(i) * d;
            T* dqi = dq.data() + std::size_t(i) * d;
            T* dkj = dk.data() + std::size_t(j) * d;
            for (int t = 0; t < d; ++t) {
                dqi[t] += g * kj[t];
                dkj[t] += g * qi[t];
            }
        }

    const bool acc = grads && accumulate_params;
    for (int i = 0; i < nq; ++i) {
        if (d_q_tokens) {
            std::vector<T> tmp(d, T(0));
            linear_bwd_input(dq.data() + std::size_t(i) * d, params + lq.w, tmp.data(), d, d);
            T* dst = d_q_tokens + std::size_t(i) * d;
            for (int t = 0; t < d; ++t) dst[t] += tmp[t];
        }
        if (acc)
            linear_bwd_params(q_tokens + std::size_t(i) * d, dq.data() + std::size_t(i) * d,
                              grads->flat.data() + lq.w, grads->flat.data() + lq.b, d, d);
    }
    std::vector<T> tmp(d);
    for (int j = 0; j < nk; ++j) {
        if (d_kv_tokens) {
            T* dst = d_kv_tokens + std::size_t(j) * d;
            linear_bwd_input(dk.data() + std::size_t(j) * d, params + lk.w, tmp.data(), d, d);
            for (int t = 0; t < d; ++t) dst[t] += tmp[t];
            linear_bwd_input(dv.data() + std::size_t(j) * d, params + lv.w, tmp.data(), d, d);
            for (int t = 0; t < d; ++t) dst[t] += tmp[t];
        }
        if (acc) {
            linear_bwd_params(kv_tokens + std::size_t(j) * d, dk.data() + std::size_t(j) * d,
                              grads->flat.data() + lk.w, grads->flat.data() + lk.b, d, d);
            linear_bwd_params(kv_tokens + std::size_t(j) * d, dv.data() + std::size_t(j) * d,
                              grads->flat.data() + lv.w, grads->flat.data() + lv.b, d, d);
        }
    }
}

// Canonical token ordering: tokens sorted by lexicographic content. The sort
// key depends only on the token multiset, so any permutation of the input
// yields the identical output sequence; downstream consumers become exactly
// permutation invariant.
template <class T>
void canonical_token_order(const T* tokens, int n, int d, std::vector<int>& perm) {
    perm.resize(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::stable_sort(perm.begin(), perm.end(), [&](int a, int b) {
        const T* ta = tokens + std::size_t(a) * d;
        const T* tb = tokens + std::size_t(b) * d;
        for (int t = 0; t < d; ++t) {
            if (ta[t] < tb[t]) return true;
            if (ta[t] > tb[t]) return false;
        }
        return false;
    });
}

template <class T>
void apply_token_order(const T* tokens, const std::vector<int>& perm, T* out, int d) {
    for (std::size_t i = 0; i < perm.size(); ++i)
        std::copy(tokens + std::size_t(perm[i]) * d, tokens + std::size_t(perm[i]) * d + d,
                  out + i * d);
}

template <class T>
void scatter_token_order_grad(const T* d_ordered, const std::vector<int>& perm, T* d_tokens, int d) {
    for (std::size_t i = 0; i < perm.size(); ++i) {
        const T* src = d_ordered + i * d;
        T* dst = d_tokens + std::size_t(perm[i]) * d;
        for (int t = 0; t < d; ++t) dst[t] += src[t];
    }
}

}  // namespace l3
