#pragma once

#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "l3/adavae.hpp"
#include "l3/layers.hpp"
#include "l3/params.hpp"
#include "l3/synth.hpp"

namespace l3 {

// ---------------------------------------------------------------------------
// Wiring and hyperparameters
// ---------------------------------------------------------------------------

enum class Variant { Full, NoMsf, NoMmcfConcat, RevMmcf, NoRawvis, NoAlignment, Baseline, Ut };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::NoMsf: return "no_msf";
        case Variant::NoMmcfConcat: return "no_mmcf_concat";
        case Variant::RevMmcf: return "rev_mmcf";
        case Variant::NoRawvis: return "no_rawvis";
        case Variant::NoAlignment: return "no_alignment";
        case Variant::Baseline: return "baseline";
        case Variant::Ut: return "ut";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& name) {
    for (Variant v : {Variant::Full, Variant::NoMsf, Variant::NoMmcfConcat, Variant::RevMmcf,
                      Variant::NoRawvis, Variant::NoAlignment, Variant::Baseline, Variant::Ut})
        if (name == variant_name(v)) return v;
    throw std::invalid_argument("unknown variant: " + name);
}

enum class FusionKind { CrossAttention, RevCrossAttention, ConcatFc, SymbolicOnly };

struct L3Wiring {
    bool use_msf = true;
    FusionKind fusion = FusionKind::CrossAttention;
    bool has_vis = true;  // false drops the visual pathway, MP and fusion entirely
};

inline L3Wiring wiring_for(Variant v) {
    switch (v) {
        case Variant::Full:
        case Variant::NoAlignment: return {true, FusionKind::CrossAttention, true};
        case Variant::NoMsf: return {false, FusionKind::CrossAttention, true};
        case Variant::NoMmcfConcat: return {true, FusionKind::ConcatFc, true};
        case Variant::RevMmcf: return {true, FusionKind::RevCrossAttention, true};
        case Variant::NoRawvis: return {true, FusionKind::SymbolicOnly, false};
        default: throw std::invalid_argument("variant has no L3 wiring");
    }
}

struct ModelDims {
    int mask_channels = 8;
    int feat_hw = 8;       // token spatial side; token_dim = feat_hw^2
    int z_dim = 10;
    int vae_hidden = 256;
    int mp_hidden = 512;
    int conv_width = 4;

    bool operator==(const ModelDims&) const = default;

    int token_dim() const { return feat_hw * feat_hw; }
    int a_size() const { return mask_channels * token_dim(); }
    void validate() const {
        if (feat_hw != 8) throw std::invalid_argument("feat_hw must be 8 (64->8 conv towers)");
        if (mask_channels < 1 || z_dim < 2 || conv_width < 2 || vae_hidden < 4 || mp_hidden < 4)
            throw std::invalid_argument("bad model dimensions");
    }
};

struct LossWeights {
    double look_seg = 1.0, look_vis = 1.0, look_mp = 1.0;
    double task = 1.0, cross_seg = 1.0, cross_vis = 1.0;
    double lev_align = 1.0, lev_rec = 1.0, lev_zkl = 1.0;

    bool operator==(const LossWeights&) const = default;
};

inline constexpr int kImg = synth::kImageSize;          // 64
inline constexpr int kImgHalf = synth::kImageSize / 2;  // 32

namespace detail {
template <class T>
inline void add_into(T* dst, const T* src, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}
template <class T>
inline void fill_zero(std::vector<T>& v) {
    std::fill(v.begin(), v.end(), T(0));
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Shared conv towers. Encoder: three pool/conv3x3 stages down to 8x8 plus a
// linear conv head. Decoder: conv3x3/upsample stages with a terminal sigmoid
// and a final 2x upsample to full resolution. Unit-stride 3x3 convolutions
// keep the inner loops contiguous.
// ---------------------------------------------------------------------------

template <class T>
struct EncCache {
    std::vector<T> pool0, h1, p1, h2, p2, h3, out;
    std::vector<T> g1, g2, g3, gp1, gp2;  // backward scratch
};

struct EncoderTower {
    ConvRef c1, c2, c3, c4;  // c1 @32, c2 @16, c3/c4 @8
    int in_c = 1;

    template <class T>
    void resize_cache(EncCache<T>& c) const {
        c.pool0.assign(std::size_t(in_c) * kImgHalf * kImgHalf, T(0));
        c.h1.assign(c1.shape.out_count(), T(0));
        c.p1.assign(c1.shape.out_count() / 4, T(0));
        c.h2.assign(c2.shape.out_count(), T(0));
        c.p2.assign(c2.shape.out_count() / 4, T(0));
        c.h3.assign(c3.shape.out_count(), T(0));
        c.out.assign(c4.shape.out_count(), T(0));
        c.g1.assign(c.h1.size(), T(0));
        c.g2.assign(c.h2.size(), T(0));
        c.g3.assign(c.h3.size(), T(0));
        c.gp1.assign(c.p1.size(), T(0));
        c.gp2.assign(c.p2.size(), T(0));
    }

    template <class T>
    void fwd(const T* params, const T* x, EncCache<T>& c) const {
        avgpool2_fwd(x, c.pool0.data(), in_c, kImg, kImg);
        conv2d_fwd(c.pool0.data(), params + c1.w, params + c1.b, c.h1.data(), c1.shape);
        tanh_fwd(c.h1.data(), c.h1.data(), c.h1.size());
        avgpool2_fwd(c.h1.data(), c.p1.data(), c1.shape.out_c, kImgHalf, kImgHalf);
        conv2d_fwd(c.p1.data(), params + c2.w, params + c2.b, c.h2.data(), c2.shape);
        tanh_fwd(c.h2.data(), c.h2.data(), c.h2.size());
        avgpool2_fwd(c.h2.data(), c.p2.data(), c2.shape.out_c, 16, 16);
        conv2d_fwd(c.p2.data(), params + c3.w, params + c3.b, c.h3.data(), c3.shape);
        tanh_fwd(c.h3.data(), c.h3.data(), c.h3.size());
        conv2d_fwd(c.h3.data(), params + c4.w, params + c4.b, c.out.data(), c4.shape);
    }

    // d_out -> parameter gradients; input gradients are not propagated (the
    // tower input is data).
    template <class T>
    void bwd(const T* params, const T* d_out, EncCache<T>& c, GradientSet<T>* g, bool acc) const {
        conv2d_bwd_input(d_out, params + c4.w, c.g3.data(), c4.shape);
        if (acc) conv2d_bwd_params(c.h3.data(), d_out, g->flat.data() + c4.w, g->flat.data() + c4.b, c4.shape);
        tanh_bwd(c.h3.data(), c.g3.data(), c.g3.data(), c.g3.size());
        conv2d_bwd_input(c.g3.data(), params + c3.w, c.gp2.data(), c3.shape);
        if (acc) conv2d_bwd_params(c.p2.data(), c.g3.data(), g->flat.data() + c3.w, g->flat.data() + c3.b, c3.shape);
        avgpool2_bwd(c.gp2.data(), c.g2.data(), c2.shape.out_c, 16, 16);
        tanh_bwd(c.h2.data(), c.g2.data(), c.g2.data(), c.g2.size());
        conv2d_bwd_input(c.g2.data(), params + c2.w, c.gp1.data(), c2.shape);
        if (acc) conv2d_bwd_params(c.p1.data(), c.g2.data(), g->flat.data() + c2.w, g->flat.data() + c2.b, c2.shape);
        avgpool2_bwd(c.gp1.data(), c.g1.data(), c1.shape.out_c, kImgHalf, kImgHalf);
        tanh_bwd(c.h1.data(), c.g1.data(), c.g1.data(), c.g1.size());
        if (acc) conv2d_bwd_params(c.pool0.data(), c.g1.data(), g->flat.data() + c1.w, g->flat.data() + c1.b, c1.shape);
    }
};

template <class T>
struct DecCache {
    std::vector<T> h1, u1, h2, u2, small, out;
    std::vector<T> g1, g2, gu1, gu2, gsmall, gin;
};

struct DecoderTower {
    ConvRef d1, d2, d3;  // d1 @8, d2 @16, d3 @32 (logits)

    template <class T>
    void resize_cache(DecCache<T>& c) const {
        c.h1.assign(d1.shape.out_count(), T(0));
        c.u1.assign(d1.shape.out_count() * 4, T(0));
        c.h2.assign(d2.shape.out_count(), T(0));
        c.u2.assign(d2.shape.out_count() * 4, T(0));
        c.small.assign(d3.shape.out_count(), T(0));
        c.out.assign(d3.shape.out_count() * 4, T(0));
        c.g1.assign(c.h1.size(), T(0));
        c.g2.assign(c.h2.size(), T(0));
        c.gu1.assign(c.u1.size(), T(0));
        c.gu2.assign(c.u2.size(), T(0));
        c.gsmall.assign(c.small.size(), T(0));
        c.gin.assign(d1.shape.in_count(), T(0));
    }

    template <class T>
    void fwd(const T* params, const T* in, DecCache<T>& c) const {
        conv2d_fwd(in, params + d1.w, params + d1.b, c.h1.data(), d1.shape);
        tanh_fwd(c.h1.data(), c.h1.data(), c.h1.size());
        upsample2_fwd(c.h1.data(), c.u1.data(), d1.shape.out_c, 8, 8);
        conv2d_fwd(c.u1.data(), params + d2.w, params + d2.b, c.h2.data(), d2.shape);
        tanh_fwd(c.h2.data(), c.h2.data(), c.h2.size());
        upsample2_fwd(c.h2.data(), c.u2.data(), d2.shape.out_c, 16, 16);
        conv2d_fwd(c.u2.data(), params + d3.w, params + d3.b, c.small.data(), d3.shape);
        sigmoid_fwd(c.small.data(), c.small.data(), c.small.size());
        upsample2_fwd(c.small.data(), c.out.data(), d3.shape.out_c, kImgHalf, kImgHalf);
    }

    // d_out (full resolution) -> accumulates into d_in.
    template <class T>
    void bwd(const T* params, const T* in, const T* d_out, DecCache<T>& c, T* d_in,
             GradientSet<T>* g, bool acc) const {
        upsample2_bwd(d_out, c.gsmall.data(), d3.shape.out_c, kImgHalf, kImgHalf);
        sigmoid_bwd(c.small.data(), c.gsmall.data(), c.gsmall.data(), c.gsmall.size());
        conv2d_bwd_input(c.gsmall.data(), params + d3.w, c.gu2.data(), d3.shape);
        if (acc) conv2d_bwd_params(c.u2.data(), c.gsmall.data(), g->flat.data() + d3.w, g->flat.data() + d3.b, d3.shape);
        upsample2_bwd(c.gu2.data(), c.g2.data(), d2.shape.out_c, 16, 16);
        tanh_bwd(c.h2.data(), c.g2.data(), c.g2.data(), c.g2.size());
        conv2d_bwd_input(c.g2.data(), params + d2.w, c.gu1.data(), d2.shape);
        if (acc) conv2d_bwd_params(c.u1.data(), c.g2.data(), g->flat.data() + d2.w, g->flat.data() + d2.b, d2.shape);
        upsample2_bwd(c.gu1.data(), c.g1.data(), d1.shape.out_c, 8, 8);
        tanh_bwd(c.h1.data(), c.g1.data(), c.g1.data(), c.g1.size());
        conv2d_bwd_input(c.g1.data(), params + d1.w, c.gin.data(), d1.shape);
        if (acc) conv2d_bwd_params(in, c.g1.data(), g->flat.data() + d1.w, g->flat.data() + d1.b, d1.shape);
        detail::add_into(d_in, c.gin.data(), c.gin.size());
    }
};

// ---------------------------------------------------------------------------
// Per-sample activations
// ---------------------------------------------------------------------------

template <class T>
struct SampleCache {
    // inputs (converted to T once)
    std::vector<T> x;          // 3*64*64
    std::vector<T> m;          // c*64*64
    std::vector<T> obj_union;  // 64*64, cross-reconstruction target (source only)

    // mask pathway
    std::vector<EncCache<T>> seg_enc;  // per channel
    std::vector<T> u;                  // c*d tokens
    AttentionCache<T> msf;
    std::vector<T> u_f;   // c*d
    std::vector<int> perm;
    std::vector<T> u_can;  // c*d canonical order
    std::vector<DecCache<T>> seg_dec;  // per channel, from u
    // visual pathway
    EncCache<T> vis_enc;
    std::vector<T> v;  // c*d
    DecCache<T> vis_dec;
    std::vector<T> mp_h1, mp_h2, u_hat;  // mp_hidden, mp_hidden, c*d
    // fusion
    AttentionCache<T> mmcf;
    std::vector<T> cat_in;   // 2*c*d (concat variant)
    std::vector<T> a;        // c*d
    // vae posterior
    std::vector<T> vae_h, mu, logvar;

    // gradient buffers (mirrors of the merge points)
    std::vector<T> d_u, d_u_f, d_u_can, d_v, d_a, d_mu, d_logvar, d_u_hat, scratch_token;
    std::vector<T> d_m_hat, d_x_hat, d_mp1, d_mp2, d_vh, d_cat;
};

// Per-pair task-and-cross activations.
template <class T>
struct PairTaskCache {
    std::vector<T> delta;                 // z
    std::vector<int> kept;                // k indices
    std::vector<T> mu_m[2], lv_m[2];      // modified posteriors
    std::vector<T> eps_eff[2];            // effective noise used per element
    std::vector<T> zhat[2];
    std::vector<T> dec_h[2], a_hat[2];    // vae decoder activations
    DecCache<T> xvis[2], xseg[2];

    std::vector<T> d_a_hat[2], d_zhat[2], d_mu_m[2], d_lv_m[2], d_dec_h[2];
};

template <class T>
struct PairWork {
    SampleCache<T> s[2];
    PairTaskCache<T> task;
};

template <class T>
struct PairElementInput {
    std::vector<T> x, m, obj_union;
};

template <class T>
struct PairInput {
    PairElementInput<T> e[2];
    std::vector<T> noise_shared, noise_a, noise_b;  // z_dim each, standard normal
};

struct PairLossTerms {
    double total = 0;
    double look_seg = 0, look_vis = 0, look_mp = 0;
    double task = 0, task_kl = 0;
    double cross_seg = 0, cross_vis = 0;
};

// Fixed targets / selections for gradient checking: the MP-loss target is a
// stop-gradient in the objective and the top-k index set is piecewise
// constant, so finite differences need both captured at the base point.
template <class T>
struct PairLossOverrides {
    const std::vector<T>* mp_target[2] = {nullptr, nullptr};
    const std::vector<int>* kept = nullptr;
};

template <class T>
struct LeverageWork {
    SampleCache<T> s;
    std::vector<T> align_out;  // 2*z_dim from the alignment head
    std::vector<T> d_align_out;
};

struct LeverageTerms {
    double total = 0, align = 0, rec = 0, zkl = 0;
};

struct LeverageFlags {
    bool alignment_term = true;  // MP-anchor feature alignment
    bool z_align_term = true;    // latent KL alignment head
};

// ---------------------------------------------------------------------------
// The L3 network: mask/visual encoders, attention fusion, MP predictor, VAE
// and cross decoders, with manual backward passes for each objective.
// ---------------------------------------------------------------------------

template <class T>
class L3Net {
public:
    L3Net(const ModelDims& dims, const L3Wiring& wiring, std::uint64_t init_seed)
        : dims_(dims), wiring_(wiring) {
        dims_.validate();
        ArchitectureSpec spec = architecture(dims_, wiring_);
        store_ = init_params<T>(spec, init_seed);
        resolve();
    }

    static ArchitectureSpec architecture(const ModelDims& dims, const L3Wiring& w) {
        ArchitectureSpec spec;
        const int cw = dims.conv_width;
        const int c = dims.mask_channels;
        const int d = dims.token_dim();
        declare_conv(spec, "look.seg_enc.conv1", ConvShape{1, kImgHalf, kImgHalf, cw, 3, 1, 1});
        declare_conv(spec, "look.seg_enc.conv2", ConvShape{cw, 16, 16, 2 * cw, 3, 1, 1});
        declare_conv(spec, "look.seg_enc.conv3", ConvShape{2 * cw, 8, 8, 2 * cw, 3, 1, 1});
        declare_conv(spec, "look.seg_enc.conv4", ConvShape{2 * cw, 8, 8, 1, 3, 1, 1});
        declare_conv(spec, "look.seg_dec.conv1", ConvShape{1, 8, 8, 2 * cw, 3, 1, 1});
        declare_conv(spec, "look.seg_dec.conv2", ConvShape{2 * cw, 16, 16, cw, 3, 1, 1});
        declare_conv(spec, "look.seg_dec.conv3", ConvShape{cw, kImgHalf, kImgHalf, 1, 3, 1, 1});
        if (w.use_msf) {
            declare_linear(spec, "look.msf.q", d, d);
            declare_linear(spec, "look.msf.k", d, d);
            declare_linear(spec, "look.msf.v", d, d);
        }
        if (w.has_vis) {
            declare_conv(spec, "look.vis_enc.conv1", ConvShape{3, kImgHalf, kImgHalf, cw + 2, 3, 1, 1});
            declare_conv(spec, "look.vis_enc.conv2", ConvShape{cw + 2, 16, 16, 2 * cw, 3, 1, 1});
            declare_conv(spec, "look.vis_enc.conv3", ConvShape{2 * cw, 8, 8, 2 * cw, 3, 1, 1});
            declare_conv(spec, "look.vis_enc.conv4", ConvShape{2 * cw, 8, 8, c, 3, 1, 1});
            declare_conv(spec, "look.vis_dec.conv1", ConvShape{c, 8, 8, 2 * cw, 3, 1, 1});
            declare_conv(spec, "look.vis_dec.conv2", ConvShape{2 * cw, 16, 16, cw + 2, 3, 1, 1});
            declare_conv(spec, "look.vis_dec.conv3", ConvShape{cw + 2, kImgHalf, kImgHalf, 3, 3, 1, 1});
            declare_linear(spec, "look.mp.fc1", dims.a_size(), dims.mp_hidden);
            declare_linear(spec, "look.mp.fc2", dims.mp_hidden, dims.mp_hidden);
            declare_linear(spec, "look.mp.fc3", dims.mp_hidden, dims.a_size());
            if (w.fusion == FusionKind::CrossAttention || w.fusion == FusionKind::RevCrossAttention) {
                declare_linear(spec, "look.mmcf.q", d, d);
                declare_linear(spec, "look.mmcf.k", d, d);
                declare_linear(spec, "look.mmcf.v", d, d);
            } else if (w.fusion == FusionKind::ConcatFc) {
                declare_linear(spec, "look.fuse_cat.fc", 2 * dims.a_size(), dims.a_size());
            }
        }
        declare_linear(spec, "learn.vae_enc.fc1", dims.a_size(), dims.vae_hidden);
        declare_linear(spec, "learn.vae_enc.mu", dims.vae_hidden, dims.z_dim);
        declare_linear(spec, "learn.vae_enc.logvar", dims.vae_hidden, dims.z_dim);
        declare_linear(spec, "learn.vae_dec.fc1", dims.z_dim, dims.vae_hidden);
        declare_linear(spec, "learn.vae_dec.fc2", dims.vae_hidden, dims.a_size());
        declare_conv(spec, "learn.xseg_dec.conv1", ConvShape{c, 8, 8, 2 * cw, 3, 1, 1});
        declare_conv(spec, "learn.xseg_dec.conv2", ConvShape{2 * cw, 16, 16, cw, 3, 1, 1});
        declare_conv(spec, "learn.xseg_dec.conv3", ConvShape{cw, kImgHalf, kImgHalf, 1, 3, 1, 1});
        if (w.has_vis) {
            declare_conv(spec, "learn.xvis_dec.conv1", ConvShape{c, 8, 8, 2 * cw, 3, 1, 1});
            declare_conv(spec, "learn.xvis_dec.conv2", ConvShape{2 * cw, 16, 16, cw + 2, 3, 1, 1});
            declare_conv(spec, "learn.xvis_dec.conv3", ConvShape{cw + 2, kImgHalf, kImgHalf, 3, 3, 1, 1});
        }
        return spec;
    }

    const ModelDims& dims() const { return dims_; }
    const L3Wiring& wiring() const { return wiring_; }
    ParameterStore<T>& params() { return store_; }
    const ParameterStore<T>& params() const { return store_; }

    bool has_align_head() const { return align_.valid; }

    // Fresh trainable linear head used by the latent alignment term during
    // target adaptation.
    void add_align_head(std::uint64_t seed) {
        if (align_.valid) return;
        store_.add("leverage.align.weight", {2 * dims_.z_dim, dims_.a_size()}, true);
        store_.add("leverage.align.bias", {2 * dims_.z_dim}, true);
        Rng rng(hash_combine(seed, fnv1a("leverage.align.weight")));
        auto wv = store_.view("leverage.align.weight");
        const double bound = 1.0 / std::sqrt(static_cast<double>(dims_.a_size()));
        for (auto& x : wv) x = static_cast<T>(rng.uniform(-bound, bound));
        resolve();
    }

    // Copies values (and align head, when present) from a loaded store.
    void load_from(const ParameterStore<float>& loaded) {
        if (loaded.has("leverage.align.weight") && !align_.valid) add_align_head(0);
        for (std::size_t i = 0; i < store_.entry_count(); ++i) {
            const auto& e = store_.entry(i);
            if (!loaded.has(e.name))
                throw std::runtime_error("checkpoint missing parameter " + e.name);
            const auto src = loaded.view(e.name);
            if (src.size() != e.size)
                throw std::runtime_error("checkpoint shape mismatch for " + e.name);
            auto dst = store_.view(e.name);
            for (std::size_t j = 0; j < e.size; ++j) dst[j] = static_cast<T>(src[j]);
        }
    }

    // ----- caches ---------------------------------------------------------

    void resize_cache(SampleCache<T>& c) const {
        const int cch = dims_.mask_channels;
        const int d = dims_.token_dim();
        c.x.assign(std::size_t(3) * kImg * kImg, T(0));
        c.m.assign(std::size_t(cch) * kImg * kImg, T(0));
        c.obj_union.assign(std::size_t(kImg) * kImg, T(0));
        c.seg_enc.resize(cch);
        for (auto& ec : c.seg_enc) seg_enc_.resize_cache(ec);
        c.u.assign(std::size_t(cch) * d, T(0));
        c.u_f.assign(std::size_t(cch) * d, T(0));
        c.u_can.assign(std::size_t(cch) * d, T(0));
        c.seg_dec.resize(cch);
        for (auto& dc : c.seg_dec) seg_dec_.resize_cache(dc);
        if (wiring_.has_vis) {
            vis_enc_.resize_cache(c.vis_enc);
            c.v.assign(std::size_t(cch) * d, T(0));
            vis_dec_.resize_cache(c.vis_dec);
            c.mp_h1.assign(dims_.mp_hidden, T(0));
            c.mp_h2.assign(dims_.mp_hidden, T(0));
            c.u_hat.assign(dims_.a_size(), T(0));
            if (wiring_.fusion == FusionKind::ConcatFc)
                c.cat_in.assign(std::size_t(2) * dims_.a_size(), T(0));
        }
        c.a.assign(dims_.a_size(), T(0));
        c.vae_h.assign(dims_.vae_hidden, T(0));
        c.mu.assign(dims_.z_dim, T(0));
        c.logvar.assign(dims_.z_dim, T(0));

        c.d_u.assign(std::size_t(cch) * d, T(0));
        c.d_u_f.assign(std::size_t(cch) * d, T(0));
        c.d_u_can.assign(std::size_t(cch) * d, T(0));
        c.d_v.assign(std::size_t(cch) * d, T(0));
        c.d_a.assign(dims_.a_size(), T(0));
        c.d_mu.assign(dims_.z_dim, T(0));
        c.d_logvar.assign(dims_.z_dim, T(0));
        c.d_u_hat.assign(dims_.a_size(), T(0));
        c.scratch_token.assign(std::size_t(cch) * d, T(0));
        c.d_m_hat.assign(std::size_t(cch) * kImg * kImg, T(0));
        c.d_x_hat.assign(std::size_t(3) * kImg * kImg, T(0));
        c.d_mp1.assign(dims_.mp_hidden, T(0));
        c.d_mp2.assign(dims_.mp_hidden, T(0));
        c.d_vh.assign(dims_.vae_hidden, T(0));
        c.d_cat.assign(std::size_t(2) * dims_.a_size(), T(0));
    }

    void resize_pair(PairWork<T>& w) const {
        resize_cache(w.s[0]);
        resize_cache(w.s[1]);
        auto& t = w.task;
        t.delta.assign(dims_.z_dim, T(0));
        for (int e = 0; e < 2; ++e) {
            t.mu_m[e].assign(dims_.z_dim, T(0));
            t.lv_m[e].assign(dims_.z_dim, T(0));
            t.eps_eff[e].assign(dims_.z_dim, T(0));
            t.zhat[e].assign(dims_.z_dim, T(0));
            t.dec_h[e].assign(dims_.vae_hidden, T(0));
            t.a_hat[e].assign(dims_.a_size(), T(0));
            if (wiring_.has_vis) xvis_dec_.resize_cache(t.xvis[e]);
            xseg_dec_.resize_cache(t.xseg[e]);
            t.d_a_hat[e].assign(dims_.a_size(), T(0));
            t.d_zhat[e].assign(dims_.z_dim, T(0));
            t.d_mu_m[e].assign(dims_.z_dim, T(0));
            t.d_lv_m[e].assign(dims_.z_dim, T(0));
            t.d_dec_h[e].assign(dims_.vae_hidden, T(0));
        }
    }

    void resize_leverage(LeverageWork<T>& w) const {
        resize_cache(w.s);
        w.align_out.assign(std::size_t(2) * dims_.z_dim, T(0));
        w.d_align_out.assign(std::size_t(2) * dims_.z_dim, T(0));
    }

    // ----- forward pieces ---------------------------------------------------

    enum class Scope { SourceTrain, Leverage, Inference };

    // Runs the Look phase and the VAE posterior for one sample whose inputs
    // are already in c.x / c.m.
    void sample_forward(SampleCache<T>& c, Scope scope) const {
        const T* P = store_.flat().data();
        const int cch = dims_.mask_channels;
        const int d = dims_.token_dim();
        // channel-wise mask encoder (shared weights)
        for (int ch = 0; ch < cch; ++ch) {
            seg_enc_.fwd(P, c.m.data() + std::size_t(ch) * kImg * kImg, c.seg_enc[ch]);
            std::copy(c.seg_enc[ch].out.begin(), c.seg_enc[ch].out.end(), c.u.begin() + std::size_t(ch) * d);
        }
        if (wiring_.use_msf) {
            attention_fwd(P, msf_q_, msf_k_, msf_v_, c.u.data(), c.u.data(), c.u.data(),
                          c.u_f.data(), c.msf, cch, cch, d);
        } else {
            std::copy(c.u.begin(), c.u.end(), c.u_f.begin());
        }
        canonical_token_order(c.u_f.data(), cch, d, c.perm);
        apply_token_order(c.u_f.data(), c.perm, c.u_can.data(), d);

        if (scope == Scope::SourceTrain) {
            for (int ch = 0; ch < cch; ++ch)
                seg_dec_.fwd(P, c.u.data() + std::size_t(ch) * d, c.seg_dec[ch]);
        }
        if (wiring_.has_vis) {
            vis_enc_.fwd(P, c.x.data(), c.vis_enc);
            std::copy(c.vis_enc.out.begin(), c.vis_enc.out.end(), c.v.begin());
            if (scope != Scope::Inference) {
                vis_dec_.fwd(P, c.v.data(), c.vis_dec);
                linear_fwd(c.v.data(), P + mp_fc1_.w, P + mp_fc1_.b, c.mp_h1.data(), mp_fc1_.in, mp_fc1_.out);
                tanh_fwd(c.mp_h1.data(), c.mp_h1.data(), c.mp_h1.size());
                linear_fwd(c.mp_h1.data(), P + mp_fc2_.w, P + mp_fc2_.b, c.mp_h2.data(), mp_fc2_.in, mp_fc2_.out);
                tanh_fwd(c.mp_h2.data(), c.mp_h2.data(), c.mp_h2.size());
                linear_fwd(c.mp_h2.data(), P + mp_fc3_.w, P + mp_fc3_.b, c.u_hat.data(), mp_fc3_.in, mp_fc3_.out);
            }
        }
        fusion_fwd(c);
        vae_encode_fwd(c);
    }

    void fusion_fwd(SampleCache<T>& c) const {
        const T* P = store_.flat().data();
        const int cch = dims_.mask_channels;
        const int d = dims_.token_dim();
        switch (wiring_.fusion) {
            case FusionKind::CrossAttention:
                attention_fwd(P, mmcf_q_, mmcf_k_, mmcf_v_, c.v.data(), c.u_can.data(),
                              c.u_can.data(), c.a.data(), c.mmcf, cch, cch, d);
                break;
            case FusionKind::RevCrossAttention:
                attention_fwd(P, mmcf_q_, mmcf_k_, mmcf_v_, c.u_can.data(), c.v.data(), c.v.data(),
                              c.a.data(), c.mmcf, cch, cch, d);
                break;
            case FusionKind::ConcatFc: {
                std::copy(c.v.begin(), c.v.end(), c.cat_in.begin());
                std::copy(c.u_can.begin(), c.u_can.end(), c.cat_in.begin() + dims_.a_size());
                linear_fwd(c.cat_in.data(), P + fuse_fc_.w, P + fuse_fc_.b, c.a.data(), fuse_fc_.in, fuse_fc_.out);
                tanh_fwd(c.a.data(), c.a.data(), c.a.size());
                break;
            }
            case FusionKind::SymbolicOnly:
                std::copy(c.u_can.begin(), c.u_can.end(), c.a.begin());
                break;
        }
    }

    void vae_encode_fwd(SampleCache<T>& c) const {
        const T* P = store_.flat().data();
        linear_fwd(c.a.data(), P + vae_fc1_.w, P + vae_fc1_.b, c.vae_h.data(), vae_fc1_.in, vae_fc1_.out);
        tanh_fwd(c.vae_h.data(), c.vae_h.data(), c.vae_h.size());
        linear_fwd(c.vae_h.data(), P + vae_mu_.w, P + vae_mu_.b, c.mu.data(), vae_mu_.in, vae_mu_.out);
        linear_fwd(c.vae_h.data(), P + vae_lv_.w, P + vae_lv_.b, c.logvar.data(), vae_lv_.in, vae_lv_.out);
    }

    void vae_decode_fwd(const T* z, std::vector<T>& dec_h, std::vector<T>& a_hat) const {
        const T* P = store_.flat().data();
        linear_fwd(z, P + vdec_fc1_.w, P + vdec_fc1_.b, dec_h.data(), vdec_fc1_.in, vdec_fc1_.out);
        tanh_fwd(dec_h.data(), dec_h.data(), dec_h.size());
        linear_fwd(dec_h.data(), P + vdec_fc2_.w, P + vdec_fc2_.b, a_hat.data(), vdec_fc2_.in, vdec_fc2_.out);
    }

    // ----- full pair objective (source-train) -------------------------------

    PairLossTerms pair_loss_forward(const PairInput<T>& in, PairWork<T>& w, const LossWeights& lw,
                                    double beta_kl, int k,
                                    const PairLossOverrides<T>* ov = nullptr) const {
        const int z = dims_.z_dim;
        const int an = dims_.a_size();
        for (int e = 0; e < 2; ++e) {
            auto& c = w.s[e];
            c.x = in.e[e].x;
            c.m = in.e[e].m;
            c.obj_union = in.e[e].obj_union;
            sample_forward(c, Scope::SourceTrain);
        }
        auto& t = w.task;
        gaussian_kl_per_dim(w.s[0].mu.data(), w.s[0].logvar.data(), w.s[1].mu.data(),
                            w.s[1].logvar.data(), t.delta.data(), z);
        t.kept = (ov && ov->kept) ? *ov->kept : top_k_divergent(t.delta.data(), z, k);
        adavae_average(w.s[0].mu.data(), w.s[0].logvar.data(), w.s[1].mu.data(), w.s[1].logvar.data(),
                       t.kept, t.mu_m[0].data(), t.lv_m[0].data(), t.mu_m[1].data(), t.lv_m[1].data(), z);
        std::vector<char> is_kept(z, 0);
        for (int j : t.kept) is_kept[j] = 1;
        PairLossTerms terms;
        for (int e = 0; e < 2; ++e) {
            for (int j = 0; j < z; ++j)
                t.eps_eff[e][j] = is_kept[j] ? (e == 0 ? in.noise_a[j] : in.noise_b[j]) : in.noise_shared[j];
            reparameterize(t.mu_m[e].data(), t.lv_m[e].data(), t.eps_eff[e].data(), t.zhat[e].data(), z);
            vae_decode_fwd(t.zhat[e].data(), t.dec_h[e], t.a_hat[e]);
            const double recon = mse(t.a_hat[e].data(), w.s[e].a.data(), std::size_t(an));
            const double kl = gaussian_standard_kl(t.mu_m[e].data(), t.lv_m[e].data(), z);
            terms.task += recon + beta_kl * kl;
            terms.task_kl += kl;
            // cross reconstructions from the task output feature
            const T* P = store_.flat().data();
            (void)P;
            xseg_dec_.fwd(store_.flat().data(), t.a_hat[e].data(), t.xseg[e]);
            terms.cross_seg += mse(t.xseg[e].out.data(), w.s[e].obj_union.data(), t.xseg[e].out.size());
            if (wiring_.has_vis) {
                xvis_dec_.fwd(store_.flat().data(), t.a_hat[e].data(), t.xvis[e]);
                terms.cross_vis += mse(t.xvis[e].out.data(), w.s[e].x.data(), t.xvis[e].out.size());
            }
        }
        for (int e = 0; e < 2; ++e) {
            auto& c = w.s[e];
            double seg = 0;
            for (int ch = 0; ch < dims_.mask_channels; ++ch)
                seg += mse(c.seg_dec[ch].out.data(), c.m.data() + std::size_t(ch) * kImg * kImg,
                           std::size_t(kImg) * kImg);
            terms.look_seg += seg / dims_.mask_channels;  // mean over the full stack
            if (wiring_.has_vis) {
                terms.look_vis += mse(c.vis_dec.out.data(), c.x.data(), c.vis_dec.out.size());
                const T* target = (ov && ov->mp_target[e]) ? ov->mp_target[e]->data() : c.u_can.data();
                terms.look_mp += mse(c.u_hat.data(), target, std::size_t(an));
            }
        }
        terms.total = lw.look_seg * terms.look_seg + lw.look_vis * terms.look_vis +
                      lw.look_mp * terms.look_mp + lw.task * terms.task +
                      lw.cross_seg * terms.cross_seg + lw.cross_vis * terms.cross_vis;
        return terms;
    }

    void pair_loss_backward(const PairInput<T>& in, PairWork<T>& w, const LossWeights& lw,
                            double beta_kl, GradientSet<T>& grads, bool adapt_subset = false,
                            const PairLossOverrides<T>* ov = nullptr) const {
        const int z = dims_.z_dim;
        const int an = dims_.a_size();
        const int cch = dims_.mask_channels;
        auto& t = w.task;
        for (int e = 0; e < 2; ++e) {
            auto& c = w.s[e];
            detail::fill_zero(c.d_u);
            detail::fill_zero(c.d_u_f);
            detail::fill_zero(c.d_u_can);
            detail::fill_zero(c.d_v);
            detail::fill_zero(c.d_a);
            detail::fill_zero(c.d_mu);
            detail::fill_zero(c.d_logvar);
            detail::fill_zero(c.d_u_hat);
            detail::fill_zero(t.d_a_hat[e]);
            detail::fill_zero(t.d_zhat[e]);
            detail::fill_zero(t.d_mu_m[e]);
            detail::fill_zero(t.d_lv_m[e]);
        }
        const T* P = store_.flat().data();
        const bool acc_all = !adapt_subset;

        for (int e = 0; e < 2; ++e) {
            auto& c = w.s[e];
            // cross decoders
            detail::fill_zero(c.d_m_hat);  // reuse as xseg d_out scratch (same size per channel)
            std::vector<T>& dmt = c.d_m_hat;
            std::fill(dmt.begin(), dmt.begin() + std::size_t(kImg) * kImg, T(0));
            mse_bwd(t.xseg[e].out.data(), c.obj_union.data(), dmt.data(), std::size_t(kImg) * kImg,
                    static_cast<T>(lw.cross_seg));
            xseg_dec_.bwd(P, t.a_hat[e].data(), dmt.data(), t.xseg[e], t.d_a_hat[e].data(), &grads, acc_all);
            if (wiring_.has_vis) {
                detail::fill_zero(c.d_x_hat);
                mse_bwd(t.xvis[e].out.data(), c.x.data(), c.d_x_hat.data(), c.d_x_hat.size(),
                        static_cast<T>(lw.cross_vis));
                xvis_dec_.bwd(P, t.a_hat[e].data(), c.d_x_hat.data(), t.xvis[e], t.d_a_hat[e].data(), &grads, acc_all);
            }
            // task reconstruction: gradient to prediction and to the target feature
            mse_bwd(t.a_hat[e].data(), w.s[e].a.data(), t.d_a_hat[e].data(), std::size_t(an),
                    static_cast<T>(lw.task));
            {
                const T cc = static_cast<T>(lw.task) * T(2) / static_cast<T>(an);
                for (int i = 0; i < an; ++i)
                    c.d_a[i] -= cc * (t.a_hat[e][i] - w.s[e].a[i]);
            }
            // decoder backward
            detail::fill_zero(t.d_dec_h[e]);
            linear_bwd_input(t.d_a_hat[e].data(), P + vdec_fc2_.w, t.d_dec_h[e].data(), vdec_fc2_.in, vdec_fc2_.out);
            if (acc_all)
                linear_bwd_params(t.dec_h[e].data(), t.d_a_hat[e].data(), grads.flat.data() + vdec_fc2_.w,
                                  grads.flat.data() + vdec_fc2_.b, vdec_fc2_.in, vdec_fc2_.out);
            tanh_bwd(t.dec_h[e].data(), t.d_dec_h[e].data(), t.d_dec_h[e].data(), t.d_dec_h[e].size());
            linear_bwd_input(t.d_dec_h[e].data(), P + vdec_fc1_.w, t.d_zhat[e].data(), vdec_fc1_.in, vdec_fc1_.out);
            if (acc_all)
                linear_bwd_params(t.zhat[e].data(), t.d_dec_h[e].data(), grads.flat.data() + vdec_fc1_.w,
                                  grads.flat.data() + vdec_fc1_.b, vdec_fc1_.in, vdec_fc1_.out);
            // reparameterization + KL on the modified posterior
            reparameterize_bwd(t.lv_m[e].data(), t.eps_eff[e].data(), t.d_zhat[e].data(),
                               t.d_mu_m[e].data(), t.d_lv_m[e].data(), z);
            gaussian_standard_kl_bwd(t.mu_m[e].data(), t.lv_m[e].data(), t.d_mu_m[e].data(),
                                     t.d_lv_m[e].data(), z, static_cast<T>(lw.task * beta_kl));
        }
        adavae_average_bwd(w.s[0].logvar.data(), w.s[1].logvar.data(), t.kept, t.d_mu_m[0].data(),
                           t.d_lv_m[0].data(), t.d_mu_m[1].data(), t.d_lv_m[1].data(),
                           w.s[0].d_mu.data(), w.s[0].d_logvar.data(), w.s[1].d_mu.data(),
                           w.s[1].d_logvar.data(), z);

        for (int e = 0; e < 2; ++e) {
            auto& c = w.s[e];
            // posterior -> a
            vae_encode_bwd(c, grads, acc_all);
            // look losses
            if (wiring_.has_vis) {
                const T* target = (ov && ov->mp_target[e]) ? ov->mp_target[e]->data() : c.u_can.data();
                mse_bwd(c.u_hat.data(), target, c.d_u_hat.data(), std::size_t(an),
                        static_cast<T>(lw.look_mp));  // stop-gradient: target side untouched
                detail::fill_zero(c.d_x_hat);
                mse_bwd(c.vis_dec.out.data(), c.x.data(), c.d_x_hat.data(), c.d_x_hat.size(),
                        static_cast<T>(lw.look_vis));
            }
            {
                const T cc = static_cast<T>(lw.look_seg) * T(2) /
                             static_cast<T>(std::size_t(cch) * kImg * kImg);
                for (std::size_t i = 0; i < c.d_m_hat.size(); ++i) {
                    // per-channel decoder outputs gathered below; fill the stacked grad
                    const int ch = static_cast<int>(i / (std::size_t(kImg) * kImg));
                    const std::size_t off = i % (std::size_t(kImg) * kImg);
                    c.d_m_hat[i] = cc * (c.seg_dec[ch].out[off] - c.m[i]);
                }
            }
            sample_backward(c, grads, acc_all, /*include_decoders=*/true, adapt_subset);
        }
    }

    // Shared tail of the backward pass: fusion -> MP -> visual encoder ->
    // canonical order -> MSF -> mask decoders -> mask encoder. Expects the
    // d_a / d_u_hat / d_x_hat / d_m_hat buffers to be filled.
    void sample_backward(SampleCache<T>& c, GradientSet<T>& grads, bool acc_frozen,
                         bool include_decoders, bool adapt_subset) const {
        const T* P = store_.flat().data();
        const int cch = dims_.mask_channels;
        const int d = dims_.token_dim();
        const bool acc_vis = true;  // vis_enc/vis_dec are trainable in every stage that reaches here
        switch (wiring_.fusion) {
            case FusionKind::CrossAttention:
                attention_bwd(P, mmcf_q_, mmcf_k_, mmcf_v_, c.v.data(), c.u_can.data(), c.d_a.data(),
                              c.d_v.data(), c.d_u_can.data(), c.d_u_can.data(), c.mmcf, cch, cch, d,
                              &grads, acc_frozen);
                break;
            case FusionKind::RevCrossAttention:
                attention_bwd(P, mmcf_q_, mmcf_k_, mmcf_v_, c.u_can.data(), c.v.data(), c.d_a.data(),
                              c.d_u_can.data(), c.d_v.data(), c.d_v.data(), c.mmcf, cch, cch, d,
                              &grads, acc_frozen);
                break;
            case FusionKind::ConcatFc: {
                std::vector<T>& dpre = c.scratch_token;  // reuse: size a_size fits in c*d
                std::vector<T> dpre_full(std::size_t(fuse_fc_.out), T(0));
                for (int i = 0; i < fuse_fc_.out; ++i) dpre_full[i] = c.d_a[i];
                tanh_bwd(c.a.data(), dpre_full.data(), dpre_full.data(), dpre_full.size());
                detail::fill_zero(c.d_cat);
                linear_bwd_input(dpre_full.data(), P + fuse_fc_.w, c.d_cat.data(), fuse_fc_.in, fuse_fc_.out);
                if (acc_frozen)
                    linear_bwd_params(c.cat_in.data(), dpre_full.data(), grads.flat.data() + fuse_fc_.w,
                                      grads.flat.data() + fuse_fc_.b, fuse_fc_.in, fuse_fc_.out);
                detail::add_into(c.d_v.data(), c.d_cat.data(), std::size_t(dims_.a_size()));
                detail::add_into(c.d_u_can.data(), c.d_cat.data() + dims_.a_size(), std::size_t(dims_.a_size()));
                (void)dpre;
                break;
            }
            case FusionKind::SymbolicOnly:
                detail::add_into(c.d_u_can.data(), c.d_a.data(), std::size_t(dims_.a_size()));
                break;
        }
        if (wiring_.has_vis) {
            // MP backward (params frozen in adapt mode, but the input path always flows)
            detail::fill_zero(c.d_mp2);
            linear_bwd_input(c.d_u_hat.data(), P + mp_fc3_.w, c.d_mp2.data(), mp_fc3_.in, mp_fc3_.out);
            if (acc_frozen)
                linear_bwd_params(c.mp_h2.data(), c.d_u_hat.data(), grads.flat.data() + mp_fc3_.w,
                                  grads.flat.data() + mp_fc3_.b, mp_fc3_.in, mp_fc3_.out);
            tanh_bwd(c.mp_h2.data(), c.d_mp2.data(), c.d_mp2.data(), c.d_mp2.size());
            detail::fill_zero(c.d_mp1);
            linear_bwd_input(c.d_mp2.data(), P + mp_fc2_.w, c.d_mp1.data(), mp_fc2_.in, mp_fc2_.out);
            if (acc_frozen)
                linear_bwd_params(c.mp_h1.data(), c.d_mp2.data(), grads.flat.data() + mp_fc2_.w,
                                  grads.flat.data() + mp_fc2_.b, mp_fc2_.in, mp_fc2_.out);
            tanh_bwd(c.mp_h1.data(), c.d_mp1.data(), c.d_mp1.data(), c.d_mp1.size());
            detail::fill_zero(c.scratch_token);
            linear_bwd_input(c.d_mp1.data(), P + mp_fc1_.w, c.scratch_token.data(), mp_fc1_.in, mp_fc1_.out);
            detail::add_into(c.d_v.data(), c.scratch_token.data(), std::size_t(dims_.a_size()));
            if (acc_frozen)
                linear_bwd_params(c.v.data(), c.d_mp1.data(), grads.flat.data() + mp_fc1_.w,
                                  grads.flat.data() + mp_fc1_.b, mp_fc1_.in, mp_fc1_.out);
            // visual decoder from the reconstruction loss
            vis_dec_.bwd(P, c.v.data(), c.d_x_hat.data(), c.vis_dec, c.d_v.data(), &grads, acc_vis);
            // visual encoder
            vis_enc_.bwd(P, c.d_v.data(), c.vis_enc, &grads, acc_vis);
        }
        if (adapt_subset) return;  // mask pathway is frozen and carries no trainable gradient

        scatter_token_order_grad(c.d_u_can.data(), c.perm, c.d_u_f.data(), d);
        if (wiring_.use_msf) {
            attention_bwd(P, msf_q_, msf_k_, msf_v_, c.u.data(), c.u.data(), c.d_u_f.data(),
                          c.d_u.data(), c.d_u.data(), c.d_u.data(), c.msf, cch, cch, d, &grads,
                          acc_frozen);
        } else {
            detail::add_into(c.d_u.data(), c.d_u_f.data(), c.d_u.size());
        }
        if (include_decoders) {
            for (int ch = 0; ch < cch; ++ch)
                seg_dec_.bwd(P, c.u.data() + std::size_t(ch) * d,
                             c.d_m_hat.data() + std::size_t(ch) * kImg * kImg, c.seg_dec[ch],
                             c.d_u.data() + std::size_t(ch) * d, &grads, acc_frozen);
        }
        for (int ch = 0; ch < cch; ++ch)
            seg_enc_.bwd(P, c.d_u.data() + std::size_t(ch) * d, c.seg_enc[ch], &grads, acc_frozen);
    }

    void vae_encode_bwd(SampleCache<T>& c, GradientSet<T>& grads, bool acc) const {
        const T* P = store_.flat().data();
        detail::fill_zero(c.d_vh);
        linear_bwd_input(c.d_mu.data(), P + vae_mu_.w, c.d_vh.data(), vae_mu_.in, vae_mu_.out);
        if (acc)
            linear_bwd_params(c.vae_h.data(), c.d_mu.data(), grads.flat.data() + vae_mu_.w,
                              grads.flat.data() + vae_mu_.b, vae_mu_.in, vae_mu_.out);
        {
            std::vector<T> tmp(dims_.vae_hidden, T(0));
            linear_bwd_input(c.d_logvar.data(), P + vae_lv_.w, tmp.data(), vae_lv_.in, vae_lv_.out);
            detail::add_into(c.d_vh.data(), tmp.data(), tmp.size());
        }
        if (acc)
            linear_bwd_params(c.vae_h.data(), c.d_logvar.data(), grads.flat.data() + vae_lv_.w,
                              grads.flat.data() + vae_lv_.b, vae_lv_.in, vae_lv_.out);
        tanh_bwd(c.vae_h.data(), c.d_vh.data(), c.d_vh.data(), c.d_vh.size());
        {
            std::vector<T> tmp(dims_.a_size(), T(0));
            linear_bwd_input(c.d_vh.data(), P + vae_fc1_.w, tmp.data(), vae_fc1_.in, vae_fc1_.out);
            detail::add_into(c.d_a.data(), tmp.data(), tmp.size());
        }
        if (acc)
            linear_bwd_params(c.a.data(), c.d_vh.data(), grads.flat.data() + vae_fc1_.w,
                              grads.flat.data() + vae_fc1_.b, vae_fc1_.in, vae_fc1_.out);
    }

    // ----- target-adapt objective -------------------------------------------

    LeverageTerms leverage_forward(const std::vector<T>& x, const std::vector<T>& m,
                                   LeverageWork<T>& w, const LossWeights& lw,
                                   const LeverageFlags& flags) const {
        if (!wiring_.has_vis)
            throw std::logic_error("target adaptation requires the visual pathway");
        auto& c = w.s;
        c.x = x;
        c.m = m;
        sample_forward(c, Scope::Leverage);
        LeverageTerms terms;
        if (flags.alignment_term)
            terms.align = mse(c.u_hat.data(), c.u_can.data(), std::size_t(dims_.a_size()));
        terms.rec = mse(c.vis_dec.out.data(), c.x.data(), c.vis_dec.out.size());
        if (flags.z_align_term) {
            if (!align_.valid) throw std::logic_error("alignment head not initialised");
            const T* P = store_.flat().data();
            linear_fwd(c.v.data(), P + align_.w, P + align_.b, w.align_out.data(), align_.in, align_.out);
            terms.zkl = gaussian_kl_general(w.align_out.data(), w.align_out.data() + dims_.z_dim,
                                            c.mu.data(), c.logvar.data(), dims_.z_dim);
        }
        terms.total = lw.lev_align * terms.align + lw.lev_rec * terms.rec + lw.lev_zkl * terms.zkl;
        return terms;
    }

    void leverage_backward(LeverageWork<T>& w, const LossWeights& lw, const LeverageFlags& flags,
                           GradientSet<T>& grads) const {
        auto& c = w.s;
        const T* P = store_.flat().data();
        detail::fill_zero(c.d_v);
        detail::fill_zero(c.d_a);
        detail::fill_zero(c.d_mu);
        detail::fill_zero(c.d_logvar);
        detail::fill_zero(c.d_u_hat);
        detail::fill_zero(c.d_u_can);
        detail::fill_zero(c.d_x_hat);
        detail::fill_zero(w.d_align_out);

        if (flags.alignment_term)
            mse_bwd(c.u_hat.data(), c.u_can.data(), c.d_u_hat.data(), std::size_t(dims_.a_size()),
                    static_cast<T>(lw.lev_align));  // target runs through frozen modules only
        mse_bwd(c.vis_dec.out.data(), c.x.data(), c.d_x_hat.data(), c.d_x_hat.size(),
                static_cast<T>(lw.lev_rec));
        if (flags.z_align_term) {
            gaussian_kl_general_bwd(w.align_out.data(), w.align_out.data() + dims_.z_dim, c.mu.data(),
                                    c.logvar.data(), w.d_align_out.data(),
                                    w.d_align_out.data() + dims_.z_dim, c.d_mu.data(),
                                    c.d_logvar.data(), dims_.z_dim, static_cast<T>(lw.lev_zkl));
            std::vector<T> tmp(dims_.a_size(), T(0));
            linear_bwd_input(w.d_align_out.data(), P + align_.w, tmp.data(), align_.in, align_.out);
            detail::add_into(c.d_v.data(), tmp.data(), tmp.size());
            linear_bwd_params(c.v.data(), w.d_align_out.data(), grads.flat.data() + align_.w,
                              grads.flat.data() + align_.b, align_.in, align_.out);
            // posterior gradient flows back into v through the frozen VAE/fusion
            vae_encode_bwd(c, grads, /*acc=*/false);
        }
        sample_backward(c, grads, /*acc_frozen=*/false, /*include_decoders=*/false,
                        /*adapt_subset=*/true);
    }

    // ----- inference --------------------------------------------------------

    // Posterior mean; deterministic, no sampling, no decoders.
    std::vector<T> infer_z(const synth::Sample& sample, SampleCache<T>& c) const {
        load_inputs(sample.image, sample.masks, c);
        sample_forward(c, Scope::Inference);
        return std::vector<T>(c.mu.begin(), c.mu.end());
    }

    void load_inputs(const Tensor<float>& image, const Tensor<std::uint8_t>& masks,
                     SampleCache<T>& c) const {
        for (std::size_t i = 0; i < c.x.size(); ++i) c.x[i] = static_cast<T>(image[i]);
        for (std::size_t i = 0; i < c.m.size(); ++i) c.m[i] = static_cast<T>(masks[i]);
    }

private:
    void resolve() {
        const int cw = dims_.conv_width;
        const int c = dims_.mask_channels;
        const int d = dims_.token_dim();
        seg_enc_.in_c = 1;
        seg_enc_.c1 = resolve_conv(store_, "look.seg_enc.conv1", ConvShape{1, kImgHalf, kImgHalf, cw, 3, 1, 1});
        seg_enc_.c2 = resolve_conv(store_, "look.seg_enc.conv2", ConvShape{cw, 16, 16, 2 * cw, 3, 1, 1});
        seg_enc_.c3 = resolve_conv(store_, "look.seg_enc.conv3", ConvShape{2 * cw, 8, 8, 2 * cw, 3, 1, 1});
        seg_enc_.c4 = resolve_conv(store_, "look.seg_enc.conv4", ConvShape{2 * cw, 8, 8, 1, 3, 1, 1});
        seg_dec_.d1 = resolve_conv(store_, "look.seg_dec.conv1", ConvShape{1, 8, 8, 2 * cw, 3, 1, 1});
        seg_dec_.d2 = resolve_conv(store_, "look.seg_dec.conv2", ConvShape{2 * cw, 16, 16, cw, 3, 1, 1});
        seg_dec_.d3 = resolve_conv(store_, "look.seg_dec.conv3", ConvShape{cw, kImgHalf, kImgHalf, 1, 3, 1, 1});
        if (wiring_.use_msf) {
            msf_q_ = resolve_linear(store_, "look.msf.q", d, d);
            msf_k_ = resolve_linear(store_, "look.msf.k", d, d);
            msf_v_ = resolve_linear(store_, "look.msf.v", d, d);
        }
        if (wiring_.has_vis) {
            vis_enc_.in_c = 3;
            vis_enc_.c1 = resolve_conv(store_, "look.vis_enc.conv1", ConvShape{3, kImgHalf, kImgHalf, cw + 2, 3, 1, 1});
            vis_enc_.c2 = resolve_conv(store_, "look.vis_enc.conv2", ConvShape{cw + 2, 16, 16, 2 * cw, 3, 1, 1});
            vis_enc_.c3 = resolve_conv(store_, "look.vis_enc.conv3", ConvShape{2 * cw, 8, 8, 2 * cw, 3, 1, 1});
            vis_enc_.c4 = resolve_conv(store_, "look.vis_enc.conv4", ConvShape{2 * cw, 8, 8, c, 3, 1, 1});
            vis_dec_.d1 = resolve_conv(store_, "look.vis_dec.conv1", ConvShape{c, 8, 8, 2 * cw, 3, 1, 1});
            vis_dec_.d2 = resolve_conv(store_, "look.vis_dec.conv2", ConvShape{2 * cw, 16, 16, cw + 2, 3, 1, 1});
            vis_dec_.d3 = resolve_conv(store_, "look.vis_dec.conv3", ConvShape{cw + 2, kImgHalf, kImgHalf, 3, 3, 1, 1});
            mp_fc1_ = resolve_linear(store_, "look.mp.fc1", dims_.a_size(), dims_.mp_hidden);
            mp_fc2_ = resolve_linear(store_, "look.mp.fc2", dims_.mp_hidden, dims_.mp_hidden);
            mp_fc3_ = resolve_linear(store_, "look.mp.fc3", dims_.mp_hidden, dims_.a_size());
            if (wiring_.fusion == FusionKind::CrossAttention ||
                wiring_.fusion == FusionKind::RevCrossAttention) {
                mmcf_q_ = resolve_linear(store_, "look.mmcf.q", d, d);
                mmcf_k_ = resolve_linear(store_, "look.mmcf.k", d, d);
                mmcf_v_ = resolve_linear(store_, "look.mmcf.v", d, d);
            } else if (wiring_.fusion == FusionKind::ConcatFc) {
                fuse_fc_ = resolve_linear(store_, "look.fuse_cat.fc", 2 * dims_.a_size(), dims_.a_size());
            }
        }
        vae_fc1_ = resolve_linear(store_, "learn.vae_enc.fc1", dims_.a_size(), dims_.vae_hidden);
        vae_mu_ = resolve_linear(store_, "learn.vae_enc.mu", dims_.vae_hidden, dims_.z_dim);
        vae_lv_ = resolve_linear(store_, "learn.vae_enc.logvar", dims_.vae_hidden, dims_.z_dim);
        vdec_fc1_ = resolve_linear(store_, "learn.vae_dec.fc1", dims_.z_dim, dims_.vae_hidden);
        vdec_fc2_ = resolve_linear(store_, "learn.vae_dec.fc2", dims_.vae_hidden, dims_.a_size());
        xseg_dec_.d1 = resolve_conv(store_, "learn.xseg_dec.conv1", ConvShape{c, 8, 8, 2 * cw, 3, 1, 1});
        xseg_dec_.d2 = resolve_conv(store_, "learn.xseg_dec.conv2", ConvShape{2 * cw, 16, 16, cw, 3, 1, 1});
        xseg_dec_.d3 = resolve_conv(store_, "learn.xseg_dec.conv3", ConvShape{cw, kImgHalf, kImgHalf, 1, 3, 1, 1});
        if (wiring_.has_vis) {
            xvis_dec_.d1 = resolve_conv(store_, "learn.xvis_dec.conv1", ConvShape{c, 8, 8, 2 * cw, 3, 1, 1});
            xvis_dec_.d2 = resolve_conv(store_, "learn.xvis_dec.conv2", ConvShape{2 * cw, 16, 16, cw + 2, 3, 1, 1});
            xvis_dec_.d3 = resolve_conv(store_, "learn.xvis_dec.conv3", ConvShape{cw + 2, kImgHalf, kImgHalf, 3, 3, 1, 1});
        }
        if (store_.has("leverage.align.weight"))
            align_ = resolve_linear(store_, "leverage.align", dims_.a_size(), 2 * dims_.z_dim);
    }

    ModelDims dims_;
    L3Wiring wiring_;
    ParameterStore<T> store_;

    EncoderTower seg_enc_, vis_enc_;
    DecoderTower seg_dec_, vis_dec_, xvis_dec_, xseg_dec_;
    LinearRef msf_q_, msf_k_, msf_v_;
    LinearRef mmcf_q_, mmcf_k_, mmcf_v_;
    LinearRef fuse_fc_;
    LinearRef mp_fc1_, mp_fc2_, mp_fc3_;
    LinearRef vae_fc1_, vae_mu_, vae_lv_, vdec_fc1_, vdec_fc2_;
    LinearRef align_;
};

// ---------------------------------------------------------------------------
// Freeze partition for target adaptation: only the visual autoencoder (and
// the optional alignment head) stay trainable; everything else is fixed.
// ---------------------------------------------------------------------------

inline bool adapt_trainable_name(const std::string& name) {
    return name.rfind("look.vis_enc.", 0) == 0 || name.rfind("look.vis_dec.", 0) == 0 ||
           name.rfind("leverage.align.", 0) == 0;
}

struct FreezePartition {
    std::vector<std::string> trainable, frozen;
};

template <class T>
FreezePartition freeze_partition(ParameterStore<T>& store) {
    static const char* known[] = {"look.seg_enc.", "look.seg_dec.", "look.msf.", "look.mmcf.",
                                  "look.fuse_cat.", "look.vis_enc.", "look.vis_dec.", "look.mp.",
                                  "learn.", "leverage.align."};
    FreezePartition part;
    for (const auto& name : store.names()) {
        bool matched = false;
        for (const char* prefix : known)
            if (name.rfind(prefix, 0) == 0) {
                matched = true;
                break;
            }
        if (!matched) throw std::invalid_argument("unknown parameter name-space: " + name);
        const bool trainable = adapt_trainable_name(name);
        store.set_trainable(name, trainable);
        (trainable ? part.trainable : part.frozen).push_back(name);
    }
    return part;
}

template <class T>
void mark_all_trainable(ParameterStore<T>& store) {
    for (const auto& name : store.names()) store.set_trainable(name, true);
}

}  // namespace l3
