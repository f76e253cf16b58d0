#pragma once

#include "l3/adavae.hpp"
#include "l3/layers.hpp"
#include "l3/model.hpp"

namespace l3 {

// Convolutional VAE trained directly on images with the same weakly
// supervised pair objective. Used as the direct-transfer baseline and, with
// an unsupervised beta-VAE finetune on target images, as the UT comparison.
template <class T>
class BaselineNet {
public:
    BaselineNet(const ModelDims& dims, std::uint64_t init_seed) : dims_(dims) {
        dims_.validate();
        store_ = init_params<T>(architecture(dims_), init_seed);
        resolve();
    }

    static ArchitectureSpec architecture(const ModelDims& dims) {
        ArchitectureSpec spec;
        const int cw = dims.conv_width;
        const int flat = 2 * cw * 8 * 8;
        declare_conv(spec, "baseline.enc.conv1", ConvShape{3, kImgHalf, kImgHalf, cw + 2, 3, 1, 1});
        declare_conv(spec, "baseline.enc.conv2", ConvShape{cw + 2, 16, 16, 2 * cw, 3, 1, 1});
        declare_conv(spec, "baseline.enc.conv3", ConvShape{2 * cw, 8, 8, 2 * cw, 3, 1, 1});
        declare_conv(spec, "baseline.enc.conv4", ConvShape{2 * cw, 8, 8, 2 * cw, 3, 1, 1});
        declare_linear(spec, "baseline.enc.fc1", flat, dims.vae_hidden);
        declare_linear(spec, "baseline.enc.mu", dims.vae_hidden, dims.z_dim);
        declare_linear(spec, "baseline.enc.logvar", dims.vae_hidden, dims.z_dim);
        declare_linear(spec, "baseline.dec.fc1", dims.z_dim, dims.vae_hidden);
        declare_linear(spec, "baseline.dec.fc2", dims.vae_hidden, flat);
        declare_conv(spec, "baseline.dec.conv1", ConvShape{2 * cw, 8, 8, 2 * cw, 3, 1, 1});
        declare_conv(spec, "baseline.dec.conv2", ConvShape{2 * cw, 16, 16, cw + 2, 3, 1, 1});
        declare_conv(spec, "baseline.dec.conv3", ConvShape{cw + 2, kImgHalf, kImgHalf, 3, 3, 1, 1});
        return spec;
    }

    const ModelDims& dims() const { return dims_; }
    ParameterStore<T>& params() { return store_; }
    const ParameterStore<T>& params() const { return store_; }

    void load_from(const ParameterStore<float>& loaded) {
        for (std::size_t i = 0; i < store_.entry_count(); ++i) {
            const auto& e = store_.entry(i);
            if (!loaded.has(e.name)) throw std::runtime_error("checkpoint missing " + e.name);
            const auto src = loaded.view(e.name);
            if (src.size() != e.size) throw std::runtime_error("checkpoint shape mismatch for " + e.name);
            auto dst = store_.view(e.name);
            for (std::size_t j = 0; j < e.size; ++j) dst[j] = static_cast<T>(src[j]);
        }
    }

    struct Cache {
        std::vector<T> x;
        EncCache<T> enc;
        std::vector<T> enc_h, mu, logvar;
        std::vector<T> z, dec_h, dec_flat;
        DecCache<T> dec;
        std::vector<T> d_mu, d_logvar, d_h, d_z, d_dec_h, d_dec_flat, d_flat, d_x_hat;
    };

    void resize_cache(Cache& c) const {
        c.x.assign(std::size_t(3) * kImg * kImg, T(0));
        enc_.resize_cache(c.enc);
        c.enc_h.assign(dims_.vae_hidden, T(0));
        c.mu.assign(dims_.z_dim, T(0));
        c.logvar.assign(dims_.z_dim, T(0));
        c.z.assign(dims_.z_dim, T(0));
        c.dec_h.assign(dims_.vae_hidden, T(0));
        c.dec_flat.assign(std::size_t(dfc2_.out), T(0));
        dec_.resize_cache(c.dec);
        c.d_mu.assign(dims_.z_dim, T(0));
        c.d_logvar.assign(dims_.z_dim, T(0));
        c.d_h.assign(dims_.vae_hidden, T(0));
        c.d_z.assign(dims_.z_dim, T(0));
        c.d_dec_h.assign(dims_.vae_hidden, T(0));
        c.d_dec_flat.assign(std::size_t(dfc2_.out), T(0));
        c.d_flat.assign(std::size_t(fc1_.in), T(0));
        c.d_x_hat.assign(std::size_t(3) * kImg * kImg, T(0));
    }

    void encode(Cache& c) const {
        const T* P = store_.flat().data();
        enc_.fwd(P, c.x.data(), c.enc);
        linear_fwd(c.enc.out.data(), P + fc1_.w, P + fc1_.b, c.enc_h.data(), fc1_.in, fc1_.out);
        tanh_fwd(c.enc_h.data(), c.enc_h.data(), c.enc_h.size());
        linear_fwd(c.enc_h.data(), P + mu_.w, P + mu_.b, c.mu.data(), mu_.in, mu_.out);
        linear_fwd(c.enc_h.data(), P + lv_.w, P + lv_.b, c.logvar.data(), lv_.in, lv_.out);
    }

    void decode(const T* z, Cache& c) const {
        const T* P = store_.flat().data();
        linear_fwd(z, P + dfc1_.w, P + dfc1_.b, c.dec_h.data(), dfc1_.in, dfc1_.out);
        tanh_fwd(c.dec_h.data(), c.dec_h.data(), c.dec_h.size());
        linear_fwd(c.dec_h.data(), P + dfc2_.w, P + dfc2_.b, c.dec_flat.data(), dfc2_.in, dfc2_.out);
        tanh_fwd(c.dec_flat.data(), c.dec_flat.data(), c.dec_flat.size());
        dec_.fwd(P, c.dec_flat.data(), c.dec);
    }

    // Gradient of MSE(dec(z), x_target) + kl_scale*KL(N(mu,s2)||N(0,1)) given
    // the caches from encode()/decode(). Accumulates into grads.
    void backward(Cache& c, const T* eps, double recon_scale, double kl_scale,
                  GradientSet<T>& grads) const {
        const T* P = store_.flat().data();
        detail::fill_zero(c.d_x_hat);
        mse_bwd(c.dec.out.data(), c.x.data(), c.d_x_hat.data(), c.d_x_hat.size(),
                static_cast<T>(recon_scale));
        detail::fill_zero(c.d_dec_flat);
        dec_.bwd(P, c.dec_flat.data(), c.d_x_hat.data(), c.dec, c.d_dec_flat.data(), &grads, true);
        tanh_bwd(c.dec_flat.data(), c.d_dec_flat.data(), c.d_dec_flat.data(), c.d_dec_flat.size());
        detail::fill_zero(c.d_dec_h);
        linear_bwd_input(c.d_dec_flat.data(), P + dfc2_.w, c.d_dec_h.data(), dfc2_.in, dfc2_.out);
        linear_bwd_params(c.dec_h.data(), c.d_dec_flat.data(), grads.flat.data() + dfc2_.w,
                          grads.flat.data() + dfc2_.b, dfc2_.in, dfc2_.out);
        tanh_bwd(c.dec_h.data(), c.d_dec_h.data(), c.d_dec_h.data(), c.d_dec_h.size());
        detail::fill_zero(c.d_z);
        linear_bwd_input(c.d_dec_h.data(), P + dfc1_.w, c.d_z.data(), dfc1_.in, dfc1_.out);
        linear_bwd_params(c.z.data(), c.d_dec_h.data(), grads.flat.data() + dfc1_.w,
                          grads.flat.data() + dfc1_.b, dfc1_.in, dfc1_.out);

        detail::fill_zero(c.d_mu);
        detail::fill_zero(c.d_logvar);
        reparameterize_bwd(c.logvar.data(), eps, c.d_z.data(), c.d_mu.data(), c.d_logvar.data(),
                           dims_.z_dim);
        gaussian_standard_kl_bwd(c.mu.data(), c.logvar.data(), c.d_mu.data(), c.d_logvar.data(),
                                 dims_.z_dim, static_cast<T>(kl_scale));
        encoder_backward(c, grads);
    }

    void encoder_backward(Cache& c, GradientSet<T>& grads) const {
        const T* P = store_.flat().data();
        detail::fill_zero(c.d_h);
        linear_bwd_input(c.d_mu.data(), P + mu_.w, c.d_h.data(), mu_.in, mu_.out);
        linear_bwd_params(c.enc_h.data(), c.d_mu.data(), grads.flat.data() + mu_.w,
                          grads.flat.data() + mu_.b, mu_.in, mu_.out);
        {
            std::vector<T> tmp(dims_.vae_hidden, T(0));
            linear_bwd_input(c.d_logvar.data(), P + lv_.w, tmp.data(), lv_.in, lv_.out);
            detail::add_into(c.d_h.data(), tmp.data(), tmp.size());
        }
        linear_bwd_params(c.enc_h.data(), c.d_logvar.data(), grads.flat.data() + lv_.w,
                          grads.flat.data() + lv_.b, lv_.in, lv_.out);
        tanh_bwd(c.enc_h.data(), c.d_h.data(), c.d_h.data(), c.d_h.size());
        detail::fill_zero(c.d_flat);
        linear_bwd_input(c.d_h.data(), P + fc1_.w, c.d_flat.data(), fc1_.in, fc1_.out);
        linear_bwd_params(c.enc.out.data(), c.d_h.data(), grads.flat.data() + fc1_.w,
                          grads.flat.data() + fc1_.b, fc1_.in, fc1_.out);
        enc_.bwd(P, c.d_flat.data(), c.enc, &grads, true);
    }

    // Weakly supervised pair objective on raw images; mirrors the task loss
    // used inside the L3 Learn phase, with images as reconstruction targets.
    struct PairWork {
        Cache s[2];
        std::vector<T> delta;
        std::vector<int> kept;
        std::vector<T> mu_m[2], lv_m[2], eps_eff[2];
    };

    void resize_pair(PairWork& w) const {
        resize_cache(w.s[0]);
        resize_cache(w.s[1]);
        w.delta.assign(dims_.z_dim, T(0));
        for (int e = 0; e < 2; ++e) {
            w.mu_m[e].assign(dims_.z_dim, T(0));
            w.lv_m[e].assign(dims_.z_dim, T(0));
            w.eps_eff[e].assign(dims_.z_dim, T(0));
        }
    }

    double pair_loss_forward(const PairInput<T>& in, PairWork& w, double beta_kl, int k,
                             const std::vector<int>* kept_override = nullptr) const {
        const int z = dims_.z_dim;
        for (int e = 0; e < 2; ++e) {
            w.s[e].x = in.e[e].x;
            encode(w.s[e]);
        }
        gaussian_kl_per_dim(w.s[0].mu.data(), w.s[0].logvar.data(), w.s[1].mu.data(),
                            w.s[1].logvar.data(), w.delta.data(), z);
        w.kept = kept_override ? *kept_override : top_k_divergent(w.delta.data(), z, k);
        adavae_average(w.s[0].mu.data(), w.s[0].logvar.data(), w.s[1].mu.data(), w.s[1].logvar.data(),
                       w.kept, w.mu_m[0].data(), w.lv_m[0].data(), w.mu_m[1].data(), w.lv_m[1].data(), z);
        std::vector<char> is_kept(z, 0);
        for (int j : w.kept) is_kept[j] = 1;
        double total = 0;
        for (int e = 0; e < 2; ++e) {
            for (int j = 0; j < z; ++j)
                w.eps_eff[e][j] = is_kept[j] ? (e == 0 ? in.noise_a[j] : in.noise_b[j]) : in.noise_shared[j];
            reparameterize(w.mu_m[e].data(), w.lv_m[e].data(), w.eps_eff[e].data(), w.s[e].z.data(), z);
            decode(w.s[e].z.data(), w.s[e]);
            total += mse(w.s[e].dec.out.data(), w.s[e].x.data(), w.s[e].dec.out.size());
            total += beta_kl * gaussian_standard_kl(w.mu_m[e].data(), w.lv_m[e].data(), z);
        }
        return total;
    }

    void pair_loss_backward(PairWork& w, double beta_kl, GradientSet<T>& grads) const {
        const T* P = store_.flat().data();
        const int z = dims_.z_dim;
        std::vector<T> d_mu_m[2], d_lv_m[2];
        for (int e = 0; e < 2; ++e) {
            auto& c = w.s[e];
            d_mu_m[e].assign(z, T(0));
            d_lv_m[e].assign(z, T(0));
            detail::fill_zero(c.d_x_hat);
            mse_bwd(c.dec.out.data(), c.x.data(), c.d_x_hat.data(), c.d_x_hat.size(), T(1));
            detail::fill_zero(c.d_dec_flat);
            dec_.bwd(P, c.dec_flat.data(), c.d_x_hat.data(), c.dec, c.d_dec_flat.data(), &grads, true);
            tanh_bwd(c.dec_flat.data(), c.d_dec_flat.data(), c.d_dec_flat.data(), c.d_dec_flat.size());
            detail::fill_zero(c.d_dec_h);
            linear_bwd_input(c.d_dec_flat.data(), P + dfc2_.w, c.d_dec_h.data(), dfc2_.in, dfc2_.out);
            linear_bwd_params(c.dec_h.data(), c.d_dec_flat.data(), grads.flat.data() + dfc2_.w,
                              grads.flat.data() + dfc2_.b, dfc2_.in, dfc2_.out);
            tanh_bwd(c.dec_h.data(), c.d_dec_h.data(), c.d_dec_h.data(), c.d_dec_h.size());
            detail::fill_zero(c.d_z);
            linear_bwd_input(c.d_dec_h.data(), P + dfc1_.w, c.d_z.data(), dfc1_.in, dfc1_.out);
            linear_bwd_params(c.z.data(), c.d_dec_h.data(), grads.flat.data() + dfc1_.w,
                              grads.flat.data() + dfc1_.b, dfc1_.in, dfc1_.out);
            reparameterize_bwd(w.lv_m[e].data(), w.eps_eff[e].data(), c.d_z.data(), d_mu_m[e].data(),
                               d_lv_m[e].data(), z);
            gaussian_standard_kl_bwd(w.mu_m[e].data(), w.lv_m[e].data(), d_mu_m[e].data(),
                                     d_lv_m[e].data(), z, static_cast<T>(beta_kl));
            detail::fill_zero(c.d_mu);
            detail::fill_zero(c.d_logvar);
        }
        adavae_average_bwd(w.s[0].logvar.data(), w.s[1].logvar.data(), w.kept, d_mu_m[0].data(),
                           d_lv_m[0].data(), d_mu_m[1].data(), d_lv_m[1].data(), w.s[0].d_mu.data(),
                           w.s[0].d_logvar.data(), w.s[1].d_mu.data(), w.s[1].d_logvar.data(), z);
        for (int e = 0; e < 2; ++e) encoder_backward(w.s[e], grads);
    }

    // Unsupervised beta-VAE objective on one image: MSE + beta*KL.
    double beta_vae_loss(Cache& c, const T* eps, double beta) const {
        encode(c);
        reparameterize(c.mu.data(), c.logvar.data(), eps, c.z.data(), dims_.z_dim);
        decode(c.z.data(), c);
        return mse(c.dec.out.data(), c.x.data(), c.dec.out.size()) +
               beta * gaussian_standard_kl(c.mu.data(), c.logvar.data(), dims_.z_dim);
    }

    void beta_vae_backward(Cache& c, const T* eps, double beta, GradientSet<T>& grads) const {
        backward(c, eps, 1.0, beta, grads);
    }

    std::vector<T> infer_z(const synth::Sample& sample, Cache& c) const {
        for (std::size_t i = 0; i < c.x.size(); ++i) c.x[i] = static_cast<T>(sample.image[i]);
        encode(c);
        return std::vector<T>(c.mu.begin(), c.mu.end());
    }

private:
    void resolve() {
        const int cw = dims_.conv_width;
        const int flat = 2 * cw * 8 * 8;
        enc_.in_c = 3;
        enc_.c1 = resolve_conv(store_, "baseline.enc.conv1", ConvShape{3, kImgHalf, kImgHalf, cw + 2, 3, 1, 1});
        enc_.c2 = resolve_conv(store_, "baseline.enc.conv2", ConvShape{cw + 2, 16, 16, 2 * cw, 3, 1, 1});
        enc_.c3 = resolve_conv(store_, "baseline.enc.conv3", ConvShape{2 * cw, 8, 8, 2 * cw, 3, 1, 1});
        enc_.c4 = resolve_conv(store_, "baseline.enc.conv4", ConvShape{2 * cw, 8, 8, 2 * cw, 3, 1, 1});
        fc1_ = resolve_linear(store_, "baseline.enc.fc1", flat, dims_.vae_hidden);
        mu_ = resolve_linear(store_, "baseline.enc.mu", dims_.vae_hidden, dims_.z_dim);
        lv_ = resolve_linear(store_, "baseline.enc.logvar", dims_.vae_hidden, dims_.z_dim);
        dfc1_ = resolve_linear(store_, "baseline.dec.fc1", dims_.z_dim, dims_.vae_hidden);
        dfc2_ = resolve_linear(store_, "baseline.dec.fc2", dims_.vae_hidden, flat);
        dec_.d1 = resolve_conv(store_, "baseline.dec.conv1", ConvShape{2 * cw, 8, 8, 2 * cw, 3, 1, 1});
        dec_.d2 = resolve_conv(store_, "baseline.dec.conv2", ConvShape{2 * cw, 16, 16, cw + 2, 3, 1, 1});
        dec_.d3 = resolve_conv(store_, "baseline.dec.conv3", ConvShape{cw + 2, kImgHalf, kImgHalf, 3, 3, 1, 1});
    }

    ModelDims dims_;
    ParameterStore<T> store_;
    EncoderTower enc_;
    DecoderTower dec_;
    LinearRef fc1_, mu_, lv_, dfc1_, dfc2_;
};

}  // namespace l3
