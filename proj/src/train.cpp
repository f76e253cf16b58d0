#include "l3/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "l3/adam.hpp"

namespace l3::train {
namespace {

constexpr std::uint64_t kInitStream = 0x696e6974ull;   // "init"
constexpr std::uint64_t kPairStream = 0x74726e70ull;   // training pairs
constexpr std::uint64_t kNoiseStream = 0x6e6f6973ull;  // vae noise
constexpr std::uint64_t kOrderStream = 0x6f726472ull;  // epoch shuffles
constexpr std::uint64_t kTargetStream = 0x74676474ull; // target data
constexpr std::uint64_t kAlignStream = 0x616c6767ull;  // align head init

std::vector<int> epoch_order(int n, std::uint64_t seed, int epoch) {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng rng(hash_combine(kOrderStream, seed, std::uint64_t(epoch)));
    rng.shuffle(order.begin(), order.end());
    return order;
}

// Merges slot-local gradients in slot order and divides by the batch size.
void merge_slots(std::vector<GradientSet<float>>& slots, GradientSet<float>& out, int batch_n,
                 const ParameterStore<float>& store) {
    std::fill(out.flat.begin(), out.flat.end(), 0.0f);
    for (auto& s : slots) {
        for (std::size_t i = 0; i < out.flat.size(); ++i) out.flat[i] += s.flat[i];
    }
    const float inv = 1.0f / static_cast<float>(batch_n);
    for (auto& g : out.flat) g *= inv;
    out.mark_trainable(store);
}

void check_finite(double loss, const char* stage, int epoch, int batch) {
    if (!std::isfinite(loss))
        throw std::runtime_error(std::string(stage) + ": non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch " + std::to_string(batch));
}

}  // namespace

void LossCurve::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
    out << "\n";
    char buf[64];
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.9g", row[i]);
            out << (i ? "," : "") << buf;
        }
        out << "\n";
    }
}

void fill_pair_input(const synth::PairedSample& pair, PairInput<float>& in, Rng& noise_rng,
                     int z_dim) {
    const synth::Sample* samples[2] = {&pair.a, &pair.b};
    for (int e = 0; e < 2; ++e) {
        const auto& s = *samples[e];
        auto& dst = in.e[e];
        dst.x.resize(s.image.size());
        for (std::size_t i = 0; i < s.image.size(); ++i) dst.x[i] = s.image[i];
        dst.m.resize(s.masks.size());
        for (std::size_t i = 0; i < s.masks.size(); ++i) dst.m[i] = static_cast<float>(s.masks[i]);
        const auto region = synth::object_region(s.factors);
        dst.obj_union.resize(region.size());
        for (std::size_t i = 0; i < region.size(); ++i) dst.obj_union[i] = static_cast<float>(region[i]);
    }
    in.noise_shared.resize(z_dim);
    in.noise_a.resize(z_dim);
    in.noise_b.resize(z_dim);
    for (int j = 0; j < z_dim; ++j) in.noise_shared[j] = static_cast<float>(noise_rng.normal());
    for (int j = 0; j < z_dim; ++j) in.noise_a[j] = static_cast<float>(noise_rng.normal());
    for (int j = 0; j < z_dim; ++j) in.noise_b[j] = static_cast<float>(noise_rng.normal());
}

SourceTrainResult source_train(const ExperimentConfig& cfg, std::uint64_t seed) {
    if (cfg.variant == Variant::Baseline || cfg.variant == Variant::Ut)
        throw std::invalid_argument("source_train: baseline/ut use baseline_train");
    const L3Wiring wiring = wiring_for(cfg.variant);
    auto net = std::make_unique<L3Net<float>>(cfg.dims, wiring, hash_combine(kInitStream, seed));
    mark_all_trainable(net->params());
    Adam<float> opt(net->params());

    synth::PairDatasetSpec pairs{cfg.source_domain, cfg.source_pairs,
                                 hash_combine(kPairStream, seed), cfg.k};

    const int R = kReductionSlots;
    std::vector<PairWork<float>> work(R);
    for (auto& w : work) net->resize_pair(w);
    std::vector<GradientSet<float>> slot_grads(R, GradientSet<float>(net->params()));
    std::vector<PairInput<float>> slot_inputs(R);
    GradientSet<float> grads(net->params());

    LossCurve curve;
    curve.columns = {"epoch", "loss_total", "loss_look", "loss_task", "loss_cross", "loss_task_kl"};
    const int n = cfg.source_pairs;
    const int batches = (n + cfg.batch - 1) / cfg.batch;

    for (int epoch = 0; epoch < cfg.epochs_source; ++epoch) {
        const std::vector<int> order = epoch_order(n, seed, epoch);
        double ep_total = 0, ep_look = 0, ep_task = 0, ep_cross = 0, ep_kl = 0;
        for (int b = 0; b < batches; ++b) {
            const int begin = b * cfg.batch;
            const int end = std::min(n, begin + cfg.batch);
            const int bs = end - begin;
            std::vector<double> slot_total(R, 0), slot_look(R, 0), slot_task(R, 0),
                slot_cross(R, 0), slot_kl(R, 0);
            for (auto& g : slot_grads) std::fill(g.flat.begin(), g.flat.end(), 0.0f);
#ifdef _OPENMP
#pragma omp parallel for schedule(static, 1)
#endif
            for (int s = 0; s < R; ++s) {
                for (int pos = begin + s; pos < end; pos += R) {
                    const int pair_idx = order[pos];
                    const synth::PairedSample pair = pairs.at(pair_idx);
                    Rng noise(hash_combine(kNoiseStream, seed, std::uint64_t(epoch),
                                           std::uint64_t(pair_idx)));
                    fill_pair_input(pair, slot_inputs[s], noise, cfg.dims.z_dim);
                    const PairLossTerms t = net->pair_loss_forward(slot_inputs[s], work[s],
                                                                   cfg.weights, cfg.beta_kl, cfg.k);
                    net->pair_loss_backward(slot_inputs[s], work[s], cfg.weights, cfg.beta_kl,
                                            slot_grads[s]);
                    slot_total[s] += t.total;
                    slot_look[s] += t.look_seg + t.look_vis + t.look_mp;
                    slot_task[s] += t.task;
                    slot_cross[s] += t.cross_seg + t.cross_vis;
                    slot_kl[s] += t.task_kl;
                }
            }
            double batch_total = 0;
            for (int s = 0; s < R; ++s) {
                batch_total += slot_total[s];
                ep_look += slot_look[s];
                ep_task += slot_task[s];
                ep_cross += slot_cross[s];
                ep_kl += slot_kl[s];
            }
            check_finite(batch_total, "source_train", epoch, b);
            ep_total += batch_total;
            merge_slots(slot_grads, grads, bs, net->params());
            opt.step(net->params(), grads, cfg.lr_source);
        }
        curve.rows.push_back({double(epoch), ep_total / n, ep_look / n, ep_task / n, ep_cross / n,
                              ep_kl / n});
    }
    return {std::move(net), std::move(curve)};
}

LossCurve target_adapt(L3Net<float>& net, const ExperimentConfig& cfg, std::uint64_t seed) {
    if (!net.wiring().has_vis)
        throw std::invalid_argument("target_adapt: variant has no visual pathway to adapt");
    LeverageFlags flags;
    flags.alignment_term = cfg.variant != Variant::NoAlignment;
    flags.z_align_term = cfg.z_align && cfg.variant != Variant::NoAlignment;
    freeze_partition(net.params());
    if (flags.z_align_term && !net.has_align_head())
        net.add_align_head(hash_combine(kAlignStream, seed));
    Adam<float> opt(net.params());

    // Factors are stripped before the training loop ever sees a sample.
    synth::DatasetSpec data{cfg.target_domain, cfg.target_images,
                            hash_combine(kTargetStream, seed), false};
    const int R = kReductionSlots;
    std::vector<LeverageWork<float>> work(R);
    for (auto& w : work) net.resize_leverage(w);
    std::vector<GradientSet<float>> slot_grads(R, GradientSet<float>(net.params()));
    GradientSet<float> grads(net.params());

    LossCurve curve;
    curve.columns = {"epoch", "loss_total", "loss_align", "loss_rec", "loss_zkl"};
    const int n = cfg.target_images;
    const int batches = (n + cfg.batch - 1) / cfg.batch;

    for (int epoch = 0; epoch < cfg.epochs_target; ++epoch) {
        const std::vector<int> order = epoch_order(n, seed, epoch);
        double ep_total = 0, ep_align = 0, ep_rec = 0, ep_zkl = 0;
        for (int b = 0; b < batches; ++b) {
            const int begin = b * cfg.batch;
            const int end = std::min(n, begin + cfg.batch);
            const int bs = end - begin;
            std::vector<double> slot_total(R, 0), slot_align(R, 0), slot_rec(R, 0), slot_zkl(R, 0);
            for (auto& g : slot_grads) std::fill(g.flat.begin(), g.flat.end(), 0.0f);
#ifdef _OPENMP
#pragma omp parallel for schedule(static, 1)
#endif
            for (int s = 0; s < R; ++s) {
                for (int pos = begin + s; pos < end; pos += R) {
                    const synth::TargetSample ts = synth::strip_factors(data.at(order[pos]));
                    auto& w = work[s];
                    std::vector<float> x(ts.image.size()), m(ts.masks.size());
                    for (std::size_t i = 0; i < x.size(); ++i) x[i] = ts.image[i];
                    for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<float>(ts.masks[i]);
                    const LeverageTerms t = net.leverage_forward(x, m, w, cfg.weights, flags);
                    net.leverage_backward(w, cfg.weights, flags, slot_grads[s]);
                    slot_total[s] += t.total;
                    slot_align[s] += t.align;
                    slot_rec[s] += t.rec;
                    slot_zkl[s] += t.zkl;
                }
            }
            double batch_total = 0;
            for (int s = 0; s < R; ++s) {
                batch_total += slot_total[s];
                ep_align += slot_align[s];
                ep_rec += slot_rec[s];
                ep_zkl += slot_zkl[s];
            }
            check_finite(batch_total, "target_adapt", epoch, b);
            ep_total += batch_total;
            merge_slots(slot_grads, grads, bs, net.params());
            opt.step(net.params(), grads, cfg.lr_target);
        }
        curve.rows.push_back({double(epoch), ep_total / n, ep_align / n, ep_rec / n, ep_zkl / n});
    }
    return curve;
}

BaselineTrainResult baseline_train(const ExperimentConfig& cfg, std::uint64_t seed) {
    auto net = std::make_unique<BaselineNet<float>>(cfg.dims, hash_combine(kInitStream, seed, 0xbull));
    mark_all_trainable(net->params());
    Adam<float> opt(net->params());
    synth::PairDatasetSpec pairs{cfg.source_domain, cfg.source_pairs,
                                 hash_combine(kPairStream, seed), cfg.k};

    const int R = kReductionSlots;
    std::vector<typename BaselineNet<float>::PairWork> work(R);
    for (auto& w : work) net->resize_pair(w);
    std::vector<GradientSet<float>> slot_grads(R, GradientSet<float>(net->params()));
    std::vector<PairInput<float>> slot_inputs(R);
    GradientSet<float> grads(net->params());

    LossCurve curve;
    curve.columns = {"epoch", "loss_total"};
    const int n = cfg.source_pairs;
    const int batches = (n + cfg.batch - 1) / cfg.batch;
    for (int epoch = 0; epoch < cfg.epochs_source; ++epoch) {
        const std::vector<int> order = epoch_order(n, seed, epoch);
        double ep_total = 0;
        for (int b = 0; b < batches; ++b) {
            const int begin = b * cfg.batch;
            const int end = std::min(n, begin + cfg.batch);
            const int bs = end - begin;
            std::vector<double> slot_total(R, 0);
            for (auto& g : slot_grads) std::fill(g.flat.begin(), g.flat.end(), 0.0f);
#ifdef _OPENMP
#pragma omp parallel for schedule(static, 1)
#endif
            for (int s = 0; s < R; ++s) {
                for (int pos = begin + s; pos < end; pos += R) {
                    const int pair_idx = order[pos];
                    const synth::PairedSample pair = pairs.at(pair_idx);
                    Rng noise(hash_combine(kNoiseStream, seed, std::uint64_t(epoch),
                                           std::uint64_t(pair_idx)));
                    fill_pair_input(pair, slot_inputs[s], noise, cfg.dims.z_dim);
                    slot_total[s] += net->pair_loss_forward(slot_inputs[s], work[s], cfg.beta_kl, cfg.k);
                    net->pair_loss_backward(work[s], cfg.beta_kl, slot_grads[s]);
                }
            }
            double batch_total = 0;
            for (int s = 0; s < R; ++s) batch_total += slot_total[s];
            check_finite(batch_total, "baseline_train", epoch, b);
            ep_total += batch_total;
            merge_slots(slot_grads, grads, bs, net->params());
            opt.step(net->params(), grads, cfg.lr_source);
        }
        curve.rows.push_back({double(epoch), ep_total / n});
    }
    return {std::move(net), std::move(curve)};
}

LossCurve ut_finetune(BaselineNet<float>& net, const ExperimentConfig& cfg, std::uint64_t seed) {
    mark_all_trainable(net.params());
    Adam<float> opt(net.params());
    synth::DatasetSpec data{cfg.target_domain, cfg.target_images,
                            hash_combine(kTargetStream, seed), false};
    const int R = kReductionSlots;
    std::vector<typename BaselineNet<float>::Cache> work(R);
    for (auto& w : work) net.resize_cache(w);
    std::vector<GradientSet<float>> slot_grads(R, GradientSet<float>(net.params()));
    GradientSet<float> grads(net.params());
    std::vector<std::vector<float>> slot_eps(R, std::vector<float>(cfg.dims.z_dim));

    LossCurve curve;
    curve.columns = {"epoch", "loss_total"};
    const int n = cfg.target_images;
    const int batches = (n + cfg.batch - 1) / cfg.batch;
    for (int epoch = 0; epoch < cfg.epochs_target; ++epoch) {
        const std::vector<int> order = epoch_order(n, seed, epoch);
        double ep_total = 0;
        for (int b = 0; b < batches; ++b) {
            const int begin = b * cfg.batch;
            const int end = std::min(n, begin + cfg.batch);
            const int bs = end - begin;
            std::vector<double> slot_total(R, 0);
            for (auto& g : slot_grads) std::fill(g.flat.begin(), g.flat.end(), 0.0f);
#ifdef _OPENMP
#pragma omp parallel for schedule(static, 1)
#endif
            for (int s = 0; s < R; ++s) {
                for (int pos = begin + s; pos < end; pos += R) {
                    const int idx = order[pos];
                    const synth::TargetSample ts = synth::strip_factors(data.at(idx));
                    auto& c = work[s];
                    for (std::size_t i = 0; i < c.x.size(); ++i) c.x[i] = ts.image[i];
                    Rng noise(hash_combine(kNoiseStream, seed, std::uint64_t(epoch),
                                           std::uint64_t(idx), 0x75ull));
                    for (int j = 0; j < cfg.dims.z_dim; ++j)
                        slot_eps[s][j] = static_cast<float>(noise.normal());
                    slot_total[s] += net.beta_vae_loss(c, slot_eps[s].data(), cfg.beta_ut);
                    net.beta_vae_backward(c, slot_eps[s].data(), cfg.beta_ut, slot_grads[s]);
                }
            }
            double batch_total = 0;
            for (int s = 0; s < R; ++s) batch_total += slot_total[s];
            check_finite(batch_total, "ut_finetune", epoch, b);
            ep_total += batch_total;
            merge_slots(slot_grads, grads, bs, net.params());
            opt.step(net.params(), grads, cfg.lr_target);
        }
        curve.rows.push_back({double(epoch), ep_total / n});
    }
    return curve;
}

namespace {

template <class Fn>
double mean_over_dataset(L3Net<float>& net, const synth::DatasetSpec& data, int n, Fn&& per_sample) {
    const int R = kReductionSlots;
    std::vector<SampleCache<float>> caches(R);
    for (auto& c : caches) net.resize_cache(c);
    std::vector<double> slot_sum(R, 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static, 1)
#endif
    for (int s = 0; s < R; ++s) {
        for (int i = s; i < n; i += R) {
            const synth::Sample sample = data.at(i);
            net.load_inputs(sample.image, sample.masks, caches[s]);
            slot_sum[s] += per_sample(caches[s]);
        }
    }
    double total = 0;
    for (double v : slot_sum) total += v;
    return total / n;
}

}  // namespace

double mean_mask_recon_error(L3Net<float>& net, const synth::DatasetSpec& data, int n) {
    const int c = net.dims().mask_channels;
    return mean_over_dataset(net, data, n, [&](SampleCache<float>& cache) {
        net.sample_forward(cache, L3Net<float>::Scope::SourceTrain);
        double err = 0;
        for (int ch = 0; ch < c; ++ch)
            err += mse(cache.seg_dec[ch].out.data(), cache.m.data() + std::size_t(ch) * kImg * kImg,
                       std::size_t(kImg) * kImg);
        return err / c;
    });
}

double mean_image_recon_error(L3Net<float>& net, const synth::DatasetSpec& data, int n) {
    return mean_over_dataset(net, data, n, [&](SampleCache<float>& cache) {
        net.sample_forward(cache, L3Net<float>::Scope::SourceTrain);
        return mse(cache.vis_dec.out.data(), cache.x.data(), cache.vis_dec.out.size());
    });
}

double mp_prediction_error_ratio(L3Net<float>& net, const synth::DatasetSpec& data, int n) {
    double err = 0, sum = 0, sum2 = 0;
    std::size_t count = 0;
    SampleCache<float> cache;
    net.resize_cache(cache);
    for (int i = 0; i < n; ++i) {
        const synth::Sample sample = data.at(i);
        net.load_inputs(sample.image, sample.masks, cache);
        net.sample_forward(cache, L3Net<float>::Scope::Leverage);
        err += mse(cache.u_hat.data(), cache.u_can.data(), cache.u_can.size());
        for (float v : cache.u_can) {
            sum += v;
            sum2 += double(v) * v;
            ++count;
        }
    }
    const double mean = sum / count;
    const double var = sum2 / count - mean * mean;
    return (err / n) / std::max(var, 1e-12);
}

double mean_alignment_error(L3Net<float>& net, const synth::DatasetSpec& data, int n) {
    return mean_over_dataset(net, data, n, [&](SampleCache<float>& cache) {
        net.sample_forward(cache, L3Net<float>::Scope::Leverage);
        return mse(cache.u_hat.data(), cache.u_can.data(), cache.u_can.size());
    });
}

}  // namespace l3::train
