#pragma once

#include <memory>
#include <string>
#include <vector>

#include "l3/baseline.hpp"
#include "l3/config.hpp"
#include "l3/model.hpp"

namespace l3::train {

// Per-epoch loss curve; serialised as CSV with a fixed header.
struct LossCurve {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    void write_csv(const std::string& path) const;
};

struct SourceTrainResult {
    std::unique_ptr<L3Net<float>> net;
    LossCurve curve;
};

struct BaselineTrainResult {
    std::unique_ptr<BaselineNet<float>> net;
    LossCurve curve;
};

// Number of fixed gradient-reduction slots. Work is assigned to slots by
// index and merged in slot order, so results are bit-identical for any
// OpenMP thread count.
inline constexpr int kReductionSlots = 8;

// Joint optimisation of the Look and Learn objectives on source-domain pairs.
SourceTrainResult source_train(const ExperimentConfig& cfg, std::uint64_t seed);

// Adapts the visual autoencoder (plus the optional alignment head) on target
// images; every other module is frozen. The input net must be source-trained.
LossCurve target_adapt(L3Net<float>& net, const ExperimentConfig& cfg, std::uint64_t seed);

// Weakly supervised conv-VAE directly on images (transfer baseline).
BaselineTrainResult baseline_train(const ExperimentConfig& cfg, std::uint64_t seed);

// Unsupervised beta-VAE finetune of a baseline model on target images (UT).
LossCurve ut_finetune(BaselineNet<float>& net, const ExperimentConfig& cfg, std::uint64_t seed);

// Converts a rendered pair into model inputs plus the task noise draws.
void fill_pair_input(const synth::PairedSample& pair, PairInput<float>& in, Rng& noise_rng,
                     int z_dim);

// Held-out diagnostics used by convergence checks and reports.
double mean_mask_recon_error(L3Net<float>& net, const synth::DatasetSpec& data, int n);
double mean_image_recon_error(L3Net<float>& net, const synth::DatasetSpec& data, int n);
// MSE(u_hat, u_f) normalised by the element variance of u_f.
double mp_prediction_error_ratio(L3Net<float>& net, const synth::DatasetSpec& data, int n);
// Mean squared alignment gap ||u_hat - u_f||^2 / a_size on held-out samples.
double mean_alignment_error(L3Net<float>& net, const synth::DatasetSpec& data, int n);

}  // namespace l3::train
