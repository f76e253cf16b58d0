#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "l3/model.hpp"
#include "l3/synth.hpp"

namespace l3 {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Full experiment configuration. Parsed from a line-oriented text format
// ("section.key = value", '#' comments); unknown keys are rejected with the
// offending line number. echo() serialises every key in canonical order and
// round-trips through parse().
struct ExperimentConfig {
    // data
    int source_pairs = 4096;
    int target_images = 2048;
    int eval_samples = 5000;
    synth::Domain source_domain = synth::Domain::Flat;
    synth::Domain target_domain = synth::Domain::Textured;

    // train
    int k = 2;
    int batch = 64;
    int epochs_source = 30;
    int epochs_target = 30;
    double lr_source = 3e-4;
    double lr_target = 3e-4;
    double beta_kl = 0.02;
    double beta_ut = 0.08;

    LossWeights weights;
    ModelDims dims;

    Variant variant = Variant::Full;
    bool z_align = true;

    std::vector<std::uint64_t> seeds = {1, 2, 3};

    // eval
    int fvae_votes = 500;
    int fvae_batch = 64;
    int fvae_std_samples = 2048;
    int mi_bins = 20;
    int dci_trees = 10;
    int dci_depth = 8;

    bool operator==(const ExperimentConfig&) const = default;

    void validate() const;
    std::string echo() const;
    std::string sha() const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

}  // namespace l3
