#pragma once

#include <functional>
#include <string>
#include <vector>

#include "l3/rng.hpp"
#include "l3/synth.hpp"

namespace l3::metrics {

// Row-aligned codes and ground-truth factors for one evaluation domain.
struct RepresentationTable {
    int z_dim = 10;
    int f_dim = 6;
    std::vector<double> z;  // n x z_dim
    std::vector<int> f;     // n x f_dim

    int n() const { return z_dim ? static_cast<int>(z.size()) / z_dim : 0; }
};

inline std::vector<int> all_factors() { return {0, 1, 2, 3, 4, 5}; }

// Mutual information between each latent (discretised into `bins` equal-mass
// bins) and each factor, natural log. Zero-variance latents get a zero row
// and a warning.
std::vector<double> mutual_info_matrix(const RepresentationTable& table, int bins,
                                       std::vector<std::string>* warnings = nullptr);

double factor_entropy(const RepresentationTable& table, int factor);

// Mean over the group's factors of (top MI - second MI) / H(f), clamped to
// [0,1].
double mig(const RepresentationTable& table, int bins, const std::vector<int>& group);
// Same, from a precomputed z_dim x f_dim MI matrix.
double mig_from_mi(const std::vector<double>& mi, const RepresentationTable& table,
                   const std::vector<int>& group);

struct DciConfig {
    int trees = 10;
    int depth = 8;
    int min_leaf = 5;
    std::uint64_t seed = 0;
};

// Importance matrix (z_dim x group size) from per-factor tree-ensemble
// regressors; non-negative, columns normalised to unit sum.
std::vector<double> dci_importance_matrix(const RepresentationTable& table, const DciConfig& cfg,
                                          const std::vector<int>& group);

// Entropy-based aggregation of an importance matrix: score = sum_j rho_j d_j
// with d_j = 1 - H(normalised row j) / log(n_factors).
double dci_from_importance(const std::vector<double>& importance, int z_dim, int n_factors,
                           std::vector<std::string>* warnings = nullptr);

double dci_disentanglement(const RepresentationTable& table, const DciConfig& cfg,
                           const std::vector<int>& group,
                           std::vector<std::string>* warnings = nullptr);

// Supplies `count` codes (count x z_dim doubles) drawn with `factor` fixed to
// `value`; factor == -1 requests unconstrained samples (for the global std).
using FvaeSampler = std::function<void(int factor, int value, int count, Rng& rng, double* out_z)>;

struct FvaeConfig {
    int votes = 500;
    int batch = 64;
    int std_samples = 2048;
    int z_dim = 10;
    std::uint64_t seed = 0;
};

// Majority-vote accuracy of the argmin-variance latent under a fixed factor.
// Votes are split into a training half (fits the classifier) and a held-out
// half (scores it). The sampler must be safe to call concurrently.
double fvae_score(const FvaeSampler& sampler, const FvaeConfig& cfg, const std::vector<int>& group,
                  std::vector<std::string>* warnings = nullptr);

// One shared vote pass over the union of the groups, scored per group by
// restricting to that group's votes (factors are drawn uniformly, so the
// restriction matches sampling from the group directly).
std::vector<double> fvae_group_scores(const FvaeSampler& sampler, const FvaeConfig& cfg,
                                      const std::vector<std::vector<int>>& groups,
                                      std::vector<std::string>* warnings = nullptr);

// One vote: index of the smallest per-dimension variance over the batch,
// excluded dims skipped, ties to the lower index. Exposed for direct tests.
int argmin_variance_dim(const double* z, int count, int z_dim, const std::vector<char>& excluded);

// target/source ratio; source must exceed 1e-6.
double normalize_score(double target, double source);

}  // namespace l3::metrics
