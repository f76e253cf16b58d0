#include <doctest.h>

#include <cmath>

#include "l3/metrics.hpp"

using namespace l3;
using namespace l3::metrics;

namespace {

// Constructed tables: z columns are copies of factors, noise, or constants.
enum class Latent { CopyFactor, Noise, Constant };

RepresentationTable make_table(int n, std::uint64_t seed,
                               const std::vector<std::pair<Latent, int>>& plan) {
    RepresentationTable t;
    t.z_dim = static_cast<int>(plan.size());
    t.f_dim = synth::kFactorCount;
    t.z.resize(std::size_t(n) * t.z_dim);
    t.f.resize(std::size_t(n) * t.f_dim);
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < t.f_dim; ++k)
            t.f[std::size_t(i) * t.f_dim + k] = static_cast<int>(rng.below(synth::kFactorRanges[k]));
        for (int j = 0; j < t.z_dim; ++j) {
            double v = 0;
            switch (plan[j].first) {
                case Latent::CopyFactor:
                    v = t.f[std::size_t(i) * t.f_dim + plan[j].second];
                    break;
                case Latent::Noise: v = rng.normal(); break;
                case Latent::Constant: v = 1.25; break;
            }
            t.z[std::size_t(i) * t.z_dim + j] = v;
        }
    }
    return t;
}

std::vector<std::pair<Latent, int>> oracle_plan() {
    return {{Latent::CopyFactor, 0}, {Latent::CopyFactor, 1}, {Latent::CopyFactor, 2},
            {Latent::CopyFactor, 3}, {Latent::CopyFactor, 4}, {Latent::CopyFactor, 5},
            {Latent::Constant, 0},   {Latent::Constant, 0},   {Latent::Constant, 0},
            {Latent::Constant, 0}};
}

std::vector<std::pair<Latent, int>> noise_plan() {
    std::vector<std::pair<Latent, int>> p(10, {Latent::Noise, 0});
    return p;
}

FvaeSampler table_free_sampler(const std::vector<std::pair<Latent, int>>& plan) {
    return [plan](int factor, int value, int count, Rng& rng, double* out) {
        for (int i = 0; i < count; ++i) {
            synth::FactorVector f;
            for (int k = 0; k < synth::kFactorCount; ++k)
                synth::factor_set(f, k, static_cast<int>(rng.below(synth::kFactorRanges[k])));
            if (factor >= 0) synth::factor_set(f, factor, value);
            for (std::size_t j = 0; j < plan.size(); ++j) {
                double v = 0;
                switch (plan[j].first) {
                    case Latent::CopyFactor: v = synth::factor_get(f, plan[j].second); break;
                    case Latent::Noise: v = rng.normal(); break;
                    case Latent::Constant: v = 1.25; break;
                }
                out[std::size_t(i) * plan.size() + j] = v;
            }
        }
    };
}

}  // namespace

TEST_CASE("mutual information: copied factor reaches its entropy") {
    const auto t = make_table(5000, 3, oracle_plan());
    const auto mi = mutual_info_matrix(t, 20);
    // latent 2 copies pos_x with 8 uniform values: MI close to ln 8
    CHECK(mi[2 * 6 + 2] >= 0.95 * std::log(8.0));
    CHECK(mi[2 * 6 + 2] <= 1.0001 * std::log(8.0));
    // independent latent against any factor stays near zero
    const auto tn = make_table(5000, 4, noise_plan());
    const auto min = mutual_info_matrix(tn, 20);
    for (int k = 0; k < 6; ++k) CHECK(min[k] < 0.05);
}

TEST_CASE("mutual information: constant latent row is zero with a warning") {
    auto t = make_table(2000, 5, oracle_plan());
    std::vector<std::string> warnings;
    const auto mi = mutual_info_matrix(t, 20, &warnings);
    for (int k = 0; k < 6; ++k) CHECK(mi[6 * 6 + k] == 0.0);
    CHECK(!warnings.empty());
}

TEST_CASE("mig: oracle, duplicated latent, noise") {
    CHECK(mig(make_table(5000, 7, oracle_plan()), 20, all_factors()) >= 0.95);
    CHECK(mig(make_table(5000, 8, noise_plan()), 20, all_factors()) < 0.05);

    // two latents copying factor 0 zero out its gap
    auto plan = oracle_plan();
    plan[6] = {Latent::CopyFactor, 0};
    const auto t = make_table(5000, 9, plan);
    const auto full = mig(t, 20, all_factors());
    const auto rest = mig(t, 20, {1, 2, 3, 4, 5});
    CHECK(full == doctest::Approx(rest * 5.0 / 6.0).epsilon(0.05));
}

TEST_CASE("dci aggregation closed forms") {
    const int z = 10;
    SUBCASE("one-hot importance scores 1") {
        std::vector<double> R(z * 6, 0.0);
        for (int j = 0; j < z; ++j) R[std::size_t(j) * 6 + (j % 6)] = 1.0;
        CHECK(dci_from_importance(R, z, 6) == doctest::Approx(1.0));
    }
    SUBCASE("uniform importance scores 0") {
        std::vector<double> R(z * 6, 1.0 / 6.0);
        CHECK(dci_from_importance(R, z, 6) == doctest::Approx(0.0));
    }
    SUBCASE("half-split rows score 1 - ln2/ln6") {
        std::vector<double> R(z * 6, 0.0);
        for (int j = 0; j < z; ++j) {
            R[std::size_t(j) * 6 + 0] = 0.5;
            R[std::size_t(j) * 6 + 1] = 0.5;
        }
        CHECK(dci_from_importance(R, z, 6) ==
              doctest::Approx(1.0 - std::log(2.0) / std::log(6.0)).epsilon(1e-9));
    }
    SUBCASE("all-zero importance scores 0 with warning") {
        std::vector<double> R(z * 6, 0.0);
        std::vector<std::string> warnings;
        CHECK(dci_from_importance(R, z, 6, &warnings) == 0.0);
        CHECK(!warnings.empty());
    }
}

TEST_CASE("dci end to end: oracle high, noise low") {
    DciConfig cfg;
    cfg.seed = 11;
    CHECK(dci_disentanglement(make_table(5000, 13, oracle_plan()), cfg, all_factors()) >= 0.95);
    CHECK(dci_disentanglement(make_table(5000, 14, noise_plan()), cfg, all_factors()) <= 0.2);
}

TEST_CASE("fvae vote mechanics: argmin variance dimension wins") {
    // dim 2 constant within the batch, others vary
    const int n = 16, z = 4;
    std::vector<double> batch(n * z);
    Rng rng(21);
    for (int i = 0; i < n; ++i) {
        batch[std::size_t(i) * z + 0] = rng.normal();
        batch[std::size_t(i) * z + 1] = rng.normal();
        batch[std::size_t(i) * z + 2] = 3.25;
        batch[std::size_t(i) * z + 3] = rng.normal();
    }
    CHECK(argmin_variance_dim(batch.data(), n, z, {}) == 2);
    // excluding dim 2 moves the vote elsewhere
    std::vector<char> excluded(z, 0);
    excluded[2] = 1;
    CHECK(argmin_variance_dim(batch.data(), n, z, excluded) != 2);
}

TEST_CASE("fvae score: oracle high, random chance-level") {
    FvaeConfig cfg;
    cfg.votes = 500;
    cfg.batch = 64;
    cfg.std_samples = 2048;
    cfg.seed = 5;
    std::vector<std::string> warnings;
    const double oracle = fvae_score(table_free_sampler(oracle_plan()), cfg, all_factors(), &warnings);
    CHECK(oracle >= 0.95);
    CHECK(!warnings.empty());  // four constant latents are excluded

    const double chance = fvae_score(table_free_sampler(noise_plan()), cfg, all_factors());
    CHECK(chance == doctest::Approx(1.0 / 6.0).epsilon(0.4));  // 1/6 +- 0.06
    CHECK(std::fabs(chance - 1.0 / 6.0) <= 0.06);
}

TEST_CASE("normalize_score") {
    CHECK(normalize_score(0.85, 0.89) == doctest::Approx(0.9550561798).epsilon(1e-9));
    CHECK(normalize_score(0.7, 0.7) == doctest::Approx(1.0));
    CHECK(normalize_score(0.3, 0.6) == doctest::Approx(0.5));
    CHECK_THROWS_AS(normalize_score(0.5, 1e-7), std::domain_error);
    // scale consistency
    CHECK(normalize_score(0.3 * 2.0, 0.6 * 2.0) == doctest::Approx(0.5));
}

TEST_CASE("group scores: geometric-only oracle splits the groups") {
    // geometry latents informative, colours unpredictable
    std::vector<std::pair<Latent, int>> plan = {
        {Latent::CopyFactor, 0}, {Latent::CopyFactor, 1}, {Latent::CopyFactor, 2},
        {Latent::CopyFactor, 3}, {Latent::Noise, 0},      {Latent::Noise, 0},
        {Latent::Noise, 0},      {Latent::Noise, 0},      {Latent::Noise, 0},
        {Latent::Noise, 0}};
    const auto t = make_table(5000, 31, plan);
    const std::vector<int> seg = {0, 1, 2, 3}, aux = {4, 5};
    CHECK(mig(t, 20, seg) >= 0.9);
    CHECK(mig(t, 20, aux) <= 0.2);
    // groups partition the factors; the full-factor MIG is the group mean
    const double full = mig(t, 20, all_factors());
    const double m_seg = mig(t, 20, seg), m_aux = mig(t, 20, aux);
    CHECK(full >= std::min(m_seg, m_aux) - 1e-9);
    CHECK(full <= std::max(m_seg, m_aux) + 1e-9);
    CHECK(full == doctest::Approx((4 * m_seg + 2 * m_aux) / 6).epsilon(1e-6));
}
