#include "l3/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace l3::metrics {
namespace {

// Equal-mass discretisation via quantile edges. Ties share a bin (the edge
// comparison is by value), so an exact copy of a discrete factor keeps each
// factor level in a single bin.
std::vector<int> quantile_bins(const double* values, int n, int stride, int bins) {
    std::vector<double> sorted(n);
    for (int i = 0; i < n; ++i) sorted[i] = values[std::size_t(i) * stride];
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> edges(bins - 1);
    for (int k = 1; k < bins; ++k) edges[k - 1] = sorted[std::size_t(k) * n / bins];
    std::vector<int> bin(n);
    for (int i = 0; i < n; ++i) {
        const double v = values[std::size_t(i) * stride];
        bin[i] = static_cast<int>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin());
    }
    return bin;
}

double column_variance(const double* values, int n, int stride) {
    double sum = 0, sum2 = 0;
    for (int i = 0; i < n; ++i) {
        const double v = values[std::size_t(i) * stride];
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / n;
    return std::max(0.0, sum2 / n - mean * mean);
}

double discrete_mi(const std::vector<int>& a, int ka, const std::vector<int>& b, int kb) {
    const int n = static_cast<int>(a.size());
    std::vector<double> joint(std::size_t(ka) * kb, 0.0);
    std::vector<double> pa(ka, 0.0), pb(kb, 0.0);
    const double w = 1.0 / n;
    for (int i = 0; i < n; ++i) {
        joint[std::size_t(a[i]) * kb + b[i]] += w;
        pa[a[i]] += w;
        pb[b[i]] += w;
    }
    double mi = 0;
    for (int x = 0; x < ka; ++x)
        for (int y = 0; y < kb; ++y) {
            const double p = joint[std::size_t(x) * kb + y];
            if (p > 0) mi += p * std::log(p / (pa[x] * pb[y]));
        }
    return std::max(0.0, mi);
}

// ---------------------------------------------------------------------------
// Regression tree with impurity-decrease feature importances.
// ---------------------------------------------------------------------------

struct TreeFitter {
    const RepresentationTable& table;
    const std::vector<double>& y;
    const DciConfig& cfg;
    Rng& rng;
    std::vector<double>& importance;  // z_dim entries, accumulated

    struct Stats {
        double sum = 0, sum2 = 0;
        int n = 0;
        double sse() const { return n ? sum2 - sum * sum / n : 0.0; }
    };

    Stats stats_of(const std::vector<int>& idx) const {
        Stats s;
        for (int i : idx) {
            s.sum += y[i];
            s.sum2 += y[i] * y[i];
            ++s.n;
        }
        return s;
    }

    void split(std::vector<int>& idx, int depth) {
        const Stats parent = stats_of(idx);
        if (depth >= cfg.depth || parent.n < 2 * cfg.min_leaf || parent.sse() < 1e-12) return;

        const int p = table.z_dim;
        double best_gain = 1e-12;
        int best_feat = -1;
        double best_thresh = 0;
        for (int feat = 0; feat < p; ++feat) {
            std::vector<int> order = idx;
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                return table.z[std::size_t(a) * p + feat] < table.z[std::size_t(b) * p + feat];
            });
            double lsum = 0, lsum2 = 0;
            for (std::size_t r = 0; r + 1 < order.size(); ++r) {
                const double v = y[order[r]];
                lsum += v;
                lsum2 += v * v;
                const int ln = static_cast<int>(r) + 1;
                const int rn = parent.n - ln;
                const double xl = table.z[std::size_t(order[r]) * p + feat];
                const double xr = table.z[std::size_t(order[r + 1]) * p + feat];
                if (xl == xr) continue;  // no threshold between equal values
                if (ln < cfg.min_leaf || rn < cfg.min_leaf) continue;
                const double lsse = lsum2 - lsum * lsum / ln;
                const double rsum = parent.sum - lsum;
                const double rsum2 = parent.sum2 - lsum2;
                const double rsse = rsum2 - rsum * rsum / rn;
                const double gain = parent.sse() - lsse - rsse;
                if (gain > best_gain) {
                    best_gain = gain;
                    best_feat = feat;
                    best_thresh = 0.5 * (xl + xr);
                }
            }
        }
        if (best_feat < 0) return;
        importance[best_feat] += best_gain;
        std::vector<int> left, right;
        for (int i : idx)
            (table.z[std::size_t(i) * table.z_dim + best_feat] <= best_thresh ? left : right)
                .push_back(i);
        idx.clear();
        idx.shrink_to_fit();
        split(left, depth + 1);
        split(right, depth + 1);
    }
};

}  // namespace

std::vector<double> mutual_info_matrix(const RepresentationTable& table, int bins,
                                       std::vector<std::string>* warnings) {
    const int n = table.n();
    if (n < 2) throw std::invalid_argument("mutual_info_matrix: need at least 2 rows");
    std::vector<double> mi(std::size_t(table.z_dim) * table.f_dim, 0.0);
    std::vector<std::vector<int>> factor_vals(table.f_dim);
    std::vector<int> factor_card(table.f_dim, 0);
    for (int k = 0; k < table.f_dim; ++k) {
        factor_vals[k].resize(n);
        for (int i = 0; i < n; ++i) {
            factor_vals[k][i] = table.f[std::size_t(i) * table.f_dim + k];
            factor_card[k] = std::max(factor_card[k], factor_vals[k][i] + 1);
        }
    }
    for (int j = 0; j < table.z_dim; ++j) {
        if (column_variance(table.z.data() + j, n, table.z_dim) < 1e-12) {
            if (warnings)
                warnings->push_back("latent " + std::to_string(j) + " is degenerate; MI row set to 0");
            continue;
        }
        const std::vector<int> zb = quantile_bins(table.z.data() + j, n, table.z_dim, bins);
        for (int k = 0; k < table.f_dim; ++k)
            mi[std::size_t(j) * table.f_dim + k] = discrete_mi(zb, bins, factor_vals[k], factor_card[k]);
    }
    return mi;
}

double factor_entropy(const RepresentationTable& table, int factor) {
    const int n = table.n();
    int card = 0;
    for (int i = 0; i < n; ++i)
        card = std::max(card, table.f[std::size_t(i) * table.f_dim + factor] + 1);
    std::vector<double> p(card, 0.0);
    for (int i = 0; i < n; ++i) p[table.f[std::size_t(i) * table.f_dim + factor]] += 1.0 / n;
    double h = 0;
    for (double q : p)
        if (q > 0) h -= q * std::log(q);
    return h;
}

double mig(const RepresentationTable& table, int bins, const std::vector<int>& group) {
    return mig_from_mi(mutual_info_matrix(table, bins), table, group);
}

double mig_from_mi(const std::vector<double>& mi, const RepresentationTable& table,
                   const std::vector<int>& group) {
    double acc = 0;
    for (int k : group) {
        double top = 0, second = 0;
        for (int j = 0; j < table.z_dim; ++j) {
            const double v = mi[std::size_t(j) * table.f_dim + k];
            if (v > top) {
                second = top;
                top = v;
            } else if (v > second) {
                second = v;
            }
        }
        const double h = factor_entropy(table, k);
        if (h > 1e-12) acc += (top - second) / h;
    }
    return std::clamp(acc / group.size(), 0.0, 1.0);
}

std::vector<double> dci_importance_matrix(const RepresentationTable& table, const DciConfig& cfg,
                                          const std::vector<int>& group) {
    const int n = table.n();
    const int p = table.z_dim;
    const int g = static_cast<int>(group.size());
    std::vector<double> R(std::size_t(p) * g, 0.0);
    for (int gi = 0; gi < g; ++gi) {
        const int factor = group[gi];
        std::vector<double> y(n);
        for (int i = 0; i < n; ++i) y[i] = table.f[std::size_t(i) * table.f_dim + factor];
        std::vector<double> acc(p, 0.0);
        for (int t = 0; t < cfg.trees; ++t) {
            Rng rng(hash_combine(cfg.seed, 0xdc1ull, std::uint64_t(factor), std::uint64_t(t)));
            std::vector<int> idx(n);
            for (int i = 0; i < n; ++i) idx[i] = static_cast<int>(rng.below(std::uint64_t(n)));
            std::vector<double> imp(p, 0.0);
            TreeFitter fitter{table, y, cfg, rng, imp};
            fitter.split(idx, 0);
            double total = 0;
            for (double v : imp) total += v;
            if (total > 0)
                for (int j = 0; j < p; ++j) acc[j] += imp[j] / total;
        }
        double total = 0;
        for (double v : acc) total += v;
        if (total > 0)
            for (int j = 0; j < p; ++j) R[std::size_t(j) * g + gi] = acc[j] / total;
    }
    return R;
}

double dci_from_importance(const std::vector<double>& importance, int z_dim, int n_factors,
                           std::vector<std::string>* warnings) {
    double total = 0;
    for (double v : importance) total += v;
    if (total <= 0) {
        if (warnings) warnings->push_back("all-zero importance matrix; DCI set to 0");
        return 0.0;
    }
    const double log_f = std::log(static_cast<double>(n_factors));
    double score = 0;
    for (int j = 0; j < z_dim; ++j) {
        double row_sum = 0;
        for (int k = 0; k < n_factors; ++k) row_sum += importance[std::size_t(j) * n_factors + k];
        if (row_sum <= 0) continue;
        double h = 0;
        for (int k = 0; k < n_factors; ++k) {
            const double q = importance[std::size_t(j) * n_factors + k] / row_sum;
            if (q > 0) h -= q * std::log(q);
        }
        const double d = (n_factors > 1) ? 1.0 - h / log_f : 1.0;
        score += (row_sum / total) * d;
    }
    return std::clamp(score, 0.0, 1.0);
}

double dci_disentanglement(const RepresentationTable& table, const DciConfig& cfg,
                           const std::vector<int>& group, std::vector<std::string>* warnings) {
    const std::vector<double> R = dci_importance_matrix(table, cfg, group);
    return dci_from_importance(R, table.z_dim, static_cast<int>(group.size()), warnings);
}

int argmin_variance_dim(const double* z, int count, int z_dim, const std::vector<char>& excluded) {
    int best = -1;
    double best_var = 0;
    for (int j = 0; j < z_dim; ++j) {
        if (!excluded.empty() && excluded[j]) continue;
        const double var = column_variance(z + j, count, z_dim);
        if (best < 0 || var < best_var) {
            best = j;
            best_var = var;
        }
    }
    return best;
}

namespace {

struct VoteSet {
    std::vector<int> dim, factor;      // 2 * votes entries; first half trains
    std::vector<std::string> warnings;
    bool degenerate = false;
};

VoteSet collect_votes(const FvaeSampler& sampler, const FvaeConfig& cfg,
                      const std::vector<int>& factor_pool) {
    VoteSet vs;
    std::vector<double> ref(std::size_t(cfg.std_samples) * cfg.z_dim);
    {
        Rng rng(hash_combine(cfg.seed, 0xf5d5ull));
        sampler(-1, 0, cfg.std_samples, rng, ref.data());
    }
    std::vector<double> global_std(cfg.z_dim, 0.0);
    std::vector<char> excluded(cfg.z_dim, 0);
    bool any_active = false;
    for (int j = 0; j < cfg.z_dim; ++j) {
        global_std[j] = std::sqrt(column_variance(ref.data() + j, cfg.std_samples, cfg.z_dim));
        if (global_std[j] < 1e-6) {
            excluded[j] = 1;
            vs.warnings.push_back("latent " + std::to_string(j) +
                                  " has zero global std; excluded from voting");
        } else {
            any_active = true;
        }
    }
    if (!any_active) {
        vs.warnings.push_back("all latents degenerate; FVAE set to 0");
        vs.degenerate = true;
        return vs;
    }
    const int total_votes = 2 * cfg.votes;
    vs.dim.assign(total_votes, -1);
    vs.factor.assign(total_votes, 0);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 8)
#endif
    for (int v = 0; v < total_votes; ++v) {
        Rng rng(hash_combine(cfg.seed, 0xf5aeull, std::uint64_t(v)));
        std::vector<double> batch(std::size_t(cfg.batch) * cfg.z_dim);
        const int factor = factor_pool[rng.below(factor_pool.size())];
        const int value = static_cast<int>(rng.below(std::uint64_t(synth::kFactorRanges[factor])));
        sampler(factor, value, cfg.batch, rng, batch.data());
        for (int i = 0; i < cfg.batch; ++i)
            for (int j = 0; j < cfg.z_dim; ++j)
                if (!excluded[j]) batch[std::size_t(i) * cfg.z_dim + j] /= global_std[j];
        vs.dim[v] = argmin_variance_dim(batch.data(), cfg.batch, cfg.z_dim, excluded);
        vs.factor[v] = factor;
    }
    return vs;
}

double score_votes(const VoteSet& vs, const FvaeConfig& cfg, const std::vector<int>& group) {
    if (vs.degenerate) return 0.0;
    std::vector<char> in_group(synth::kFactorCount, 0);
    for (int k : group) in_group[k] = 1;
    std::vector<std::vector<int>> counts(cfg.z_dim, std::vector<int>(synth::kFactorCount, 0));
    for (int v = 0; v < cfg.votes; ++v)
        if (vs.dim[v] >= 0 && in_group[vs.factor[v]]) ++counts[vs.dim[v]][vs.factor[v]];
    std::vector<int> classifier(cfg.z_dim, group.empty() ? 0 : group.front());
    for (int j = 0; j < cfg.z_dim; ++j) {
        int best = classifier[j];
        for (int k : group)
            if (counts[j][k] > counts[j][best]) best = k;
        classifier[j] = best;
    }
    int correct = 0, total = 0;
    for (int v = cfg.votes; v < 2 * cfg.votes; ++v) {
        if (vs.dim[v] < 0 || !in_group[vs.factor[v]]) continue;
        ++total;
        correct += classifier[vs.dim[v]] == vs.factor[v];
    }
    return total ? std::clamp(double(correct) / total, 0.0, 1.0) : 0.0;
}

}  // namespace

double fvae_score(const FvaeSampler& sampler, const FvaeConfig& cfg, const std::vector<int>& group,
                  std::vector<std::string>* warnings) {
    const VoteSet vs = collect_votes(sampler, cfg, group);
    if (warnings) warnings->insert(warnings->end(), vs.warnings.begin(), vs.warnings.end());
    return score_votes(vs, cfg, group);
}

std::vector<double> fvae_group_scores(const FvaeSampler& sampler, const FvaeConfig& cfg,
                                      const std::vector<std::vector<int>>& groups,
                                      std::vector<std::string>* warnings) {
    std::vector<int> pool;
    for (const auto& g : groups)
        for (int k : g)
            if (std::find(pool.begin(), pool.end(), k) == pool.end()) pool.push_back(k);
    std::sort(pool.begin(), pool.end());
    const VoteSet vs = collect_votes(sampler, cfg, pool);
    if (warnings) warnings->insert(warnings->end(), vs.warnings.begin(), vs.warnings.end());
    std::vector<double> out;
    out.reserve(groups.size());
    for (const auto& g : groups) out.push_back(score_votes(vs, cfg, g));
    return out;
}

double normalize_score(double target, double source) {
    if (source <= 1e-6)
        throw std::domain_error("normalize_score: source score too small for normalization");
    return target / source;
}

}  // namespace l3::metrics
