#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include "l3/params.hpp"
#include "l3/rng.hpp"

namespace l3 {

// Evaluates the loss; when grads != nullptr also accumulates the analytic
// gradient (grads is cleared by the checker before the call).
using LossFn = std::function<double(ParameterStore<double>&, GradientSet<double>*)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_coordinate;
    int probes = 0;
};

// Central-difference gradient verification on randomly probed trainable
// coordinates. Runs in 64-bit; loss_fn must be deterministic (fix any noise
// draws and discrete selections in the closure).
inline GradCheckResult grad_check(const LossFn& loss_fn, ParameterStore<double>& params,
                                  int probe_count, double h, std::uint64_t seed = 0) {
    GradientSet<double> grads(params);
    const double base = loss_fn(params, &grads);
    if (!std::isfinite(base)) throw std::runtime_error("grad_check: non-finite loss at base point");

    std::vector<std::size_t> trainable_coords;
    trainable_coords.reserve(params.total_size());
    for (std::size_t i = 0; i < params.entry_count(); ++i) {
        const auto& e = params.entry(i);
        if (!e.trainable) continue;
        for (std::size_t j = 0; j < e.size; ++j) trainable_coords.push_back(e.offset + j);
    }
    if (trainable_coords.empty()) throw std::runtime_error("grad_check: no trainable coordinates");

    Rng rng(hash_combine(seed, 0x67726164ull));
    GradCheckResult result;
    result.probes = probe_count;
    for (int p = 0; p < probe_count; ++p) {
        const std::size_t c = trainable_coords[rng.below(trainable_coords.size())];
        double& theta = params.flat()[c];
        const double orig = theta;
        theta = orig + h;
        const double fp = loss_fn(params, nullptr);
        theta = orig - h;
        const double fm = loss_fn(params, nullptr);
        theta = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("grad_check: non-finite loss probing " + params.locate(c));
        const double numeric = (fp - fm) / (2.0 * h);
        const double analytic = grads.flat[c];
        const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
        const double rel = std::fabs(analytic - numeric) / denom;
        if (rel > result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst_coordinate = params.locate(c);
        }
    }
    return result;
}

}  // namespace l3
