// Timing comparison between the OpenMP kernels and the serial reference
// implementations at the shapes the training loop actually runs, plus the
// slot-parallel batch loop against a single-slot run.

#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "l3/config.hpp"
#include "l3/kernels.hpp"
#include "l3/rng.hpp"
#include "l3/serial_ref.hpp"
#include "l3/train.hpp"

using namespace l3;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <class F>
double time_best_of(F&& fn, int reps) {
    double best = 1e100;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = Clock::now();
        fn();
        best = std::min(best, seconds_since(t0));
    }
    return best;
}

std::vector<float> random_vec(std::size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
    return v;
}

void bench_conv(const char* name, const ConvShape& s, int reps, int inner) {
    Rng rng(1);
    const auto x = random_vec(s.in_count(), rng);
    const auto w = random_vec(s.weight_count(), rng);
    const auto b = random_vec(s.out_c, rng);
    std::vector<float> y(s.out_count());
    const double flops = 2.0 * s.out_count() * s.in_c * s.k * s.k * inner;

    const double t_par = time_best_of(
        [&] {
            for (int i = 0; i < inner; ++i) conv2d_fwd(x.data(), w.data(), b.data(), y.data(), s);
        },
        reps);
    const double t_ser = time_best_of(
        [&] {
            for (int i = 0; i < inner; ++i)
                ref::conv2d_fwd(x.data(), w.data(), b.data(), y.data(), s);
        },
        reps);
    std::printf("%-28s %10.3f ms %10.3f ms %6.2fx  %7.2f GFLOP/s\n", name, t_ser * 1e3, t_par * 1e3,
                t_ser / t_par, flops / t_par * 1e-9);
}

void bench_linear(const char* name, int in, int out, int reps, int inner) {
    Rng rng(2);
    const auto x = random_vec(in, rng);
    const auto w = random_vec(std::size_t(in) * out, rng);
    const auto b = random_vec(out, rng);
    std::vector<float> y(out);
    const double flops = 2.0 * in * out * inner;
    const double t_par = time_best_of(
        [&] {
            for (int i = 0; i < inner; ++i) linear_fwd(x.data(), w.data(), b.data(), y.data(), in, out);
        },
        reps);
    const double t_ser = time_best_of(
        [&] {
            for (int i = 0; i < inner; ++i)
                ref::linear_fwd(x.data(), w.data(), b.data(), y.data(), in, out);
        },
        reps);
    std::printf("%-28s %10.3f ms %10.3f ms %6.2fx  %7.2f GFLOP/s\n", name, t_ser * 1e3, t_par * 1e3,
                t_ser / t_par, flops / t_par * 1e-9);
}

void bench_training_batch() {
    ExperimentConfig cfg;
    cfg.source_pairs = 32;
    cfg.batch = 32;
    cfg.epochs_source = 1;
    cfg.seeds = {1};
    std::printf("\ntraining micro-epoch (32 pairs, full wiring)\n");
#ifdef _OPENMP
    const int max_threads = omp_get_max_threads();
#else
    const int max_threads = 1;
#endif
    for (int threads : {1, max_threads}) {
#ifdef _OPENMP
        omp_set_num_threads(threads);
#endif
        const auto t0 = Clock::now();
        auto result = train::source_train(cfg, 123);
        const double dt = seconds_since(t0);
        std::printf("  threads=%d  %8.2f ms/pair  (loss %.4f)\n", threads,
                    dt / cfg.source_pairs * 1e3, result.curve.rows.back()[1]);
    }
#ifdef _OPENMP
    omp_set_num_threads(max_threads);
#endif
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("openmp: disabled\n");
#endif
    std::printf("%-28s %13s %13s %7s %16s\n", "kernel", "serial", "parallel", "speedup",
                "parallel rate");
    bench_conv("conv 3x32x32 -> 6x16x16", ConvShape{3, 32, 32, 6, 4, 2, 1}, 5, 200);
    bench_conv("conv 6x16x16 -> 8x8x8", ConvShape{6, 16, 16, 8, 4, 2, 1}, 5, 200);
    bench_conv("conv 6x32x32 -> 3x32x32", ConvShape{6, 32, 32, 3, 3, 1, 1}, 5, 100);
    bench_linear("linear 512 -> 512", 512, 512, 5, 400);
    bench_linear("linear 1024 -> 512", 1024, 512, 5, 200);
    bench_training_batch();
    return 0;
}
