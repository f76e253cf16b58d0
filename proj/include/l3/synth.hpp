#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "l3/rng.hpp"
#include "l3/tensor.hpp"

namespace l3::synth {

// Canvas and mask-stack dimensions.
inline constexpr int kImageSize = 64;
inline constexpr int kMaskChannels = 8;
inline constexpr int kFactorCount = 6;

enum class Domain { Flat, Textured };

inline const char* domain_name(Domain d) { return d == Domain::Flat ? "flat" : "textured"; }

// Discrete generative factors of one scene. Index order is fixed:
// [shape, size, pos_x, pos_y, obj_color, bg_color].
struct FactorVector {
    int shape_id = 0;   // 0 square, 1 circle, 2 triangle, 3 cross
    int size = 0;       // side = 10 + 6*size pixels
    int pos_x = 0;      // centre x = 16 + 4*pos_x
    int pos_y = 0;
    int obj_color = 0;  // 4 palette entries
    int bg_color = 0;   // 3 palette entries

    bool operator==(const FactorVector&) const = default;
};

inline constexpr std::array<int, kFactorCount> kFactorRanges = {4, 4, 8, 8, 4, 3};
inline constexpr int kFactorSpace = 4 * 4 * 8 * 8 * 4 * 3;  // 12288

// The two factor groups used for grouped evaluation: geometry is visible in
// the masks, colours only in the image.
inline constexpr std::array<int, 4> kSegmaskPresentedFactors = {0, 1, 2, 3};
inline constexpr std::array<int, 2> kAuxiliaryExpandedFactors = {4, 5};

int factor_get(const FactorVector& f, int index);
void factor_set(FactorVector& f, int index, int value);
void validate(const FactorVector& f);

// Bijection with [0, kFactorSpace) in index order.
int factor_to_ordinal(const FactorVector& f);
FactorVector ordinal_to_factors(int ordinal);
std::uint64_t factor_hash(const FactorVector& f);

int object_side(int size);
// Geometry predicate shared by the renderer and the mask oracle; pixel (px,
// py) is sampled at its centre.
bool object_contains(const FactorVector& f, int px, int py);
// 64x64 byte grid, 1 on object pixels.
std::vector<std::uint8_t> object_region(const FactorVector& f);

const std::array<std::array<float, 3>, 4>& object_palette(Domain d);
const std::array<std::array<float, 3>, 3>& background_palette(Domain d);

// One rendered scene. Masks are a binary partition of the pixel grid and do
// not depend on the domain.
struct Sample {
    Tensor<float> image;          // 3x64x64 in [0,1]
    Tensor<std::uint8_t> masks;   // 8x64x64 in {0,1}
    FactorVector factors;
    Domain domain = Domain::Flat;
    std::uint64_t mask_seed = 0;
};

// Image-and-masks view with the factors stripped; the only thing the
// target-adapt stage is allowed to see.
struct TargetSample {
    Tensor<float> image;
    Tensor<std::uint8_t> masks;
};

struct PairedSample {
    Sample a, b;
    std::vector<int> changed;  // sorted factor indices, |changed| == k
};

Tensor<float> render(const FactorVector& f, Domain domain);
Tensor<std::uint8_t> oracle_masks(const FactorVector& f, std::uint64_t mask_seed);
Sample make_sample(const FactorVector& f, Domain domain, std::uint64_t mask_seed);
TargetSample strip_factors(const Sample& s);

// Pair with exactly k factors altered; resampled values always differ from
// the originals. Throws on k outside [1,6].
PairedSample make_pair(std::uint64_t rng_seed, int k, Domain domain);

// Deterministic, lazily addressable sample stream. Factor/mask sequences
// depend only on (n, seed, exhaustive), never on the domain.
struct DatasetSpec {
    Domain domain = Domain::Flat;
    int n = 0;
    std::uint64_t seed = 0;
    bool exhaustive = false;  // n must be kFactorSpace; enumerates every factor combination once

    FactorVector factors_at(int i) const;
    std::uint64_t mask_seed_at(int i) const;
    Sample at(int i) const;
};

std::vector<Sample> dataset(Domain domain, int n, std::uint64_t seed, bool exhaustive = false);

// Lazily addressable pair stream for weakly supervised training.
struct PairDatasetSpec {
    Domain domain = Domain::Flat;
    int n = 0;
    std::uint64_t seed = 0;
    int k = 2;

    PairedSample at(int i) const;
};

// Writes a split directory: manifest.txt plus one flat binary record per
// sample (layout documented in the manifest and README).
void export_split(const std::string& dir, const DatasetSpec& spec);

}  // namespace l3::synth
