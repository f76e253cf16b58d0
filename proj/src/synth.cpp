#include "l3/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace l3::synth {

namespace {

// Seed-stream tags keep the independent RNG streams from colliding.
constexpr std::uint64_t kMaskStream = 0x6d61736bull;    // "mask"
constexpr std::uint64_t kPairStream = 0x70616972ull;    // "pair"
constexpr std::uint64_t kDataStream = 0x64617461ull;    // "data"
constexpr std::uint64_t kTextureStream = 0x74657874ull; // "text"

const std::array<std::array<float, 3>, 4> kObjPaletteFlat = {{
    {0.85f, 0.15f, 0.15f},  // red
    {0.15f, 0.80f, 0.20f},  // green
    {0.15f, 0.25f, 0.85f},  // blue
    {0.85f, 0.80f, 0.15f},  // yellow
}};

// Same hue families, shifted well outside the flat values so that every
// textured pixel differs from its flat counterpart even after the +-0.06
// texture jitter.
const std::array<std::array<float, 3>, 4> kObjPaletteTextured = {{
    {0.55f, 0.06f, 0.06f},
    {0.06f, 0.50f, 0.10f},
    {0.06f, 0.12f, 0.55f},
    {0.55f, 0.48f, 0.06f},
}};

const std::array<std::array<float, 3>, 3> kBgPaletteFlat = {{
    {0.10f, 0.10f, 0.12f},
    {0.45f, 0.48f, 0.55f},
    {0.80f, 0.75f, 0.62f},
}};

const std::array<std::array<float, 3>, 3> kBgPaletteTextured = {{
    {0.28f, 0.28f, 0.32f},
    {0.64f, 0.68f, 0.76f},
    {0.92f, 0.90f, 0.80f},
}};

constexpr float kTextureAmplitude = 0.06f;

float texture_jitter(std::uint64_t factors_hash, int px, int py) {
    const std::uint64_t h = mix64(hash_combine(kTextureStream, factors_hash,
                                               std::uint64_t(py) * 64 + px));
    const float u = static_cast<float>(h >> 40) * (1.0f / 16777216.0f);  // [0,1)
    const float stripe = (((px + py) >> 2) & 1) ? 0.5f : -0.5f;
    return kTextureAmplitude * ((u - 0.5f) + stripe);
}

FactorVector random_factors(Rng& rng) {
    FactorVector f;
    for (int i = 0; i < kFactorCount; ++i)
        factor_set(f, i, static_cast<int>(rng.below(kFactorRanges[i])));
    return f;
}

}  // namespace

int factor_get(const FactorVector& f, int index) {
    switch (index) {
        case 0: return f.shape_id;
        case 1: return f.size;
        case 2: return f.pos_x;
        case 3: return f.pos_y;
        case 4: return f.obj_color;
        case 5: return f.bg_color;
        default: throw std::out_of_range("factor index");
    }
}

void factor_set(FactorVector& f, int index, int value) {
    switch (index) {
        case 0: f.shape_id = value; break;
        case 1: f.size = value; break;
        case 2: f.pos_x = value; break;
        case 3: f.pos_y = value; break;
        case 4: f.obj_color = value; break;
        case 5: f.bg_color = value; break;
        default: throw std::out_of_range("factor index");
    }
}

void validate(const FactorVector& f) {
    for (int i = 0; i < kFactorCount; ++i) {
        const int v = factor_get(f, i);
        if (v < 0 || v >= kFactorRanges[i])
            throw std::invalid_argument("factor " + std::to_string(i) + " out of range: " +
                                        std::to_string(v));
    }
}

int factor_to_ordinal(const FactorVector& f) {
    int ord = 0;
    for (int i = 0; i < kFactorCount; ++i) ord = ord * kFactorRanges[i] + factor_get(f, i);
    return ord;
}

FactorVector ordinal_to_factors(int ordinal) {
    FactorVector f;
    for (int i = kFactorCount - 1; i >= 0; --i) {
        factor_set(f, i, ordinal % kFactorRanges[i]);
        ordinal /= kFactorRanges[i];
    }
    return f;
}

std::uint64_t factor_hash(const FactorVector& f) {
    return mix64(0xfac70125ull + static_cast<std::uint64_t>(factor_to_ordinal(f)));
}

int object_side(int size) { return 10 + 6 * size; }

bool object_contains(const FactorVector& f, int px, int py) {
    const int s = object_side(f.size);
    const int cx = 16 + 4 * f.pos_x;
    const int cy = 16 + 4 * f.pos_y;
    const double x = px + 0.5 - cx;
    const double y = py + 0.5 - cy;
    const double half = s / 2.0;
    switch (f.shape_id) {
        case 0:  // square: integer half-open box, exactly s*s pixels
            return px >= cx - s / 2 && px < cx + s / 2 && py >= cy - s / 2 && py < cy + s / 2;
        case 1:  // circle
            return x * x + y * y <= half * half;
        case 2: {  // upward isoceles triangle filling the bounding box
            const double t = (y + half) / s;
            return t >= 0.0 && t <= 1.0 && std::fabs(x) <= t * half;
        }
        case 3: {  // plus sign, arm half-width s/6
            const double arm = s / 6.0;
            return (std::fabs(x) <= arm && std::fabs(y) <= half) ||
                   (std::fabs(y) <= arm && std::fabs(x) <= half);
        }
        default:
            throw std::invalid_argument("shape_id out of range");
    }
}

std::vector<std::uint8_t> object_region(const FactorVector& f) {
    validate(f);
    std::vector<std::uint8_t> grid(kImageSize * kImageSize, 0);
    for (int py = 0; py < kImageSize; ++py)
        for (int px = 0; px < kImageSize; ++px)
            grid[py * kImageSize + px] = object_contains(f, px, py) ? 1 : 0;
    return grid;
}

const std::array<std::array<float, 3>, 4>& object_palette(Domain d) {
    return d == Domain::Flat ? kObjPaletteFlat : kObjPaletteTextured;
}

const std::array<std::array<float, 3>, 3>& background_palette(Domain d) {
    return d == Domain::Flat ? kBgPaletteFlat : kBgPaletteTextured;
}

Tensor<float> render(const FactorVector& f, Domain domain) {
    validate(f);
    Tensor<float> img({3, kImageSize, kImageSize});
    const auto& obj = object_palette(domain)[f.obj_color];
    const auto& bg = background_palette(domain)[f.bg_color];
    const std::uint64_t fh = factor_hash(f);
    for (int py = 0; py < kImageSize; ++py) {
        for (int px = 0; px < kImageSize; ++px) {
            const bool on_object = object_contains(f, px, py);
            const auto& base = on_object ? obj : bg;
            float jitter = 0.0f;
            if (domain == Domain::Textured) jitter = texture_jitter(fh, px, py);
            for (int c = 0; c < 3; ++c) {
                const float v = base[c] + jitter;
                img[std::size_t(c) * kImageSize * kImageSize + py * kImageSize + px] =
                    std::clamp(v, 0.0f, 1.0f);
            }
        }
    }
    return img;
}

Tensor<std::uint8_t> oracle_masks(const FactorVector& f, std::uint64_t mask_seed) {
    validate(f);
    const std::vector<std::uint8_t> obj = object_region(f);
    Rng rng(hash_combine(kMaskStream, mask_seed, factor_hash(f)));

    const int s = object_side(f.size);
    const int x0 = 16 + 4 * f.pos_x - s / 2;
    const int y0 = 16 + 4 * f.pos_y - s / 2;

    // Object split by 1-2 axis-aligned cuts through the bounding box interior;
    // empty pieces are dropped, leaving 2-4 object fragments.
    const int n_cuts = 1 + static_cast<int>(rng.below(2));
    int cut_x = -1, cut_y = -1;
    if (n_cuts == 1) {
        const bool vertical = rng.below(2) == 0;
        const int pos = 1 + static_cast<int>(rng.below(std::uint64_t(s - 1)));
        if (vertical)
            cut_x = x0 + pos;
        else
            cut_y = y0 + pos;
    } else {
        cut_x = x0 + 1 + static_cast<int>(rng.below(std::uint64_t(s - 1)));
        cut_y = y0 + 1 + static_cast<int>(rng.below(std::uint64_t(s - 1)));
    }
    auto object_piece = [&](int px, int py) {
        int piece = 0;
        if (cut_x >= 0 && px >= cut_x) piece += 1;
        if (cut_y >= 0 && py >= cut_y) piece += 2;
        return piece;
    };

    // Background split by one vertical cut at a seeded column (column 0
    // degenerates to a single piece).
    const int bg_cut = static_cast<int>(rng.below(kImageSize));

    // Collect fragments as pixel lists; piece ids 0..3 object, 4..5 background.
    std::array<std::vector<int>, 6> pieces;
    for (int py = 0; py < kImageSize; ++py)
        for (int px = 0; px < kImageSize; ++px) {
            const int idx = py * kImageSize + px;
            if (obj[idx])
                pieces[object_piece(px, py)].push_back(idx);
            else
                pieces[4 + (px < bg_cut ? 0 : 1)].push_back(idx);
        }

    std::vector<const std::vector<int>*> fragments;
    for (const auto& p : pieces)
        if (!p.empty()) fragments.push_back(&p);

    // Seed-determined channel permutation; unused channels stay all-zero.
    std::array<int, kMaskChannels> slots;
    for (int i = 0; i < kMaskChannels; ++i) slots[i] = i;
    rng.shuffle(slots.begin(), slots.end());

    Tensor<std::uint8_t> masks({kMaskChannels, kImageSize, kImageSize});
    for (std::size_t j = 0; j < fragments.size(); ++j) {
        std::uint8_t* ch = masks.ptr() + std::size_t(slots[j]) * kImageSize * kImageSize;
        for (int idx : *fragments[j]) ch[idx] = 1;
    }
    return masks;
}

Sample make_sample(const FactorVector& f, Domain domain, std::uint64_t mask_seed) {
    Sample s;
    s.image = render(f, domain);
    s.masks = oracle_masks(f, mask_seed);
    s.factors = f;
    s.domain = domain;
    s.mask_seed = mask_seed;
    return s;
}

TargetSample strip_factors(const Sample& s) { return {s.image, s.masks}; }

PairedSample make_pair(std::uint64_t rng_seed, int k, Domain domain) {
    if (k < 1 || k > kFactorCount)
        throw std::invalid_argument("pair factor count k must be in [1,6], got " + std::to_string(k));
    Rng rng(hash_combine(kPairStream, rng_seed));
    const FactorVector fa = random_factors(rng);

    std::array<int, kFactorCount> order = {0, 1, 2, 3, 4, 5};
    rng.shuffle(order.begin(), order.end());
    std::vector<int> changed(order.begin(), order.begin() + k);
    std::sort(changed.begin(), changed.end());

    FactorVector fb = fa;
    for (int idx : changed) {
        const int range = kFactorRanges[idx];
        const int orig = factor_get(fa, idx);
        int v = static_cast<int>(rng.below(std::uint64_t(range - 1)));
        if (v >= orig) ++v;  // guarantee a different value
        factor_set(fb, idx, v);
    }

    const std::uint64_t seed_a = rng.next();
    const std::uint64_t seed_b = rng.next();
    PairedSample pair;
    pair.a = make_sample(fa, domain, seed_a);
    pair.b = make_sample(fb, domain, seed_b);
    pair.changed = std::move(changed);
    return pair;
}

FactorVector DatasetSpec::factors_at(int i) const {
    if (exhaustive) {
        if (n != kFactorSpace)
            throw std::invalid_argument("exhaustive mode requires n == " +
                                        std::to_string(kFactorSpace));
        return ordinal_to_factors(i);
    }
    Rng rng(hash_combine(kDataStream, seed, std::uint64_t(i)));
    return random_factors(rng);
}

std::uint64_t DatasetSpec::mask_seed_at(int i) const {
    return hash_combine(kDataStream, seed, std::uint64_t(i), 0x6d73ull);
}

Sample DatasetSpec::at(int i) const {
    if (i < 0 || i >= n) throw std::out_of_range("dataset index");
    return make_sample(factors_at(i), domain, mask_seed_at(i));
}

std::vector<Sample> dataset(Domain domain, int n, std::uint64_t seed, bool exhaustive) {
    if (n < 1) throw std::invalid_argument("dataset size must be >= 1");
    DatasetSpec spec{domain, n, seed, exhaustive};
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(spec.at(i));
    return out;
}

PairedSample PairDatasetSpec::at(int i) const {
    if (i < 0 || i >= n) throw std::out_of_range("pair dataset index");
    return make_pair(hash_combine(kPairStream, seed, std::uint64_t(i)), k, domain);
}

void export_split(const std::string& dir, const DatasetSpec& spec) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    constexpr std::size_t image_bytes = 3 * kImageSize * kImageSize * sizeof(float);
    constexpr std::size_t mask_bytes = kMaskChannels * kImageSize * kImageSize;
    constexpr std::size_t factor_bytes = kFactorCount * sizeof(std::int32_t);
    constexpr std::size_t record_bytes = image_bytes + mask_bytes + factor_bytes + sizeof(std::uint64_t);

    {
        std::ofstream mf(dir + "/manifest.txt");
        if (!mf) throw std::runtime_error("cannot write " + dir + "/manifest.txt");
        mf << "count=" << spec.n << "\n";
        mf << "seed=" << spec.seed << "\n";
        mf << "domain=" << domain_name(spec.domain) << "\n";
        mf << "exhaustive=" << (spec.exhaustive ? 1 : 0) << "\n";
        mf << "record_bytes=" << record_bytes << "\n";
        mf << "layout=image:f32le[3x64x64],masks:u8[8x64x64],factors:i32le[6],mask_seed:u64le\n";
    }

    for (int i = 0; i < spec.n; ++i) {
        const Sample s = spec.at(i);
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%06d.bin", i);
        std::ofstream out(dir + "/" + name, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write sample file in " + dir);
        out.write(reinterpret_cast<const char*>(s.image.ptr()),
                  static_cast<std::streamsize>(image_bytes));
        out.write(reinterpret_cast<const char*>(s.masks.ptr()),
                  static_cast<std::streamsize>(mask_bytes));
        std::array<std::int32_t, kFactorCount> factors;
        for (int j = 0; j < kFactorCount; ++j) factors[j] = factor_get(s.factors, j);
        out.write(reinterpret_cast<const char*>(factors.data()),
                  static_cast<std::streamsize>(factor_bytes));
        out.write(reinterpret_cast<const char*>(&s.mask_seed), sizeof(std::uint64_t));
    }
}

}  // namespace l3::synth
