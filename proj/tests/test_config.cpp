#include <doctest.h>

#include "l3/config.hpp"

using namespace l3;

TEST_CASE("empty config yields pure defaults and the echo round-trips") {
    const ExperimentConfig cfg = parse_config("");
    CHECK(cfg.source_pairs == 4096);
    CHECK(cfg.k == 2);
    CHECK(cfg.batch == 64);
    CHECK(cfg.beta_ut == doctest::Approx(4.0));
    CHECK(cfg.variant == Variant::Full);
    CHECK(cfg.z_align);
    CHECK(cfg.seeds == std::vector<std::uint64_t>({1, 2, 3}));
    CHECK(cfg.source_domain == synth::Domain::Flat);

    const ExperimentConfig again = parse_config(cfg.echo());
    CHECK(again == cfg);
    CHECK(again.sha() == cfg.sha());
}

TEST_CASE("out-of-range k is rejected with a line number") {
    CHECK_THROWS_WITH_AS(parse_config("train.k = 7"), doctest::Contains("line 1"), ConfigError);
    CHECK_THROWS_AS(parse_config("\n\ntrain.k = 0"), ConfigError);
}

TEST_CASE("unknown keys and malformed values are rejected") {
    CHECK_THROWS_WITH_AS(parse_config("data.unknown = 3"), doctest::Contains("unknown key"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("train.batch = many"), doctest::Contains("integer"),
                         ConfigError);
    CHECK_THROWS_AS(parse_config("variant = sideways"), ConfigError);
    CHECK_THROWS_AS(parse_config("data.direction = flat->flat"), ConfigError);
    CHECK_THROWS_AS(parse_config("train.k"), ConfigError);
}

TEST_CASE("comments, blanks and overrides parse") {
    const std::string text =
        "# experiment configuration\n"
        "\n"
        "variant = rev_mmcf   # swapped attention roles\n"
        "data.direction = textured->flat\n"
        "seeds = 5, 6\n"
        "train.lr_source = 1e-3\n";
    const ExperimentConfig cfg = parse_config(text);
    CHECK(cfg.variant == Variant::RevMmcf);
    CHECK(cfg.source_domain == synth::Domain::Textured);
    CHECK(cfg.target_domain == synth::Domain::Flat);
    CHECK(cfg.seeds == std::vector<std::uint64_t>({5, 6}));
    CHECK(cfg.lr_source == doctest::Approx(1e-3));
}

TEST_CASE("variant wiring map") {
    CHECK(wiring_for(Variant::Full).use_msf);
    CHECK(wiring_for(Variant::Full).fusion == FusionKind::CrossAttention);
    CHECK_FALSE(wiring_for(Variant::NoMsf).use_msf);
    CHECK(wiring_for(Variant::NoMmcfConcat).fusion == FusionKind::ConcatFc);
    CHECK(wiring_for(Variant::RevMmcf).fusion == FusionKind::RevCrossAttention);
    CHECK_FALSE(wiring_for(Variant::NoRawvis).has_vis);
    CHECK(wiring_for(Variant::NoAlignment).fusion == FusionKind::CrossAttention);
    CHECK_THROWS(wiring_for(Variant::Baseline));
    for (const char* name : {"full", "no_msf", "no_mmcf_concat", "rev_mmcf", "no_rawvis",
                             "no_alignment", "baseline", "ut"})
        CHECK(variant_name(variant_from_name(name)) == std::string(name));
}

TEST_CASE("config sha changes with any value") {
    ExperimentConfig a, b;
    b.k = 3;
    CHECK(a.sha() != b.sha());
}
