#pragma once

#include <optional>
#include <string>
#include <vector>

#include "l3/params.hpp"

namespace l3 {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
    std::uint64_t seed = 0;
    std::string config_sha;
    std::string stage;       // "source-train" or "target-adapt"
    std::string source_sha;  // hash of the source checkpoint an adapted model came from
};

// Writes <base>.manifest (text: header lines, then one "name shape offset"
// line per tensor, offsets in float32 elements) and <base>.bin (raw
// little-endian float32 in manifest order).
void save_checkpoint(const ParameterStore<float>& store, const std::string& base,
                     const CheckpointMeta& meta);

// Round trip is bit exact. Throws CheckpointError on manifest/payload
// mismatch or truncation; no partial store escapes. If expected_config_sha is
// set and differs from the stored one, a warning is appended (load proceeds).
ParameterStore<float> load_checkpoint(const std::string& base, CheckpointMeta* meta_out = nullptr,
                                      std::vector<std::string>* warnings = nullptr,
                                      const std::optional<std::string>& expected_config_sha = {});

// SHA-256 of the checkpoint payload file, used for provenance records.
std::string checkpoint_payload_sha(const std::string& base);

}  // namespace l3
