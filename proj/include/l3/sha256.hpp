#pragma once

#include <cstdint>
#include <string>

namespace l3 {

// SHA-256 of a byte string, lowercase hex. Used to fingerprint configs in
// checkpoint manifests and reports.
std::string sha256_hex(const void* data, std::size_t len);
inline std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

}  // namespace l3
