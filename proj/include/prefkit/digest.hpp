#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace prefkit {

std::string sha256_hex(std::string_view data);
std::string sha256_hex(std::span<const std::uint8_t> data);

std::string base64_encode(std::span<const std::uint8_t> data);
std::vector<std::uint8_t> base64_decode(std::string_view text);

// Real numbers rounded to 9 significant digits so digests do not depend on
// the last bits of a platform's floating point.
double round_significant9(double x);

// Returns a copy with every floating-point value rounded as above. Object
// keys are already kept sorted by nlohmann::json.
nlohmann::json canonicalize(const nlohmann::json& value);

// Single-line canonical serialization.
std::string canonical_dump(const nlohmann::json& value);

// Order-independent digest over record digests (multiset semantics).
std::string combine_digests(std::vector<std::string> record_digests);

// Lowercase, whitespace collapsed to single spaces, trimmed.
std::string normalize_prompt_text(std::string_view text);

}  // namespace prefkit
