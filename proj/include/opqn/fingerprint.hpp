#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

namespace opqn {

using Fingerprint = std::array<std::uint8_t, 32>;

/// SHA-256 of a byte buffer; used to bind encoded databases to the checkpoint
/// that produced them.
Fingerprint sha256(std::span<const std::uint8_t> bytes);

std::string fingerprint_hex(const Fingerprint& fp);

}  // namespace opqn
