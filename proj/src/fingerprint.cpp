#include "opqn/fingerprint.hpp"

#include <openssl/sha.h>

namespace opqn {

Fingerprint sha256(std::span<const std::uint8_t> bytes) {
    Fingerprint fp{};
    SHA256(bytes.data(), bytes.size(), fp.data());
    return fp;
}

std::string fingerprint_hex(const Fingerprint& fp) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (std::uint8_t b : fp) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

}  // namespace opqn
