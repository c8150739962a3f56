#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace opqn::io {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are not supported");

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), std::streamsize(n));
    if (!os) throw std::runtime_error("write failed");
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), std::streamsize(n));
    if (std::size_t(is.gcount()) != n) throw std::runtime_error("truncated file");
}

inline void write_u8(std::ostream& os, std::uint8_t v) { write_bytes(os, &v, 1); }
inline void write_u32(std::ostream& os, std::uint32_t v) { write_bytes(os, &v, 4); }
inline void write_u64(std::ostream& os, std::uint64_t v) { write_bytes(os, &v, 8); }
inline void write_f64(std::ostream& os, double v) { write_bytes(os, &v, 8); }

inline std::uint8_t read_u8(std::istream& is) {
    std::uint8_t v;
    read_bytes(is, &v, 1);
    return v;
}
inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v;
    read_bytes(is, &v, 4);
    return v;
}
inline double read_f64(std::istream& is) {
    double v;
    read_bytes(is, &v, 8);
    return v;
}

inline void write_magic(std::ostream& os, const char magic[4]) { write_bytes(os, magic, 4); }

inline void expect_magic(std::istream& is, const char magic[4], const char* what) {
    char got[4];
    read_bytes(is, got, 4);
    if (std::memcmp(got, magic, 4) != 0) {
        throw std::runtime_error(std::string("bad magic for ") + what);
    }
}

inline void expect_version(std::istream& is, std::uint32_t want, const char* what) {
    const std::uint32_t got = read_u32(is);
    if (got != want) {
        throw std::runtime_error(std::string("unsupported version for ") + what + ": " +
                                 std::to_string(got));
    }
}

}  // namespace opqn::io
