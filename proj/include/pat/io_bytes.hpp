#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pat/common.hpp"

// Little-endian binary stream helpers shared by the container formats.
namespace pat::io {

static_assert(std::endian::native == std::endian::little,
              "container writers assume a little-endian host");

inline void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), 8);
}

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}

inline void write_f32s(std::ostream& os, const float* p, std::size_t n) {
    write_bytes(os, p, n * sizeof(float));
}

inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw IoError("unexpected end of file reading u32");
    return v;
}

inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw IoError("unexpected end of file reading u64");
    return v;
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
    is.read(reinterpret_cast<char*>(p), std::streamsize(n));
    if (!is) throw IoError("unexpected end of file");
}

inline std::string read_string(std::istream& is, std::size_t n) {
    std::string s(n, '\0');
    read_bytes(is, s.data(), n);
    return s;
}

inline void expect_magic(std::istream& is, const char* magic, const std::string& path) {
    const std::string got = read_string(is, std::strlen(magic));
    if (got != magic) {
        throw IoError(msg(path, ": bad magic '", got, "', expected '", magic, "'"));
    }
}

} // namespace pat::io
