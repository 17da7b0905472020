#include "cspine/io/binary.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <iterator>

#include "cspine/core/errors.hpp"

namespace cspine::io {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks.
    constexpr std::size_t chunk = 1u << 30;
    for (std::size_t off = 0; off < bytes.size(); off += chunk) {
        const auto n = static_cast<uInt>(std::min(chunk, bytes.size() - off));
        crc = ::crc32(crc, bytes.data() + off, n);
    }
    return static_cast<std::uint32_t>(crc);
}

bool trailing_crc_ok(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) return false;
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    return stored == crc32(bytes.first(bytes.size() - 4));
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path);
}

}  // namespace cspine::io
