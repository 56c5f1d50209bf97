#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gad {

/// Violation of a documented precondition or parameter bound.
/// The CLI maps these to exit code 2.
class validation_error : public std::invalid_argument {
public:
    explicit validation_error(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Filesystem or file-format failure (missing file, malformed header, ...).
/// The CLI maps these to exit code 1.
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw io_error("cannot open file for reading: " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw io_error("read failure: " + path.string());
    }
    return bytes;
}

// Writes via a temp file in the same directory followed by a rename, so a
// failure never leaves a partial file at `path`.
inline void write_file_atomic(const std::filesystem::path& path,
                              const void* data, std::size_t size) {
    namespace fs = std::filesystem;
    static std::uint64_t counter = 0;
    fs::path tmp = path;
    tmp += ".tmp-" + std::to_string(++counter);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw io_error("cannot open file for writing: " + tmp.string());
        }
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
        if (!out) {
            out.close();
            std::error_code ec;
            fs::remove(tmp, ec);
            throw io_error("write failure: " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw io_error("cannot rename " + tmp.string() + " to " + path.string());
    }
}

inline void write_file_atomic(const std::filesystem::path& path,
                              const std::vector<std::uint8_t>& bytes) {
    write_file_atomic(path, bytes.data(), bytes.size());
}

/// 64-bit FNV-1a over a byte range; used for provenance digests.
inline std::uint64_t fnv1a64(const void* data, std::size_t size) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    std::uint64_t h = 14695981039346656037ULL;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string digest_hex(std::uint64_t h) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string digest_file(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    return digest_hex(fnv1a64(bytes.data(), bytes.size()));
}

}  // namespace gad
