#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "gad/common.hpp"
#include "gad/raster.hpp"

// Portable FloatMap. "Pf" is grayscale, "PF" is 3-channel. The scale line's
// sign encodes byte order (negative = little-endian); its magnitude is
// ignored on read. Scanlines are stored bottom-to-top.

namespace gad {

namespace detail {

inline std::uint32_t bswap32(std::uint32_t v) {
    return ((v & 0x000000ffu) << 24) | ((v & 0x0000ff00u) << 8) |
           ((v & 0x00ff0000u) >> 8) | ((v & 0xff000000u) >> 24);
}

// Reads one whitespace-delimited token starting at `pos`; advances `pos`
// past the token's single trailing whitespace byte.
inline std::string pfm_token(const std::vector<std::uint8_t>& bytes, std::size_t& pos,
                             const std::string& what) {
    while (pos < bytes.size() && std::isspace(bytes[pos])) {
        ++pos;
    }
    std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) {
        ++pos;
    }
    if (start == pos || pos >= bytes.size()) {
        throw io_error("PFM: malformed header, missing " + what);
    }
    ++pos;  // exactly one whitespace byte separates the header from the payload
    return std::string(bytes.begin() + start, bytes.begin() + pos - 1);
}

}  // namespace detail

inline RasterF read_pfm(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    std::size_t pos = 0;

    const std::string magic = detail::pfm_token(bytes, pos, "magic");
    int channels;
    if (magic == "Pf") {
        channels = 1;
    } else if (magic == "PF") {
        channels = 3;
    } else {
        throw io_error("PFM: unknown magic '" + magic + "' in " + path.string());
    }

    int width, height;
    double scale;
    try {
        width = std::stoi(detail::pfm_token(bytes, pos, "width"));
        height = std::stoi(detail::pfm_token(bytes, pos, "height"));
        scale = std::stod(detail::pfm_token(bytes, pos, "scale"));
    } catch (const std::exception&) {
        throw io_error("PFM: malformed header in " + path.string());
    }
    if (width < 1 || height < 1) {
        throw io_error("PFM: invalid dimensions in " + path.string());
    }
    if (scale == 0.0 || !std::isfinite(scale)) {
        throw io_error("PFM: invalid scale in " + path.string());
    }
    const bool file_little = scale < 0.0;

    const std::size_t count = static_cast<std::size_t>(width) * height * channels;
    if (bytes.size() - pos < count * 4) {
        throw io_error("PFM: truncated payload in " + path.string() + " (expected " +
                       std::to_string(count * 4) + " bytes, got " +
                       std::to_string(bytes.size() - pos) + ")");
    }

    const bool host_little = (std::endian::native == std::endian::little);
    std::vector<double> data(count);
    const std::uint8_t* payload = bytes.data() + pos;
    for (int row = 0; row < height; ++row) {
        // PFM rows run bottom-up; RasterF rows run top-down.
        const int out_row = height - 1 - row;
        for (int col = 0; col < width; ++col) {
            for (int ch = 0; ch < channels; ++ch) {
                const std::size_t i =
                    (static_cast<std::size_t>(row) * width + col) * channels + ch;
                std::uint32_t u;
                std::memcpy(&u, payload + i * 4, 4);
                if (file_little != host_little) {
                    u = detail::bswap32(u);
                }
                float f;
                std::memcpy(&f, &u, 4);
                if (!std::isfinite(f)) {
                    throw io_error("PFM: non-finite sample at row " + std::to_string(out_row) +
                                   ", col " + std::to_string(col) + " in " + path.string());
                }
                data[(static_cast<std::size_t>(out_row) * width + col) * channels + ch] = f;
            }
        }
    }
    return RasterF(width, height, channels, std::move(data));
}

/// Writes little-endian (scale -1.0). Samples are stored as float32, so the
/// round trip is bit-exact exactly when every sample is float32-representable.
inline void write_pfm(const RasterF& raster, const std::filesystem::path& path) {
    const int channels = raster.channels();
    if (channels != 1 && channels != 3) {
        throw validation_error("PFM: channel count must be 1 or 3, got " +
                               std::to_string(channels));
    }
    std::string header = (channels == 1 ? "Pf\n" : "PF\n");
    header += std::to_string(raster.width()) + " " + std::to_string(raster.height()) + "\n";
    header += "-1.0\n";

    const std::size_t count = raster.size();
    std::vector<std::uint8_t> bytes(header.size() + count * 4);
    std::memcpy(bytes.data(), header.data(), header.size());

    const bool host_little = (std::endian::native == std::endian::little);
    std::uint8_t* payload = bytes.data() + header.size();
    const int width = raster.width(), height = raster.height();
    for (int row = 0; row < height; ++row) {
        const int src_row = height - 1 - row;
        for (int col = 0; col < width; ++col) {
            for (int ch = 0; ch < channels; ++ch) {
                const float f = static_cast<float>(raster.at(src_row, col, ch));
                std::uint32_t u;
                std::memcpy(&u, &f, 4);
                if (!host_little) {
                    u = detail::bswap32(u);
                }
                const std::size_t i =
                    (static_cast<std::size_t>(row) * width + col) * channels + ch;
                std::memcpy(payload + i * 4, &u, 4);
            }
        }
    }
    write_file_atomic(path, bytes);
}

}  // namespace gad
