#pragma once

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "gad/common.hpp"
#include "gad/raster.hpp"

// PNG I/O via libpng, 8- and 16-bit, 1-4 channels. Samples are scaled to
// [0,1] by the bit-depth maximum on read and quantized round-half-up on
// write. Palette and sub-byte depths are rejected.

namespace gad {

namespace detail {

struct PngMemReader {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t pos;
};

inline void png_mem_read(png_structp png, png_bytep out, png_size_t n) {
    auto* r = static_cast<PngMemReader*>(png_get_io_ptr(png));
    if (r->pos + n > r->size) {
        png_error(png, "unexpected end of PNG data");
    }
    std::memcpy(out, r->data + r->pos, n);
    r->pos += n;
}

inline void png_mem_write(png_structp png, png_bytep data, png_size_t n) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + n);
}

inline void png_mem_flush(png_structp) {}

inline void png_throwless_error(png_structp png, png_const_charp msg) {
    // Stash the message; control returns to the setjmp site.
    auto* err = static_cast<std::string*>(png_get_error_ptr(png));
    if (err) {
        *err = msg;
    }
    longjmp(png_jmpbuf(png), 1);
}

inline void png_silent_warning(png_structp, png_const_charp) {}

}  // namespace detail

/// Decodes an 8- or 16-bit PNG into [0,1] samples. Channel count (1-4,
/// alpha included) is preserved. If `bit_depth_out` is non-null it receives
/// the file's bit depth.
inline RasterF read_png(const std::filesystem::path& path, int* bit_depth_out = nullptr) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
        throw io_error("PNG: not a PNG file: " + path.string());
    }

    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err,
                                             detail::png_throwless_error,
                                             detail::png_silent_warning);
    if (!png) {
        throw io_error("PNG: failed to allocate read struct");
    }
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw io_error("PNG: failed to allocate info struct");
    }

    std::vector<png_byte> image;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw io_error("PNG: decode failure in " + path.string() + ": " + err);
    }

    detail::PngMemReader reader{bytes.data(), bytes.size(), 0};
    png_set_read_fn(png, &reader, detail::png_mem_read);
    png_read_info(png, info);

    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);

    if (color == PNG_COLOR_TYPE_PALETTE) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw io_error("PNG: palette images are not supported: " + path.string());
    }
    if (depth != 8 && depth != 16) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw io_error("PNG: unsupported bit depth " + std::to_string(depth) + " in " +
                       path.string() + " (expected 8 or 16)");
    }

    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    const int channels = png_get_channels(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    image.resize(rowbytes * height);
    rows.resize(height);
    for (int r = 0; r < height; ++r) {
        rows[r] = image.data() + r * rowbytes;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    const double maxval = (depth == 8) ? 255.0 : 65535.0;
    std::vector<double> data(static_cast<std::size_t>(width) * height * channels);
    for (int r = 0; r < height; ++r) {
        const png_byte* row = image.data() + static_cast<std::size_t>(r) * rowbytes;
        for (std::size_t i = 0; i < static_cast<std::size_t>(width) * channels; ++i) {
            std::uint32_t v;
            if (depth == 8) {
                v = row[i];
            } else {
                v = (static_cast<std::uint32_t>(row[2 * i]) << 8) | row[2 * i + 1];
            }
            data[static_cast<std::size_t>(r) * width * channels + i] = v / maxval;
        }
    }
    if (bit_depth_out) {
        *bit_depth_out = depth;
    }
    return RasterF(width, height, channels, std::move(data));
}

/// Encodes samples in [0,1], quantized round-half-up to the requested depth.
/// Out-of-range samples are an error; the caller clamps explicitly if that
/// is what it wants.
inline void write_png(const RasterF& raster, const std::filesystem::path& path,
                      int bit_depth = 8) {
    if (bit_depth != 8 && bit_depth != 16) {
        throw validation_error("PNG: bit depth must be 8 or 16, got " +
                               std::to_string(bit_depth));
    }
    const int channels = raster.channels();
    int color;
    switch (channels) {
        case 1: color = PNG_COLOR_TYPE_GRAY; break;
        case 3: color = PNG_COLOR_TYPE_RGB; break;
        case 4: color = PNG_COLOR_TYPE_RGB_ALPHA; break;
        default:
            throw validation_error("PNG: channel count must be 1, 3 or 4, got " +
                                   std::to_string(channels));
    }
    const int width = raster.width(), height = raster.height();
    const double maxval = (bit_depth == 8) ? 255.0 : 65535.0;

    const std::size_t bpp = static_cast<std::size_t>(channels) * (bit_depth / 8);
    std::vector<png_byte> image(static_cast<std::size_t>(width) * height * bpp);
    for (int r = 0; r < height; ++r) {
        png_byte* row = image.data() + static_cast<std::size_t>(r) * width * bpp;
        for (int c = 0; c < width; ++c) {
            for (int ch = 0; ch < channels; ++ch) {
                const double v = raster.at(r, c, ch);
                if (!(v >= 0.0 && v <= 1.0)) {
                    throw validation_error(
                        "PNG: sample " + std::to_string(v) + " out of [0,1] at row " +
                        std::to_string(r) + ", col " + std::to_string(c));
                }
                const auto q = static_cast<std::uint32_t>(std::floor(v * maxval + 0.5));
                if (bit_depth == 8) {
                    row[c * channels + ch] = static_cast<png_byte>(q);
                } else {
                    row[(c * channels + ch) * 2] = static_cast<png_byte>(q >> 8);
                    row[(c * channels + ch) * 2 + 1] = static_cast<png_byte>(q & 0xff);
                }
            }
        }
    }

    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err,
                                              detail::png_throwless_error,
                                              detail::png_silent_warning);
    if (!png) {
        throw io_error("PNG: failed to allocate write struct");
    }
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw io_error("PNG: failed to allocate info struct");
    }
    std::vector<std::uint8_t> encoded;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw io_error("PNG: encode failure for " + path.string() + ": " + err);
    }
    png_set_write_fn(png, &encoded, detail::png_mem_write, detail::png_mem_flush);
    png_set_IHDR(png, info, width, height, bit_depth, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < height; ++r) {
        png_write_row(png, image.data() + static_cast<std::size_t>(r) * width * bpp);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);

    write_file_atomic(path, encoded);
}

/// Reads an 8-bit single-channel PNG as a label map. Pixel values:
/// 0 -> class 0, 255 -> class 1, 128 -> ignore; anything else is an error
/// naming the first offending (row, col).
inline LabelMap labelmap_from_png(const std::filesystem::path& path) {
    int depth = 0;
    RasterF raster = read_png(path, &depth);
    if (depth != 8 || raster.channels() != 1) {
        throw io_error("label PNG must be 8-bit single-channel: " + path.string());
    }
    std::vector<std::uint8_t> values(raster.size());
    for (int r = 0; r < raster.height(); ++r) {
        for (int c = 0; c < raster.width(); ++c) {
            const int pixel = static_cast<int>(std::lround(raster.at(r, c) * 255.0));
            std::uint8_t cls;
            switch (pixel) {
                case 0: cls = 0; break;
                case 255: cls = 1; break;
                case 128: cls = kIgnoreLabel; break;
                default:
                    throw io_error("label PNG: unexpected pixel value " +
                                   std::to_string(pixel) + " at row " + std::to_string(r) +
                                   ", col " + std::to_string(c) + " in " + path.string());
            }
            values[static_cast<std::size_t>(r) * raster.width() + c] = cls;
        }
    }
    return LabelMap(raster.width(), raster.height(), std::move(values));
}

inline void labelmap_to_png(const LabelMap& labels, const std::filesystem::path& path) {
    RasterF raster(labels.width(), labels.height(), 1);
    for (int r = 0; r < labels.height(); ++r) {
        for (int c = 0; c < labels.width(); ++c) {
            const std::uint8_t cls = labels.at(r, c);
            raster.at(r, c) = (cls == 0) ? 0.0 : (cls == 1) ? 1.0 : 128.0 / 255.0;
        }
    }
    write_png(raster, path, 8);
}

}  // namespace gad
