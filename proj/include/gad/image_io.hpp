#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <string>

#include "gad/pfm_io.hpp"
#include "gad/png_io.hpp"

// Format dispatch by file extension, remembering enough about the source to
// write a result "in kind" (same container, same PNG bit depth).

namespace gad {

enum class ImageFormat { kPng8, kPng16, kPfm };

struct LoadedImage {
    RasterF raster;
    ImageFormat format;
};

inline std::string lowercase_extension(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext;
}

inline LoadedImage load_image(const std::filesystem::path& path) {
    const std::string ext = lowercase_extension(path);
    if (ext == ".pfm") {
        return {read_pfm(path), ImageFormat::kPfm};
    }
    if (ext == ".png") {
        int bit_depth = 8;
        RasterF r = read_png(path, &bit_depth);
        return {std::move(r), bit_depth == 16 ? ImageFormat::kPng16 : ImageFormat::kPng8};
    }
    throw validation_error("unsupported image extension '" + ext + "' for " +
                           path.string() + " (expected .png or .pfm)");
}

inline RasterF read_image(const std::filesystem::path& path) {
    return load_image(path).raster;
}

inline void save_image(const RasterF& raster, const std::filesystem::path& path,
                       ImageFormat format) {
    switch (format) {
        case ImageFormat::kPng8:
            write_png(raster, path, 8);
            return;
        case ImageFormat::kPng16:
            write_png(raster, path, 16);
            return;
        case ImageFormat::kPfm:
            write_pfm(raster, path);
            return;
    }
    throw validation_error("save_image: invalid format");
}

}  // namespace gad
