#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gad/common.hpp"

namespace gad {

/// Multi-channel floating-point raster. Row-major, channel-interleaved:
/// sample (row, col, ch) lives at ((row * width) + col) * channels + ch.
/// Constructors reject zero dimensions and non-finite samples.
class RasterF {
public:
    RasterF(int width, int height, int channels, double fill = 0.0)
        : width_(width), height_(height), channels_(channels) {
        check_dims(width, height, channels);
        if (!std::isfinite(fill)) {
            throw validation_error("RasterF: fill value must be finite");
        }
        data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
    }

    RasterF(int width, int height, int channels, std::vector<double> data)
        : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
        check_dims(width, height, channels);
        const std::size_t expect = static_cast<std::size_t>(width) * height * channels;
        if (data_.size() != expect) {
            throw validation_error("RasterF: data length " + std::to_string(data_.size()) +
                                   " does not match " + std::to_string(width) + "x" +
                                   std::to_string(height) + "x" + std::to_string(channels));
        }
        for (double v : data_) {
            if (!std::isfinite(v)) {
                throw validation_error("RasterF: samples must be finite");
            }
        }
    }

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }

    double& at(int row, int col, int ch = 0) {
        return data_[idx(row, col, ch)];
    }
    double at(int row, int col, int ch = 0) const {
        return data_[idx(row, col, ch)];
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& samples() const { return data_; }

    bool same_shape(const RasterF& other) const {
        return width_ == other.width_ && height_ == other.height_ &&
               channels_ == other.channels_;
    }

    std::size_t idx(int row, int col, int ch = 0) const {
        return (static_cast<std::size_t>(row) * width_ + col) * channels_ + ch;
    }

private:
    static void check_dims(int width, int height, int channels) {
        if (width < 1 || height < 1) {
            throw validation_error("RasterF: width and height must be >= 1, got " +
                                   std::to_string(width) + "x" + std::to_string(height));
        }
        if (channels < 1) {
            throw validation_error("RasterF: channels must be >= 1, got " +
                                   std::to_string(channels));
        }
    }

    int width_;
    int height_;
    int channels_;
    std::vector<double> data_;
};

/// Sentinel class index for pixels excluded from training and scoring.
inline constexpr std::uint8_t kIgnoreLabel = 2;

/// Single-channel class raster. Classes: 0 = no change, 1 = change,
/// kIgnoreLabel = ignore.
class LabelMap {
public:
    LabelMap(int width, int height, std::uint8_t fill = 0)
        : width_(width), height_(height) {
        check_dims(width, height);
        check_value(fill);
        data_.assign(static_cast<std::size_t>(width) * height, fill);
    }

    LabelMap(int width, int height, std::vector<std::uint8_t> data)
        : width_(width), height_(height), data_(std::move(data)) {
        check_dims(width, height);
        if (data_.size() != static_cast<std::size_t>(width) * height) {
            throw validation_error("LabelMap: data length does not match dimensions");
        }
        for (std::uint8_t v : data_) {
            check_value(v);
        }
    }

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return data_.size(); }

    std::uint8_t& at(int row, int col) {
        return data_[static_cast<std::size_t>(row) * width_ + col];
    }
    std::uint8_t at(int row, int col) const {
        return data_[static_cast<std::size_t>(row) * width_ + col];
    }

    std::uint8_t* data() { return data_.data(); }
    const std::uint8_t* data() const { return data_.data(); }
    const std::vector<std::uint8_t>& values() const { return data_; }

    bool same_shape(const LabelMap& other) const {
        return width_ == other.width_ && height_ == other.height_;
    }

    bool operator==(const LabelMap& other) const {
        return width_ == other.width_ && height_ == other.height_ && data_ == other.data_;
    }

private:
    static void check_dims(int width, int height) {
        if (width < 1 || height < 1) {
            throw validation_error("LabelMap: width and height must be >= 1");
        }
    }
    static void check_value(std::uint8_t v) {
        if (v != 0 && v != 1 && v != kIgnoreLabel) {
            throw validation_error("LabelMap: class index must be 0, 1 or " +
                                   std::to_string(kIgnoreLabel));
        }
    }

    int width_;
    int height_;
    std::vector<std::uint8_t> data_;
};

}  // namespace gad
