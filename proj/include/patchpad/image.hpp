#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace patchpad {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Row-major 8-bit RGB raster.
class RgbImage {
public:
    RgbImage() = default;
    RgbImage(std::size_t width, std::size_t height, Rgb fill = {});

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }
    bool empty() const noexcept { return width_ == 0 || height_ == 0; }

    Rgb at(std::size_t x, std::size_t y) const {
        const std::uint8_t* p = &data_[3 * (y * width_ + x)];
        return {p[0], p[1], p[2]};
    }
    void set(std::size_t x, std::size_t y, Rgb c) {
        std::uint8_t* p = &data_[3 * (y * width_ + x)];
        p[0] = c.r;
        p[1] = c.g;
        p[2] = c.b;
    }

    /// Interleaved RGB bytes, 3 * width * height entries.
    const std::vector<std::uint8_t>& bytes() const noexcept { return data_; }
    std::vector<std::uint8_t>& bytes() noexcept { return data_; }

    /// Copy of the w x h window whose top-left corner is (x0, y0).
    RgbImage crop(std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) const;

    friend bool operator==(const RgbImage&, const RgbImage&) = default;

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<std::uint8_t> data_;
};

/// Binary PPM (P6, maxval 255).
RgbImage read_ppm(const std::filesystem::path& path);
void write_ppm(const RgbImage& image, const std::filesystem::path& path);

/// FNV-1a over dimensions and pixel bytes.
std::uint64_t content_hash(const RgbImage& image);

}  // namespace patchpad
