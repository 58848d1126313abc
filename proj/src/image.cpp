#include "patchpad/image.hpp"

#include "patchpad/error.hpp"

#include <cctype>
#include <fstream>
#include <string>

namespace patchpad {

RgbImage::RgbImage(std::size_t width, std::size_t height, Rgb fill)
    : width_(width), height_(height), data_(3 * width * height) {
    for (std::size_t i = 0; i < width * height; ++i) {
        data_[3 * i] = fill.r;
        data_[3 * i + 1] = fill.g;
        data_[3 * i + 2] = fill.b;
    }
}

RgbImage RgbImage::crop(std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) const {
    if (x0 + w > width_ || y0 + h > height_) {
        throw invalid_argument("crop window exceeds image bounds");
    }
    RgbImage out(w, h);
    for (std::size_t y = 0; y < h; ++y) {
        const std::uint8_t* src = &data_[3 * ((y0 + y) * width_ + x0)];
        std::copy(src, src + 3 * w, &out.data_[3 * y * w]);
    }
    return out;
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
    std::string tok;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            if (!tok.empty()) break;
        } else {
            tok.push_back(static_cast<char>(c));
        }
        c = in.get();
    }
    return tok;
}

}  // namespace

RgbImage read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open image " + path.string());
    if (header_token(in) != "P6") throw Error(ErrorKind::format, "not a binary PPM: " + path.string());
    std::size_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoul(header_token(in));
        h = std::stoul(header_token(in));
        maxval = std::stoul(header_token(in));
    } catch (const std::exception&) {
        throw Error(ErrorKind::format, "malformed PPM header: " + path.string());
    }
    if (maxval != 255) throw Error(ErrorKind::format, "PPM maxval must be 255: " + path.string());
    RgbImage img(w, h);
    in.read(reinterpret_cast<char*>(img.bytes().data()), static_cast<std::streamsize>(img.bytes().size()));
    if (in.gcount() != static_cast<std::streamsize>(img.bytes().size())) {
        throw Error(ErrorKind::format, "truncated PPM payload: " + path.string());
    }
    return img;
}

void write_ppm(const RgbImage& image, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write image " + path.string());
    out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.bytes().data()),
              static_cast<std::streamsize>(image.bytes().size()));
    if (!out) throw io_error("write failed: " + path.string());
}

std::uint64_t content_hash(const RgbImage& image) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint8_t byte) {
        h ^= byte;
        h *= 0x100000001b3ULL;
    };
    for (std::size_t v : {image.width(), image.height()}) {
        for (int i = 0; i < 8; ++i) mix(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    for (std::uint8_t byte : image.bytes()) mix(byte);
    return h;
}

}  // namespace patchpad
