#include "polyseg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace polyseg {

namespace {

std::vector<std::uint8_t> read_png(const std::string& path, png_uint_32 format, int& h, int& w) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        fail(ErrorKind::Io, "cannot read PNG '" + path + "': " + image.message);
    }
    image.format = format;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&image);
        fail(ErrorKind::Data, "corrupt PNG '" + path + "': " + image.message);
    }
    h = static_cast<int>(image.height);
    w = static_cast<int>(image.width);
    return buffer;
}

void write_png(const std::string& path, png_uint_32 format, int h, int w, const std::uint8_t* data) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = format;
    if (!png_image_write_to_file(&image, path.c_str(), 0, data, 0, nullptr)) {
        fail(ErrorKind::Io, "cannot write PNG '" + path + "': " + image.message);
    }
}

}  // namespace

RgbImage read_png_rgb(const std::string& path) {
    RgbImage img;
    img.pixels = read_png(path, PNG_FORMAT_RGB, img.height, img.width);
    return img;
}

void write_png_rgb(const std::string& path, const RgbImage& image) {
    if (image.pixels.size() != static_cast<std::size_t>(image.height) * image.width * 3) {
        fail(ErrorKind::Shape, "RGB buffer size does not match " + std::to_string(image.height) + "x" +
                                   std::to_string(image.width));
    }
    write_png(path, PNG_FORMAT_RGB, image.height, image.width, image.pixels.data());
}

BinaryMask read_png_mask(const std::string& path, int threshold) {
    int h = 0, w = 0;
    auto gray = read_png(path, PNG_FORMAT_GRAY, h, w);
    std::vector<std::uint8_t> bits(gray.size());
    for (std::size_t i = 0; i < gray.size(); ++i) bits[i] = gray[i] >= threshold ? 1 : 0;
    return BinaryMask(h, w, std::move(bits));
}

void write_png_mask(const std::string& path, const BinaryMask& mask) {
    std::vector<std::uint8_t> gray(mask.bits().size());
    for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = mask.bits()[i] ? 255 : 0;
    write_png(path, PNG_FORMAT_GRAY, mask.height(), mask.width(), gray.data());
}

Tensor rgb_to_tensor(const RgbImage& image) {
    Tensor t({1, 3, image.height, image.width});
    const std::size_t plane = static_cast<std::size_t>(image.height) * image.width;
    for (std::size_t p = 0; p < plane; ++p) {
        for (int c = 0; c < 3; ++c) t.data()[c * plane + p] = image.pixels[p * 3 + c] / 255.0f;
    }
    return t;
}

RgbImage tensor_to_rgb(const Tensor& image) {
    const Shape& s = image.shape();
    require_shape(s.n == 1 && s.c == 3, "tensor_to_rgb expects (1,3,h,w), got " + s.str());
    RgbImage out{s.h, s.w, std::vector<std::uint8_t>(s.plane() * 3)};
    for (std::size_t p = 0; p < s.plane(); ++p) {
        for (int c = 0; c < 3; ++c) {
            const float v = std::clamp(image.data()[c * s.plane() + p], 0.0f, 1.0f);
            out.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    }
    return out;
}

}  // namespace polyseg
