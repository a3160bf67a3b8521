#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "polyseg/postprocess.hpp"
#include "polyseg/tensor.hpp"

namespace polyseg {

/// Interleaved 8-bit RGB raster.
struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;  // size height * width * 3

    std::uint8_t* at(int y, int x) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
    const std::uint8_t* at(int y, int x) const {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }
    bool operator==(const RgbImage&) const = default;
};

RgbImage read_png_rgb(const std::string& path);
void write_png_rgb(const std::string& path, const RgbImage& image);

/// Grayscale PNG binarized at `threshold` (value >= threshold is foreground).
BinaryMask read_png_mask(const std::string& path, int threshold = 128);
/// Writes {0, 255} grayscale.
void write_png_mask(const std::string& path, const BinaryMask& mask);

/// (1,3,h,w) tensor with values v/255.
Tensor rgb_to_tensor(const RgbImage& image);
/// Rounds clamp(v, 0, 1) * 255.
RgbImage tensor_to_rgb(const Tensor& image);

}  // namespace polyseg
