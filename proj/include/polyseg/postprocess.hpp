#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "polyseg/tensor.hpp"

namespace polyseg {

/// Row-major boolean grid.
class BinaryMask {
  public:
    BinaryMask() = default;
    BinaryMask(int h, int w);
    BinaryMask(int h, int w, std::vector<std::uint8_t> bits);

    int height() const { return h_; }
    int width() const { return w_; }
    bool empty_grid() const { return bits_.empty(); }

    bool at(int y, int x) const { return bits_[static_cast<std::size_t>(y) * w_ + x] != 0; }
    void set(int y, int x, bool v) { bits_[static_cast<std::size_t>(y) * w_ + x] = v ? 1 : 0; }
    bool contains(int y, int x) const { return y >= 0 && y < h_ && x >= 0 && x < w_; }

    std::span<const std::uint8_t> bits() const { return bits_; }
    std::span<std::uint8_t> bits() { return bits_; }
    std::size_t count() const;

    /// 0/1 tensor of shape (1, 1, h, w).
    Tensor to_tensor() const;

    bool operator==(const BinaryMask&) const = default;

  private:
    int h_ = 0;
    int w_ = 0;
    std::vector<std::uint8_t> bits_;
};

/// Inclusive pixel rectangle.
struct BBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    double center_x() const { return (x0 + x1) / 2.0; }
    double center_y() const { return (y0 + y1) / 2.0; }
    int width() const { return x1 - x0 + 1; }
    int height() const { return y1 - y0 + 1; }
    long area() const { return static_cast<long>(width()) * height(); }
    /// Length of the diagonal of the covered pixel block.
    double diag() const;
    bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
    BBox united(const BBox& o) const;

    bool operator==(const BBox&) const = default;
};

struct Component {
    std::vector<std::uint32_t> pixels;  // row-major indices y * w + x
    long area = 0;
    BBox bbox;
};

/// Structuring element of a k x k ellipse inscribed in the square; k must be odd.
BinaryMask ellipse_element(int k);

BinaryMask threshold(const Tensor& prob, float t = 0.5f);

// Pixels outside the grid count as foreground for erosion and background for
// dilation, which keeps the pair adjoint (opening and closing stay idempotent).
BinaryMask erode(const BinaryMask& mask, const BinaryMask& element);
BinaryMask dilate(const BinaryMask& mask, const BinaryMask& element);
BinaryMask opening(const BinaryMask& mask, int k);
BinaryMask closing(const BinaryMask& mask, int k);
/// Opening with open_k then closing with close_k.
BinaryMask morph_smooth(const BinaryMask& mask, int open_k = 5, int close_k = 9);

/// 8-connected components ordered by their first pixel in raster order.
std::vector<Component> label_components(const BinaryMask& mask);

/// Keeps components with area >= min_area.
std::vector<Component> drop_small(std::vector<Component> components, double min_area);
/// min_area scaled from a 384x384 reference grid to h x w.
double scaled_min_area(double min_area, int h, int w, int reference_side = 384);

/// True when the center distance is at most half the diagonal sum.
bool boxes_near(const BBox& a, const BBox& b);
/// Repeatedly unites the first near pair (area-descending order) until none remain.
std::vector<BBox> merge_nearby(std::vector<BBox> boxes);
void sort_boxes_canonical(std::vector<BBox>& boxes);

struct PostprocessOptions {
    float threshold = 0.5f;
    bool smooth = true;
    int open_k = 5;
    int close_k = 9;
    bool drop = true;
    double min_area = 100.0;  // at 384x384, rescaled to the mask size
    bool merge = true;
};

struct PostprocessResult {
    BinaryMask mask;
    std::vector<BBox> boxes;
};

PostprocessResult postprocess(const Tensor& prob, const PostprocessOptions& options = {});
PostprocessResult postprocess_mask(const BinaryMask& mask, const PostprocessOptions& options = {});

/// Component boxes of a mask with no smoothing, dropping or merging.
std::vector<BBox> component_boxes(const BinaryMask& mask);

}  // namespace polyseg
