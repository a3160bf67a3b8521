#include "polyseg/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace polyseg {

BinaryMask::BinaryMask(int h, int w) : h_(h), w_(w) {
    if (h < 1 || w < 1) fail(ErrorKind::Shape, "mask dimensions must be positive");
    bits_.assign(static_cast<std::size_t>(h) * w, 0);
}

BinaryMask::BinaryMask(int h, int w, std::vector<std::uint8_t> bits) : h_(h), w_(w), bits_(std::move(bits)) {
    if (h < 1 || w < 1) fail(ErrorKind::Shape, "mask dimensions must be positive");
    if (bits_.size() != static_cast<std::size_t>(h) * w) fail(ErrorKind::Shape, "mask bit count != h*w");
    for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

Tensor BinaryMask::to_tensor() const {
    Tensor t({1, 1, h_, w_});
    for (std::size_t i = 0; i < bits_.size(); ++i) t.data()[i] = bits_[i] ? 1.0f : 0.0f;
    return t;
}

double BBox::diag() const {
    const double w = width(), h = height();
    return std::sqrt(w * w + h * h);
}

BBox BBox::united(const BBox& o) const {
    return {std::min(x0, o.x0), std::min(y0, o.y0), std::max(x1, o.x1), std::max(y1, o.y1)};
}

BinaryMask ellipse_element(int k) {
    if (k < 1 || k % 2 == 0) fail(ErrorKind::InvalidArgument, "structuring element size must be odd and >= 1");
    const int r = k / 2;
    const double radius = r + 0.5;
    BinaryMask se(k, k);
    for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
            if ((dx * dx + dy * dy) <= radius * radius) se.set(dy + r, dx + r, true);
        }
    }
    return se;
}

BinaryMask threshold(const Tensor& prob, float t) {
    const Shape& s = prob.shape();
    require_shape(s.n == 1 && s.c == 1, "threshold expects a (1,1,h,w) map, got " + s.str());
    BinaryMask m(s.h, s.w);
    auto src = prob.data();
    auto dst = m.bits();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > t ? 1 : 0;
    return m;
}

namespace {

/// Horizontal extent [-half, half] of the element on each row offset.
struct ElementRow {
    int dy;
    int left;
    int right;
};

std::vector<ElementRow> element_rows(const BinaryMask& se) {
    const int ry = se.height() / 2, rx = se.width() / 2;
    std::vector<ElementRow> rows;
    for (int y = 0; y < se.height(); ++y) {
        int left = se.width(), right = -1;
        for (int x = 0; x < se.width(); ++x) {
            if (se.at(y, x)) {
                left = std::min(left, x);
                right = std::max(right, x);
            }
        }
        if (right < 0) continue;
        for (int x = left; x <= right; ++x) {
            if (!se.at(y, x)) fail(ErrorKind::InvalidArgument, "structuring element rows must be contiguous");
        }
        rows.push_back({y - ry, left - rx, right - rx});
    }
    return rows;
}

/// For each pixel, whether any pixel with `value` lies in the element window
/// (outside-grid pixels are ignored).
BinaryMask window_any(const BinaryMask& mask, const BinaryMask& se, std::uint8_t value) {
    const int h = mask.height(), w = mask.width();
    const auto rows = element_rows(se);
    // prefix[y][x + 1] = number of `value` pixels in row y, columns [0, x].
    std::vector<int> prefix(static_cast<std::size_t>(h) * (w + 1), 0);
    for (int y = 0; y < h; ++y) {
        int* p = prefix.data() + static_cast<std::size_t>(y) * (w + 1);
        for (int x = 0; x < w; ++x) p[x + 1] = p[x] + (mask.bits()[static_cast<std::size_t>(y) * w + x] == value);
    }
    BinaryMask out(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            bool hit = false;
            for (const ElementRow& r : rows) {
                const int yy = y + r.dy;
                if (yy < 0 || yy >= h) continue;
                const int a = std::max(0, x + r.left);
                const int b = std::min(w - 1, x + r.right);
                if (a > b) continue;
                const int* p = prefix.data() + static_cast<std::size_t>(yy) * (w + 1);
                if (p[b + 1] - p[a] > 0) {
                    hit = true;
                    break;
                }
            }
            out.set(y, x, hit);
        }
    }
    return out;
}

}  // namespace

BinaryMask dilate(const BinaryMask& mask, const BinaryMask& element) { return window_any(mask, element, 1); }

BinaryMask erode(const BinaryMask& mask, const BinaryMask& element) {
    BinaryMask out = window_any(mask, element, 0);
    for (auto& b : out.bits()) b = b ? 0 : 1;
    return out;
}

BinaryMask opening(const BinaryMask& mask, int k) {
    const BinaryMask se = ellipse_element(k);
    return dilate(erode(mask, se), se);
}

BinaryMask closing(const BinaryMask& mask, int k) {
    const BinaryMask se = ellipse_element(k);
    return erode(dilate(mask, se), se);
}

BinaryMask morph_smooth(const BinaryMask& mask, int open_k, int close_k) { return closing(opening(mask, open_k), close_k); }

std::vector<Component> label_components(const BinaryMask& mask) {
    const int h = mask.height(), w = mask.width();
    const std::size_t n = static_cast<std::size_t>(h) * w;
    std::vector<std::uint32_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0u);
    const auto find = [&parent](std::uint32_t a) {
        while (parent[a] != a) {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        return a;
    };
    const auto unite = [&](std::uint32_t a, std::uint32_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        // Smaller index stays root so the root is the raster-first pixel.
        if (a < b) {
            parent[b] = a;
        } else {
            parent[a] = b;
        }
    };

    const auto bits = mask.bits();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::uint32_t i = static_cast<std::uint32_t>(y) * w + x;
            if (!bits[i]) continue;
            // Previously visited 8-neighbours: W, NW, N, NE.
            if (x > 0 && bits[i - 1]) unite(i, i - 1);
            if (y > 0) {
                const std::uint32_t up = i - w;
                if (bits[up]) unite(i, up);
                if (x > 0 && bits[up - 1]) unite(i, up - 1);
                if (x + 1 < w && bits[up + 1]) unite(i, up + 1);
            }
        }
    }

    std::vector<Component> comps;
    std::vector<int> index(n, -1);
    for (std::uint32_t i = 0; i < n; ++i) {
        if (!bits[i]) continue;
        const std::uint32_t root = find(i);
        if (index[root] < 0) {
            index[root] = static_cast<int>(comps.size());
            Component c;
            const int y = static_cast<int>(i / w), x = static_cast<int>(i % w);
            c.bbox = {x, y, x, y};
            comps.push_back(std::move(c));
        }
        Component& c = comps[index[root]];
        const int y = static_cast<int>(i / w), x = static_cast<int>(i % w);
        c.pixels.push_back(i);
        c.bbox.x0 = std::min(c.bbox.x0, x);
        c.bbox.x1 = std::max(c.bbox.x1, x);
        c.bbox.y0 = std::min(c.bbox.y0, y);
        c.bbox.y1 = std::max(c.bbox.y1, y);
    }
    for (auto& c : comps) c.area = static_cast<long>(c.pixels.size());
    return comps;
}

std::vector<Component> drop_small(std::vector<Component> components, double min_area) {
    if (min_area < 0) fail(ErrorKind::InvalidArgument, "min_area must be >= 0");
    std::erase_if(components, [min_area](const Component& c) { return static_cast<double>(c.area) < min_area; });
    return components;
}

double scaled_min_area(double min_area, int h, int w, int reference_side) {
    return min_area * (static_cast<double>(h) * w) / (static_cast<double>(reference_side) * reference_side);
}

bool boxes_near(const BBox& a, const BBox& b) {
    const double dx = a.center_x() - b.center_x();
    const double dy = a.center_y() - b.center_y();
    return std::sqrt(dx * dx + dy * dy) <= a.diag() / 2.0 + b.diag() / 2.0;
}

void sort_boxes_canonical(std::vector<BBox>& boxes) {
    std::stable_sort(boxes.begin(), boxes.end(), [](const BBox& a, const BBox& b) {
        if (a.area() != b.area()) return a.area() > b.area();
        if (a.y0 != b.y0) return a.y0 < b.y0;
        if (a.x0 != b.x0) return a.x0 < b.x0;
        if (a.y1 != b.y1) return a.y1 < b.y1;
        return a.x1 < b.x1;
    });
}

std::vector<BBox> merge_nearby(std::vector<BBox> boxes) {
    for (;;) {
        sort_boxes_canonical(boxes);
        bool merged = false;
        for (std::size_t i = 0; i < boxes.size() && !merged; ++i) {
            for (std::size_t j = i + 1; j < boxes.size(); ++j) {
                if (boxes_near(boxes[i], boxes[j])) {
                    boxes[i] = boxes[i].united(boxes[j]);
                    boxes.erase(boxes.begin() + static_cast<std::ptrdiff_t>(j));
                    merged = true;
                    break;
                }
            }
        }
        if (!merged) return boxes;
    }
}

std::vector<BBox> component_boxes(const BinaryMask& mask) {
    std::vector<BBox> boxes;
    for (const auto& c : label_components(mask)) boxes.push_back(c.bbox);
    return boxes;
}

PostprocessResult postprocess_mask(const BinaryMask& mask, const PostprocessOptions& o) {
    BinaryMask smoothed = o.smooth ? morph_smooth(mask, o.open_k, o.close_k) : mask;
    auto comps = label_components(smoothed);
    if (o.drop) comps = drop_small(std::move(comps), scaled_min_area(o.min_area, mask.height(), mask.width()));

    PostprocessResult r;
    r.mask = BinaryMask(mask.height(), mask.width());
    std::vector<BBox> boxes;
    for (const auto& c : comps) {
        for (std::uint32_t p : c.pixels) r.mask.bits()[p] = 1;
        boxes.push_back(c.bbox);
    }
    if (o.merge) {
        r.boxes = merge_nearby(std::move(boxes));
    } else {
        sort_boxes_canonical(boxes);
        r.boxes = std::move(boxes);
    }
    return r;
}

PostprocessResult postprocess(const Tensor& prob, const PostprocessOptions& o) {
    return postprocess_mask(threshold(prob, o.threshold), o);
}

}  // namespace polyseg
