#include "polyseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "polyseg/image_io.hpp"
#include "polyseg/ops.hpp"

namespace polyseg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Geometry preprocessing

std::pair<Tensor, CropRect> remove_black_border(const Tensor& image, float black_level) {
    const Shape& s = image.shape();
    require_shape(s.n == 1 && s.c == 3, "remove_black_border expects (1,3,h,w), got " + s.str());
    std::vector<bool> row_content(s.h, false), col_content(s.w, false);
    const std::size_t plane = s.plane();
    for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * s.w + x;
            const float v = std::max({image.data()[p], image.data()[plane + p], image.data()[2 * plane + p]});
            if (v >= black_level) {
                row_content[y] = true;
                col_content[x] = true;
            }
        }
    }
    const auto first = [](const std::vector<bool>& v) {
        return static_cast<int>(std::find(v.begin(), v.end(), true) - v.begin());
    };
    const auto last = [](const std::vector<bool>& v) {
        return static_cast<int>(v.rend() - std::find(v.rbegin(), v.rend(), true)) - 1;
    };
    const int top = first(row_content);
    if (top == s.h) fail(ErrorKind::Data, "image is entirely black; nothing left after border removal");
    const CropRect rect{first(col_content), top, last(col_content) - first(col_content) + 1,
                        last(row_content) - top + 1};
    return {crop(image, rect), rect};
}

Tensor crop(const Tensor& image, const CropRect& r) {
    const Shape& s = image.shape();
    if (r.x < 0 || r.y < 0 || r.width < 1 || r.height < 1 || r.x + r.width > s.w || r.y + r.height > s.h) {
        fail(ErrorKind::Shape, "crop rectangle outside image " + s.str());
    }
    Tensor out({s.n, s.c, r.height, r.width});
    for (int p = 0; p < s.n * s.c; ++p) {
        for (int y = 0; y < r.height; ++y) {
            const float* src = image.ptr() + static_cast<std::size_t>(p) * s.plane() +
                               static_cast<std::size_t>(y + r.y) * s.w + r.x;
            std::copy(src, src + r.width,
                      out.ptr() + static_cast<std::size_t>(p) * r.height * r.width + static_cast<std::size_t>(y) * r.width);
        }
    }
    return out;
}

BinaryMask crop(const BinaryMask& mask, const CropRect& r) {
    if (r.x < 0 || r.y < 0 || r.width < 1 || r.height < 1 || r.x + r.width > mask.width() ||
        r.y + r.height > mask.height()) {
        fail(ErrorKind::Shape, "crop rectangle outside mask");
    }
    BinaryMask out(r.height, r.width);
    for (int y = 0; y < r.height; ++y) {
        for (int x = 0; x < r.width; ++x) out.set(y, x, mask.at(y + r.y, x + r.x));
    }
    return out;
}

Tensor resize_bilinear(const Tensor& image, int height, int width) {
    return kernels::resize_bilinear(image, height, width);
}

BinaryMask resize_nearest(const BinaryMask& mask, int height, int width) {
    BinaryMask out(height, width);
    std::vector<int> xs(width);
    for (int x = 0; x < width; ++x) {
        xs[x] = std::min(mask.width() - 1,
                         static_cast<int>(std::floor((x + 0.5) * mask.width() / static_cast<double>(width))));
    }
    for (int y = 0; y < height; ++y) {
        const int sy = std::min(mask.height() - 1,
                                static_cast<int>(std::floor((y + 0.5) * mask.height() / static_cast<double>(height))));
        for (int x = 0; x < width; ++x) out.set(y, x, mask.at(sy, xs[x]));
    }
    return out;
}

ImageSample preprocess_sample(const ImageSample& sample, int height, int width) {
    const Shape& s = sample.image.shape();
    if (s.h != sample.mask.height() || s.w != sample.mask.width()) {
        fail(ErrorKind::Data, "sample '" + sample.id + "': image and mask dimensions differ");
    }
    auto [cropped, rect] = remove_black_border(sample.image);
    ImageSample out;
    out.id = sample.id;
    BinaryMask mask = crop(sample.mask, rect);
    out.image = (rect.height == height && rect.width == width) ? std::move(cropped)
                                                               : resize_bilinear(cropped, height, width);
    out.mask = (mask.height() == height && mask.width() == width) ? std::move(mask)
                                                                   : resize_nearest(mask, height, width);
    return out;
}

// ---------------------------------------------------------------------------
// Normalization

DatasetStats compute_dataset_stats(const std::vector<ImageSample>& samples) {
    if (samples.empty()) fail(ErrorKind::Data, "cannot compute statistics of an empty dataset");
    std::array<double, 3> sum{}, sq{};
    double count = 0.0;
    for (const auto& s : samples) {
        const Shape& sh = s.image.shape();
        require_shape(sh.n == 1 && sh.c == 3, "sample '" + s.id + "' is not a (1,3,h,w) image");
        const std::size_t plane = sh.plane();
        for (int c = 0; c < 3; ++c) {
            const float* p = s.image.ptr() + c * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                sum[c] += p[i];
                sq[c] += static_cast<double>(p[i]) * p[i];
            }
        }
        count += static_cast<double>(plane);
    }
    DatasetStats st;
    for (int c = 0; c < 3; ++c) {
        st.mean[c] = sum[c] / count;
        st.std[c] = std::sqrt(std::max(0.0, sq[c] / count - st.mean[c] * st.mean[c]));
    }
    return st;
}

Tensor normalize(const Tensor& image, const DatasetStats& stats) {
    const Shape& s = image.shape();
    require_shape(s.c == 3, "normalize expects 3 channels, got " + s.str());
    for (int c = 0; c < 3; ++c) {
        if (!(stats.std[c] > 0.0)) {
            fail(ErrorKind::InvalidArgument, "dataset std of channel " + std::to_string(c) + " is zero");
        }
    }
    Tensor out(s);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < 3; ++c) {
            const std::size_t off = (static_cast<std::size_t>(n) * 3 + c) * s.plane();
            const double m = stats.mean[c], inv = 1.0 / stats.std[c];
            for (std::size_t i = 0; i < s.plane(); ++i) {
                out.data()[off + i] = static_cast<float>((image.data()[off + i] - m) * inv);
            }
        }
    }
    return out;
}

std::string format_stats(const DatasetStats& s) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "mean " << s.mean[0] << " " << s.mean[1] << " " << s.mean[2] << "\n";
    os << "std " << s.std[0] << " " << s.std[1] << " " << s.std[2] << "\n";
    return os.str();
}

DatasetStats parse_stats(const std::string& text) {
    std::istringstream is(text);
    DatasetStats s;
    std::string tag_mean, tag_std;
    is >> tag_mean >> s.mean[0] >> s.mean[1] >> s.mean[2] >> tag_std >> s.std[0] >> s.std[1] >> s.std[2];
    if (!is || tag_mean != "mean" || tag_std != "std") fail(ErrorKind::Data, "malformed stats text");
    return s;
}

// ---------------------------------------------------------------------------
// Augmentation

AugmentPolicy AugmentPolicy::none() {
    AugmentPolicy p;
    p.rotate = p.hflip = p.vflip = p.zoom = p.shear = p.skew = p.brightness = p.contrast = false;
    return p;
}

void AugmentPolicy::validate() const {
    const auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (max_rotation_deg < 0 || max_shear_deg < 0 || max_skew_deg < 0 || brightness_delta < 0 ||
        !prob(hflip_prob) || !prob(vflip_prob) || !(zoom_min > 0) || zoom_max < zoom_min || !(contrast_min >= 0) ||
        contrast_max < contrast_min || max_shear_deg >= 90 || max_skew_deg >= 90) {
        fail(ErrorKind::InvalidArgument, "invalid augmentation policy ranges");
    }
}

namespace {

double snap(double v) {
    if (std::abs(v) < 1e-12) return 0.0;
    if (std::abs(v - 1.0) < 1e-12) return 1.0;
    if (std::abs(v + 1.0) < 1e-12) return -1.0;
    return v;
}

using Mat2 = std::array<double, 4>;

Mat2 mul(const Mat2& p, const Mat2& q) {
    return {p[0] * q[0] + p[1] * q[2], p[0] * q[1] + p[1] * q[3], p[2] * q[0] + p[3] * q[2],
            p[2] * q[1] + p[3] * q[3]};
}

}  // namespace

Affine2D compose_inverse_transform(int height, int width, double rotation_deg, double shear_deg, double skew_deg,
                                   double zoom, bool hflip, bool vflip) {
    constexpr double deg = std::numbers::pi / 180.0;
    const double c = snap(std::cos(rotation_deg * deg)), s = snap(std::sin(rotation_deg * deg));
    const Mat2 rot{c, -s, s, c};
    const Mat2 shear{1.0, snap(std::tan(shear_deg * deg)), 0.0, 1.0};
    const Mat2 skew{1.0, 0.0, snap(std::tan(skew_deg * deg)), 1.0};
    const Mat2 scale{zoom, 0.0, 0.0, zoom};
    const Mat2 flip{hflip ? -1.0 : 1.0, 0.0, 0.0, vflip ? -1.0 : 1.0};
    const Mat2 fwd = mul(rot, mul(shear, mul(skew, mul(scale, flip))));
    const double det = fwd[0] * fwd[3] - fwd[1] * fwd[2];
    if (std::abs(det) < 1e-12) fail(ErrorKind::InvalidArgument, "degenerate augmentation transform");

    Affine2D inv;
    inv.a = {fwd[3] / det, -fwd[1] / det, -fwd[2] / det, fwd[0] / det};
    const double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
    inv.t = {cx - (inv.a[0] * cx + inv.a[1] * cy), cy - (inv.a[2] * cx + inv.a[3] * cy)};
    return inv;
}

AugmentDraw sample_augmentation(const AugmentPolicy& p, int height, int width, std::uint64_t seed) {
    p.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto range = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    // Every draw is consumed regardless of flags so enabling one transform does
    // not shift the random stream of the others.
    const double rotation = range(-p.max_rotation_deg, p.max_rotation_deg);
    const bool hflip = unit(rng) < p.hflip_prob;
    const bool vflip = unit(rng) < p.vflip_prob;
    const double zoom = range(p.zoom_min, p.zoom_max);
    const double shear = range(-p.max_shear_deg, p.max_shear_deg);
    const double skew = range(-p.max_skew_deg, p.max_skew_deg);
    const double bright = range(1.0 - p.brightness_delta, 1.0 + p.brightness_delta);
    const double contrast = range(p.contrast_min, p.contrast_max);

    AugmentDraw d;
    d.inverse = compose_inverse_transform(height, width, p.rotate ? rotation : 0.0, p.shear ? shear : 0.0,
                                          p.skew ? skew : 0.0, p.zoom ? zoom : 1.0, p.hflip && hflip,
                                          p.vflip && vflip);
    d.brightness = p.brightness ? bright : 1.0;
    d.contrast = p.contrast ? contrast : 1.0;
    return d;
}

ImageSample apply_augmentation(const ImageSample& sample, const AugmentDraw& d) {
    const Shape& s = sample.image.shape();
    require_shape(s.n == 1 && s.c == 3, "augment expects (1,3,h,w), got " + s.str());
    if (sample.mask.height() != s.h || sample.mask.width() != s.w) {
        fail(ErrorKind::Data, "sample '" + sample.id + "': image and mask dimensions differ");
    }
    ImageSample out;
    out.id = sample.id;
    out.image = Tensor(s);
    out.mask = BinaryMask(s.h, s.w);
    const std::size_t plane = s.plane();
    for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
            const auto [sx, sy] = d.inverse.apply(x, y);
            const int mx = static_cast<int>(std::floor(sx + 0.5));
            const int my = static_cast<int>(std::floor(sy + 0.5));
            out.mask.set(y, x, sample.mask.contains(my, mx) && sample.mask.at(my, mx));

            const double cx = std::clamp(sx, 0.0, s.w - 1.0), cy = std::clamp(sy, 0.0, s.h - 1.0);
            const int x0 = static_cast<int>(std::floor(cx)), y0 = static_cast<int>(std::floor(cy));
            const int x1 = std::min(x0 + 1, s.w - 1), y1 = std::min(y0 + 1, s.h - 1);
            const float fx = static_cast<float>(cx - x0), fy = static_cast<float>(cy - y0);
            for (int c = 0; c < 3; ++c) {
                const float* p = sample.image.ptr() + c * plane;
                const float top = p[y0 * s.w + x0] + fx * (p[y0 * s.w + x1] - p[y0 * s.w + x0]);
                const float bottom = p[y1 * s.w + x0] + fx * (p[y1 * s.w + x1] - p[y1 * s.w + x0]);
                out.image.data()[c * plane + static_cast<std::size_t>(y) * s.w + x] = top + fy * (bottom - top);
            }
        }
    }

    if (d.brightness != 1.0 || d.contrast != 1.0) {
        auto px = out.image.data();
        double mean = 0.0;
        for (float& v : px) {
            v = static_cast<float>(v * d.brightness);
            mean += v;
        }
        mean /= static_cast<double>(px.size());
        for (float& v : px) {
            v = std::clamp(static_cast<float>((v - mean) * d.contrast + mean), 0.0f, 1.0f);
        }
    }
    return out;
}

ImageSample augment(const ImageSample& sample, const AugmentPolicy& policy, std::uint64_t seed) {
    const Shape& s = sample.image.shape();
    return apply_augmentation(sample, sample_augmentation(policy, s.h, s.w, seed));
}

// ---------------------------------------------------------------------------
// Synthetic data

bool BlobParams::contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double u = (ca * dx + sa * dy) / rx;
    const double v = (-sa * dx + ca * dy) / ry;
    const double rho = std::sqrt(u * u + v * v);
    const double theta = std::atan2(v, u);
    double r = 1.0;
    for (int k = 0; k < 3; ++k) r += amplitude[k] * std::cos((k + 2) * theta + phase[k]);
    return rho <= r;
}

double BlobParams::max_extent() const {
    return (1.0 + amplitude[0] + amplitude[1] + amplitude[2]) * std::max(rx, ry);
}

double min_blob_area(int height, int width) { return scaled_min_area(150.0, height, width); }

BinaryMask rasterize_blobs(const std::vector<BlobParams>& blobs, int height, int width) {
    BinaryMask m(height, width);
    for (const auto& b : blobs) {
        const int x0 = std::max(0, static_cast<int>(std::floor(b.cx - b.max_extent())));
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(b.cx + b.max_extent())));
        const int y0 = std::max(0, static_cast<int>(std::floor(b.cy - b.max_extent())));
        const int y1 = std::min(height - 1, static_cast<int>(std::ceil(b.cy + b.max_extent())));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                if (b.contains(x, y)) m.set(y, x, true);
            }
        }
    }
    return m;
}

std::vector<SyntheticSample> gen_synthetic(int count, int height, int width, std::uint64_t seed) {
    if (count < 1) fail(ErrorKind::InvalidArgument, "synthetic sample count must be positive");
    if (height < 16 || width < 16) fail(ErrorKind::InvalidArgument, "synthetic images must be at least 16x16");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto range = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    const double side = std::min(height, width);
    const double min_area = min_blob_area(height, width);

    std::vector<SyntheticSample> out;
    for (int i = 0; i < count; ++i) {
        SyntheticSample ss;
        std::ostringstream id;
        id << "synth_" << std::setw(4) << std::setfill('0') << i;
        ss.sample.id = id.str();

        const int wanted = 1 + static_cast<int>(unit(rng) * 3.0) % 3;
        for (int attempt = 0; attempt < 200 && static_cast<int>(ss.blobs.size()) < wanted; ++attempt) {
            BlobParams b;
            b.rx = range(0.09, 0.2) * side;
            b.ry = b.rx * range(0.7, 1.0);
            b.angle = range(0.0, std::numbers::pi);
            for (int k = 0; k < 3; ++k) {
                b.amplitude[k] = range(0.0, 0.08);
                b.phase[k] = range(0.0, 2.0 * std::numbers::pi);
            }
            const double ext = b.max_extent();
            if (2.0 * ext + 4.0 > side) continue;
            b.cx = range(ext + 1.0, width - 2.0 - ext);
            b.cy = range(ext + 1.0, height - 2.0 - ext);
            const bool clear = std::all_of(ss.blobs.begin(), ss.blobs.end(), [&](const BlobParams& o) {
                return std::hypot(o.cx - b.cx, o.cy - b.cy) > ext + o.max_extent() + 2.0;
            });
            if (!clear) continue;
            if (static_cast<double>(rasterize_blobs({b}, height, width).count()) < min_area) continue;
            ss.blobs.push_back(b);
        }
        if (ss.blobs.empty()) fail(ErrorKind::InvalidArgument, "could not place a synthetic blob");
        ss.sample.mask = rasterize_blobs(ss.blobs, height, width);

        // Mucosa-like background: tinted base, low-frequency gratings, pixel noise, vignetting.
        const std::array<double, 3> base{range(0.66, 0.78), range(0.34, 0.44), range(0.27, 0.35)};
        std::array<std::array<double, 4>, 3> gratings{};
        for (auto& g : gratings) g = {range(1.0, 5.0), range(0.0, std::numbers::pi), range(0.0, 6.3), range(0.02, 0.05)};
        const std::array<double, 3> tint{range(1.06, 1.14), range(0.86, 0.94), range(0.9, 1.0)};

        Tensor img({1, 3, height, width});
        const std::size_t plane = static_cast<std::size_t>(height) * width;
        const double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                double tex = 0.0;
                for (const auto& g : gratings) {
                    const double proj = (x * std::cos(g[1]) + y * std::sin(g[1])) / side;
                    tex += g[3] * std::sin(2.0 * std::numbers::pi * g[0] * proj + g[2]);
                }
                const double r2 = (std::pow((x - cx) / (width / 2.0), 2) + std::pow((y - cy) / (height / 2.0), 2)) / 2.0;
                const double vignette = 1.0 - 0.3 * r2;
                double shade = 1.0;
                std::array<double, 3> color = base;
                for (const auto& b : ss.blobs) {
                    if (!b.contains(x, y)) continue;
                    const double d = std::hypot((x - b.cx) / b.rx, (y - b.cy) / b.ry);
                    shade = 1.0 + 0.15 * std::max(0.0, 1.0 - d * d);
                    for (int c = 0; c < 3; ++c) color[c] = base[c] * tint[c];
                }
                for (int c = 0; c < 3; ++c) {
                    const double noise = range(-0.02, 0.02);
                    const double v = (color[c] * shade + tex + noise) * vignette;
                    img.data()[c * plane + static_cast<std::size_t>(y) * width + x] =
                        static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
        }
        ss.sample.image = std::move(img);
        out.push_back(std::move(ss));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Disk layout

LoadedDataset load_dataset(const std::string& dir, bool drop_empty_masks) {
    const fs::path root(dir), images = root / "images", masks = root / "masks";
    if (!fs::is_directory(images)) fail(ErrorKind::Data, "dataset '" + dir + "' has no images/ directory");
    if (!fs::is_directory(masks)) fail(ErrorKind::Data, "dataset '" + dir + "' has no masks/ directory");

    std::map<std::string, fs::path> image_files, mask_files;
    for (const auto& e : fs::directory_iterator(images)) {
        if (e.is_regular_file() && e.path().extension() == ".png") image_files[e.path().stem().string()] = e.path();
    }
    for (const auto& e : fs::directory_iterator(masks)) {
        if (e.is_regular_file() && e.path().extension() == ".png") mask_files[e.path().stem().string()] = e.path();
    }
    if (image_files.empty()) fail(ErrorKind::Data, "dataset '" + dir + "' contains no images");
    for (const auto& [stem, path] : mask_files) {
        if (!image_files.count(stem)) fail(ErrorKind::Data, "mask '" + path.string() + "' has no matching image");
    }

    LoadedDataset out;
    for (const auto& [stem, path] : image_files) {
        const auto m = mask_files.find(stem);
        if (m == mask_files.end()) fail(ErrorKind::Data, "image '" + stem + "' has no mask in " + masks.string());
        ImageSample s;
        s.id = stem;
        s.image = rgb_to_tensor(read_png_rgb(path.string()));
        s.mask = read_png_mask(m->second.string());
        if (s.mask.height() != s.image.shape().h || s.mask.width() != s.image.shape().w) {
            fail(ErrorKind::Data, "mask '" + m->second.string() + "' is " + std::to_string(s.mask.height()) + "x" +
                                      std::to_string(s.mask.width()) + " but image is " +
                                      std::to_string(s.image.shape().h) + "x" + std::to_string(s.image.shape().w));
        }
        if (drop_empty_masks && s.mask.count() == 0) {
            ++out.dropped_empty;
            continue;
        }
        out.samples.push_back(std::move(s));
    }
    return out;
}

void save_dataset(const std::string& dir, const std::vector<ImageSample>& samples) {
    const fs::path root(dir);
    std::error_code ec;
    fs::create_directories(root / "images", ec);
    if (ec) fail(ErrorKind::Io, "cannot create '" + (root / "images").string() + "': " + ec.message());
    fs::create_directories(root / "masks", ec);
    if (ec) fail(ErrorKind::Io, "cannot create '" + (root / "masks").string() + "': " + ec.message());
    for (const auto& s : samples) {
        write_png_rgb((root / "images" / (s.id + ".png")).string(), tensor_to_rgb(s.image));
        write_png_mask((root / "masks" / (s.id + ".png")).string(), s.mask);
    }
}

}  // namespace polyseg
