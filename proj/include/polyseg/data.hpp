#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "polyseg/postprocess.hpp"
#include "polyseg/tensor.hpp"

namespace polyseg {

struct ImageSample {
    Tensor image;  // (1,3,h,w), values in [0,1]
    BinaryMask mask;
    std::string id;
};

struct CropRect {
    int x = 0, y = 0, width = 0, height = 0;
    bool operator==(const CropRect&) const = default;
};

inline constexpr float kBlackLevel = 16.0f / 255.0f;

/// Strips outer rows/columns whose pixels all have max-channel intensity below
/// `black_level`. Throws Data for an all-black image.
std::pair<Tensor, CropRect> remove_black_border(const Tensor& image, float black_level = kBlackLevel);
Tensor crop(const Tensor& image, const CropRect& rect);
BinaryMask crop(const BinaryMask& mask, const CropRect& rect);

Tensor resize_bilinear(const Tensor& image, int height, int width);
/// src = floor((dst + 0.5) * in / out).
BinaryMask resize_nearest(const BinaryMask& mask, int height, int width);

/// Border removal followed by resizing image (bilinear) and mask (nearest).
ImageSample preprocess_sample(const ImageSample& sample, int height, int width);

struct DatasetStats {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> std{1.0, 1.0, 1.0};

    bool operator==(const DatasetStats&) const = default;
};

/// Exact per-channel mean and population std over every pixel, accumulated in double.
DatasetStats compute_dataset_stats(const std::vector<ImageSample>& samples);
/// (pixel - mean_c) / std_c; throws InvalidArgument when any std is not positive.
Tensor normalize(const Tensor& image, const DatasetStats& stats);

std::string format_stats(const DatasetStats& stats);
DatasetStats parse_stats(const std::string& text);

struct AugmentPolicy {
    bool rotate = true;
    double max_rotation_deg = 25.0;
    bool hflip = true;
    double hflip_prob = 0.5;
    bool vflip = true;
    double vflip_prob = 0.5;
    bool zoom = true;
    double zoom_min = 0.8;
    double zoom_max = 1.2;
    bool shear = true;
    double max_shear_deg = 10.0;
    bool skew = true;
    double max_skew_deg = 10.0;
    bool brightness = true;
    double brightness_delta = 0.2;
    bool contrast = true;
    double contrast_min = 0.8;
    double contrast_max = 1.2;

    static AugmentPolicy none();
    void validate() const;
};

/// Maps output pixel centers to source coordinates: src = A * dst + t.
struct Affine2D {
    std::array<double, 4> a{1.0, 0.0, 0.0, 1.0};  // row-major 2x2
    std::array<double, 2> t{0.0, 0.0};

    std::pair<double, double> apply(double x, double y) const {
        return {a[0] * x + a[1] * y + t[0], a[2] * x + a[3] * y + t[1]};
    }
};

/// Builds the composed rotation, shear, skew, zoom and flip transform about the
/// image center and returns its inverse (output -> source).
Affine2D compose_inverse_transform(int height, int width, double rotation_deg, double shear_deg, double skew_deg,
                                   double zoom, bool hflip, bool vflip);

struct AugmentDraw {
    Affine2D inverse;
    double brightness = 1.0;
    double contrast = 1.0;
};

AugmentDraw sample_augmentation(const AugmentPolicy& policy, int height, int width, std::uint64_t seed);
/// Image: bilinear with border replication. Mask: nearest, background outside the grid.
ImageSample apply_augmentation(const ImageSample& sample, const AugmentDraw& draw);
ImageSample augment(const ImageSample& sample, const AugmentPolicy& policy, std::uint64_t seed);

/// One synthetic lesion: an ellipse with a harmonic-perturbed radius.
struct BlobParams {
    double cx = 0, cy = 0;
    double rx = 1, ry = 1;
    double angle = 0;  // radians
    std::array<double, 3> amplitude{};  // harmonics 2, 3, 4
    std::array<double, 3> phase{};

    /// Whether the pixel center (x, y) lies inside the blob.
    bool contains(double x, double y) const;
    double max_extent() const;
};

struct SyntheticSample {
    ImageSample sample;
    std::vector<BlobParams> blobs;
};

/// Smallest blob area at h x w: 150 pixels at 384x384, rescaled.
double min_blob_area(int height, int width);

BinaryMask rasterize_blobs(const std::vector<BlobParams>& blobs, int height, int width);
std::vector<SyntheticSample> gen_synthetic(int count, int height, int width, std::uint64_t seed);

struct LoadedDataset {
    std::vector<ImageSample> samples;
    std::size_t dropped_empty = 0;
};

/// Reads dir/images/*.png paired with dir/masks/*.png by stem, sorted by stem.
LoadedDataset load_dataset(const std::string& dir, bool drop_empty_masks = false);
void save_dataset(const std::string& dir, const std::vector<ImageSample>& samples);

}  // namespace polyseg
