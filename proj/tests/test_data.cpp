#include "doctest.h"

#include <cmath>
#include <complex>
#include <filesystem>
#include <random>

#include "polyseg/data.hpp"
#include "polyseg/image_io.hpp"
#include "polyseg/ops.hpp"

using namespace polyseg;
namespace fs = std::filesystem;

namespace {

Tensor random_image(int h, int w, std::mt19937_64& rng, float lo = 0.1f, float hi = 1.0f) {
    std::uniform_real_distribution<float> u(lo, hi);
    Tensor t({1, 3, h, w});
    for (float& v : t.data()) v = u(rng);
    return t;
}

BinaryMask random_mask(int h, int w, std::mt19937_64& rng) {
    BinaryMask m(h, w);
    for (auto& b : m.bits()) b = static_cast<std::uint8_t>(rng() % 3 == 0);
    return m;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / "polyseg_test_data" / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

// Signed margin of the pixel centre against the perturbed blob boundary,
// computed in complex form.
double blob_margin(const BlobParams& b, double x, double y) {
    const std::complex<double> z = std::complex<double>(x - b.cx, y - b.cy) * std::polar(1.0, -b.angle);
    const std::complex<double> q(z.real() / b.rx, z.imag() / b.ry);
    double edge = 1.0;
    for (int k = 0; k < 3; ++k) edge += b.amplitude[k] * std::cos((k + 2) * std::arg(q) + b.phase[k]);
    return edge - std::abs(q);
}

AugmentPolicy only_rotation() {
    AugmentPolicy p = AugmentPolicy::none();
    p.rotate = true;
    return p;
}

}  // namespace

TEST_CASE("black border removal") {
    std::mt19937_64 rng(1);
    Tensor img({1, 3, 40, 50});
    const Tensor content = random_image(20, 30, rng, 0.3f, 1.0f);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 20; ++y)
            for (int x = 0; x < 30; ++x) img.at(0, c, y + 10, x + 10) = content.at(0, c, y, x);
    const auto [cropped, rect] = remove_black_border(img);
    CHECK(rect == CropRect{10, 10, 30, 20});
    CHECK(cropped.same_bits(content));
    CHECK(remove_black_border(cropped).second == CropRect{0, 0, 30, 20});

    Tensor dim({1, 3, 12, 12}, 20.0f / 255.0f);
    CHECK(remove_black_border(dim).second == CropRect{0, 0, 12, 12});
    CHECK_THROWS_AS(remove_black_border(Tensor({1, 3, 8, 8})), Error);

    BinaryMask m(40, 50);
    m.set(15, 20, true);
    const BinaryMask cm = crop(m, rect);
    CHECK(cm.height() == 20);
    CHECK(cm.at(5, 10));
}

TEST_CASE("resizing") {
    const Tensor flat({1, 3, 7, 9}, 0.7f);
    for (auto [h, w] : {std::pair{3, 4}, std::pair{16, 20}, std::pair{7, 9}}) {
        const Tensor r = resize_bilinear(flat, h, w);
        for (float v : r.data()) REQUIRE(v == 0.7f);
    }
    std::mt19937_64 rng(2);
    const Tensor small = random_image(2, 2, rng);
    Tape t(false);
    CHECK(resize_bilinear(small, 4, 4).same_bits(upsample_bilinear(t.input(small), 2).value()));

    for (int k : {2, 3, 4}) {
        const BinaryMask m = random_mask(9, 7, rng);
        const BinaryMask up = resize_nearest(m, 9 * k, 7 * k);
        CHECK(resize_nearest(up, 9, 7) == m);
        CHECK(up.count() == m.count() * k * k);
    }
}

TEST_CASE("dataset statistics against a two-pass oracle") {
    std::mt19937_64 rng(3);
    std::vector<ImageSample> set;
    for (int i = 0; i < 4; ++i) set.push_back({random_image(6 + i, 5, rng, 0.0f, 1.0f), BinaryMask(6 + i, 5), "s"});
    const DatasetStats s = compute_dataset_stats(set);
    for (int c = 0; c < 3; ++c) {
        double sum = 0.0, n = 0.0;
        for (const auto& im : set)
            for (int y = 0; y < im.image.shape().h; ++y)
                for (int x = 0; x < 5; ++x, n += 1) sum += im.image.at(0, c, y, x);
        const double mean = sum / n;
        double sq = 0.0;
        for (const auto& im : set)
            for (int y = 0; y < im.image.shape().h; ++y)
                for (int x = 0; x < 5; ++x) sq += (im.image.at(0, c, y, x) - mean) * (im.image.at(0, c, y, x) - mean);
        CHECK(s.mean[c] == doctest::Approx(mean).epsilon(1e-9));
        CHECK(s.std[c] == doctest::Approx(std::sqrt(sq / n)).epsilon(1e-9));
    }

    std::vector<ImageSample> normed;
    for (const auto& im : set) normed.push_back({normalize(im.image, s), im.mask, im.id});
    const DatasetStats after = compute_dataset_stats(normed);
    for (int c = 0; c < 3; ++c) {
        CHECK(std::abs(after.mean[c]) < 1e-3);
        CHECK(std::abs(after.std[c] - 1.0) < 1e-3);
    }

    const std::vector<ImageSample> two{{Tensor({1, 3, 2, 2}, 0.0f), BinaryMask(2, 2), "a"},
                                       {Tensor({1, 3, 2, 2}, 1.0f), BinaryMask(2, 2), "b"}};
    const DatasetStats half = compute_dataset_stats(two);
    CHECK(half.mean[1] == 0.5);
    CHECK(half.std[2] == 0.5);

    const std::vector<ImageSample> gray{{Tensor({1, 3, 2, 2}, 0.5f), BinaryMask(2, 2), "g"}};
    CHECK_THROWS_AS(normalize(gray[0].image, compute_dataset_stats(gray)), Error);
    CHECK_THROWS_AS(compute_dataset_stats({}), Error);
    CHECK(normalize(two[1].image, DatasetStats{}).same_bits(two[1].image));
    CHECK(normalize(Tensor({1, 3, 2, 2}, 0.5f), half).same_bits(Tensor({1, 3, 2, 2}, 0.0f)));
    CHECK(parse_stats(format_stats(s)) == s);
}

TEST_CASE("augmentation geometry") {
    std::mt19937_64 rng(4);
    const ImageSample s{random_image(16, 16, rng), random_mask(16, 16, rng), "x"};

    SUBCASE("disabled policy is the identity") {
        const ImageSample a = augment(s, AugmentPolicy::none(), 123);
        CHECK(a.image.same_bits(s.image));
        CHECK(a.mask == s.mask);
    }
    SUBCASE("flips mirror both planes and are involutions") {
        AugmentDraw d;
        d.inverse = compose_inverse_transform(16, 16, 0, 0, 0, 1.0, true, false);
        const ImageSample once = apply_augmentation(s, d);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                CHECK(once.mask.at(y, x) == s.mask.at(y, 15 - x));
                CHECK(once.image.at(0, 1, y, x) == s.image.at(0, 1, y, 15 - x));
            }
        const ImageSample twice = apply_augmentation(once, d);
        CHECK(twice.image.same_bits(s.image));
        CHECK(twice.mask == s.mask);
    }
    SUBCASE("quarter turns permute pixels") {
        AugmentDraw d;
        d.inverse = compose_inverse_transform(16, 16, 90, 0, 0, 1.0, false, false);
        const ImageSample r = apply_augmentation(s, d);
        CHECK(r.mask.count() == s.mask.count());
        bool cw = true, ccw = true;
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                cw &= r.mask.at(y, x) == s.mask.at(15 - x, y) && r.image.at(0, 0, y, x) == s.image.at(0, 0, 15 - x, y);
                ccw &= r.mask.at(y, x) == s.mask.at(x, 15 - y) && r.image.at(0, 0, y, x) == s.image.at(0, 0, x, 15 - y);
            }
        CHECK((cw || ccw));
        ImageSample full = r;
        for (int i = 0; i < 3; ++i) full = apply_augmentation(full, d);
        CHECK(full.mask == s.mask);
        CHECK(full.image.same_bits(s.image));
    }
    SUBCASE("photometric changes leave the mask alone") {
        AugmentPolicy p = AugmentPolicy::none();
        p.brightness = p.contrast = true;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const ImageSample a = augment(s, p, seed);
            CHECK(a.mask == s.mask);
            for (float v : a.image.data()) CHECK((v >= 0.0f && v <= 1.0f));
        }
    }
    SUBCASE("seeded draws are reproducible and the mask stays binary") {
        const AugmentPolicy p;
        const ImageSample a = augment(s, p, 77), b = augment(s, p, 77);
        CHECK(a.image.same_bits(b.image));
        CHECK(a.mask == b.mask);
        for (auto bit : a.mask.bits()) CHECK(bit <= 1);
        CHECK_FALSE(augment(s, p, 78).image.same_bits(a.image));
    }
    SUBCASE("one transform's draw does not depend on other flags") {
        const AugmentDraw all = sample_augmentation(AugmentPolicy{}, 16, 16, 5);
        const AugmentDraw rot = sample_augmentation(only_rotation(), 16, 16, 5);
        CHECK(all.brightness != 1.0);
        CHECK(rot.brightness == 1.0);
    }
}

TEST_CASE("synthetic generator") {
    const auto a = gen_synthetic(6, 64, 64, 12), b = gen_synthetic(6, 64, 64, 12);
    REQUIRE(a.size() == 6);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].sample.image.same_bits(b[i].sample.image));
        CHECK(a[i].sample.mask == b[i].sample.mask);
        CHECK(a[i].sample.id == b[i].sample.id);
        CHECK(a[i].blobs.size() >= 1);
        CHECK(a[i].blobs.size() <= 3);

        // Mask equals the analytic rasterization of the stored parameters,
        // away from pixels that sit on a boundary to within rounding.
        const BinaryMask& m = a[i].sample.mask;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                double best = -1e9;
                for (const auto& blob : a[i].blobs) best = std::max(best, blob_margin(blob, x, y));
                if (std::abs(best) < 1e-9) continue;
                REQUIRE(m.at(y, x) == (best > 0));
            }
        const auto comps = label_components(m);
        CHECK(comps.size() >= 1);
        for (const auto& c : comps) CHECK(static_cast<double>(c.area) >= min_blob_area(64, 64));
        for (float v : a[i].sample.image.data()) CHECK((v >= 0.0f && v <= 1.0f));
    }
    CHECK_FALSE(gen_synthetic(1, 64, 64, 13)[0].sample.image.same_bits(a[0].sample.image));
    CHECK(min_blob_area(384, 384) == 150.0);
    CHECK_THROWS_AS(gen_synthetic(0, 64, 64, 1), Error);
}

TEST_CASE("png and dataset round trips") {
    const fs::path dir = fresh_dir("roundtrip");
    std::vector<ImageSample> set;
    for (auto& s : gen_synthetic(3, 32, 48, 8)) set.push_back(s.sample);
    save_dataset(dir.string(), set);
    const LoadedDataset back = load_dataset(dir.string());
    REQUIRE(back.samples.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back.samples[i].id == set[i].id);
        CHECK(back.samples[i].mask == set[i].mask);
        CHECK(tensor_to_rgb(back.samples[i].image) == tensor_to_rgb(set[i].image));
    }

    std::mt19937_64 rng(6);
    const BinaryMask m = random_mask(21, 13, rng);
    write_png_mask((dir / "m.png").string(), m);
    CHECK(read_png_mask((dir / "m.png").string()) == m);
    RgbImage rgb{5, 4, {}};
    for (int i = 0; i < 60; ++i) rgb.pixels.push_back(static_cast<std::uint8_t>(rng()));
    write_png_rgb((dir / "c.png").string(), rgb);
    CHECK(read_png_rgb((dir / "c.png").string()) == rgb);
    CHECK_THROWS_AS(read_png_rgb((dir / "nope.png").string()), Error);
}

TEST_CASE("dataset loading errors") {
    const fs::path empty = fresh_dir("empty");
    CHECK_THROWS_AS(load_dataset(empty.string()), Error);

    const fs::path dir = fresh_dir("broken");
    std::vector<ImageSample> set;
    for (auto& s : gen_synthetic(2, 32, 32, 9)) set.push_back(s.sample);
    save_dataset(dir.string(), set);
    fs::remove(dir / "masks" / (set[1].id + ".png"));
    try {
        load_dataset(dir.string());
        FAIL("expected a data error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find(set[1].id) != std::string::npos);
    }
    write_png_mask((dir / "masks" / (set[1].id + ".png")).string(), BinaryMask(16, 32));
    CHECK_THROWS_AS(load_dataset(dir.string()), Error);

    // Frames without a lesion can be filtered out.
    write_png_mask((dir / "masks" / (set[1].id + ".png")).string(), BinaryMask(32, 32));
    CHECK(load_dataset(dir.string()).samples.size() == 2);
    const LoadedDataset kept = load_dataset(dir.string(), true);
    CHECK(kept.samples.size() == 1);
    CHECK(kept.dropped_empty == 1);
}
