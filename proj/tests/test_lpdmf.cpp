#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "rb/lpdmf.hpp"

using namespace rb;
using testutil::TestRng;

namespace {

// Reference scan, written independently of the library: full sort instead of
// selection, explicit candidate structs, same contract.
float reference_median(std::vector<float> values) {
    std::sort(values.begin(), values.end());
    return values[(values.size() - 1) / 2];
}

Plane reference_denoise(const Plane& p, const FilterParams& params) {
    const int w = p.width(), h = p.height();
    std::vector<float> out(p.pixels());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * w + x;
            const float v = p.pixels()[idx];
            if (!detect_impulse(v, params)) continue;

            bool replaced = false;
            for (int r = params.window_radius; r <= params.max_radius && !replaced; ++r) {
                std::vector<float> window;
                for (int yy = y - r; yy <= y + r; ++yy) {
                    for (int xx = x - r; xx <= x + r; ++xx) {
                        if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
                        const std::size_t widx = static_cast<std::size_t>(yy) * w + xx;
                        const bool earlier = yy < y || (yy == y && xx < x);
                        window.push_back(earlier ? out[widx] : p.pixels()[widx]);
                    }
                }
                int impulses = 0;
                std::vector<float> clean;
                for (float c : window) {
                    if (detect_impulse(c, params))
                        ++impulses;
                    else
                        clean.push_back(c);
                }
                const bool low_density =
                    static_cast<float>(impulses) <=
                    params.density_switch * static_cast<float>(window.size());
                if (!clean.empty() && (low_density || r == params.max_radius)) {
                    out[idx] = reference_median(clean);
                    replaced = true;
                }
            }
            if (!replaced) out[idx] = idx == 0 ? 0.5f : out[idx - 1];
        }
    }
    return Plane(w, h, std::move(out), p.spacing_mm());
}

Plane random_textured_plane(int w, int h, TestRng& rng) {
    std::vector<float> px(static_cast<std::size_t>(w) * h);
    for (float& v : px) v = static_cast<float>(rng.uniform(0.15, 0.85));
    return Plane(w, h, std::move(px));
}

Plane salt_pepper(const Plane& p, double density, TestRng& rng) {
    std::vector<float> px = p.pixels();
    for (float& v : px)
        if (rng.next_double() < density) v = rng.next_double() < 0.5 ? 0.0f : 1.0f;
    return Plane(p.width(), p.height(), std::move(px), p.spacing_mm());
}

}  // namespace

TEST_CASE("filter params validate their ranges") {
    CHECK_NOTHROW(FilterParams{}.validate());
    FilterParams p;
    p.window_radius = 0;
    CHECK_THROWS_AS(p.validate(), BadFilterParams);
    p = FilterParams{};
    p.max_radius = 4;
    CHECK_THROWS_AS(p.validate(), BadFilterParams);
    p = FilterParams{};
    p.window_radius = 3;
    p.max_radius = 2;
    CHECK_THROWS_AS(p.validate(), BadFilterParams);
    p = FilterParams{};
    p.low_clip = 0.5f;
    p.high_clip = 0.5f;
    CHECK_THROWS_AS(p.validate(), BadFilterParams);
    p = FilterParams{};
    p.density_switch = 0.0f;
    CHECK_THROWS_AS(p.validate(), BadFilterParams);
}

TEST_CASE("impulse detector flags only the clip extremes") {
    const FilterParams params;
    CHECK(detect_impulse(0.0f, params));
    CHECK(detect_impulse(1.0f, params));
    CHECK_FALSE(detect_impulse(0.5f, params));
    CHECK_FALSE(detect_impulse(0.001f, params));
    FilterParams wide;
    wide.low_clip = 0.1f;
    wide.high_clip = 0.9f;
    CHECK(detect_impulse(0.05f, wide));
    CHECK(detect_impulse(0.95f, wide));
    CHECK_FALSE(detect_impulse(0.5f, wide));
}

TEST_CASE("median picks the lower middle element") {
    CHECK(median_of({0.1f, 0.9f, 0.5f}) == 0.5f);
    CHECK(median_of({0.2f, 0.4f}) == 0.2f);
    CHECK(median_of({0.77f}) == 0.77f);
    CHECK_THROWS_AS(median_of({}), EmptySet);
}

TEST_CASE("noise-free planes pass through unchanged") {
    TestRng rng(5);
    const Plane p = random_textured_plane(16, 12, rng);
    const Plane out = denoise(p, FilterParams{});
    for (std::size_t i = 0; i < p.pixels().size(); ++i)
        CHECK(out.pixels()[i] == p.pixels()[i]);
}

TEST_CASE("a lone impulse takes the clean window median") {
    std::vector<float> px(9, 0.4f);
    px[4] = 1.0f;
    const Plane out = denoise(Plane(3, 3, px), FilterParams{});
    CHECK(out.pixels()[4] == 0.4f);
    for (std::size_t i = 0; i < 9; ++i)
        if (i != 4) CHECK(out.pixels()[i] == px[i]);
}

TEST_CASE("denoise matches the reference scan bitwise") {
    TestRng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        const int w = 5 + static_cast<int>(rng.below(20));
        const int h = 5 + static_cast<int>(rng.below(20));
        const double density = rng.uniform(0.05, 0.6);
        const Plane clean = random_textured_plane(w, h, rng);
        const Plane noisy = salt_pepper(clean, density, rng);
        FilterParams params;
        if (trial % 3 == 1) params.max_radius = 3;
        if (trial % 3 == 2) params.density_switch = 0.3f;
        const Plane got = denoise(noisy, params);
        const Plane want = reference_denoise(noisy, params);
        REQUIRE(got.pixels().size() == want.pixels().size());
        for (std::size_t i = 0; i < got.pixels().size(); ++i)
            REQUIRE(got.pixels()[i] == want.pixels()[i]);
    }
}

TEST_CASE("non-impulse pixels are never altered") {
    TestRng rng(9);
    const Plane clean = random_textured_plane(32, 32, rng);
    const Plane noisy = salt_pepper(clean, 0.4, rng);
    const FilterParams params;
    const Plane out = denoise(noisy, params);
    for (std::size_t i = 0; i < out.pixels().size(); ++i)
        if (!detect_impulse(noisy.pixels()[i], params))
            CHECK(out.pixels()[i] == noisy.pixels()[i]);
}

TEST_CASE("denoising is idempotent once impulses are gone") {
    TestRng rng(21);
    const Plane noisy = salt_pepper(random_textured_plane(24, 24, rng), 0.3, rng);
    const Plane once = denoise(noisy, FilterParams{});
    const Plane twice = denoise(once, FilterParams{});
    for (std::size_t i = 0; i < once.pixels().size(); ++i)
        CHECK(twice.pixels()[i] == once.pixels()[i]);
}

TEST_CASE("ramp image at 30 percent impulse density gains 10 dB") {
    std::vector<float> px(64 * 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            px[static_cast<std::size_t>(y) * 64 + x] =
                0.1f + 0.8f * static_cast<float>(x + y) / 126.0f;
    const Plane clean(64, 64, px);
    TestRng rng(7);
    const Plane noisy = salt_pepper(clean, 0.3, rng);
    const Plane out = denoise(noisy, FilterParams{});
    CHECK(psnr(out, clean) >= psnr(noisy, clean) + 10.0);
}

TEST_CASE("mean quality improves at every tested density") {
    for (const double density : {0.1, 0.2, 0.3}) {
        double gain_sum = 0.0;
        for (int i = 0; i < 10; ++i) {
            TestRng rng(100 + i);
            const Plane clean = random_textured_plane(32, 32, rng);
            const Plane noisy = salt_pepper(clean, density, rng);
            gain_sum += psnr(denoise(noisy, FilterParams{}), clean) - psnr(noisy, clean);
        }
        CHECK(gain_sum / 10.0 > 0.0);
    }
}

TEST_CASE("psnr closed forms") {
    const Plane a = Plane::filled(4, 4, 0.0f);
    CHECK(std::isinf(psnr(a, a)));
    CHECK(psnr(a, Plane::filled(4, 4, 1.0f)) == 0.0);
    CHECK(psnr(a, Plane::filled(4, 4, 0.5f)) ==
          Catch::Approx(10.0 * std::log10(4.0)).epsilon(1e-12));
    CHECK_THROWS_AS(psnr(a, Plane::filled(2, 2, 0.5f)), DimMismatch);
}

TEST_CASE("volume denoising applies the scan per slice") {
    TestRng rng(31);
    const Plane clean = random_textured_plane(8, 8, rng);
    const Plane noisy = salt_pepper(clean, 0.2, rng);
    std::vector<float> voxels;
    for (int z = 0; z < 3; ++z)
        voxels.insert(voxels.end(), noisy.pixels().begin(), noisy.pixels().end());
    const Volume vol(8, 8, 3, voxels);
    const Volume den = denoise_volume(vol, FilterParams{});
    const Plane expect = denoise(noisy, FilterParams{});
    for (int z = 0; z < 3; ++z)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                CHECK(den.at(x, y, z) == expect.pixels()[static_cast<std::size_t>(y) * 8 + x]);
}
