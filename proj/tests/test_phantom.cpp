#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "helpers.hpp"
#include "rb/phantom.hpp"

using namespace rb;

namespace {

PhantomSpec small_spec(std::uint64_t seed) {
    PhantomSpec spec;
    spec.dims = {32, 32, 32};
    spec.tumor_count = 1;
    spec.diameter_lo_mm = 8.0;
    spec.diameter_hi_mm = 12.0;
    spec.seed = seed;
    return spec;
}

}  // namespace

TEST_CASE("phantom specs validate their ranges") {
    CHECK_NOTHROW(PhantomSpec{}.validate());
    PhantomSpec s;
    s.dims = {0, 4, 4};
    CHECK_THROWS_AS(s.validate(), DimMismatch);
    s = PhantomSpec{};
    s.tumor_count = -1;
    CHECK_THROWS_AS(s.validate(), UnplaceableTumor);
    s = PhantomSpec{};
    s.diameter_lo_mm = 5.0;
    s.diameter_hi_mm = 4.0;
    CHECK_THROWS_AS(s.validate(), UnplaceableTumor);
    s = PhantomSpec{};
    s.noise_density = 1.0;
    CHECK_THROWS_AS(s.validate(), BadFilterParams);
}

TEST_CASE("generation is a pure function of the spec") {
    const PhantomTruth a = generate_phantom(small_spec(42));
    const PhantomTruth b = generate_phantom(small_spec(42));
    CHECK(a.volume.voxels() == b.volume.voxels());
    CHECK(a.mask.labels() == b.mask.labels());
    CHECK(a.summary.max_diameter_mm == b.summary.max_diameter_mm);

    const PhantomTruth c = generate_phantom(small_spec(43));
    CHECK(a.volume.voxels() != c.volume.voxels());
}

TEST_CASE("zero tumors leave a pure textured background") {
    PhantomSpec spec = small_spec(7);
    spec.tumor_count = 0;
    const PhantomTruth t = generate_phantom(spec);
    for (std::uint8_t l : t.mask.labels()) CHECK(l == 0);
    CHECK(t.volume.voxels() == t.clean_volume.voxels());
    for (float v : t.volume.voxels()) {
        CHECK(v >= 0.2f);
        CHECK(v <= 0.6f);
    }
    CHECK(t.summary.component_count() == 0);
}

TEST_CASE("background textures behave as labeled") {
    PhantomSpec spec = small_spec(9);
    spec.tumor_count = 0;

    spec.background_texture = Texture::Flat;
    const PhantomTruth flat = generate_phantom(spec);
    for (float v : flat.volume.voxels()) CHECK(v == 0.4f);

    spec.background_texture = Texture::Gradient;
    const PhantomTruth grad = generate_phantom(spec);
    CHECK(grad.volume.at(0, 0, 0) == Catch::Approx(0.2).margin(1e-6));
    CHECK(grad.volume.at(31, 31, 31) == Catch::Approx(0.6).margin(1e-6));
    for (int x = 1; x < 32; ++x)
        CHECK(grad.volume.at(x, 5, 5) >= grad.volume.at(x - 1, 5, 5));

    spec.background_texture = Texture::ValueNoise;
    const PhantomTruth noise = generate_phantom(spec);
    float lo = 1.0f, hi = 0.0f;
    for (float v : noise.volume.voxels()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo >= 0.2f);
    CHECK(hi <= 0.6f);
    CHECK(hi - lo > 0.05f);  // actually textured, not constant

    CHECK(to_string(Texture::ValueNoise) == std::string("value-noise"));
}

TEST_CASE("painted tumors are bright and the mask is exact") {
    const PhantomTruth t = generate_phantom(small_spec(11));
    std::size_t tumor_voxels = 0;
    for (std::size_t i = 0; i < t.mask.labels().size(); ++i) {
        if (t.mask.labels()[i]) {
            ++tumor_voxels;
            CHECK(t.clean_volume.voxels()[i] >= 0.79f);
        } else {
            CHECK(t.clean_volume.voxels()[i] <= 0.61f);
        }
    }
    CHECK(tumor_voxels > 50);  // an 8-12 mm ellipsoid at 1 mm spacing is hundreds of voxels
}

TEST_CASE("the reported summary matches a re-measurement of the mask") {
    PhantomSpec spec = small_spec(13);
    spec.tumor_count = 2;
    const PhantomTruth t = generate_phantom(spec);
    const LesionSummary measured =
        lesion_features(t.mask, Spacing{spec.spacing_mm, spec.spacing_mm, spec.spacing_mm});
    CHECK(t.summary.component_count() == 2);
    CHECK(measured.component_count() == 2);
    // voxelization can clip the analytic diameter by up to one spacing step
    CHECK(measured.max_diameter_mm ==
          Catch::Approx(t.summary.max_diameter_mm).margin(spec.spacing_mm + 1e-9));
}

TEST_CASE("a pinned diameter survives voxelization within one step") {
    PhantomSpec spec;
    spec.dims = {32, 32, 32};
    spec.tumor_count = 1;
    spec.diameter_lo_mm = 4.0;
    spec.diameter_hi_mm = 4.0;
    spec.seed = 17;
    const PhantomTruth t = generate_phantom(spec);
    CHECK(t.summary.max_diameter_mm == Catch::Approx(4.0));
    const LesionSummary measured = lesion_features(t.mask, Spacing{1, 1, 1});
    CHECK(measured.max_diameter_mm >= 3.0);
    CHECK(measured.max_diameter_mm <= 5.0);
}

TEST_CASE("impulse corruption hits the expected fraction of voxels") {
    PhantomSpec spec;
    spec.dims = {10, 10, 100};  // exactly 10000 voxels
    spec.tumor_count = 0;
    spec.noise_density = 0.3;
    spec.seed = 19;
    const PhantomTruth t = generate_phantom(spec);

    std::size_t changed = 0;
    for (std::size_t i = 0; i < t.volume.voxels().size(); ++i) {
        const float noisy = t.volume.voxels()[i];
        if (noisy != t.clean_volume.voxels()[i]) {
            ++changed;
            CHECK((noisy == 0.0f || noisy == 1.0f));
        }
    }
    CHECK(changed >= 2800);
    CHECK(changed <= 3200);
}

TEST_CASE("plane corruption is seeded and bounded") {
    const Plane p = Plane::filled(16, 16, 0.5f);
    const Plane a = add_impulse_noise(p, 0.4, 5);
    const Plane b = add_impulse_noise(p, 0.4, 5);
    CHECK(a.pixels() == b.pixels());
    const Plane c = add_impulse_noise(p, 0.4, 6);
    CHECK(a.pixels() != c.pixels());

    const Plane untouched = add_impulse_noise(p, 0.0, 5);
    CHECK(untouched.pixels() == p.pixels());

    CHECK_THROWS_AS(add_impulse_noise(p, 1.0, 5), BadFilterParams);
    CHECK_THROWS_AS(add_impulse_noise(p, -0.1, 5), BadFilterParams);
}

TEST_CASE("impossible placements are reported, not looped forever") {
    PhantomSpec too_big;
    too_big.dims = {8, 8, 8};
    too_big.tumor_count = 1;
    too_big.diameter_lo_mm = 16.0;
    too_big.diameter_hi_mm = 16.0;
    CHECK_THROWS_AS(generate_phantom(too_big), UnplaceableTumor);

    PhantomSpec crowded;
    crowded.dims = {12, 12, 12};  // no two centers can sit 12 mm apart in here
    crowded.tumor_count = 2;
    crowded.diameter_lo_mm = 10.0;
    crowded.diameter_hi_mm = 10.0;
    CHECK_THROWS_AS(generate_phantom(crowded), UnplaceableTumor);
}

TEST_CASE("patch datasets alternate labels and balance the classes") {
    const std::vector<PhantomTruth> truths = {generate_phantom(small_spec(23))};

    const std::vector<Patch> ten = make_patch_dataset(truths, 10, 1, 16, 3);
    REQUIRE(ten.size() == 10);
    int tumor = 0;
    for (std::size_t i = 0; i < ten.size(); ++i) {
        REQUIRE(ten[i].label.has_value());
        if (*ten[i].label == 1) ++tumor;
        CHECK(*ten[i].label == (i % 2 == 0 ? 1 : 0));
        CHECK(ten[i].n == 16);
        CHECK(ten[i].slices == 3);
        CHECK(ten[i].data.size() == 16 * 16 * 3);
    }
    CHECK(tumor == 5);

    // an odd count gives background the extra patch
    const std::vector<Patch> five = make_patch_dataset(truths, 5, 1, 16, 3);
    int five_tumor = 0;
    for (const Patch& p : five)
        if (*p.label == 1) ++five_tumor;
    CHECK(five_tumor == 2);
}

TEST_CASE("patch centers carry the label of their voxel") {
    const std::vector<PhantomTruth> truths = {generate_phantom(small_spec(29))};
    const std::vector<Patch> patches = make_patch_dataset(truths, 20, 3, 8, 3);
    for (const Patch& p : patches) {
        REQUIRE(p.provenance.size() == 1);
        const Vec3 c = p.provenance[0].center;
        const int x = static_cast<int>(c[0]);
        const int y = static_cast<int>(c[1]);
        const int z = static_cast<int>(c[2]);
        CHECK(static_cast<int>(truths[0].mask.at(x, y, z)) == *p.label);
    }
}

TEST_CASE("patch extraction is deterministic in the seed") {
    const std::vector<PhantomTruth> truths = {generate_phantom(small_spec(31))};
    const std::vector<Patch> a = make_patch_dataset(truths, 6, 9, 8, 3);
    const std::vector<Patch> b = make_patch_dataset(truths, 6, 9, 8, 3);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].data == b[i].data);
}

TEST_CASE("datasets need both classes and a sane count") {
    const std::vector<PhantomTruth> truths = {generate_phantom(small_spec(37))};
    CHECK_THROWS_AS(make_patch_dataset(truths, 1, 1, 8, 3), InsufficientClassVoxels);

    PhantomSpec empty = small_spec(41);
    empty.tumor_count = 0;
    const std::vector<PhantomTruth> no_tumor = {generate_phantom(empty)};
    try {
        make_patch_dataset(no_tumor, 4, 1, 8, 3);
        FAIL("expected InsufficientClassVoxels");
    } catch (const InsufficientClassVoxels& e) {
        CHECK(std::string(e.what()).find("volume 0") != std::string::npos);
    }
}
