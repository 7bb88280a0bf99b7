#include <catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "rb/phantom.hpp"
#include "rb/pipeline.hpp"

using namespace rb;
using testutil::TmpDir;

namespace {

// A linear stand-in for a trained network: tumor logit proportional to
// (patch mean - 0.7), which separates bright tumor tissue (>= 0.8) from the
// textured background (<= 0.6) without any training.
Model mean_detector(int n, int slices) {
    const int in_units = n * n * slices;
    Model m;
    m.input_shape = {n, n, slices};
    m.layers = {LayerSpec{LayerKind::FullyConnected, 0, 0, 0, 1, 2},
                LayerSpec{LayerKind::Softmax}};
    m.weights.resize(2);
    m.biases.resize(2);
    m.weights[0] = Tensor({2, in_units});
    m.biases[0] = Tensor({2});
    const double k = 60.0;
    for (int i = 0; i < in_units; ++i)
        m.weights[0].v[static_cast<std::size_t>(in_units) + i] = k / in_units;
    m.biases[0].v[1] = -0.7 * k;
    return m;
}

// Same shape, but a fixed bias so every patch gets the same verdict.
Model constant_model(int n, int slices, double b0, double b1) {
    Model m = mean_detector(n, slices);
    for (double& v : m.weights[0].v) v = 0.0;
    m.biases[0].v = {b0, b1};
    return m;
}

PatchConfig tiny_patches() {
    PatchConfig p;
    p.n = 4;
    p.slices = 3;
    p.spacing = 1.0;
    p.slice_step = 1.0;
    p.stride = 2;
    p.margin = 2;
    return p;
}

PhantomTruth test_phantom(std::uint64_t seed, double noise = 0.0) {
    PhantomSpec spec;
    spec.dims = {32, 32, 32};
    spec.tumor_count = 1;
    spec.diameter_lo_mm = 10.0;
    spec.diameter_hi_mm = 12.0;
    spec.noise_density = noise;
    spec.seed = seed;
    return generate_phantom(spec);
}

}  // namespace

TEST_CASE("voxels map to their nearest lattice center") {
    // positions {0, 4, 8}: halfway points round away from zero
    CHECK(detail::nearest_center(0, 0, 4, 3) == 0);
    CHECK(detail::nearest_center(1, 0, 4, 3) == 0);
    CHECK(detail::nearest_center(2, 0, 4, 3) == 1);
    CHECK(detail::nearest_center(6, 0, 4, 3) == 2);
    CHECK(detail::nearest_center(11, 0, 4, 3) == 2);  // clamped at the top
    CHECK(detail::nearest_center(0, 2, 4, 3) == 0);   // clamped below the margin
    CHECK(detail::center_positions(64, 0, 32) == std::vector<int>{0, 32});
    CHECK(detail::center_positions(64, 32, 1).empty());
}

TEST_CASE("segmentation finds a bright phantom tumor") {
    const PhantomTruth t = test_phantom(3);
    const Model model = mean_detector(4, 3);
    const SegmentationResult seg =
        segment_volume(t.volume, model, tiny_patches(), SegmentConfig{});

    CHECK(seg.mask.nx() == 32);
    CHECK(seg.scores.nx() == 32);

    // the corner is background; the tumor interior lights up
    CHECK(seg.mask.at(0, 0, 0) == 0);
    std::size_t hits = 0, tumor_voxels = 0;
    for (std::size_t i = 0; i < t.mask.labels().size(); ++i) {
        if (t.mask.labels()[i]) {
            ++tumor_voxels;
            if (seg.mask.labels()[i]) ++hits;
        }
    }
    REQUIRE(tumor_voxels > 0);
    CHECK(static_cast<double>(hits) / static_cast<double>(tumor_voxels) > 0.5);

    const RocCurve roc = roc_curve(seg.scores, t.mask);
    CHECK(roc.auc > 0.85);

    const ConfusionCounts c = confusion(t.mask, seg.mask);
    CHECK(accuracy(c) > 0.9);
}

TEST_CASE("segmentation validates model and lattice geometry") {
    const PhantomTruth t = test_phantom(5);
    CHECK_THROWS_AS(segment_volume(t.volume, mean_detector(8, 3), tiny_patches(),
                                   SegmentConfig{}),
                    ShapeMismatch);
    PatchConfig wide = tiny_patches();
    wide.margin = 16;
    CHECK_THROWS_AS(segment_volume(t.volume, mean_detector(4, 3), wide, SegmentConfig{}),
                    DimMismatch);
}

TEST_CASE("the full pipeline is deterministic end to end") {
    TmpDir tmp;
    const PhantomTruth t = test_phantom(7, 0.1);
    const std::string model_path = tmp.file("detector.rbm");
    save_model(mean_detector(4, 3), model_path);

    RunConfig cfg;
    cfg.patch = tiny_patches();

    const PipelineResult a = run_pipeline(cfg, t.volume, model_path, &t.mask);
    const PipelineResult b = run_pipeline(cfg, t.volume, model_path, &t.mask);
    CHECK(a.mask.labels() == b.mask.labels());
    CHECK(a.scores.voxels() == b.scores.voxels());
    CHECK(a.denoised.voxels() == b.denoised.voxels());
    CHECK(a.grade_text == b.grade_text);
    CHECK(a.metrics_text == b.metrics_text);

    // denoising inside the pipeline matches calling the filter directly
    const Volume direct = denoise_volume(t.volume, cfg.lpdmf);
    CHECK(a.denoised.voxels() == direct.voxels());

    // the graded report names a group and cites rules
    REQUIRE(a.grade.has_value());
    CHECK(a.grade_text.find("group=") == 0);
    CHECK(a.grade_text.find("treatment=") != std::string::npos);
    CHECK(a.grade_text.find("rule=") != std::string::npos);

    // metrics come out as fixed-point key=value lines
    CHECK(a.metrics_text.find("accuracy=") != std::string::npos);
    CHECK(a.metrics_text.find("sensitivity=") != std::string::npos);
    CHECK(a.metrics_text.find("specificity=") != std::string::npos);
    CHECK(a.metrics_text.find("auc=") != std::string::npos);
}

TEST_CASE("a blind model yields an empty mask and no grade") {
    TmpDir tmp;
    const PhantomTruth t = test_phantom(11);
    const std::string model_path = tmp.file("blind.rbm");
    save_model(constant_model(4, 3, 10.0, -10.0), model_path);

    RunConfig cfg;
    cfg.patch = tiny_patches();
    const PipelineResult r = run_pipeline(cfg, t.volume, model_path, &t.mask);

    for (std::uint8_t l : r.mask.labels()) CHECK(l == 0);
    CHECK_FALSE(r.grade.has_value());
    CHECK(r.grade_text == "group=none\n");
    // evaluation still runs: zero sensitivity, full specificity
    CHECK(r.metrics_text.find("sensitivity=0.000000") != std::string::npos);
    CHECK(r.metrics_text.find("specificity=1.000000") != std::string::npos);
}

TEST_CASE("pipeline errors name the failing stage") {
    const PhantomTruth t = test_phantom(13);
    RunConfig cfg;
    cfg.patch = tiny_patches();
    try {
        run_pipeline(cfg, t.volume, "/nonexistent/model.rbm");
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).rfind("segment: ", 0) == 0);
    }

    cfg.lpdmf.window_radius = 0;  // invalid filter
    TmpDir tmp;
    const std::string model_path = tmp.file("detector.rbm");
    save_model(mean_detector(4, 3), model_path);
    try {
        run_pipeline(cfg, t.volume, model_path);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).rfind("denoise: ", 0) == 0);
    }
}

TEST_CASE("bayes fusion mode threads the stats through segmentation") {
    const PhantomTruth t = test_phantom(17);
    const Model model = mean_detector(4, 3);

    SegmentConfig identity;  // alpha == beta fuses to the identity
    identity.mode = FusionMode::Bayes;
    const SegmentationResult vote =
        segment_volume(t.volume, model, tiny_patches(), SegmentConfig{});
    const SegmentationResult bayes =
        segment_volume(t.volume, model, tiny_patches(), identity);
    CHECK(vote.mask.labels() == bayes.mask.labels());

    // a heavily pessimistic prior suppresses detections
    SegmentConfig doubting;
    doubting.mode = FusionMode::Bayes;
    doubting.alpha = 0.05;
    doubting.beta = 0.95;
    const SegmentationResult cautious =
        segment_volume(t.volume, model, tiny_patches(), doubting);
    std::size_t vote_on = 0, cautious_on = 0;
    for (std::size_t i = 0; i < vote.mask.labels().size(); ++i) {
        vote_on += vote.mask.labels()[i];
        cautious_on += cautious.mask.labels()[i];
    }
    CHECK(cautious_on <= vote_on);
}

TEST_CASE("metric lines print with six decimals") {
    CHECK(detail::format_metric("auc", 0.5) == "auc=0.500000\n");
    CHECK(detail::format_metric("accuracy", 1.0) == "accuracy=1.000000\n");
    CHECK(detail::format_metric("sensitivity", 2.0 / 3.0) == "sensitivity=0.666667\n");
}
