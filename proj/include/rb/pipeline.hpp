#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "rb/aggregation.hpp"
#include "rb/config.hpp"
#include "rb/grading.hpp"
#include "rb/lpdmf.hpp"
#include "rb/metrics.hpp"
#include "rb/micronet.hpp"
#include "rb/patcher.hpp"

namespace rb {

namespace detail {

/// Runs one stage, prefixing any library error with the stage name so a
/// failure anywhere in the pipeline identifies where it happened.
template <typename Fn>
auto pipeline_stage(const char* name, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const Error& e) {
        throw Error(std::string(name) + ": " + e.what());
    }
}

inline std::vector<int> center_positions(int length, int margin, int stride) {
    std::vector<int> at;
    for (int v = margin; v <= length - 1 - margin; v += stride) at.push_back(v);
    return at;
}

inline std::size_t nearest_center(int v, int margin, int stride, std::size_t count) {
    const double rel = (v - margin) / static_cast<double>(stride);
    const long long idx = std::llround(rel);
    if (idx < 0) return 0;
    if (static_cast<std::size_t>(idx) >= count) return count - 1;
    return static_cast<std::size_t>(idx);
}

inline std::string format_metric(const char* name, double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s=%.6f\n", name, value);
    return buf;
}

}  // namespace detail

/// Dense segmentation output: the fused binary mask plus the per-voxel tumor
/// score (mean fused probability of the evaluated center lattice, replicated
/// to full resolution) for ROC analysis.
struct SegmentationResult {
    Mask mask;
    Volume scores;
};

/// Slides a center lattice over the volume (pitch = stride, border = margin),
/// evaluates all nine oriented grids of each center through the model, fuses
/// them per center, and replicates each center's label across its lattice
/// cell. Centers are independent and processed in parallel; the output does
/// not depend on the schedule.
inline SegmentationResult segment_volume(const Volume& vol, const Model& model,
                                         const PatchConfig& patch,
                                         const SegmentConfig& segment) {
    if (model.input_shape.h != patch.n || model.input_shape.w != patch.n ||
        model.input_shape.c != patch.slices)
        throw ShapeMismatch("segment_volume: model input shape does not match patch config");
    if (model.classes() < 2)
        throw ShapeMismatch("segment_volume: model has no class outputs");

    const std::vector<int> cx = detail::center_positions(vol.nx(), patch.margin, patch.stride);
    const std::vector<int> cy = detail::center_positions(vol.ny(), patch.margin, patch.stride);
    const std::vector<int> cz = detail::center_positions(vol.nz(), patch.margin, patch.stride);
    if (cx.empty() || cy.empty() || cz.empty())
        throw DimMismatch("segment_volume: margin leaves no patch centers");
    const std::size_t ncx = cx.size(), ncy = cy.size(), ncz = cz.size();
    const std::size_t centers = ncx * ncy * ncz;

    constexpr std::size_t kGrids = 9;
    std::vector<std::vector<float>> grid_probs(kGrids,
                                               std::vector<float>(centers, 0.0f));
    detail::parallel_for(centers, [&](std::size_t flat) {
        const std::size_t ix = flat % ncx;
        const std::size_t iy = (flat / ncx) % ncy;
        const std::size_t iz = flat / (ncx * ncy);
        const Vec3 center = {static_cast<double>(cx[ix]), static_cast<double>(cy[iy]),
                             static_cast<double>(cz[iz])};
        const std::array<SamplingGrid, 9> grids =
            build_grids(center, patch.n, patch.spacing);
        for (std::size_t g = 0; g < kGrids; ++g) {
            const Patch p = sample_patch(vol, grids[g], patch.slices, patch.slice_step);
            grid_probs[g][flat] = static_cast<float>(predict(model, p)[1]);
        }
    });

    std::vector<Volume> prob_volumes;
    prob_volumes.reserve(kGrids);
    for (std::size_t g = 0; g < kGrids; ++g)
        prob_volumes.emplace_back(static_cast<int>(ncx), static_cast<int>(ncy),
                                  static_cast<int>(ncz), grid_probs[g],
                                  vol.spacing_mm());
    const std::vector<VoterStats> stats(kGrids, VoterStats{segment.alpha, segment.beta});
    const Mask coarse = aggregate_segmentation(prob_volumes, stats, segment.mode);

    // per-center mean score on the same fusion path, for ROC
    std::vector<float> coarse_score(centers, 0.0f);
    for (std::size_t i = 0; i < centers; ++i) {
        double sum = 0.0;
        for (std::size_t g = 0; g < kGrids; ++g) {
            double x = static_cast<double>(grid_probs[g][i]);
            if (segment.mode == FusionMode::Bayes) x = bayes_fuse(stats[g], x);
            sum += x;
        }
        coarse_score[i] = static_cast<float>(sum / static_cast<double>(kGrids));
    }

    // replicate each center's label/score across its lattice cell
    std::vector<std::uint8_t> labels(vol.voxels().size());
    std::vector<float> scores(vol.voxels().size());
    std::size_t at = 0;
    for (int z = 0; z < vol.nz(); ++z) {
        const std::size_t iz = detail::nearest_center(z, patch.margin, patch.stride, ncz);
        for (int y = 0; y < vol.ny(); ++y) {
            const std::size_t iy =
                detail::nearest_center(y, patch.margin, patch.stride, ncy);
            for (int x = 0; x < vol.nx(); ++x) {
                const std::size_t ix =
                    detail::nearest_center(x, patch.margin, patch.stride, ncx);
                const std::size_t src = (iz * ncy + iy) * ncx + ix;
                labels[at] = coarse.labels()[src];
                scores[at] = coarse_score[src];
                ++at;
            }
        }
    }
    return SegmentationResult{
        Mask(vol.nx(), vol.ny(), vol.nz(), std::move(labels)),
        Volume(vol.nx(), vol.ny(), vol.nz(), std::move(scores), vol.spacing_mm())};
}

struct PipelineResult {
    Volume denoised;
    Mask mask;
    Volume scores;
    std::optional<GradeReport> grade;
    std::string grade_text;    // key=value lines; "group=none" when no tumor found
    std::string metrics_text;  // filled only when a truth mask was supplied
};

inline std::string format_grade_report(const GradeReport& report) {
    std::string text;
    text += "group=" + to_string(report.group) + "\n";
    text += "stage=" + to_string(report.stage) + "\n";
    text += "treatment=" + to_string(report.treatment) + "\n";
    for (const std::string& rule : report.rationale) text += "rule=" + rule + "\n";
    return text;
}

/// Denoise, segment through the model, grade the result, and (when ground
/// truth is given) score the prediction. Fails before producing any output if
/// a stage fails, with the stage named in the error.
inline PipelineResult run_pipeline(const RunConfig& cfg, const Volume& input,
                                   const std::string& model_path,
                                   const Mask* truth = nullptr) {
    Volume denoised = detail::pipeline_stage(
        "denoise", [&] { return denoise_volume(input, cfg.lpdmf); });

    SegmentationResult seg = detail::pipeline_stage("segment", [&] {
        const Model model = load_model(model_path);
        return segment_volume(denoised, model, cfg.patch, cfg.segment);
    });

    std::optional<GradeReport> grade_report;
    std::string grade_text = detail::pipeline_stage("grade", [&] {
        const auto& labels = seg.mask.labels();
        const bool any_tumor =
            std::any_of(labels.begin(), labels.end(), [](std::uint8_t v) { return v != 0; });
        if (!any_tumor)
            return std::string("group=none\n");
        const LesionSummary summary =
            lesion_features(seg.mask, input.spacing_mm());
        grade_report = grade(summary, SurgicalFindings{}, cfg.grade);
        return format_grade_report(*grade_report);
    });

    std::string metrics_text;
    if (truth) {
        metrics_text = detail::pipeline_stage("evaluate", [&] {
            const ConfusionCounts c = confusion(*truth, seg.mask);
            const RocCurve roc = roc_curve(seg.scores, *truth);
            std::string text;
            text += detail::format_metric("accuracy", accuracy(c));
            text += detail::format_metric("sensitivity", sensitivity(c));
            text += detail::format_metric("specificity", specificity(c));
            text += detail::format_metric("auc", roc.auc);
            return text;
        });
    }

    return PipelineResult{std::move(denoised), std::move(seg.mask), std::move(seg.scores),
                          grade_report,        std::move(grade_text), std::move(metrics_text)};
}

}  // namespace rb
