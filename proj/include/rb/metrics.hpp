#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "rb/errors.hpp"
#include "rb/imaging.hpp"

namespace rb {

struct ConfusionCounts {
    std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

    std::uint64_t total() const { return tp + tn + fp + fn; }
    bool operator==(const ConfusionCounts&) const = default;
};

/// Voxelwise confusion tally of prediction y against ground truth g.
/// A truth voxel the prediction misses counts as a false negative; a
/// background voxel the prediction marks counts as a false positive.
inline ConfusionCounts confusion(const Mask& g, const Mask& y) {
    if (g.nx() != y.nx() || g.ny() != y.ny() || g.nz() != y.nz())
        throw DimMismatch("confusion: mask dims differ");
    ConfusionCounts c;
    const auto& gl = g.labels();
    const auto& yl = y.labels();
    for (std::size_t i = 0; i < gl.size(); ++i) {
        if (gl[i]) {
            if (yl[i]) ++c.tp; else ++c.fn;
        } else {
            if (yl[i]) ++c.fp; else ++c.tn;
        }
    }
    return c;
}

/// TP / (TP + FN): the fraction of true tumor voxels the prediction found.
inline double sensitivity(const ConfusionCounts& c) {
    if (c.tp + c.fn == 0)
        throw UndefinedMetric("sensitivity: no positive truth voxels");
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

/// TN / (TN + FP): the fraction of background voxels the prediction kept clean.
inline double specificity(const ConfusionCounts& c) {
    if (c.tn + c.fp == 0)
        throw UndefinedMetric("specificity: no negative truth voxels");
    return static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
}

/// (TP + TN) / total.
inline double accuracy(const ConfusionCounts& c) {
    if (c.total() == 0)
        throw UndefinedMetric("accuracy: no voxels compared");
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

struct RocCurve {
    std::vector<RocPoint> points;  // sorted by fpr, spans (0,0) to (1,1)
    double auc = 0.0;
};

/// ROC sweep over every distinct score value, descending, with sentinel
/// endpoints so the curve always spans (0,0)-(1,1). A sample is predicted
/// positive when its score is >= the threshold. AUC by the trapezoidal rule,
/// which equals Mann-Whitney pair counting with half-credit for ties.
inline RocCurve roc_curve(const std::vector<double>& scores,
                          const std::vector<std::uint8_t>& truth) {
    if (scores.size() != truth.size())
        throw DimMismatch("roc_curve: scores and truth differ in length");
    std::uint64_t pos = 0, neg = 0;
    for (std::uint8_t t : truth) (t ? pos : neg)++;
    if (pos == 0 || neg == 0)
        throw SingleClassTruth("roc_curve: truth must contain both classes");

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve curve;
    curve.points.push_back({0.0, 0.0});  // threshold above every score
    std::uint64_t tp = 0, fp = 0;
    double auc2 = 0.0;  // twice the trapezoid area, accumulated in counts
    std::uint64_t prev_tp = 0, prev_fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double t = scores[order[i]];
        while (i < order.size() && scores[order[i]] == t) {
            (truth[order[i]] ? tp : fp)++;
            ++i;
        }
        curve.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                                static_cast<double>(tp) / static_cast<double>(pos)});
        auc2 += static_cast<double>(fp - prev_fp) * static_cast<double>(tp + prev_tp);
        prev_tp = tp;
        prev_fp = fp;
    }
    if (curve.points.back().fpr != 1.0 || curve.points.back().tpr != 1.0)
        curve.points.push_back({1.0, 1.0});  // threshold below every score
    curve.auc = auc2 / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
    return curve;
}

/// ROC of a per-voxel score volume against a truth mask.
inline RocCurve roc_curve(const Volume& scores, const Mask& truth) {
    if (scores.nx() != truth.nx() || scores.ny() != truth.ny() || scores.nz() != truth.nz())
        throw DimMismatch("roc_curve: score volume and truth mask dims differ");
    std::vector<double> s(scores.voxels().begin(), scores.voxels().end());
    return roc_curve(s, truth.labels());
}

}  // namespace rb
