#pragma once

#include <cstddef>
#include <vector>

#include "rb/detail/parallel.hpp"
#include "rb/errors.hpp"
#include "rb/imaging.hpp"

namespace rb {

/// Reliability of one voter: alpha = sensitivity, beta = specificity.
struct VoterStats {
    double alpha = 0.9;
    double beta = 0.9;

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0) || !(beta >= 0.0 && beta <= 1.0))
            throw DegenerateDenominator("VoterStats: alpha and beta must lie in [0,1]");
    }
};

/// The per-grid tumor evidence collected for one voxel.
struct VoxelVotes {
    std::vector<double> x;               // per-grid probabilities or hard labels in [0,1]
    std::vector<VoterStats> stats;       // optional; empty or one entry per vote
};

/// Arithmetic mean of the votes.
inline double mean_vote(const VoxelVotes& v) {
    if (v.x.empty())
        throw EmptyVotes("mean_vote: no votes");
    double sum = 0.0;
    for (double xi : v.x) sum += xi;
    return sum / static_cast<double>(v.x.size());
}

/// Hard label from a vote fraction: 1 only on a strict majority. A tie at
/// exactly 0.5 resolves to background, so tumor is never labeled without a
/// strict majority.
inline int majority_label(double alpha) {
    return alpha > 0.5 ? 1 : 0;
}

/// Sensitivity/specificity-weighted fusion of one probability:
/// mu = alpha*x / (alpha*x + beta*(1-x)).
inline double bayes_fuse(const VoterStats& s, double x) {
    const double denom = s.alpha * x + s.beta * (1.0 - x);
    if (denom == 0.0)
        throw DegenerateDenominator("bayes_fuse: alpha*x + beta*(1-x) is zero");
    return s.alpha * x / denom;
}

enum class FusionMode { Vote, Bayes };

/// Per-voxel fusion of per-grid probability volumes into one mask.
/// Vote mode thresholds the mean vote; bayes mode first reweights each vote by
/// its grid's stats, then thresholds the mean of the fused values.
inline Mask aggregate_segmentation(const std::vector<Volume>& per_grid,
                                   const std::vector<VoterStats>& stats, FusionMode mode) {
    if (per_grid.empty())
        throw EmptyVotes("aggregate_segmentation: no probability volumes");
    const Volume& first = per_grid.front();
    for (const Volume& v : per_grid)
        if (v.nx() != first.nx() || v.ny() != first.ny() || v.nz() != first.nz())
            throw DimMismatch("aggregate_segmentation: volumes disagree on dims");
    if (mode == FusionMode::Bayes && stats.size() != per_grid.size())
        throw DimMismatch("aggregate_segmentation: need one VoterStats per volume");
    for (const VoterStats& s : stats) s.validate();

    const std::size_t count = first.voxels().size();
    std::vector<std::uint8_t> labels(count, 0);
    detail::parallel_for(count, [&](std::size_t i) {
        double sum = 0.0;
        for (std::size_t g = 0; g < per_grid.size(); ++g) {
            double x = static_cast<double>(per_grid[g].voxels()[i]);
            if (mode == FusionMode::Bayes) x = bayes_fuse(stats[g], x);
            sum += x;
        }
        labels[i] = static_cast<std::uint8_t>(
            majority_label(sum / static_cast<double>(per_grid.size())));
    });
    return Mask(first.nx(), first.ny(), first.nz(), std::move(labels));
}

}  // namespace rb
