#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "rb/errors.hpp"
#include "rb/imaging.hpp"

namespace rb {

/// Decision-based median filter parameters. The window starts at
/// (2*window_radius+1)^2 and may grow to (2*max_radius+1)^2 when the local
/// impulse density exceeds density_switch.
struct FilterParams {
    int window_radius = 1;
    int max_radius = 2;
    float low_clip = 0.0f;
    float high_clip = 1.0f;
    float density_switch = 0.5f;

    void validate() const {
        if (window_radius < 1 || window_radius > max_radius || max_radius > 3)
            throw BadFilterParams("FilterParams: need 1 <= window_radius <= max_radius <= 3");
        if (!(low_clip >= 0.0f && low_clip < high_clip && high_clip <= 1.0f))
            throw BadFilterParams("FilterParams: need 0 <= low_clip < high_clip <= 1");
        if (!(density_switch > 0.0f && density_switch <= 1.0f))
            throw BadFilterParams("FilterParams: need 0 < density_switch <= 1");
    }
};

/// Salt-and-pepper detector: a pixel is an impulse iff it sits at a clip extreme.
inline bool detect_impulse(float v, const FilterParams& params = {}) {
    return v <= params.low_clip || v >= params.high_clip;
}

/// Lower median: the element at index (k-1)/2 of the sorted values, always a
/// member of the set.
inline float median_of(std::vector<float> values) {
    if (values.empty())
        throw EmptySet("median_of: empty value set");
    const std::size_t k = (values.size() - 1) / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k),
                     values.end());
    return values[k];
}

/// Decision-based median pass with causal substitution: pixels earlier in the
/// raster scan contribute their already-denoised output values, so the
/// substitute set keeps getting cleaner as the scan advances. Non-impulse
/// pixels pass through untouched.
inline Plane denoise(const Plane& p, const FilterParams& params = {}) {
    params.validate();
    const int w = p.width();
    const int h = p.height();
    std::vector<float> out(p.pixels());

    std::vector<float> clean;
    clean.reserve(49);

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * w + x;
            if (!detect_impulse(p.pixels()[idx], params))
                continue;

            bool replaced = false;
            for (int radius = params.window_radius; radius <= params.max_radius && !replaced;
                 ++radius) {
                clean.clear();
                int total = 0;
                int impulses = 0;
                for (int dy = -radius; dy <= radius; ++dy) {
                    const int yy = y + dy;
                    if (yy < 0 || yy >= h) continue;
                    for (int dx = -radius; dx <= radius; ++dx) {
                        const int xx = x + dx;
                        if (xx < 0 || xx >= w) continue;
                        const std::size_t widx = static_cast<std::size_t>(yy) * w + xx;
                        // causal substitution: earlier scan positions read the output
                        const bool earlier = yy < y || (yy == y && xx < x);
                        const float v = earlier ? out[widx] : p.pixels()[widx];
                        ++total;
                        if (detect_impulse(v, params))
                            ++impulses;
                        else
                            clean.push_back(v);
                    }
                }
                const bool low_density =
                    static_cast<float>(impulses) <= params.density_switch * static_cast<float>(total);
                if (!clean.empty() && (low_density || radius == params.max_radius)) {
                    // high density at the maximal window still draws the median from
                    // whatever noise-free values exist there
                    out[idx] = median_of(clean);
                    replaced = true;
                }
            }
            if (!replaced) {
                // every candidate in the maximal window is an impulse
                out[idx] = (idx == 0) ? 0.5f : out[idx - 1];
            }
        }
    }
    return Plane(w, h, std::move(out), p.spacing_mm());
}

/// Slice-wise application of the 2D filter along z.
inline Volume denoise_volume(const Volume& v, const FilterParams& params = {}) {
    params.validate();
    std::vector<float> out;
    out.reserve(v.voxels().size());
    for (int z = 0; z < v.nz(); ++z) {
        const Plane filtered = denoise(v.slice(z), params);
        out.insert(out.end(), filtered.pixels().begin(), filtered.pixels().end());
    }
    return Volume(v.nx(), v.ny(), v.nz(), std::move(out), v.spacing_mm());
}

/// Peak signal-to-noise ratio in dB against a unit intensity range; +inf for
/// identical images.
inline double psnr(const Plane& a, const Plane& b) {
    if (!a.same_dims(b))
        throw DimMismatch("psnr: dimensions differ");
    double sum_sq = 0.0;
    for (std::size_t i = 0; i < a.pixels().size(); ++i) {
        const double d = static_cast<double>(a.pixels()[i]) - b.pixels()[i];
        sum_sq += d * d;
    }
    const double mse = sum_sq / static_cast<double>(a.pixels().size());
    if (mse == 0.0)
        return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace rb
