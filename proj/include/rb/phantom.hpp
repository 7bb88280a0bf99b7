#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rb/detail/rand.hpp"
#include "rb/errors.hpp"
#include "rb/grading.hpp"
#include "rb/imaging.hpp"
#include "rb/patcher.hpp"

namespace rb {

enum class Texture { Flat, Gradient, ValueNoise };

inline std::string to_string(Texture t) {
    switch (t) {
        case Texture::Flat: return "flat";
        case Texture::Gradient: return "gradient";
        case Texture::ValueNoise: return "value-noise";
    }
    return "?";
}

/// Recipe for one synthetic eye volume.
struct PhantomSpec {
    std::array<int, 3> dims{64, 64, 64};
    double spacing_mm = 1.0;
    int tumor_count = 1;
    double diameter_lo_mm = 8.0;
    double diameter_hi_mm = 16.0;
    Texture background_texture = Texture::ValueNoise;
    double noise_density = 0.0;
    std::uint64_t seed = 1;

    void validate() const {
        for (int d : dims)
            if (d < 1)
                throw DimMismatch("PhantomSpec: dims must be positive");
        if (spacing_mm <= 0.0)
            throw DimMismatch("PhantomSpec: spacing must be positive");
        if (tumor_count < 0)
            throw UnplaceableTumor("PhantomSpec: tumor_count must be nonnegative");
        if (!(diameter_lo_mm > 0.0) || diameter_lo_mm > diameter_hi_mm)
            throw UnplaceableTumor("PhantomSpec: need 0 < diameter_lo <= diameter_hi");
        if (!(noise_density >= 0.0 && noise_density < 1.0))
            throw BadFilterParams("PhantomSpec: noise density must lie in [0,1)");
    }
};

/// A generated volume with everything the generator knows about it.
struct PhantomTruth {
    Volume volume;        // after impulse corruption (equals clean at density 0)
    Mask mask;            // exactly the painted tumor voxels
    LesionSummary summary;
    Volume clean_volume;  // before corruption
};

// ---------------------------------------------------------------------------
// Impulse corruption

/// Sets a seeded Bernoulli(density) subset of pixels to 0 or 1 with equal
/// probability; every other pixel is untouched.
inline Plane add_impulse_noise(const Plane& p, double density, std::uint64_t seed) {
    if (!(density >= 0.0 && density < 1.0))
        throw BadFilterParams("add_impulse_noise: density must lie in [0,1)");
    detail::Rng rng(seed);
    std::vector<float> pixels = p.pixels();
    for (float& v : pixels)
        if (rng.next_double() < density)
            v = rng.next_double() < 0.5 ? 0.0f : 1.0f;
    return Plane(p.width(), p.height(), std::move(pixels), p.spacing_mm());
}

inline Volume add_impulse_noise(const Volume& vol, double density, std::uint64_t seed) {
    if (!(density >= 0.0 && density < 1.0))
        throw BadFilterParams("add_impulse_noise: density must lie in [0,1)");
    detail::Rng rng(seed);
    std::vector<float> voxels = vol.voxels();
    for (float& v : voxels)
        if (rng.next_double() < density)
            v = rng.next_double() < 0.5 ? 0.0f : 1.0f;
    return Volume(vol.nx(), vol.ny(), vol.nz(), std::move(voxels), vol.spacing_mm());
}

// ---------------------------------------------------------------------------
// Volume generation

namespace detail {

/// Deterministic lattice value noise: random values on a coarse grid,
/// trilinearly interpolated between lattice sites.
class ValueNoiseField {
public:
    ValueNoiseField(int nx, int ny, int nz, int cell, Rng& rng) : cell_(cell) {
        gx_ = nx / cell + 2;
        gy_ = ny / cell + 2;
        gz_ = nz / cell + 2;
        lattice_.resize(static_cast<std::size_t>(gx_) * gy_ * gz_);
        for (double& v : lattice_) v = rng.next_double();
    }

    double at(int x, int y, int z) const {
        const double fx = static_cast<double>(x) / cell_;
        const double fy = static_cast<double>(y) / cell_;
        const double fz = static_cast<double>(z) / cell_;
        const int ix = static_cast<int>(fx), iy = static_cast<int>(fy),
                  iz = static_cast<int>(fz);
        const double tx = fx - ix, ty = fy - iy, tz = fz - iz;
        double acc = 0.0;
        for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const double w = (dx ? tx : 1.0 - tx) * (dy ? ty : 1.0 - ty) *
                                     (dz ? tz : 1.0 - tz);
                    acc += w * site(ix + dx, iy + dy, iz + dz);
                }
        return acc;
    }

private:
    double site(int x, int y, int z) const {
        return lattice_[(static_cast<std::size_t>(z) * gy_ + y) * gx_ + x];
    }
    int cell_;
    int gx_, gy_, gz_;
    std::vector<double> lattice_;
};

struct Ellipsoid {
    Vec3 center_mm;
    Vec3 semi_mm;
    double diameter_mm = 0.0;
};

}  // namespace detail

/// Seeded deterministic generation: a textured background in [0.2, 0.6],
/// non-overlapping axis-aligned ellipsoidal tumors painted bright
/// (1.0 - 0.2*rho over normalized radius rho, so 0.8 at the rim), an exact
/// mask from the ellipsoid equations, and a ground-truth summary taken from
/// the construction parameters rather than re-measured.
inline PhantomTruth generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    detail::Rng rng(spec.seed);
    const int nx = spec.dims[0], ny = spec.dims[1], nz = spec.dims[2];
    const double sp = spec.spacing_mm;
    const std::size_t count =
        static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
        static_cast<std::size_t>(nz);

    // background
    std::vector<float> voxels(count);
    switch (spec.background_texture) {
        case Texture::Flat:
            std::fill(voxels.begin(), voxels.end(), 0.4f);
            break;
        case Texture::Gradient: {
            const double denom = std::max(1, nx + ny + nz - 3);
            std::size_t at = 0;
            for (int z = 0; z < nz; ++z)
                for (int y = 0; y < ny; ++y)
                    for (int x = 0; x < nx; ++x)
                        voxels[at++] = static_cast<float>(0.2 + 0.4 * (x + y + z) / denom);
            break;
        }
        case Texture::ValueNoise: {
            detail::ValueNoiseField field(nx, ny, nz, 8, rng);
            std::size_t at = 0;
            for (int z = 0; z < nz; ++z)
                for (int y = 0; y < ny; ++y)
                    for (int x = 0; x < nx; ++x)
                        voxels[at++] = static_cast<float>(0.2 + 0.4 * field.at(x, y, z));
            break;
        }
    }

    // tumor placement by rejection sampling
    const Vec3 extent_mm = {(nx - 1) * sp, (ny - 1) * sp, (nz - 1) * sp};
    std::vector<detail::Ellipsoid> tumors;
    for (int t = 0; t < spec.tumor_count; ++t) {
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            const double d = rng.uniform(spec.diameter_lo_mm, spec.diameter_hi_mm);
            const std::size_t long_axis = rng.next_below(3);
            detail::Ellipsoid e;
            e.diameter_mm = d;
            for (std::size_t a = 0; a < 3; ++a)
                e.semi_mm[a] = (a == long_axis) ? d / 2.0 : (d / 2.0) * rng.uniform(0.6, 1.0);
            bool fits = true;
            for (std::size_t a = 0; a < 3; ++a) {
                if (2.0 * e.semi_mm[a] > extent_mm[a]) {
                    fits = false;
                    break;
                }
                e.center_mm[a] = rng.uniform(e.semi_mm[a], extent_mm[a] - e.semi_mm[a]);
            }
            if (!fits) continue;
            bool overlaps = false;
            for (const detail::Ellipsoid& other : tumors) {
                const double r1 = *std::max_element(e.semi_mm.begin(), e.semi_mm.end());
                const double r2 =
                    *std::max_element(other.semi_mm.begin(), other.semi_mm.end());
                if (norm(e.center_mm - other.center_mm) < r1 + r2 + 2.0 * sp) {
                    overlaps = true;
                    break;
                }
            }
            if (!overlaps) {
                tumors.push_back(e);
                placed = true;
            }
        }
        if (!placed)
            throw UnplaceableTumor("generate_phantom: no room for tumor " +
                                   std::to_string(t) + " after 1000 attempts");
    }

    // paint tumors and build the mask from the same ellipsoid tests
    std::vector<std::uint8_t> labels(count, 0);
    auto index = [&](int x, int y, int z) {
        return (static_cast<std::size_t>(z) * ny + y) * nx + x;
    };
    for (const detail::Ellipsoid& e : tumors) {
        int lo[3], hi[3];
        const int dims[3] = {nx, ny, nz};
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::max(0, static_cast<int>(
                                    std::ceil((e.center_mm[a] - e.semi_mm[a]) / sp)));
            hi[a] = std::min(dims[a] - 1, static_cast<int>(std::floor(
                                              (e.center_mm[a] + e.semi_mm[a]) / sp)));
        }
        for (int z = lo[2]; z <= hi[2]; ++z) {
            for (int y = lo[1]; y <= hi[1]; ++y) {
                for (int x = lo[0]; x <= hi[0]; ++x) {
                    const double rx = (x * sp - e.center_mm[0]) / e.semi_mm[0];
                    const double ry = (y * sp - e.center_mm[1]) / e.semi_mm[1];
                    const double rz = (z * sp - e.center_mm[2]) / e.semi_mm[2];
                    const double rho2 = rx * rx + ry * ry + rz * rz;
                    if (rho2 <= 1.0) {
                        const std::size_t at = index(x, y, z);
                        labels[at] = 1;
                        voxels[at] = static_cast<float>(1.0 - 0.2 * std::sqrt(rho2));
                    }
                }
            }
        }
    }

    // ground-truth summary from construction parameters
    LesionSummary summary;
    const double cx = (nx - 1) / 2.0, cy = (ny - 1) / 2.0;
    for (const detail::Ellipsoid& e : tumors) {
        summary.max_diameter_mm = std::max(summary.max_diameter_mm, e.diameter_mm);
        const double vx = e.center_mm[0] / sp, vy = e.center_mm[1] / sp;
        const int q = (vy >= cy ? 2 : 0) + (vx >= cx ? 1 : 0);
        ++summary.quadrant_counts[static_cast<std::size_t>(q)];
    }

    Volume clean(nx, ny, nz, std::move(voxels), {sp, sp, sp});
    Volume noisy = spec.noise_density > 0.0
                       ? add_impulse_noise(clean, spec.noise_density, rng.next_u64())
                       : clean;
    Mask mask(nx, ny, nz, std::move(labels));
    return PhantomTruth{std::move(noisy), std::move(mask), summary, std::move(clean)};
}

// ---------------------------------------------------------------------------
// Labeled patch extraction

/// Balanced labeled patches: per volume, half the centers drawn from tumor
/// voxels (label 1) and half from background (label 0), alternating, each
/// sampled on the untilted in-plane grid.
inline std::vector<Patch> make_patch_dataset(const std::vector<PhantomTruth>& truths,
                                             int per_volume, std::uint64_t seed,
                                             int patch_n = 64, int slices = 9,
                                             double grid_spacing = 1.0,
                                             double slice_step = 1.0) {
    if (per_volume < 2)
        throw InsufficientClassVoxels("make_patch_dataset: per_volume must be at least 2");
    detail::Rng rng(seed);
    std::vector<Patch> out;
    out.reserve(truths.size() * static_cast<std::size_t>(per_volume));
    for (std::size_t v = 0; v < truths.size(); ++v) {
        const PhantomTruth& truth = truths[v];
        const auto& labels = truth.mask.labels();
        std::vector<std::size_t> tumor_at, background_at;
        for (std::size_t i = 0; i < labels.size(); ++i)
            (labels[i] ? tumor_at : background_at).push_back(i);
        if (tumor_at.empty() || background_at.empty())
            throw InsufficientClassVoxels("make_patch_dataset: volume " + std::to_string(v) +
                                          " lacks a class");

        const int nx = truth.mask.nx(), ny = truth.mask.ny();
        auto draw = [&](const std::vector<std::size_t>& pool, int label) {
            const std::size_t flat = pool[rng.next_below(pool.size())];
            const int x = static_cast<int>(flat % nx);
            const int y = static_cast<int>((flat / nx) % ny);
            const int z = static_cast<int>(flat / (static_cast<std::size_t>(nx) * ny));
            SamplingGrid grid;
            grid.center = {static_cast<double>(x), static_cast<double>(y),
                           static_cast<double>(z)};
            grid.u_axis = {1.0, 0.0, 0.0};
            grid.v_axis = {0.0, 1.0, 0.0};
            grid.n = patch_n;
            grid.spacing = grid_spacing;
            grid.plane_id = PlaneId::XY;
            grid.tilt_deg = 0.0;
            Patch patch = sample_patch(truth.volume, grid, slices, slice_step);
            patch.label = label;
            out.push_back(std::move(patch));
        };
        const int tumor_n = per_volume / 2;
        for (int i = 0; i < per_volume; ++i) {
            if (i % 2 == 0 && i / 2 < tumor_n)
                draw(tumor_at, 1);
            else
                draw(background_at, 0);
        }
    }
    return out;
}

}  // namespace rb
