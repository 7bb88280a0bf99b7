#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rb/errors.hpp"
#include "rb/imaging.hpp"

namespace rb {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) {
    return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
inline Vec3 operator-(const Vec3& a, const Vec3& b) {
    return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline Vec3 operator*(double s, const Vec3& v) { return {s * v[0], s * v[1], s * v[2]}; }
inline double dot(const Vec3& a, const Vec3& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }

// ---------------------------------------------------------------------------
// Spiral sphere-surface sampling

/// Point on the unit sphere, addressed by latitude in [0,2pi) and longitude
/// (polar angle from the north pole) in [0,pi].
struct SpherePoint {
    double latitude;
    double longitude;
    Vec3 position;
};

/// Discrete count of spiral surface samples: sum over horizontal circles
/// alpha = 0..n of 2N|sin(alpha*pi/n)|.
inline double sphere_point_count(int N, int n) {
    double sum = 0.0;
    for (int alpha = 0; alpha <= n; ++alpha)
        sum += 2.0 * N * std::abs(std::sin(alpha * std::numbers::pi / n));
    return sum;
}

/// Closed-form limit of the count when n tends to infinity with N = n.
inline double sphere_point_count_closed_form(int N) {
    return 4.0 * N * N / std::numbers::pi;
}

/// Spiral sample points: circle alpha carries round(2N|sin|) equally spaced
/// latitudes, with the start latitude advanced by the golden angle per circle
/// so consecutive circles interleave. Total count stays within 2N of the
/// closed form.
inline std::vector<SpherePoint> spiral_points(int N) {
    constexpr double golden_angle = 2.399963229728653;  // pi*(3 - sqrt 5)
    const double two_pi = 2.0 * std::numbers::pi;
    std::vector<SpherePoint> points;
    for (int alpha = 0; alpha <= N; ++alpha) {
        const double longitude = alpha * std::numbers::pi / N;
        const double sin_lon = std::sin(longitude);
        const long count = std::lround(2.0 * N * std::abs(sin_lon));
        for (long j = 0; j < count; ++j) {
            double latitude = std::fmod(alpha * golden_angle + two_pi * j / count, two_pi);
            if (latitude < 0) latitude += two_pi;
            points.push_back({latitude, longitude,
                              {sin_lon * std::cos(latitude), sin_lon * std::sin(latitude),
                               std::cos(longitude)}});
        }
    }
    return points;
}

// ---------------------------------------------------------------------------
// Oriented sampling grids

enum class PlaneId { XY, YZ, XZ };

inline const char* to_string(PlaneId p) {
    switch (p) {
        case PlaneId::XY: return "XY";
        case PlaneId::YZ: return "YZ";
        case PlaneId::XZ: return "XZ";
    }
    return "?";
}

/// An oriented n-by-n planar lattice of sample points centered on a voxel.
struct SamplingGrid {
    Vec3 center;
    Vec3 u_axis;
    Vec3 v_axis;
    int n = 1;
    double spacing = 1.0;
    PlaneId plane_id = PlaneId::XY;
    double tilt_deg = 0.0;

    Vec3 normal() const { return cross(u_axis, v_axis); }

    /// World position of grid node (i, j), both in [0, n).
    Vec3 point(int i, int j, double normal_offset = 0.0) const {
        const double half = (n - 1) / 2.0;
        return center + ((i - half) * spacing) * u_axis + ((j - half) * spacing) * v_axis +
               normal_offset * normal();
    }
};

namespace detail {

inline Vec3 rotate_about_unit_axis(const Vec3& v, const Vec3& axis, double angle_rad) {
    // Rodrigues rotation
    const double c = std::cos(angle_rad);
    const double s = std::sin(angle_rad);
    return c * v + s * cross(axis, v) + ((1.0 - c) * dot(axis, v)) * axis;
}

}  // namespace detail

/// The nine grids of one center: base grids spanning XY, YZ and XZ, each also
/// rotated about its own normal by -45 and +45 degrees.
inline std::array<SamplingGrid, 9> build_grids(const Vec3& center, int n, double spacing) {
    if (n < 1)
        throw DimMismatch("build_grids: grid side must be at least 1");
    if (spacing <= 0)
        throw DimMismatch("build_grids: spacing must be positive");

    struct Base {
        PlaneId id;
        Vec3 u, v;
    };
    const std::array<Base, 3> bases = {{
        {PlaneId::XY, {1, 0, 0}, {0, 1, 0}},
        {PlaneId::YZ, {0, 1, 0}, {0, 0, 1}},
        {PlaneId::XZ, {1, 0, 0}, {0, 0, 1}},
    }};
    const std::array<double, 3> tilts = {-45.0, 0.0, 45.0};

    std::array<SamplingGrid, 9> grids;
    std::size_t k = 0;
    for (const Base& base : bases) {
        const Vec3 axis = cross(base.u, base.v);
        for (double tilt : tilts) {
            const double angle = tilt * std::numbers::pi / 180.0;
            grids[k++] = SamplingGrid{center,
                                      detail::rotate_about_unit_axis(base.u, axis, angle),
                                      detail::rotate_about_unit_axis(base.v, axis, angle),
                                      n,
                                      spacing,
                                      base.id,
                                      tilt};
        }
    }
    return grids;
}

// ---------------------------------------------------------------------------
// Patch extraction

/// n x n x slices stack interpolated from a volume; slice index is the fastest
/// varying axis of `data` so a patch maps directly onto a channels-last tensor.
struct Patch {
    int n = 0;
    int slices = 0;
    std::vector<float> data;
    std::vector<SamplingGrid> provenance;
    std::optional<int> label;

    float at(int i, int j, int s) const {
        return data[(static_cast<std::size_t>(j) * n + i) * slices + s];
    }
};

/// Trilinear interpolation; sample positions outside the volume read 0.
inline double sample_volume_trilinear(const Volume& vol, const Vec3& pos) {
    const double fx = std::floor(pos[0]);
    const double fy = std::floor(pos[1]);
    const double fz = std::floor(pos[2]);
    const int x0 = static_cast<int>(fx);
    const int y0 = static_cast<int>(fy);
    const int z0 = static_cast<int>(fz);
    const double tx = pos[0] - fx;
    const double ty = pos[1] - fy;
    const double tz = pos[2] - fz;

    double acc = 0.0;
    for (int dz = 0; dz <= 1; ++dz) {
        const double wz = dz ? tz : 1.0 - tz;
        if (wz == 0.0) continue;
        for (int dy = 0; dy <= 1; ++dy) {
            const double wy = dy ? ty : 1.0 - ty;
            if (wy == 0.0) continue;
            for (int dx = 0; dx <= 1; ++dx) {
                const double wx = dx ? tx : 1.0 - tx;
                if (wx == 0.0) continue;
                const int x = x0 + dx, y = y0 + dy, z = z0 + dz;
                if (vol.contains(x, y, z))
                    acc += wx * wy * wz * vol.at(x, y, z);
            }
        }
    }
    return acc;
}

/// Interpolates a slice stack from the volume: slice s sits at normal offset
/// (s - (slices-1)/2) * slice_step from the grid plane.
inline Patch sample_patch(const Volume& vol, const SamplingGrid& grid, int slices = 9,
                          double slice_step = 1.0) {
    if (slices < 1)
        throw DimMismatch("sample_patch: slice count must be at least 1");
    Patch patch;
    patch.n = grid.n;
    patch.slices = slices;
    patch.data.resize(static_cast<std::size_t>(grid.n) * grid.n * slices);
    patch.provenance.assign(1, grid);

    const double half_slices = (slices - 1) / 2.0;
    std::size_t out = 0;
    for (int j = 0; j < grid.n; ++j) {
        for (int i = 0; i < grid.n; ++i) {
            for (int s = 0; s < slices; ++s) {
                const double offset = (s - half_slices) * slice_step;
                const Vec3 pos = grid.point(i, j, offset);
                patch.data[out++] = static_cast<float>(sample_volume_trilinear(vol, pos));
            }
        }
    }
    return patch;
}

/// Lattice of patch centers covering the volume interior: every axis runs from
/// `margin` to dim-1-margin inclusive, stepping by `stride`.
inline std::vector<Vec3> enumerate_centers(const Volume& vol, int stride, int margin) {
    if (stride < 1)
        throw DimMismatch("enumerate_centers: stride must be at least 1");
    if (margin < 0)
        throw DimMismatch("enumerate_centers: margin must be nonnegative");
    std::vector<Vec3> centers;
    for (int z = margin; z <= vol.nz() - 1 - margin; z += stride)
        for (int y = margin; y <= vol.ny() - 1 - margin; y += stride)
            for (int x = margin; x <= vol.nx() - 1 - margin; x += stride)
                centers.push_back({static_cast<double>(x), static_cast<double>(y),
                                   static_cast<double>(z)});
    return centers;
}

// ---------------------------------------------------------------------------
// Patch archive: "RBPATCH1\n", ASCII "count n slices\n", the little-endian
// 32-bit float data of every patch, then one label byte per patch (255 =
// unlabeled).

inline void save_patches(const std::vector<Patch>& patches, const std::string& path) {
    if (patches.empty())
        throw MalformedPatchFile(path + ": refusing to write an empty archive");
    const int n = patches.front().n;
    const int slices = patches.front().slices;
    for (const Patch& p : patches)
        if (p.n != n || p.slices != slices)
            throw DimMismatch(path + ": archive patches must share dimensions");

    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError(path + ": cannot open for writing");
    out << "RBPATCH1\n" << patches.size() << " " << n << " " << slices << "\n";
    for (const Patch& p : patches)
        for (float v : p.data)
            detail::put_f32_le(out, v);
    for (const Patch& p : patches) {
        const std::uint8_t label = p.label ? static_cast<std::uint8_t>(*p.label) : 255;
        out.write(reinterpret_cast<const char*>(&label), 1);
    }
    if (!out)
        throw IoError(path + ": write failed");
}

inline std::vector<Patch> load_patches(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError(path + ": cannot open for reading");
    std::string magic;
    std::getline(in, magic);
    if (magic != "RBPATCH1")
        throw MalformedPatchFile(path + ": bad magic");
    std::string header;
    std::getline(in, header);
    std::istringstream fields(header);
    long count = 0, n = 0, slices = 0;
    if (!(fields >> count >> n >> slices) || count < 1 || n < 1 || slices < 1)
        throw MalformedPatchFile(path + ": bad header line");

    const std::size_t patch_len = static_cast<std::size_t>(n) * n * slices;
    std::vector<Patch> patches(static_cast<std::size_t>(count));
    std::vector<std::uint8_t> raw(patch_len * 4);
    for (Patch& p : patches) {
        p.n = static_cast<int>(n);
        p.slices = static_cast<int>(slices);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (static_cast<std::size_t>(in.gcount()) != raw.size())
            throw MalformedPatchFile(path + ": truncated patch data");
        p.data.resize(patch_len);
        for (std::size_t i = 0; i < patch_len; ++i)
            p.data[i] = detail::get_f32_le(raw.data() + i * 4);
    }
    for (Patch& p : patches) {
        std::uint8_t label = 0;
        in.read(reinterpret_cast<char*>(&label), 1);
        if (in.gcount() != 1)
            throw MalformedPatchFile(path + ": truncated label block");
        if (label == 255)
            p.label.reset();
        else if (label <= 1)
            p.label = label;
        else
            throw MalformedPatchFile(path + ": label byte outside {0,1,255}");
    }
    return patches;
}

}  // namespace rb
