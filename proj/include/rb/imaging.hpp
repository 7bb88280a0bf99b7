#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "rb/errors.hpp"

namespace rb {

/// 2D intensity image, values normalized to [0,1], isotropic in-plane spacing.
class Plane {
public:
    Plane(int width, int height, std::vector<float> pixels, double spacing_mm = 1.0)
        : width_(width), height_(height), pixels_(std::move(pixels)), spacing_mm_(spacing_mm) {
        if (width_ < 1 || height_ < 1)
            throw DimMismatch("Plane: dimensions must be at least 1x1");
        if (spacing_mm_ <= 0.0)
            throw DimMismatch("Plane: spacing must be positive");
        if (pixels_.size() != static_cast<std::size_t>(width_) * height_)
            throw DimMismatch("Plane: pixel count does not match dimensions");
        for (float v : pixels_)
            if (!(v >= 0.0f && v <= 1.0f))
                throw DimMismatch("Plane: intensity outside [0,1]");
    }

    static Plane filled(int width, int height, float value, double spacing_mm = 1.0) {
        return Plane(width, height,
                     std::vector<float>(static_cast<std::size_t>(width) * height, value),
                     spacing_mm);
    }

    int width() const { return width_; }
    int height() const { return height_; }
    double spacing_mm() const { return spacing_mm_; }
    const std::vector<float>& pixels() const { return pixels_; }

    float at(int x, int y) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }

    bool same_dims(const Plane& other) const {
        return width_ == other.width_ && height_ == other.height_;
    }

private:
    friend class PlaneBuilder;
    int width_;
    int height_;
    std::vector<float> pixels_;
    double spacing_mm_;
};

/// Mutable staging buffer for algorithms that write a Plane pixel by pixel.
class PlaneBuilder {
public:
    explicit PlaneBuilder(const Plane& src)
        : width_(src.width()), height_(src.height()),
          pixels_(src.pixels()), spacing_mm_(src.spacing_mm()) {}

    PlaneBuilder(int width, int height, double spacing_mm = 1.0)
        : width_(width), height_(height),
          pixels_(static_cast<std::size_t>(width) * height, 0.0f), spacing_mm_(spacing_mm) {}

    float& at(int x, int y) { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
    float at(int x, int y) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
    int width() const { return width_; }
    int height() const { return height_; }

    Plane build() const { return Plane(width_, height_, pixels_, spacing_mm_); }

private:
    int width_;
    int height_;
    std::vector<float> pixels_;
    double spacing_mm_;
};

struct Spacing {
    double sx = 1.0, sy = 1.0, sz = 1.0;
};

/// 3D intensity grid, values in [0,1], per-axis physical spacing in mm.
class Volume {
public:
    Volume(int nx, int ny, int nz, std::vector<float> voxels, Spacing spacing_mm = {})
        : nx_(nx), ny_(ny), nz_(nz), voxels_(std::move(voxels)), spacing_(spacing_mm) {
        if (nx_ < 1 || ny_ < 1 || nz_ < 1)
            throw DimMismatch("Volume: dimensions must be at least 1");
        if (spacing_.sx <= 0 || spacing_.sy <= 0 || spacing_.sz <= 0)
            throw DimMismatch("Volume: spacings must be positive");
        if (voxels_.size() != static_cast<std::size_t>(nx_) * ny_ * nz_)
            throw DimMismatch("Volume: voxel count does not match dimensions");
        for (float v : voxels_)
            if (!(v >= 0.0f && v <= 1.0f))
                throw DimMismatch("Volume: intensity outside [0,1]");
    }

    static Volume filled(int nx, int ny, int nz, float value, Spacing spacing_mm = {}) {
        return Volume(nx, ny, nz,
                      std::vector<float>(static_cast<std::size_t>(nx) * ny * nz, value),
                      spacing_mm);
    }

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    int nz() const { return nz_; }
    Spacing spacing_mm() const { return spacing_; }
    const std::vector<float>& voxels() const { return voxels_; }

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(nx_) * (static_cast<std::size_t>(y) +
                                                static_cast<std::size_t>(ny_) * z);
    }
    float at(int x, int y, int z) const { return voxels_[index(x, y, z)]; }
    bool contains(int x, int y, int z) const {
        return x >= 0 && x < nx_ && y >= 0 && y < ny_ && z >= 0 && z < nz_;
    }
    bool same_dims(const Volume& other) const {
        return nx_ == other.nx_ && ny_ == other.ny_ && nz_ == other.nz_;
    }

    /// z-slice as a Plane; in-plane spacing taken from sx.
    Plane slice(int z) const {
        std::vector<float> px(static_cast<std::size_t>(nx_) * ny_);
        std::memcpy(px.data(), voxels_.data() + index(0, 0, z), px.size() * sizeof(float));
        return Plane(nx_, ny_, std::move(px), spacing_.sx);
    }

private:
    int nx_, ny_, nz_;
    std::vector<float> voxels_;
    Spacing spacing_;
};

/// Binary voxel labels, 1 = tumor.
class Mask {
public:
    // A 0-voxel mask is constructible (dims may be zero) but not serializable.
    Mask(int nx, int ny, int nz, std::vector<std::uint8_t> labels)
        : nx_(nx), ny_(ny), nz_(nz), labels_(std::move(labels)) {
        if (nx_ < 0 || ny_ < 0 || nz_ < 0)
            throw DimMismatch("Mask: dimensions must be nonnegative");
        if (labels_.size() != static_cast<std::size_t>(nx_) * ny_ * nz_)
            throw DimMismatch("Mask: label count does not match dimensions");
        for (std::uint8_t v : labels_)
            if (v > 1)
                throw DimMismatch("Mask: labels must be 0 or 1");
    }

    static Mask zeros(int nx, int ny, int nz) {
        return Mask(nx, ny, nz,
                    std::vector<std::uint8_t>(static_cast<std::size_t>(nx) * ny * nz, 0));
    }

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    int nz() const { return nz_; }
    const std::vector<std::uint8_t>& labels() const { return labels_; }
    std::vector<std::uint8_t>& labels() { return labels_; }

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(nx_) * (static_cast<std::size_t>(y) +
                                                static_cast<std::size_t>(ny_) * z);
    }
    std::uint8_t at(int x, int y, int z) const { return labels_[index(x, y, z)]; }
    void set(int x, int y, int z, std::uint8_t v) { labels_[index(x, y, z)] = v; }
    bool same_dims(const Mask& other) const {
        return nx_ == other.nx_ && ny_ == other.ny_ && nz_ == other.nz_;
    }
    bool empty() const {
        for (std::uint8_t v : labels_)
            if (v) return false;
        return true;
    }

    bool operator==(const Mask& other) const {
        return same_dims(other) && labels_ == other.labels_;
    }

private:
    int nx_, ny_, nz_;
    std::vector<std::uint8_t> labels_;
};

// ---------------------------------------------------------------------------
// PGM / PPM input (binary, 8-bit)

namespace detail {

inline int read_pnm_token(std::istream& in, const std::string& path) {
    // header tokens separated by whitespace; '#' starts a comment to end of line
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    if (c == EOF || !std::isdigit(c))
        throw MalformedHeader(path + ": expected numeric header field");
    long value = 0;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        if (value > 1000000)
            throw MalformedHeader(path + ": header field out of range");
        c = in.get();
    }
    if (c != EOF && !std::isspace(c))
        throw MalformedHeader(path + ": junk after header field");
    return static_cast<int>(value);
}

}  // namespace detail

/// Reads a binary PGM (P5) or PPM (P6) file. PPM input keeps the green
/// channel only. 8-bit values are normalized to [0,1].
inline Plane load_plane(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError(path + ": cannot open for reading");

    char m0 = static_cast<char>(in.get());
    char m1 = static_cast<char>(in.get());
    if (in.eof() || m0 != 'P' || (m1 != '5' && m1 != '6'))
        throw MalformedHeader(path + ": not a binary PGM/PPM (P5/P6) file");
    const bool color = (m1 == '6');

    const int width = detail::read_pnm_token(in, path);
    const int height = detail::read_pnm_token(in, path);
    const int maxval = detail::read_pnm_token(in, path);
    if (width < 1 || height < 1)
        throw MalformedHeader(path + ": non-positive dimensions");
    if (maxval != 255)
        throw UnsupportedMaxval(path + ": maxval must be 255, got " + std::to_string(maxval));
    // the single whitespace byte after maxval was already consumed by the tokenizer

    const std::size_t count = static_cast<std::size_t>(width) * height;
    const std::size_t payload = color ? count * 3 : count;
    std::vector<std::uint8_t> raw(payload);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(payload));
    if (static_cast<std::size_t>(in.gcount()) != payload)
        throw TruncatedPayload(path + ": payload shorter than declared dimensions");

    std::vector<float> pixels(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint8_t byte = color ? raw[i * 3 + 1] : raw[i];
        pixels[i] = static_cast<float>(byte) / 255.0f;
    }
    return Plane(width, height, std::move(pixels));
}

/// Writes a binary PGM (P5); intensities are quantized to 8 bits by rounding.
inline void save_plane(const Plane& p, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError(path + ": cannot open for writing");
    out << "P5\n" << p.width() << " " << p.height() << "\n255\n";
    std::vector<std::uint8_t> raw(p.pixels().size());
    for (std::size_t i = 0; i < raw.size(); ++i)
        raw[i] = static_cast<std::uint8_t>(std::lround(p.pixels()[i] * 255.0f));
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out)
        throw IoError(path + ": write failed");
}

/// Explicit pipeline stage: keeps the green plane of an RGB triple.
inline Plane extract_green_channel(const Plane& r, const Plane& g, const Plane& b) {
    if (!r.same_dims(g) || !g.same_dims(b))
        throw DimMismatch("extract_green_channel: channel dimensions differ");
    return g;
}

/// Replicates a plane into `depth` identical z-slices; sz defaults to sx.
inline Volume lift_to_volume(const Plane& p, int depth) {
    if (depth < 1)
        throw ZeroDepth("lift_to_volume: depth must be at least 1");
    std::vector<float> voxels;
    voxels.reserve(p.pixels().size() * static_cast<std::size_t>(depth));
    for (int z = 0; z < depth; ++z)
        voxels.insert(voxels.end(), p.pixels().begin(), p.pixels().end());
    const double s = p.spacing_mm();
    return Volume(p.width(), p.height(), depth, std::move(voxels), {s, s, s});
}

// ---------------------------------------------------------------------------
// Mask file: "RBMASK1\n", ASCII "nx ny nz\n", then one byte per voxel (0/1).

inline void save_mask(const Mask& m, const std::string& path) {
    if (m.labels().empty())
        throw MalformedMaskFile(path + ": refusing to write a 0-voxel mask");
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError(path + ": cannot open for writing");
    out << "RBMASK1\n" << m.nx() << " " << m.ny() << " " << m.nz() << "\n";
    out.write(reinterpret_cast<const char*>(m.labels().data()),
              static_cast<std::streamsize>(m.labels().size()));
    if (!out)
        throw IoError(path + ": write failed");
}

inline Mask load_mask(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError(path + ": cannot open for reading");
    std::string magic;
    std::getline(in, magic);
    if (magic != "RBMASK1")
        throw MalformedMaskFile(path + ": bad magic");
    long nx = 0, ny = 0, nz = 0;
    std::string dims_line;
    std::getline(in, dims_line);
    std::istringstream dims(dims_line);
    if (!(dims >> nx >> ny >> nz) || nx < 1 || ny < 1 || nz < 1)
        throw MalformedMaskFile(path + ": bad dimension line");
    const std::size_t count = static_cast<std::size_t>(nx) * ny * nz;
    std::vector<std::uint8_t> labels(count);
    in.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(in.gcount()) != count)
        throw MalformedMaskFile(path + ": payload shorter than declared dimensions");
    for (std::uint8_t v : labels)
        if (v > 1)
            throw MalformedMaskFile(path + ": label byte outside {0,1}");
    return Mask(static_cast<int>(nx), static_cast<int>(ny), static_cast<int>(nz),
                std::move(labels));
}

// ---------------------------------------------------------------------------
// Volume file: "RBVOL1\n", ASCII "nx ny nz sx sy sz\n", then little-endian
// 32-bit floats in x-fastest order.

namespace detail {

inline void put_f32_le(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    const std::uint8_t bytes[4] = {
        static_cast<std::uint8_t>(bits & 0xff),
        static_cast<std::uint8_t>((bits >> 8) & 0xff),
        static_cast<std::uint8_t>((bits >> 16) & 0xff),
        static_cast<std::uint8_t>((bits >> 24) & 0xff),
    };
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

inline float get_f32_le(const std::uint8_t* p) {
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                               (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) |
                               (static_cast<std::uint32_t>(p[3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline std::string format_spacing(double s) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", s);
    return buf;
}

}  // namespace detail

inline void save_volume(const Volume& v, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError(path + ": cannot open for writing");
    const Spacing s = v.spacing_mm();
    out << "RBVOL1\n"
        << v.nx() << " " << v.ny() << " " << v.nz() << " "
        << detail::format_spacing(s.sx) << " " << detail::format_spacing(s.sy) << " "
        << detail::format_spacing(s.sz) << "\n";
    for (float x : v.voxels())
        detail::put_f32_le(out, x);
    if (!out)
        throw IoError(path + ": write failed");
}

inline Volume load_volume(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError(path + ": cannot open for reading");
    std::string magic;
    std::getline(in, magic);
    if (magic != "RBVOL1")
        throw MalformedVolumeFile(path + ": bad magic");
    std::string header;
    std::getline(in, header);
    std::istringstream fields(header);
    long nx = 0, ny = 0, nz = 0;
    double sx = 0, sy = 0, sz = 0;
    if (!(fields >> nx >> ny >> nz >> sx >> sy >> sz) || nx < 1 || ny < 1 || nz < 1 ||
        sx <= 0 || sy <= 0 || sz <= 0)
        throw MalformedVolumeFile(path + ": bad header line");
    const std::size_t count = static_cast<std::size_t>(nx) * ny * nz;
    std::vector<std::uint8_t> raw(count * 4);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        throw MalformedVolumeFile(path + ": payload shorter than declared dimensions");
    std::vector<float> voxels(count);
    for (std::size_t i = 0; i < count; ++i)
        voxels[i] = detail::get_f32_le(raw.data() + i * 4);
    return Volume(static_cast<int>(nx), static_cast<int>(ny), static_cast<int>(nz),
                  std::move(voxels), {sx, sy, sz});
}

}  // namespace rb
