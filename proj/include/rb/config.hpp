#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "rb/aggregation.hpp"
#include "rb/errors.hpp"
#include "rb/grading.hpp"
#include "rb/lpdmf.hpp"
#include "rb/micronet.hpp"

namespace rb {

struct PatchConfig {
    int n = 64;
    int slices = 9;
    double spacing = 1.0;     // in-plane sample step, voxels
    double slice_step = 1.0;  // along-normal sample step, voxels
    int stride = 4;           // center lattice pitch for dense segmentation
    int margin = 0;           // border voxels excluded from the center lattice
};

struct SegmentConfig {
    FusionMode mode = FusionMode::Vote;
    double alpha = 0.9;  // per-grid sensitivity prior for bayes fusion
    double beta = 0.9;   // per-grid specificity prior for bayes fusion
};

/// Every tunable of the pipeline, one key per field.
struct RunConfig {
    FilterParams lpdmf;
    PatchConfig patch;
    TrainConfig train;
    SegmentConfig segment;
    GroupRules grade;
    int classes = 2;
    std::uint64_t seed = 1;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline long long config_int(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    long long v = 0;
    try {
        v = std::stoll(value, &pos);
    } catch (const std::exception&) {
        throw TypeError(key + ": expected an integer, got '" + value + "'");
    }
    if (pos != value.size())
        throw TypeError(key + ": expected an integer, got '" + value + "'");
    return v;
}

inline double config_real(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &pos);
    } catch (const std::exception&) {
        throw TypeError(key + ": expected a number, got '" + value + "'");
    }
    if (pos != value.size())
        throw TypeError(key + ": expected a number, got '" + value + "'");
    return v;
}

inline std::uint64_t config_u64(const std::string& key, const std::string& value) {
    const long long v = config_int(key, value);
    if (v < 0)
        throw TypeError(key + ": expected a nonnegative integer, got '" + value + "'");
    return static_cast<std::uint64_t>(v);
}

}  // namespace detail

/// Applies one `key = value` assignment to the config.
inline void apply_config_entry(RunConfig& cfg, const std::string& key,
                               const std::string& value) {
    using detail::config_int;
    using detail::config_real;
    using detail::config_u64;

    if (key == "lpdmf.radius")
        cfg.lpdmf.window_radius = static_cast<int>(config_int(key, value));
    else if (key == "lpdmf.max_radius")
        cfg.lpdmf.max_radius = static_cast<int>(config_int(key, value));
    else if (key == "lpdmf.low_clip")
        cfg.lpdmf.low_clip = static_cast<float>(config_real(key, value));
    else if (key == "lpdmf.high_clip")
        cfg.lpdmf.high_clip = static_cast<float>(config_real(key, value));
    else if (key == "lpdmf.density_switch")
        cfg.lpdmf.density_switch = static_cast<float>(config_real(key, value));
    else if (key == "patch.n")
        cfg.patch.n = static_cast<int>(config_int(key, value));
    else if (key == "patch.slices")
        cfg.patch.slices = static_cast<int>(config_int(key, value));
    else if (key == "patch.spacing")
        cfg.patch.spacing = config_real(key, value);
    else if (key == "patch.slice_step")
        cfg.patch.slice_step = config_real(key, value);
    else if (key == "patch.stride")
        cfg.patch.stride = static_cast<int>(config_int(key, value));
    else if (key == "patch.margin")
        cfg.patch.margin = static_cast<int>(config_int(key, value));
    else if (key == "net.classes")
        cfg.classes = static_cast<int>(config_int(key, value));
    else if (key == "train.learning_rate")
        cfg.train.learning_rate = config_real(key, value);
    else if (key == "train.epochs")
        cfg.train.epochs = static_cast<int>(config_int(key, value));
    else if (key == "train.batch_size")
        cfg.train.batch_size = static_cast<int>(config_int(key, value));
    else if (key == "segment.mode") {
        if (value == "vote")
            cfg.segment.mode = FusionMode::Vote;
        else if (value == "bayes")
            cfg.segment.mode = FusionMode::Bayes;
        else
            throw TypeError(key + ": expected 'vote' or 'bayes', got '" + value + "'");
    } else if (key == "segment.alpha")
        cfg.segment.alpha = config_real(key, value);
    else if (key == "segment.beta")
        cfg.segment.beta = config_real(key, value);
    else if (key == "grade.small_tumor_mm")
        cfg.grade.small_tumor_mm = config_real(key, value);
    else if (key == "grade.min_disc_mm")
        cfg.grade.min_disc_mm = config_real(key, value);
    else if (key == "grade.min_fovea_mm")
        cfg.grade.min_fovea_mm = config_real(key, value);
    else if (key == "seed")
        cfg.seed = config_u64(key, value);
    else
        throw UnknownKey("unknown config key '" + key + "'");
}

/// Parses `key = value` lines; `#` starts a comment; blank lines are skipped.
/// Unset keys keep their defaults.
inline RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw TypeError("line " + std::to_string(line_no) +
                            ": expected 'key = value', got '" + line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty())
            throw TypeError("line " + std::to_string(line_no) + ": empty key");
        apply_config_entry(cfg, key, value);
    }
    cfg.train.seed = cfg.seed;
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError(path + ": cannot open config file");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str());
}

}  // namespace rb
