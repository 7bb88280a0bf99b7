#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rb/errors.hpp"
#include "rb/imaging.hpp"

namespace rb {

enum class Seeding { None, Focal, Diffuse };
enum class Group { A, B, C, D, E };
enum class Stage { Zero, I, II, III, IV };
enum class Treatment { FocalTherapy, Chemotherapy, Enucleation };

enum class AdvancedFlag {
    TouchesLens,
    NeovascularGlaucoma,
    OrbitalCellulitis,
    IntraocularHemorrhage,
    DiffuseInfiltrating,
};

inline std::string to_string(Seeding s) {
    switch (s) {
        case Seeding::None: return "none";
        case Seeding::Focal: return "focal";
        case Seeding::Diffuse: return "diffuse";
    }
    return "?";
}
inline std::string to_string(Group g) {
    switch (g) {
        case Group::A: return "A";
        case Group::B: return "B";
        case Group::C: return "C";
        case Group::D: return "D";
        case Group::E: return "E";
    }
    return "?";
}
inline std::string to_string(Stage s) {
    switch (s) {
        case Stage::Zero: return "0";
        case Stage::I: return "I";
        case Stage::II: return "II";
        case Stage::III: return "III";
        case Stage::IV: return "IV";
    }
    return "?";
}
inline std::string to_string(Treatment t) {
    switch (t) {
        case Treatment::FocalTherapy: return "FocalTherapy";
        case Treatment::Chemotherapy: return "Chemotherapy";
        case Treatment::Enucleation: return "Enucleation";
    }
    return "?";
}
inline std::string to_string(AdvancedFlag f) {
    switch (f) {
        case AdvancedFlag::TouchesLens: return "touches_lens";
        case AdvancedFlag::NeovascularGlaucoma: return "neovascular_glaucoma";
        case AdvancedFlag::OrbitalCellulitis: return "orbital_cellulitis";
        case AdvancedFlag::IntraocularHemorrhage: return "intraocular_hemorrhage";
        case AdvancedFlag::DiffuseInfiltrating: return "diffuse_infiltrating";
    }
    return "?";
}

/// Measured description of the lesion burden in one eye.
struct LesionSummary {
    double max_diameter_mm = 0.0;
    std::array<int, 4> quadrant_counts{0, 0, 0, 0};
    Seeding subretinal_seeding = Seeding::None;
    Seeding vitreous_seeding = Seeding::None;
    double dist_to_disc_mm = std::numeric_limits<double>::infinity();
    double dist_to_fovea_mm = std::numeric_limits<double>::infinity();
    std::set<AdvancedFlag> advanced_flags;

    int component_count() const {
        int n = 0;
        for (int q : quadrant_counts) n += q;
        return n;
    }
};

/// Post-surgical observations that drive staging.
struct SurgicalFindings {
    bool enucleated = false;
    bool completely_resected = false;
    bool microscopic_remnants = false;
    bool regional_extension = false;
    bool metastasis = false;

    void validate() const {
        if (completely_resected && microscopic_remnants)
            throw InconsistentFindings(
                "SurgicalFindings: completely_resected and microscopic_remnants conflict");
        if ((completely_resected || microscopic_remnants) && !enucleated)
            throw InconsistentFindings(
                "SurgicalFindings: resection findings require enucleation");
    }
};

/// Tunable thresholds for the Group A rule. The defaults are echoed in the
/// fired-rule identifiers so reports show which cutoffs were applied.
struct GroupRules {
    double small_tumor_mm = 3.0;
    double min_disc_mm = 1.5;
    double min_fovea_mm = 3.0;
};

struct GradeReport {
    Group group = Group::A;
    Stage stage = Stage::Zero;
    Treatment treatment = Treatment::FocalTherapy;
    std::vector<std::string> rationale;  // fired rule identifiers, evaluation order
};

// ---------------------------------------------------------------------------
// Feature measurement

namespace detail {

inline std::string format_mm(double v) {
    std::ostringstream out;
    out << v;
    return out.str();
}

}  // namespace detail

struct VoxelCoord {
    int x = 0, y = 0, z = 0;
};

/// Measures the mask: 6-connected components, largest bounding-box extent in
/// mm as the diameter, component counts per x/y quadrant of the volume
/// center, and nearest-tumor-voxel distance to each supplied landmark.
/// Seeding and advanced flags are clinical observations, not measurable from
/// the mask; they stay at their defaults for the caller to fill in.
inline LesionSummary lesion_features(const Mask& mask, Spacing spacing,
                                     std::optional<VoxelCoord> disc = std::nullopt,
                                     std::optional<VoxelCoord> fovea = std::nullopt) {
    LesionSummary s;
    const int nx = mask.nx(), ny = mask.ny(), nz = mask.nz();
    const auto& labels = mask.labels();
    if (labels.empty())
        return s;

    auto index = [&](int x, int y, int z) {
        return (static_cast<std::size_t>(z) * ny + y) * nx + x;
    };

    std::vector<std::uint8_t> seen(labels.size(), 0);
    std::vector<VoxelCoord> stack;
    const double cx = (nx - 1) / 2.0;
    const double cy = (ny - 1) / 2.0;

    for (int z = 0; z < nz; ++z) {
        for (int y = 0; y < ny; ++y) {
            for (int x = 0; x < nx; ++x) {
                const std::size_t at = index(x, y, z);
                if (!labels[at] || seen[at]) continue;

                // flood one 6-connected component
                int min_b[3] = {x, y, z}, max_b[3] = {x, y, z};
                double sum_x = 0.0, sum_y = 0.0;
                std::size_t voxels = 0;
                seen[at] = 1;
                stack.push_back({x, y, z});
                while (!stack.empty()) {
                    const VoxelCoord v = stack.back();
                    stack.pop_back();
                    ++voxels;
                    sum_x += v.x;
                    sum_y += v.y;
                    const int coords[3] = {v.x, v.y, v.z};
                    for (int a = 0; a < 3; ++a) {
                        min_b[a] = std::min(min_b[a], coords[a]);
                        max_b[a] = std::max(max_b[a], coords[a]);
                    }
                    const int dx[6] = {1, -1, 0, 0, 0, 0};
                    const int dy[6] = {0, 0, 1, -1, 0, 0};
                    const int dz[6] = {0, 0, 0, 0, 1, -1};
                    for (int k = 0; k < 6; ++k) {
                        const int xx = v.x + dx[k], yy = v.y + dy[k], zz = v.z + dz[k];
                        if (xx < 0 || yy < 0 || zz < 0 || xx >= nx || yy >= ny || zz >= nz)
                            continue;
                        const std::size_t ni = index(xx, yy, zz);
                        if (labels[ni] && !seen[ni]) {
                            seen[ni] = 1;
                            stack.push_back({xx, yy, zz});
                        }
                    }
                }

                const double ext_x = (max_b[0] - min_b[0] + 1) * spacing.sx;
                const double ext_y = (max_b[1] - min_b[1] + 1) * spacing.sy;
                const double ext_z = (max_b[2] - min_b[2] + 1) * spacing.sz;
                s.max_diameter_mm =
                    std::max({s.max_diameter_mm, ext_x, ext_y, ext_z});

                const double mean_x = sum_x / static_cast<double>(voxels);
                const double mean_y = sum_y / static_cast<double>(voxels);
                const int q = (mean_y >= cy ? 2 : 0) + (mean_x >= cx ? 1 : 0);
                ++s.quadrant_counts[static_cast<std::size_t>(q)];
            }
        }
    }

    auto nearest_mm = [&](const VoxelCoord& mark) {
        double best = std::numeric_limits<double>::infinity();
        for (int z = 0; z < nz; ++z)
            for (int y = 0; y < ny; ++y)
                for (int x = 0; x < nx; ++x)
                    if (labels[index(x, y, z)]) {
                        const double dx = (x - mark.x) * spacing.sx;
                        const double dy = (y - mark.y) * spacing.sy;
                        const double dz = (z - mark.z) * spacing.sz;
                        best = std::min(best, std::sqrt(dx * dx + dy * dy + dz * dz));
                    }
        return best;
    };
    if (disc) s.dist_to_disc_mm = nearest_mm(*disc);
    if (fovea) s.dist_to_fovea_mm = nearest_mm(*fovea);
    return s;
}

// ---------------------------------------------------------------------------
// Rules, most severe first

struct GroupDecision {
    Group group = Group::B;
    std::string fired;
};

inline GroupDecision decide_group(const LesionSummary& s, const GroupRules& rules = {}) {
    if (!s.advanced_flags.empty()) {
        std::string names;
        for (AdvancedFlag f : s.advanced_flags) {
            if (!names.empty()) names += ",";
            names += to_string(f);
        }
        return {Group::E, "group.E advanced_features[" + names + "]"};
    }
    if (s.subretinal_seeding == Seeding::Diffuse || s.vitreous_seeding == Seeding::Diffuse)
        return {Group::D, "group.D diffuse_seeding"};
    if (s.subretinal_seeding == Seeding::Focal || s.vitreous_seeding == Seeding::Focal)
        return {Group::C, "group.C focal_seeding"};
    if (s.max_diameter_mm < rules.small_tumor_mm && s.subretinal_seeding == Seeding::None &&
        s.vitreous_seeding == Seeding::None && s.dist_to_disc_mm >= rules.min_disc_mm &&
        s.dist_to_fovea_mm >= rules.min_fovea_mm)
        return {Group::A, "group.A small_isolated diameter<" +
                              detail::format_mm(rules.small_tumor_mm) + "mm disc>=" +
                              detail::format_mm(rules.min_disc_mm) + "mm fovea>=" +
                              detail::format_mm(rules.min_fovea_mm) + "mm"};
    return {Group::B, "group.B no_seeding_any_size"};
}

inline Group assign_group(const LesionSummary& s, const GroupRules& rules = {}) {
    return decide_group(s, rules).group;
}

struct StageDecision {
    Stage stage = Stage::Zero;
    std::string fired;
};

inline StageDecision decide_stage(const SurgicalFindings& f) {
    f.validate();
    if (f.metastasis) return {Stage::IV, "stage.IV metastasis"};
    if (f.regional_extension) return {Stage::III, "stage.III regional_extension"};
    if (f.enucleated && f.microscopic_remnants)
        return {Stage::II, "stage.II enucleated_microscopic_remnants"};
    if (f.enucleated && f.completely_resected)
        return {Stage::I, "stage.I enucleated_completely_resected"};
    return {Stage::Zero, "stage.0 not_enucleated"};
}

inline Stage assign_stage(const SurgicalFindings& f) {
    return decide_stage(f).stage;
}

inline Treatment recommend_treatment(Group g) {
    switch (g) {
        case Group::A: return Treatment::FocalTherapy;
        case Group::B:
        case Group::C:
        case Group::D: return Treatment::Chemotherapy;
        case Group::E: return Treatment::Enucleation;
    }
    return Treatment::Chemotherapy;
}

/// Full report: group, stage, treatment, and the rules that fired, in
/// evaluation order.
inline GradeReport grade(const LesionSummary& s, const SurgicalFindings& f,
                         const GroupRules& rules = {}) {
    GradeReport report;
    const GroupDecision g = decide_group(s, rules);
    const StageDecision st = decide_stage(f);
    report.group = g.group;
    report.stage = st.stage;
    report.treatment = recommend_treatment(g.group);
    report.rationale = {g.fired, st.fired,
                        "treatment." + to_string(report.treatment) + " for_group_" +
                            to_string(report.group)};
    return report;
}

}  // namespace rb
