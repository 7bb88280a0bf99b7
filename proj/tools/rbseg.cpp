// rbseg: command-line front end for the retinoblastoma segmentation library.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rb/rb.hpp"

namespace {

bool g_verbose = false;

void note(const std::string& msg) {
    if (g_verbose) std::cerr << "rbseg: " << msg << "\n";
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::istringstream in(s);
    std::string part;
    while (std::getline(in, part, sep)) parts.push_back(part);
    return parts;
}

std::array<int, 3> parse_int3(const std::string& s, const std::string& flag) {
    const std::vector<std::string> parts = split(s, ',');
    if (parts.size() != 3)
        throw rb::TypeError(flag + ": expected three comma-separated integers");
    std::array<int, 3> out{};
    for (std::size_t i = 0; i < 3; ++i)
        out[i] = static_cast<int>(rb::detail::config_int(flag, parts[i]));
    return out;
}

void ensure_parent_dir(const std::string& path) {
    const std::filesystem::path parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
}

void write_text(const std::string& path, const std::string& text) {
    ensure_parent_dir(path);
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw rb::IoError(path + ": cannot open for writing");
    out << text;
    if (!out)
        throw rb::IoError(path + ": write failed");
}

rb::Seeding parse_seeding(const std::string& s, const std::string& flag) {
    if (s == "none") return rb::Seeding::None;
    if (s == "focal") return rb::Seeding::Focal;
    if (s == "diffuse") return rb::Seeding::Diffuse;
    throw rb::TypeError(flag + ": expected none|focal|diffuse, got '" + s + "'");
}

rb::AdvancedFlag parse_advanced_flag(const std::string& s) {
    if (s == "touches_lens") return rb::AdvancedFlag::TouchesLens;
    if (s == "neovascular_glaucoma") return rb::AdvancedFlag::NeovascularGlaucoma;
    if (s == "orbital_cellulitis") return rb::AdvancedFlag::OrbitalCellulitis;
    if (s == "intraocular_hemorrhage") return rb::AdvancedFlag::IntraocularHemorrhage;
    if (s == "diffuse_infiltrating") return rb::AdvancedFlag::DiffuseInfiltrating;
    throw rb::TypeError("--flags: unknown flag '" + s + "'");
}

// ---------------------------------------------------------------------------

struct GlobalOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
};

rb::RunConfig make_config(const GlobalOpts& global) {
    rb::RunConfig cfg;
    if (!global.config_path.empty()) cfg = rb::load_config(global.config_path);
    if (global.seed) cfg.seed = *global.seed;
    cfg.train.seed = cfg.seed;
    return cfg;
}

int cmd_denoise(const rb::RunConfig& cfg, const std::string& in, const std::string& out) {
    ensure_parent_dir(out);
    if (ends_with(in, ".rbvol")) {
        const rb::Volume vol = rb::load_volume(in);
        note("denoising volume " + in);
        rb::save_volume(rb::denoise_volume(vol, cfg.lpdmf), out);
    } else {
        const rb::Plane plane = rb::load_plane(in);
        note("denoising image " + in);
        rb::save_plane(rb::denoise(plane, cfg.lpdmf), out);
    }
    return 0;
}

int cmd_extract(const rb::RunConfig& cfg, const std::string& vol_path,
                const std::string& out) {
    const rb::Volume vol = rb::load_volume(vol_path);
    const std::vector<rb::Vec3> centers =
        rb::enumerate_centers(vol, cfg.patch.stride, cfg.patch.margin);
    note("extracting 9 grids at each of " + std::to_string(centers.size()) + " centers");
    std::vector<rb::Patch> patches;
    patches.reserve(centers.size() * 9);
    for (const rb::Vec3& center : centers) {
        const auto grids = rb::build_grids(center, cfg.patch.n, cfg.patch.spacing);
        for (const rb::SamplingGrid& grid : grids)
            patches.push_back(
                rb::sample_patch(vol, grid, cfg.patch.slices, cfg.patch.slice_step));
    }
    ensure_parent_dir(out);
    rb::save_patches(patches, out);
    return 0;
}

int cmd_train(const rb::RunConfig& cfg, const std::string& patches_path,
              const std::string& out) {
    const std::vector<rb::Patch> patches = rb::load_patches(patches_path);
    if (patches.empty())
        throw rb::SingleClassDataset("train: empty patch archive");
    rb::NetConfig net;
    net.height = patches.front().n;
    net.width = patches.front().n;
    net.slices = patches.front().slices;
    net.classes = cfg.classes;
    net.seed = cfg.seed;
    note("training on " + std::to_string(patches.size()) + " patches");
    rb::Model model = rb::train(rb::build_network(net), patches, cfg.train);
    ensure_parent_dir(out);
    rb::save_model(model, out);
    return 0;
}

int cmd_segment(const rb::RunConfig& cfg, const std::string& vol_path,
                const std::string& model_path, const std::string& out,
                const std::string& scores_out) {
    const rb::Volume vol = rb::load_volume(vol_path);
    const rb::Model model = rb::load_model(model_path);
    note("segmenting " + vol_path);
    const rb::SegmentationResult result =
        rb::segment_volume(vol, model, cfg.patch, cfg.segment);
    ensure_parent_dir(out);
    rb::save_mask(result.mask, out);
    if (!scores_out.empty()) {
        ensure_parent_dir(scores_out);
        rb::save_volume(result.scores, scores_out);
    }
    return 0;
}

int cmd_evaluate(const std::string& truth_path, const std::string& pred_path,
                 const std::string& scores_path, const std::string& report_path) {
    const rb::Mask truth = rb::load_mask(truth_path);
    const rb::Mask pred = rb::load_mask(pred_path);
    const rb::ConfusionCounts c = rb::confusion(truth, pred);
    std::string text;
    text += "tp=" + std::to_string(c.tp) + "\n";
    text += "tn=" + std::to_string(c.tn) + "\n";
    text += "fp=" + std::to_string(c.fp) + "\n";
    text += "fn=" + std::to_string(c.fn) + "\n";
    text += rb::detail::format_metric("accuracy", rb::accuracy(c));
    text += rb::detail::format_metric("sensitivity", rb::sensitivity(c));
    text += rb::detail::format_metric("specificity", rb::specificity(c));
    if (!scores_path.empty()) {
        const rb::Volume scores = rb::load_volume(scores_path);
        text += rb::detail::format_metric("auc", rb::roc_curve(scores, truth).auc);
    }
    write_text(report_path, text);
    return 0;
}

int cmd_grade(const rb::RunConfig& cfg, const std::string& mask_path, double spacing,
              const std::string& disc, const std::string& fovea,
              const std::string& seeding, const std::string& subretinal,
              const std::string& vitreous, const std::vector<std::string>& flags,
              const std::string& report_path) {
    const rb::Mask mask = rb::load_mask(mask_path);
    std::optional<rb::VoxelCoord> disc_at, fovea_at;
    if (!disc.empty()) {
        const auto v = parse_int3(disc, "--disc");
        disc_at = rb::VoxelCoord{v[0], v[1], v[2]};
    }
    if (!fovea.empty()) {
        const auto v = parse_int3(fovea, "--fovea");
        fovea_at = rb::VoxelCoord{v[0], v[1], v[2]};
    }
    rb::LesionSummary summary =
        rb::lesion_features(mask, {spacing, spacing, spacing}, disc_at, fovea_at);
    if (!seeding.empty()) {
        const rb::Seeding s = parse_seeding(seeding, "--seeding");
        summary.subretinal_seeding = s;
        summary.vitreous_seeding = s;
    }
    if (!subretinal.empty())
        summary.subretinal_seeding = parse_seeding(subretinal, "--subretinal");
    if (!vitreous.empty())
        summary.vitreous_seeding = parse_seeding(vitreous, "--vitreous");
    for (const std::string& f : flags) summary.advanced_flags.insert(parse_advanced_flag(f));

    const rb::GradeReport report = rb::grade(summary, rb::SurgicalFindings{}, cfg.grade);
    write_text(report_path, rb::format_grade_report(report));
    return 0;
}

int cmd_phantom(const rb::RunConfig& cfg, const std::string& dims, int tumors,
                double noise, double spacing, const std::string& texture,
                const std::string& diam, const std::string& out_prefix,
                const std::string& patches_out, int per_volume) {
    rb::PhantomSpec spec;
    spec.dims = parse_int3(dims, "--dims");
    spec.tumor_count = tumors;
    spec.noise_density = noise;
    spec.spacing_mm = spacing;
    spec.seed = cfg.seed;
    if (texture == "flat")
        spec.background_texture = rb::Texture::Flat;
    else if (texture == "gradient")
        spec.background_texture = rb::Texture::Gradient;
    else if (texture == "value-noise")
        spec.background_texture = rb::Texture::ValueNoise;
    else
        throw rb::TypeError("--texture: expected flat|gradient|value-noise");
    if (!diam.empty()) {
        const std::vector<std::string> parts = split(diam, ',');
        if (parts.size() != 2)
            throw rb::TypeError("--diam: expected lo,hi in mm");
        spec.diameter_lo_mm = rb::detail::config_real("--diam", parts[0]);
        spec.diameter_hi_mm = rb::detail::config_real("--diam", parts[1]);
    }

    note("generating phantom with seed " + std::to_string(spec.seed));
    const rb::PhantomTruth truth = rb::generate_phantom(spec);
    ensure_parent_dir(out_prefix + "volume.rbvol");
    rb::save_volume(truth.volume, out_prefix + "volume.rbvol");
    rb::save_volume(truth.clean_volume, out_prefix + "clean.rbvol");
    rb::save_mask(truth.mask, out_prefix + "mask.rbmask");

    std::string text;
    text += "dims=" + std::to_string(spec.dims[0]) + "," + std::to_string(spec.dims[1]) +
            "," + std::to_string(spec.dims[2]) + "\n";
    text += "spacing_mm=" + rb::detail::format_mm(spec.spacing_mm) + "\n";
    text += "tumors=" + std::to_string(spec.tumor_count) + "\n";
    text += "noise_density=" + rb::detail::format_mm(spec.noise_density) + "\n";
    text += "seed=" + std::to_string(spec.seed) + "\n";
    text += "texture=" + rb::to_string(spec.background_texture) + "\n";
    text += "max_diameter_mm=" + rb::detail::format_mm(truth.summary.max_diameter_mm) + "\n";
    text += "components=" + std::to_string(truth.summary.component_count()) + "\n";
    for (std::size_t q = 0; q < 4; ++q)
        text += "quadrant_" + std::to_string(q) + "=" +
                std::to_string(truth.summary.quadrant_counts[q]) + "\n";
    write_text(out_prefix + "truth.txt", text);

    if (!patches_out.empty()) {
        note("drawing " + std::to_string(per_volume) + " labeled patches");
        const std::vector<rb::Patch> labeled =
            rb::make_patch_dataset({truth}, per_volume, spec.seed, cfg.patch.n,
                                   cfg.patch.slices, cfg.patch.spacing,
                                   cfg.patch.slice_step);
        ensure_parent_dir(patches_out);
        rb::save_patches(labeled, patches_out);
    }
    return 0;
}

int cmd_pipeline(const rb::RunConfig& cfg, const std::string& vol_path,
                 const std::string& model_path, const std::string& out_mask,
                 const std::string& report_path, const std::string& truth_path,
                 const std::string& out_denoised, const std::string& out_scores) {
    const rb::Volume vol = rb::load_volume(vol_path);
    std::optional<rb::Mask> truth;
    if (!truth_path.empty()) truth = rb::load_mask(truth_path);

    note("running pipeline on " + vol_path);
    const rb::PipelineResult result =
        rb::run_pipeline(cfg, vol, model_path, truth ? &*truth : nullptr);

    // all stages succeeded; only now write outputs
    ensure_parent_dir(out_mask);
    rb::save_mask(result.mask, out_mask);
    std::string report = result.grade_text;
    if (!result.metrics_text.empty()) report += result.metrics_text;
    write_text(report_path, report);
    if (!out_denoised.empty()) {
        ensure_parent_dir(out_denoised);
        rb::save_volume(result.denoised, out_denoised);
    }
    if (!out_scores.empty()) {
        ensure_parent_dir(out_scores);
        rb::save_volume(result.scores, out_scores);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"retinoblastoma segmentation pipeline"};
    app.require_subcommand(1);

    GlobalOpts global;
    std::uint64_t seed_flag = 0;
    app.add_option("--config", global.config_path, "run configuration file");
    auto* seed_opt = app.add_option("--seed", seed_flag, "override the global seed");
    app.add_flag("--verbose", g_verbose, "progress notes on stderr");

    // denoise
    auto* denoise = app.add_subcommand("denoise", "impulse-denoise an image or volume");
    std::string den_in, den_out;
    int den_radius = -1, den_max_radius = -1;
    double den_density_switch = -1.0;
    denoise->add_option("--in", den_in, "input .pgm/.ppm/.rbvol")->required();
    denoise->add_option("--out", den_out, "output path")->required();
    denoise->add_option("--radius", den_radius, "starting window radius");
    denoise->add_option("--max-radius", den_max_radius, "largest window radius");
    denoise->add_option("--density-switch", den_density_switch,
                        "local impulse-density threshold for early replacement");

    // extract
    auto* extract = app.add_subcommand("extract", "write the 9-grid patches of a volume");
    std::string ext_vol, ext_out;
    int ext_stride = -1, ext_margin = -1;
    extract->add_option("--vol", ext_vol, "input .rbvol")->required();
    extract->add_option("--stride", ext_stride, "center lattice pitch");
    extract->add_option("--margin", ext_margin, "border excluded from centers");
    extract->add_option("--out", ext_out, "output patch archive")->required();

    // train
    auto* train = app.add_subcommand("train", "train the patch classifier");
    std::string tr_patches, tr_out;
    int tr_epochs = -1, tr_batch = -1;
    double tr_lr = -1.0;
    train->add_option("--patches", tr_patches, "labeled patch archive")->required();
    train->add_option("--out", tr_out, "output model file")->required();
    train->add_option("--epochs", tr_epochs, "training epochs");
    train->add_option("--lr", tr_lr, "learning rate");
    train->add_option("--batch", tr_batch, "minibatch size");

    // segment
    auto* segment = app.add_subcommand("segment", "segment a volume with a trained model");
    std::string seg_vol, seg_model, seg_out, seg_scores;
    std::string seg_mode;
    segment->add_option("--vol", seg_vol, "input .rbvol")->required();
    segment->add_option("--model", seg_model, "model file")->required();
    segment->add_option("--mode", seg_mode, "fusion mode: vote|bayes");
    segment->add_option("--out", seg_out, "output mask")->required();
    segment->add_option("--out-scores", seg_scores, "also write the score volume");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "score a predicted mask against truth");
    std::string ev_truth, ev_pred, ev_scores, ev_report;
    evaluate->add_option("--truth", ev_truth, "ground-truth mask")->required();
    evaluate->add_option("--pred", ev_pred, "predicted mask")->required();
    evaluate->add_option("--scores", ev_scores, "score volume for ROC/AUC");
    evaluate->add_option("--report", ev_report, "output report")->required();

    // grade
    auto* grade = app.add_subcommand("grade", "grade a tumor mask");
    std::string gr_mask, gr_disc, gr_fovea, gr_seeding, gr_subretinal, gr_vitreous,
        gr_report;
    std::vector<std::string> gr_flags;
    double gr_spacing = 1.0;
    grade->add_option("--mask", gr_mask, "tumor mask")->required();
    grade->add_option("--spacing", gr_spacing, "voxel spacing in mm");
    grade->add_option("--disc", gr_disc, "optic disc voxel x,y,z");
    grade->add_option("--fovea", gr_fovea, "fovea voxel x,y,z");
    grade->add_option("--seeding", gr_seeding, "both seeding fields: none|focal|diffuse");
    grade->add_option("--subretinal", gr_subretinal, "subretinal seeding override");
    grade->add_option("--vitreous", gr_vitreous, "vitreous seeding override");
    grade->add_option("--flags", gr_flags, "advanced features (repeatable)");
    grade->add_option("--report", gr_report, "output report")->required();

    // phantom
    auto* phantom = app.add_subcommand("phantom", "generate a synthetic labeled volume");
    std::string ph_dims = "64,64,64", ph_texture = "value-noise", ph_diam, ph_prefix;
    int ph_tumors = 1;
    double ph_noise = 0.0, ph_spacing = 1.0;
    phantom->add_option("--dims", ph_dims, "volume dims nx,ny,nz");
    phantom->add_option("--tumors", ph_tumors, "tumor count");
    phantom->add_option("--noise", ph_noise, "impulse noise density");
    phantom->add_option("--spacing", ph_spacing, "voxel spacing in mm");
    phantom->add_option("--texture", ph_texture, "background: flat|gradient|value-noise");
    phantom->add_option("--diam", ph_diam, "tumor diameter range lo,hi in mm");
    phantom->add_option("--out-prefix", ph_prefix, "output path prefix")->required();
    std::string ph_patches;
    int ph_per_volume = 100;
    phantom->add_option("--out-patches", ph_patches,
                        "also draw a balanced labeled patch archive for training");
    phantom->add_option("--per-volume", ph_per_volume,
                        "labeled patches to draw (half tumor, half background)");

    // pipeline
    auto* pipeline = app.add_subcommand("pipeline", "denoise, segment, grade in one run");
    std::string pl_vol, pl_model, pl_mask, pl_report, pl_truth, pl_denoised, pl_scores;
    pipeline->add_option("--vol", pl_vol, "input .rbvol")->required();
    pipeline->add_option("--model", pl_model, "model file")->required();
    pipeline->add_option("--out-mask", pl_mask, "output mask")->required();
    pipeline->add_option("--report", pl_report, "output report")->required();
    pipeline->add_option("--truth", pl_truth, "truth mask; adds metrics to the report");
    pipeline->add_option("--out-denoised", pl_denoised, "also write the denoised volume");
    pipeline->add_option("--out-scores", pl_scores, "also write the score volume");

    CLI11_PARSE(app, argc, argv);
    if (seed_opt->count() > 0) global.seed = seed_flag;

    const std::string sub = app.get_subcommands().front()->get_name();
    try {
        rb::RunConfig cfg = make_config(global);
        if (denoise->parsed()) {
            if (den_radius >= 0) cfg.lpdmf.window_radius = den_radius;
            if (den_max_radius >= 0) cfg.lpdmf.max_radius = den_max_radius;
            if (den_density_switch >= 0.0)
                cfg.lpdmf.density_switch = static_cast<float>(den_density_switch);
            return cmd_denoise(cfg, den_in, den_out);
        }
        if (extract->parsed()) {
            if (ext_stride >= 0) cfg.patch.stride = ext_stride;
            if (ext_margin >= 0) cfg.patch.margin = ext_margin;
            return cmd_extract(cfg, ext_vol, ext_out);
        }
        if (train->parsed()) {
            if (tr_epochs >= 0) cfg.train.epochs = tr_epochs;
            if (tr_lr > 0.0) cfg.train.learning_rate = tr_lr;
            if (tr_batch > 0) cfg.train.batch_size = tr_batch;
            return cmd_train(cfg, tr_patches, tr_out);
        }
        if (segment->parsed()) {
            if (!seg_mode.empty()) {
                if (seg_mode == "vote")
                    cfg.segment.mode = rb::FusionMode::Vote;
                else if (seg_mode == "bayes")
                    cfg.segment.mode = rb::FusionMode::Bayes;
                else
                    throw rb::TypeError("--mode: expected vote|bayes, got '" + seg_mode + "'");
            }
            return cmd_segment(cfg, seg_vol, seg_model, seg_out, seg_scores);
        }
        if (evaluate->parsed())
            return cmd_evaluate(ev_truth, ev_pred, ev_scores, ev_report);
        if (grade->parsed())
            return cmd_grade(cfg, gr_mask, gr_spacing, gr_disc, gr_fovea, gr_seeding,
                             gr_subretinal, gr_vitreous, gr_flags, gr_report);
        if (phantom->parsed())
            return cmd_phantom(cfg, ph_dims, ph_tumors, ph_noise, ph_spacing, ph_texture,
                               ph_diam, ph_prefix, ph_patches, ph_per_volume);
        if (pipeline->parsed())
            return cmd_pipeline(cfg, pl_vol, pl_model, pl_mask, pl_report, pl_truth,
                                pl_denoised, pl_scores);
    } catch (const rb::Error& e) {
        std::cerr << "rbseg " << sub << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "rbseg " << sub << ": " << e.what() << "\n";
        return 1;
    }
    return 0;
}
