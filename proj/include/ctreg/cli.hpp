#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctreg/bundle.hpp"
#include "ctreg/config.hpp"
#include "ctreg/engine.hpp"
#include "ctreg/error.hpp"
#include "ctreg/io.hpp"
#include "ctreg/metrics.hpp"
#include "ctreg/phantom.hpp"
#include "ctreg/preprocess.hpp"
#include "ctreg/report.hpp"
#include "ctreg/weight_map.hpp"

namespace ctreg {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitData = 2,
};

/// Mean deformation-gradient energy of `ddf` over the voxels where `mask == label`.
inline double masked_gradient_energy(const DisplacementField& ddf, const LabelVolume& mask, Label label)
{
    require_same_shape(ddf.grid(), mask.grid(), "field vs mask");
    const Volume e = gradient_energy(ddf);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < e.size(); ++i) {
        if (mask[i] != label)
            continue;
        sum += e[i];
        ++n;
    }
    require(n > 0, ErrorCode::EmptyMask, "mask label " + std::to_string(label) + " is empty");
    return sum / static_cast<double>(n);
}

namespace cli {

    struct PairOptions {
        std::string bundle;
        std::string moving_pet, fixed_pet, moving_ct, fixed_ct, moving_seg, fixed_seg;

        void add(CLI::App* app)
        {
            app->add_option("--pair", bundle, "Pair bundle directory (contains bundle.json)");
            app->add_option("--moving-pet", moving_pet, "Moving PET volume");
            app->add_option("--fixed-pet", fixed_pet, "Fixed PET volume");
            app->add_option("--moving-ct", moving_ct, "Moving CT volume");
            app->add_option("--fixed-ct", fixed_ct, "Fixed CT volume");
            app->add_option("--moving-seg", moving_seg, "Moving label map");
            app->add_option("--fixed-seg", fixed_seg, "Fixed label map");
        }

        /// Loads and min-max normalises the intensity volumes.
        RegistrationPair load() const
        {
            RegistrationPair p;
            if (!bundle.empty()) {
                p = read_pair_bundle(bundle).pair;
            } else {
                for (const auto* f : {&moving_pet, &fixed_pet, &moving_ct, &fixed_ct, &moving_seg, &fixed_seg})
                    if (f->empty())
                        throw CLI::ValidationError("pair", "give --pair or all six volume options");
                p.moving_pet = read_scalar_volume(moving_pet);
                p.fixed_pet = read_scalar_volume(fixed_pet);
                p.moving_ct = read_scalar_volume(moving_ct);
                p.fixed_ct = read_scalar_volume(fixed_ct);
                p.moving_seg = read_label_volume(moving_seg);
                p.fixed_seg = read_label_volume(fixed_seg);
            }
            p.validate();
            return normalize_pair(std::move(p));
        }
    };

    struct ConfigOptions {
        std::string path;
        std::optional<double> mu_r, delta, gamma;
        std::optional<std::uint64_t> seed;

        void add(CLI::App* app, bool with_seed = true)
        {
            app->add_option("--config", path, "key = value configuration file");
            app->add_option("--mu-r", mu_r, "Mean regularisation weight");
            app->add_option("--delta", delta, "Weight margin around mu_r");
            app->add_option("--gamma", gamma, "CT contrast exponent");
            if (with_seed)
                app->add_option("--seed", seed, "Label sampling seed");
        }

        RegistrationConfig load() const
        {
            RegistrationConfig c = path.empty() ? RegistrationConfig{} : load_config(path);
            if (mu_r)
                c.weight_params.mu_r = *mu_r;
            if (delta)
                c.weight_params.delta = *delta;
            if (gamma)
                c.weight_params.gamma = *gamma;
            if (seed)
                c.seed = *seed;
            c.validate();
            return c;
        }
    };

    inline std::string extension_for(const std::string& format)
    {
        if (format == "nifti")
            return ".nii";
        if (format == "nifti-gz")
            return ".nii.gz";
        return ".json";
    }

    inline const std::vector<std::string>& format_names()
    {
        static const std::vector<std::string> names{"nifti", "nifti-gz", "raw"};
        return names;
    }

    inline std::string join_path(const std::string& dir, const std::string& name)
    {
        return (std::filesystem::path(dir) / name).string();
    }

    inline void make_dir(const std::string& dir)
    {
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        require(!ec, ErrorCode::WriteError, "cannot create directory " + dir);
    }

    struct RegisterJob {
        PairOptions pair;
        ConfigOptions config;
        std::string out_dir;
        std::string format = "nifti-gz";
        bool timing = false;
    };

    inline void run_register(const RegisterJob& job, WeightMode mode, std::ostream& out)
    {
        const RegistrationPair pair = job.pair.load();
        const RegistrationConfig cfg = job.config.load();
        const RegistrationResult result = register_pair(pair, cfg, mode);

        make_dir(job.out_dir);
        const std::string ext = extension_for(job.format);
        write_volume(result.ddf, join_path(job.out_dir, "ddf" + ext));
        write_volume(warp_scalar(pair.moving_pet, result.ddf), join_path(job.out_dir, "warped_pet" + ext));
        write_volume(warp_scalar(pair.moving_ct, result.ddf), join_path(job.out_dir, "warped_ct" + ext));
        write_volume(warp_labels_nearest(pair.moving_seg, result.ddf), join_path(job.out_dir, "warped_seg" + ext));
        write_text_atomic(join_path(job.out_dir, "run_log.jsonl"), format_run_log(result.trace, job.timing));
        write_text_atomic(join_path(job.out_dir, "config.txt"), format_config(cfg));

        const MetricsReport post = evaluate(pair, result.ddf);
        const MetricsReport pre = evaluate(pair, zero_field(pair.fixed_ct.grid()));
        auto report = to_json(post);
        report["method"] = mode == WeightMode::Uniform ? "baseline" : "proposed";
        report["pre_registration"] = to_json(pre);
        write_text_atomic(join_path(job.out_dir, "metrics.json"), report.dump(2) + "\n");

        out << std::fixed << std::setprecision(4) << "dice_mean " << pre.dice_mean << " -> " << post.dice_mean
            << "  tre_mean " << pre.tre_mean << " -> " << post.tre_mean << " mm  mi " << pre.mi << " -> "
            << post.mi << "\n";
    }

    // -----------------------------------------------------------------------
    // ablate

    struct Summary {
        double mean = 0.0;
        double sd = 0.0;
    };

    inline Summary summarize(const std::vector<double>& v)
    {
        Summary s;
        if (v.empty())
            return s;
        s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        if (v.size() > 1) {
            double ss = 0.0;
            for (double x : v)
                ss += (x - s.mean) * (x - s.mean);
            s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
        }
        return s;
    }

    struct MethodRun {
        std::vector<std::string> subjects;
        std::vector<double> mi, dice, tre, bone_energy;
    };

    inline std::vector<std::string> find_bundles(const std::vector<std::string>& inputs)
    {
        std::vector<std::string> out;
        for (const auto& in : inputs) {
            if (std::filesystem::exists(std::filesystem::path(in) / kBundleManifest)) {
                out.push_back(in);
                continue;
            }
            require(std::filesystem::is_directory(in), ErrorCode::ReadError, in + ": not a bundle directory");
            std::vector<std::string> found;
            for (const auto& e : std::filesystem::directory_iterator(in))
                if (e.is_directory() && std::filesystem::exists(e.path() / kBundleManifest))
                    found.push_back(e.path().string());
            std::sort(found.begin(), found.end());
            require(!found.empty(), ErrorCode::ReadError, in + ": no bundles found");
            out.insert(out.end(), found.begin(), found.end());
        }
        return out;
    }

    inline std::string pm(const Summary& s, int prec)
    {
        std::ostringstream os;
        os << std::fixed << std::setprecision(prec) << s.mean << "±" << s.sd;
        return os.str();
    }

    /// Left-aligns to `width` display columns (UTF-8 aware).
    inline std::string cell(const std::string& s, std::size_t width)
    {
        const auto cols = static_cast<std::size_t>(
            std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
        return s + std::string(cols < width ? width - cols : 1, ' ');
    }

    inline std::string mu_label(double mu)
    {
        std::ostringstream os;
        os << std::fixed << std::setprecision(1) << mu / 1000.0 << "e3";
        return os.str();
    }

    inline int run_ablate(const std::vector<std::string>& inputs, const std::vector<double>& mu_list,
                          const ConfigOptions& base, Label bone_label, const std::string& json_path, std::ostream& out)
    {
        const auto bundles = find_bundles(inputs);
        std::vector<RegistrationPair> pairs;
        for (const auto& b : bundles) {
            auto p = read_pair_bundle(b).pair;
            if (p.subject.empty())
                p.subject = std::filesystem::path(b).filename().string();
            pairs.push_back(normalize_pair(std::move(p)));
        }

        nlohmann::json doc;
        doc["format_version"] = kReportFormatVersion;
        doc["bundles"] = bundles;
        doc["rows"] = nlohmann::json::array();

        out << cell("mu_r", 8) << cell("method", 10) << cell("MI", 18) << cell("Dice", 18) << cell("TRE (mm)", 18)
            << cell("bone grad energy", 20) << "p (Dice)\n";
        for (double mu : mu_list) {
            RegistrationConfig cfg = base.load();
            cfg.weight_params.mu_r = mu;
            cfg.validate();
            std::array<MethodRun, 2> runs;
            const std::array<WeightMode, 2> modes{WeightMode::Uniform, WeightMode::CtGuided};
            for (std::size_t m = 0; m < 2; ++m) {
                for (const auto& pair : pairs) {
                    const auto result = register_pair(pair, cfg, modes[m]);
                    const auto rep = evaluate(pair, result.ddf);
                    runs[m].subjects.push_back(pair.subject);
                    runs[m].mi.push_back(rep.mi);
                    runs[m].dice.push_back(rep.dice_mean);
                    runs[m].tre.push_back(rep.tre_mean);
                    runs[m].bone_energy.push_back(masked_gradient_energy(result.ddf, pair.fixed_seg, bone_label));
                }
            }

            std::optional<TTestResult> tt;
            if (pairs.size() >= 2) {
                try {
                    tt = paired_t_test(runs[1].dice, runs[0].dice);
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::DegenerateSample)
                        throw;
                }
            }

            for (std::size_t m = 0; m < 2; ++m) {
                const bool proposed = m == 1;
                const auto& r = runs[m];
                out << cell(proposed ? "" : mu_label(mu), 8) << cell(proposed ? "proposed" : "baseline", 10)
                    << cell(pm(summarize(r.mi), 4), 18) << cell(pm(summarize(r.dice), 4), 18)
                    << cell(pm(summarize(r.tre), 3), 18) << cell(pm(summarize(r.bone_energy), 5), 20);
                if (proposed) {
                    if (tt) {
                        std::ostringstream p;
                        p << std::setprecision(4) << tt->p;
                        out << p.str();
                    } else {
                        out << "n/a";
                    }
                }
                out << "\n";

                nlohmann::json row;
                row["mu_r"] = mu;
                row["method"] = proposed ? "proposed" : "baseline";
                row["delta"] = proposed ? cfg.weight_params.delta : 0.0;
                row["gamma"] = cfg.weight_params.gamma;
                row["subjects"] = r.subjects;
                row["mi"] = r.mi;
                row["dice_mean"] = r.dice;
                row["tre_mean"] = r.tre;
                row["bone_energy"] = r.bone_energy;
                if (proposed) {
                    row["t_dice"] = tt ? nlohmann::json(tt->t) : nlohmann::json(nullptr);
                    row["p_dice"] = tt ? nlohmann::json(tt->p) : nlohmann::json(nullptr);
                }
                doc["rows"].push_back(row);
            }
        }
        if (!json_path.empty())
            write_text_atomic(json_path, doc.dump(2) + "\n");
        return kExitOk;
    }

} // namespace cli

/// Entry point of the `ctreg` tool. Returns 0 on success, 1 on usage errors and
/// 2 on data errors.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    CLI::App app{"CT-guided spatially varying regularisation for PET/CT registration", "ctreg"};
    app.require_subcommand(1);

    // register / baseline-register
    cli::RegisterJob reg_job;
    auto* reg = app.add_subcommand("register", "Register a pair with CT-guided weights");
    auto* base = app.add_subcommand("baseline-register", "Register a pair with a uniform weight lambda = mu_r");
    for (auto* sub : {reg, base}) {
        reg_job.pair.add(sub);
        reg_job.config.add(sub);
        sub->add_option("--out", reg_job.out_dir, "Output directory")->required();
        sub->add_option("--format", reg_job.format, "Output volume format")
            ->check(CLI::IsMember(cli::format_names()));
        sub->add_flag("--timing", reg_job.timing, "Record wall-clock times in the run log");
    }

    // weights
    std::string w_ct, w_out;
    cli::ConfigOptions w_cfg;
    std::optional<double> w_uniform;
    auto* weights = app.add_subcommand("weights", "Compute the regularisation weight map of a CT");
    weights->add_option("--ct", w_ct, "CT volume (HU)")->required();
    weights->add_option("--out", w_out, "Output weight volume")->required();
    w_cfg.add(weights, false);
    weights->add_option("--uniform", w_uniform, "Write a uniform map with this lambda instead");

    // warp
    std::string wp_in, wp_ddf, wp_out, wp_interp = "linear";
    auto* warp = app.add_subcommand("warp", "Warp a volume with a displacement field");
    warp->add_option("--input", wp_in, "Volume or label map")->required();
    warp->add_option("--ddf", wp_ddf, "Displacement field (voxel units)")->required();
    warp->add_option("--out", wp_out, "Output volume")->required();
    warp->add_option("--interp", wp_interp, "Interpolation")->check(CLI::IsMember({"linear", "nearest"}));

    // eval
    cli::PairOptions ev_pair;
    std::string ev_ddf, ev_out;
    std::size_t ev_bins = 32;
    auto* eval = app.add_subcommand("eval", "Evaluate a displacement field on a pair");
    ev_pair.add(eval);
    eval->add_option("--ddf", ev_ddf, "Displacement field")->required();
    eval->add_option("--out", ev_out, "Report path (default: stdout)");
    eval->add_option("--bins", ev_bins, "Mutual information histogram bins")->check(CLI::Range(2, 4096));

    // phantom
    PhantomSpec ph_spec;
    std::string ph_out, ph_format = "nifti-gz";
    std::size_t ph_count = 1;
    bool ph_rigid = false;
    std::vector<std::size_t> ph_dims;
    std::vector<double> ph_spacing;
    auto* phantom = app.add_subcommand("phantom", "Generate synthetic phantom bundles");
    phantom->add_option("--out", ph_out, "Bundle directory")->required();
    phantom->add_option("--seed", ph_spec.seed, "Seed (first seed with --count)");
    phantom->add_option("--count", ph_count, "Number of bundles; > 1 writes phantom_<seed> subdirectories")
        ->check(CLI::PositiveNumber);
    phantom->add_option("--dims", ph_dims, "Grid dims")->expected(3);
    phantom->add_option("--spacing", ph_spacing, "Voxel spacing in mm")->expected(3);
    phantom->add_option("--organs", ph_spec.n_soft_organs, "Number of soft organs");
    phantom->add_option("--max-soft", ph_spec.max_soft_displacement, "Peak soft-tissue displacement (voxels)");
    phantom->add_option("--bone-translation", ph_spec.bone_translation, "Bone translation (voxels)");
    phantom->add_option("--bone-scale", ph_spec.bone_scale, "Bone ellipsoid scale");
    phantom->add_option("--noise", ph_spec.noise_sigma, "PET noise sigma");
    phantom->add_flag("--shared-noise", ph_spec.shared_noise, "Same noise draw for both PET volumes");
    phantom->add_flag("--rigid-block", ph_rigid, "Rigid-block preset (bulky bone, larger soft motion)");
    phantom->add_option("--format", ph_format, "Volume format")->check(CLI::IsMember(cli::format_names()));

    // ablate
    std::vector<std::string> ab_inputs;
    std::vector<double> ab_mu{4500.0};
    cli::ConfigOptions ab_cfg;
    std::string ab_json;
    int ab_bone = phantom_labels::kBone;
    auto* ablate = app.add_subcommand("ablate", "Baseline vs proposed comparison over phantom bundles");
    ablate->add_option("--bundles", ab_inputs, "Bundle directories, or directories containing bundles")->required();
    ablate->add_option("--mu-r", ab_mu, "List of mu_r values")->delimiter(',');
    ablate->add_option("--config", ab_cfg.path, "Base configuration file");
    ablate->add_option("--delta", ab_cfg.delta, "Weight margin for the proposed method");
    ablate->add_option("--gamma", ab_cfg.gamma, "CT contrast exponent for the proposed method");
    ablate->add_option("--seed", ab_cfg.seed, "Label sampling seed");
    ablate->add_option("--bone-label", ab_bone, "Label whose gradient energy is reported")->check(CLI::Range(1, 127));
    ablate->add_option("--json", ab_json, "Also write per-phantom results as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (reg->parsed() || base->parsed()) {
            cli::run_register(reg_job, reg->parsed() ? WeightMode::CtGuided : WeightMode::Uniform, out);
        } else if (weights->parsed()) {
            const Volume ct = read_scalar_volume(w_ct);
            const WeightMap w =
                w_uniform ? uniform_weight_map(ct.grid(), *w_uniform) : build_weight_map(ct, w_cfg.load().weight_params);
            write_volume(w.weights, w_out);
        } else if (warp->parsed()) {
            const AnyVolume in = read_volume(wp_in);
            const DisplacementField ddf = read_ddf(wp_ddf);
            const bool nearest = wp_interp == "nearest";
            if (const auto* v = std::get_if<Volume>(&in)) {
                write_volume(nearest ? warp_nearest(*v, ddf) : warp_scalar(*v, ddf), wp_out);
            } else if (const auto* l = std::get_if<LabelVolume>(&in)) {
                if (nearest) {
                    write_volume(warp_labels_nearest(*l, ddf), wp_out);
                } else {
                    Volume as_scalar(l->grid());
                    for (std::size_t i = 0; i < l->size(); ++i)
                        as_scalar[i] = (*l)[i];
                    write_volume(warp_scalar(as_scalar, ddf), wp_out);
                }
            } else {
                fail(ErrorCode::MalformedFile, wp_in + ": cannot warp a displacement field");
            }
        } else if (eval->parsed()) {
            const RegistrationPair pair = ev_pair.load();
            const auto report = to_json(evaluate(pair, read_ddf(ev_ddf), ev_bins)).dump(2) + "\n";
            if (ev_out.empty())
                out << report;
            else
                write_text_atomic(ev_out, report);
        } else if (phantom->parsed()) {
            PhantomSpec spec = ph_rigid ? rigid_block_spec(ph_spec.seed) : PhantomSpec{};
            spec.seed = ph_spec.seed;
            for (auto* o : phantom->get_options()) {
                if (o->count() == 0)
                    continue;
                const auto& n = o->get_name();
                if (n == "--organs")
                    spec.n_soft_organs = ph_spec.n_soft_organs;
                else if (n == "--max-soft")
                    spec.max_soft_displacement = ph_spec.max_soft_displacement;
                else if (n == "--bone-translation")
                    spec.bone_translation = ph_spec.bone_translation;
                else if (n == "--bone-scale")
                    spec.bone_scale = ph_spec.bone_scale;
                else if (n == "--noise")
                    spec.noise_sigma = ph_spec.noise_sigma;
            }
            spec.shared_noise = ph_spec.shared_noise;
            if (!ph_dims.empty())
                spec.dims = {ph_dims[0], ph_dims[1], ph_dims[2]};
            if (!ph_spacing.empty())
                spec.spacing = {ph_spacing[0], ph_spacing[1], ph_spacing[2]};
            const std::string ext = cli::extension_for(ph_format);
            for (std::size_t i = 0; i < ph_count; ++i) {
                PhantomSpec s = spec;
                s.seed = spec.seed + i;
                const std::string dir =
                    ph_count == 1 ? ph_out : cli::join_path(ph_out, "phantom_" + std::to_string(s.seed));
                write_phantom_bundle(dir, generate_phantom(s), s, ext);
                out << "wrote " << dir << "\n";
            }
        } else if (ablate->parsed()) {
            return cli::run_ablate(ab_inputs, ab_mu, ab_cfg, static_cast<Label>(ab_bone), ab_json, out);
        }
    } catch (const CLI::ValidationError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}

inline int cli_main(const std::vector<std::string>& args, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr)
{
    std::vector<const char*> argv;
    argv.push_back("ctreg");
    for (const auto& a : args)
        argv.push_back(a.c_str());
    return cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
}

} // namespace ctreg
