#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "ctreg/error.hpp"
#include "ctreg/file_io.hpp"
#include "ctreg/io.hpp"
#include "ctreg/phantom.hpp"

namespace ctreg {

inline constexpr int kBundleFormatVersion = 1;
inline constexpr const char* kBundleManifest = "bundle.json";

/// A registration pair stored as a directory of volumes plus a manifest.
struct PairBundle {
    RegistrationPair pair;
    std::optional<DisplacementField> gt_ddf;
    std::optional<LabelVolume> body_mask;
    nlohmann::json manifest;
};

namespace detail {

    inline const std::array<const char*, 6>& pair_roles()
    {
        static const std::array<const char*, 6> roles{"moving_pet", "fixed_pet", "moving_ct",
                                                      "fixed_ct",   "moving_seg", "fixed_seg"};
        return roles;
    }

} // namespace detail

/// Writes a phantom into `dir`. CTs are stored in HU, PETs normalised.
inline void write_phantom_bundle(const std::string& dir, const PhantomPair& ph, const PhantomSpec& spec,
                                 const std::string& extension = ".nii.gz")
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    require(!ec, ErrorCode::WriteError, "cannot create directory " + dir);
    const auto path = [&](const std::string& name) { return (std::filesystem::path(dir) / (name + extension)).string(); };

    const RegistrationPair& p = ph.pair;
    write_volume(p.moving_pet, path("moving_pet"));
    write_volume(p.fixed_pet, path("fixed_pet"));
    write_volume(p.moving_ct, path("moving_ct"));
    write_volume(p.fixed_ct, path("fixed_ct"));
    write_volume(p.moving_seg, path("moving_seg"));
    write_volume(p.fixed_seg, path("fixed_seg"));
    write_volume(ph.gt_ddf, path("gt_ddf"));
    write_volume(ph.body_mask, path("body_mask"));

    nlohmann::json m;
    m["format_version"] = kBundleFormatVersion;
    m["kind"] = "phantom";
    m["subject"] = p.subject;
    m["moving_tracer"] = p.moving_tracer;
    m["fixed_tracer"] = p.fixed_tracer;
    nlohmann::json files;
    for (const char* role : detail::pair_roles())
        files[role] = std::string(role) + extension;
    files["gt_ddf"] = "gt_ddf" + extension;
    files["body_mask"] = "body_mask" + extension;
    m["files"] = files;
    m["spec"] = {
        {"seed", spec.seed},
        {"dims", {spec.dims[0], spec.dims[1], spec.dims[2]}},
        {"spacing", {spec.spacing[0], spec.spacing[1], spec.spacing[2]}},
        {"n_soft_organs", spec.n_soft_organs},
        {"noise_sigma", spec.noise_sigma},
        {"max_soft_displacement", spec.max_soft_displacement},
        {"bone_translation", spec.bone_translation},
        {"bone_scale", spec.bone_scale},
        {"shared_noise", spec.shared_noise},
    };
    m["ct_hu"] = ph.ct_hu;
    m["uptake_a"] = ph.uptake_a;
    m["uptake_b"] = ph.uptake_b;
    write_text_atomic((std::filesystem::path(dir) / kBundleManifest).string(), m.dump(2) + "\n");
}

/// Loads a bundle written by write_phantom_bundle (or any directory with a
/// manifest listing the six pair roles).
inline PairBundle read_pair_bundle(const std::string& dir)
{
    const auto manifest_path = (std::filesystem::path(dir) / kBundleManifest).string();
    PairBundle b;
    try {
        b.manifest = nlohmann::json::parse(read_text_file(manifest_path));
        require(b.manifest.at("format_version").get<int>() == kBundleFormatVersion, ErrorCode::MalformedFile,
                manifest_path + ": unsupported format_version");
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::MalformedFile, manifest_path + ": " + e.what());
    }
    const auto file = [&](const char* role) -> std::optional<std::string> {
        const auto& files = b.manifest.at("files");
        if (!files.contains(role))
            return std::nullopt;
        return (std::filesystem::path(dir) / files.at(role).get<std::string>()).string();
    };
    const auto need = [&](const char* role) {
        auto f = file(role);
        require(f.has_value(), ErrorCode::MalformedFile, manifest_path + ": missing file entry '" + role + "'");
        return *f;
    };
    RegistrationPair& p = b.pair;
    p.moving_pet = read_scalar_volume(need("moving_pet"));
    p.fixed_pet = read_scalar_volume(need("fixed_pet"));
    p.moving_ct = read_scalar_volume(need("moving_ct"));
    p.fixed_ct = read_scalar_volume(need("fixed_ct"));
    p.moving_seg = read_label_volume(need("moving_seg"));
    p.fixed_seg = read_label_volume(need("fixed_seg"));
    p.subject = b.manifest.value("subject", std::string());
    p.moving_tracer = b.manifest.value("moving_tracer", std::string());
    p.fixed_tracer = b.manifest.value("fixed_tracer", std::string());
    if (auto f = file("gt_ddf"))
        b.gt_ddf = read_ddf(*f);
    if (auto f = file("body_mask"))
        b.body_mask = read_label_volume(*f);
    p.validate();
    return b;
}

} // namespace ctreg
