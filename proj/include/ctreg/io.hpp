#pragma once

#include <string>

#include "ctreg/error.hpp"
#include "ctreg/file_io.hpp"
#include "ctreg/image_data.hpp"
#include "ctreg/nifti.hpp"
#include "ctreg/raw_bundle.hpp"
#include "ctreg/volume.hpp"

namespace ctreg {

enum class VolumeFormat {
    /// .nii, or .nii.gz for the gzip container.
    Nifti,
    /// .json header plus a .raw float32 payload.
    RawBundle,
};

inline VolumeFormat format_from_path(const std::string& path)
{
    if (has_suffix(path, ".nii") || has_suffix(path, ".nii.gz"))
        return VolumeFormat::Nifti;
    if (has_suffix(path, ".json"))
        return VolumeFormat::RawBundle;
    fail(ErrorCode::InvalidParams, path + ": unknown volume extension (expected .nii, .nii.gz or .json)");
}

inline ImageData read_image(const std::string& path)
{
    return format_from_path(path) == VolumeFormat::Nifti ? nifti::read(path) : raw_bundle::read(path);
}

inline void write_image(const ImageData& img, const std::string& path)
{
    if (format_from_path(path) == VolumeFormat::Nifti)
        nifti::write(img, path);
    else
        raw_bundle::write(img, path);
}

/// Loads a volume, label map or displacement field. NIfTI files with three
/// components load as fields; integer files with values in [0, 127] and no
/// intensity scaling load as label maps.
inline AnyVolume read_volume(const std::string& path)
{
    return image_to_any(read_image(path), path);
}

/// Loads any single-component file as intensities.
inline Volume read_scalar_volume(const std::string& path)
{
    return image_to_volume(read_image(path), path);
}

inline LabelVolume read_label_volume(const std::string& path)
{
    return image_to_labels(read_image(path), path);
}

inline DisplacementField read_ddf(const std::string& path)
{
    return image_to_ddf(read_image(path), path);
}

/// Intensities and field components are stored as float32.
inline void write_volume(const Volume& v, const std::string& path) { write_image(to_image(v), path); }
inline void write_volume(const LabelVolume& v, const std::string& path) { write_image(to_image(v), path); }
inline void write_volume(const DisplacementField& f, const std::string& path) { write_image(to_image(f), path); }
inline void write_volume(const AnyVolume& v, const std::string& path) { write_image(to_image(v), path); }

} // namespace ctreg
