#pragma once

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "ctreg/error.hpp"
#include "ctreg/volume.hpp"

namespace ctreg {

enum class ImageKind { Scalar, Labels, Ddf };

inline std::string to_string(ImageKind k)
{
    switch (k) {
    case ImageKind::Scalar: return "scalar";
    case ImageKind::Labels: return "labels";
    case ImageKind::Ddf: return "ddf";
    }
    return "unknown";
}

inline ImageKind image_kind_from_string(const std::string& s)
{
    if (s == "scalar")
        return ImageKind::Scalar;
    if (s == "labels")
        return ImageKind::Labels;
    if (s == "ddf")
        return ImageKind::Ddf;
    fail(ErrorCode::MalformedFile, "unknown value kind '" + s + "'");
}

/// Format-neutral image payload. Multi-component data is stored component-last:
/// component c of voxel idx is values[c * grid.size() + idx].
struct ImageData {
    Grid grid;
    ImageKind kind = ImageKind::Scalar;
    std::size_t components = 1;
    std::vector<double> values;
};

using AnyVolume = std::variant<Volume, LabelVolume, DisplacementField>;

inline ImageData to_image(const Volume& v)
{
    return {v.grid(), ImageKind::Scalar, 1, std::vector<double>(v.begin(), v.end())};
}

inline ImageData to_image(const LabelVolume& v)
{
    return {v.grid(), ImageKind::Labels, 1, std::vector<double>(v.begin(), v.end())};
}

inline ImageData to_image(const DisplacementField& f)
{
    ImageData img{f.grid(), ImageKind::Ddf, 3, std::vector<double>(3 * f.size())};
    for (std::size_t idx = 0; idx < f.size(); ++idx)
        for (std::size_t c = 0; c < 3; ++c)
            img.values[c * f.size() + idx] = f[idx][c];
    return img;
}

inline ImageData to_image(const AnyVolume& v)
{
    return std::visit([](const auto& x) { return to_image(x); }, v);
}

inline Volume image_to_volume(const ImageData& img, const std::string& what)
{
    require(img.components == 1, ErrorCode::MalformedFile, what + ": expected a scalar volume, found a vector field");
    Volume out(img.grid);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = img.values[i];
    return out;
}

inline LabelVolume image_to_labels(const ImageData& img, const std::string& what)
{
    require(img.components == 1, ErrorCode::MalformedFile, what + ": expected a label volume, found a vector field");
    LabelVolume out(img.grid);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = img.values[i];
        require(v >= 0.0 && v < static_cast<double>(kMaxClasses) && v == std::floor(v), ErrorCode::UnknownLabel,
                what + ": voxel value " + std::to_string(v) + " is not a label id in [0, 127]");
        out[i] = static_cast<Label>(v);
    }
    return out;
}

inline DisplacementField image_to_ddf(const ImageData& img, const std::string& what)
{
    require(img.components == 3, ErrorCode::MalformedFile, what + ": expected a 3-component displacement field");
    DisplacementField out(img.grid);
    const std::size_t n = out.size();
    for (std::size_t idx = 0; idx < n; ++idx)
        out[idx] = {img.values[idx], img.values[n + idx], img.values[2 * n + idx]};
    return out;
}

inline AnyVolume image_to_any(const ImageData& img, const std::string& what)
{
    switch (img.kind) {
    case ImageKind::Ddf: return image_to_ddf(img, what);
    case ImageKind::Labels: return image_to_labels(img, what);
    case ImageKind::Scalar: break;
    }
    return image_to_volume(img, what);
}

} // namespace ctreg
