#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>

#include "ctreg/error.hpp"
#include "ctreg/file_io.hpp"
#include "ctreg/image_data.hpp"
#include "ctreg/volume.hpp"

namespace ctreg::nifti {

inline constexpr std::size_t kHeaderSize = 348;
inline constexpr std::size_t kDataOffset = 352;
inline constexpr std::int16_t kIntentDispVect = 1006;
inline constexpr int kFormatVersion = 1;

enum Datatype : std::int16_t {
    kUint8 = 2,
    kInt16 = 4,
    kInt32 = 8,
    kFloat32 = 16,
    kFloat64 = 64,
};

// Byte offsets into the NIfTI-1 header.
namespace off {
    inline constexpr std::size_t sizeof_hdr = 0;
    inline constexpr std::size_t dim = 40;
    inline constexpr std::size_t intent_code = 68;
    inline constexpr std::size_t datatype = 70;
    inline constexpr std::size_t bitpix = 72;
    inline constexpr std::size_t pixdim = 76;
    inline constexpr std::size_t vox_offset = 108;
    inline constexpr std::size_t scl_slope = 112;
    inline constexpr std::size_t scl_inter = 116;
    inline constexpr std::size_t xyzt_units = 123;
    inline constexpr std::size_t descrip = 148;
    inline constexpr std::size_t qform_code = 252;
    inline constexpr std::size_t sform_code = 254;
    inline constexpr std::size_t quatern_b = 256;
    inline constexpr std::size_t qoffset_x = 268;
    inline constexpr std::size_t srow_x = 280;
    inline constexpr std::size_t intent_name = 328;
    inline constexpr std::size_t magic = 344;
} // namespace off

inline std::size_t datatype_bytes(std::int16_t dt)
{
    switch (dt) {
    case kUint8: return 1;
    case kInt16: return 2;
    case kInt32: return 4;
    case kFloat32: return 4;
    case kFloat64: return 8;
    default: break;
    }
    fail(ErrorCode::UnsupportedDatatype, "NIfTI datatype " + std::to_string(dt) + " is not supported");
}

namespace detail {

    inline bool near_zero(double v, double scale) { return std::abs(v) <= 1e-6 * std::max(scale, 1e-12); }

    inline void require_axis_aligned(const std::array<std::array<double, 3>, 3>& m, const std::string& path)
    {
        for (int r = 0; r < 3; ++r) {
            double scale = 0.0;
            for (int c = 0; c < 3; ++c)
                scale = std::max(scale, std::abs(m[r][c]));
            for (int c = 0; c < 3; ++c)
                if (r != c && !near_zero(m[r][c], scale))
                    fail(ErrorCode::UnsupportedOrientation,
                         path + ": orientation matrix is not axis-aligned; only diagonal (optionally flipped) "
                                "orientations are supported");
            require(!near_zero(m[r][r], scale) || scale == 0.0, ErrorCode::UnsupportedOrientation,
                    path + ": orientation matrix permutes axes");
        }
    }

} // namespace detail

/// Parses a single-file NIfTI-1 image already read into memory.
inline ImageData decode(const Bytes& bytes, const std::string& path)
{
    using ctreg::detail::load_le;
    require(bytes.size() >= kHeaderSize, ErrorCode::MalformedFile, path + ": truncated NIfTI header");
    const std::uint8_t* h = bytes.data();
    bool swap = false;
    const auto hdr = load_le<std::int32_t>(h + off::sizeof_hdr, false);
    if (hdr != static_cast<std::int32_t>(kHeaderSize)) {
        require(load_le<std::int32_t>(h + off::sizeof_hdr, true) == static_cast<std::int32_t>(kHeaderSize),
                ErrorCode::MalformedFile, path + ": sizeof_hdr is not 348");
        swap = true;
    }
    require(std::memcmp(h + off::magic, "n+1\0", 4) == 0, ErrorCode::MalformedFile,
            path + ": magic is not \"n+1\" (only single-file NIfTI-1 is supported)");

    std::array<std::int16_t, 8> dim{};
    for (int i = 0; i < 8; ++i)
        dim[i] = load_le<std::int16_t>(h + off::dim + 2 * i, swap);
    require(dim[0] >= 1 && dim[0] <= 7, ErrorCode::MalformedFile, path + ": dim[0] out of range");
    Dims dims{1, 1, 1};
    for (int a = 0; a < 3; ++a) {
        if (a < dim[0]) {
            require(dim[a + 1] >= 1, ErrorCode::MalformedFile, path + ": non-positive dimension");
            dims[a] = static_cast<std::size_t>(dim[a + 1]);
        }
    }
    std::size_t components = 1;
    for (int d = 4; d <= dim[0]; ++d) {
        const int n = std::max<int>(dim[d], 1);
        if (n == 1)
            continue;
        require(n == 3 && components == 1 && (d == 4 || d == 5), ErrorCode::MalformedFile,
                path + ": only 3-D volumes and 3-component vector fields are supported");
        components = 3;
    }

    const auto datatype = load_le<std::int16_t>(h + off::datatype, swap);
    const std::size_t nbytes = datatype_bytes(datatype);
    const auto bitpix = load_le<std::int16_t>(h + off::bitpix, swap);
    require(bitpix == static_cast<std::int16_t>(8 * nbytes), ErrorCode::MalformedFile,
            path + ": bitpix does not match datatype");

    Vec3 spacing{1.0, 1.0, 1.0};
    for (int a = 0; a < 3; ++a) {
        const double p = load_le<float>(h + off::pixdim + 4 * (a + 1), swap);
        if (a < dim[0]) {
            require(std::isfinite(p) && p != 0.0, ErrorCode::MalformedFile, path + ": pixdim must be non-zero");
            spacing[a] = std::abs(p);
        }
    }

    Vec3 origin{0.0, 0.0, 0.0};
    const auto sform = load_le<std::int16_t>(h + off::sform_code, swap);
    const auto qform = load_le<std::int16_t>(h + off::qform_code, swap);
    if (sform > 0) {
        std::array<std::array<double, 3>, 3> m{};
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c)
                m[r][c] = load_le<float>(h + off::srow_x + 16 * r + 4 * c, swap);
            origin[r] = load_le<float>(h + off::srow_x + 16 * r + 12, swap);
        }
        detail::require_axis_aligned(m, path);
    } else if (qform > 0) {
        const double b = load_le<float>(h + off::quatern_b, swap);
        const double c = load_le<float>(h + off::quatern_b + 4, swap);
        const double d = load_le<float>(h + off::quatern_b + 8, swap);
        const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
        const std::array<std::array<double, 3>, 3> r{{
            {a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
            {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
            {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c},
        }};
        detail::require_axis_aligned(r, path);
        for (int k = 0; k < 3; ++k)
            origin[k] = load_le<float>(h + off::qoffset_x + 4 * k, swap);
    }

    const double vox_offset = load_le<float>(h + off::vox_offset, swap);
    require(std::isfinite(vox_offset) && vox_offset >= static_cast<double>(kHeaderSize), ErrorCode::MalformedFile,
            path + ": invalid vox_offset");
    const auto data_start = static_cast<std::size_t>(vox_offset);

    ImageData img;
    img.grid = Grid(dims, spacing, origin);
    img.components = components;
    const std::size_t count = img.grid.size() * components;
    require(bytes.size() >= data_start && bytes.size() - data_start >= count * nbytes, ErrorCode::MalformedFile,
            path + ": truncated voxel data");

    const std::uint8_t* p = h + data_start;
    img.values.resize(count);
    for (std::size_t i = 0; i < count; ++i, p += nbytes) {
        switch (datatype) {
        case kUint8: img.values[i] = *p; break;
        case kInt16: img.values[i] = load_le<std::int16_t>(p, swap); break;
        case kInt32: img.values[i] = load_le<std::int32_t>(p, swap); break;
        case kFloat32: img.values[i] = load_le<float>(p, swap); break;
        case kFloat64: img.values[i] = load_le<double>(p, swap); break;
        default: break;
        }
    }

    const double slope = load_le<float>(h + off::scl_slope, swap);
    const double inter = load_le<float>(h + off::scl_inter, swap);
    const bool scaled = std::isfinite(slope) && std::isfinite(inter) && slope != 0.0 && !(slope == 1.0 && inter == 0.0);
    if (scaled)
        for (double& v : img.values)
            v = v * slope + inter;

    const bool integer_type = datatype == kUint8 || datatype == kInt16 || datatype == kInt32;
    if (components == 3) {
        img.kind = ImageKind::Ddf;
    } else if (integer_type && !scaled) {
        const bool label_range = std::all_of(img.values.begin(), img.values.end(), [](double v) {
            return v >= 0.0 && v < static_cast<double>(kMaxClasses);
        });
        img.kind = label_range ? ImageKind::Labels : ImageKind::Scalar;
    } else {
        img.kind = ImageKind::Scalar;
    }
    return img;
}

/// Serialises to NIfTI-1. Scalars and fields are stored as float32 (float64
/// input is rounded to the nearest float), labels as int16. Fields are 4-D with
/// dim[4] = 3, intent DISPVECT, in voxel units.
inline Bytes encode(const ImageData& img)
{
    using ctreg::detail::store_le;
    const bool labels = img.kind == ImageKind::Labels;
    const std::int16_t datatype = labels ? kInt16 : kFloat32;
    const std::size_t nbytes = labels ? 2 : 4;
    const std::size_t count = img.grid.size() * img.components;
    require(img.values.size() == count, ErrorCode::ShapeMismatch, "image payload does not match its grid");

    Bytes out(kDataOffset + count * nbytes, 0);
    std::uint8_t* h = out.data();
    store_le<std::int32_t>(h + off::sizeof_hdr, static_cast<std::int32_t>(kHeaderSize));
    const bool field = img.components == 3;
    store_le<std::int16_t>(h + off::dim, field ? 4 : 3);
    for (int a = 0; a < 3; ++a)
        store_le<std::int16_t>(h + off::dim + 2 * (a + 1), static_cast<std::int16_t>(img.grid.dims[a]));
    for (int d = 4; d < 8; ++d)
        store_le<std::int16_t>(h + off::dim + 2 * d, 1);
    if (field) {
        store_le<std::int16_t>(h + off::dim + 8, 3);
        store_le<std::int16_t>(h + off::intent_code, kIntentDispVect);
        std::memcpy(h + off::intent_name, "ddf_voxel", 9);
    }
    store_le<std::int16_t>(h + off::datatype, datatype);
    store_le<std::int16_t>(h + off::bitpix, static_cast<std::int16_t>(8 * nbytes));
    store_le<float>(h + off::pixdim, 1.0f);
    for (int a = 0; a < 3; ++a)
        store_le<float>(h + off::pixdim + 4 * (a + 1), static_cast<float>(img.grid.spacing[a]));
    for (int d = 4; d < 8; ++d)
        store_le<float>(h + off::pixdim + 4 * d, 1.0f);
    store_le<float>(h + off::vox_offset, static_cast<float>(kDataOffset));
    store_le<float>(h + off::scl_slope, 1.0f);
    h[off::xyzt_units] = 2;

    const std::string descrip = "ctreg format_version=" + std::to_string(kFormatVersion) + " kind=" +
                                to_string(img.kind) + (field ? " units=voxel" : "");
    std::memcpy(h + off::descrip, descrip.data(), std::min<std::size_t>(descrip.size(), 79));

    store_le<std::int16_t>(h + off::qform_code, 1);
    store_le<std::int16_t>(h + off::sform_code, 1);
    for (int k = 0; k < 3; ++k)
        store_le<float>(h + off::qoffset_x + 4 * k, static_cast<float>(img.grid.origin[k]));
    for (int r = 0; r < 3; ++r) {
        store_le<float>(h + off::srow_x + 16 * r + 4 * r, static_cast<float>(img.grid.spacing[r]));
        store_le<float>(h + off::srow_x + 16 * r + 12, static_cast<float>(img.grid.origin[r]));
    }
    std::memcpy(h + off::magic, "n+1\0", 4);

    std::uint8_t* p = h + kDataOffset;
    for (std::size_t i = 0; i < count; ++i, p += nbytes) {
        if (labels)
            store_le<std::int16_t>(p, static_cast<std::int16_t>(img.values[i]));
        else
            store_le<float>(p, static_cast<float>(img.values[i]));
    }
    return out;
}

inline ImageData read(const std::string& path)
{
    return decode(read_file_bytes(path), path);
}

inline void write(const ImageData& img, const std::string& path)
{
    const Bytes bytes = encode(img);
    write_file_atomic(path, bytes.data(), bytes.size(), has_suffix(path, ".gz"));
}

} // namespace ctreg::nifti
