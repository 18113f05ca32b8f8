#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "ctreg/error.hpp"
#include "ctreg/sampling.hpp"
#include "ctreg/volume.hpp"

namespace ctreg {

namespace detail {

    // Corner-aligned mapping of an output index into the input lattice.
    inline double corner_aligned(std::size_t out_index, std::size_t dim_in, std::size_t dim_out)
    {
        if (dim_out == 1)
            return 0.0;
        return static_cast<double>(out_index) * static_cast<double>(dim_in - 1) / static_cast<double>(dim_out - 1);
    }

    inline Grid resized_grid(const Grid& in, const Dims& new_dims)
    {
        Grid out = in;
        out.dims = new_dims;
        for (int a = 0; a < 3; ++a) {
            if (in.dims[a] > 1 && new_dims[a] > 1)
                out.spacing[a] = in.spacing[a] * static_cast<double>(in.dims[a] - 1) / static_cast<double>(new_dims[a] - 1);
            else
                out.spacing[a] = in.spacing[a] * static_cast<double>(in.dims[a]) / static_cast<double>(new_dims[a]);
        }
        out.validate();
        return out;
    }

    template <typename T, typename Accumulate>
    VoxelField<T> resize_impl(const VoxelField<T>& in, const Dims& new_dims, Accumulate accumulate)
    {
        for (auto d : new_dims)
            require(d >= 1, ErrorCode::InvalidParams, "resize target dims must be >= 1");
        const Grid out_grid = resized_grid(in.grid(), new_dims);
        VoxelField<T> out(out_grid);
        for (std::size_t k = 0; k < new_dims[2]; ++k)
            for (std::size_t j = 0; j < new_dims[1]; ++j)
                for (std::size_t i = 0; i < new_dims[0]; ++i) {
                    const Vec3 p{corner_aligned(i, in.dims()[0], new_dims[0]),
                                 corner_aligned(j, in.dims()[1], new_dims[1]),
                                 corner_aligned(k, in.dims()[2], new_dims[2])};
                    const auto st = trilinear_stencil(in.grid(), p);
                    T acc{};
                    for (int c = 0; c < 8; ++c)
                        if (st.index[c] >= 0)
                            accumulate(acc, st.weight[c], in[static_cast<std::size_t>(st.index[c])]);
                    out(i, j, k) = acc;
                }
        return out;
    }

} // namespace detail

/// Trilinear resize with corner-aligned coordinates. The physical extent is
/// preserved and the output never leaves the input's [min, max] range.
inline Volume resize_trilinear(const Volume& vol, const Dims& new_dims)
{
    if (new_dims == vol.dims())
        return vol;
    auto out = detail::resize_impl(vol, new_dims, [](double& acc, double w, double v) { acc += w * v; });
    const auto [lo, hi] = std::minmax_element(vol.begin(), vol.end());
    for (double& v : out)
        v = std::clamp(v, *lo, *hi);
    return out;
}

/// Component-wise trilinear resize of a vector field (values are not rescaled).
inline DisplacementField resize_trilinear(const DisplacementField& field, const Dims& new_dims)
{
    if (new_dims == field.dims())
        return field;
    return detail::resize_impl(field, new_dims, [](Vec3& acc, double w, const Vec3& v) { acc += w * v; });
}

/// Min-max normalisation to [0, 1] over the whole volume.
inline Volume normalize_unit(const Volume& vol)
{
    require(vol.size() > 0, ErrorCode::DegenerateVolume, "empty volume");
    const auto [lo_it, hi_it] = std::minmax_element(vol.begin(), vol.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    require(hi > lo, ErrorCode::DegenerateVolume, "volume is constant, cannot normalise");
    Volume out(vol.grid());
    const double range = hi - lo;
    for (std::size_t i = 0; i < vol.size(); ++i)
        out[i] = (vol[i] - lo) / range;
    return out;
}

/// Min-max normalises the four intensity volumes of a pair to [0, 1].
inline RegistrationPair normalize_pair(RegistrationPair pair)
{
    pair.moving_pet = normalize_unit(pair.moving_pet);
    pair.fixed_pet = normalize_unit(pair.fixed_pet);
    pair.moving_ct = normalize_unit(pair.moving_ct);
    pair.fixed_ct = normalize_unit(pair.fixed_ct);
    return pair;
}

namespace detail {

    inline Grid pooled_grid(const Grid& in, std::size_t factor)
    {
        require(factor >= 1, ErrorCode::InvalidParams, "downsampling factor must be >= 1");
        for (auto d : in.dims)
            require(factor <= d, ErrorCode::InvalidParams,
                    "downsampling factor " + std::to_string(factor) + " exceeds grid " + dims_string(in.dims));
        Grid out = in;
        for (int a = 0; a < 3; ++a) {
            out.dims[a] = (in.dims[a] + factor - 1) / factor;
            out.spacing[a] = in.spacing[a] * static_cast<double>(factor);
            out.origin[a] = in.origin[a] + 0.5 * static_cast<double>(factor - 1) * in.spacing[a];
        }
        return out;
    }

    template <typename Visit>
    void for_each_in_block(const Grid& in, std::size_t factor, std::size_t bi, std::size_t bj, std::size_t bk,
                           Visit visit)
    {
        const std::size_t i1 = std::min(in.dims[0], (bi + 1) * factor);
        const std::size_t j1 = std::min(in.dims[1], (bj + 1) * factor);
        const std::size_t k1 = std::min(in.dims[2], (bk + 1) * factor);
        for (std::size_t k = bk * factor; k < k1; ++k)
            for (std::size_t j = bj * factor; j < j1; ++j)
                for (std::size_t i = bi * factor; i < i1; ++i)
                    visit(in.index(i, j, k));
    }

} // namespace detail

/// Block-mean pooling over factor^3 blocks; trailing partial blocks average
/// the voxels that exist.
inline Volume downsample_volume(const Volume& vol, std::size_t factor)
{
    if (factor == 1)
        return vol;
    const Grid out_grid = detail::pooled_grid(vol.grid(), factor);
    Volume out(out_grid);
    for (std::size_t k = 0; k < out_grid.dims[2]; ++k)
        for (std::size_t j = 0; j < out_grid.dims[1]; ++j)
            for (std::size_t i = 0; i < out_grid.dims[0]; ++i) {
                double sum = 0.0;
                std::size_t n = 0;
                detail::for_each_in_block(vol.grid(), factor, i, j, k, [&](std::size_t idx) {
                    sum += vol[idx];
                    ++n;
                });
                out(i, j, k) = sum / static_cast<double>(n);
            }
    return out;
}

/// Majority-vote pooling of labels; ties go to the smaller id.
inline LabelVolume downsample_labels(const LabelVolume& seg, std::size_t factor)
{
    if (factor == 1)
        return seg;
    const Grid out_grid = detail::pooled_grid(seg.grid(), factor);
    LabelVolume out(out_grid);
    std::array<std::size_t, kMaxClasses> counts{};
    for (std::size_t k = 0; k < out_grid.dims[2]; ++k)
        for (std::size_t j = 0; j < out_grid.dims[1]; ++j)
            for (std::size_t i = 0; i < out_grid.dims[0]; ++i) {
                counts.fill(0);
                detail::for_each_in_block(seg.grid(), factor, i, j, k, [&](std::size_t idx) {
                    require(seg[idx] < kMaxClasses, ErrorCode::UnknownLabel, "label out of range");
                    ++counts[seg[idx]];
                });
                const auto best = std::max_element(counts.begin(), counts.end());
                out(i, j, k) = static_cast<Label>(best - counts.begin());
            }
    return out;
}

} // namespace ctreg
