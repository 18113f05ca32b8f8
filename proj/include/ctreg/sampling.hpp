#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "ctreg/error.hpp"
#include "ctreg/volume.hpp"

namespace ctreg {

/// The eight corners of the trilinear cell containing a sample point. Corners
/// outside the grid carry index -1 and contribute zero (zero-padding boundary).
struct TrilinearStencil {
    std::array<std::int64_t, 8> index{};
    std::array<double, 8> weight{};
    /// d(weight)/dp for each corner.
    std::array<Vec3, 8> dweight{};
};

inline TrilinearStencil trilinear_stencil(const Grid& grid, const Vec3& p)
{
    TrilinearStencil st;
    st.index.fill(-1);

    // Far outside the lattice every corner is padding; bail out before the
    // floor() result could overflow an integer.
    for (int a = 0; a < 3; ++a) {
        if (p[a] <= -1.0 || p[a] >= static_cast<double>(grid.dims[a]))
            return st;
    }

    Index3 base;
    Vec3 frac;
    for (int a = 0; a < 3; ++a) {
        const double fl = std::floor(p[a]);
        base[a] = static_cast<std::int64_t>(fl);
        frac[a] = p[a] - fl;
    }

    for (int c = 0; c < 8; ++c) {
        const std::array<int, 3> bit{c & 1, (c >> 1) & 1, (c >> 2) & 1};
        Vec3 w1d;
        Vec3 dw1d;
        Index3 corner;
        for (int a = 0; a < 3; ++a) {
            w1d[a] = bit[a] ? frac[a] : 1.0 - frac[a];
            dw1d[a] = bit[a] ? 1.0 : -1.0;
            corner[a] = base[a] + bit[a];
        }
        if (!grid.contains(corner))
            continue;
        st.index[c] = static_cast<std::int64_t>(grid.index(static_cast<std::size_t>(corner[0]),
                                                           static_cast<std::size_t>(corner[1]),
                                                           static_cast<std::size_t>(corner[2])));
        st.weight[c] = w1d[0] * w1d[1] * w1d[2];
        st.dweight[c] = {dw1d[0] * w1d[1] * w1d[2], w1d[0] * dw1d[1] * w1d[2], w1d[0] * w1d[1] * dw1d[2]};
    }
    return st;
}

/// Trilinear interpolation at a continuous voxel coordinate, zero outside the grid.
inline double trilinear_sample(const Volume& vol, const Vec3& p)
{
    require(is_finite(p), ErrorCode::InvalidCoordinate, "sample point is not finite");
    const auto st = trilinear_stencil(vol.grid(), p);
    double v = 0.0;
    for (int c = 0; c < 8; ++c)
        if (st.index[c] >= 0)
            v += st.weight[c] * vol[static_cast<std::size_t>(st.index[c])];
    return v;
}

/// Spatial derivative of trilinear_sample with respect to the sample point.
inline Vec3 trilinear_sample_gradient(const Volume& vol, const Vec3& p)
{
    require(is_finite(p), ErrorCode::InvalidCoordinate, "sample point is not finite");
    const auto st = trilinear_stencil(vol.grid(), p);
    Vec3 g{0.0, 0.0, 0.0};
    for (int c = 0; c < 8; ++c)
        if (st.index[c] >= 0)
            g += vol[static_cast<std::size_t>(st.index[c])] * st.dweight[c];
    return g;
}

inline Vec3 sample_point(const Grid& grid, std::size_t idx, const Vec3& disp)
{
    const auto x = grid.coords(idx);
    return {static_cast<double>(x[0]) + disp[0], static_cast<double>(x[1]) + disp[1],
            static_cast<double>(x[2]) + disp[2]};
}

/// out(x) = vol(x + ddf(x)) on the fixed grid of ddf.
inline Volume warp_scalar(const Volume& vol, const DisplacementField& ddf)
{
    Volume out(ddf.grid());
    for (std::size_t idx = 0; idx < ddf.size(); ++idx)
        out[idx] = trilinear_sample(vol, sample_point(ddf.grid(), idx, ddf[idx]));
    return out;
}

/// Gradient of <upstream, warp_scalar(vol, ddf)> with respect to ddf.
inline DisplacementField warp_scalar_adjoint(const Volume& vol, const DisplacementField& ddf, const Volume& upstream)
{
    require_same_shape(ddf.grid(), upstream.grid(), "warp adjoint: upstream vs displacement field");
    DisplacementField grad(ddf.grid(), Vec3{0.0, 0.0, 0.0});
    for (std::size_t idx = 0; idx < ddf.size(); ++idx) {
        if (upstream[idx] == 0.0)
            continue;
        grad[idx] = upstream[idx] * trilinear_sample_gradient(vol, sample_point(ddf.grid(), idx, ddf[idx]));
    }
    return grad;
}

/// Nearest-neighbour warp. Ties round toward +inf; outside is zero.
template <typename T>
VoxelField<T> warp_nearest(const VoxelField<T>& src_field, const DisplacementField& ddf)
{
    VoxelField<T> out(ddf.grid(), T{});
    const Grid& src = src_field.grid();
    for (std::size_t idx = 0; idx < ddf.size(); ++idx) {
        const Vec3 p = sample_point(ddf.grid(), idx, ddf[idx]);
        require(is_finite(p), ErrorCode::InvalidCoordinate, "displacement is not finite");
        bool inside = true;
        Index3 q;
        for (int a = 0; a < 3; ++a) {
            const double r = std::floor(p[a] + 0.5);
            if (r < 0.0 || r >= static_cast<double>(src.dims[a])) {
                inside = false;
                break;
            }
            q[a] = static_cast<std::int64_t>(r);
        }
        if (inside)
            out[idx] = src_field(static_cast<std::size_t>(q[0]), static_cast<std::size_t>(q[1]),
                                 static_cast<std::size_t>(q[2]));
    }
    return out;
}

inline LabelVolume warp_labels_nearest(const LabelVolume& seg, const DisplacementField& ddf)
{
    return warp_nearest(seg, ddf);
}

inline Volume indicator(const LabelVolume& seg, std::size_t class_id)
{
    require(class_id < kMaxClasses, ErrorCode::UnknownLabel, "class id " + std::to_string(class_id) + " out of range");
    Volume out(seg.grid());
    for (std::size_t idx = 0; idx < seg.size(); ++idx)
        out[idx] = seg[idx] == class_id ? 1.0 : 0.0;
    return out;
}

/// Differentiable (trilinear) warp of the binary mask of one class.
inline Volume warp_indicator(const LabelVolume& seg, std::size_t class_id, const DisplacementField& ddf)
{
    return warp_scalar(indicator(seg, class_id), ddf);
}

using GradientTensorField = VoxelField<Mat3>;

/// Forward differences in voxel units; the difference leaving the last voxel
/// along an axis is zero.
inline GradientTensorField spatial_gradient(const DisplacementField& field)
{
    const Grid& g = field.grid();
    GradientTensorField out(g, Mat3{});
    const std::array<std::size_t, 3> stride{1, g.dims[0], g.dims[0] * g.dims[1]};
    for (std::size_t idx = 0; idx < field.size(); ++idx) {
        const auto x = g.coords(idx);
        Mat3 m{};
        for (int j = 0; j < 3; ++j) {
            if (x[j] + 1 >= static_cast<std::int64_t>(g.dims[j]))
                continue;
            const Vec3& next = field[idx + stride[j]];
            const Vec3& here = field[idx];
            for (int i = 0; i < 3; ++i)
                m[i][j] = next[i] - here[i];
        }
        out[idx] = m;
    }
    return out;
}

inline double frobenius_squared(const Mat3& m)
{
    double s = 0.0;
    for (const auto& row : m)
        for (double v : row)
            s += v * v;
    return s;
}

/// Per-voxel squared Frobenius norm of the forward-difference field gradient.
inline Volume gradient_energy(const DisplacementField& field)
{
    const auto grad = spatial_gradient(field);
    Volume out(field.grid());
    for (std::size_t idx = 0; idx < field.size(); ++idx)
        out[idx] = frobenius_squared(grad[idx]);
    return out;
}

/// det(I + grad(mu)) with forward differences.
inline Volume jacobian_determinant(const DisplacementField& field)
{
    const auto grad = spatial_gradient(field);
    Volume out(field.grid());
    for (std::size_t idx = 0; idx < field.size(); ++idx) {
        Mat3 j = grad[idx];
        for (int a = 0; a < 3; ++a)
            j[a][a] += 1.0;
        out[idx] = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) -
                   j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
                   j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
    }
    return out;
}

} // namespace ctreg
