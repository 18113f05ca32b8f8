#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ctreg/error.hpp"

namespace ctreg {

using Vec3 = std::array<double, 3>;
using Dims = std::array<std::size_t, 3>;
using Index3 = std::array<std::int64_t, 3>;
/// Row i, column j holds d(mu_i)/d(x_j).
using Mat3 = std::array<Vec3, 3>;
using Label = std::uint16_t;

/// Labels are restricted to a 128-class universe, 0 being background.
inline constexpr std::size_t kMaxClasses = 128;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline Vec3& operator+=(Vec3& a, const Vec3& b)
{
    a[0] += b[0];
    a[1] += b[1];
    a[2] += b[2];
    return a;
}
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline bool is_finite(const Vec3& a)
{
    return std::isfinite(a[0]) && std::isfinite(a[1]) && std::isfinite(a[2]);
}

/// Axis-aligned voxel lattice. Axis 0 is the fastest-varying index in memory.
struct Grid {
    Dims dims{1, 1, 1};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};

    Grid() = default;
    explicit Grid(Dims d, Vec3 sp = {1.0, 1.0, 1.0}, Vec3 org = {0.0, 0.0, 0.0})
        : dims(d), spacing(sp), origin(org)
    {
        validate();
    }

    void validate() const
    {
        for (int a = 0; a < 3; ++a) {
            require(dims[a] >= 1, ErrorCode::InvalidParams, "grid dimension must be >= 1");
            require(std::isfinite(spacing[a]) && spacing[a] > 0.0, ErrorCode::InvalidParams,
                    "grid spacing must be positive");
            require(std::isfinite(origin[a]), ErrorCode::InvalidParams, "grid origin must be finite");
        }
    }

    std::size_t size() const noexcept { return dims[0] * dims[1] * dims[2]; }

    std::size_t index(std::size_t i, std::size_t j, std::size_t k) const noexcept
    {
        return i + dims[0] * (j + dims[1] * k);
    }

    Index3 coords(std::size_t idx) const noexcept
    {
        const auto i = idx % dims[0];
        const auto rest = idx / dims[0];
        return {static_cast<std::int64_t>(i), static_cast<std::int64_t>(rest % dims[1]),
                static_cast<std::int64_t>(rest / dims[1])};
    }

    bool contains(const Index3& x) const noexcept
    {
        for (int a = 0; a < 3; ++a)
            if (x[a] < 0 || x[a] >= static_cast<std::int64_t>(dims[a]))
                return false;
        return true;
    }

    Vec3 world(const Vec3& x) const noexcept
    {
        return {origin[0] + x[0] * spacing[0], origin[1] + x[1] * spacing[1], origin[2] + x[2] * spacing[2]};
    }

    bool same_shape(const Grid& other) const noexcept { return dims == other.dims; }
};

inline std::string dims_string(const Dims& d)
{
    return std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]);
}

inline void require_same_shape(const Grid& a, const Grid& b, const std::string& what)
{
    require(a.same_shape(b), ErrorCode::ShapeMismatch,
            what + " (" + dims_string(a.dims) + " vs " + dims_string(b.dims) + ")");
}

/// Dense per-voxel storage on a Grid.
template <typename T>
class VoxelField {
public:
    using value_type = T;

    VoxelField() = default;
    explicit VoxelField(const Grid& grid, T fill = T{}) : grid_(grid), data_(grid.size(), fill)
    {
        grid_.validate();
    }
    VoxelField(const Grid& grid, std::vector<T> data) : grid_(grid), data_(std::move(data))
    {
        grid_.validate();
        require(data_.size() == grid_.size(), ErrorCode::ShapeMismatch,
                "voxel buffer length does not match grid " + dims_string(grid_.dims));
    }

    const Grid& grid() const noexcept { return grid_; }
    const Dims& dims() const noexcept { return grid_.dims; }
    std::size_t size() const noexcept { return data_.size(); }

    T& operator[](std::size_t idx) noexcept { return data_[idx]; }
    const T& operator[](std::size_t idx) const noexcept { return data_[idx]; }

    T& operator()(std::size_t i, std::size_t j, std::size_t k) noexcept { return data_[grid_.index(i, j, k)]; }
    const T& operator()(std::size_t i, std::size_t j, std::size_t k) const noexcept
    {
        return data_[grid_.index(i, j, k)];
    }

    std::vector<T>& data() noexcept { return data_; }
    const std::vector<T>& data() const noexcept { return data_; }

    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    bool operator==(const VoxelField& other) const
    {
        return grid_.dims == other.grid_.dims && data_ == other.data_;
    }

private:
    Grid grid_;
    std::vector<T> data_;
};

/// Scalar volume: PET, CT, weight maps, warped indicators.
using Volume = VoxelField<double>;
/// Integer anatomical labels in [0, kMaxClasses).
using LabelVolume = VoxelField<Label>;
/// Per-voxel displacement on the fixed grid, in voxel units: warped(x) = moving(x + mu(x)).
using DisplacementField = VoxelField<Vec3>;

inline void require_finite(const Volume& v, const std::string& what)
{
    for (double x : v)
        require(std::isfinite(x), ErrorCode::OutOfRange, what + " contains non-finite values");
}

inline void require_finite(const DisplacementField& f, const std::string& what)
{
    for (const auto& x : f)
        require(is_finite(x), ErrorCode::OutOfRange, what + " contains non-finite vectors");
}

inline void require_valid_labels(const LabelVolume& s, const std::string& what)
{
    for (Label l : s)
        require(l < kMaxClasses, ErrorCode::UnknownLabel,
                what + " has label " + std::to_string(l) + " >= " + std::to_string(kMaxClasses));
}

/// The six co-registered inputs of one registration problem. The moving_* volumes
/// share one grid and the fixed_* volumes share another of identical dims.
struct RegistrationPair {
    Volume moving_pet;
    Volume fixed_pet;
    Volume moving_ct;
    Volume fixed_ct;
    LabelVolume moving_seg;
    LabelVolume fixed_seg;
    std::string subject;
    std::string moving_tracer;
    std::string fixed_tracer;

    void validate() const
    {
        const Grid& g = fixed_pet.grid();
        require_same_shape(g, moving_pet.grid(), "moving_pet vs fixed_pet");
        require_same_shape(g, moving_ct.grid(), "moving_ct vs fixed_pet");
        require_same_shape(g, fixed_ct.grid(), "fixed_ct vs fixed_pet");
        require_same_shape(g, moving_seg.grid(), "moving_seg vs fixed_pet");
        require_same_shape(g, fixed_seg.grid(), "fixed_seg vs fixed_pet");
        require_finite(moving_pet, "moving_pet");
        require_finite(fixed_pet, "fixed_pet");
        require_finite(moving_ct, "moving_ct");
        require_finite(fixed_ct, "fixed_ct");
        require_valid_labels(moving_seg, "moving_seg");
        require_valid_labels(fixed_seg, "fixed_seg");
    }
};

inline DisplacementField zero_field(const Grid& grid) { return DisplacementField(grid, Vec3{0.0, 0.0, 0.0}); }

} // namespace ctreg
