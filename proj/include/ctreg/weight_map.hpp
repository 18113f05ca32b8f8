#pragma once

#include <cmath>
#include <string>

#include "ctreg/error.hpp"
#include "ctreg/preprocess.hpp"
#include "ctreg/volume.hpp"

namespace ctreg {

/// Controls the CT-derived regularisation weights.
///
/// Weights live in [mu_r - delta, mu_r + delta]. Voxels with the lowest moving
/// CT intensity get the lower bound and the densest voxels get the upper bound;
/// gamma > 1 pushes intermediate (soft tissue) intensities towards the lower bound.
struct WeightMapParams {
    double mu_r = 4500.0;
    double delta = 3000.0;
    double gamma = 2.0;

    void validate() const
    {
        require(std::isfinite(mu_r) && std::isfinite(delta) && std::isfinite(gamma), ErrorCode::InvalidParams,
                "weight map parameters must be finite");
        require(delta >= 0.0, ErrorCode::InvalidParams, "delta must be >= 0");
        require(mu_r - delta >= 0.0, ErrorCode::InvalidParams,
                "mu_r - delta must be >= 0 (mu_r=" + std::to_string(mu_r) + ", delta=" + std::to_string(delta) + ")");
        require(gamma > 0.0, ErrorCode::InvalidParams, "gamma must be > 0");
    }
};

/// Voxel-wise regularisation weights on a grid.
struct WeightMap {
    Volume weights;

    const Grid& grid() const noexcept { return weights.grid(); }
    std::size_t size() const noexcept { return weights.size(); }
    double operator[](std::size_t idx) const noexcept { return weights[idx]; }
};

/// Min-max normalisation of the moving CT over the whole volume (air included).
inline Volume normalize_ct(const Volume& ct)
{
    return normalize_unit(ct);
}

inline Volume gamma_map(const Volume& norm_ct, double gamma)
{
    require(std::isfinite(gamma) && gamma > 0.0, ErrorCode::InvalidParams, "gamma must be > 0");
    Volume out(norm_ct.grid());
    for (std::size_t i = 0; i < norm_ct.size(); ++i) {
        const double c = norm_ct[i];
        require(c >= 0.0 && c <= 1.0, ErrorCode::OutOfRange, "normalised CT value outside [0,1]");
        out[i] = gamma == 1.0 ? c : std::pow(c, gamma);
    }
    return out;
}

inline WeightMap project_weights(const Volume& mapped, double mu_r, double delta)
{
    WeightMapParams{mu_r, delta, 1.0}.validate();
    Volume w(mapped.grid());
    const double lo = mu_r - delta;
    for (std::size_t i = 0; i < mapped.size(); ++i) {
        const double c = mapped[i];
        require(c >= 0.0 && c <= 1.0, ErrorCode::OutOfRange, "mapped CT value outside [0,1]");
        w[i] = lo + 2.0 * delta * c;
    }
    return WeightMap{std::move(w)};
}

/// Full pipeline: normalise the moving CT, apply the gamma curve, project to
/// the weight interval. Built once from the un-warped moving CT.
inline WeightMap build_weight_map(const Volume& moving_ct, const WeightMapParams& params)
{
    params.validate();
    return project_weights(gamma_map(normalize_ct(moving_ct), params.gamma), params.mu_r, params.delta);
}

/// Constant map, i.e. the conventional single global regularisation weight.
inline WeightMap uniform_weight_map(const Grid& grid, double lambda)
{
    require(std::isfinite(lambda) && lambda >= 0.0, ErrorCode::InvalidParams, "lambda must be >= 0");
    return WeightMap{Volume(grid, lambda)};
}

} // namespace ctreg
