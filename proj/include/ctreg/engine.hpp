#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ctreg/error.hpp"
#include "ctreg/losses.hpp"
#include "ctreg/preprocess.hpp"
#include "ctreg/volume.hpp"
#include "ctreg/weight_map.hpp"

namespace ctreg {

/// Units of the displacement inside the regulariser.
enum class RegUnits {
    /// Voxel units, as stored.
    Voxel,
    /// Component i divided by the grid extent along axis i, so the penalty
    /// measures displacement as a fraction of the image size.
    Extent,
};

inline Vec3 reg_component_scale(const Grid& grid, RegUnits units)
{
    if (units == RegUnits::Voxel)
        return {1.0, 1.0, 1.0};
    return {1.0 / static_cast<double>(grid.dims[0]), 1.0 / static_cast<double>(grid.dims[1]),
            1.0 / static_cast<double>(grid.dims[2])};
}

/// Hyperparameters of one per-pair optimisation.
struct RegistrationConfig {
    WeightMapParams weight_params;
    std::vector<std::size_t> pyramid_factors{4, 2, 1};
    std::vector<std::size_t> iters_per_level{150, 100, 80};
    double step_size = 0.25;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t label_sample_count = 10;
    std::uint64_t seed = 0;
    double convergence_tol = 1e-6;
    std::size_t convergence_window = 10;
    RegUnits reg_units = RegUnits::Extent;

    void validate() const
    {
        weight_params.validate();
        require(!pyramid_factors.empty(), ErrorCode::InvalidParams, "pyramid_factors must not be empty");
        require(pyramid_factors.size() == iters_per_level.size(), ErrorCode::InvalidParams,
                "pyramid_factors and iters_per_level must have the same length");
        for (std::size_t i = 0; i < pyramid_factors.size(); ++i) {
            require(pyramid_factors[i] >= 1, ErrorCode::InvalidParams, "pyramid_factors must be positive");
            require(iters_per_level[i] >= 1, ErrorCode::InvalidParams, "iters_per_level must be positive");
            if (i > 0)
                require(pyramid_factors[i] < pyramid_factors[i - 1], ErrorCode::InvalidParams,
                        "pyramid_factors must be strictly decreasing");
        }
        require(pyramid_factors.back() == 1, ErrorCode::InvalidParams, "last pyramid factor must be 1");
        require(std::isfinite(step_size) && step_size > 0.0, ErrorCode::InvalidParams, "step_size must be > 0");
        require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, ErrorCode::InvalidParams, "adam_beta1 must be in [0,1)");
        require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, ErrorCode::InvalidParams, "adam_beta2 must be in [0,1)");
        require(adam_eps > 0.0, ErrorCode::InvalidParams, "adam_eps must be > 0");
        require(label_sample_count >= 1, ErrorCode::InvalidParams, "label_sample_count must be >= 1");
        require(convergence_tol >= 0.0, ErrorCode::InvalidParams, "convergence_tol must be >= 0");
        require(convergence_window >= 1, ErrorCode::InvalidParams, "convergence_window must be >= 1");
    }
};

struct IterationRecord {
    std::size_t level = 0;
    std::size_t factor = 1;
    std::size_t iteration = 0;
    LossBreakdown loss;
    double grad_norm = 0.0;
    double wall_ms = 0.0;
};

struct RegistrationResult {
    DisplacementField ddf;
    std::vector<IterationRecord> trace;
    std::vector<std::size_t> iterations_run;
    std::vector<bool> converged;
};

// ---------------------------------------------------------------------------
// Pyramid helpers

/// Pools every volume of a pair by `factor` (labels by majority vote).
inline RegistrationPair downsample_pair(const RegistrationPair& pair, std::size_t factor)
{
    RegistrationPair out;
    out.moving_pet = downsample_volume(pair.moving_pet, factor);
    out.fixed_pet = downsample_volume(pair.fixed_pet, factor);
    out.moving_ct = downsample_volume(pair.moving_ct, factor);
    out.fixed_ct = downsample_volume(pair.fixed_ct, factor);
    out.moving_seg = downsample_labels(pair.moving_seg, factor);
    out.fixed_seg = downsample_labels(pair.fixed_seg, factor);
    out.subject = pair.subject;
    out.moving_tracer = pair.moving_tracer;
    out.fixed_tracer = pair.fixed_tracer;
    return out;
}

/// Transfers a coarse field to a finer grid. Components are resized
/// trilinearly and rescaled by `factor` (coarse voxel size / fine voxel size).
inline DisplacementField upsample_ddf(const DisplacementField& ddf, const Grid& target_grid, double factor)
{
    require(std::isfinite(factor) && factor >= 1.0, ErrorCode::InvalidParams, "upsampling factor must be >= 1");
    const double tolerance = std::max(1.0, factor - 1.0);
    for (int a = 0; a < 3; ++a) {
        const double expected = static_cast<double>(ddf.dims()[a]) * factor;
        require(std::abs(static_cast<double>(target_grid.dims[a]) - expected) <= tolerance, ErrorCode::ShapeMismatch,
                "target grid " + dims_string(target_grid.dims) + " is not a x" + std::to_string(factor) +
                    " upsampling of " + dims_string(ddf.dims()));
    }
    auto resized = resize_trilinear(ddf, target_grid.dims);
    DisplacementField out(target_grid);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = factor * resized[i];
    return out;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
    DisplacementField m;
    DisplacementField v;

    AdamState() = default;
    explicit AdamState(const Grid& grid) : m(zero_field(grid)), v(zero_field(grid)) {}
};

/// One bias-corrected Adam step. Updates the moments in place and returns the
/// additive update for the field.
inline DisplacementField adam_step(AdamState& state, const DisplacementField& grad, std::size_t t,
                                   const RegistrationConfig& config)
{
    require(t >= 1, ErrorCode::InvalidParams, "Adam step index starts at 1");
    require_same_shape(state.m.grid(), grad.grid(), "Adam state vs gradient");
    require_same_shape(state.v.grid(), grad.grid(), "Adam state vs gradient");
    const double b1 = config.adam_beta1;
    const double b2 = config.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    DisplacementField update(grad.grid());
    for (std::size_t i = 0; i < grad.size(); ++i) {
        for (int a = 0; a < 3; ++a) {
            const double g = grad[i][a];
            double& m = state.m[i][a];
            double& v = state.v[i][a];
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            const double m_hat = m / c1;
            const double v_hat = v / c2;
            update[i][a] = -config.step_size * m_hat / (std::sqrt(v_hat) + config.adam_eps);
        }
    }
    return update;
}

// ---------------------------------------------------------------------------
// Driver

enum class WeightMode {
    /// CT-guided spatially varying weights.
    CtGuided,
    /// Single global weight mu_r.
    Uniform,
};

namespace detail {

    inline std::uint64_t splitmix64(std::uint64_t x)
    {
        x += 0x9E3779B97F4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

    inline std::uint64_t iteration_seed(std::uint64_t seed, std::size_t level, std::size_t iteration)
    {
        return splitmix64(seed ^ splitmix64((static_cast<std::uint64_t>(level) << 32) | iteration));
    }

    inline double field_norm(const DisplacementField& f)
    {
        double s = 0.0;
        for (const auto& v : f)
            s += dot(v, v);
        return std::sqrt(s);
    }

    inline bool smoothed_converged(const std::vector<IterationRecord>& trace, std::size_t first, std::size_t window,
                                   double tol)
    {
        const std::size_t n = trace.size() - first;
        if (n < 2 * window)
            return false;
        double previous = 0.0;
        double current = 0.0;
        for (std::size_t i = 0; i < window; ++i) {
            previous += trace[trace.size() - 2 * window + i].loss.total;
            current += trace[trace.size() - window + i].loss.total;
        }
        previous /= static_cast<double>(window);
        current /= static_cast<double>(window);
        return current <= previous && (previous - current) <= tol * std::max(std::abs(previous), 1e-300);
    }

    inline RegistrationResult run_pyramid(const RegistrationPair& pair, const RegistrationConfig& config,
                                          WeightMode mode)
    {
        config.validate();
        pair.validate();

        RegistrationResult result;
        DisplacementField ddf;
        std::size_t previous_factor = 0;

        for (std::size_t level = 0; level < config.pyramid_factors.size(); ++level) {
            const std::size_t factor = config.pyramid_factors[level];
            const std::string where = "level " + std::to_string(level) + " (factor " + std::to_string(factor) + ")";
            try {
                const RegistrationPair lp = factor == 1 ? pair : downsample_pair(pair, factor);
                const Grid& grid = lp.fixed_ct.grid();
                const WeightMap weights = mode == WeightMode::Uniform
                                              ? uniform_weight_map(grid, config.weight_params.mu_r)
                                              : build_weight_map(lp.moving_ct, config.weight_params);

                if (level == 0)
                    ddf = zero_field(grid);
                else
                    ddf = upsample_ddf(ddf, grid,
                                       static_cast<double>(previous_factor) / static_cast<double>(factor));

                const Vec3 reg_scale = reg_component_scale(grid, config.reg_units);
                const auto universe = label_universe(lp.fixed_seg, lp.moving_seg);
                require(!universe.empty(), ErrorCode::NotEnoughLabels, "no foreground labels");
                const std::size_t count = std::min(config.label_sample_count, universe.size());

                AdamState adam(grid);
                const std::size_t first = result.trace.size();
                bool converged = false;
                std::size_t it = 0;
                for (; it < config.iters_per_level[level]; ++it) {
                    const auto t0 = std::chrono::steady_clock::now();
                    const auto sample = sample_labels(universe, count, iteration_seed(config.seed, level, it));
                    auto eval = total_loss_and_grad(lp, ddf, weights, sample, reg_scale);
                    const auto update = adam_step(adam, eval.grad, it + 1, config);
                    for (std::size_t i = 0; i < ddf.size(); ++i)
                        ddf[i] += update[i];
                    const auto t1 = std::chrono::steady_clock::now();

                    IterationRecord rec;
                    rec.level = level;
                    rec.factor = factor;
                    rec.iteration = it;
                    rec.loss = eval.loss;
                    rec.grad_norm = field_norm(eval.grad);
                    rec.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
                    result.trace.push_back(rec);

                    if (smoothed_converged(result.trace, first, config.convergence_window, config.convergence_tol)) {
                        converged = true;
                        ++it;
                        break;
                    }
                }
                result.iterations_run.push_back(it);
                result.converged.push_back(converged);
            } catch (const Error& e) {
                throw Error(e.code(), where + ": " + e.message());
            }
            previous_factor = factor;
        }
        result.ddf = std::move(ddf);
        return result;
    }

} // namespace detail

/// Coarse-to-fine Adam optimisation of the total objective with CT-guided weights.
inline RegistrationResult register_pair(const RegistrationPair& pair, const RegistrationConfig& config)
{
    return detail::run_pyramid(pair, config, WeightMode::CtGuided);
}

/// Same pipeline with a uniform weight lambda = mu_r.
inline RegistrationResult baseline_register(const RegistrationPair& pair, const RegistrationConfig& config)
{
    return detail::run_pyramid(pair, config, WeightMode::Uniform);
}

inline RegistrationResult register_pair(const RegistrationPair& pair, const RegistrationConfig& config,
                                        WeightMode mode)
{
    return detail::run_pyramid(pair, config, mode);
}

} // namespace ctreg
