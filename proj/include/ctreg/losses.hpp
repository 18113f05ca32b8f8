#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ctreg/error.hpp"
#include "ctreg/sampling.hpp"
#include "ctreg/volume.hpp"
#include "ctreg/weight_map.hpp"

namespace ctreg {

inline constexpr double kDiceEps = 1e-6;

/// The three objective terms and their sum.
struct LossBreakdown {
    double sim = 0.0;
    double seg = 0.0;
    double reg = 0.0;
    double total = 0.0;

    static LossBreakdown of(double sim, double seg, double reg) { return {sim, seg, reg, sim + seg + reg}; }
};

/// Classes drawn for one evaluation of the segmentation term.
struct LabelSample {
    std::vector<Label> class_ids;
    std::uint64_t seed = 0;
    std::size_t count = 0;
};

// ---------------------------------------------------------------------------
// Soft Dice

struct DiceSums {
    double ab = 0.0;
    double aa = 0.0;
    double bb = 0.0;

    double numerator() const noexcept { return 2.0 * ab + kDiceEps; }
    double denominator() const noexcept { return aa + bb + kDiceEps; }
    double dice() const noexcept { return numerator() / denominator(); }
    /// d(dice)/d(b_i) for a voxel with values a_i, b_i.
    double dice_grad(double a, double b) const noexcept
    {
        const double den = denominator();
        return (2.0 * a * den - numerator() * 2.0 * b) / (den * den);
    }
};

inline DiceSums dice_sums(const Volume& a, const Volume& b)
{
    require_same_shape(a.grid(), b.grid(), "soft dice inputs");
    DiceSums s;
    for (std::size_t i = 0; i < a.size(); ++i) {
        require(a[i] >= 0.0 && b[i] >= 0.0, ErrorCode::OutOfRange, "soft dice requires non-negative values");
        s.ab += a[i] * b[i];
        s.aa += a[i] * a[i];
        s.bb += b[i] * b[i];
    }
    return s;
}

/// (2 sum(ab) + eps) / (sum(a^2) + sum(b^2) + eps).
inline double soft_dice(const Volume& a, const Volume& b)
{
    return dice_sums(a, b).dice();
}

/// Negative soft Dice between the fixed CT and the warped moving CT.
inline double sim_loss(const Volume& fixed_ct, const Volume& moving_ct, const DisplacementField& ddf)
{
    return -soft_dice(fixed_ct, warp_scalar(moving_ct, ddf));
}

inline DisplacementField sim_loss_grad(const Volume& fixed_ct, const Volume& moving_ct, const DisplacementField& ddf,
                                       double* value = nullptr)
{
    const Volume warped = warp_scalar(moving_ct, ddf);
    const DiceSums sums = dice_sums(fixed_ct, warped);
    if (value)
        *value = -sums.dice();
    Volume upstream(ddf.grid());
    for (std::size_t i = 0; i < upstream.size(); ++i)
        upstream[i] = -sums.dice_grad(fixed_ct[i], warped[i]);
    return warp_scalar_adjoint(moving_ct, ddf, upstream);
}

// ---------------------------------------------------------------------------
// Label sampling

/// Non-background labels present in either segmentation, ascending.
inline std::vector<Label> label_universe(const LabelVolume& a, const LabelVolume& b)
{
    std::array<bool, kMaxClasses> seen{};
    for (const auto* seg : {&a, &b})
        for (Label l : *seg) {
            require(l < kMaxClasses, ErrorCode::UnknownLabel, "label out of range");
            seen[l] = true;
        }
    std::vector<Label> out;
    for (std::size_t l = 1; l < kMaxClasses; ++l)
        if (seen[l])
            out.push_back(static_cast<Label>(l));
    return out;
}

namespace detail {

    // Unbiased integer in [0, n) by rejection; mt19937_64 output is fully
    // specified by the standard, unlike the std distributions.
    inline std::uint64_t bounded_draw(std::mt19937_64& rng, std::uint64_t n)
    {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t r;
        do {
            r = rng();
        } while (r >= limit);
        return r % n;
    }

} // namespace detail

/// Uniform sample without replacement, deterministic in the seed, sorted.
inline LabelSample sample_labels(const std::vector<Label>& universe, std::size_t count, std::uint64_t seed)
{
    std::vector<Label> pool = universe;
    std::sort(pool.begin(), pool.end());
    pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
    require(count <= pool.size(), ErrorCode::NotEnoughLabels,
            "requested " + std::to_string(count) + " labels from a universe of " + std::to_string(pool.size()));
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        const auto j = i + static_cast<std::size_t>(detail::bounded_draw(rng, pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
    std::sort(pool.begin(), pool.end());
    return LabelSample{std::move(pool), seed, count};
}

// ---------------------------------------------------------------------------
// Segmentation term

namespace detail {

    struct SlotTable {
        std::array<int, kMaxClasses> slot;
        explicit SlotTable(const LabelSample& sample)
        {
            slot.fill(-1);
            int s = 0;
            for (Label l : sample.class_ids) {
                require(l < kMaxClasses, ErrorCode::UnknownLabel, "sampled label out of range");
                require(slot[l] < 0, ErrorCode::InvalidParams, "sampled labels must be distinct");
                slot[l] = s++;
            }
        }
        int operator()(Label l) const noexcept { return l < kMaxClasses ? slot[l] : -1; }
    };

    // Warped indicator values of the sampled classes touched by one voxel's stencil.
    struct LocalClasses {
        std::array<int, 8> slot{};
        std::array<double, 8> value{};
        std::array<Vec3, 8> grad{};
        int n = 0;
    };

    inline LocalClasses warped_classes_at(const LabelVolume& moving_seg, const SlotTable& slots, const Grid& fixed,
                                          std::size_t idx, const Vec3& disp)
    {
        LocalClasses lc;
        const auto st = trilinear_stencil(moving_seg.grid(), sample_point(fixed, idx, disp));
        for (int c = 0; c < 8; ++c) {
            if (st.index[c] < 0)
                continue;
            const int s = slots(moving_seg[static_cast<std::size_t>(st.index[c])]);
            if (s < 0)
                continue;
            int k = 0;
            while (k < lc.n && lc.slot[k] != s)
                ++k;
            if (k == lc.n) {
                lc.slot[k] = s;
                lc.value[k] = 0.0;
                lc.grad[k] = {0.0, 0.0, 0.0};
                ++lc.n;
            }
            lc.value[k] += st.weight[c];
            lc.grad[k] += st.dweight[c];
        }
        return lc;
    }

    inline std::vector<DiceSums> seg_dice_sums(const LabelVolume& fixed_seg, const LabelVolume& moving_seg,
                                               const DisplacementField& ddf, const SlotTable& slots,
                                               std::size_t n_classes)
    {
        std::vector<DiceSums> sums(n_classes);
        for (std::size_t idx = 0; idx < ddf.size(); ++idx) {
            const int fixed_slot = slots(fixed_seg[idx]);
            if (fixed_slot >= 0)
                sums[static_cast<std::size_t>(fixed_slot)].aa += 1.0;
            const auto lc = warped_classes_at(moving_seg, slots, ddf.grid(), idx, ddf[idx]);
            for (int k = 0; k < lc.n; ++k) {
                auto& s = sums[static_cast<std::size_t>(lc.slot[k])];
                s.bb += lc.value[k] * lc.value[k];
                if (lc.slot[k] == fixed_slot)
                    s.ab += lc.value[k];
            }
        }
        return sums;
    }

    inline void check_seg_inputs(const LabelVolume& fixed_seg, const LabelVolume& moving_seg,
                                 const DisplacementField& ddf, const LabelSample& sample)
    {
        require(!sample.class_ids.empty(), ErrorCode::InvalidParams, "label sample is empty");
        require_same_shape(fixed_seg.grid(), ddf.grid(), "fixed segmentation vs displacement field");
        (void)moving_seg;
    }

} // namespace detail

/// Negated mean soft Dice over the sampled classes between the fixed masks and
/// the trilinearly warped moving masks.
inline double seg_loss(const LabelVolume& fixed_seg, const LabelVolume& moving_seg, const DisplacementField& ddf,
                       const LabelSample& sample)
{
    detail::check_seg_inputs(fixed_seg, moving_seg, ddf, sample);
    const detail::SlotTable slots(sample);
    const auto sums = detail::seg_dice_sums(fixed_seg, moving_seg, ddf, slots, sample.class_ids.size());
    double acc = 0.0;
    for (const auto& s : sums)
        acc += s.dice();
    return -acc / static_cast<double>(sums.size());
}

inline DisplacementField seg_loss_grad(const LabelVolume& fixed_seg, const LabelVolume& moving_seg,
                                       const DisplacementField& ddf, const LabelSample& sample, double* value = nullptr)
{
    detail::check_seg_inputs(fixed_seg, moving_seg, ddf, sample);
    const detail::SlotTable slots(sample);
    const auto sums = detail::seg_dice_sums(fixed_seg, moving_seg, ddf, slots, sample.class_ids.size());
    const double scale = -1.0 / static_cast<double>(sums.size());
    if (value) {
        double acc = 0.0;
        for (const auto& s : sums)
            acc += s.dice();
        *value = scale * acc;
    }
    DisplacementField grad(ddf.grid(), Vec3{0.0, 0.0, 0.0});
    for (std::size_t idx = 0; idx < ddf.size(); ++idx) {
        const int fixed_slot = slots(fixed_seg[idx]);
        const auto lc = detail::warped_classes_at(moving_seg, slots, ddf.grid(), idx, ddf[idx]);
        Vec3 g{0.0, 0.0, 0.0};
        for (int k = 0; k < lc.n; ++k) {
            const double a = lc.slot[k] == fixed_slot ? 1.0 : 0.0;
            const double dd = sums[static_cast<std::size_t>(lc.slot[k])].dice_grad(a, lc.value[k]);
            g += (scale * dd) * lc.grad[k];
        }
        grad[idx] = g;
    }
    return grad;
}

// ---------------------------------------------------------------------------
// Regulariser

/// Mean over voxels of w(x) * ||grad mu(x)||_F^2 with forward differences.
///
/// `component_scale` multiplies displacement component i before
/// differencing; {1,1,1} keeps voxel units.
inline double reg_loss(const DisplacementField& ddf, const WeightMap& w, const Vec3& component_scale = {1.0, 1.0, 1.0})
{
    require_same_shape(ddf.grid(), w.grid(), "weight map vs displacement field");
    const auto grad = spatial_gradient(ddf);
    const Vec3 s2{component_scale[0] * component_scale[0], component_scale[1] * component_scale[1],
                  component_scale[2] * component_scale[2]};
    double acc = 0.0;
    for (std::size_t idx = 0; idx < ddf.size(); ++idx) {
        const Mat3& m = grad[idx];
        double e = 0.0;
        for (int i = 0; i < 3; ++i)
            e += s2[i] * (m[i][0] * m[i][0] + m[i][1] * m[i][1] + m[i][2] * m[i][2]);
        acc += w[idx] * e;
    }
    return acc / static_cast<double>(ddf.size());
}

/// Exact gradient of reg_loss under the forward-difference discretisation.
inline DisplacementField reg_loss_grad(const DisplacementField& ddf, const WeightMap& w,
                                       const Vec3& component_scale = {1.0, 1.0, 1.0})
{
    require_same_shape(ddf.grid(), w.grid(), "weight map vs displacement field");
    const Grid& g = ddf.grid();
    const std::array<std::size_t, 3> stride{1, g.dims[0], g.dims[0] * g.dims[1]};
    const double scale = 2.0 / static_cast<double>(ddf.size());
    const Vec3 s2{component_scale[0] * component_scale[0], component_scale[1] * component_scale[1],
                  component_scale[2] * component_scale[2]};
    DisplacementField grad(g, Vec3{0.0, 0.0, 0.0});
    for (std::size_t idx = 0; idx < ddf.size(); ++idx) {
        const auto x = g.coords(idx);
        const double wx = scale * w[idx];
        for (int j = 0; j < 3; ++j) {
            if (x[j] + 1 >= static_cast<std::int64_t>(g.dims[j]))
                continue;
            const std::size_t next = idx + stride[j];
            const Vec3 d = ddf[next] - ddf[idx];
            const Vec3 f{wx * s2[0] * d[0], wx * s2[1] * d[1], wx * s2[2] * d[2]};
            grad[next] += f;
            grad[idx] += (-1.0) * f;
        }
    }
    return grad;
}

// ---------------------------------------------------------------------------
// Total objective

inline LossBreakdown total_loss(const RegistrationPair& pair, const DisplacementField& ddf, const WeightMap& w,
                                const LabelSample& sample, const Vec3& reg_scale = {1.0, 1.0, 1.0})
{
    const double sim = sim_loss(pair.fixed_ct, pair.moving_ct, ddf);
    const double seg = seg_loss(pair.fixed_seg, pair.moving_seg, ddf, sample);
    const double reg = reg_loss(ddf, w, reg_scale);
    return LossBreakdown::of(sim, seg, reg);
}

struct LossAndGradient {
    LossBreakdown loss;
    DisplacementField grad;
};

/// Loss and its analytic gradient in one sweep; the engine's workhorse.
inline LossAndGradient total_loss_and_grad(const RegistrationPair& pair, const DisplacementField& ddf,
                                           const WeightMap& w, const LabelSample& sample,
                                           const Vec3& reg_scale = {1.0, 1.0, 1.0})
{
    double sim = 0.0;
    double seg = 0.0;
    auto grad = sim_loss_grad(pair.fixed_ct, pair.moving_ct, ddf, &sim);
    const auto seg_grad = seg_loss_grad(pair.fixed_seg, pair.moving_seg, ddf, sample, &seg);
    const auto reg_grad = reg_loss_grad(ddf, w, reg_scale);
    const double reg = reg_loss(ddf, w, reg_scale);
    for (std::size_t i = 0; i < grad.size(); ++i) {
        grad[i] += seg_grad[i];
        grad[i] += reg_grad[i];
    }
    return {LossBreakdown::of(sim, seg, reg), std::move(grad)};
}

inline DisplacementField total_loss_grad(const RegistrationPair& pair, const DisplacementField& ddf,
                                         const WeightMap& w, const LabelSample& sample,
                                         const Vec3& reg_scale = {1.0, 1.0, 1.0})
{
    return total_loss_and_grad(pair, ddf, w, sample, reg_scale).grad;
}

} // namespace ctreg
