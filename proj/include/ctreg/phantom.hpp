#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ctreg/engine.hpp"
#include "ctreg/error.hpp"
#include "ctreg/preprocess.hpp"
#include "ctreg/sampling.hpp"
#include "ctreg/volume.hpp"

namespace ctreg {

/// Label ids used by the synthetic phantom.
namespace phantom_labels {
    inline constexpr Label kBody = 1;
    inline constexpr Label kBone = 2;
    inline constexpr Label kLungLeft = 3;
    inline constexpr Label kLungRight = 4;
    inline constexpr Label kFirstOrgan = 5;
} // namespace phantom_labels

struct PhantomSpec {
    Dims dims{64, 64, 96};
    Vec3 spacing{3.0, 3.0, 3.0};
    std::uint64_t seed = 0;
    std::size_t n_soft_organs = 6;
    double bone_hu = 1000.0;
    double soft_hu_min = 20.0;
    double soft_hu_max = 80.0;
    double lung_hu = -800.0;
    double air_hu = -1000.0;
    /// Per-label mean uptake for the moving (A) and fixed (B) tracer, indexed by
    /// label id. Left empty they are drawn from the seed.
    std::vector<double> uptake_a;
    std::vector<double> uptake_b;
    /// Gaussian noise sigma as a fraction of the normalised PET range.
    double noise_sigma = 0.02;
    /// Peak soft-tissue displacement, voxels.
    double max_soft_displacement = 3.0;
    /// Magnitude of the rigid bone translation, voxels.
    double bone_translation = 1.0;
    /// Scales the bone ellipsoid radii; > 1 gives a bulkier rigid block.
    double bone_scale = 1.0;
    /// Draw the same noise for both PET volumes.
    bool shared_noise = false;

    std::size_t label_count() const noexcept { return phantom_labels::kFirstOrgan + n_soft_organs; }

    void validate() const
    {
        Grid(dims, spacing).validate();
        const double min_dim = static_cast<double>(*std::min_element(dims.begin(), dims.end()));
        require(min_dim >= 16.0, ErrorCode::InvalidParams, "phantom dims must be at least 16 voxels per axis");
        require(max_soft_displacement >= 0.0 && bone_translation >= 0.0, ErrorCode::InvalidParams,
                "displacement magnitudes must be >= 0");
        require(std::max(max_soft_displacement, bone_translation) < min_dim / 8.0, ErrorCode::InvalidParams,
                "maximum displacement must be below min(dims)/8");
        require(soft_hu_min <= soft_hu_max, ErrorCode::InvalidParams, "soft_hu range is inverted");
        require(noise_sigma >= 0.0, ErrorCode::InvalidParams, "noise_sigma must be >= 0");
        require(bone_scale > 0.0 && bone_scale <= 2.0, ErrorCode::InvalidParams, "bone_scale must be in (0, 2]");
        require(label_count() <= kMaxClasses, ErrorCode::InvalidParams, "too many organs");
        for (const auto* table : {&uptake_a, &uptake_b})
            require(table->empty() || table->size() == label_count(), ErrorCode::InvalidParams,
                    "uptake tables must have one entry per label");
    }
};

/// Default phantom with a bulkier bone block and larger soft-tissue motion, so
/// that rigid and soft regions move distinctly.
inline PhantomSpec rigid_block_spec(std::uint64_t seed)
{
    PhantomSpec s;
    s.seed = seed;
    s.bone_scale = 1.6;
    s.max_soft_displacement = 5.0;
    return s;
}

struct PhantomPair {
    RegistrationPair pair;
    /// Maps fixed-grid voxels into the moving volume (same convention as the engine).
    DisplacementField gt_ddf;
    /// 1 inside the fixed body, 0 outside.
    LabelVolume body_mask;
    std::vector<double> ct_hu;
    std::vector<double> uptake_a;
    std::vector<double> uptake_b;
};

namespace detail {

    struct Ellipsoid {
        Vec3 center{};
        Vec3 radii{1.0, 1.0, 1.0};

        double implicit(const Vec3& p) const noexcept
        {
            double s = 0.0;
            for (int a = 0; a < 3; ++a) {
                const double t = (p[a] - center[a]) / radii[a];
                s += t * t;
            }
            return s;
        }
        bool contains(const Vec3& p) const noexcept { return implicit(p) <= 1.0; }
        double min_radius() const noexcept { return std::min({radii[0], radii[1], radii[2]}); }
        /// Signed distance estimate, positive outside. Never larger in magnitude
        /// than the true distance.
        double distance(const Vec3& p) const noexcept { return (std::sqrt(implicit(p)) - 1.0) * min_radius(); }
        /// Distance to the surface along the ray from the centre.
        double radial_distance(const Vec3& p) const noexcept
        {
            const double s = std::sqrt(implicit(p));
            const Vec3 r = p - center;
            return s > 0.0 ? norm(r) * (1.0 - 1.0 / s) : -min_radius();
        }
    };

    class PhantomRng {
    public:
        explicit PhantomRng(std::uint64_t seed) : rng_(splitmix64(seed)) {}
        double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
        double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
        Vec3 unit_vector()
        {
            const double z = uniform(-1.0, 1.0);
            const double phi = uniform(0.0, 2.0 * 3.14159265358979323846);
            const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
            return {r * std::cos(phi), r * std::sin(phi), z};
        }

    private:
        std::mt19937_64 rng_;
    };

    inline double smoothstep(double t)
    {
        t = std::clamp(t, 0.0, 1.0);
        return t * t * (3.0 - 2.0 * t);
    }

    /// Counter-based standard normal keyed on (seed, stream, voxel).
    inline double voxel_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t idx)
    {
        const std::uint64_t h1 = splitmix64(seed ^ splitmix64((stream << 48) ^ (2 * idx)));
        const std::uint64_t h2 = splitmix64(seed ^ splitmix64((stream << 48) ^ (2 * idx + 1)));
        const double u1 = (static_cast<double>(h1 >> 11) + 0.5) * 0x1.0p-53;
        const double u2 = static_cast<double>(h2 >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    struct Bump {
        Vec3 center;
        Vec3 direction;
        double sigma;
        double amplitude;
    };

    /// Analytic anatomy in moving-image voxel coordinates.
    struct PhantomAnatomy {
        Ellipsoid body;
        Ellipsoid bone;
        std::array<Ellipsoid, 2> lungs;
        std::vector<Ellipsoid> organs;

        Label label_at(const Vec3& p) const noexcept
        {
            if (!body.contains(p))
                return 0;
            if (bone.contains(p))
                return phantom_labels::kBone;
            for (std::size_t i = 0; i < 2; ++i)
                if (lungs[i].contains(p))
                    return static_cast<Label>(phantom_labels::kLungLeft + i);
            for (std::size_t i = 0; i < organs.size(); ++i)
                if (organs[i].contains(p))
                    return static_cast<Label>(phantom_labels::kFirstOrgan + i);
            return phantom_labels::kBody;
        }
    };

    inline Vec3 voxel_point(const Grid& g, std::size_t idx)
    {
        const auto x = g.coords(idx);
        return {static_cast<double>(x[0]), static_cast<double>(x[1]), static_cast<double>(x[2])};
    }

    inline PhantomAnatomy build_anatomy(const PhantomSpec& spec, PhantomRng& rng)
    {
        const Grid grid(spec.dims, spec.spacing);
        const Vec3 c{0.5 * static_cast<double>(spec.dims[0] - 1), 0.5 * static_cast<double>(spec.dims[1] - 1),
                     0.5 * static_cast<double>(spec.dims[2] - 1)};
        const Vec3 d{static_cast<double>(spec.dims[0]), static_cast<double>(spec.dims[1]),
                     static_cast<double>(spec.dims[2])};

        PhantomAnatomy an;
        an.body = {c, {0.42 * d[0], 0.34 * d[1], 0.46 * d[2]}};
        const Vec3& rb = an.body.radii;
        an.bone = {{c[0], c[1] + 0.3 * rb[1], c[2]},
                   {0.09 * d[0] * spec.bone_scale, 0.09 * d[1] * spec.bone_scale, 0.30 * d[2]}};
        for (int s = 0; s < 2; ++s) {
            const double side = s == 0 ? -1.0 : 1.0;
            an.lungs[static_cast<std::size_t>(s)] = {{c[0] + side * 0.5 * rb[0], c[1] - 0.1 * rb[1], c[2] + 0.45 * rb[2]},
                                                     {0.25 * rb[0], 0.5 * rb[1], 0.3 * rb[2]}};
        }

        // Organs: random ellipsoids inside the body, kept at least two voxels
        // away from every other structure.
        std::vector<Label> base(grid.size());
        for (std::size_t idx = 0; idx < grid.size(); ++idx)
            base[idx] = an.label_at(voxel_point(grid, idx));
        std::vector<Label> occupied = base;

        // A bad early draw can leave no room; start over with fresh draws.
        const double min_extent = std::min(d[0], d[1]);
        constexpr int kAttemptsPerRound = 2000;
        constexpr int kRounds = 20;
        int attempts = 0;
        while (an.organs.size() < spec.n_soft_organs) {
            require(++attempts <= kAttemptsPerRound * kRounds, ErrorCode::InvalidParams,
                    "could not place " + std::to_string(spec.n_soft_organs) + " non-overlapping organs");
            if (attempts % kAttemptsPerRound == 0) {
                an.organs.clear();
                occupied = base;
            }
            Ellipsoid cand;
            for (int a = 0; a < 3; ++a)
                cand.radii[a] = rng.uniform(0.08, 0.12) * min_extent;
            for (int a = 0; a < 3; ++a)
                cand.center[a] = rng.uniform(c[a] - rb[a], c[a] + rb[a]);
            if (an.body.implicit(cand.center) > 0.5)
                continue;
            Ellipsoid grown = cand;
            for (double& r : grown.radii)
                r += 2.0;
            bool clash = false;
            std::array<std::int64_t, 3> lo;
            std::array<std::int64_t, 3> hi;
            for (int a = 0; a < 3; ++a) {
                lo[a] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(grown.center[a] - grown.radii[a])));
                hi[a] = std::min<std::int64_t>(static_cast<std::int64_t>(spec.dims[a]) - 1,
                                               static_cast<std::int64_t>(std::ceil(grown.center[a] + grown.radii[a])));
            }
            for (auto k = lo[2]; k <= hi[2] && !clash; ++k)
                for (auto j = lo[1]; j <= hi[1] && !clash; ++j)
                    for (auto i = lo[0]; i <= hi[0] && !clash; ++i) {
                        const Vec3 p{static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)};
                        if (grown.contains(p)) {
                            const Label l = occupied[grid.index(static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                                                                static_cast<std::size_t>(k))];
                            clash = l != phantom_labels::kBody;
                        }
                    }
            if (clash)
                continue;
            const auto label = static_cast<Label>(phantom_labels::kFirstOrgan + an.organs.size());
            for (auto k = lo[2]; k <= hi[2]; ++k)
                for (auto j = lo[1]; j <= hi[1]; ++j)
                    for (auto i = lo[0]; i <= hi[0]; ++i)
                        if (cand.contains({static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)}))
                            occupied[grid.index(static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                                                static_cast<std::size_t>(k))] = label;
            an.organs.push_back(cand);
        }
        return an;
    }

    /// Smooth soft-tissue field, near-rigid inside the bone, zero outside the body.
    inline DisplacementField build_gt_field(const PhantomSpec& spec, const PhantomAnatomy& an, PhantomRng& rng)
    {
        const Grid grid(spec.dims, spec.spacing);
        DisplacementField field = zero_field(grid);
        if (spec.max_soft_displacement == 0.0 && spec.bone_translation == 0.0)
            return field;

        constexpr int kBumps = 4;
        std::vector<Bump> bumps;
        const Vec3& rb = an.body.radii;
        for (int b = 0; b < kBumps; ++b) {
            Bump bump;
            for (int a = 0; a < 3; ++a)
                bump.center[a] = an.body.center[a] + rng.uniform(-0.6, 0.6) * rb[a];
            bump.direction = rng.unit_vector();
            bump.sigma = rng.uniform(10.0, 16.0);
            bump.amplitude = rng.uniform(0.5, 1.0);
            bumps.push_back(bump);
        }
        const Vec3 bone_direction = rng.unit_vector();

        constexpr double kBodyTaper = 10.0;
        constexpr double kBoneMargin = 1.0;
        constexpr double kBoneTaper = 8.0;
        constexpr double kBoneResidual = 0.1;

        // Raw soft field attenuated towards the body surface.
        std::vector<double> body_att(grid.size());
        std::vector<double> bone_blend(grid.size());
        for (std::size_t idx = 0; idx < grid.size(); ++idx) {
            const Vec3 p = voxel_point(grid, idx);
            Vec3 u{0.0, 0.0, 0.0};
            for (const auto& b : bumps) {
                const Vec3 r = p - b.center;
                u += (b.amplitude * std::exp(-dot(r, r) / (2.0 * b.sigma * b.sigma))) * b.direction;
            }
            body_att[idx] = smoothstep(-an.body.radial_distance(p) / kBodyTaper);
            bone_blend[idx] = 1.0 - smoothstep((an.bone.distance(p) - kBoneMargin) / kBoneTaper);
            field[idx] = u;
        }

        double peak = 0.0;
        for (std::size_t idx = 0; idx < grid.size(); ++idx)
            peak = std::max(peak, body_att[idx] * norm(field[idx]));
        const double scale = peak > 0.0 ? spec.max_soft_displacement / peak : 0.0;

        // The bone translation follows the mean soft motion around the bone when
        // there is one, so the rigid/soft transition stays gentle.
        Vec3 mean_soft{0.0, 0.0, 0.0};
        for (std::size_t idx = 0; idx < grid.size(); ++idx)
            if (bone_blend[idx] >= 1.0)
                mean_soft += field[idx];
        const double mean_norm = norm(mean_soft);
        const Vec3 dir = mean_norm > 1e-12 ? (1.0 / mean_norm) * mean_soft : bone_direction;
        const Vec3 bone_shift = spec.bone_translation * dir;

        for (std::size_t idx = 0; idx < grid.size(); ++idx) {
            const Vec3 soft = scale * field[idx];
            const Vec3 rigid = bone_shift + kBoneResidual * soft;
            const double b = bone_blend[idx];
            field[idx] = body_att[idx] * ((1.0 - b) * soft + b * rigid);
        }
        return field;
    }

} // namespace detail

/// Renders a PET volume from a label map and a per-label uptake table, adds
/// counter-based Gaussian noise, clamps at zero and normalises to [0,1].
inline Volume render_pet(const LabelVolume& labels, const std::vector<double>& uptake, double noise_sigma,
                         std::uint64_t seed, std::uint64_t stream)
{
    Volume pet(labels.grid());
    for (std::size_t idx = 0; idx < labels.size(); ++idx) {
        const Label l = labels[idx];
        require(l < uptake.size(), ErrorCode::UnknownLabel, "no uptake value for label " + std::to_string(l));
        double v = uptake[l];
        if (noise_sigma > 0.0)
            v += noise_sigma * detail::voxel_normal(seed, stream, idx);
        pet[idx] = std::max(v, 0.0);
    }
    return normalize_unit(pet);
}

inline Volume render_ct(const LabelVolume& labels, const std::vector<double>& hu)
{
    Volume ct(labels.grid());
    for (std::size_t idx = 0; idx < labels.size(); ++idx)
        ct[idx] = hu[labels[idx]];
    return ct;
}

/// Synthetic cross-tracer phantom pair with a known ground-truth field.
///
/// The anatomy is analytic. The moving volumes sample it at voxel centres and
/// the fixed volumes sample it at x + gt(x), so warping the moving images
/// with gt reproduces the fixed ones up to interpolation and noise.
inline PhantomPair generate_phantom(const PhantomSpec& spec)
{
    spec.validate();
    const Grid grid(spec.dims, spec.spacing);
    detail::PhantomRng rng(spec.seed);
    const auto anatomy = detail::build_anatomy(spec, rng);
    const std::size_t n_labels = spec.label_count();

    PhantomPair out;
    out.ct_hu.assign(n_labels, 0.0);
    out.ct_hu[0] = spec.air_hu;
    out.ct_hu[phantom_labels::kBody] = rng.uniform(spec.soft_hu_min, spec.soft_hu_max);
    out.ct_hu[phantom_labels::kBone] = spec.bone_hu;
    out.ct_hu[phantom_labels::kLungLeft] = spec.lung_hu;
    out.ct_hu[phantom_labels::kLungRight] = spec.lung_hu;
    for (std::size_t l = phantom_labels::kFirstOrgan; l < n_labels; ++l)
        out.ct_hu[l] = rng.uniform(spec.soft_hu_min, spec.soft_hu_max);

    // Uptake tables: organs independent per tracer, with the extreme organs of
    // tracer A forced into the opposite order under tracer B.
    out.uptake_a = spec.uptake_a;
    out.uptake_b = spec.uptake_b;
    if (out.uptake_a.empty() || out.uptake_b.empty()) {
        std::vector<double> a(n_labels, 0.0);
        std::vector<double> b(n_labels, 0.0);
        a[phantom_labels::kBody] = rng.uniform(0.10, 0.20);
        b[phantom_labels::kBody] = rng.uniform(0.15, 0.30);
        a[phantom_labels::kBone] = rng.uniform(0.25, 0.40);
        b[phantom_labels::kBone] = rng.uniform(0.05, 0.12);
        a[phantom_labels::kLungLeft] = a[phantom_labels::kLungRight] = 0.05;
        b[phantom_labels::kLungLeft] = b[phantom_labels::kLungRight] = 0.03;
        for (std::size_t l = phantom_labels::kFirstOrgan; l < n_labels; ++l) {
            a[l] = rng.uniform(0.3, 1.0);
            b[l] = rng.uniform(0.3, 1.0);
        }
        if (spec.n_soft_organs >= 2) {
            const auto first = a.begin() + phantom_labels::kFirstOrgan;
            const auto hi = static_cast<std::size_t>(std::max_element(first, a.end()) - a.begin());
            const auto lo = static_cast<std::size_t>(std::min_element(first, a.end()) - a.begin());
            if (b[hi] > b[lo])
                std::swap(b[hi], b[lo]);
        }
        if (out.uptake_a.empty())
            out.uptake_a = a;
        if (out.uptake_b.empty())
            out.uptake_b = b;
    }

    out.gt_ddf = detail::build_gt_field(spec, anatomy, rng);

    LabelVolume moving_seg(grid);
    LabelVolume fixed_seg(grid);
    for (std::size_t idx = 0; idx < grid.size(); ++idx) {
        const Vec3 p = detail::voxel_point(grid, idx);
        moving_seg[idx] = anatomy.label_at(p);
        fixed_seg[idx] = anatomy.label_at(p + out.gt_ddf[idx]);
    }

    const std::uint64_t moving_stream = 1;
    const std::uint64_t fixed_stream = spec.shared_noise ? moving_stream : 2;
    RegistrationPair& pair = out.pair;
    pair.moving_ct = render_ct(moving_seg, out.ct_hu);
    pair.fixed_ct = render_ct(fixed_seg, out.ct_hu);
    pair.moving_pet = render_pet(moving_seg, out.uptake_a, spec.noise_sigma, spec.seed, moving_stream);
    pair.fixed_pet = render_pet(fixed_seg, out.uptake_b, spec.noise_sigma, spec.seed, fixed_stream);
    pair.moving_seg = std::move(moving_seg);
    pair.fixed_seg = std::move(fixed_seg);
    pair.subject = "phantom-" + std::to_string(spec.seed);
    pair.moving_tracer = "A";
    pair.fixed_tracer = "B";

    out.body_mask = LabelVolume(grid);
    for (std::size_t idx = 0; idx < grid.size(); ++idx)
        out.body_mask[idx] = pair.fixed_seg[idx] != 0 ? 1 : 0;
    return out;
}

/// A phantom pair whose moving volumes are exact copies of the fixed ones.
inline PhantomPair identical_pair(const PhantomPair& src)
{
    PhantomPair out = src;
    out.pair.moving_pet = src.pair.fixed_pet;
    out.pair.moving_ct = src.pair.fixed_ct;
    out.pair.moving_seg = src.pair.fixed_seg;
    out.gt_ddf = zero_field(src.gt_ddf.grid());
    return out;
}

struct EndpointError {
    double mean_voxels = 0.0;
    double mean_mm = 0.0;
    double max_voxels = 0.0;
    std::size_t voxels = 0;
};

/// Mean ||est - gt|| over the non-zero voxels of `mask`.
inline EndpointError endpoint_error(const DisplacementField& est, const DisplacementField& gt, const LabelVolume& mask)
{
    require_same_shape(est.grid(), gt.grid(), "estimated vs ground-truth field");
    require_same_shape(est.grid(), mask.grid(), "field vs mask");
    const Vec3& sp = gt.grid().spacing;
    EndpointError e;
    double sum_vox = 0.0;
    double sum_mm = 0.0;
    for (std::size_t idx = 0; idx < est.size(); ++idx) {
        if (mask[idx] == 0)
            continue;
        const Vec3 d = est[idx] - gt[idx];
        const double v = norm(d);
        sum_vox += v;
        sum_mm += norm({d[0] * sp[0], d[1] * sp[1], d[2] * sp[2]});
        e.max_voxels = std::max(e.max_voxels, v);
        ++e.voxels;
    }
    require(e.voxels > 0, ErrorCode::EmptyMask, "endpoint error mask is empty");
    e.mean_voxels = sum_vox / static_cast<double>(e.voxels);
    e.mean_mm = sum_mm / static_cast<double>(e.voxels);
    return e;
}

} // namespace ctreg
