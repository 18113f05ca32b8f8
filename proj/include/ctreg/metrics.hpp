#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ctreg/error.hpp"
#include "ctreg/sampling.hpp"
#include "ctreg/volume.hpp"

namespace ctreg {

/// Histogram mutual information in nats with `bins` equal-width bins on [0,1].
inline double mutual_information(const Volume& a, const Volume& b, std::size_t bins = 32)
{
    require_same_shape(a.grid(), b.grid(), "mutual information inputs");
    require(bins >= 2, ErrorCode::InvalidParams, "mutual information needs at least 2 bins");
    const auto bin_of = [bins](double v) {
        require(v >= 0.0 && v <= 1.0, ErrorCode::OutOfRange, "mutual information expects values in [0,1]");
        return std::min(static_cast<std::size_t>(v * static_cast<double>(bins)), bins - 1);
    };

    std::vector<double> joint(bins * bins, 0.0);
    std::vector<double> ma(bins, 0.0);
    std::vector<double> mb(bins, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto ia = bin_of(a[i]);
        const auto ib = bin_of(b[i]);
        joint[ia * bins + ib] += 1.0;
        ma[ia] += 1.0;
        mb[ib] += 1.0;
    }
    const double n = static_cast<double>(a.size());
    const auto term = [&](std::size_t i, std::size_t j) {
        const double c = joint[i * bins + j];
        if (c == 0.0)
            return 0.0;
        return (c / n) * std::log(c * n / (ma[i] * mb[j]));
    };

    // Terms (i,j) and (j,i) are summed together so that swapping the inputs
    // (which transposes the joint histogram) gives a bitwise identical result.
    double mi = 0.0;
    for (std::size_t i = 0; i < bins; ++i) {
        mi += term(i, i);
        for (std::size_t j = i + 1; j < bins; ++j) {
            const double x = term(i, j);
            const double y = [&] {
                const double c = joint[j * bins + i];
                if (c == 0.0)
                    return 0.0;
                return (c / n) * std::log(c * n / (mb[i] * ma[j]));
            }();
            mi += x + y;
        }
    }
    return std::max(mi, 0.0);
}

/// 2|A and B| / (|A| + |B|) on the masks of `label`; 1 if both are empty.
inline double hard_dice(const LabelVolume& fixed_seg, const LabelVolume& warped_seg, Label label)
{
    require_same_shape(fixed_seg.grid(), warped_seg.grid(), "hard dice inputs");
    std::size_t na = 0;
    std::size_t nb = 0;
    std::size_t both = 0;
    for (std::size_t i = 0; i < fixed_seg.size(); ++i) {
        const bool a = fixed_seg[i] == label;
        const bool b = warped_seg[i] == label;
        na += a;
        nb += b;
        both += a && b;
    }
    if (na + nb == 0)
        return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

/// Mean voxel index of a label's mask.
inline Vec3 label_centroid(const LabelVolume& seg, Label label)
{
    Vec3 sum{0.0, 0.0, 0.0};
    std::size_t n = 0;
    for (std::size_t i = 0; i < seg.size(); ++i) {
        if (seg[i] != label)
            continue;
        const auto x = seg.grid().coords(i);
        sum += Vec3{static_cast<double>(x[0]), static_cast<double>(x[1]), static_cast<double>(x[2])};
        ++n;
    }
    require(n > 0, ErrorCode::EmptyLabel, "label " + std::to_string(label) + " is empty");
    return (1.0 / static_cast<double>(n)) * sum;
}

/// Physical distance (mm) between the label centroids of the two masks.
inline double tre(const LabelVolume& fixed_seg, const LabelVolume& warped_seg, Label label, const Vec3& spacing)
{
    require_same_shape(fixed_seg.grid(), warped_seg.grid(), "TRE inputs");
    const Vec3 d = label_centroid(warped_seg, label) - label_centroid(fixed_seg, label);
    return norm({d[0] * spacing[0], d[1] * spacing[1], d[2] * spacing[2]});
}

struct MetricsReport {
    double mi = 0.0;
    std::map<Label, double> dice_per_label;
    double dice_mean = 0.0;
    std::map<Label, double> tre_per_label;
    double tre_mean = 0.0;
    std::vector<Label> labels_evaluated;
    /// Labels present in the fixed mask but dropped from the means, with the reason.
    std::vector<std::pair<Label, std::string>> excluded;
};

/// Evaluates a displacement field on a pair: MI between fixed and warped PET,
/// and per-label hard Dice / TRE after nearest-neighbour label warping.
inline MetricsReport evaluate(const RegistrationPair& pair, const DisplacementField& ddf, std::size_t mi_bins = 32)
{
    pair.validate();
    require_same_shape(pair.fixed_pet.grid(), ddf.grid(), "displacement field vs fixed grid");
    MetricsReport report;
    report.mi = mutual_information(pair.fixed_pet, warp_scalar(pair.moving_pet, ddf), mi_bins);

    const LabelVolume warped = warp_labels_nearest(pair.moving_seg, ddf);
    std::array<bool, kMaxClasses> present{};
    for (Label l : pair.fixed_seg)
        present[l] = true;

    const Vec3& spacing = pair.fixed_seg.grid().spacing;
    double dice_sum = 0.0;
    double tre_sum = 0.0;
    for (std::size_t l = 1; l < kMaxClasses; ++l) {
        if (!present[l])
            continue;
        const auto label = static_cast<Label>(l);
        report.dice_per_label[label] = hard_dice(pair.fixed_seg, warped, label);
        try {
            report.tre_per_label[label] = tre(pair.fixed_seg, warped, label, spacing);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::EmptyLabel)
                throw;
            report.excluded.emplace_back(label, "empty after warping");
            continue;
        }
        report.labels_evaluated.push_back(label);
        dice_sum += report.dice_per_label[label];
        tre_sum += report.tre_per_label[label];
    }
    if (!report.labels_evaluated.empty()) {
        const double n = static_cast<double>(report.labels_evaluated.size());
        report.dice_mean = dice_sum / n;
        report.tre_mean = tre_sum / n;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Paired t-test

namespace detail {

    // Continued fraction for the incomplete beta function (modified Lentz).
    inline double beta_continued_fraction(double a, double b, double x)
    {
        constexpr int kMaxIter = 10000;
        constexpr double kEps = 1e-16;
        constexpr double kTiny = 1e-300;
        const double qab = a + b;
        const double qap = a + 1.0;
        const double qam = a - 1.0;
        double c = 1.0;
        double d = 1.0 - qab * x / qap;
        if (std::abs(d) < kTiny)
            d = kTiny;
        d = 1.0 / d;
        double h = d;
        for (int m = 1; m <= kMaxIter; ++m) {
            const double m2 = 2.0 * m;
            double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
            d = 1.0 + aa * d;
            if (std::abs(d) < kTiny)
                d = kTiny;
            c = 1.0 + aa / c;
            if (std::abs(c) < kTiny)
                c = kTiny;
            d = 1.0 / d;
            h *= d * c;
            aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
            d = 1.0 + aa * d;
            if (std::abs(d) < kTiny)
                d = kTiny;
            c = 1.0 + aa / c;
            if (std::abs(c) < kTiny)
                c = kTiny;
            d = 1.0 / d;
            const double del = d * c;
            h *= del;
            if (std::abs(del - 1.0) < kEps)
                break;
        }
        return h;
    }

} // namespace detail

/// Regularised incomplete beta function I_x(a, b).
inline double regularized_incomplete_beta(double a, double b, double x)
{
    require(a > 0.0 && b > 0.0, ErrorCode::InvalidParams, "incomplete beta needs a, b > 0");
    require(x >= 0.0 && x <= 1.0, ErrorCode::OutOfRange, "incomplete beta needs x in [0,1]");
    if (x == 0.0 || x == 1.0)
        return x;
    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * detail::beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Two-sided tail probability of Student's t with `dof` degrees of freedom.
inline double student_t_two_sided_p(double t, double dof)
{
    require(dof > 0.0, ErrorCode::InvalidParams, "degrees of freedom must be > 0");
    if (!std::isfinite(t))
        return 0.0;
    return regularized_incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
}

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    std::size_t dof = 0;
};

/// Paired t-test on x - y.
inline TTestResult paired_t_test(const std::vector<double>& x, const std::vector<double>& y)
{
    require(x.size() == y.size(), ErrorCode::ShapeMismatch, "paired samples must have equal length");
    require(x.size() >= 2, ErrorCode::InvalidParams, "paired t-test needs at least 2 pairs");
    const std::size_t n = x.size();
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i)
        d[i] = x[i] - y[i];
    const bool all_equal = std::all_of(d.begin(), d.end(), [&](double v) { return v == d.front(); });
    require(!all_equal, ErrorCode::DegenerateSample, "all paired differences are identical");

    double mean = 0.0;
    for (double v : d)
        mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : d)
        ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    TTestResult r;
    r.dof = n - 1;
    r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    r.p = student_t_two_sided_p(r.t, static_cast<double>(r.dof));
    return r;
}

} // namespace ctreg
