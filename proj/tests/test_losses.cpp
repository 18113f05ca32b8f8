#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "ctreg/losses.hpp"
#include "ctreg/weight_map.hpp"
#include "test_util.hpp"

using namespace ctreg;
using ctreg::testing::random_field;
using ctreg::testing::random_volume;

namespace {

Volume line_volume(std::initializer_list<double> values)
{
    Volume v(Grid({values.size(), 1, 1}));
    std::size_t i = 0;
    for (double x : values)
        v[i++] = x;
    return v;
}

LabelVolume random_labels(const Grid& g, std::uint64_t seed, int max_label)
{
    LabelVolume s(g);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> u(0, max_label);
    for (auto& l : s)
        l = static_cast<Label>(u(rng));
    return s;
}

RegistrationPair random_pair(const Grid& g, std::uint64_t seed)
{
    RegistrationPair p;
    p.moving_pet = random_volume(g.dims, seed + 1);
    p.fixed_pet = random_volume(g.dims, seed + 2);
    p.moving_ct = random_volume(g.dims, seed + 3);
    p.fixed_ct = random_volume(g.dims, seed + 4);
    p.moving_seg = random_labels(g, seed + 5, 4);
    p.fixed_seg = random_labels(g, seed + 6, 4);
    return p;
}

/// Box phantom with support strictly inside the grid.
RegistrationPair box_pair(std::size_t shift)
{
    const Grid g({12, 10, 10});
    RegistrationPair p;
    p.moving_ct = Volume(g, 0.0);
    p.moving_seg = LabelVolume(g, Label{0});
    for (std::size_t k = 3; k < 7; ++k)
        for (std::size_t j = 3; j < 7; ++j)
            for (std::size_t i = 3; i < 9; ++i) {
                p.moving_ct(i, j, k) = i < 6 ? 0.4 : 0.9;
                p.moving_seg(i, j, k) = i < 6 ? 1 : 2;
            }
    p.fixed_ct = Volume(g, 0.0);
    p.fixed_seg = LabelVolume(g, Label{0});
    for (std::size_t k = 0; k < 10; ++k)
        for (std::size_t j = 0; j < 10; ++j)
            for (std::size_t i = 0; i + shift < 12; ++i) {
                p.fixed_ct(i, j, k) = p.moving_ct(i + shift, j, k);
                p.fixed_seg(i, j, k) = p.moving_seg(i + shift, j, k);
            }
    p.moving_pet = p.moving_ct;
    p.fixed_pet = p.fixed_ct;
    return p;
}

double max_rel_error(const DisplacementField& analytic, const DisplacementField& fd)
{
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i)
        for (int c = 0; c < 3; ++c) {
            num += (analytic[i][c] - fd[i][c]) * (analytic[i][c] - fd[i][c]);
            den += fd[i][c] * fd[i][c];
        }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

template <typename F>
DisplacementField finite_difference(const DisplacementField& ddf, F f, double h)
{
    DisplacementField out(ddf.grid());
    for (std::size_t i = 0; i < ddf.size(); ++i)
        for (int c = 0; c < 3; ++c) {
            auto p = ddf;
            auto m = ddf;
            p[i][c] += h;
            m[i][c] -= h;
            out[i][c] = (f(p) - f(m)) / (2 * h);
        }
    return out;
}

} // namespace

TEST(SoftDice, Examples)
{
    const Volume a = random_volume({3, 3, 3}, 1);
    EXPECT_NEAR(soft_dice(a, a), 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(soft_dice(line_volume({1, 0}), line_volume({0, 1})), kDiceEps / (2.0 + kDiceEps));
    EXPECT_DOUBLE_EQ(soft_dice(line_volume({1, 1, 0, 0}), line_volume({1, 0, 1, 0})), (2.0 + kDiceEps) / (4.0 + kDiceEps));
}

TEST(SoftDice, SymmetryAndRange)
{
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Volume a = random_volume({4, 3, 2}, s, 0.0, 3.0);
        const Volume b = random_volume({4, 3, 2}, s + 100, 0.0, 0.5);
        EXPECT_EQ(soft_dice(a, b), soft_dice(b, a));
        EXPECT_GE(soft_dice(a, b), 0.0);
        EXPECT_LE(soft_dice(a, b), 1.0);
    }
    const Volume z(Grid({2, 2, 2}), 0.0);
    EXPECT_DOUBLE_EQ(soft_dice(z, z), 1.0);
}

TEST(SoftDice, Errors)
{
    try {
        soft_dice(line_volume({1, -1}), line_volume({1, 1}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::OutOfRange);
    }
    try {
        soft_dice(line_volume({1, 1}), line_volume({1, 1, 1}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    }
}

TEST(SimLoss, Examples)
{
    const auto p = box_pair(1);
    EXPECT_NEAR(sim_loss(p.moving_ct, p.moving_ct, zero_field(p.moving_ct.grid())), -1.0, 1e-6);
    const Volume zeros(p.moving_ct.grid(), 0.0);
    EXPECT_NEAR(sim_loss(zeros, p.moving_ct, random_field(zeros.grid(), 3, 0.5)), 0.0, 1e-6);
    const DisplacementField inverse(p.moving_ct.grid(), Vec3{1.0, 0.0, 0.0});
    EXPECT_NEAR(sim_loss(p.fixed_ct, p.moving_ct, inverse), -1.0, 1e-6);
    EXPECT_GT(sim_loss(p.fixed_ct, p.moving_ct, zero_field(p.moving_ct.grid())), -0.9);
}

TEST(SampleLabels, Examples)
{
    const std::vector<Label> universe{2, 5, 7, 9};
    EXPECT_EQ(sample_labels(universe, 4, 11).class_ids, universe);
    EXPECT_EQ(sample_labels(universe, 2, 11).class_ids, sample_labels(universe, 2, 11).class_ids);
    try {
        sample_labels(universe, 5, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotEnoughLabels);
    }

    std::vector<Label> big(127);
    std::iota(big.begin(), big.end(), Label{1});
    std::set<std::vector<Label>> distinct;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto s = sample_labels(big, 10, seed);
        ASSERT_EQ(s.class_ids.size(), 10u);
        EXPECT_EQ(s.count, 10u);
        EXPECT_EQ(s.seed, seed);
        EXPECT_TRUE(std::is_sorted(s.class_ids.begin(), s.class_ids.end()));
        EXPECT_EQ(std::set<Label>(s.class_ids.begin(), s.class_ids.end()).size(), 10u);
        for (Label l : s.class_ids) {
            EXPECT_GE(l, 1);
            EXPECT_LE(l, 127);
        }
        distinct.insert(s.class_ids);
    }
    EXPECT_GT(distinct.size(), 90u);
}

TEST(SampleLabels, RoughlyUniform)
{
    std::vector<Label> universe(20);
    std::iota(universe.begin(), universe.end(), Label{1});
    std::vector<int> hits(21, 0);
    const int draws = 4000;
    for (int s = 0; s < draws; ++s)
        for (Label l : sample_labels(universe, 5, static_cast<std::uint64_t>(s)).class_ids)
            ++hits[l];
    for (Label l : universe)
        EXPECT_NEAR(hits[l] / double(draws), 0.25, 0.04);
}

TEST(SegLoss, Examples)
{
    const auto p = box_pair(2);
    const Grid& g = p.moving_seg.grid();
    LabelSample both{{1, 2}, 0, 2};
    EXPECT_NEAR(seg_loss(p.moving_seg, p.moving_seg, zero_field(g), both), -1.0, 1e-6);

    LabelVolume only_fixed = p.moving_seg;
    only_fixed(0, 0, 0) = 3;
    const double with_absent = seg_loss(only_fixed, p.moving_seg, zero_field(g), LabelSample{{3}, 0, 1});
    EXPECT_NEAR(with_absent, 0.0, 1e-6);

    const auto ddf = random_field(g, 5, 0.7);
    double expected = 0.0;
    for (Label c : both.class_ids)
        expected += soft_dice(indicator(p.fixed_seg, c), warp_indicator(p.moving_seg, c, ddf));
    expected = -expected / 2.0;
    EXPECT_NEAR(seg_loss(p.fixed_seg, p.moving_seg, ddf, both), expected, 1e-12);

    try {
        seg_loss(p.fixed_seg, p.moving_seg, ddf, LabelSample{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidParams);
    }
}

TEST(SegLoss, MatchesPerClassOracleOnRandomLabels)
{
    const Grid g({6, 5, 4});
    const auto fixed = random_labels(g, 1, 6);
    const auto moving = random_labels(g, 2, 6);
    const auto ddf = random_field(g, 3, 1.5);
    const LabelSample s{{1, 3, 4, 6}, 0, 4};
    double expected = 0.0;
    for (Label c : s.class_ids)
        expected += soft_dice(indicator(fixed, c), warp_indicator(moving, c, ddf));
    EXPECT_NEAR(seg_loss(fixed, moving, ddf, s), -expected / 4.0, 1e-12);
}

TEST(RegLoss, Examples)
{
    const Grid g({4, 4, 4});
    const WeightMap w = uniform_weight_map(g, 2.0);
    EXPECT_EQ(reg_loss(zero_field(g), w), 0.0);
    EXPECT_EQ(reg_loss(DisplacementField(g, Vec3{1.5, -2.0, 0.3}), w), 0.0);

    DisplacementField f(Grid({2, 1, 1}));
    f[0] = {0.0, 0.0, 0.0};
    f[1] = {1.0, 0.0, 0.0};
    EXPECT_DOUBLE_EQ(reg_loss(f, uniform_weight_map(f.grid(), 3.0)), 1.5);

    try {
        reg_loss(zero_field(g), uniform_weight_map(Grid({4, 4, 3}), 1.0));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    }
}

TEST(RegLoss, Scaling)
{
    const Grid g({5, 4, 3});
    const auto f = random_field(g, 9, 1.0);
    const WeightMap w{random_volume(g.dims, 10, 1.0, 2.0)};
    WeightMap w3 = w;
    for (auto& v : w3.weights)
        v *= 3.0;
    EXPECT_NEAR(reg_loss(f, w3), 3.0 * reg_loss(f, w), 1e-12 * reg_loss(f, w3));
    DisplacementField f2 = f;
    for (auto& v : f2)
        v = 2.0 * v;
    EXPECT_NEAR(reg_loss(f2, w), 4.0 * reg_loss(f, w), 1e-12 * reg_loss(f2, w));
    EXPECT_NEAR(reg_loss(f, uniform_weight_map(g, 4500.0)), 4500.0 * reg_loss(f, uniform_weight_map(g, 1.0)),
                1e-9 * reg_loss(f, uniform_weight_map(g, 4500.0)));
}

TEST(RegLoss, DirectSumOracle)
{
    const Grid g({4, 3, 5});
    const auto f = random_field(g, 21, 1.0);
    const WeightMap w{random_volume(g.dims, 22, 1.0, 2.0)};
    double sum = 0.0;
    const Dims d = g.dims;
    for (std::size_t k = 0; k < d[2]; ++k)
        for (std::size_t j = 0; j < d[1]; ++j)
            for (std::size_t i = 0; i < d[0]; ++i) {
                double e = 0.0;
                const std::size_t nb[3][3] = {{i + 1, j, k}, {i, j + 1, k}, {i, j, k + 1}};
                for (int a = 0; a < 3; ++a) {
                    if (nb[a][a] >= d[a])
                        continue;
                    const Vec3 diff = f(nb[a][0], nb[a][1], nb[a][2]) - f(i, j, k);
                    e += dot(diff, diff);
                }
                sum += w.weights(i, j, k) * e;
            }
    EXPECT_NEAR(reg_loss(f, w), sum / static_cast<double>(g.size()), 1e-12);
}

TEST(RegLossGrad, ZeroAndConstantFields)
{
    const Grid g({4, 4, 4});
    const WeightMap w{random_volume(g.dims, 1, 1.0, 2.0)};
    for (const auto& f : {zero_field(g), DisplacementField(g, Vec3{0.7, 0.1, -3.0})})
        for (const auto& v : reg_loss_grad(f, w))
            EXPECT_EQ(v, (Vec3{0.0, 0.0, 0.0}));
}

TEST(RegLossGrad, MatchesFiniteDifferences)
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Grid g({5, 5, 5});
        const auto f = random_field(g, 40 + seed, 1.0);
        const WeightMap w{random_volume(g.dims, 50 + seed, 1.0, 2.0)};
        const auto analytic = reg_loss_grad(f, w);
        const auto fd = finite_difference(f, [&](const DisplacementField& x) { return reg_loss(x, w); }, 1e-4);
        EXPECT_LT(max_rel_error(analytic, fd), 1e-4);
        for (std::size_t i = 0; i < fd.size(); ++i)
            for (int c = 0; c < 3; ++c)
                EXPECT_NEAR(analytic[i][c], fd[i][c], 1e-4 * std::max(1e-3, std::abs(fd[i][c])));

        const Vec3 scale{0.5, 0.25, 2.0};
        const auto analytic_s = reg_loss_grad(f, w, scale);
        const auto fd_s =
            finite_difference(f, [&](const DisplacementField& x) { return reg_loss(x, w, scale); }, 1e-4);
        EXPECT_LT(max_rel_error(analytic_s, fd_s), 1e-4);
    }
}

TEST(RegLoss, ComponentScaleMatchesRescaledField)
{
    const Grid g({4, 5, 6});
    const auto f = random_field(g, 3, 2.0);
    const WeightMap w{random_volume(g.dims, 4, 1.0, 2.0)};
    const Vec3 s{0.25, 0.2, 1.0 / 6.0};
    DisplacementField scaled = f;
    for (auto& v : scaled)
        v = {v[0] * s[0], v[1] * s[1], v[2] * s[2]};
    EXPECT_NEAR(reg_loss(f, w, s), reg_loss(scaled, w), 1e-14);
}

TEST(TotalLoss, IdenticalPairAtZero)
{
    const auto p = box_pair(0);
    const Grid& g = p.fixed_ct.grid();
    const LossBreakdown l = total_loss(p, zero_field(g), uniform_weight_map(g, 4500.0), LabelSample{{1, 2}, 0, 2});
    EXPECT_NEAR(l.sim, -1.0, 1e-6);
    EXPECT_NEAR(l.seg, -1.0, 1e-6);
    EXPECT_EQ(l.reg, 0.0);
    EXPECT_NEAR(l.total, -2.0, 2e-6);
}

TEST(TotalLoss, Additivity)
{
    const Grid g({5, 4, 6});
    const auto p = random_pair(g, 7);
    const auto f = random_field(g, 8, 1.0);
    const WeightMap w{random_volume(g.dims, 9, 1.0, 2.0)};
    const LabelSample s{{1, 2, 4}, 0, 3};
    const LossBreakdown l = total_loss(p, f, w, s);
    EXPECT_EQ(l.total, l.sim + l.seg + l.reg);
    EXPECT_EQ(l.sim, sim_loss(p.fixed_ct, p.moving_ct, f));
    EXPECT_EQ(l.seg, seg_loss(p.fixed_seg, p.moving_seg, f, s));
    EXPECT_EQ(l.reg, reg_loss(f, w));
    EXPECT_GE(l.sim, -1.0);
    EXPECT_LE(l.sim, 0.0);
    EXPECT_GE(l.seg, -1.0);
    EXPECT_LE(l.seg, 0.0);
    EXPECT_GE(l.reg, 0.0);
}

TEST(TotalLoss, InverseShiftBeatsZero)
{
    const auto p = box_pair(1);
    const Grid& g = p.fixed_ct.grid();
    const WeightMap w = uniform_weight_map(g, 4500.0);
    const LabelSample s{{1, 2}, 0, 2};
    const auto shifted = total_loss(p, DisplacementField(g, Vec3{1.0, 0.0, 0.0}), w, s);
    const auto still = total_loss(p, zero_field(g), w, s);
    EXPECT_LT(shifted.total, still.total);
    EXPECT_NEAR(shifted.total, -2.0, 2e-6);
}

TEST(TotalLossGrad, StationaryAtPerfectAlignment)
{
    const auto p = box_pair(0);
    const Grid& g = p.fixed_ct.grid();
    const auto grad = total_loss_grad(p, zero_field(g), uniform_weight_map(g, 4500.0), LabelSample{{1, 2}, 0, 2});
    double n = 0.0;
    for (const auto& v : grad)
        n += dot(v, v);
    EXPECT_LT(std::sqrt(n), 1e-6);
}

TEST(TotalLossGrad, MatchesFiniteDifferences)
{
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const Grid g({6, 6, 6});
        const auto p = random_pair(g, 100 * seed);
        auto f = random_field(g, 100 * seed + 50, 0.8);
        ctreg::testing::keep_off_cell_faces(f, 0.01);
        const WeightMap w{random_volume(g.dims, 100 * seed + 60, 1.0, 2.0)};
        const LabelSample s{{1, 2, 3}, 0, 3};
        const auto analytic = total_loss_grad(p, f, w, s);
        const auto fd =
            finite_difference(f, [&](const DisplacementField& x) { return total_loss(p, x, w, s).total; }, 1e-4);
        EXPECT_LT(max_rel_error(analytic, fd), 1e-3);
    }
}

TEST(TotalLossGrad, RegOnlyWhenSimilarityIsEmpty)
{
    const Grid g({5, 5, 5});
    RegistrationPair p;
    p.moving_pet = p.fixed_pet = p.moving_ct = p.fixed_ct = Volume(g, 0.0);
    p.moving_seg = p.fixed_seg = LabelVolume(g, Label{0});
    const auto f = random_field(g, 77, 1.0);
    const WeightMap w{random_volume(g.dims, 78, 1.0, 2.0)};
    const auto grad = total_loss_grad(p, f, w, LabelSample{{1}, 0, 1});
    const auto reg = reg_loss_grad(f, w);
    for (std::size_t i = 0; i < grad.size(); ++i)
        EXPECT_EQ(grad[i], reg[i]);
}

TEST(TotalLossAndGrad, AgreesWithSeparateCalls)
{
    const Grid g({5, 6, 4});
    const auto p = random_pair(g, 3);
    const auto f = random_field(g, 4, 1.0);
    const WeightMap w{random_volume(g.dims, 5, 1.0, 2.0)};
    const LabelSample s{{1, 2}, 0, 2};
    const auto both = total_loss_and_grad(p, f, w, s);
    const auto l = total_loss(p, f, w, s);
    EXPECT_NEAR(both.loss.total, l.total, 1e-12);
    const auto grad = total_loss_grad(p, f, w, s);
    for (std::size_t i = 0; i < grad.size(); ++i)
        for (int c = 0; c < 3; ++c)
            EXPECT_NEAR(both.grad[i][c], grad[i][c], 1e-12);
}
