// End-to-end acceptance run: one PASS/FAIL line per criterion.

#include <boost/math/distributions/students_t.hpp>

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "ctreg/cli.hpp"
#include "ctreg/ctreg.hpp"

using namespace ctreg;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4)
{
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

std::string scratch(const std::string& name)
{
    const auto p = std::filesystem::temp_directory_path() / ("ctreg_acceptance_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

Volume random_volume(const Dims& d, std::mt19937_64& rng, double lo, double hi)
{
    Volume v{Grid(d)};
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& x : v)
        x = u(rng);
    return v;
}

LabelVolume random_labels(const Grid& g, std::mt19937_64& rng, int max_label)
{
    LabelVolume s(g);
    std::uniform_int_distribution<int> u(0, max_label);
    for (auto& l : s)
        l = static_cast<Label>(u(rng));
    return s;
}

double mean_magnitude(const DisplacementField& f)
{
    double s = 0.0;
    for (const auto& v : f)
        s += norm(v);
    return s / static_cast<double>(f.size());
}

double smoothed_final_total(const RegistrationResult& r, std::size_t window)
{
    const std::size_t n = std::min(window, r.trace.size());
    double s = 0.0;
    for (std::size_t i = r.trace.size() - n; i < r.trace.size(); ++i)
        s += r.trace[i].loss.total;
    return s / static_cast<double>(n);
}

DisplacementField central_difference(const DisplacementField& x, const std::function<double(const DisplacementField&)>& f,
                                     double h)
{
    DisplacementField g(x.grid());
    DisplacementField y = x;
    for (std::size_t i = 0; i < x.size(); ++i)
        for (int c = 0; c < 3; ++c) {
            const double orig = y[i][c];
            y[i][c] = orig + h;
            const double fp = f(y);
            y[i][c] = orig - h;
            const double fm = f(y);
            y[i][c] = orig;
            g[i][c] = (fp - fm) / (2.0 * h);
        }
    return g;
}

double relative_error(const DisplacementField& a, const DisplacementField& b)
{
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const Vec3 d = a[i] - b[i];
        num += dot(d, d);
        den += dot(b[i], b[i]);
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1);
    const Grid g({6, 6, 6});
    double worst_total = 0.0;
    double worst_reg = 0.0;
    for (int n = 0; n < 20; ++n) {
        RegistrationPair p;
        p.moving_pet = random_volume(g.dims, rng, 0.0, 1.0);
        p.fixed_pet = random_volume(g.dims, rng, 0.0, 1.0);
        p.moving_ct = random_volume(g.dims, rng, 0.0, 1.0);
        p.fixed_ct = random_volume(g.dims, rng, 0.0, 1.0);
        p.moving_seg = random_labels(g, rng, 4);
        p.fixed_seg = random_labels(g, rng, 4);

        DisplacementField f(g);
        std::uniform_real_distribution<double> u(-0.8, 0.8);
        for (auto& v : f)
            for (auto& c : v) {
                c = u(rng);
                const double frac = c - std::floor(c);
                if (frac < 0.01)
                    c += 0.01;
                else if (frac > 0.99)
                    c -= 0.01;
            }

        const WeightMap w = build_weight_map(random_volume(g.dims, rng, -1000.0, 1500.0), WeightMapParams{});
        const Vec3 scale = n % 2 == 0 ? Vec3{1.0, 1.0, 1.0} : reg_component_scale(g, RegUnits::Extent);
        const auto universe = label_universe(p.fixed_seg, p.moving_seg);
        const LabelSample s = sample_labels(universe, 3, static_cast<std::uint64_t>(n));

        const auto analytic = total_loss_grad(p, f, w, s, scale);
        const auto fd =
            central_difference(f, [&](const DisplacementField& x) { return total_loss(p, x, w, s, scale).total; }, 1e-4);
        worst_total = std::max(worst_total, relative_error(analytic, fd));

        const auto reg_analytic = reg_loss_grad(f, w, scale);
        const auto reg_fd =
            central_difference(f, [&](const DisplacementField& x) { return reg_loss(x, w, scale); }, 1e-4);
        worst_reg = std::max(worst_reg, relative_error(reg_analytic, reg_fd));
    }
    const double secs = seconds_since(t0);
    return {worst_total < 1e-3 && worst_reg < 1e-4 && secs < 60.0,
            "max rel err total " + fmt(worst_total, 3) + ", reg " + fmt(worst_reg, 3) + ", " + fmt(secs, 3) + " s"};
}

Outcome weight_map_exactness()
{
    Volume ct(Grid({3, 1, 1}));
    ct[0] = 0.0;
    ct[1] = 500.0;
    ct[2] = 1000.0;
    const WeightMapParams params{4500.0, 3000.0, 2.0};
    const WeightMap w = build_weight_map(ct, params);
    const bool fixture = w[0] == 1500.0 && w[1] == 3000.0 && w[2] == 7500.0;

    std::mt19937_64 rng(2);
    std::size_t violations = 0;
    for (int n = 0; n < 100; ++n) {
        const Volume v = random_volume({6, 5, 4}, rng, -1000.0, 1500.0);
        const WeightMap w2 = build_weight_map(v, params);
        const WeightMap w1 = build_weight_map(v, {4500.0, 3000.0, 1.0});
        std::vector<std::size_t> order(v.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
        violations += w2[order.front()] != 1500.0;
        violations += w2[order.back()] != 7500.0;
        for (std::size_t i = 0; i < order.size(); ++i) {
            const auto idx = order[i];
            violations += w2[idx] < 1500.0 || w2[idx] > 7500.0;
            if (i > 0)
                violations += w2[order[i - 1]] > w2[idx];
            violations += w2[idx] > w1[idx];
        }
    }
    return {fixture && violations == 0, "fixture {" + fmt(w[0]) + ", " + fmt(w[1]) + ", " + fmt(w[2]) +
                                             "}, invariant violations " + std::to_string(violations)};
}

Outcome baseline_collapse()
{
    PhantomSpec spec;
    spec.seed = 21;
    const auto pair = normalize_pair(generate_phantom(spec).pair);
    RegistrationConfig cfg;
    cfg.weight_params.delta = 0.0;
    cfg.seed = 7;
    const auto a = register_pair(pair, cfg);
    const auto b = baseline_register(pair, cfg);
    bool same_trace = a.trace.size() == b.trace.size();
    for (std::size_t i = 0; same_trace && i < a.trace.size(); ++i)
        same_trace = a.trace[i].loss.total == b.trace[i].loss.total && a.trace[i].grad_norm == b.trace[i].grad_norm;
    const bool same_ddf = a.ddf == b.ddf;
    return {same_ddf && same_trace, std::string("ddf ") + (same_ddf ? "identical" : "differs") + ", trace " +
                                        (same_trace ? "identical" : "differs")};
}

Outcome identity_recovery()
{
    const auto t0 = Clock::now();
    PhantomSpec spec;
    spec.seed = 31;
    const auto pair = normalize_pair(identical_pair(generate_phantom(spec)).pair);
    const RegistrationConfig cfg;
    const auto r = register_pair(pair, cfg);
    const double mag = mean_magnitude(r.ddf);
    const double smoothed = smoothed_final_total(r, cfg.convergence_window);
    const double secs = seconds_since(t0);
    return {mag < 0.05 && std::abs(smoothed + 2.0) <= 1e-3 && secs < 300.0,
            "mean |u| " + fmt(mag, 3) + " vox, smoothed total " + fmt(smoothed, 8) + ", " + fmt(secs, 3) + " s"};
}

Outcome phantom_recovery()
{
    bool pass = true;
    std::ostringstream d;
    double worst_secs = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto t0 = Clock::now();
        PhantomSpec spec;
        spec.seed = seed;
        const auto ph = generate_phantom(spec);
        const auto pair = normalize_pair(ph.pair);
        const auto r = register_pair(pair, RegistrationConfig{});
        const Grid& g = pair.fixed_ct.grid();
        const auto epe = endpoint_error(r.ddf, ph.gt_ddf, ph.body_mask);
        const auto epe0 = endpoint_error(zero_field(g), ph.gt_ddf, ph.body_mask);
        const auto post = evaluate(pair, r.ddf);
        const auto pre = evaluate(pair, zero_field(g));
        const double voxel_mm = std::max({g.spacing[0], g.spacing[1], g.spacing[2]});
        const double secs = seconds_since(t0);
        worst_secs = std::max(worst_secs, secs);
        const bool ok = epe.mean_voxels < 0.5 && post.dice_mean >= 0.90 && post.tre_mean <= voxel_mm &&
                        epe.mean_voxels < epe0.mean_voxels && post.dice_mean > pre.dice_mean &&
                        post.tre_mean < pre.tre_mean && secs < 600.0;
        pass = pass && ok;
        d << (seed > 1 ? "; " : "") << "seed " << seed << ": epe " << fmt(epe0.mean_voxels, 3) << "->"
          << fmt(epe.mean_voxels, 3) << " dice " << fmt(pre.dice_mean, 4) << "->" << fmt(post.dice_mean, 4) << " tre "
          << fmt(pre.tre_mean, 3) << "->" << fmt(post.tre_mean, 3) << (ok ? "" : " (FAIL)");
    }
    d << "; slowest " << fmt(worst_secs, 3) << " s";
    return {pass, d.str()};
}

Outcome direction_of_effect()
{
    const auto dir = scratch("rigid_block");
    const std::size_t count = 10;
    for (std::uint64_t seed = 1; seed <= count; ++seed) {
        const auto spec = rigid_block_spec(seed);
        write_phantom_bundle(dir + "/phantom_" + std::to_string(100 + seed), generate_phantom(spec), spec, ".json");
    }
    std::ostringstream out, err;
    const int code = cli_main({"ablate", "--bundles", dir, "--mu-r", "4500", "--delta", "3000", "--gamma", "2",
                               "--json", dir + "/ablate.json"},
                              out, err);
    if (code != 0)
        return {false, "ablate exited " + std::to_string(code) + ": " + err.str()};
    std::cout << out.str();

    const auto doc = nlohmann::json::parse(read_text_file(dir + "/ablate.json"));
    const auto& base = doc.at("rows").at(0);
    const auto& prop = doc.at("rows").at(1);
    const auto mean = [](const nlohmann::json& a) {
        double s = 0.0;
        for (const auto& v : a)
            s += v.get<double>();
        return s / static_cast<double>(a.size());
    };
    const double eb = mean(base.at("bone_energy"));
    const double ep = mean(prop.at("bone_energy"));
    const double db = mean(base.at("dice_mean"));
    const double dp = mean(prop.at("dice_mean"));
    const double tb = mean(base.at("tre_mean"));
    const double tp = mean(prop.at("tre_mean"));
    const bool has_p = prop.at("p_dice").is_number();
    const std::size_t n = prop.at("dice_mean").size();
    return {n >= 10 && ep < eb && dp >= db && tp <= tb && has_p,
            std::to_string(n) + " phantoms: bone energy " + fmt(eb, 4) + " -> " + fmt(ep, 4) + ", dice " + fmt(db, 6) +
                " -> " + fmt(dp, 6) + ", tre " + fmt(tb, 4) + " -> " + fmt(tp, 4) + " mm, p(Dice) " +
                (has_p ? fmt(prop.at("p_dice").get<double>(), 4) : std::string("missing"))};
}

Outcome metric_examples()
{
    std::vector<std::string> failed;
    const auto check = [&](bool ok, const std::string& what) {
        if (!ok)
            failed.push_back(what);
    };

    for (std::size_t k : {2u, 8u, 32u}) {
        Volume a(Grid({k * 4, 1, 1}));
        for (std::size_t i = 0; i < a.size(); ++i)
            a[i] = (static_cast<double>(i % k) + 0.5) / 32.0;
        check(std::abs(mutual_information(a, a) - std::log(static_cast<double>(k))) < 1e-12, "MI ln(k)");
    }
    std::mt19937_64 rng(7);
    const Volume ua = random_volume({100, 100, 10}, rng, 0.0, 1.0);
    const Volume ub = random_volume({100, 100, 10}, rng, 0.0, 1.0);
    check(mutual_information(ua, ub) <= 0.05, "MI independent");
    check(mutual_information(ua, Volume(ua.grid(), 0.5)) == 0.0, "MI constant");

    const Grid g({10, 10, 1});
    LabelVolume s1(g, Label{0}), s2(g, Label{0});
    s1(0, 0, 0) = s1(1, 0, 0) = s1(0, 1, 0) = s1(1, 1, 0) = 3;
    s2(3, 4, 0) = s2(4, 4, 0) = s2(3, 5, 0) = s2(4, 5, 0) = 3;
    check(std::abs(tre(s1, s2, 3, {1.0, 1.0, 1.0}) - 5.0) < 1e-12, "TRE 3-4-5");
    check(std::abs(tre(s1, s2, 3, {2.0, 2.0, 2.0}) - 10.0) < 1e-12, "TRE spacing 2");
    check(hard_dice(s1, s1, 3) == 1.0 && hard_dice(s1, s2, 3) == 0.0, "hard dice");

    const auto tt = paired_t_test({1.0, 2.0, 3.0}, {0.0, 0.0, 0.0});
    boost::math::students_t dist(2.0);
    const double oracle = 2.0 * boost::math::cdf(boost::math::complement(dist, 2.0 * std::sqrt(3.0)));
    check(std::abs(tt.t - 2.0 * std::sqrt(3.0)) < 1e-12, "t = 2 sqrt 3");
    check(std::abs(tt.p - oracle) < 1e-8 && std::abs(tt.p - 0.0742) < 5e-5, "p vs CDF oracle");
    const auto zero = paired_t_test({1.0, -1.0}, {0.0, 0.0});
    check(zero.t == 0.0 && std::abs(zero.p - 1.0) < 1e-12, "t = 0");
    bool degenerate = false;
    try {
        paired_t_test({1.0, 2.0}, {1.0, 2.0});
    } catch (const Error& e) {
        degenerate = e.code() == ErrorCode::DegenerateSample;
    }
    check(degenerate, "degenerate sample");

    std::string detail = "t " + fmt(tt.t, 8) + ", p " + fmt(tt.p, 6) + " (oracle " + fmt(oracle, 6) + ")";
    for (const auto& f : failed)
        detail += ", failed: " + f;
    return {failed.empty(), detail};
}

Outcome determinism()
{
    const auto dir = scratch("determinism");
    PhantomSpec spec;
    spec.seed = 41;
    write_phantom_bundle(dir + "/bundle", generate_phantom(spec), spec);
    std::ostringstream out, err;
    for (const char* run : {"a", "b"}) {
        const int code =
            cli_main({"register", "--pair", dir + "/bundle", "--seed", "5", "--out", dir + "/" + run}, out, err);
        if (code != 0)
            return {false, "register exited " + std::to_string(code) + ": " + err.str()};
    }
    const bool ddf = read_file_bytes(dir + "/a/ddf.nii.gz") == read_file_bytes(dir + "/b/ddf.nii.gz");
    const bool log = read_text_file(dir + "/a/run_log.jsonl") == read_text_file(dir + "/b/run_log.jsonl");
    std::ifstream raw(dir + "/a/ddf.nii.gz", std::ios::binary);
    std::ifstream raw2(dir + "/b/ddf.nii.gz", std::ios::binary);
    const std::string fa((std::istreambuf_iterator<char>(raw)), {});
    const std::string fb((std::istreambuf_iterator<char>(raw2)), {});
    return {ddf && log && fa == fb, std::string("ddf files ") + (fa == fb ? "identical" : "differ") + ", run logs " +
                                        (log ? "identical" : "differ")};
}

Outcome io_round_trip()
{
    const auto dir = scratch("io");
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<std::size_t> dim(1, 9);
    std::uniform_real_distribution<float> val(-1e6f, 1e6f);
    std::uniform_real_distribution<float> sp(0.25f, 5.0f);
    std::size_t failures = 0;
    std::size_t files = 0;
    for (int n = 0; n < 100; ++n) {
        const Grid g({dim(rng), dim(rng), dim(rng)}, {sp(rng), sp(rng), sp(rng)},
                     {static_cast<float>(val(rng) * 1e-4f), 0.0, static_cast<float>(-val(rng) * 1e-4f)});
        Volume v(g);
        for (auto& x : v)
            x = val(rng);
        DisplacementField f(g);
        for (auto& x : f)
            x = {val(rng), val(rng), val(rng)};
        for (const std::string ext : {".nii", ".nii.gz", ".json"}) {
            const auto pv = dir + "/v" + std::to_string(n) + ext;
            const auto pf = dir + "/f" + std::to_string(n) + ext;
            write_volume(v, pv);
            write_volume(f, pf);
            const Volume v2 = read_scalar_volume(pv);
            const DisplacementField f2 = read_ddf(pf);
            bool ok = v2 == v && f2 == f;
            for (int a = 0; a < 3; ++a)
                ok = ok && std::abs(v2.grid().spacing[a] - g.spacing[a]) <= 1e-6 &&
                     std::abs(f2.grid().spacing[a] - g.spacing[a]) <= 1e-6;
            failures += !ok;
            files += 2;
        }
    }

    // Hand-built 2x2x2 float32 NIfTI-1.
    std::vector<std::uint8_t> b(352 + 32, 0);
    const auto put16 = [&](std::size_t o, std::int16_t v) { std::memcpy(b.data() + o, &v, 2); };
    const auto put32 = [&](std::size_t o, std::int32_t v) { std::memcpy(b.data() + o, &v, 4); };
    const auto putf = [&](std::size_t o, float v) { std::memcpy(b.data() + o, &v, 4); };
    put32(0, 348);
    put16(40, 3);
    put16(42, 2);
    put16(44, 2);
    put16(46, 2);
    put16(70, 16);
    put16(72, 32);
    putf(80, 0.5f);
    putf(84, 1.25f);
    putf(88, 4.0f);
    putf(108, 352.0f);
    std::memcpy(b.data() + 344, "n+1\0", 4);
    const float values[8] = {-3.5f, 0.0f, 1.0f, 2.25f, 1e-3f, -7.0f, 100.0f, 0.125f};
    for (int i = 0; i < 8; ++i)
        putf(352 + 4 * i, values[i]);
    {
        std::ofstream fx(dir + "/fixture.nii", std::ios::binary);
        fx.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    }
    const Volume fx = read_scalar_volume(dir + "/fixture.nii");
    bool fixture = fx.dims() == Dims{2, 2, 2} && fx.grid().spacing == Vec3{0.5, 1.25, 4.0};
    for (int i = 0; i < 8 && fixture; ++i)
        fixture = fx[i] == static_cast<double>(values[i]);
    return {failures == 0 && fixture, std::to_string(files) + " files, " + std::to_string(failures) +
                                          " mismatches, fixture " + (fixture ? "exact" : "wrong")};
}

} // namespace

int main()
{
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient correctness", gradient_correctness},
        {"weight-map exactness", weight_map_exactness},
        {"baseline collapse", baseline_collapse},
        {"identity recovery", identity_recovery},
        {"phantom recovery", phantom_recovery},
        {"direction of effect", direction_of_effect},
        {"metric unit tests", metric_examples},
        {"determinism", determinism},
        {"I/O round-trip", io_round_trip},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << i + 1 << " " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    std::cout << criteria.size() - failed << "/" << criteria.size() << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
