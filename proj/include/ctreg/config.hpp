#pragma once

#include <charconv>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ctreg/engine.hpp"
#include "ctreg/error.hpp"
#include "ctreg/file_io.hpp"

namespace ctreg {

inline constexpr int kConfigFormatVersion = 1;

namespace detail {

    inline std::string_view trim(std::string_view s)
    {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string_view::npos)
            return {};
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    template <typename T>
    T parse_number(std::string_view text, const std::string& key)
    {
        T v{};
        const auto* first = text.data();
        const auto* last = text.data() + text.size();
        const auto [ptr, ec] = std::from_chars(first, last, v);
        require(ec == std::errc() && ptr == last && !text.empty(), ErrorCode::InvalidParams,
                "config key '" + key + "': cannot parse '" + std::string(text) + "'");
        return v;
    }

    inline std::vector<std::size_t> parse_size_list(std::string_view text, const std::string& key)
    {
        std::vector<std::size_t> out;
        std::size_t pos = 0;
        while (pos <= text.size()) {
            const auto comma = text.find(',', pos);
            const auto item = trim(text.substr(pos, comma == std::string_view::npos ? text.npos : comma - pos));
            out.push_back(parse_number<std::size_t>(item, key));
            if (comma == std::string_view::npos)
                break;
            pos = comma + 1;
        }
        return out;
    }

    inline std::string join(const std::vector<std::size_t>& v)
    {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i)
            s += (i ? "," : "") + std::to_string(v[i]);
        return s;
    }

    inline std::string format_double(double v)
    {
        char buf[64];
        const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
        return std::string(buf, ptr);
    }

} // namespace detail

inline std::string to_string(RegUnits u) { return u == RegUnits::Voxel ? "voxel" : "extent"; }

/// Parses `key = value` lines. `#` starts a comment; missing keys keep their
/// defaults and unknown keys are rejected.
inline RegistrationConfig parse_config(const std::string& text, const std::string& source = "config")
{
    RegistrationConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::string> seen;
    while (std::getline(is, line)) {
        ++lineno;
        std::string_view sv = line;
        if (const auto hash = sv.find('#'); hash != std::string_view::npos)
            sv = sv.substr(0, hash);
        sv = detail::trim(sv);
        if (sv.empty())
            continue;
        const auto eq = sv.find('=');
        const std::string where = source + ":" + std::to_string(lineno);
        require(eq != std::string_view::npos, ErrorCode::InvalidParams, where + ": expected 'key = value'");
        const std::string key(detail::trim(sv.substr(0, eq)));
        const auto value = detail::trim(sv.substr(eq + 1));
        require(std::find(seen.begin(), seen.end(), key) == seen.end(), ErrorCode::InvalidParams,
                where + ": duplicate key '" + key + "'");
        seen.push_back(key);

        using detail::parse_number;
        if (key == "format_version")
            require(parse_number<int>(value, key) == kConfigFormatVersion, ErrorCode::InvalidParams,
                    where + ": unsupported format_version");
        else if (key == "mu_r")
            cfg.weight_params.mu_r = parse_number<double>(value, key);
        else if (key == "delta")
            cfg.weight_params.delta = parse_number<double>(value, key);
        else if (key == "gamma")
            cfg.weight_params.gamma = parse_number<double>(value, key);
        else if (key == "pyramid_factors")
            cfg.pyramid_factors = detail::parse_size_list(value, key);
        else if (key == "iters_per_level")
            cfg.iters_per_level = detail::parse_size_list(value, key);
        else if (key == "step_size")
            cfg.step_size = parse_number<double>(value, key);
        else if (key == "adam_beta1")
            cfg.adam_beta1 = parse_number<double>(value, key);
        else if (key == "adam_beta2")
            cfg.adam_beta2 = parse_number<double>(value, key);
        else if (key == "adam_eps")
            cfg.adam_eps = parse_number<double>(value, key);
        else if (key == "label_sample_count")
            cfg.label_sample_count = parse_number<std::size_t>(value, key);
        else if (key == "seed")
            cfg.seed = parse_number<std::uint64_t>(value, key);
        else if (key == "convergence_tol")
            cfg.convergence_tol = parse_number<double>(value, key);
        else if (key == "convergence_window")
            cfg.convergence_window = parse_number<std::size_t>(value, key);
        else if (key == "reg_units") {
            if (value == "voxel")
                cfg.reg_units = RegUnits::Voxel;
            else if (value == "extent")
                cfg.reg_units = RegUnits::Extent;
            else
                fail(ErrorCode::InvalidParams, where + ": reg_units must be 'voxel' or 'extent'");
        } else
            fail(ErrorCode::InvalidParams, where + ": unknown key '" + key + "'");
    }
    try {
        cfg.validate();
    } catch (const Error& e) {
        throw Error(e.code(), source + ": " + e.message());
    }
    return cfg;
}

inline RegistrationConfig load_config(const std::string& path)
{
    return parse_config(read_text_file(path), path);
}

/// Inverse of parse_config.
inline std::string format_config(const RegistrationConfig& c)
{
    using detail::format_double;
    std::ostringstream os;
    os << "format_version = " << kConfigFormatVersion << "\n"
       << "mu_r = " << format_double(c.weight_params.mu_r) << "\n"
       << "delta = " << format_double(c.weight_params.delta) << "\n"
       << "gamma = " << format_double(c.weight_params.gamma) << "\n"
       << "pyramid_factors = " << detail::join(c.pyramid_factors) << "\n"
       << "iters_per_level = " << detail::join(c.iters_per_level) << "\n"
       << "step_size = " << format_double(c.step_size) << "\n"
       << "adam_beta1 = " << format_double(c.adam_beta1) << "\n"
       << "adam_beta2 = " << format_double(c.adam_beta2) << "\n"
       << "adam_eps = " << format_double(c.adam_eps) << "\n"
       << "label_sample_count = " << c.label_sample_count << "\n"
       << "seed = " << c.seed << "\n"
       << "convergence_tol = " << format_double(c.convergence_tol) << "\n"
       << "convergence_window = " << c.convergence_window << "\n"
       << "reg_units = " << to_string(c.reg_units) << "\n";
    return os.str();
}

inline bool operator==(const WeightMapParams& a, const WeightMapParams& b)
{
    return a.mu_r == b.mu_r && a.delta == b.delta && a.gamma == b.gamma;
}

inline bool operator==(const RegistrationConfig& a, const RegistrationConfig& b)
{
    return a.weight_params == b.weight_params && a.pyramid_factors == b.pyramid_factors &&
           a.iters_per_level == b.iters_per_level && a.step_size == b.step_size && a.adam_beta1 == b.adam_beta1 &&
           a.adam_beta2 == b.adam_beta2 && a.adam_eps == b.adam_eps &&
           a.label_sample_count == b.label_sample_count && a.seed == b.seed &&
           a.convergence_tol == b.convergence_tol && a.convergence_window == b.convergence_window &&
           a.reg_units == b.reg_units;
}

} // namespace ctreg
