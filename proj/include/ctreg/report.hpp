#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "ctreg/engine.hpp"
#include "ctreg/error.hpp"
#include "ctreg/metrics.hpp"

namespace ctreg {

inline constexpr int kRunLogFormatVersion = 1;
inline constexpr int kReportFormatVersion = 1;

inline nlohmann::json to_json(const IterationRecord& r, bool timing)
{
    nlohmann::json j;
    j["format_version"] = kRunLogFormatVersion;
    j["level"] = r.level;
    j["factor"] = r.factor;
    j["iteration"] = r.iteration;
    j["sim"] = r.loss.sim;
    j["seg"] = r.loss.seg;
    j["reg"] = r.loss.reg;
    j["total"] = r.loss.total;
    j["grad_norm"] = r.grad_norm;
    j["wall_ms"] = timing ? r.wall_ms : 0.0;
    return j;
}

/// One JSON object per line. Wall-clock times are zeroed unless `timing` is
/// set, which keeps logs of identical runs byte-identical.
inline std::string format_run_log(const std::vector<IterationRecord>& trace, bool timing = false)
{
    std::string out;
    for (const auto& r : trace)
        out += to_json(r, timing).dump() + "\n";
    return out;
}

inline std::vector<IterationRecord> parse_run_log(const std::string& text)
{
    std::vector<IterationRecord> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string::npos)
            nl = text.size();
        const std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty())
            continue;
        try {
            const auto j = nlohmann::json::parse(line);
            require(j.at("format_version").get<int>() == kRunLogFormatVersion, ErrorCode::MalformedFile,
                    "unsupported run log format_version");
            IterationRecord r;
            r.level = j.at("level").get<std::size_t>();
            r.factor = j.at("factor").get<std::size_t>();
            r.iteration = j.at("iteration").get<std::size_t>();
            r.loss.sim = j.at("sim").get<double>();
            r.loss.seg = j.at("seg").get<double>();
            r.loss.reg = j.at("reg").get<double>();
            r.loss.total = j.at("total").get<double>();
            r.grad_norm = j.at("grad_norm").get<double>();
            r.wall_ms = j.at("wall_ms").get<double>();
            out.push_back(r);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::MalformedFile, std::string("run log: ") + e.what());
        }
    }
    return out;
}

namespace detail {

    inline nlohmann::json per_label(const std::map<Label, double>& m)
    {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [label, v] : m)
            j[std::to_string(label)] = v;
        return j;
    }

} // namespace detail

inline nlohmann::json to_json(const MetricsReport& r)
{
    nlohmann::json j;
    j["format_version"] = kReportFormatVersion;
    j["mi"] = r.mi;
    j["dice_mean"] = r.dice_mean;
    j["tre_mean"] = r.tre_mean;
    j["dice_per_label"] = detail::per_label(r.dice_per_label);
    j["tre_per_label"] = detail::per_label(r.tre_per_label);
    j["labels_evaluated"] = r.labels_evaluated;
    nlohmann::json ex = nlohmann::json::array();
    for (const auto& [label, reason] : r.excluded)
        ex.push_back({{"label", label}, {"reason", reason}});
    j["excluded"] = ex;
    return j;
}

inline MetricsReport metrics_from_json(const nlohmann::json& j)
{
    MetricsReport r;
    try {
        require(j.at("format_version").get<int>() == kReportFormatVersion, ErrorCode::MalformedFile,
                "unsupported report format_version");
        r.mi = j.at("mi").get<double>();
        r.dice_mean = j.at("dice_mean").get<double>();
        r.tre_mean = j.at("tre_mean").get<double>();
        for (const auto& [k, v] : j.at("dice_per_label").items())
            r.dice_per_label[static_cast<Label>(std::stoi(k))] = v.get<double>();
        for (const auto& [k, v] : j.at("tre_per_label").items())
            r.tre_per_label[static_cast<Label>(std::stoi(k))] = v.get<double>();
        r.labels_evaluated = j.at("labels_evaluated").get<std::vector<Label>>();
        for (const auto& e : j.at("excluded"))
            r.excluded.emplace_back(e.at("label").get<Label>(), e.at("reason").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::MalformedFile, std::string("metrics report: ") + e.what());
    }
    return r;
}

} // namespace ctreg
