#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "ctreg/error.hpp"
#include "ctreg/file_io.hpp"
#include "ctreg/image_data.hpp"

namespace ctreg::raw_bundle {

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kFormatName = "ctreg-raw";

/// The payload lives next to the JSON header with the extension swapped to .raw.
inline std::string payload_path(const std::string& header_path)
{
    return std::filesystem::path(header_path).replace_extension(".raw").string();
}

inline nlohmann::json header_json(const ImageData& img, const std::string& payload_name)
{
    nlohmann::json j;
    j["format"] = kFormatName;
    j["format_version"] = kFormatVersion;
    j["kind"] = to_string(img.kind);
    j["dims"] = {img.grid.dims[0], img.grid.dims[1], img.grid.dims[2]};
    j["spacing"] = {img.grid.spacing[0], img.grid.spacing[1], img.grid.spacing[2]};
    j["origin"] = {img.grid.origin[0], img.grid.origin[1], img.grid.origin[2]};
    j["components"] = img.components;
    j["dtype"] = "float32";
    j["byte_order"] = "little";
    if (img.kind == ImageKind::Ddf)
        j["ddf_units"] = "voxel";
    j["data_file"] = payload_name;
    return j;
}

inline void write(const ImageData& img, const std::string& header_path)
{
    const std::size_t count = img.grid.size() * img.components;
    require(img.values.size() == count, ErrorCode::ShapeMismatch, "image payload does not match its grid");
    Bytes payload(4 * count);
    for (std::size_t i = 0; i < count; ++i)
        ctreg::detail::store_le<float>(payload.data() + 4 * i, static_cast<float>(img.values[i]));
    const std::string data_path = payload_path(header_path);
    write_file_atomic(data_path, payload.data(), payload.size());
    const auto j = header_json(img, std::filesystem::path(data_path).filename().string());
    write_text_atomic(header_path, j.dump(2) + "\n");
}

inline ImageData read(const std::string& header_path)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(header_path));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::MalformedFile, header_path + ": " + e.what());
    }
    ImageData img;
    std::string data_file;
    try {
        require(j.at("format").get<std::string>() == kFormatName, ErrorCode::MalformedFile,
                header_path + ": not a ctreg raw bundle header");
        require(j.at("format_version").get<int>() == kFormatVersion, ErrorCode::MalformedFile,
                header_path + ": unsupported format_version");
        require(j.at("dtype").get<std::string>() == "float32", ErrorCode::UnsupportedDatatype,
                header_path + ": raw bundles hold float32 only");
        require(j.value("byte_order", std::string("little")) == "little", ErrorCode::UnsupportedDatatype,
                header_path + ": raw bundles are little-endian");
        img.kind = image_kind_from_string(j.at("kind").get<std::string>());
        const auto dims = j.at("dims").get<std::vector<std::int64_t>>();
        const auto spacing = j.at("spacing").get<std::vector<double>>();
        const auto origin = j.at("origin").get<std::vector<double>>();
        require(dims.size() == 3 && spacing.size() == 3 && origin.size() == 3, ErrorCode::MalformedFile,
                header_path + ": dims, spacing and origin need three entries");
        Dims d{};
        for (int a = 0; a < 3; ++a) {
            require(dims[a] >= 1, ErrorCode::MalformedFile, header_path + ": non-positive dimension");
            d[a] = static_cast<std::size_t>(dims[a]);
        }
        img.grid = Grid(d, {spacing[0], spacing[1], spacing[2]}, {origin[0], origin[1], origin[2]});
        img.components = j.at("components").get<std::size_t>();
        data_file = j.at("data_file").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::MalformedFile, header_path + ": " + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::InvalidParams)
            fail(ErrorCode::MalformedFile, header_path + ": " + e.message());
        throw;
    }
    const std::size_t expected_components = img.kind == ImageKind::Ddf ? 3 : 1;
    require(img.components == expected_components, ErrorCode::MalformedFile,
            header_path + ": component count does not match kind");

    const auto data_path = (std::filesystem::path(header_path).parent_path() / data_file).string();
    const Bytes payload = read_file_bytes(data_path);
    const std::size_t count = img.grid.size() * img.components;
    require(payload.size() == 4 * count, ErrorCode::MalformedFile,
            data_path + ": payload has " + std::to_string(payload.size()) + " bytes, expected " +
                std::to_string(4 * count));
    img.values.resize(count);
    for (std::size_t i = 0; i < count; ++i)
        img.values[i] = ctreg::detail::load_le<float>(payload.data() + 4 * i, false);
    return img;
}

} // namespace ctreg::raw_bundle
