#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

#include <zlib.h>

#include "ctreg/error.hpp"

namespace ctreg {

static_assert(std::endian::native == std::endian::little, "ctreg file formats assume a little-endian host");

using Bytes = std::vector<std::uint8_t>;

/// Reads a whole file; gzip-compressed files are inflated transparently.
inline Bytes read_file_bytes(const std::string& path)
{
    gzFile f = gzopen(path.c_str(), "rb");
    if (f == nullptr)
        fail(ErrorCode::ReadError, "cannot open " + path);
    Bytes out;
    std::uint8_t buf[1 << 16];
    for (;;) {
        const int n = gzread(f, buf, sizeof(buf));
        if (n < 0) {
            int errnum = 0;
            const std::string msg = gzerror(f, &errnum);
            gzclose(f);
            fail(ErrorCode::MalformedFile, path + ": " + msg);
        }
        if (n == 0)
            break;
        out.insert(out.end(), buf, buf + n);
    }
    gzclose(f);
    return out;
}

inline bool has_suffix(const std::string& s, const std::string& suffix)
{
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Writes to `path + ".partial"` and renames over `path`, so readers never see
/// a half-written file.
inline void write_file_atomic(const std::string& path, const void* data, std::size_t size, bool gzip = false)
{
    const std::string tmp = path + ".partial";
    bool ok = true;
    if (gzip) {
        gzFile f = gzopen(tmp.c_str(), "wb6");
        ok = f != nullptr;
        if (ok) {
            const auto* p = static_cast<const std::uint8_t*>(data);
            std::size_t left = size;
            while (ok && left > 0) {
                const auto chunk = static_cast<unsigned>(std::min<std::size_t>(left, 1u << 30));
                ok = gzwrite(f, p, chunk) == static_cast<int>(chunk);
                p += chunk;
                left -= chunk;
            }
            ok = (gzclose(f) == Z_OK) && ok;
        }
    } else {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        ok = static_cast<bool>(os);
        if (ok) {
            os.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
            os.close();
            ok = static_cast<bool>(os);
        }
    }
    std::error_code ec;
    if (!ok) {
        std::filesystem::remove(tmp, ec);
        fail(ErrorCode::WriteError, "cannot write " + path);
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        fail(ErrorCode::WriteError, "cannot move " + tmp + " to " + path);
    }
}

inline void write_text_atomic(const std::string& path, const std::string& text)
{
    write_file_atomic(path, text.data(), text.size(), false);
}

inline std::string read_text_file(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        fail(ErrorCode::ReadError, "cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

namespace detail {

    template <typename T>
    T load_le(const std::uint8_t* p, bool swap)
    {
        T v;
        std::memcpy(&v, p, sizeof(T));
        if (swap) {
            auto* b = reinterpret_cast<std::uint8_t*>(&v);
            for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
                std::swap(b[i], b[sizeof(T) - 1 - i]);
        }
        return v;
    }

    template <typename T>
    void store_le(std::uint8_t* p, T v)
    {
        std::memcpy(p, &v, sizeof(T));
    }

} // namespace detail

} // namespace ctreg
