#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "types.hpp"

namespace nbss {

namespace detail {

inline void put_u16(std::string& s, std::uint16_t v) {
    s.push_back(char(v & 0xff));
    s.push_back(char(v >> 8));
}
inline void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}
inline std::uint16_t get_u16(const unsigned char* p) { return std::uint16_t(p[0] | (p[1] << 8)); }
inline std::uint32_t get_u32(const unsigned char* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

}  // namespace detail

// 32-bit IEEE float WAV (format tag 3), interleaved channels.
inline void write_wav(const std::filesystem::path& path, const MultichannelWaveform& x) {
    x.check_rectangular();
    const std::uint32_t M = std::uint32_t(x.n_channels()), N = std::uint32_t(x.n_samples());
    const std::uint32_t data_bytes = M * N * 4;
    std::string buf;
    buf.reserve(44 + data_bytes);
    buf += "RIFF";
    detail::put_u32(buf, 36 + data_bytes);
    buf += "WAVEfmt ";
    detail::put_u32(buf, 16);
    detail::put_u16(buf, 3);
    detail::put_u16(buf, std::uint16_t(M));
    detail::put_u32(buf, std::uint32_t(x.sample_rate));
    detail::put_u32(buf, std::uint32_t(x.sample_rate) * M * 4);
    detail::put_u16(buf, std::uint16_t(M * 4));
    detail::put_u16(buf, 32);
    buf += "data";
    detail::put_u32(buf, data_bytes);
    for (std::uint32_t i = 0; i < N; ++i)
        for (std::uint32_t m = 0; m < M; ++m) {
            const float v = float(x.channels[m][i]);
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            detail::put_u32(buf, bits);
        }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path.string() + " for writing");
    f.write(buf.data(), std::streamsize(buf.size()));
    if (!f) throw Error("write failed: " + path.string());
}

// Reads PCM16, PCM32, float32 and float64 WAV, including
// WAVE_FORMAT_EXTENSIBLE headers.
inline MultichannelWaveform read_wav(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path.string());
    std::vector<unsigned char> b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    auto fail = [&](const std::string& why) { return Error(path.string() + ": " + why); };
    if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0)
        throw fail("not a RIFF/WAVE file");
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;
    std::size_t pos = 12;
    while (pos + 8 <= b.size()) {
        const std::uint32_t len = detail::get_u32(&b[pos + 4]);
        const unsigned char* body = &b[pos + 8];
        const std::size_t avail = std::min<std::size_t>(len, b.size() - pos - 8);
        if (std::memcmp(&b[pos], "fmt ", 4) == 0) {
            if (avail < 16) throw fail("truncated fmt chunk");
            format = detail::get_u16(body);
            channels = detail::get_u16(body + 2);
            rate = detail::get_u32(body + 4);
            bits = detail::get_u16(body + 14);
            if (format == 0xFFFE) {
                if (avail < 26) throw fail("truncated extensible fmt chunk");
                format = detail::get_u16(body + 24);  // first two bytes of the subformat GUID
            }
        } else if (std::memcmp(&b[pos], "data", 4) == 0) {
            data = body;
            data_len = avail;
        }
        pos += 8 + len + (len & 1);
    }
    if (channels == 0) throw fail("missing fmt chunk");
    if (!data) throw fail("missing data chunk");
    const std::size_t width = bits / 8;
    if (!((format == 1 && (bits == 16 || bits == 32)) || (format == 3 && (bits == 32 || bits == 64))))
        throw fail("unsupported sample format " + std::to_string(format) + "/" + std::to_string(bits));
    const std::size_t frames = data_len / (width * channels);
    MultichannelWaveform x(channels, frames, int(rate));
    for (std::size_t i = 0; i < frames; ++i)
        for (std::size_t m = 0; m < channels; ++m) {
            const unsigned char* p = data + (i * channels + m) * width;
            double v;
            if (format == 1 && bits == 16) {
                v = double(std::int16_t(detail::get_u16(p))) / 32768.0;
            } else if (format == 1) {
                v = double(std::int32_t(detail::get_u32(p))) / 2147483648.0;
            } else if (bits == 32) {
                const std::uint32_t u = detail::get_u32(p);
                float fv;
                std::memcpy(&fv, &u, 4);
                v = fv;
            } else {
                std::uint64_t u = 0;
                for (int k = 7; k >= 0; --k) u = (u << 8) | p[k];
                std::memcpy(&v, &u, 8);
            }
            x.channels[m][i] = v;
        }
    return x;
}

}  // namespace nbss
