#pragma once

// RIFF/WAVE reading and writing. Reads integer PCM (16/24/32 bit) and IEEE
// float (32/64 bit), plain or WAVE_FORMAT_EXTENSIBLE; writes IEEE float.

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "conthrtf/errors.hpp"

namespace conthrtf::io {

static_assert(std::endian::native == std::endian::little, "wav I/O assumes a little-endian host");

struct WavData {
    std::vector<std::vector<double>> channels;
    double sample_rate = 0.0;

    std::size_t channel_count() const { return channels.size(); }
    std::size_t length() const { return channels.empty() ? 0 : channels.front().size(); }
};

enum class WavSampleFormat { float32, float64 };

namespace detail {

inline constexpr std::uint16_t kFormatPcm = 1;
inline constexpr std::uint16_t kFormatFloat = 3;
inline constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <class T>
void put(std::string& buf, T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf.append(raw, sizeof(T));
}

template <class T>
T get(const std::string& buf, std::size_t pos) {
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    return v;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return data;
}

inline void write_file(const std::filesystem::path& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path.string());
    out.write(data.data(), std::streamsize(data.size()));
    out.close();
    if (!out) throw IoError("write failed: " + path.string());
}

} // namespace detail

inline void write_wav(const std::filesystem::path& path, const WavData& wav,
                      WavSampleFormat format = WavSampleFormat::float32) {
    require(!wav.channels.empty(), "wav output needs at least one channel");
    require(wav.sample_rate > 0.0 && wav.sample_rate == std::floor(wav.sample_rate) && wav.sample_rate < 4294967296.0,
            "wav sample rate must be a positive integer");
    const std::size_t frames = wav.length();
    for (const auto& ch : wav.channels) require(ch.size() == frames, "wav channels differ in length");
    const std::uint16_t bytes = format == WavSampleFormat::float32 ? 4 : 8;
    const std::uint16_t nch = std::uint16_t(wav.channels.size());
    const std::uint64_t data_bytes = std::uint64_t(frames) * nch * bytes;
    require(data_bytes + 36 <= 0xFFFFFFFFull, "signal too long for a RIFF/WAVE file");
    const auto rate = std::uint32_t(wav.sample_rate);

    std::string buf;
    buf.reserve(std::size_t(data_bytes) + 44);
    buf += "RIFF";
    detail::put(buf, std::uint32_t(36 + data_bytes));
    buf += "WAVEfmt ";
    detail::put(buf, std::uint32_t(16));
    detail::put(buf, detail::kFormatFloat);
    detail::put(buf, nch);
    detail::put(buf, rate);
    detail::put(buf, std::uint32_t(rate * nch * bytes));
    detail::put(buf, std::uint16_t(nch * bytes));
    detail::put(buf, std::uint16_t(bytes * 8));
    buf += "data";
    detail::put(buf, std::uint32_t(data_bytes));
    for (std::size_t k = 0; k < frames; ++k)
        for (const auto& ch : wav.channels) {
            if (format == WavSampleFormat::float32)
                detail::put(buf, float(ch[k]));
            else
                detail::put(buf, ch[k]);
        }
    detail::write_file(path, buf);
}

inline WavData read_wav(const std::filesystem::path& path) {
    const std::string buf = detail::read_file(path);
    const std::string name = path.string();
    if (buf.size() < 12 || buf.compare(0, 4, "RIFF") != 0 || buf.compare(8, 4, "WAVE") != 0)
        throw IoError(name + ": not a RIFF/WAVE file");

    std::uint16_t tag = 0, nch = 0, bits = 0, align = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    std::size_t data_pos = 0, data_len = 0;
    bool have_data = false;
    std::size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        const std::string id = buf.substr(pos, 4);
        const std::size_t len = detail::get<std::uint32_t>(buf, pos + 4);
        const std::size_t body = pos + 8;
        if (id == "fmt ") {
            if (len < 16 || body + len > buf.size()) throw IoError(name + ": truncated fmt chunk");
            tag = detail::get<std::uint16_t>(buf, body);
            nch = detail::get<std::uint16_t>(buf, body + 2);
            rate = detail::get<std::uint32_t>(buf, body + 4);
            align = detail::get<std::uint16_t>(buf, body + 12);
            bits = detail::get<std::uint16_t>(buf, body + 14);
            if (tag == detail::kFormatExtensible) {
                if (len < 26) throw IoError(name + ": truncated extensible fmt chunk");
                tag = detail::get<std::uint16_t>(buf, body + 24);
            }
            have_fmt = true;
        } else if (id == "data") {
            data_pos = body;
            data_len = std::min(len, buf.size() - body);
            have_data = true;
            break;
        }
        pos = body + len + (len & 1);
    }
    if (!have_fmt) throw IoError(name + ": missing fmt chunk");
    if (!have_data) throw IoError(name + ": missing data chunk");
    if (nch == 0) throw IoError(name + ": zero channels");
    const bool pcm = tag == detail::kFormatPcm && (bits == 16 || bits == 24 || bits == 32);
    const bool flt = tag == detail::kFormatFloat && (bits == 32 || bits == 64);
    if (!pcm && !flt)
        throw IoError(name + ": unsupported sample format (tag " + std::to_string(tag) + ", " + std::to_string(bits) +
                      " bit)");
    const std::size_t width = bits / 8;
    if (align != nch * width) throw IoError(name + ": inconsistent block alignment");

    WavData out;
    out.sample_rate = rate;
    const std::size_t frames = data_len / align;
    out.channels.assign(nch, std::vector<double>(frames));
    const char* p = buf.data() + data_pos;
    for (std::size_t k = 0; k < frames; ++k)
        for (std::size_t c = 0; c < nch; ++c, p += width) {
            double v;
            if (flt && bits == 32) {
                float f;
                std::memcpy(&f, p, 4);
                v = f;
            } else if (flt) {
                std::memcpy(&v, p, 8);
            } else if (bits == 16) {
                std::int16_t s;
                std::memcpy(&s, p, 2);
                v = s / 32768.0;
            } else if (bits == 24) {
                const auto* b = reinterpret_cast<const unsigned char*>(p);
                std::int32_t s = std::int32_t(b[0]) | (std::int32_t(b[1]) << 8) | (std::int32_t(b[2]) << 16);
                if (s & 0x800000) s -= 0x1000000;
                v = s / 8388608.0;
            } else {
                std::int32_t s;
                std::memcpy(&s, p, 4);
                v = s / 2147483648.0;
            }
            out.channels[c][k] = v;
        }
    return out;
}

} // namespace conthrtf::io
