#pragma once

// Binary HRIR-set archive. Layout, all integers and floats little-endian:
//
//   offset  size      field
//   0       8         magic "CHRTFSET"
//   8       4         u32 format version (1)
//   12      4         u32 S
//   16      4         u32 L
//   20      4         u32 reserved, zero
//   24      8         u64 N, stored samples
//   32      8         u64 M, decimation (sample n is original sample n*M)
//   40      8         u64 N_t, original length
//   48      8         u64 metadata byte count
//   56      8 N S L   f64 estimates, sample-major, then channel, then tap
//   ...     8 N       f64 head rotation angle per stored sample, deg
//   ...               metadata, UTF-8 JSON

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conthrtf/errors.hpp"
#include "conthrtf/io/wav.hpp"
#include "conthrtf/sysid/segments.hpp"

namespace conthrtf::harness {

inline constexpr char kArchiveMagic[8] = {'C', 'H', 'R', 'T', 'F', 'S', 'E', 'T'};
inline constexpr std::uint32_t kArchiveVersion = 1;

struct HrirArchive {
    std::size_t channels = 0;
    std::size_t taps = 0;
    std::size_t decimation = 1;
    std::size_t original_length = 0;
    std::vector<double> estimates;  // N * S * L
    std::vector<double> angles;     // N
    nlohmann::json metadata = nlohmann::json::object();

    std::size_t samples() const { return angles.size(); }
    double at(std::size_t n, std::size_t s, std::size_t i) const { return estimates[(n * channels + s) * taps + i]; }
};

/// Keeps samples 0, M, 2M, ... of the estimates and angles.
inline HrirArchive make_archive(const sysid::Estimates& est, const std::vector<double>& angles, std::size_t decimation,
                                nlohmann::json metadata) {
    require(decimation >= 1, "decimation must be at least 1");
    require(angles.size() == est.length(), "angle count differs from the estimate length");
    HrirArchive a;
    a.channels = est.channels;
    a.taps = est.taps;
    a.decimation = decimation;
    a.original_length = est.length();
    a.metadata = std::move(metadata);
    const std::size_t n = (est.length() + decimation - 1) / decimation;
    a.estimates.reserve(n * est.channels * est.taps);
    a.angles.reserve(n);
    for (std::size_t k = 0; k < est.length(); k += decimation) {
        const auto col = est.z.col(sysid::Index(k));
        a.estimates.insert(a.estimates.end(), col.data(), col.data() + col.size());
        a.angles.push_back(angles[k]);
    }
    return a;
}

inline void write_archive(const std::filesystem::path& path, const HrirArchive& a) {
    require(a.estimates.size() == a.samples() * a.channels * a.taps, "archive estimate block has the wrong size");
    const std::string meta = a.metadata.dump();
    std::string buf;
    buf.reserve(56 + 8 * (a.estimates.size() + a.angles.size()) + meta.size());
    buf.append(kArchiveMagic, 8);
    io::detail::put(buf, kArchiveVersion);
    io::detail::put(buf, std::uint32_t(a.channels));
    io::detail::put(buf, std::uint32_t(a.taps));
    io::detail::put(buf, std::uint32_t(0));
    io::detail::put(buf, std::uint64_t(a.samples()));
    io::detail::put(buf, std::uint64_t(a.decimation));
    io::detail::put(buf, std::uint64_t(a.original_length));
    io::detail::put(buf, std::uint64_t(meta.size()));
    buf.append(reinterpret_cast<const char*>(a.estimates.data()), a.estimates.size() * 8);
    buf.append(reinterpret_cast<const char*>(a.angles.data()), a.angles.size() * 8);
    buf += meta;
    io::detail::write_file(path, buf);
}

inline HrirArchive read_archive(const std::filesystem::path& path) {
    const std::string buf = io::detail::read_file(path);
    const std::string name = path.string();
    if (buf.size() < 56 || std::memcmp(buf.data(), kArchiveMagic, 8) != 0)
        throw IoError(name + ": not an HRIR-set archive");
    const auto version = io::detail::get<std::uint32_t>(buf, 8);
    if (version != kArchiveVersion)
        throw IoError(name + ": unsupported archive version " + std::to_string(version) + " (this reader supports " +
                      std::to_string(kArchiveVersion) + ")");
    HrirArchive a;
    a.channels = io::detail::get<std::uint32_t>(buf, 12);
    a.taps = io::detail::get<std::uint32_t>(buf, 16);
    const auto n = io::detail::get<std::uint64_t>(buf, 24);
    a.decimation = io::detail::get<std::uint64_t>(buf, 32);
    a.original_length = io::detail::get<std::uint64_t>(buf, 40);
    const auto meta_len = io::detail::get<std::uint64_t>(buf, 48);
    const std::uint64_t values = n * a.channels * a.taps;
    if (buf.size() != 56 + 8 * (values + n) + meta_len) throw IoError(name + ": archive size does not match its header");
    a.estimates.resize(values);
    a.angles.resize(n);
    std::memcpy(a.estimates.data(), buf.data() + 56, values * 8);
    std::memcpy(a.angles.data(), buf.data() + 56 + values * 8, n * 8);
    try {
        a.metadata = nlohmann::json::parse(buf.substr(56 + 8 * (values + n)));
    } catch (const nlohmann::json::parse_error&) {
        throw IoError(name + ": archive metadata is not valid JSON");
    }
    return a;
}

} // namespace conthrtf::harness
