#pragma once

// Turning recorded WAV files into identification inputs. No resampling.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "conthrtf/errors.hpp"
#include "conthrtf/excitation.hpp"
#include "conthrtf/io/wav.hpp"

namespace conthrtf::harness {

struct ChannelSource {
    std::size_t file = 0;     // index into excitation_files
    std::size_t channel = 0;  // channel within that file
};

/// Regenerates the excitation instead of reading it.
struct SeedSpec {
    ExcitationKind kind = ExcitationKind::pseq;
    std::uint64_t seed = 1;
    std::size_t taps = 192;
};

struct IngestSpec {
    std::filesystem::path mic_file;
    std::size_t mic_channel = 0;
    std::size_t loudspeakers = 1;  // S
    std::vector<std::filesystem::path> excitation_files;
    std::map<std::size_t, ChannelSource> channel_map;  // loudspeaker -> source channel
    std::optional<SeedSpec> seed;
    double sample_rate = 24000.0;
};

struct IngestedSignals {
    std::vector<std::vector<double>> excitation;
    std::vector<double> mic;
    double sample_rate = 0.0;
};

namespace detail {

inline void check_rate(const io::WavData& w, double expected, const std::filesystem::path& path) {
    if (w.sample_rate != expected)
        throw ValidationError(path.string() + ": sample rate " + std::to_string(long(w.sample_rate)) +
                              " Hz differs from the expected " + std::to_string(long(expected)) +
                              " Hz (resampling is not supported)");
}

} // namespace detail

inline IngestedSignals ingest_recording(const IngestSpec& spec) {
    require(spec.sample_rate > 0.0, "sample_rate must be positive");
    require(spec.loudspeakers >= 1, "S must be at least 1");
    IngestedSignals out;
    out.sample_rate = spec.sample_rate;

    const io::WavData mic = io::read_wav(spec.mic_file);
    detail::check_rate(mic, spec.sample_rate, spec.mic_file);
    require(spec.mic_channel < mic.channel_count(), spec.mic_file.string() + ": microphone channel " +
                                                        std::to_string(spec.mic_channel) + " does not exist (" +
                                                        std::to_string(mic.channel_count()) + " channels)");
    out.mic = mic.channels[spec.mic_channel];
    require(!out.mic.empty(), spec.mic_file.string() + ": no samples");

    if (spec.seed) {
        require(spec.excitation_files.empty(), "give either excitation files or a seed spec, not both");
        if (spec.seed->kind == ExcitationKind::white_noise)
            out.excitation = gen_white_noise(spec.loudspeakers, out.mic.size(), spec.seed->seed).channels;
        else
            out.excitation = multichannel_pseq(spec.seed->taps, spec.loudspeakers, out.mic.size(), spec.seed->seed).channels;
        return out;
    }

    require(!spec.excitation_files.empty(), "no excitation files and no seed spec");
    std::vector<io::WavData> files;
    for (const auto& p : spec.excitation_files) {
        files.push_back(io::read_wav(p));
        detail::check_rate(files.back(), spec.sample_rate, p);
    }
    for (const auto& [s, src] : spec.channel_map)
        require(s < spec.loudspeakers, "channel map names loudspeaker " + std::to_string(s) + " but S = " +
                                           std::to_string(spec.loudspeakers));
    for (std::size_t s = 0; s < spec.loudspeakers; ++s) {
        const auto it = spec.channel_map.find(s);
        require(it != spec.channel_map.end(), "loudspeaker channel " + std::to_string(s) + " is not mapped");
        const ChannelSource src = it->second;
        require(src.file < files.size(), "loudspeaker channel " + std::to_string(s) + " maps to excitation file " +
                                             std::to_string(src.file) + ", which was not given");
        const auto& w = files[src.file];
        require(src.channel < w.channel_count(),
                "loudspeaker channel " + std::to_string(s) + " maps to channel " + std::to_string(src.channel) + " of " +
                    spec.excitation_files[src.file].string() + ", which has " + std::to_string(w.channel_count()) +
                    " channels");
        require(w.length() == out.mic.size(), spec.excitation_files[src.file].string() + ": length " +
                                                  std::to_string(w.length()) + " differs from the microphone length " +
                                                  std::to_string(out.mic.size()));
        out.excitation.push_back(w.channels[src.channel]);
    }
    return out;
}

} // namespace conthrtf::harness
