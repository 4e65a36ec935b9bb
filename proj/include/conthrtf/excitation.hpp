#pragma once

// Loudspeaker excitation: white Gaussian noise and periodic perfect sequences.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "conthrtf/errors.hpp"

namespace conthrtf {

enum class ExcitationKind { white_noise, pseq };

inline std::string to_string(ExcitationKind kind) {
    return kind == ExcitationKind::white_noise ? "white_noise" : "pseq";
}

/// S equally long loudspeaker signals.
struct ExcitationSignal {
    std::vector<std::vector<double>> channels;
    ExcitationKind kind = ExcitationKind::white_noise;
    std::size_t period = 0;  // pseq only
    std::uint64_t seed = 0;

    std::size_t channel_count() const { return channels.size(); }
    std::size_t length() const { return channels.empty() ? 0 : channels.front().size(); }
};

/// Independent unit-variance Gaussian channels. Channel s draws from its own
/// engine seeded with (seed, s), so adding channels never perturbs earlier ones.
inline ExcitationSignal gen_white_noise(std::size_t channels, std::size_t length, std::uint64_t seed) {
    require(channels >= 1, "white noise needs at least one channel");
    require(length >= 1, "white noise needs at least one sample");
    ExcitationSignal out;
    out.kind = ExcitationKind::white_noise;
    out.seed = seed;
    out.channels.resize(channels);
    for (std::size_t s = 0; s < channels; ++s) {
        std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(s), 0x57u};
        std::mt19937_64 engine(seq);
        std::normal_distribution<double> normal(0.0, 1.0);
        auto& ch = out.channels[s];
        ch.resize(length);
        for (double& v : ch) v = normal(engine);
    }
    return out;
}

enum class PseqConstruction { random_phase, impulse };

/// One period of a unit-power perfect sequence: its periodic autocorrelation
/// is period at lag 0 and zero elsewhere.
///
/// random_phase: flat magnitude spectrum with uniformly drawn phases (real
/// DC/Nyquist bins with random sign), redrawn until the crest factor is at most
/// max_crest. impulse: sqrt(period) followed by zeros.
inline std::vector<double> gen_pseq(std::size_t period, std::uint64_t seed,
                                    PseqConstruction construction = PseqConstruction::random_phase,
                                    double max_crest = 4.0) {
    require(period >= 1, "perfect sequence period must be at least 1");
    std::vector<double> seq(period, 0.0);
    if (construction == PseqConstruction::impulse) {
        seq[0] = std::sqrt(double(period));
        return seq;
    }
    std::seed_seq sseq{std::uint32_t(seed), std::uint32_t(seed >> 32), 0x9e37u};
    std::mt19937_64 engine(sseq);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::bernoulli_distribution coin(0.5);
    const double mag = std::sqrt(double(period));
    const std::size_t half = period / 2;
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> spectrum(period), time(period);
    for (int attempt = 0; attempt < 10000; ++attempt) {
        spectrum[0] = coin(engine) ? mag : -mag;
        for (std::size_t b = 1; b < (period + 1) / 2; ++b) {
            spectrum[b] = std::polar(mag, phase(engine));
            spectrum[period - b] = std::conj(spectrum[b]);
        }
        if (period % 2 == 0 && period > 1) spectrum[half] = coin(engine) ? mag : -mag;
        fft.inv(time, spectrum);
        double peak = 0.0;
        for (std::size_t i = 0; i < period; ++i) {
            seq[i] = time[i].real();
            peak = std::max(peak, std::abs(seq[i]));
        }
        if (peak <= max_crest) return seq;
    }
    throw NumericalError("no perfect sequence with crest factor <= " + std::to_string(max_crest) + " found");
}

/// S-channel periodic excitation built from one base sequence of period L*S:
/// channel s is the base sequence circularly delayed by s*L samples. The
/// stacked L*S regressor then runs through the full base period, which makes
/// all channel lags mutually orthogonal over one period.
inline ExcitationSignal multichannel_pseq(std::size_t taps, std::size_t channels, std::size_t length,
                                          std::uint64_t seed) {
    require(taps >= 1 && channels >= 1, "taps and channel count must be positive");
    require(taps * channels <= length, "signal length must cover at least one period (L*S)");
    const std::size_t period = taps * channels;
    const std::vector<double> base = gen_pseq(period, seed);
    ExcitationSignal out;
    out.kind = ExcitationKind::pseq;
    out.period = period;
    out.seed = seed;
    out.channels.assign(channels, std::vector<double>(length));
    for (std::size_t s = 0; s < channels; ++s) {
        const std::size_t shift = s * taps;
        for (std::size_t k = 0; k < length; ++k) out.channels[s][k] = base[(k + period - shift) % period];
    }
    return out;
}

} // namespace conthrtf
