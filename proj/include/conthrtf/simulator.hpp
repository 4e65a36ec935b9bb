#pragma once

// Continuous-measurement simulation: a head rotating at constant velocity in
// front of S loudspeakers, observed by one microphone at the left ear.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "conthrtf/errors.hpp"
#include "conthrtf/excitation.hpp"
#include "conthrtf/sphere_hrtf.hpp"

namespace conthrtf {

struct RotationTrajectory {
    double start_angle = 0.0;   // deg
    double velocity = 0.0;      // deg/s, positive turns the source toward the contralateral side
    double sample_rate = 24000.0;

    void validate() const {
        require(sample_rate > 0.0, "trajectory sample_rate must be positive");
        require(std::isfinite(start_angle), "start_angle must be finite");
        require(std::isfinite(velocity) && velocity >= 0.0, "velocity must be finite and non-negative");
    }
};

/// Head rotation angle at sample k, wrapped to [0, 360).
inline double angle_at(const RotationTrajectory& traj, std::size_t k) {
    double a = std::fmod(traj.start_angle + traj.velocity * double(k) / traj.sample_rate, 360.0);
    if (a < 0.0) a += 360.0;
    if (a >= 360.0) a -= 360.0;
    return a;
}

struct SourceDirection {
    double azimuth = 0.0;    // deg, relative to the head at rotation angle 0
    double elevation = 0.0;  // deg
};

struct LoudspeakerLayout {
    std::vector<SourceDirection> sources;

    std::size_t size() const { return sources.size(); }

    static LoudspeakerLayout horizontal() { return {{{0.0, 0.0}}}; }
    static LoudspeakerLayout three_elevations() { return {{{0.0, 0.0}, {0.0, 15.0}, {0.0, 30.0}}}; }

    void validate() const { require(!sources.empty(), "layout needs at least one loudspeaker"); }
};

/// Incidence angle of source s at head rotation `rotation` (deg). Rotating the
/// head by +r moves the source to relative azimuth (azimuth - r), i.e. from the
/// front toward the side opposite the left ear.
inline double source_incidence(const LoudspeakerLayout& layout, std::size_t s, double rotation,
                               const SphereConfig& sphere) {
    const auto& src = layout.sources[s];
    return incidence_angle(src.azimuth - rotation, src.elevation, sphere.ear_azimuth, sphere.ear_elevation);
}

/// Per-sample, per-source reference responses h_{k,s} used by the simulation.
class ReferenceSet {
public:
    ReferenceSet() = default;
    ReferenceSet(std::size_t length, std::size_t channels) : length_(length), channels_(channels) {
        entries_.resize(length * channels);
        incidence_.resize(length * channels);
    }

    std::size_t length() const { return length_; }
    std::size_t channels() const { return channels_; }

    const HRIR& at(std::size_t k, std::size_t s) const { return *entries_[k * channels_ + s]; }
    double incidence(std::size_t k, std::size_t s) const { return incidence_[k * channels_ + s]; }

    void set(std::size_t k, std::size_t s, std::shared_ptr<const HRIR> h, double incidence) {
        entries_[k * channels_ + s] = std::move(h);
        incidence_[k * channels_ + s] = incidence;
    }

private:
    std::size_t length_ = 0;
    std::size_t channels_ = 0;
    std::vector<std::shared_ptr<const HRIR>> entries_;
    std::vector<double> incidence_;
};

/// Resolves the reference response of every source at every sample.
inline ReferenceSet build_references(const LoudspeakerLayout& layout, const RotationTrajectory& traj,
                                     std::size_t length, HrirCache& cache) {
    layout.validate();
    traj.validate();
    ReferenceSet refs(length, layout.size());
    for (std::size_t k = 0; k < length; ++k) {
        const double rot = angle_at(traj, k);
        for (std::size_t s = 0; s < layout.size(); ++s) {
            const double inc = quantize_angle(source_incidence(layout, s, rot, cache.config()));
            refs.set(k, s, cache.get(inc), inc);
        }
    }
    return refs;
}

struct CleanSimulation {
    std::vector<double> d;
    std::vector<double> angle;  // head rotation per sample, deg
    ReferenceSet references;
};

/// d(k) = sum_s sum_kappa x_s(k - kappa) h_{k,s}(kappa), with x_s(k) = 0 for k < 0.
inline std::vector<double> time_variant_convolution(const ExcitationSignal& excitation, const ReferenceSet& refs) {
    require(excitation.channel_count() == refs.channels(), "excitation channel count does not match the layout");
    require(excitation.length() == refs.length(), "excitation length does not match the reference set");
    const std::size_t n = excitation.length();
    std::vector<double> d(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        double acc = 0.0;
        for (std::size_t s = 0; s < refs.channels(); ++s) {
            const auto& h = refs.at(k, s).taps;
            const auto& x = excitation.channels[s];
            const std::size_t len = std::min(h.size(), k + 1);
            for (std::size_t kappa = 0; kappa < len; ++kappa) acc += x[k - kappa] * h[kappa];
        }
        d[k] = acc;
    }
    return d;
}

inline CleanSimulation simulate_miso(const LoudspeakerLayout& layout, const ExcitationSignal& excitation,
                                     const RotationTrajectory& traj, HrirCache& cache) {
    require(excitation.channel_count() == layout.size(), "excitation channel count must equal layout size");
    CleanSimulation out;
    out.references = build_references(layout, traj, excitation.length(), cache);
    out.d = time_variant_convolution(excitation, out.references);
    out.angle.resize(excitation.length());
    for (std::size_t k = 0; k < out.angle.size(); ++k) out.angle[k] = angle_at(traj, k);
    return out;
}

inline CleanSimulation simulate_miso(const LoudspeakerLayout& layout, const ExcitationSignal& excitation,
                                     const RotationTrajectory& traj, const SphereConfig& sphere) {
    HrirCache cache(sphere);
    return simulate_miso(layout, excitation, traj, cache);
}

inline constexpr double kNoiselessSnr = std::numeric_limits<double>::infinity();

struct NoisySignal {
    std::vector<double> y;
    double achieved_snr = kNoiselessSnr;  // dB, empirical
};

/// y = d + n with white Gaussian n of variance power(d) * 10^(-snr/10).
/// snr = +inf returns d unchanged.
inline NoisySignal add_noise(std::span<const double> d, double snr_db, std::uint64_t seed) {
    double power = 0.0;
    for (double v : d) power += v * v;
    require(!d.empty() && power > 0.0, "clean signal has zero power; SNR is undefined");
    power /= double(d.size());
    NoisySignal out;
    out.y.assign(d.begin(), d.end());
    if (std::isinf(snr_db) && snr_db > 0.0) return out;
    require(std::isfinite(snr_db), "snr must be finite or +inf");
    const double sigma = std::sqrt(power * std::pow(10.0, -snr_db / 10.0));
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), 0x6e01u};
    std::mt19937_64 engine(seq);
    std::normal_distribution<double> normal(0.0, sigma);
    double noise_energy = 0.0;
    for (double& v : out.y) {
        const double n = normal(engine);
        v += n;
        noise_energy += n * n;
    }
    out.achieved_snr = 10.0 * std::log10(power * double(d.size()) / noise_energy);
    return out;
}

struct SimulationOutput {
    std::vector<double> y;
    std::vector<double> d;
    std::vector<double> angle;
    std::uint64_t noise_seed = 0;
    double achieved_snr = kNoiselessSnr;
    ReferenceSet references;
};

inline SimulationOutput simulate_measurement(const LoudspeakerLayout& layout, const ExcitationSignal& excitation,
                                             const RotationTrajectory& traj, HrirCache& cache, double snr_db,
                                             std::uint64_t noise_seed) {
    CleanSimulation clean = simulate_miso(layout, excitation, traj, cache);
    NoisySignal noisy = add_noise(clean.d, snr_db, noise_seed);
    SimulationOutput out;
    out.y = std::move(noisy.y);
    out.d = std::move(clean.d);
    out.angle = std::move(clean.angle);
    out.noise_seed = noise_seed;
    out.achieved_snr = noisy.achieved_snr;
    out.references = std::move(clean.references);
    return out;
}

} // namespace conthrtf
