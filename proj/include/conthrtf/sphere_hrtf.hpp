#pragma once

// Rigid-sphere head model: range-dependent transfer functions and the
// fixed-length reference impulse responses derived from them.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "conthrtf/errors.hpp"

namespace conthrtf {

/// Truncation control for the spherical-harmonic series.
struct SeriesOptions {
    double tolerance = 1e-12;   ///< per-term magnitude relative to the running sum
    int run_length = 20;        ///< consecutive small terms required to stop
    int max_order = 400;        ///< hard cap; exceeding it is a numerical failure
    int fixed_order = 0;        ///< > 0: sum exactly orders [0, fixed_order) and skip the stopping rule
};

struct SphereConfig {
    double radius = 0.0875;            // m
    double speed_of_sound = 343.0;     // m/s
    double sample_rate = 24000.0;      // Hz
    double source_distance = 1.5;      // m, source to sphere center
    double ear_azimuth = 90.0;         // deg, left ear
    double ear_elevation = 0.0;        // deg
    std::size_t ref_length = 315;      // taps kept in each reference response
    std::size_t fft_size = 1024;       // synthesis grid
    /// Start of the smooth band-edge taper as a fraction of Nyquist.
    /// 1.0 disables the taper.
    double taper_start = 0.7;
    /// Largest tolerated energy fraction discarded by truncating to ref_length.
    double max_truncation_loss = 1e-8;
    SeriesOptions series;

    void validate() const {
        require(radius > 0.0, "sphere radius must be positive");
        require(speed_of_sound > 0.0, "speed_of_sound must be positive");
        require(sample_rate > 0.0, "sample_rate must be positive");
        require(source_distance > radius, "source_distance must exceed the sphere radius");
        require(ref_length >= 1, "ref_length must be at least 1");
        require(fft_size >= 2 * ref_length, "fft_size must be at least 2*ref_length");
        require(fft_size % 2 == 0, "fft_size must be even");
        require(taper_start > 0.0 && taper_start <= 1.0, "taper_start must lie in (0, 1]");
        require(max_truncation_loss >= 0.0, "max_truncation_loss must be non-negative");
        require(series.max_order >= 2, "series.max_order must be at least 2");
        require(series.run_length >= 1, "series.run_length must be at least 1");
    }

    /// Propagation delay from the source to the sphere center in samples.
    double center_delay_samples() const { return source_distance / speed_of_sound * sample_rate; }
};

/// Finite impulse response from one source to the ear microphone.
struct HRIR {
    std::vector<double> taps;
    double sample_rate = 0.0;
    int channel = 0;

    std::size_t size() const { return taps.size(); }
    std::span<const double> view() const { return taps; }
};

namespace detail {
inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }
} // namespace detail

/// Central angle in degrees between two directions given as azimuth/elevation.
inline double incidence_angle(double source_az, double source_el, double ear_az, double ear_el) {
    using detail::deg2rad;
    const double ca = std::cos(deg2rad(source_el));
    const double cb = std::cos(deg2rad(ear_el));
    const double u[3] = {ca * std::cos(deg2rad(source_az)), ca * std::sin(deg2rad(source_az)),
                         std::sin(deg2rad(source_el))};
    const double v[3] = {cb * std::cos(deg2rad(ear_az)), cb * std::sin(deg2rad(ear_az)),
                         std::sin(deg2rad(ear_el))};
    const double cx = u[1] * v[2] - u[2] * v[1];
    const double cy = u[2] * v[0] - u[0] * v[2];
    const double cz = u[0] * v[1] - u[1] * v[0];
    const double dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    return detail::rad2deg(std::atan2(std::sqrt(cx * cx + cy * cy + cz * cz), dot));
}

/// Maps any angle in degrees onto [0, 180] using the axial symmetry of the sphere.
inline double fold_incidence(double deg) {
    double a = std::fmod(deg, 360.0);
    if (a < 0.0) a += 360.0;
    return a <= 180.0 ? a : 360.0 - a;
}

/// Low-frequency limit of the range-dependent series,
///   sum_m (2m+1)/(m+1) P_m(cos theta) (a/r)^m,
/// which differs from one for a source at finite distance.
inline double sphere_dc_limit(const SphereConfig& config, double incidence) {
    const double t = config.radius / config.source_distance;
    const double x = std::cos(detail::deg2rad(incidence));
    double p_prev = 1.0, p_curr = x, tm = t;
    double sum = 1.0 + 1.5 * x * t;
    for (int m = 2; m < 2000; ++m) {
        const double p_next = (double(2 * m - 1) * x * p_curr - double(m - 1) * p_prev) / double(m);
        p_prev = p_curr;
        p_curr = p_next;
        tm *= t;
        const double term = double(2 * m + 1) / double(m + 1) * p_curr * tm;
        sum += term;
        if (tm < 1e-18) break;
    }
    return sum;
}

struct SphereTransferResult {
    std::complex<double> value;
    int orders_used = 0;
};

/// Rigid-sphere transfer function at `frequency` for a point source at
/// config.source_distance, normalized by the free-field response at the
/// sphere center (so the propagation delay and 1/r loss are removed) and by
/// the low-frequency limit sphere_dc_limit(), so the gain at 0 Hz is exactly 1.
/// Uses the e^{+j omega t} convention, i.e. a delay tau maps to exp(-j omega tau).
///
/// The series runs over ratios of spherical Hankel functions,
///   R_m(z) = h_m(z) / h_{m-1}(z),   R_{m+1} = (2m+1)/z - 1/R_m,
/// so that neither h_m(mu) nor h_m(mu*rho) is ever formed explicitly.
inline SphereTransferResult sphere_transfer_detailed(const SphereConfig& config, double frequency,
                                                     double incidence) {
    require(std::isfinite(frequency) && frequency >= 0.0 && frequency <= config.sample_rate / 2.0,
            "frequency outside [0, sample_rate/2]");
    require(std::isfinite(incidence) && incidence >= 0.0 && incidence <= 180.0,
            "incidence outside [0, 180] degrees");
    if (frequency == 0.0) return {{1.0, 0.0}, 0};

    using cd = std::complex<double>;
    const SeriesOptions& opt = config.series;
    const double mu = 2.0 * std::numbers::pi * frequency * config.radius / config.speed_of_sound;
    const double rho = config.source_distance / config.radius;
    const double zr = mu * rho;
    const double x = std::cos(detail::deg2rad(incidence));
    const cd i1(0.0, 1.0);

    // m = 0: h_0' / h_0 = -R_1.
    cd ratio_a = 1.0 / mu - i1;  // R_1(mu)
    cd ratio_r = 1.0 / zr - i1;  // R_1(mu*rho)
    cd g = 1.0;                  // h_m(mu rho)/h_m(mu) divided by its m = 0 value
    double p_prev = 1.0;         // P_{m-1}(x)
    double p_curr = x;           // P_m(x)
    cd sum = 1.0 / (-ratio_a);
    int small_run = 0;
    int m = 1;
    const int limit = opt.fixed_order > 0 ? opt.fixed_order : opt.max_order;
    for (; m < limit; ++m) {
        if (m > 1) {
            ratio_a = double(2 * m - 1) / mu - 1.0 / ratio_a;
            ratio_r = double(2 * m - 1) / zr - 1.0 / ratio_r;
            const double p_next = (double(2 * m - 1) * x * p_curr - double(m - 1) * p_prev) / double(m);
            p_prev = p_curr;
            p_curr = p_next;
        }
        g *= ratio_r / ratio_a;
        const cd deriv = 1.0 / ratio_a - double(m + 1) / mu;  // h_m'(mu) / h_m(mu)
        const cd term = double(2 * m + 1) * p_curr * g / deriv;
        sum += term;
        if (opt.fixed_order > 0) continue;
        if (std::abs(term) < opt.tolerance * std::abs(sum)) {
            if (++small_run >= opt.run_length) {
                ++m;
                break;
            }
        } else {
            small_run = 0;
        }
    }
    if (opt.fixed_order == 0 && small_run < opt.run_length) {
        throw NumericalError("rigid-sphere series did not converge within " +
                             std::to_string(opt.max_order) + " orders (f = " + std::to_string(frequency) +
                             " Hz)");
    }
    const cd h_phys = -std::exp(-i1 * mu) / mu * sum / sphere_dc_limit(config, incidence);
    return {std::conj(h_phys), m};
}

inline std::complex<double> sphere_transfer(const SphereConfig& config, double frequency, double incidence) {
    return sphere_transfer_detailed(config, frequency, incidence).value;
}

/// Gain of the band-edge taper at `frequency`: an infinitely differentiable
/// step from 1 at taper_start * Nyquist to 0 at Nyquist.
inline double band_edge_taper(const SphereConfig& config, double frequency) {
    const double nyquist = config.sample_rate / 2.0;
    const double start = config.taper_start * nyquist;
    if (frequency <= start || config.taper_start >= 1.0) return 1.0;
    const double t = (frequency - start) / (nyquist - start);
    if (t >= 1.0) return 0.0;
    const double a = std::exp(-1.0 / t), b = std::exp(-1.0 / (1.0 - t));
    return b / (a + b);
}

/// Full-length (fft_size) real impulse response before truncation, plus the
/// imaginary residue of the inverse transform relative to the peak.
struct UntruncatedResponse {
    std::vector<double> taps;
    double imaginary_residue = 0.0;
};

inline UntruncatedResponse synthesize_untruncated(const SphereConfig& config, double incidence) {
    config.validate();
    const std::size_t n = config.fft_size;
    const std::size_t half = n / 2;
    const double delay = config.source_distance / config.speed_of_sound;
    std::vector<std::complex<double>> spectrum(n);
    for (std::size_t b = 0; b <= half; ++b) {
        const double f = double(b) * config.sample_rate / double(n);
        const double w = 2.0 * std::numbers::pi * f * delay;
        spectrum[b] = sphere_transfer(config, f, incidence) * std::polar(1.0, -w) * band_edge_taper(config, f);
    }
    spectrum[0] = spectrum[0].real();
    spectrum[half] = spectrum[half].real();
    for (std::size_t b = 1; b < half; ++b) spectrum[n - b] = std::conj(spectrum[b]);

    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> time(n);
    fft.inv(time, spectrum);

    UntruncatedResponse out;
    out.taps.resize(n);
    double peak = 0.0, imag = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out.taps[i] = time[i].real();
        peak = std::max(peak, std::abs(time[i].real()));
        imag = std::max(imag, std::abs(time[i].imag()));
    }
    out.imaginary_residue = peak > 0.0 ? imag / peak : imag;
    return out;
}

/// Reference impulse response of length config.ref_length for the given incidence.
inline HRIR synthesize_hrir(const SphereConfig& config, double incidence, int channel = 0) {
    UntruncatedResponse full = synthesize_untruncated(config, incidence);
    if (full.imaginary_residue > 1e-12)
        throw NumericalError("inverse transform left an imaginary residue of " +
                             std::to_string(full.imaginary_residue));
    double total = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < full.taps.size(); ++i) {
        const double e = full.taps[i] * full.taps[i];
        total += e;
        if (i >= config.ref_length) tail += e;
    }
    if (total <= 0.0 || tail > config.max_truncation_loss * total)
        throw NumericalError("truncation to " + std::to_string(config.ref_length) + " taps discards " +
                             std::to_string(total > 0.0 ? tail / total : 1.0) +
                             " of the energy; increase ref_length or fft_size");
    full.taps.resize(config.ref_length);
    return HRIR{std::move(full.taps), config.sample_rate, channel};
}

/// Angle quantization step shared by the cache and the simulator.
inline constexpr double kAngleQuantum = 1e-4;

inline std::int64_t quantize_angle_key(double deg) { return std::llround(deg / kAngleQuantum); }
inline double angle_from_key(std::int64_t key) { return double(key) / 1e4; }
inline double quantize_angle(double deg) { return angle_from_key(quantize_angle_key(deg)); }

/// Memoized reference responses keyed by incidence quantized to kAngleQuantum.
/// Concurrent lookups share a reader lock; insertion is exclusive.
class HrirCache {
public:
    explicit HrirCache(SphereConfig config) : config_(std::move(config)) { config_.validate(); }

    const SphereConfig& config() const { return config_; }

    std::shared_ptr<const HRIR> get(double incidence) {
        const std::int64_t key = quantize_angle_key(incidence);
        {
            std::shared_lock lock(mutex_);
            if (auto it = entries_.find(key); it != entries_.end()) return it->second;
        }
        auto hrir = std::make_shared<const HRIR>(synthesize_hrir(config_, angle_from_key(key)));
        computations_.fetch_add(1, std::memory_order_relaxed);
        std::unique_lock lock(mutex_);
        auto [it, inserted] = entries_.emplace(key, std::move(hrir));
        return it->second;
    }

    std::size_t size() const {
        std::shared_lock lock(mutex_);
        return entries_.size();
    }
    std::size_t computations() const { return computations_.load(std::memory_order_relaxed); }

private:
    SphereConfig config_;
    mutable std::shared_mutex mutex_;
    std::map<std::int64_t, std::shared_ptr<const HRIR>> entries_;
    std::atomic<std::size_t> computations_{0};
};

/// Builds a cache and pre-fills it with the given incidence angles.
inline std::unique_ptr<HrirCache> hrir_grid(const SphereConfig& config, std::span<const double> angles) {
    auto cache = std::make_unique<HrirCache>(config);
    for (double a : angles) cache->get(a);
    return cache;
}

} // namespace conthrtf
