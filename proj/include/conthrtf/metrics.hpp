#pragma once

// Normalized misalignment and time-variance measures.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "conthrtf/errors.hpp"
#include "conthrtf/simulator.hpp"
#include "conthrtf/sysid/segments.hpp"

namespace conthrtf {

inline constexpr double kDbFloor = -300.0;

inline double ratio_db(double num, double den) {
    if (num <= 0.0) return kDbFloor;
    const double v = 10.0 * std::log10(num / den);
    return v < kDbFloor ? kDbFloor : v;
}

/// 10 log10(|h_ref - h_est|^2 / |h_ref|^2) with h_est zero-padded (or
/// truncated, when longer) to the reference length.
inline double system_distance(std::span<const double> h_ref, std::span<const double> h_est) {
    double ref = 0.0, err = 0.0;
    for (std::size_t i = 0; i < h_ref.size(); ++i) {
        const double e = h_ref[i] - (i < h_est.size() ? h_est[i] : 0.0);
        ref += h_ref[i] * h_ref[i];
        err += e * e;
    }
    require(ref > 0.0, "reference response has zero norm");
    for (std::size_t i = h_ref.size(); i < h_est.size(); ++i) err += h_est[i] * h_est[i];
    return ratio_db(err, ref);
}

/// 10 log10(|h_curr - h_prev|^2 / |h_prev|^2).
inline double tvi(std::span<const double> h_curr, std::span<const double> h_prev) {
    require(h_curr.size() == h_prev.size(), "consecutive responses differ in length");
    double ref = 0.0, diff = 0.0;
    for (std::size_t i = 0; i < h_prev.size(); ++i) {
        const double d = h_curr[i] - h_prev[i];
        ref += h_prev[i] * h_prev[i];
        diff += d * d;
    }
    require(ref > 0.0, "previous response has zero norm");
    return ratio_db(diff, ref);
}

/// Per-sample, per-channel traces. Entries before their definition point are NaN:
/// shifted distances before k = shift, TVI at k = 0.
struct DistanceSeries {
    std::size_t channels = 0;
    std::size_t length = 0;
    std::size_t valid_start = 0;  ///< 2 S L
    std::size_t shift = 0;        ///< L S / 2
    std::vector<std::vector<double>> distance;
    std::vector<std::vector<double>> shifted;
    std::vector<std::vector<double>> tvi;
};

/// D_s(k) of `est` against the references used by the simulation, the variant
/// comparing h_{k - LS/2, s} with the estimate at k, and the TVI of the references.
inline DistanceSeries distance_series(const ReferenceSet& refs, const sysid::Estimates& est) {
    require(refs.channels() == est.channels, "estimate and reference channel counts differ");
    require(refs.length() == est.length(), "estimate and reference lengths differ");
    const std::size_t S = est.channels, N = est.length(), L = est.taps;
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    DistanceSeries out;
    out.channels = S;
    out.length = N;
    out.valid_start = 2 * S * L;
    out.shift = L * S / 2;
    out.distance.assign(S, std::vector<double>(N, nan));
    out.shifted.assign(S, std::vector<double>(N, nan));
    out.tvi.assign(S, std::vector<double>(N, nan));
    std::vector<double> h(L);
    for (std::size_t k = 0; k < N; ++k)
        for (std::size_t s = 0; s < S; ++s) {
            const auto col = est.response(k, s);
            for (std::size_t i = 0; i < L; ++i) h[i] = col(sysid::Index(i));
            out.distance[s][k] = system_distance(refs.at(k, s).taps, h);
            if (k >= out.shift) out.shifted[s][k] = system_distance(refs.at(k - out.shift, s).taps, h);
            if (k >= 1) out.tvi[s][k] = tvi(refs.at(k, s).taps, refs.at(k - 1, s).taps);
        }
    return out;
}

/// Mean of D_s(k) over k in [2SL, N_t) and all channels. By default the sum is
/// divided by S (N_t - 2SL); paper_literal divides by (N_t - 2SL) only.
inline double average_system_distance(const std::vector<std::vector<double>>& series, std::size_t S, std::size_t L,
                                      std::size_t total, bool paper_literal = false) {
    const std::size_t start = 2 * S * L;
    require(total > start, "no samples after the initial convergence phase");
    require(series.size() == S, "series channel count differs from S");
    double sum = 0.0;
    for (const auto& ch : series) {
        require(ch.size() >= total, "series shorter than N_t");
        for (std::size_t k = start; k < total; ++k) {
            require(std::isfinite(ch[k]), "series undefined inside the averaging range");
            sum += ch[k];
        }
    }
    const double count = double(total - start) * (paper_literal ? 1.0 : double(S));
    return sum / count;
}

} // namespace conthrtf
