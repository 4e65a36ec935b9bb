#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "conthrtf/sysid/segments.hpp"

namespace conthrtf::sysid {

struct DiagKalmanOptions {
    double sigma = 1e-6;           ///< fixed measurement noise variance
    double time_constant = 0.05;   ///< s, for the process-noise smoothing
    double sample_rate = 24000.0;
    double p0 = 1.0;               ///< P0 = p0 * I
};

struct DiagKalmanTrace {
    Estimates estimates;
    VectorXd final_gamma;
};

/// Kalman filter with A = I and a diagonal, time-varying process noise
///   Gamma_k = diag(g_{k-1}),  g_k = alpha g_{k-1} + (1 - alpha) (mu_k - mu_{k-1})^2,
/// alpha = exp(-1 / (time_constant * sample_rate)), g_0 = 0, mu_0 = 0.
/// The state covariance is kept in full.
inline DiagKalmanTrace diag_kalman_run(const SignalView& signals, const DiagKalmanOptions& options = {}) {
    signals.validate();
    require(options.sigma > 0.0, "fixed measurement noise variance must be positive");
    require(options.time_constant > 0.0 && options.sample_rate > 0.0, "time constant and sample rate must be positive");
    require(options.p0 >= 0.0, "initial covariance scale must be non-negative");
    const Index n = signals.state_dim();
    const double alpha = std::exp(-1.0 / (options.time_constant * options.sample_rate));
    DiagKalmanTrace out;
    out.estimates.taps = signals.taps;
    out.estimates.channels = signals.channels();
    out.estimates.z.resize(n, Index(signals.length()));
    VectorXd mu = VectorXd::Zero(n);
    VectorXd g = VectorXd::Zero(n);
    MatrixXd P = options.p0 * MatrixXd::Identity(n, n);
    VectorXd x, u, prev;
    for (std::size_t k = 0; k < signals.length(); ++k) {
        if (k > 0) P.diagonal() += g;
        signals.regressor(k, x);
        u.noalias() = P * x;
        const double r = x.dot(u) + options.sigma;
        if (!(r > 0.0) || !std::isfinite(r))
            throw NumericalError("non-positive innovation variance at sample " + std::to_string(k));
        const double e = signals.mic[k] - x.dot(mu);
        prev = mu;
        mu += (e / r) * u;
        P.noalias() -= (u / r) * u.transpose();
        symmetrize(P);
        g = alpha * g + (1.0 - alpha) * (mu - prev).cwiseAbs2();
        out.estimates.z.col(Index(k)) = mu;
    }
    out.final_gamma = g;
    return out;
}

} // namespace conthrtf::sysid
