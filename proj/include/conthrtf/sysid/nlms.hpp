#pragma once

#include <cstddef>

#include "conthrtf/sysid/segments.hpp"

namespace conthrtf::sysid {

struct NlmsOptions {
    double step = 1.0;
    double eps = 1e-8;
};

/// NLMS on the stacked regressor:
///   h_k = h_{k-1} + step * x_k e_k / (x_k^T x_k + eps),  e_k = y_k - x_k^T h_{k-1}.
/// Starts from zero; every sample's estimate is recorded.
inline Estimates nlms_run(const SignalView& signals, const NlmsOptions& options = {}) {
    signals.validate();
    require(options.step >= 0.0 && options.step <= 2.0, "NLMS step size must lie in [0, 2]");
    require(options.eps > 0.0, "NLMS regularization eps must be positive");
    const Index n = signals.state_dim();
    Estimates out;
    out.taps = signals.taps;
    out.channels = signals.channels();
    out.z.resize(n, Index(signals.length()));
    VectorXd h = VectorXd::Zero(n);
    VectorXd x;
    for (std::size_t k = 0; k < signals.length(); ++k) {
        signals.regressor(k, x);
        const double e = signals.mic[k] - x.dot(h);
        const double energy = x.squaredNorm();
        h += (options.step * e / (energy + options.eps)) * x;
        out.z.col(Index(k)) = h;
    }
    return out;
}

} // namespace conthrtf::sysid
