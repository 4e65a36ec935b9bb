#pragma once

// LDS-EM on one segment: E-step by Kalman smoothing, closed-form M-step.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "conthrtf/sysid/kalman.hpp"

namespace conthrtf::sysid {

inline constexpr std::size_t kDefaultMemoryBudget = std::size_t(3072) << 20;

struct SegmentSmoothing {
    MatrixXd mu_hat;
    std::optional<SufficientStats> stats;
    double log_likelihood = 0.0;
};

namespace detail {

/// Per-step record of a forward pass. V_k is rebuilt from (P_{k-1}, u_k, r_k)
/// with the same arithmetic as the forward recursion, so it matches bit for bit.
struct StepRecord {
    MatrixXd P;
    MatrixXd AV;  // stats mode only
    VectorXd u;
    VectorXd mu;
    double r = 0.0;
};

inline std::size_t record_bytes(Index n, bool stats) {
    const std::size_t nn = std::size_t(n) * std::size_t(n) * sizeof(double);
    return (stats ? 2 * nn : nn) + 2 * std::size_t(n) * sizeof(double) + 64;
}

inline void capture(const ForwardRecursion& fwd, bool stats, StepRecord& rec) {
    rec.P = fwd.prior_covariance();
    if (stats) rec.AV = fwd.av();
    rec.u = fwd.u();
    rec.mu = fwd.mean();
    rec.r = fwd.innovation_variance();
}

} // namespace detail

/// Forward filtering and backward smoothing over `range` within a memory
/// budget. When the per-step records of the whole range do not fit, the range
/// is cut into blocks; only (mu, A V) at block boundaries is kept from the first
/// pass and each block is re-filtered from its checkpoint before its backward
/// sweep. Results do not depend on the block size.
inline SegmentSmoothing smooth_segment(const StateSpaceParams& params, const SignalView& signals, SampleRange range,
                                       bool with_stats, std::size_t memory_budget = kDefaultMemoryBudget) {
    params.validate();
    signals.validate();
    signals.validate_range(range);
    require(params.dim() == signals.state_dim(), "parameter dimension does not match L*S");
    const std::size_t N = range.size();
    const std::size_t per_step = detail::record_bytes(params.dim(), with_stats);
    const std::size_t block = std::clamp<std::size_t>(memory_budget / per_step, 1, N);
    const std::size_t blocks = (N + block - 1) / block;
    const std::size_t last_begin = (blocks - 1) * block;

    struct Checkpoint {
        VectorXd mu;
        MatrixXd AV;
    };
    std::vector<Checkpoint> checkpoints(blocks);
    std::vector<detail::StepRecord> records(N - last_begin);

    detail::ForwardRecursion fwd(params, signals, range);
    while (!fwd.done()) {
        const std::size_t i = fwd.index();
        if (i > 0 && i % block == 0) checkpoints[i / block] = {fwd.mean(), fwd.av()};
        fwd.step();
        if (i >= last_begin) detail::capture(fwd, with_stats, records[i - last_begin]);
        if (!fwd.done()) fwd.predict();
    }
    const double ll = fwd.log_likelihood();

    detail::BackwardSweep sweep(params, signals, range, with_stats);
    MatrixXd V, P_next;
    for (std::size_t b = blocks; b-- > 0;) {
        const std::size_t begin = b * block;
        const std::size_t end = std::min(N, begin + block);
        if (b + 1 < blocks) {
            records.resize(end - begin);
            if (b == 0)
                fwd.restart();
            else
                fwd.resume(begin, checkpoints[b].mu, checkpoints[b].AV);
            for (std::size_t i = begin; i < end; ++i) {
                fwd.step();
                detail::capture(fwd, with_stats, records[i - begin]);
                if (i + 1 < end) fwd.predict();
            }
        }
        for (std::size_t i = end; i-- > begin;) {
            const auto& rec = records[i - begin];
            detail::ForwardRecursion::posterior_covariance(rec.P, rec.u, rec.r, V);
            if (i == N - 1)
                sweep.last(rec.mu, V);
            else if (with_stats)
                sweep.step(i, rec.mu, V, P_next, rec.AV);
            else
                sweep.step_means(i, rec.mu, V, P_next);
            P_next = rec.P;
        }
    }
    SmoothPass pass = sweep.finish(ll);
    return {std::move(pass.mu_hat), std::move(pass.stats), ll};
}

/// Closed-form parameter update from smoothed statistics:
///   A = Sz1 S11^{-1}
///   Gamma = (Szz - Sz1 A^T - A Sz1^T + A S11 A^T) / (N - 1), projected onto the PSD cone
///   Sigma = sigma_sum / N, mu0 = mu_hat_1, P0 = V_hat_1.
inline StateSpaceParams em_mstep(const SufficientStats& st, const std::string& context = "segment") {
    require(st.N >= 2, "the parameter update needs at least two samples");
    StateSpaceParams p;
    const auto llt = robust_cholesky(st.S11, [&] { return "second-moment sum of " + context; });
    p.A = llt.solve(st.Sz1.transpose()).transpose();
    if (!p.A.allFinite()) throw NumericalError("non-finite state transition update in " + context);

    MatrixXd G = st.Szz;
    const MatrixXd cross = st.Sz1 * p.A.transpose();
    G -= cross;
    G -= cross.transpose();
    G.noalias() += p.A * st.S11 * p.A.transpose();
    G /= double(st.N - 1);
    symmetrize(G);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(G);
    if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition of process noise failed in " + context);
    const VectorXd lambda = es.eigenvalues().cwiseMax(0.0);
    p.Gamma = es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose();
    symmetrize(p.Gamma);
    p.Gamma.diagonal().array() += 1e-12;

    p.Sigma = std::max(st.sigma_sum / double(st.N), 1e-12);
    p.mu0 = st.mu_hat_first;
    p.P0 = st.V_hat_first;
    symmetrize(p.P0);
    return p;
}

struct EmOptions {
    std::size_t iterations = 10;
    std::size_t memory_budget = kDefaultMemoryBudget;
};

struct EmResult {
    StateSpaceParams params;                 ///< parameters after the last M-step
    MatrixXd mu_hat;                         ///< final smoothed means, one column per sample
    std::vector<double> log_likelihoods;     ///< one per E-step, the last from the final smoothing
};

/// `iterations` rounds of E-step + M-step starting from `init`, then one more
/// smoothing pass with the final parameters.
inline EmResult em_fit_segment(const SignalView& signals, SampleRange window, const StateSpaceParams& init,
                               const EmOptions& options = {}, const std::string& context = "segment") {
    EmResult out;
    out.params = init;
    for (std::size_t it = 0; it < options.iterations; ++it) {
        const std::string where = context + ", iteration " + std::to_string(it + 1);
        try {
            SegmentSmoothing sm = smooth_segment(out.params, signals, window, true, options.memory_budget);
            out.log_likelihoods.push_back(sm.log_likelihood);
            out.params = em_mstep(*sm.stats, where);
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " (" + where + ")");
        }
    }
    try {
        SegmentSmoothing sm = smooth_segment(out.params, signals, window, false, options.memory_budget);
        out.log_likelihoods.push_back(sm.log_likelihood);
        out.mu_hat = std::move(sm.mu_hat);
    } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " (" + context + ", final smoothing)");
    }
    return out;
}

} // namespace conthrtf::sysid
