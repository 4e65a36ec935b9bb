#pragma once

// Segmented offline identification: EM-learned parameters per window,
// smoothed estimates kept only inside each segment's output range.

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "conthrtf/sysid/em.hpp"

namespace conthrtf::sysid {

struct Segment {
    SampleRange window;  ///< samples the parameters are learned on
    SampleRange frame;   ///< the N_f samples of the current frame
    SampleRange output;  ///< samples whose final estimate comes from this segment
    bool first = false;
    bool last = false;
};

struct SegmentPlan {
    std::size_t total = 0;
    std::size_t frame = 0;
    std::size_t lookback = 0;
    std::size_t lookahead = 0;
    std::vector<Segment> segments;
};

/// Frames of N_f samples tile [0, N_t) from the start (the final frame may be
/// shorter). Windows extend each frame by N_b / N_a samples, clipped to the
/// signal. The first segment also outputs its lookback part and the last its
/// lookahead part.
inline SegmentPlan plan_segments(std::size_t total, std::size_t frame, std::size_t lookback, std::size_t lookahead) {
    require(frame >= 1, "frame length N_f must be at least 1");
    require(total >= 1, "signal length N_t must be at least 1");
    SegmentPlan plan{total, frame, lookback, lookahead, {}};
    for (std::size_t f = 0; f < total; f += frame) {
        Segment seg;
        seg.frame = {f, std::min(total, f + frame)};
        seg.window = {f >= lookback ? f - lookback : 0, std::min(total, seg.frame.end + lookahead)};
        seg.output = seg.frame;
        plan.segments.push_back(seg);
    }
    plan.segments.front().first = true;
    plan.segments.front().output.begin = plan.segments.front().window.begin;
    plan.segments.back().last = true;
    plan.segments.back().output.end = plan.segments.back().window.end;
    return plan;
}

/// Per-sample estimates: column k stacks the S L-tap responses at sample k.
struct Estimates {
    std::size_t taps = 0;
    std::size_t channels = 0;
    MatrixXd z;  ///< (L*S) x N_t

    std::size_t length() const { return std::size_t(z.cols()); }
    auto response(std::size_t k, std::size_t s) const { return z.col(Index(k)).segment(Index(s * taps), Index(taps)); }
};

enum class ParamRetention { none, first, all };

struct ProposedOptions {
    std::size_t iterations = 10;
    std::size_t workers = 1;
    bool warm_start = false;  ///< start each segment from the previous segment's parameters (sequential)
    ParamRetention retain = ParamRetention::all;
    std::size_t memory_budget = kDefaultMemoryBudget;
};

struct ProposedResult {
    Estimates estimates;
    std::vector<std::optional<StateSpaceParams>> params;   ///< per segment, as retained
    std::vector<std::vector<double>> log_likelihoods;      ///< per segment, per E-step
};

/// Runs em_fit_segment on every segment of `plan` and assembles the final
/// estimates. Segments share only immutable inputs and each writes a disjoint
/// block of columns, so the result does not depend on scheduling.
inline ProposedResult identify_proposed(const SignalView& signals, const SegmentPlan& plan,
                                        const StateSpaceParams& init, const ProposedOptions& options = {}) {
    signals.validate();
    require(plan.total == signals.length(), "segment plan does not match the signal length");
    require(init.dim() == signals.state_dim(), "initial parameters do not match L*S");
    init.validate();
    const std::size_t count = plan.segments.size();
    ProposedResult out;
    out.estimates.taps = signals.taps;
    out.estimates.channels = signals.channels();
    out.estimates.z.resize(signals.state_dim(), Index(signals.length()));
    out.params.resize(count);
    out.log_likelihoods.resize(count);

    auto keep = [&](std::size_t i) {
        return options.retain == ParamRetention::all || (options.retain == ParamRetention::first && i == 0);
    };
    const EmOptions em{options.iterations, options.memory_budget};
    StateSpaceParams warm = init;

    auto run = [&](std::size_t i, const StateSpaceParams& start) {
        const Segment& seg = plan.segments[i];
        EmResult r = em_fit_segment(signals, seg.window, start, em, "segment " + std::to_string(i));
        const Index off = Index(seg.output.begin - seg.window.begin);
        out.estimates.z.middleCols(Index(seg.output.begin), Index(seg.output.size())) =
            r.mu_hat.middleCols(off, Index(seg.output.size()));
        out.log_likelihoods[i] = std::move(r.log_likelihoods);
        if (keep(i) || options.warm_start) out.params[i] = std::move(r.params);
    };

    if (options.warm_start || options.workers <= 1 || count == 1) {
        for (std::size_t i = 0; i < count; ++i) {
            run(i, options.warm_start ? warm : init);
            if (options.warm_start) {
                warm = *out.params[i];
                if (!keep(i)) out.params[i].reset();
            }
        }
        return out;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::size_t failed_index = count;
    std::mutex mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            {
                std::lock_guard lock(mutex);
                if (failure) return;
            }
            try {
                run(i, init);
            } catch (...) {
                std::lock_guard lock(mutex);
                if (i < failed_index) {
                    failed_index = i;
                    failure = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t n = std::min(options.workers, count);
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return out;
}

} // namespace conthrtf::sysid
