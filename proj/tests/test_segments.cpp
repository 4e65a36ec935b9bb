#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "conthrtf/metrics.hpp"
#include "conthrtf/sysid/diag_kalman.hpp"
#include "conthrtf/sysid/nlms.hpp"
#include "support/oracles.hpp"

using namespace conthrtf;
using namespace conthrtf::sysid;

TEST(PlanSegments, PaperDefaultsOnFourFrames) {
    const auto plan = plan_segments(4800, 1200, 1200, 1200);
    ASSERT_EQ(plan.segments.size(), 4u);
    const std::size_t frames[4][2] = {{0, 1200}, {1200, 2400}, {2400, 3600}, {3600, 4800}};
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(plan.segments[i].frame.begin, frames[i][0]);
        EXPECT_EQ(plan.segments[i].frame.end, frames[i][1]);
    }
    EXPECT_EQ(plan.segments[1].window.begin, 0u);
    EXPECT_EQ(plan.segments[1].window.end, 3600u);
    EXPECT_EQ(plan.segments[0].window.begin, 0u);
    EXPECT_EQ(plan.segments[0].window.end, 2400u);
    EXPECT_EQ(plan.segments[3].window.begin, 2400u);
    EXPECT_EQ(plan.segments[3].window.end, 4800u);
    EXPECT_TRUE(plan.segments[0].first);
    EXPECT_TRUE(plan.segments[3].last);
}

TEST(PlanSegments, ShortSignalIsOneSegment) {
    const auto plan = plan_segments(900, 1200, 1200, 1200);
    ASSERT_EQ(plan.segments.size(), 1u);
    EXPECT_EQ(plan.segments[0].frame.end, 900u);
    EXPECT_EQ(plan.segments[0].output.begin, 0u);
    EXPECT_EQ(plan.segments[0].output.end, 900u);
}

TEST(PlanSegments, OutputsTileTheSignal) {
    for (std::size_t total : {1u, 7u, 1199u, 1200u, 5000u, 24384u})
        for (std::size_t nf : {1u, 100u, 1200u}) {
            const auto plan = plan_segments(total, nf, 300, 500);
            std::size_t next = 0;
            for (const auto& seg : plan.segments) {
                EXPECT_EQ(seg.output.begin, next);
                EXPECT_LE(seg.window.begin, seg.output.begin);
                EXPECT_GE(seg.window.end, seg.output.end);
                EXPECT_GT(seg.output.size(), 0u);
                next = seg.output.end;
            }
            EXPECT_EQ(next, total);
        }
}

TEST(PlanSegments, ZeroFrameIsValidationError) {
    EXPECT_THROW(plan_segments(100, 0, 10, 10), ValidationError);
}

TEST(IdentifyProposed, SingleSegmentEqualsSegmentFit) {
    const auto prob = oracle::random_problem(3, 3, 1, 80);
    const auto plan = plan_segments(80, 100, 10, 10);
    ProposedOptions opt;
    opt.iterations = 3;
    const auto res = identify_proposed(prob.view(), plan, prob.params, opt);
    const auto fit = em_fit_segment(prob.view(), {0, 80}, prob.params, {3});
    EXPECT_EQ(res.estimates.z, fit.mu_hat);
    EXPECT_EQ(res.log_likelihoods[0], fit.log_likelihoods);
}

TEST(IdentifyProposed, SerialAndConcurrentAreBitIdentical) {
    const auto prob = oracle::random_problem(4, 2, 2, 300);
    const auto plan = plan_segments(300, 60, 40, 40);
    ProposedOptions serial;
    serial.iterations = 2;
    ProposedOptions parallel = serial;
    parallel.workers = 4;
    const auto a = identify_proposed(prob.view(), plan, prob.params, serial);
    const auto b = identify_proposed(prob.view(), plan, prob.params, parallel);
    EXPECT_EQ(a.estimates.z, b.estimates.z);
    EXPECT_EQ(a.log_likelihoods, b.log_likelihoods);
    for (std::size_t i = 0; i < plan.segments.size(); ++i) EXPECT_EQ(a.params[i]->A, b.params[i]->A);
}

TEST(IdentifyProposed, EstimatesComeFromTheOwningSegment) {
    const auto prob = oracle::random_problem(5, 2, 1, 200);
    const auto plan = plan_segments(200, 50, 30, 30);
    ProposedOptions opt;
    opt.iterations = 1;
    opt.retain = ParamRetention::first;
    const auto res = identify_proposed(prob.view(), plan, prob.params, opt);
    EXPECT_TRUE(res.params[0].has_value());
    EXPECT_FALSE(res.params[1].has_value());
    const auto& seg = plan.segments[2];
    const auto fit = em_fit_segment(prob.view(), seg.window, prob.params, {1});
    const Index off = Index(seg.output.begin - seg.window.begin);
    EXPECT_EQ(MatrixXd(res.estimates.z.middleCols(Index(seg.output.begin), Index(seg.output.size()))),
              MatrixXd(fit.mu_hat.middleCols(off, Index(seg.output.size()))));
}

TEST(IdentifyProposed, FailureNamesTheSegment) {
    std::vector<std::vector<double>> x{std::vector<double>(100, 0.0)};
    std::vector<double> y(100, 0.0);
    SignalView sig{x, y, 1};
    const auto plan = plan_segments(100, 25, 5, 5);
    auto init = StateSpaceParams::isotropic(1, 1.0, 0.0, 1.0, 0.0, 0.0);
    ProposedOptions opt;
    opt.iterations = 1;
    opt.workers = 2;
    try {
        identify_proposed(sig, plan, init, opt);
        FAIL() << "expected a numerical failure";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("segment 0"), std::string::npos) << e.what();
    }
}

TEST(Nlms, StaticSphereWithPseqConvergesWithin2LS) {
    const std::size_t L = 192;
    HrirCache cache(SphereConfig{});
    const auto ex = multichannel_pseq(L, 1, 6 * L, 7);
    const auto sim = simulate_measurement(LoudspeakerLayout::horizontal(), ex, {30.0, 0.0, 24000.0}, cache,
                                          kNoiselessSnr, 1);
    SignalView sig{ex.channels, sim.y, L};
    const auto est = nlms_run(sig);
    const auto series = distance_series(sim.references, est);
    for (std::size_t k = 2 * L; k < est.length(); ++k) ASSERT_LE(series.distance[0][k], -100.0) << k;
}

TEST(Nlms, ZeroExcitationNeverAdapts) {
    std::vector<std::vector<double>> x{std::vector<double>(50, 0.0)};
    std::vector<double> y(50, 1.0);
    SignalView sig{x, y, 4};
    const auto est = nlms_run(sig);
    EXPECT_EQ(est.z.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Nlms, StepZeroKeepsInitialization) {
    const auto prob = oracle::random_problem(9, 4, 1, 50);
    const auto est = nlms_run(prob.view(), {0.0, 1e-8});
    EXPECT_EQ(est.z.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_THROW(nlms_run(prob.view(), {2.5, 1e-8}), ValidationError);
    EXPECT_THROW(nlms_run(prob.view(), {1.0, 0.0}), ValidationError);
}

TEST(DiagKalman, ScalarToyMatchesHandRecursion) {
    std::vector<std::vector<double>> x{{1.0, 1.0, 1.0}};
    std::vector<double> y{1.0, 0.5, 2.0};
    SignalView sig{x, y, 1};
    DiagKalmanOptions opt;
    opt.sigma = 0.5;
    opt.time_constant = 1.0;
    opt.sample_rate = 1.0;
    const double alpha = std::exp(-1.0);
    // k = 1: P = 1, K = 1/1.5
    double P = 1.0, mu = 0.0, g = 0.0;
    std::vector<double> expect;
    for (std::size_t k = 0; k < 3; ++k) {
        if (k > 0) P += g;
        const double K = P / (P + 0.5);
        const double next = mu + K * (y[k] - mu);
        P = (1.0 - K) * P;
        g = alpha * g + (1.0 - alpha) * (next - mu) * (next - mu);
        mu = next;
        expect.push_back(mu);
    }
    EXPECT_NEAR(expect[0], 2.0 / 3.0, 1e-15);
    const auto run = diag_kalman_run(sig, opt);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(run.estimates.z(0, Index(k)), expect[k], 1e-14);
    EXPECT_NEAR(run.final_gamma(0), g, 1e-15);
}

TEST(DiagKalman, ProcessNoiseStaysNonNegative) {
    const auto prob = oracle::random_problem(12, 4, 2, 300);
    const auto run = diag_kalman_run(prob.view());
    EXPECT_GE(run.final_gamma.minCoeff(), 0.0);
    EXPECT_TRUE(run.estimates.z.allFinite());
}
