#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "conthrtf/excitation.hpp"

using namespace conthrtf;

namespace {

std::vector<double> periodic_autocorrelation(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<double> r(n, 0.0);
    for (std::size_t tau = 0; tau < n; ++tau)
        for (std::size_t k = 0; k < n; ++k) r[tau] += x[k] * x[(k + tau) % n];
    return r;
}

} // namespace

TEST(WhiteNoise, UnitVarianceAndIndependence) {
    const auto wn = gen_white_noise(3, 100000, 11);
    ASSERT_EQ(wn.channel_count(), 3u);
    std::vector<double> var(3, 0.0);
    for (std::size_t s = 0; s < 3; ++s) {
        for (double v : wn.channels[s]) var[s] += v * v;
        var[s] /= 100000.0;
        EXPECT_NEAR(var[s], 1.0, 0.05);
    }
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = a + 1; b < 3; ++b) {
            double c = 0.0;
            for (std::size_t k = 0; k < 100000; ++k) c += wn.channels[a][k] * wn.channels[b][k];
            EXPECT_LT(std::abs(c / 100000.0 / std::sqrt(var[a] * var[b])), 0.02);
        }
}

TEST(WhiteNoise, DeterministicPerSeed) {
    EXPECT_EQ(gen_white_noise(2, 1000, 5).channels, gen_white_noise(2, 1000, 5).channels);
    EXPECT_NE(gen_white_noise(1, 1000, 5).channels, gen_white_noise(1, 1000, 6).channels);
    EXPECT_EQ(gen_white_noise(1, 1000, 5).channels[0], gen_white_noise(3, 1000, 5).channels[0]);
}

TEST(WhiteNoise, RejectsEmptyShapes) {
    EXPECT_THROW(gen_white_noise(0, 10, 1), ValidationError);
    EXPECT_THROW(gen_white_noise(1, 0, 1), ValidationError);
}

TEST(Pseq, ImpulseConstruction) {
    const auto p = gen_pseq(4, 0, PseqConstruction::impulse);
    EXPECT_EQ(p, (std::vector<double>{2.0, 0.0, 0.0, 0.0}));
    EXPECT_EQ(periodic_autocorrelation(p), (std::vector<double>{4.0, 0.0, 0.0, 0.0}));
}

TEST(Pseq, PerfectAutocorrelationBruteForce) {
    for (std::size_t period : {192u, 191u, 576u}) {
        const auto p = gen_pseq(period, 3);
        const auto r = periodic_autocorrelation(p);
        EXPECT_NEAR(r[0], double(period), 1e-9 * double(period));
        for (std::size_t tau = 1; tau < period; ++tau) EXPECT_LE(std::abs(r[tau]) / r[0], 1e-9) << tau;
        double peak = 0.0;
        for (double v : p) peak = std::max(peak, std::abs(v));
        EXPECT_LE(peak, 4.0);
    }
}

TEST(Pseq, Deterministic) {
    EXPECT_EQ(gen_pseq(192, 9), gen_pseq(192, 9));
    EXPECT_NE(gen_pseq(192, 9), gen_pseq(192, 10));
}

TEST(MultichannelPseq, SingleChannelIsBaseSequence) {
    const auto ex = multichannel_pseq(192, 1, 1000, 4);
    const auto base = gen_pseq(192, 4);
    for (std::size_t k = 0; k < 1000; ++k) EXPECT_EQ(ex.channels[0][k], base[k % 192]);
}

TEST(MultichannelPseq, ShiftsByMultiplesOfL) {
    const auto ex = multichannel_pseq(192, 3, 2000, 4);
    EXPECT_EQ(ex.period, 576u);
    const auto base = gen_pseq(576, 4);
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t k = 0; k < 2000; ++k) ASSERT_EQ(ex.channels[s][k], base[(k + 576 - 192 * s) % 576]);
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t k = 0; k + 576 < 2000; ++k) ASSERT_EQ(ex.channels[s][k], ex.channels[s][k + 576]);
}

TEST(MultichannelPseq, StackedRegressorGramIsScaledIdentity) {
    const std::size_t L = 16, S = 3, P = L * S;
    const auto ex = multichannel_pseq(L, S, 3 * P, 21);
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(P, P);
    for (std::size_t k = P; k < 2 * P; ++k) {
        Eigen::VectorXd x(P);
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t kappa = 0; kappa < L; ++kappa) x(s * L + kappa) = ex.channels[s][k - kappa];
        G += x * x.transpose();
    }
    const Eigen::MatrixXd diff = G - double(P) * Eigen::MatrixXd::Identity(P, P);
    EXPECT_LE(diff.cwiseAbs().maxCoeff(), 1e-6 * double(P));
}

TEST(MultichannelPseq, RejectsSignalShorterThanPeriod) {
    EXPECT_THROW(multichannel_pseq(192, 3, 500, 1), ValidationError);
}
