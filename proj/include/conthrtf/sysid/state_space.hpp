#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "conthrtf/errors.hpp"

namespace conthrtf::sysid {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Learnable parameters of the linear Gaussian state-space model
///   z_k = A z_{k-1} + q_k,  q_k ~ N(0, Gamma)
///   y_k = x_k^T z_k + n_k,  n_k ~ N(0, Sigma)
/// with z_1 ~ N(mu0, P0).
struct StateSpaceParams {
    MatrixXd A;
    MatrixXd Gamma;
    double Sigma = 1.0;
    VectorXd mu0;
    MatrixXd P0;

    Index dim() const { return A.rows(); }

    /// A = a*I, Gamma = gamma*I, P0 = p0*I, mu0 = mu0_value.
    static StateSpaceParams isotropic(Index n, double a, double gamma, double sigma, double mu0_value, double p0) {
        StateSpaceParams p;
        p.A = a * MatrixXd::Identity(n, n);
        p.Gamma = gamma * MatrixXd::Identity(n, n);
        p.Sigma = sigma;
        p.mu0 = VectorXd::Constant(n, mu0_value);
        p.P0 = p0 * MatrixXd::Identity(n, n);
        return p;
    }

    void validate(double tol = 1e-10) const {
        const Index n = dim();
        require(n >= 1, "state dimension must be positive");
        require(A.cols() == n && Gamma.rows() == n && Gamma.cols() == n && P0.rows() == n && P0.cols() == n &&
                    mu0.size() == n,
                "state-space parameter dimensions disagree");
        require(std::isfinite(Sigma) && Sigma > 0.0, "measurement noise variance must be positive");
        require(A.allFinite() && Gamma.allFinite() && mu0.allFinite() && P0.allFinite(),
                "state-space parameters must be finite");
        check_psd(Gamma, "Gamma", tol);
        check_psd(P0, "P0", tol);
    }

private:
    static void check_psd(const MatrixXd& m, const char* name, double tol) {
        const double scale = std::max(std::abs(m.trace()), 1e-300);
        require((m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale, std::string(name) + " is not symmetric");
        if (m.rows() <= 64) {
            Eigen::SelfAdjointEigenSolver<MatrixXd> es(m, Eigen::EigenvaluesOnly);
            require(es.eigenvalues().minCoeff() >= -tol * scale, std::string(name) + " is not positive semidefinite");
        } else {
            require(m.diagonal().minCoeff() >= -tol * scale, std::string(name) + " has negative diagonal entries");
        }
    }
};

/// Half-open range of sample indices [begin, end).
struct SampleRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};

/// Read-only view on the identification inputs: S loudspeaker signals, the
/// microphone signal and the number of taps L per loudspeaker.
struct SignalView {
    std::span<const std::vector<double>> excitation;
    std::span<const double> mic;
    std::size_t taps = 0;

    std::size_t channels() const { return excitation.size(); }
    std::size_t length() const { return mic.size(); }
    Index state_dim() const { return Index(taps * channels()); }

    void validate() const {
        require(taps >= 1, "tap count must be positive");
        require(!excitation.empty(), "at least one excitation channel is required");
        for (const auto& ch : excitation)
            require(ch.size() == mic.size(), "excitation and microphone signals differ in length");
    }

    void validate_range(SampleRange r) const {
        require(r.begin < r.end && r.end <= length(), "sample range outside the signals");
    }

    /// Stacked regressor x_k = [x_1(k), ..., x_1(k-L+1), ..., x_S(k-L+1)], zero before the start.
    void regressor(std::size_t k, VectorXd& x) const {
        x.resize(state_dim());
        for (std::size_t s = 0; s < channels(); ++s) {
            const auto& ch = excitation[s];
            double* dst = x.data() + s * taps;
            const std::size_t avail = std::min(taps, k + 1);
            for (std::size_t kappa = 0; kappa < avail; ++kappa) dst[kappa] = ch[k - kappa];
            for (std::size_t kappa = avail; kappa < taps; ++kappa) dst[kappa] = 0.0;
        }
    }
};

/// Exact symmetrization (M + M^T) / 2.
inline void symmetrize(MatrixXd& m) {
    const Index n = m.rows();
    for (Index j = 0; j < n; ++j)
        for (Index i = j + 1; i < n; ++i) {
            const double v = 0.5 * (m(i, j) + m(j, i));
            m(i, j) = v;
            m(j, i) = v;
        }
}

/// Cholesky factorization with jitter escalation: if m is not numerically
/// positive definite, eps * trace(m) * I is added for eps = 1e-12, 1e-10, 1e-8.
template <class Describe>
Eigen::LLT<MatrixXd> robust_cholesky(const MatrixXd& m, Describe&& describe) {
    Eigen::LLT<MatrixXd> llt(m);
    if (llt.info() == Eigen::Success) return llt;
    const double tr = std::abs(m.trace());
    for (double eps : {1e-12, 1e-10, 1e-8}) {
        MatrixXd jittered = m;
        jittered.diagonal().array() += eps * tr;
        llt.compute(jittered);
        if (llt.info() == Eigen::Success) return llt;
    }
    throw NumericalError("symmetric factorization failed for " + std::string(describe()));
}

/// True when `m` is exactly the identity; used to skip products that would
/// reproduce their operand bit for bit.
inline bool is_exact_identity(const MatrixXd& m) {
    if (m.rows() != m.cols()) return false;
    for (Index j = 0; j < m.cols(); ++j)
        for (Index i = 0; i < m.rows(); ++i)
            if (m(i, j) != (i == j ? 1.0 : 0.0)) return false;
    return true;
}

} // namespace conthrtf::sysid
