#pragma once

// Kalman filter and Rauch-Tung-Striebel smoother for the time-variant
// impulse-response model with scalar observations y_k = x_k^T z_k + n_k.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "conthrtf/sysid/state_space.hpp"

namespace conthrtf::sysid {

/// Stored result of a forward pass over `range`. Index i refers to sample range.begin + i.
struct FilterPass {
    SampleRange range;
    std::vector<VectorXd> mu;         ///< a-posteriori mean
    std::vector<MatrixXd> V;          ///< a-posteriori covariance
    std::vector<MatrixXd> P_prior;    ///< a-priori covariance used at step i (P_{k-1})
    std::vector<VectorXd> K;          ///< Kalman gain
    std::vector<double> innovation;
    std::vector<double> innovation_variance;
    double log_likelihood = 0.0;

    std::size_t size() const { return mu.size(); }
};

/// Expected sufficient statistics of one segment of N samples (local k = 0..N-1):
///   Szz = sum_{k>=1} E[z_k z_k^T],  S11 = sum_{k<=N-2} E[z_k z_k^T],
///   Sz1 = sum_{k>=1} E[z_k z_{k-1}^T],
///   sigma_sum = sum_k y_k^2 - 2 x_k^T mu_hat_k y_k + x_k^T E[z_k z_k^T] x_k.
struct SufficientStats {
    MatrixXd Szz;
    MatrixXd Sz1;
    MatrixXd S11;
    double sigma_sum = 0.0;
    std::size_t N = 0;
    VectorXd mu_hat_first;
    MatrixXd V_hat_first;
};

enum class SmootherMode {
    full,        ///< keep every smoothed covariance and smoother gain
    accumulate,  ///< fold the statistics in during the sweep, keep only means
    means_only   ///< smoothed means only, no statistics
};

struct SmoothPass {
    SampleRange range;
    MatrixXd mu_hat;              ///< column i = smoothed mean at range.begin + i
    std::vector<MatrixXd> V_hat;  ///< full mode only
    std::vector<MatrixXd> J;      ///< full mode only, J[i] for i < N-1
    std::optional<SufficientStats> stats;
    double log_likelihood = 0.0;
};

namespace detail {

/// J = (A V)^T P^{-1} with P = L L^T, as two triangular solves from the right.
inline void smoother_gain(const Eigen::LLT<MatrixXd>& llt, const MatrixXd& AV, MatrixXd& J) {
    J = AV.transpose();
    llt.matrixU().solveInPlace<Eigen::OnTheRight>(J);
    llt.matrixL().solveInPlace<Eigen::OnTheRight>(J);
}

inline constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2 pi)

/// Forward recursion with explicit access to every intermediate quantity.
/// step() performs the measurement update at the current sample; predict()
/// forms the prior of the next one. The pair can be resumed from a
/// checkpoint (mu_{k-1}, A V_{k-1}) and then reproduces the original pass bit
/// for bit.
class ForwardRecursion {
public:
    ForwardRecursion(const StateSpaceParams& params, const SignalView& signals, SampleRange range)
        : p_(params), sig_(signals), range_(range), a_identity_(is_exact_identity(params.A)) {
        restart();
    }

    void restart() {
        k_ = 0;
        m_pred_ = p_.mu0;
        P_ = p_.P0;
        log_likelihood_ = 0.0;
    }

    void resume(std::size_t k, const VectorXd& mu_prev, const MatrixXd& av_prev) {
        k_ = k;
        mu_ = mu_prev;
        AV_ = av_prev;
        predict();
    }

    std::size_t index() const { return k_; }
    bool done() const { return k_ >= range_.size(); }

    void step() {
        const std::size_t t = range_.begin + k_;
        sig_.regressor(t, x_);
        u_.noalias() = P_ * x_;
        r_ = x_.dot(u_) + p_.Sigma;
        if (!(r_ > 0.0) || !std::isfinite(r_))
            throw NumericalError("non-positive innovation variance at sample " + std::to_string(t));
        e_ = sig_.mic[t] - x_.dot(m_pred_);
        gain_ = u_ / r_;
        mu_ = m_pred_ + gain_ * e_;
        posterior_covariance(P_, u_, r_, V_);
        log_likelihood_ += -0.5 * (kLog2Pi + std::log(r_) + e_ * e_ / r_);
        if (a_identity_)
            AV_ = V_;
        else
            AV_.noalias() = p_.A * V_;
        ++k_;
    }

    /// Prior (A mu, A V A^T + Gamma) for the sample following the last step().
    void predict() {
        if (a_identity_) {
            m_pred_ = mu_;
            P_ = AV_;
        } else {
            m_pred_.noalias() = p_.A * mu_;
            P_.noalias() = AV_ * p_.A.transpose();
        }
        P_ += p_.Gamma;
        symmetrize(P_);
    }

    /// V = (I - K x^T) P = P - u u^T / r with u = P x, symmetrized.
    static void posterior_covariance(const MatrixXd& P, const VectorXd& u, double r, MatrixXd& V) {
        V = P;
        V.noalias() -= (u / r) * u.transpose();
        symmetrize(V);
    }

    const VectorXd& regressor() const { return x_; }
    const VectorXd& mean() const { return mu_; }
    const MatrixXd& covariance() const { return V_; }
    const MatrixXd& prior_covariance() const { return P_; }  ///< valid between step() and predict()
    const MatrixXd& av() const { return AV_; }
    const VectorXd& u() const { return u_; }
    const VectorXd& gain() const { return gain_; }
    double innovation() const { return e_; }
    double innovation_variance() const { return r_; }
    double log_likelihood() const { return log_likelihood_; }
    bool a_identity() const { return a_identity_; }

private:
    const StateSpaceParams& p_;
    const SignalView& sig_;
    SampleRange range_;
    bool a_identity_;
    std::size_t k_ = 0;
    VectorXd x_, u_, gain_, mu_, m_pred_;
    MatrixXd P_, V_, AV_;
    double r_ = 0.0, e_ = 0.0;
    double log_likelihood_ = 0.0;
};

/// Backward sweep that folds the smoothed moments into SufficientStats as it
/// goes, so that neither the smoothed covariances nor the smoother gains of
/// past samples are retained. Feed last() once, then step() for k = N-2..0.
///
/// The lag-one cross moment uses
///   V_hat_{k+1} J_k^T = (J_k (V_hat_{k+1} - P_k))^T + A V_k,
/// which follows from J_k P_k = V_k A^T and reuses the product already formed
/// for the covariance update.
class BackwardSweep {
public:
    BackwardSweep(const StateSpaceParams& params, const SignalView& signals, SampleRange range, bool want_stats)
        : p_(params), sig_(signals), range_(range), want_stats_(want_stats), a_identity_(is_exact_identity(params.A)) {
        const Index n = params.dim();
        mu_hat_.resize(n, Index(range.size()));
        if (want_stats_) {
            szz_v_ = MatrixXd::Zero(n, n);
            s11_v_ = MatrixXd::Zero(n, n);
            sz1_v_ = MatrixXd::Zero(n, n);
        }
    }

    void last(const VectorXd& mu, const MatrixXd& V) {
        const std::size_t k = range_.size() - 1;
        mh_ = mu;
        if (want_stats_) vh_ = V;
        absorb(k);
    }

    /// mu, V: filtered moments at local index k; P_next: a-priori covariance of
    /// sample k+1; AV: A V_k.
    void step(std::size_t k, const VectorXd& mu, const MatrixXd& V, const MatrixXd& P_next, const MatrixXd& AV) {
        const auto llt = robust_cholesky(P_next, [&] {
            return "a-priori covariance at sample " + std::to_string(range_.begin + k + 1);
        });
        if (a_identity_)
            diff_ = mh_ - mu;
        else
            diff_.noalias() = mh_ - p_.A * mu;
        if (!want_stats_) {
            w_ = llt.solve(diff_);
            mh_ = mu;
            mh_.noalias() += AV.transpose() * w_;
        } else {
            smoother_gain(llt, AV, j_);
            mh_ = mu;
            mh_.noalias() += j_ * diff_;
            d_ = vh_ - P_next;
            m_.noalias() = j_ * d_;
            sz1_v_ += m_.transpose();
            sz1_v_ += AV;
            vh_ = V;
            vh_.noalias() += m_ * j_.transpose();
            symmetrize(vh_);
        }
        absorb(k);
    }

    /// Means-only step without A V_k: J_k v = V_k A^T P_k^{-1} v.
    void step_means(std::size_t k, const VectorXd& mu, const MatrixXd& V, const MatrixXd& P_next) {
        const auto llt = robust_cholesky(P_next, [&] {
            return "a-priori covariance at sample " + std::to_string(range_.begin + k + 1);
        });
        if (a_identity_) {
            diff_ = mh_ - mu;
            w_ = llt.solve(diff_);
        } else {
            diff_.noalias() = mh_ - p_.A * mu;
            at_w_ = llt.solve(diff_);
            w_.noalias() = p_.A.transpose() * at_w_;
        }
        mh_ = mu;
        mh_.noalias() += V * w_;
        absorb(k);
    }

    SmoothPass finish(double log_likelihood) {
        SmoothPass out;
        out.range = range_;
        out.log_likelihood = log_likelihood;
        if (want_stats_) {
            const Index N = Index(range_.size());
            SufficientStats st;
            st.N = range_.size();
            st.sigma_sum = sigma_sum_;
            st.mu_hat_first = mu_hat_.col(0);
            st.V_hat_first = vh_first_;
            const auto later = mu_hat_.rightCols(N - 1);
            const auto earlier = mu_hat_.leftCols(N - 1);
            st.Szz = szz_v_;
            st.Szz.noalias() += later * later.transpose();
            st.S11 = s11_v_;
            st.S11.noalias() += earlier * earlier.transpose();
            st.Sz1 = sz1_v_;
            st.Sz1.noalias() += later * earlier.transpose();
            symmetrize(st.Szz);
            symmetrize(st.S11);
            out.stats = std::move(st);
        }
        out.mu_hat = std::move(mu_hat_);
        return out;
    }

private:
    void absorb(std::size_t k) {
        mu_hat_.col(Index(k)) = mh_;
        if (!want_stats_) return;
        const std::size_t N = range_.size();
        const std::size_t t = range_.begin + k;
        sig_.regressor(t, x_);
        const double y = sig_.mic[t];
        const double cm = x_.dot(mh_);
        sigma_sum_ += y * y - 2.0 * cm * y + x_.dot(vh_ * x_) + cm * cm;
        if (k >= 1) szz_v_ += vh_;
        if (k + 2 <= N) s11_v_ += vh_;
        if (k == 0) vh_first_ = vh_;
    }

    const StateSpaceParams& p_;
    const SignalView& sig_;
    SampleRange range_;
    bool want_stats_;
    bool a_identity_;
    MatrixXd mu_hat_;
    VectorXd mh_, diff_, x_, w_, at_w_;
    MatrixXd vh_, vh_first_, j_, d_, m_;
    MatrixXd szz_v_, s11_v_, sz1_v_;
    double sigma_sum_ = 0.0;
};

} // namespace detail

/// Kalman filter over `range`, storing every intermediate quantity. The first
/// sample uses the prior N(mu0, P0); later ones the prediction A mu, A V A^T + Gamma.
/// The observation is scalar, so the gain needs no matrix inverse.
inline FilterPass kalman_forward(const StateSpaceParams& params, const SignalView& signals, SampleRange range) {
    params.validate();
    signals.validate();
    signals.validate_range(range);
    require(params.dim() == signals.state_dim(), "parameter dimension does not match L*S");
    detail::ForwardRecursion fwd(params, signals, range);
    FilterPass pass;
    pass.range = range;
    const std::size_t N = range.size();
    pass.mu.reserve(N);
    pass.V.reserve(N);
    pass.P_prior.reserve(N);
    pass.K.reserve(N);
    while (!fwd.done()) {
        fwd.step();
        pass.mu.push_back(fwd.mean());
        pass.V.push_back(fwd.covariance());
        pass.P_prior.push_back(fwd.prior_covariance());
        pass.K.push_back(fwd.gain());
        pass.innovation.push_back(fwd.innovation());
        pass.innovation_variance.push_back(fwd.innovation_variance());
        if (!fwd.done()) fwd.predict();
    }
    pass.log_likelihood = fwd.log_likelihood();
    return pass;
}

/// Log-likelihood by prediction-error decomposition,
///   sum_k -1/2 ln(2 pi r_k) - e_k^2 / (2 r_k).
inline double log_likelihood(const StateSpaceParams& params, const SignalView& signals, SampleRange range) {
    params.validate();
    signals.validate();
    signals.validate_range(range);
    require(params.dim() == signals.state_dim(), "parameter dimension does not match L*S");
    detail::ForwardRecursion fwd(params, signals, range);
    while (!fwd.done()) {
        fwd.step();
        if (!fwd.done()) fwd.predict();
    }
    return fwd.log_likelihood();
}

/// Rauch-Tung-Striebel smoother over a stored forward pass. full mode keeps
/// V_hat and J for every sample and derives the statistics from them;
/// accumulate mode folds them in during the sweep.
inline SmoothPass kalman_backward(const StateSpaceParams& params, const FilterPass& pass, const SignalView& signals,
                                  SmootherMode mode) {
    const std::size_t N = pass.size();
    require(N >= 1 && N == pass.range.size(), "filter pass does not cover its range");
    const Index n = params.dim();
    if (mode != SmootherMode::full) {
        detail::BackwardSweep sweep(params, signals, pass.range, mode == SmootherMode::accumulate);
        sweep.last(pass.mu[N - 1], pass.V[N - 1]);
        MatrixXd av;
        for (std::size_t i = N - 1; i-- > 0;) {
            if (mode == SmootherMode::means_only) {
                sweep.step_means(i, pass.mu[i], pass.V[i], pass.P_prior[i + 1]);
                continue;
            }
            av.noalias() = params.A * pass.V[i];
            sweep.step(i, pass.mu[i], pass.V[i], pass.P_prior[i + 1], av);
        }
        return sweep.finish(pass.log_likelihood);
    }

    SmoothPass out;
    out.range = pass.range;
    out.log_likelihood = pass.log_likelihood;
    out.mu_hat.resize(n, Index(N));
    out.V_hat.resize(N);
    out.J.resize(N > 0 ? N - 1 : 0);
    VectorXd mh = pass.mu[N - 1];
    out.mu_hat.col(Index(N - 1)) = mh;
    out.V_hat[N - 1] = pass.V[N - 1];
    for (std::size_t i = N - 1; i-- > 0;) {
        const MatrixXd& P = pass.P_prior[i + 1];
        const auto llt = robust_cholesky(P, [&] {
            return "a-priori covariance at sample " + std::to_string(pass.range.begin + i + 1);
        });
        const MatrixXd av = params.A * pass.V[i];
        MatrixXd J;
        detail::smoother_gain(llt, av, J);
        mh = pass.mu[i] + J * (mh - params.A * pass.mu[i]);
        MatrixXd vh = pass.V[i] + J * (out.V_hat[i + 1] - P) * J.transpose();
        symmetrize(vh);
        out.mu_hat.col(Index(i)) = mh;
        out.V_hat[i] = std::move(vh);
        out.J[i] = std::move(J);
    }

    SufficientStats st;
    st.N = N;
    st.Szz = MatrixXd::Zero(n, n);
    st.S11 = MatrixXd::Zero(n, n);
    st.Sz1 = MatrixXd::Zero(n, n);
    VectorXd x;
    for (std::size_t i = 0; i < N; ++i) {
        const VectorXd m = out.mu_hat.col(Index(i));
        const MatrixXd second = out.V_hat[i] + m * m.transpose();
        if (i >= 1) {
            st.Szz += second;
            st.Sz1 += out.V_hat[i] * out.J[i - 1].transpose() + m * out.mu_hat.col(Index(i - 1)).transpose();
        }
        if (i + 2 <= N) st.S11 += second;
        const std::size_t t = pass.range.begin + i;
        signals.regressor(t, x);
        const double y = signals.mic[t];
        st.sigma_sum += y * y - 2.0 * x.dot(m) * y + x.dot(second * x);
    }
    symmetrize(st.Szz);
    symmetrize(st.S11);
    st.mu_hat_first = out.mu_hat.col(0);
    st.V_hat_first = out.V_hat[0];
    out.stats = std::move(st);
    return out;
}

} // namespace conthrtf::sysid
