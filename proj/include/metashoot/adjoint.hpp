#pragma once

// Shooting objective E(alpha, z0) = sum_k (m_k(1) - q1(x_k(1)))^2 and its
// exact gradient.
//
// The gradient is the discrete adjoint of the RK4 scheme in dynamics.hpp:
// each backward step replays the four stages from the stored state and
// pulls the covector through them with the transposed Jacobian of the
// right-hand side. The result therefore matches finite differences of
// shoot() up to round-off, independently of the step size.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "metashoot/dynamics.hpp"
#include "metashoot/error.hpp"
#include "metashoot/kernels.hpp"
#include "metashoot/particles.hpp"

namespace metashoot {

/// Anything that can be evaluated and differentiated at a point: image
/// fields, analytic test functions.
template <typename F, int D>
concept ImageFunction = requires(const F& f, const Vec<D>& p) {
    { f.eval(p) } -> std::convertible_to<double>;
    { f.grad(p) } -> std::convertible_to<Vec<D>>;
};

template <int D>
struct AdjointState {
    PointArray<D> xi_x;
    PointArray<D> xi_z;
    Eigen::VectorXd xi_m;
    Eigen::VectorXd eta_alpha;

    static AdjointState zeros(Eigen::Index n) {
        return {PointArray<D>::Zero(n, D), PointArray<D>::Zero(n, D), Eigen::VectorXd::Zero(n),
                Eigen::VectorXd::Zero(n)};
    }
};

template <int D>
struct GradientReport {
    double energy = 0.0;
    PointArray<D> grad_z0;
    Eigen::VectorXd grad_alpha;
    /// |z_k(1) + alpha_k grad q1(x_k(1))| per particle.
    Eigen::VectorXd bc_residual;
};

template <int D, ImageFunction<D> Field>
double energy(const Trajectory<D>& traj, const Field& target) {
    const auto& s = traj.final();
    double e = 0.0;
    for (Eigen::Index k = 0; k < s.size(); ++k) {
        const double r = s.m[k] - target.eval(Vec<D>(s.x.row(k).transpose()));
        e += r * r;
    }
    return e;
}

/// Covector dE at t = 1: xi_x = -2 e grad q1, xi_m = 2 e, xi_z = 0.
template <int D, ImageFunction<D> Field>
AdjointState<D> terminal_adjoint(const Trajectory<D>& traj, const Field& target) {
    const auto& s = traj.final();
    auto out = AdjointState<D>::zeros(s.size());
    for (Eigen::Index k = 0; k < s.size(); ++k) {
        const Vec<D> p = s.x.row(k).transpose();
        const double e = s.m[k] - target.eval(p);
        out.xi_x.row(k) = (-2.0 * e * target.grad(p)).transpose();
        out.xi_m[k] = 2.0 * e;
    }
    return out;
}

namespace detail {

template <int D>
struct Pullback {
    ParticleState<D> state;  // m component is always zero
    Eigen::VectorXd alpha;
};

/// (dF/dtheta)^T lam and (dF/dalpha)^T lam at `s`.
template <int D>
Pullback<D> rhs_vjp(const ParticleState<D>& s, const Eigen::VectorXd& alpha, const SolverConfig& cfg,
                    const ParticleState<D>& lam) {
    const Eigen::Index n = s.size();
    Pullback<D> out{{PointArray<D>::Zero(n, D), Eigen::VectorXd::Zero(n), lam.x}, lam.m};
    const double inv_s2 = 1.0 / (cfg.sigma * cfg.sigma);
    const double* x = s.x.data();
    const double* z = s.z.data();
    const double* a = alpha.data();
    const double* lx = lam.x.data();
    const double* lm = lam.m.data();
    const double* lz = lam.z.data();
    double* bx = out.state.x.data();
    double* bz = out.state.z.data();
    double* ba = out.alpha.data();

    for (Eigen::Index j = 0; j < n; ++j) {
        const double* xj = x + j * D;
        const double* zj = z + j * D;
        for (Eigen::Index l = j + 1; l < n; ++l) {
            const double* xl = x + l * D;
            const double* zl = z + l * D;
            double r[D];
            double w[D];
            double r2 = 0.0;
            double rw = 0.0;
            for (int i = 0; i < D; ++i) {
                r[i] = xj[i] - xl[i];
                w[i] = lz[j * D + i] - lz[l * D + i];
                r2 += r[i] * r[i];
                rw += r[i] * w[i];
            }
            const double dist = std::sqrt(r2);
            const RadialTerms kv = radial_terms(cfg.kernel_v, dist);
            const RadialTerms kh = radial_terms(cfg.kernel_h, dist);

            const double zz = dot<D>(zj, zl);
            const double aa = inv_s2 * a[j] * a[l];
            // x' terms (velocity) and m' terms (intensity rate)
            const double s_v = dot<D>(lx + j * D, zl) + dot<D>(lx + l * D, zj);
            const double s_h = lm[j] * a[l] + lm[l] * a[j];
            const double radial = kv.d1 * s_v + kh.d1 * s_h;
            // z' terms: Hessians applied to w = lz_j - lz_l
            const double hv_r = kv.d2 * rw;
            const double hh_r = kh.d2 * rw;
            for (int i = 0; i < D; ++i) {
                const double hess_w = zz * (kv.d1 * w[i] + hv_r * r[i]) + aa * (kh.d1 * w[i] + hh_r * r[i]);
                const double gx = radial * r[i] - hess_w;
                bx[j * D + i] += gx;
                bx[l * D + i] -= gx;
                bz[j * D + i] += kv.value * lx[l * D + i] - zl[i] * kv.d1 * rw;
                bz[l * D + i] += kv.value * lx[j * D + i] - zj[i] * kv.d1 * rw;
            }
            ba[j] += kh.value * lm[l] - inv_s2 * a[l] * kh.d1 * rw;
            ba[l] += kh.value * lm[j] - inv_s2 * a[j] * kh.d1 * rw;
        }
    }
    return out;
}

}  // namespace detail

/// Integrates the adjoint backwards from t = 1 and returns the covector at
/// t = 0 together with eta(0) = dE/dalpha.
template <int D>
AdjointState<D> backprop(const Trajectory<D>& traj, const AdjointState<D>& terminal,
                         const Eigen::VectorXd& alpha, const SolverConfig& config) {
    config.validate();
    if (traj.states.size() < 2) throw InvalidArgument("backprop needs a stored trajectory");
    const Eigen::Index n = traj.initial().size();
    if (terminal.xi_x.rows() != n || terminal.xi_z.rows() != n || terminal.xi_m.size() != n ||
        terminal.eta_alpha.size() != n || alpha.size() != n) {
        throw InvalidArgument("adjoint shapes do not match the trajectory");
    }
    if (!terminal.xi_x.allFinite() || !terminal.xi_z.allFinite() || !terminal.xi_m.allFinite() ||
        !terminal.eta_alpha.allFinite()) {
        throw InvalidArgument("terminal adjoint has non-finite entries");
    }

    const double h = traj.dt;
    ParticleState<D> lam{terminal.xi_x, terminal.xi_m, terminal.xi_z};
    Eigen::VectorXd eta = terminal.eta_alpha;

    for (int step = traj.timesteps() - 1; step >= 0; --step) {
        const Rk4Stages<D> st = rk4_stages(traj.states[step], alpha, config, h);
        std::array<ParticleState<D>, 4> bar_k{
            detail::axpy(ParticleState<D>::zeros(n), h / 6.0, lam),
            detail::axpy(ParticleState<D>::zeros(n), h / 3.0, lam),
            detail::axpy(ParticleState<D>::zeros(n), h / 3.0, lam),
            detail::axpy(ParticleState<D>::zeros(n), h / 6.0, lam)};
        ParticleState<D> bar_state = lam;
        // stage inputs: s1 = s, s2 = s + h/2 k1, s3 = s + h/2 k2, s4 = s + h k3
        const std::array<double, 4> feed{0.0, 0.5 * h, 0.5 * h, h};
        for (int stage = 3; stage >= 0; --stage) {
            const auto pb = detail::rhs_vjp(st.inputs[stage], alpha, config, bar_k[stage]);
            bar_state = detail::axpy(bar_state, 1.0, pb.state);
            eta += pb.alpha;
            if (stage > 0) bar_k[stage - 1] = detail::axpy(bar_k[stage - 1], feed[stage], pb.state);
        }
        if (!bar_state.finite() || !eta.allFinite()) {
            throw DivergenceError("adjoint produced a non-finite covector",
                                  static_cast<std::size_t>(step));
        }
        lam = std::move(bar_state);
    }
    return {lam.x, lam.z, lam.m, eta};
}

/// z_k(0) = -alpha_k grad q0(x_k(0)).
template <int D, ImageFunction<D> Field>
PointArray<D> constrained_z0(const Eigen::VectorXd& alpha, const PointArray<D>& x0, const Field& tmpl) {
    PointArray<D> z0(x0.rows(), D);
    for (Eigen::Index k = 0; k < x0.rows(); ++k) {
        z0.row(k) = (-alpha[k] * tmpl.grad(Vec<D>(x0.row(k).transpose()))).transpose();
    }
    return z0;
}

template <int D, ImageFunction<D> Field>
GradientReport<D> gradient(const PointArray<D>& x0, const Eigen::VectorXd& m0,
                           const Controls<D>& controls, const SolverConfig& config,
                           const Field& target) {
    const Trajectory<D> traj = shoot(x0, m0, controls, config);
    const AdjointState<D> adj0 = backprop(traj, terminal_adjoint(traj, target), controls.alpha, config);

    GradientReport<D> report;
    report.energy = energy(traj, target);
    report.grad_z0 = adj0.xi_z;
    report.grad_alpha = adj0.eta_alpha;
    const auto& fin = traj.final();
    report.bc_residual.resize(fin.size());
    for (Eigen::Index k = 0; k < fin.size(); ++k) {
        const Vec<D> p = fin.x.row(k).transpose();
        report.bc_residual[k] =
            (Vec<D>(fin.z.row(k).transpose()) + controls.alpha[k] * target.grad(p)).norm();
    }
    return report;
}

/// Total derivative in alpha when z0 is tied to alpha by constrained_z0.
template <int D, ImageFunction<D> Field>
Eigen::VectorXd reduce_constrained(const GradientReport<D>& report, const PointArray<D>& x0,
                                   const Field& tmpl) {
    Eigen::VectorXd out = report.grad_alpha;
    for (Eigen::Index k = 0; k < x0.rows(); ++k) {
        out[k] -= tmpl.grad(Vec<D>(x0.row(k).transpose())).dot(report.grad_z0.row(k).transpose());
    }
    return out;
}

inline double default_ridge(Eigen::Index n) { return 1e-6 * static_cast<double>(n); }

/// Applies (K + ridge I)^-1 with the Gram matrices of the fixed initial
/// grid. The V kernel acts componentwise (scalar times identity).
template <int D>
class GramPreconditioner {
public:
    GramPreconditioner(const PointArray<D>& x0, const SolverConfig& config, double ridge) {
        if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw InvalidArgument("ridge must be >= 0");
        const Eigen::Index n = x0.rows();
        const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
        llt_v_.compute(gram_matrix(config.kernel_v, x0) + ridge * eye);
        llt_h_.compute(gram_matrix(config.kernel_h, x0) + ridge * eye);
        if (llt_v_.info() != Eigen::Success || llt_h_.info() != Eigen::Success) {
            throw ConditioningError("Gram matrix is not positive definite with ridge " +
                                    std::to_string(ridge) + "; try a larger ridge");
        }
    }

    PointArray<D> apply_z(const PointArray<D>& g) const {
        Eigen::MatrixXd dense = g;
        return llt_v_.solve(dense);
    }

    Eigen::VectorXd apply_alpha(const Eigen::VectorXd& g) const { return llt_h_.solve(g); }

private:
    Eigen::LLT<Eigen::MatrixXd> llt_v_;
    Eigen::LLT<Eigen::MatrixXd> llt_h_;
};

template <int D>
std::pair<PointArray<D>, Eigen::VectorXd> precondition(const GradientReport<D>& report,
                                                       const PointArray<D>& x0,
                                                       const SolverConfig& config, double ridge) {
    const GramPreconditioner<D> pre(x0, config, ridge);
    return {pre.apply_z(report.grad_z0), pre.apply_alpha(report.grad_alpha)};
}

}  // namespace metashoot
