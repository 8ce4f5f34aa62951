#pragma once

// Forward particle system for metamorphosis geodesics:
//
//   dx_k/dt =  sum_l K_V(x_k, x_l) z_l
//   dm_k/dt =  sum_l K_H(x_k, x_l) alpha_l
//   dz_k/dt = -sum_l (z_k . z_l) grad_1 K_V(x_k, x_l)
//             - sigma^-2 sum_l alpha_k alpha_l grad_1 K_H(x_k, x_l)
//
// Dense O(N^2) sums, classical RK4 with a fixed step 1/T.

#include <array>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <vector>

#include "metashoot/kernels.hpp"
#include "metashoot/particles.hpp"

namespace metashoot {

namespace detail {

template <int D>
inline double squared_distance(const double* a, const double* b) {
    double s = 0.0;
    for (int i = 0; i < D; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

template <int D>
inline double dot(const double* a, const double* b) {
    double s = 0.0;
    for (int i = 0; i < D; ++i) s += a[i] * b[i];
    return s;
}

template <int D>
void check_alpha(const ParticleState<D>& state, const Eigen::VectorXd& alpha) {
    if (alpha.size() != state.size()) {
        throw InvalidArgument("alpha has length " + std::to_string(alpha.size()) + ", expected " +
                              std::to_string(state.size()));
    }
}

template <int D>
ParticleState<D> axpy(const ParticleState<D>& s, double h, const ParticleState<D>& k) {
    return {s.x + h * k.x, s.m + h * k.m, s.z + h * k.z};
}

/// Time derivative without shape checks; used in inner loops.
template <int D>
ParticleState<D> rhs_unchecked(const ParticleState<D>& s, const Eigen::VectorXd& alpha,
                               const SolverConfig& cfg) {
    const Eigen::Index n = s.size();
    ParticleState<D> out{s.z, alpha, PointArray<D>::Zero(n, D)};
    const double inv_s2 = 1.0 / (cfg.sigma * cfg.sigma);
    const double* x = s.x.data();
    const double* z = s.z.data();
    const double* a = alpha.data();
    double* dx = out.x.data();
    double* dm = out.m.data();
    double* dz = out.z.data();
    for (Eigen::Index k = 0; k < n; ++k) {
        const double* xk = x + k * D;
        const double* zk = z + k * D;
        for (Eigen::Index l = k + 1; l < n; ++l) {
            const double* xl = x + l * D;
            const double* zl = z + l * D;
            const double dist = std::sqrt(squared_distance<D>(xk, xl));
            const RadialTerms kv = radial_terms(cfg.kernel_v, dist);
            const RadialTerms kh = radial_terms(cfg.kernel_h, dist);
            for (int i = 0; i < D; ++i) {
                dx[k * D + i] += kv.value * zl[i];
                dx[l * D + i] += kv.value * zk[i];
            }
            dm[k] += kh.value * a[l];
            dm[l] += kh.value * a[k];
            const double coef = -(dot<D>(zk, zl) * kv.d1 + inv_s2 * a[k] * a[l] * kh.d1);
            for (int i = 0; i < D; ++i) {
                const double r = xk[i] - xl[i];
                dz[k * D + i] += coef * r;
                dz[l * D + i] -= coef * r;
            }
        }
    }
    return out;
}

}  // namespace detail

/// Time derivative of the particle state (x', m', z').
template <int D>
ParticleState<D> rhs(const ParticleState<D>& state, const Eigen::VectorXd& alpha,
                     const SolverConfig& config) {
    state.validate();
    detail::check_alpha(state, alpha);
    return detail::rhs_unchecked(state, alpha, config);
}

/// Stage inputs and slopes of one classical RK4 step.
template <int D>
struct Rk4Stages {
    std::array<ParticleState<D>, 4> inputs;
    std::array<ParticleState<D>, 4> slopes;
};

template <int D>
Rk4Stages<D> rk4_stages(const ParticleState<D>& s, const Eigen::VectorXd& alpha,
                        const SolverConfig& cfg, double h) {
    Rk4Stages<D> st;
    st.inputs[0] = s;
    st.slopes[0] = detail::rhs_unchecked(s, alpha, cfg);
    st.inputs[1] = detail::axpy(s, 0.5 * h, st.slopes[0]);
    st.slopes[1] = detail::rhs_unchecked(st.inputs[1], alpha, cfg);
    st.inputs[2] = detail::axpy(s, 0.5 * h, st.slopes[1]);
    st.slopes[2] = detail::rhs_unchecked(st.inputs[2], alpha, cfg);
    st.inputs[3] = detail::axpy(s, h, st.slopes[2]);
    st.slopes[3] = detail::rhs_unchecked(st.inputs[3], alpha, cfg);
    return st;
}

template <int D>
ParticleState<D> rk4_step(const ParticleState<D>& s, const Eigen::VectorXd& alpha,
                          const SolverConfig& cfg, double h) {
    const Rk4Stages<D> st = rk4_stages(s, alpha, cfg, h);
    const auto& k = st.slopes;
    return {s.x + (h / 6.0) * (k[0].x + 2.0 * k[1].x + 2.0 * k[2].x + k[3].x),
            s.m + (h / 6.0) * (k[0].m + 2.0 * k[1].m + 2.0 * k[2].m + k[3].m),
            s.z + (h / 6.0) * (k[0].z + 2.0 * k[1].z + 2.0 * k[2].z + k[3].z)};
}

/// Integrates from t = 0 to t = 1 in config.timesteps RK4 steps and keeps
/// every state.
template <int D>
Trajectory<D> shoot(const PointArray<D>& x0, const Eigen::VectorXd& m0, const Controls<D>& controls,
                    const SolverConfig& config) {
    config.validate();
    ParticleState<D> initial{x0, m0, controls.z0};
    initial.validate();
    controls.validate(initial.size());

    Trajectory<D> traj;
    traj.dt = config.dt();
    traj.sigma = config.sigma;
    traj.states.reserve(config.timesteps + 1);
    traj.states.push_back(std::move(initial));
    for (int step = 0; step < config.timesteps; ++step) {
        ParticleState<D> next = rk4_step(traj.states.back(), controls.alpha, config, traj.dt);
        if (!next.finite()) {
            throw DivergenceError("particle system produced a non-finite state",
                                  static_cast<std::size_t>(step + 1));
        }
        traj.states.push_back(std::move(next));
    }
    return traj;
}

/// (1/2) z^T K_V z + (1/(2 sigma^2)) alpha^T K_H alpha. Conserved along
/// exact solutions.
template <int D>
double hamiltonian(const ParticleState<D>& state, const Eigen::VectorXd& alpha,
                   const SolverConfig& config) {
    detail::check_alpha(state, alpha);
    const Eigen::Index n = state.size();
    const double* x = state.x.data();
    const double* z = state.z.data();
    double vv = 0.0;
    double hh = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
        vv += detail::dot<D>(z + k * D, z + k * D);
        hh += alpha[k] * alpha[k];
        for (Eigen::Index l = k + 1; l < n; ++l) {
            const double dist = std::sqrt(detail::squared_distance<D>(x + k * D, x + l * D));
            vv += 2.0 * radial_terms(config.kernel_v, dist).value *
                  detail::dot<D>(z + k * D, z + l * D);
            hh += 2.0 * radial_terms(config.kernel_h, dist).value * alpha[k] * alpha[l];
        }
    }
    return 0.5 * vv + 0.5 * hh / (config.sigma * config.sigma);
}

/// v(p) = sum_k K_V(p, x_k) z_k at each query point.
template <int D>
PointArray<D> velocity_at(const ParticleState<D>& state, const PointArray<D>& points,
                          const SolverConfig& config) {
    const Eigen::Index n = state.size();
    const Eigen::Index mcount = points.rows();
    PointArray<D> out = PointArray<D>::Zero(mcount, D);
    const double* x = state.x.data();
    const double* z = state.z.data();
    for (Eigen::Index p = 0; p < mcount; ++p) {
        const double* q = points.data() + p * D;
        double* o = out.data() + p * D;
        for (Eigen::Index k = 0; k < n; ++k) {
            const double dist = std::sqrt(detail::squared_distance<D>(q, x + k * D));
            const double w = radial_terms(config.kernel_v, dist).value;
            for (int i = 0; i < D; ++i) o[i] += w * z[k * D + i];
        }
    }
    return out;
}

/// zeta(p) = sum_k K_H(p, x_k) alpha_k at each query point.
template <int D>
Eigen::VectorXd intensity_rate_at(const ParticleState<D>& state, const PointArray<D>& points,
                                  const Eigen::VectorXd& alpha, const SolverConfig& config) {
    detail::check_alpha(state, alpha);
    const Eigen::Index n = state.size();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(points.rows());
    const double* x = state.x.data();
    for (Eigen::Index p = 0; p < points.rows(); ++p) {
        const double* q = points.data() + p * D;
        for (Eigen::Index k = 0; k < n; ++k) {
            const double dist = std::sqrt(detail::squared_distance<D>(q, x + k * D));
            out[p] += radial_terms(config.kernel_h, dist).value * alpha[k];
        }
    }
    return out;
}

/// One row per (step, particle): t, k, x..., m, z...
template <int D>
void write_trajectory_csv(const Trajectory<D>& traj, std::ostream& os) {
    os << "t,k";
    for (int i = 0; i < D; ++i) os << ",x" << i;
    os << ",m";
    for (int i = 0; i < D; ++i) os << ",z" << i;
    os << '\n';
    const auto old_precision = os.precision(17);
    for (int step = 0; step < static_cast<int>(traj.states.size()); ++step) {
        const auto& s = traj.states[step];
        const double t = traj.time(step);
        for (Eigen::Index k = 0; k < s.size(); ++k) {
            os << t << ',' << k;
            for (int i = 0; i < D; ++i) os << ',' << s.x(k, i);
            os << ',' << s.m[k];
            for (int i = 0; i < D; ++i) os << ',' << s.z(k, i);
            os << '\n';
        }
    }
    os.precision(old_precision);
}

}  // namespace metashoot
