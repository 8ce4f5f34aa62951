#pragma once

// Random scalar momenta built from a set of learned momenta:
//
//   alpha = mean + (c / sqrt(n)) * sum_k xi_k (alpha_k - mean),  xi_k ~ N(0, 1)
//
// With n = K the covariance of alpha equals the (1/K-normalized) empirical
// covariance of the set.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "metashoot/adjoint.hpp"
#include "metashoot/dynamics.hpp"
#include "metashoot/random.hpp"
#include "metashoot/renderer.hpp"

namespace metashoot {

template <int D>
struct MomentumSet {
    std::vector<Eigen::VectorXd> alphas;
    PointArray<D> x0;
    std::string template_id;

    Eigen::Index particles() const { return x0.rows(); }

    void validate() const {
        if (alphas.empty()) throw InvalidArgument("momentum set is empty");
        for (const auto& a : alphas) {
            if (a.size() != x0.rows()) throw InvalidArgument("momentum length does not match the grid");
            if (!a.allFinite()) throw InvalidArgument("momentum set has non-finite entries");
        }
    }
};

template <int D>
Eigen::VectorXd mean(const MomentumSet<D>& set) {
    set.validate();
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(set.x0.rows());
    for (const auto& a : set.alphas) acc += a;
    return acc / static_cast<double>(set.alphas.size());
}

template <int D>
Eigen::VectorXd sample(const MomentumSet<D>& set, double c, int n, std::uint64_t seed) {
    if (n < 1) throw InvalidArgument("n must be >= 1");
    const Eigen::VectorXd avg = mean(set);
    NormalStream normals(seed);
    Eigen::VectorXd out = avg;
    const double scale = c / std::sqrt(static_cast<double>(n));
    for (const auto& a : set.alphas) out += (scale * normals.next()) * (a - avg);
    return out;
}

/// Shoots a sampled momentum from the template and returns the t = 1
/// deformed image. z(0) is tied to alpha through the template gradient when
/// `constrained`, otherwise zero.
inline ScalarField shoot_sample(const MomentumSet<2>& set, double c, int n, std::uint64_t seed,
                                const ScalarField& tmpl, const SolverConfig& config, bool constrained,
                                const RenderConfig& render = {}) {
    const Eigen::VectorXd alpha = sample(set, c, n, seed);
    Eigen::VectorXd m0(set.x0.rows());
    for (Eigen::Index k = 0; k < set.x0.rows(); ++k) m0[k] = tmpl.eval(Vec<2>(set.x0.row(k).transpose()));
    Controls<2> controls{alpha, constrained ? constrained_z0<2>(alpha, set.x0, tmpl)
                                            : PointArray<2>(PointArray<2>::Zero(set.x0.rows(), 2))};
    const Trajectory<2> traj = shoot<2>(set.x0, m0, controls, config);
    return deformed_frame(traj, tmpl, alpha, traj.timesteps(), render, config);
}

}  // namespace metashoot
