#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "metashoot/error.hpp"
#include "metashoot/kernels.hpp"

namespace metashoot {

/// N×D array, one particle per row. Row-major so that each particle's
/// coordinates are contiguous (Eigen requires column-major when D == 1).
template <int D>
using PointArray =
    Eigen::Matrix<double, Eigen::Dynamic, D, (D == 1 ? Eigen::ColMajor : Eigen::RowMajor)>;

template <int D>
struct ParticleState {
    static_assert(D >= 1 && D <= 3, "particle dimension must be 1, 2 or 3");

    PointArray<D> x;    // positions
    Eigen::VectorXd m;  // template intensities carried by the particles
    PointArray<D> z;    // vector momenta

    Eigen::Index size() const { return x.rows(); }

    static ParticleState zeros(Eigen::Index n) {
        return {PointArray<D>::Zero(n, D), Eigen::VectorXd::Zero(n), PointArray<D>::Zero(n, D)};
    }

    bool finite() const { return x.allFinite() && m.allFinite() && z.allFinite(); }

    void validate() const {
        if (x.rows() < 1) {
            throw InvalidArgument("particle state needs at least one particle");
        }
        if (m.size() != x.rows() || z.rows() != x.rows()) {
            throw InvalidArgument("particle state arrays disagree on N");
        }
        if (!finite()) {
            throw InvalidArgument("particle state has non-finite entries");
        }
    }
};

/// Shooting unknowns: scalar momenta alpha (constant in time) and the
/// initial vector momenta z(0).
template <int D>
struct Controls {
    Eigen::VectorXd alpha;
    PointArray<D> z0;

    static Controls zeros(Eigen::Index n) {
        return {Eigen::VectorXd::Zero(n), PointArray<D>::Zero(n, D)};
    }

    void validate(Eigen::Index n) const {
        if (alpha.size() != n || z0.rows() != n) {
            throw InvalidArgument("controls do not match the particle count " + std::to_string(n));
        }
        if (!alpha.allFinite() || !z0.allFinite()) {
            throw InvalidArgument("controls have non-finite entries");
        }
    }
};

struct SolverConfig {
    double sigma = 1.0;
    int timesteps = 10;
    KernelParams kernel_v{1.5, KernelFamily::V};
    KernelParams kernel_h{0.5, KernelFamily::H};

    double dt() const { return 1.0 / timesteps; }

    void validate() const {
        if (!(sigma > 0.0) || !std::isfinite(sigma)) {
            throw InvalidArgument("sigma must be positive");
        }
        if (timesteps < 1) {
            throw InvalidArgument("timesteps must be >= 1");
        }
        kernel_v.validate();
        kernel_h.validate();
        if (kernel_v.family != KernelFamily::V || kernel_h.family != KernelFamily::H) {
            throw InvalidArgument("kernel families must be (V, H)");
        }
    }
};

/// States at t_i = i * dt, i = 0..T.
template <int D>
struct Trajectory {
    std::vector<ParticleState<D>> states;
    double dt = 0.1;
    double sigma = 1.0;

    int timesteps() const { return static_cast<int>(states.size()) - 1; }
    const ParticleState<D>& initial() const { return states.front(); }
    const ParticleState<D>& final() const { return states.back(); }
    double time(int i) const { return i * dt; }
};

}  // namespace metashoot
