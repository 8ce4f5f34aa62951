#pragma once

// Shared fixtures for the test suites: analytic image functions, random
// problem generators and central-difference oracles. The oracles only use
// shoot()/energy() and never the adjoint code they check.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>

#include <Eigen/Dense>

#include "metashoot/metashoot.hpp"

namespace metashoot::testing {

/// Smooth Gaussian blob a * exp(-|p - c|^2 / (2 s^2)) + b.
template <int D>
struct GaussianField {
    Vec<D> center = Vec<D>::Zero();
    double width = 2.0;
    double amplitude = 1.0;
    double offset = 0.0;

    double eval(const Vec<D>& p) const {
        return offset + amplitude * std::exp(-(p - center).squaredNorm() / (2.0 * width * width));
    }
    Vec<D> grad(const Vec<D>& p) const {
        return -(p - center) / (width * width) * (eval(p) - offset);
    }
};

/// Zero everywhere.
template <int D>
struct ZeroField {
    double eval(const Vec<D>&) const { return 0.0; }
    Vec<D> grad(const Vec<D>&) const { return Vec<D>::Zero(); }
};

template <int D>
struct RandomProblem {
    PointArray<D> x0;
    Eigen::VectorXd m0;
    Controls<D> controls;
};

/// N particles uniform in [0, extent]^D, controls uniform in [-amp, amp].
template <int D>
RandomProblem<D> random_problem(std::mt19937_64& rng, int n, double extent, double amp) {
    std::uniform_real_distribution<double> pos(0.0, extent);
    std::uniform_real_distribution<double> ctl(-amp, amp);
    std::uniform_real_distribution<double> inten(0.0, 1.0);
    RandomProblem<D> p;
    p.x0.resize(n, D);
    p.controls.z0.resize(n, D);
    p.m0.resize(n);
    p.controls.alpha.resize(n);
    for (int k = 0; k < n; ++k) {
        for (int i = 0; i < D; ++i) {
            p.x0(k, i) = pos(rng);
            p.controls.z0(k, i) = ctl(rng);
        }
        p.m0[k] = inten(rng);
        p.controls.alpha[k] = ctl(rng);
    }
    return p;
}

/// Central differences of f at v along every coordinate.
inline Eigen::VectorXd central_differences(const std::function<double(const Eigen::VectorXd&)>& f,
                                           const Eigen::VectorXd& v, double h) {
    Eigen::VectorXd g(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        Eigen::VectorXd p = v;
        Eigen::VectorXd m = v;
        p[i] += h;
        m[i] -= h;
        g[i] = (f(p) - f(m)) / (2.0 * h);
    }
    return g;
}

/// Packs (z0 row-major, alpha) into one vector.
template <int D>
Eigen::VectorXd pack(const Controls<D>& c) {
    const Eigen::Index n = c.alpha.size();
    Eigen::VectorXd v(n * (D + 1));
    for (Eigen::Index k = 0; k < n; ++k)
        for (int i = 0; i < D; ++i) v[k * D + i] = c.z0(k, i);
    v.tail(n) = c.alpha;
    return v;
}

template <int D>
Controls<D> unpack(const Eigen::VectorXd& v, Eigen::Index n) {
    Controls<D> c;
    c.z0.resize(n, D);
    for (Eigen::Index k = 0; k < n; ++k)
        for (int i = 0; i < D; ++i) c.z0(k, i) = v[k * D + i];
    c.alpha = v.tail(n);
    return c;
}

/// Finite-difference gradient of energy(shoot(...)) over (z0, alpha).
template <int D, typename Field>
Eigen::VectorXd fd_energy_gradient(const RandomProblem<D>& p, const SolverConfig& cfg, const Field& target,
                                   double h) {
    const Eigen::Index n = p.x0.rows();
    auto f = [&](const Eigen::VectorXd& v) {
        return energy(shoot<D>(p.x0, p.m0, unpack<D>(v, n), cfg), target);
    };
    return central_differences(f, pack<D>(p.controls), h);
}

/// Max over coordinates of |a - b| / max(|a|, |b|, floor).
inline double max_relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
    }
    return worst;
}

/// Gaussian bump image of the given size centred at (cx, cy).
inline ScalarField bump_image(int size, double cx, double cy, double width) {
    return ScalarField::from_function(size, size, [=](int i, int j) {
        const double dx = i - cx;
        const double dy = j - cy;
        return std::exp(-(dx * dx + dy * dy) / (2.0 * width * width));
    });
}

}  // namespace metashoot::testing
