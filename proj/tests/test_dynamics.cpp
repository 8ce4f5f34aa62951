#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"

namespace ms = metashoot;
using ms::testing::random_problem;

namespace {

ms::SolverConfig config(int T = 10, double sigma = 1.0) {
    ms::SolverConfig c;
    c.timesteps = T;
    c.sigma = sigma;
    return c;
}

// Radial profile of the deformation kernel, written out independently.
double kv_profile(double u) { return (1.0 + u + 3.0 * u * u / 7.0 + 2.0 * u * u * u / 21.0 + u * u * u * u / 105.0) * std::exp(-u); }

ms::ParticleState<2> single(double x, double y, double m, double zx, double zy) {
    ms::ParticleState<2> s = ms::ParticleState<2>::zeros(1);
    s.x << x, y;
    s.m << m;
    s.z << zx, zy;
    return s;
}

double endpoint_error(const ms::Trajectory<2>& a, const ms::Trajectory<2>& b) {
    const auto& fa = a.final();
    const auto& fb = b.final();
    return std::max({(fa.x - fb.x).cwiseAbs().maxCoeff(), (fa.m - fb.m).cwiseAbs().maxCoeff(),
                     (fa.z - fb.z).cwiseAbs().maxCoeff()});
}

}  // namespace

TEST(Rhs, StationaryWithoutMomenta) {
    const auto s = single(1.0, 2.0, 0.3, 0.0, 0.0);
    const auto d = ms::rhs<2>(s, Eigen::VectorXd::Zero(1), config());
    EXPECT_EQ(d.x.norm(), 0.0);
    EXPECT_EQ(d.m.norm(), 0.0);
    EXPECT_EQ(d.z.norm(), 0.0);
}

TEST(Rhs, SingleParticleMovesAtConstantVelocity) {
    const auto s = single(1.0, 2.0, 0.3, 0.7, -0.2);
    const auto d = ms::rhs<2>(s, Eigen::VectorXd::Constant(1, 0.4), config());
    EXPECT_EQ(d.x(0, 0), 0.7);
    EXPECT_EQ(d.x(0, 1), -0.2);
    EXPECT_EQ(d.m[0], 0.4);
    EXPECT_EQ(d.z.norm(), 0.0);
}

TEST(Rhs, SymmetricPairMatchesHandEvaluation) {
    const double a = 0.6;
    const double b = 0.8;
    ms::ParticleState<2> s = ms::ParticleState<2>::zeros(2);
    s.x << -a, 0.0, a, 0.0;
    s.z << b, 0.0, -b, 0.0;
    const auto cfg = config();
    const auto d = ms::rhs<2>(s, Eigen::VectorXd::Zero(2), cfg);

    const double tau = cfg.kernel_v.tau;
    const double u = 2.0 * a / tau;
    const double h = 1e-6;
    const double dphi = (kv_profile(u + h) - kv_profile(u - h)) / (2.0 * h);
    // x1 - x2 points along -e1, so grad_1 K_V = -phi'(u)/tau e1 and z1.z2 = -b^2
    const double zdot1 = -(-b * b) * (-dphi / tau);
    const double xdot1 = b * (1.0 - kv_profile(u));

    EXPECT_NEAR(d.x(0, 0), xdot1, 1e-12);
    EXPECT_NEAR(d.z(0, 0), zdot1, 1e-8);
    EXPECT_EQ(d.x(0, 0), -d.x(1, 0));
    EXPECT_EQ(d.z(0, 0), -d.z(1, 0));
    EXPECT_EQ(d.x(0, 1), 0.0);
    EXPECT_EQ(d.z(0, 1), 0.0);
    EXPECT_GT(d.x(0, 0), 0.0);
}

TEST(Rhs, SigmaScalesOnlyTheIntensityCoupling) {
    std::mt19937_64 rng(21);
    auto p = random_problem<2>(rng, 4, 2.0, 1.0);
    p.controls.z0.setZero();
    ms::ParticleState<2> s{p.x0, p.m0, p.controls.z0};
    const auto d1 = ms::rhs<2>(s, p.controls.alpha, config(10, 1.0));
    const auto d2 = ms::rhs<2>(s, p.controls.alpha, config(10, 2.0));
    EXPECT_TRUE(d1.m.isApprox(d2.m, 0.0));
    EXPECT_LE((d1.z - 4.0 * d2.z).norm(), 1e-14 * d1.z.norm());
}

TEST(Rhs, RejectsMismatchedShapes) {
    const auto s = single(0.0, 0.0, 0.0, 0.0, 0.0);
    EXPECT_THROW(ms::rhs<2>(s, Eigen::VectorXd::Zero(2), config()), ms::InvalidArgument);
    ms::ParticleState<2> bad = ms::ParticleState<2>::zeros(2);
    bad.m.resize(3);
    EXPECT_THROW(ms::rhs<2>(bad, Eigen::VectorXd::Zero(2), config()), ms::InvalidArgument);
}

TEST(Shoot, SingleParticleClosedForm) {
    ms::PointArray<2> x0(1, 2);
    x0 << 3.0, -1.0;
    ms::Controls<2> c{Eigen::VectorXd::Constant(1, -0.35), ms::PointArray<2>(1, 2)};
    c.z0 << 0.9, 0.25;
    const auto traj = ms::shoot<2>(x0, Eigen::VectorXd::Constant(1, 0.2), c, config());
    ASSERT_EQ(traj.timesteps(), 10);
    for (int i = 0; i <= 10; ++i) {
        const double t = traj.time(i);
        const auto& s = traj.states[i];
        EXPECT_NEAR(s.x(0, 0), 3.0 + 0.9 * t, 1e-12);
        EXPECT_NEAR(s.x(0, 1), -1.0 + 0.25 * t, 1e-12);
        EXPECT_NEAR(s.m[0], 0.2 - 0.35 * t, 1e-12);
        EXPECT_NEAR((s.z - c.z0).norm(), 0.0, 1e-12);
    }
    EXPECT_DOUBLE_EQ(traj.time(10), 1.0);
}

TEST(Shoot, ZeroControlsStayPut) {
    std::mt19937_64 rng(1);
    const auto p = random_problem<2>(rng, 6, 4.0, 1.0);
    const auto traj = ms::shoot<2>(p.x0, p.m0, ms::Controls<2>::zeros(6), config());
    for (const auto& s : traj.states) {
        EXPECT_TRUE(s.x.isApprox(p.x0, 0.0));
        EXPECT_TRUE(s.m.isApprox(p.m0, 0.0));
        EXPECT_EQ(s.z.norm(), 0.0);
    }
    EXPECT_TRUE(traj.initial().x.isApprox(p.x0, 0.0));
}

TEST(Shoot, FourthOrderConvergence) {
    std::mt19937_64 rng(7);
    const auto p = random_problem<2>(rng, 5, 2.5, 1.0);
    const auto reference = ms::shoot<2>(p.x0, p.m0, p.controls, config(640));
    const double e10 = endpoint_error(ms::shoot<2>(p.x0, p.m0, p.controls, config(10)), reference);
    const double e20 = endpoint_error(ms::shoot<2>(p.x0, p.m0, p.controls, config(20)), reference);
    ASSERT_GT(e20, 1e-13);
    EXPECT_GT(e10 / e20, 12.0);
    EXPECT_LT(e10 / e20, 20.0);
}

TEST(Shoot, DivergenceNamesTheStep) {
    ms::PointArray<2> x0(2, 2);
    x0 << 0.0, 0.0, 0.5, 0.0;
    ms::Controls<2> c = ms::Controls<2>::zeros(2);
    c.z0 << 1e200, 0.0, 1e200, 0.0;
    try {
        ms::shoot<2>(x0, Eigen::VectorXd::Zero(2), c, config());
        FAIL() << "expected divergence";
    } catch (const ms::DivergenceError& e) {
        EXPECT_EQ(e.step(), 1u);
    }
}

TEST(Shoot, RejectsBadConfig) {
    ms::PointArray<2> x0 = ms::PointArray<2>::Zero(1, 2);
    EXPECT_THROW(ms::shoot<2>(x0, Eigen::VectorXd::Zero(1), ms::Controls<2>::zeros(1), config(0)),
                 ms::InvalidArgument);
    EXPECT_THROW(ms::shoot<2>(x0, Eigen::VectorXd::Zero(1), ms::Controls<2>::zeros(1), config(10, 0.0)),
                 ms::InvalidArgument);
    EXPECT_THROW(ms::shoot<2>(x0, Eigen::VectorXd::Zero(1), ms::Controls<2>::zeros(2), config()),
                 ms::InvalidArgument);
}

TEST(Shoot, PermutationEquivariance) {
    std::mt19937_64 rng(13);
    const auto p = random_problem<2>(rng, 7, 3.0, 1.0);
    std::vector<int> perm{3, 0, 6, 1, 5, 2, 4};
    auto q = p;
    for (int k = 0; k < 7; ++k) {
        q.x0.row(k) = p.x0.row(perm[k]);
        q.m0[k] = p.m0[perm[k]];
        q.controls.z0.row(k) = p.controls.z0.row(perm[k]);
        q.controls.alpha[k] = p.controls.alpha[perm[k]];
    }
    const auto a = ms::shoot<2>(p.x0, p.m0, p.controls, config());
    const auto b = ms::shoot<2>(q.x0, q.m0, q.controls, config());
    for (int k = 0; k < 7; ++k) {
        EXPECT_LE((a.final().x.row(perm[k]) - b.final().x.row(k)).norm(), 1e-13);
        EXPECT_LE(std::abs(a.final().m[perm[k]] - b.final().m[k]), 1e-13);
        EXPECT_LE((a.final().z.row(perm[k]) - b.final().z.row(k)).norm(), 1e-13);
    }
}

TEST(Shoot, TranslationEquivariance) {
    std::mt19937_64 rng(17);
    const auto p = random_problem<2>(rng, 6, 3.0, 1.0);
    ms::PointArray<2> shifted = p.x0;
    shifted.col(0).array() += 10.0;
    shifted.col(1).array() -= 4.0;
    const auto a = ms::shoot<2>(p.x0, p.m0, p.controls, config());
    const auto b = ms::shoot<2>(shifted, p.m0, p.controls, config());
    for (int i = 0; i <= 10; ++i) {
        ms::PointArray<2> back = b.states[i].x;
        back.col(0).array() -= 10.0;
        back.col(1).array() += 4.0;
        EXPECT_LE((back - a.states[i].x).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LE((b.states[i].m - a.states[i].m).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LE((b.states[i].z - a.states[i].z).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Shoot, RhsMatchesTimeDerivativeAtStart) {
    std::mt19937_64 rng(19);
    const auto p = random_problem<2>(rng, 5, 3.0, 1.0);
    const ms::ParticleState<2> s0{p.x0, p.m0, p.controls.z0};
    const auto d = ms::rhs<2>(s0, p.controls.alpha, config());
    double prev = INFINITY;
    for (int T : {100, 1000}) {
        const auto traj = ms::shoot<2>(p.x0, p.m0, p.controls, config(T));
        const auto& s1 = traj.states[1];
        const double err = std::max({((s1.x - s0.x) / traj.dt - d.x).cwiseAbs().maxCoeff(),
                                     ((s1.m - s0.m) / traj.dt - d.m).cwiseAbs().maxCoeff(),
                                     ((s1.z - s0.z) / traj.dt - d.z).cwiseAbs().maxCoeff()});
        EXPECT_LT(err, 5.0 / T);
        EXPECT_LT(err, prev / 5.0);
        prev = err;
    }
}

TEST(Hamiltonian, ZeroAndUnitExamples) {
    const auto cfg = config(10, 0.7);
    EXPECT_EQ(ms::hamiltonian<2>(ms::ParticleState<2>::zeros(3), Eigen::VectorXd::Zero(3), cfg), 0.0);
    const auto s = single(2.0, 2.0, 0.0, 1.0, 0.0);
    EXPECT_DOUBLE_EQ(ms::hamiltonian<2>(s, Eigen::VectorXd::Constant(1, 0.7), cfg), 1.0);
}

TEST(Hamiltonian, MatchesGramForm) {
    std::mt19937_64 rng(23);
    const auto p = random_problem<2>(rng, 8, 3.0, 1.0);
    const auto cfg = config(10, 0.8);
    const Eigen::MatrixXd kv = ms::gram_matrix(cfg.kernel_v, p.x0);
    const Eigen::MatrixXd kh = ms::gram_matrix(cfg.kernel_h, p.x0);
    double expected = 0.0;
    for (int i = 0; i < 2; ++i) expected += 0.5 * p.controls.z0.col(i).dot(kv * p.controls.z0.col(i));
    expected += 0.5 * p.controls.alpha.dot(kh * p.controls.alpha) / (0.8 * 0.8);
    const ms::ParticleState<2> s{p.x0, p.m0, p.controls.z0};
    EXPECT_NEAR(ms::hamiltonian<2>(s, p.controls.alpha, cfg), expected, 1e-13 * expected);
}

TEST(Hamiltonian, ConservedAlongRandomTrajectories) {
    std::mt19937_64 rng(29);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + trial % 15;
        const auto p = random_problem<2>(rng, n, 3.0, 1.0);
        const auto traj = ms::shoot<2>(p.x0, p.m0, p.controls, config());
        const double h0 = ms::hamiltonian<2>(traj.initial(), p.controls.alpha, config());
        for (const auto& s : traj.states) {
            const double drift = std::abs(ms::hamiltonian<2>(s, p.controls.alpha, config()) - h0);
            EXPECT_LT(drift / std::max(h0, 1.0), 1e-6) << "trial " << trial;
        }
    }
}

TEST(Fields, VelocityAndIntensityRate) {
    const auto s = single(1.0, 1.0, 0.0, 0.3, -0.4);
    const auto cfg = config();
    ms::PointArray<2> q(3, 2);
    q << 1.0, 1.0, 1.0, 2.0, 500.0, 500.0;
    const auto v = ms::velocity_at<2>(s, q, cfg);
    EXPECT_EQ(v(0, 0), 0.3);
    EXPECT_EQ(v(0, 1), -0.4);
    EXPECT_NEAR(v(1, 0), 0.3 * kv_profile(1.0 / 1.5), 1e-15);
    EXPECT_LT(v.row(2).norm(), 1e-10);
    const auto zeta = ms::intensity_rate_at<2>(s, q, Eigen::VectorXd::Constant(1, 0.5), cfg);
    EXPECT_EQ(zeta[0], 0.5);
    EXPECT_NEAR(zeta[1], 0.5 * (1.0 + 2.0 + 4.0 / 3.0) * std::exp(-2.0), 1e-15);
    EXPECT_LT(std::abs(zeta[2]), 1e-10);

    const auto none = single(1.0, 1.0, 0.0, 0.0, 0.0);
    EXPECT_EQ(ms::velocity_at<2>(none, q, cfg).norm(), 0.0);
    EXPECT_EQ(ms::intensity_rate_at<2>(none, q, Eigen::VectorXd::Zero(1), cfg).norm(), 0.0);
}

TEST(Trajectory, CsvLayout) {
    ms::PointArray<2> x0(2, 2);
    x0 << 0.0, 0.0, 1.0, 0.0;
    ms::Controls<2> c = ms::Controls<2>::zeros(2);
    c.z0(0, 0) = 0.1;
    const auto traj = ms::shoot<2>(x0, Eigen::VectorXd::Constant(2, 0.5), c, config(2));
    std::ostringstream os;
    ms::write_trajectory_csv(traj, os);
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "t,k,x0,x1,m,z0,z1");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 3 * 2);
    EXPECT_NE(os.str().find("0.10000000000000001"), std::string::npos);  // 17 significant digits
}

TEST(Dimensions, OneAndThreeDimensionalSystems) {
    ms::PointArray<1> x1(2, 1);
    x1 << 0.0, 1.0;
    ms::Controls<1> c1{Eigen::VectorXd::Zero(2), ms::PointArray<1>(2, 1)};
    c1.z0 << 0.5, -0.5;
    const auto t1 = ms::shoot<1>(x1, Eigen::VectorXd::Zero(2), c1, config());
    EXPECT_NEAR(t1.final().x(0, 0) + t1.final().x(1, 0), 1.0, 1e-13);

    ms::PointArray<3> x3(1, 3);
    x3 << 1.0, 2.0, 3.0;
    ms::Controls<3> c3{Eigen::VectorXd::Constant(1, 1.0), ms::PointArray<3>(1, 3)};
    c3.z0 << 0.1, 0.2, 0.3;
    const auto t3 = ms::shoot<3>(x3, Eigen::VectorXd::Zero(1), c3, config());
    EXPECT_NEAR(t3.final().x(0, 2), 3.3, 1e-12);
    EXPECT_NEAR(t3.final().m[0], 1.0, 1e-12);
}
