#pragma once

// Radial Matérn-type reproducing kernels used for the velocity space V
// (order-4 polynomial profile) and the intensity space H (order-2 profile).
//
// With u = |x - y| / tau and r = x - y every quantity is written as
//
//     K(x, y)         = value
//     grad_x K(x, y)  = d1 * r
//     hess_xx K(x, y) = d1 * I + d2 * r r^T
//
// where d1 = phi'(u) / (u tau^2) and d2 = (d/du (phi'(u)/u)) / (u tau^4).
// Both ratios are entire functions of u for these profiles, so the
// expressions are regular at x = y without any special casing.

#include <cmath>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "metashoot/error.hpp"

namespace metashoot {

template <int D>
using Vec = Eigen::Matrix<double, D, 1>;

template <int D>
using Mat = Eigen::Matrix<double, D, D>;

enum class KernelFamily { V, H };

inline const char* to_string(KernelFamily f) { return f == KernelFamily::V ? "V" : "H"; }

struct KernelParams {
    double tau = 1.0;
    KernelFamily family = KernelFamily::V;

    void validate() const {
        if (!(tau > 0.0) || !std::isfinite(tau)) {
            throw InvalidArgument("kernel width tau must be positive and finite, got " +
                                  std::to_string(tau));
        }
    }
};

/// Scalar coefficients of the radial kernel at distance r (see file comment).
struct RadialTerms {
    double value = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
};

inline RadialTerms radial_terms(const KernelParams& params, double r) {
    const double tau = params.tau;
    const double u = r / tau;
    const double e = std::exp(-u);
    const double tau2 = tau * tau;
    RadialTerms t;
    if (params.family == KernelFamily::V) {
        // (1 + u + 3u^2/7 + 2u^3/21 + u^4/105) e^-u
        t.value = (1.0 + u * (1.0 + u * (3.0 / 7.0 + u * (2.0 / 21.0 + u / 105.0)))) * e;
        t.d1 = -(15.0 + u * (15.0 + u * (6.0 + u))) * e / (105.0 * tau2);
        t.d2 = (3.0 + u * (3.0 + u)) * e / (105.0 * tau2 * tau2);
    } else {
        // (1 + u + u^2/3) e^-u
        t.value = (1.0 + u * (1.0 + u / 3.0)) * e;
        t.d1 = -(1.0 + u) * e / (3.0 * tau2);
        t.d2 = e / (3.0 * tau2 * tau2);
    }
    return t;
}

/// Full derivative bundle at a point pair. grad2 and hess22 follow from
/// translation invariance and are not stored.
template <int D>
struct KernelEval {
    double value = 0.0;
    Vec<D> grad1 = Vec<D>::Zero();
    Mat<D> hess11 = Mat<D>::Zero();
    Mat<D> hess12 = Mat<D>::Zero();
};

namespace detail {

template <int D>
void require_finite(const Vec<D>& x, const Vec<D>& y) {
    if (!x.allFinite() || !y.allFinite()) {
        throw InvalidArgument("kernel evaluated at a non-finite point");
    }
}

}  // namespace detail

template <int D>
KernelEval<D> evaluate(const KernelParams& params, const Vec<D>& x, const Vec<D>& y) {
    params.validate();
    detail::require_finite<D>(x, y);
    const Vec<D> r = x - y;
    const RadialTerms t = radial_terms(params, r.norm());
    KernelEval<D> out;
    out.value = t.value;
    out.grad1 = t.d1 * r;
    out.hess11 = t.d1 * Mat<D>::Identity() + t.d2 * (r * r.transpose());
    out.hess12 = -out.hess11;
    return out;
}

template <int D>
double eval(const KernelParams& params, const Vec<D>& x, const Vec<D>& y) {
    params.validate();
    detail::require_finite<D>(x, y);
    return radial_terms(params, (x - y).norm()).value;
}

template <int D>
Vec<D> grad1(const KernelParams& params, const Vec<D>& x, const Vec<D>& y) {
    params.validate();
    detail::require_finite<D>(x, y);
    const Vec<D> r = x - y;
    return radial_terms(params, r.norm()).d1 * r;
}

template <int D>
Mat<D> hess11(const KernelParams& params, const Vec<D>& x, const Vec<D>& y) {
    params.validate();
    detail::require_finite<D>(x, y);
    const Vec<D> r = x - y;
    const RadialTerms t = radial_terms(params, r.norm());
    return t.d1 * Mat<D>::Identity() + t.d2 * (r * r.transpose());
}

template <int D>
Mat<D> hess12(const KernelParams& params, const Vec<D>& x, const Vec<D>& y) {
    return -hess11<D>(params, x, y);
}

/// Scalar Gram matrix K(x_k, x_l). For the matrix-valued V kernel the d×d
/// block form is this matrix Kronecker the identity.
template <typename Points>
Eigen::MatrixXd gram_matrix(const KernelParams& params, const Points& points) {
    params.validate();
    const Eigen::Index n = points.rows();
    if (n < 1) {
        throw InvalidArgument("gram_matrix needs at least one point");
    }
    if (!points.allFinite()) {
        throw InvalidArgument("gram_matrix: non-finite point coordinates");
    }
    Eigen::MatrixXd gram(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        gram(k, k) = 1.0;
        for (Eigen::Index l = k + 1; l < n; ++l) {
            const double v = radial_terms(params, (points.row(k) - points.row(l)).norm()).value;
            gram(k, l) = v;
            gram(l, k) = v;
        }
    }
    return gram;
}

}  // namespace metashoot
