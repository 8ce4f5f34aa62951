#pragma once

// Nonlinear conjugate-gradient shooting: Polak-Ribiere+ directions,
// Armijo backtracking, optional Gram-matrix preconditioning and an optional
// constraint tying z(0) to alpha through the template gradient.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "metashoot/adjoint.hpp"
#include "metashoot/dynamics.hpp"

namespace metashoot {

struct OptimOptions {
    int max_iters = 500;
    double grad_tol = 1e-6;    // relative to the initial gradient norm
    double energy_tol = 1e-12; // relative energy change between accepted iterates
    bool constrained = false;
    bool preconditioned = false;
    double ls_shrink = 0.5;
    double ls_c1 = 1e-4;
    int ls_max_evals = 40;
    int cg_restart = 0;        // 0: number of unknowns, capped at 50
    double ridge = -1.0;       // < 0: default_ridge(N)

    void validate() const {
        if (max_iters < 0) throw InvalidArgument("max_iters must be >= 0");
        if (!(grad_tol > 0.0) || !(energy_tol > 0.0)) throw InvalidArgument("tolerances must be positive");
        if (!(ls_shrink > 0.0 && ls_shrink < 1.0)) throw InvalidArgument("ls_shrink must lie in (0,1)");
        if (!(ls_c1 > 0.0 && ls_c1 < 1.0)) throw InvalidArgument("ls_c1 must lie in (0,1)");
        if (ls_max_evals < 1) throw InvalidArgument("ls_max_evals must be >= 1");
        if (cg_restart < 0) throw InvalidArgument("cg_restart must be >= 0");
    }
};

enum class OptimStatus { ConvergedGrad, ConvergedEnergy, MaxIters, LineSearchFailed };

inline const char* to_string(OptimStatus s) {
    switch (s) {
        case OptimStatus::ConvergedGrad: return "converged_grad";
        case OptimStatus::ConvergedEnergy: return "converged_energy";
        case OptimStatus::MaxIters: return "max_iters";
        case OptimStatus::LineSearchFailed: return "line_search_failed";
    }
    return "unknown";
}

inline bool is_converged(OptimStatus s) {
    return s == OptimStatus::ConvergedGrad || s == OptimStatus::ConvergedEnergy;
}

template <int D>
struct OptimResult {
    Controls<D> controls;
    std::vector<double> energy_history;
    std::vector<double> grad_norm_history;
    int iterations = 0;
    OptimStatus status = OptimStatus::MaxIters;
    GradientReport<D> final_report;
};

struct IterationRecord {
    int iter = 0;
    double energy = 0.0;
    double grad_norm = 0.0;
    double step = 0.0;
    std::string status;  // "running" until the final record
};

using IterationLogger = std::function<void(const IterationRecord&)>;

/// Armijo sufficient-decrease test.
inline bool step_accept(double prev_energy, double trial_energy, double directional_derivative,
                        double step, double c1) {
    return trial_energy <= prev_energy + c1 * step * directional_derivative;
}

namespace detail {

/// Flattened view of the unknowns: [z0 (row-major), alpha] or [alpha].
template <int D, typename TemplateField, typename TargetField>
class ShootingProblem {
public:
    ShootingProblem(const TemplateField& tmpl, const TargetField& target, const PointArray<D>& x0,
                    const Eigen::VectorXd& m0, const SolverConfig& config, const OptimOptions& opts)
        : tmpl_(tmpl), target_(target), x0_(x0), m0_(m0), config_(config), opts_(opts),
          n_(x0.rows()) {
        if (opts.preconditioned) {
            pre_.emplace(x0, config, opts.ridge < 0.0 ? default_ridge(n_) : opts.ridge);
        }
    }

    Eigen::Index size() const { return opts_.constrained ? n_ : n_ * (D + 1); }

    Controls<D> controls(const Eigen::VectorXd& v) const {
        Controls<D> c;
        if (opts_.constrained) {
            c.alpha = v;
            c.z0 = constrained_z0<D>(c.alpha, x0_, tmpl_);
        } else {
            c.z0.resize(n_, D);
            for (Eigen::Index k = 0; k < n_; ++k)
                for (int i = 0; i < D; ++i) c.z0(k, i) = v[k * D + i];
            c.alpha = v.tail(n_);
        }
        return c;
    }

    /// Energy and trajectory; a blow-up counts as +infinity.
    std::pair<double, std::optional<Trajectory<D>>> energy_at(const Eigen::VectorXd& v) const {
        try {
            const Controls<D> c = controls(v);
            Trajectory<D> traj = shoot(x0_, m0_, c, config_);
            const double e = energy(traj, target_);
            return {std::isfinite(e) ? e : std::numeric_limits<double>::infinity(), std::move(traj)};
        } catch (const DivergenceError&) {
            return {std::numeric_limits<double>::infinity(), std::nullopt};
        }
    }

    struct Evaluation {
        double energy;
        Eigen::VectorXd grad;
        GradientReport<D> report;
    };

    Evaluation gradient_at(const Eigen::VectorXd& v, const Trajectory<D>& traj) const {
        const Controls<D> c = controls(v);
        const AdjointState<D> adj = backprop(traj, terminal_adjoint(traj, target_), c.alpha, config_);
        GradientReport<D> report;
        report.energy = energy(traj, target_);
        report.grad_z0 = adj.xi_z;
        report.grad_alpha = adj.eta_alpha;
        const auto& fin = traj.final();
        report.bc_residual.resize(n_);
        for (Eigen::Index k = 0; k < n_; ++k) {
            const Vec<D> p = fin.x.row(k).transpose();
            report.bc_residual[k] = (Vec<D>(fin.z.row(k).transpose()) + c.alpha[k] * target_.grad(p)).norm();
        }
        Eigen::VectorXd g(size());
        if (opts_.constrained) {
            g = reduce_constrained<D>(report, x0_, tmpl_);
        } else {
            for (Eigen::Index k = 0; k < n_; ++k)
                for (int i = 0; i < D; ++i) g[k * D + i] = report.grad_z0(k, i);
            g.tail(n_) = report.grad_alpha;
        }
        return {report.energy, std::move(g), std::move(report)};
    }

    /// Preconditioned gradient (identity when preconditioning is off).
    Eigen::VectorXd precondition(const Eigen::VectorXd& g) const {
        if (!pre_) return g;
        Eigen::VectorXd out(g.size());
        if (opts_.constrained) {
            out = pre_->apply_alpha(g);
            return out;
        }
        PointArray<D> gz(n_, D);
        for (Eigen::Index k = 0; k < n_; ++k)
            for (int i = 0; i < D; ++i) gz(k, i) = g[k * D + i];
        const PointArray<D> pz = pre_->apply_z(gz);
        for (Eigen::Index k = 0; k < n_; ++k)
            for (int i = 0; i < D; ++i) out[k * D + i] = pz(k, i);
        out.tail(n_) = pre_->apply_alpha(g.tail(n_));
        return out;
    }

private:
    const TemplateField& tmpl_;
    const TargetField& target_;
    const PointArray<D>& x0_;
    const Eigen::VectorXd& m0_;
    const SolverConfig& config_;
    const OptimOptions& opts_;
    Eigen::Index n_;
    std::optional<GramPreconditioner<D>> pre_;
};

}  // namespace detail

/// Minimizes E(alpha, z0) starting from zero controls.
template <int D, ImageFunction<D> TemplateField, ImageFunction<D> TargetField>
OptimResult<D> run(const TemplateField& tmpl, const TargetField& target, const PointArray<D>& x0,
                   const Eigen::VectorXd& m0, const SolverConfig& config, const OptimOptions& opts,
                   const IterationLogger& log = {}) {
    config.validate();
    opts.validate();
    if (m0.size() != x0.rows()) throw InvalidArgument("m0 and x0 disagree on N");

    const detail::ShootingProblem<D, TemplateField, TargetField> problem(tmpl, target, x0, m0, config, opts);
    const Eigen::Index nvars = problem.size();
    const int restart_every =
        opts.cg_restart > 0 ? opts.cg_restart : static_cast<int>(std::min<Eigen::Index>(nvars, 50));

    Eigen::VectorXd v = Eigen::VectorXd::Zero(nvars);
    [[maybe_unused]] auto [e0, traj0] = problem.energy_at(v);
    if (!traj0) throw DivergenceError("zero controls diverged", 0);
    auto ev = problem.gradient_at(v, *traj0);

    OptimResult<D> result;
    result.energy_history.push_back(ev.energy);
    const double g0_norm = ev.grad.norm();
    result.grad_norm_history.push_back(g0_norm);

    auto emit = [&](int iter, double step, const char* status) {
        if (log) log({iter, result.energy_history.back(), result.grad_norm_history.back(), step, status});
    };
    auto finish = [&](OptimStatus status, int iter, double step) {
        result.status = status;
        result.iterations = iter;
        result.controls = problem.controls(v);
        result.final_report = ev.report;
        emit(iter, step, to_string(status));
        return result;
    };

    if (g0_norm == 0.0) return finish(OptimStatus::ConvergedGrad, 0, 0.0);
    if (ev.energy == 0.0) return finish(OptimStatus::ConvergedEnergy, 0, 0.0);
    emit(0, 0.0, "running");

    Eigen::VectorXd s = problem.precondition(ev.grad);
    Eigen::VectorXd dir = -s;
    double step_guess = 1.0 / (1.0 + g0_norm);
    double last_step = 0.0;

    for (int iter = 1; iter <= opts.max_iters; ++iter) {
        bool steepest = false;
        double dd = ev.grad.dot(dir);
        if (!(dd < 0.0)) {
            dir = -s;
            dd = ev.grad.dot(dir);
            steepest = true;
        }
        if (!(dd < 0.0)) return finish(OptimStatus::ConvergedGrad, iter - 1, last_step);

        std::optional<Trajectory<D>> accepted;
        double t = step_guess;
        for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
            for (int evals = 0; evals < opts.ls_max_evals; ++evals, t *= opts.ls_shrink) {
                auto [et, traj] = problem.energy_at(v + t * dir);
                if (traj && step_accept(ev.energy, et, dd, t, opts.ls_c1)) {
                    accepted = std::move(traj);
                    break;
                }
            }
            if (!accepted) {
                if (steepest) break;
                // retry once along the preconditioned steepest-descent direction
                dir = -s;
                dd = ev.grad.dot(dir);
                steepest = true;
                t = step_guess;
            }
        }
        if (!accepted) return finish(OptimStatus::LineSearchFailed, iter - 1, last_step);

        const double prev_energy = ev.energy;
        v += t * dir;
        last_step = t;
        step_guess = 2.0 * t;
        auto next = problem.gradient_at(v, *accepted);

        const Eigen::VectorXd s_new = problem.precondition(next.grad);
        double beta = 0.0;
        const double denom = ev.grad.dot(s);
        if (iter % restart_every != 0 && denom > 0.0) {
            beta = std::max(0.0, next.grad.dot(s_new - s) / denom);
        }
        ev = std::move(next);
        s = s_new;
        dir = -s + beta * dir;

        result.energy_history.push_back(ev.energy);
        result.grad_norm_history.push_back(ev.grad.norm());

        if (ev.grad.norm() <= opts.grad_tol * g0_norm) return finish(OptimStatus::ConvergedGrad, iter, t);
        if (ev.energy == 0.0 || std::abs(prev_energy - ev.energy) <= opts.energy_tol * prev_energy) {
            return finish(OptimStatus::ConvergedEnergy, iter, t);
        }
        emit(iter, t, "running");
    }
    return finish(OptimStatus::MaxIters, opts.max_iters, last_step);
}

}  // namespace metashoot
