#pragma once

// JSON file formats:
//
//   controls file      {"format": "metashoot.controls", "version": 1, "dim": 2,
//                       "template", "target", "solver": {...}, "stride",
//                       "x0": [[x, y], ...], "m0": [...], "alpha": [...],
//                       "z0": [[zx, zy], ...], "energy"}
//   momentum set       {"format": "metashoot.momentum_set", "version": 1,
//                       "template_id", "solver": {...}, "x0": [...],
//                       "alphas": [[...], ...]}
//
// Doubles are written in shortest round-trip form, so reading a file back
// reproduces the values exactly.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "json.hpp"

#include "metashoot/adjoint.hpp"
#include "metashoot/error.hpp"
#include "metashoot/optimizer.hpp"
#include "metashoot/particles.hpp"
#include "metashoot/sampler.hpp"

namespace metashoot {

using json = nlohmann::json;

namespace detail {

template <int D>
json points_to_json(const PointArray<D>& p) {
    json arr = json::array();
    for (Eigen::Index k = 0; k < p.rows(); ++k) {
        json row = json::array();
        for (int i = 0; i < D; ++i) row.push_back(p(k, i));
        arr.push_back(std::move(row));
    }
    return arr;
}

template <int D>
PointArray<D> points_from_json(const json& j, const char* field) {
    if (!j.is_array()) throw FormatError(std::string("'") + field + "' must be an array");
    PointArray<D> p(static_cast<Eigen::Index>(j.size()), D);
    for (std::size_t k = 0; k < j.size(); ++k) {
        if (!j[k].is_array() || j[k].size() != static_cast<std::size_t>(D)) {
            throw FormatError(std::string("'") + field + "' rows must have " + std::to_string(D) + " entries");
        }
        for (int i = 0; i < D; ++i) p(static_cast<Eigen::Index>(k), i) = j[k][i].get<double>();
    }
    return p;
}

inline json vector_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Eigen::VectorXd vector_from_json(const json& j, const char* field) {
    if (!j.is_array()) throw FormatError(std::string("'") + field + "' must be an array");
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline void expect_format(const json& j, const char* format) {
    if (!j.is_object() || j.value("format", std::string{}) != format) {
        throw FormatError(std::string("expected a '") + format + "' document");
    }
    if (j.value("version", 0) != 1) throw FormatError("unsupported file version");
}

}  // namespace detail

inline json solver_to_json(const SolverConfig& c) {
    return {{"sigma", c.sigma}, {"timesteps", c.timesteps}, {"tau_v", c.kernel_v.tau}, {"tau_h", c.kernel_h.tau}};
}

inline SolverConfig solver_from_json(const json& j) {
    SolverConfig c;
    c.sigma = j.at("sigma").get<double>();
    c.timesteps = j.at("timesteps").get<int>();
    c.kernel_v = {j.at("tau_v").get<double>(), KernelFamily::V};
    c.kernel_h = {j.at("tau_h").get<double>(), KernelFamily::H};
    c.validate();
    return c;
}

/// Everything needed to re-shoot a matching result.
struct ControlsFile {
    std::string template_path;
    std::string target_path;
    SolverConfig solver;
    int stride = 1;
    PointArray<2> x0;
    Eigen::VectorXd m0;
    Controls<2> controls;
    double energy = 0.0;
};

inline json to_json(const ControlsFile& f) {
    return {{"format", "metashoot.controls"},
            {"version", 1},
            {"dim", 2},
            {"template", f.template_path},
            {"target", f.target_path},
            {"solver", solver_to_json(f.solver)},
            {"stride", f.stride},
            {"x0", detail::points_to_json<2>(f.x0)},
            {"m0", detail::vector_to_json(f.m0)},
            {"alpha", detail::vector_to_json(f.controls.alpha)},
            {"z0", detail::points_to_json<2>(f.controls.z0)},
            {"energy", f.energy}};
}

inline ControlsFile controls_from_json(const json& j) {
    try {
        detail::expect_format(j, "metashoot.controls");
        if (j.at("dim").get<int>() != 2) throw FormatError("only dim = 2 controls files are supported");
        ControlsFile f;
        f.template_path = j.at("template").get<std::string>();
        f.target_path = j.value("target", std::string{});
        f.solver = solver_from_json(j.at("solver"));
        f.stride = j.value("stride", 1);
        f.x0 = detail::points_from_json<2>(j.at("x0"), "x0");
        f.m0 = detail::vector_from_json(j.at("m0"), "m0");
        f.controls.alpha = detail::vector_from_json(j.at("alpha"), "alpha");
        f.controls.z0 = detail::points_from_json<2>(j.at("z0"), "z0");
        f.energy = j.value("energy", 0.0);
        const Eigen::Index n = f.x0.rows();
        if (n < 1 || f.m0.size() != n) throw FormatError("x0 and m0 disagree on the particle count");
        f.controls.validate(n);
        return f;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed controls file: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("inconsistent controls file: ") + e.what());
    }
}

/// Momentum set together with the solver parameters that produced it.
struct MomentumSetFile {
    MomentumSet<2> set;
    SolverConfig solver;
};

inline json to_json(const MomentumSetFile& f) {
    json alphas = json::array();
    for (const auto& a : f.set.alphas) alphas.push_back(detail::vector_to_json(a));
    return {{"format", "metashoot.momentum_set"},
            {"version", 1},
            {"template_id", f.set.template_id},
            {"solver", solver_to_json(f.solver)},
            {"x0", detail::points_to_json<2>(f.set.x0)},
            {"alphas", std::move(alphas)}};
}

inline MomentumSetFile momentum_set_from_json(const json& j) {
    try {
        detail::expect_format(j, "metashoot.momentum_set");
        MomentumSetFile f;
        f.set.template_id = j.value("template_id", std::string{});
        f.solver = solver_from_json(j.at("solver"));
        f.set.x0 = detail::points_from_json<2>(j.at("x0"), "x0");
        for (const auto& a : j.at("alphas")) f.set.alphas.push_back(detail::vector_from_json(a, "alphas"));
        f.set.validate();
        return f;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed momentum set: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("inconsistent momentum set: ") + e.what());
    }
}

template <int D>
json report_to_json(const GradientReport<D>& r) {
    return {{"energy", r.energy},
            {"grad_z0_norm", r.grad_z0.norm()},
            {"grad_alpha_norm", r.grad_alpha.norm()},
            {"max_bc_residual", r.bc_residual.size() ? r.bc_residual.maxCoeff() : 0.0},
            {"mean_bc_residual", r.bc_residual.size() ? r.bc_residual.mean() : 0.0}};
}

inline json to_json(const IterationRecord& r) {
    return {{"iter", r.iter}, {"energy", r.energy}, {"grad_norm", r.grad_norm}, {"step", r.step}, {"status", r.status}};
}

inline json read_json_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw NotFoundError("file not found: " + path.string());
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open: " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError("invalid JSON in " + path.string() + ": " + e.what());
    }
}

inline void write_json_file(const json& j, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace metashoot
