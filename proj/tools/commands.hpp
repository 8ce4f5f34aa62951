#pragma once

// metashoot command line: match, shoot, render, sample, collect.
//
// Exit codes: 0 success (any converged status or the iteration cap),
// 2 line search failure, 1 for I/O, format and numeric errors.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "metashoot/metashoot.hpp"

namespace metashoot::cli {

namespace fs = std::filesystem;

/// Fully resolved run parameters. Written as config.json next to the
/// outputs; `--config config.json` reloads it.
struct RunConfig {
    std::string command;
    std::string template_path;
    std::string target_path;
    std::string input;  // controls file (shoot, render) or momentum set (sample)
    std::vector<std::string> inputs;  // collect
    std::string out = "out";

    double tau_v = 1.5;
    double tau_h = 0.5;
    double sigma = 1.0;
    int timesteps = 10;
    int stride = 1;

    bool constrained = false;
    bool precondition = false;
    int max_iters = 500;
    double grad_tol = 1e-6;
    double energy_tol = 1e-12;

    int frames = 11;
    int gridlines = 0;
    int substeps = 4;
    int width = 0;
    int height = 0;
    std::string format = "pgm";

    std::uint64_t seed = 0;
    double c = 0.0;
    int n = 0;  // 0: number of stored momenta
    int count = 10;

    SolverConfig solver() const {
        SolverConfig s;
        s.sigma = sigma;
        s.timesteps = timesteps;
        s.kernel_v = {tau_v, KernelFamily::V};
        s.kernel_h = {tau_h, KernelFamily::H};
        return s;
    }

    OptimOptions optim() const {
        OptimOptions o;
        o.max_iters = max_iters;
        o.grad_tol = grad_tol;
        o.energy_tol = energy_tol;
        o.constrained = constrained;
        o.preconditioned = precondition;
        return o;
    }

    RenderConfig render() const {
        RenderConfig r;
        r.out_width = width;
        r.out_height = height;
        r.frames = frames;
        r.gridline_stride = gridlines;
        r.substeps = substeps;
        r.format = format == "png" ? ImageFormat::Png : ImageFormat::Pgm;
        return r;
    }
};

inline json to_json(const RunConfig& c) {
    return {{"command", c.command},   {"template", c.template_path}, {"target", c.target_path},
            {"input", c.input},       {"inputs", c.inputs},          {"out", c.out},
            {"tau_v", c.tau_v},       {"tau_h", c.tau_h},            {"sigma", c.sigma},
            {"timesteps", c.timesteps}, {"stride", c.stride},        {"constrained", c.constrained},
            {"precondition", c.precondition}, {"max_iters", c.max_iters}, {"grad_tol", c.grad_tol},
            {"energy_tol", c.energy_tol}, {"frames", c.frames},      {"gridlines", c.gridlines},
            {"substeps", c.substeps}, {"width", c.width},            {"height", c.height},
            {"format", c.format},     {"seed", c.seed},              {"c", c.c},
            {"n", c.n},               {"count", c.count}};
}

inline RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        get("command", c.command);
        get("template", c.template_path);
        get("target", c.target_path);
        get("input", c.input);
        get("inputs", c.inputs);
        get("out", c.out);
        get("tau_v", c.tau_v);
        get("tau_h", c.tau_h);
        get("sigma", c.sigma);
        get("timesteps", c.timesteps);
        get("stride", c.stride);
        get("constrained", c.constrained);
        get("precondition", c.precondition);
        get("max_iters", c.max_iters);
        get("grad_tol", c.grad_tol);
        get("energy_tol", c.energy_tol);
        get("frames", c.frames);
        get("gridlines", c.gridlines);
        get("substeps", c.substeps);
        get("width", c.width);
        get("height", c.height);
        get("format", c.format);
        get("seed", c.seed);
        get("c", c.c);
        get("n", c.n);
        get("count", c.count);
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed run config: ") + e.what());
    }
    return c;
}

namespace detail {

inline void write_config(const RunConfig& cfg) {
    fs::create_directories(cfg.out);
    write_json_file(to_json(cfg), fs::path(cfg.out) / "config.json");
}

inline Eigen::VectorXd sample_values(const ScalarField& field, const PointArray<2>& x0) {
    Eigen::VectorXd m(x0.rows());
    for (Eigen::Index k = 0; k < x0.rows(); ++k) m[k] = field.eval(Vec<2>(x0.row(k).transpose()));
    return m;
}

/// Loads a controls file and checks it against the template it names.
inline ControlsFile load_controls(const RunConfig& cfg, std::optional<ScalarField>& tmpl) {
    ControlsFile file = controls_from_json(read_json_file(cfg.input));
    const std::string tpath = cfg.template_path.empty() ? file.template_path : cfg.template_path;
    tmpl = load_image(tpath);
    const GridSample grid = sample_grid(*tmpl, file.stride);
    if (grid.positions.rows() != file.x0.rows()) {
        throw FormatError("controls file does not match the template grid (particle count differs)");
    }
    return file;
}

}  // namespace detail

inline int cmd_match(const RunConfig& cfg, std::ostream& log) {
    const ScalarField tmpl = load_image(cfg.template_path);
    const ScalarField target = load_image(cfg.target_path);
    if (tmpl.width() != target.width() || tmpl.height() != target.height()) {
        throw FormatError("template and target sizes differ");
    }
    const SolverConfig solver = cfg.solver();
    solver.validate();
    const GridSample grid = sample_grid(tmpl, cfg.stride);

    detail::write_config(cfg);
    const fs::path out(cfg.out);
    std::ofstream iters(out / "iterations.jsonl");
    if (!iters) throw std::runtime_error("cannot write " + (out / "iterations.jsonl").string());
    const auto result = run<2>(tmpl, target, grid.positions, grid.values, solver, cfg.optim(),
                               [&](const IterationRecord& r) { iters << to_json(r).dump() << '\n'; });

    ControlsFile file{cfg.template_path, cfg.target_path, solver, cfg.stride, grid.positions, grid.values,
                      result.controls, result.final_report.energy};
    write_json_file(to_json(file), out / "controls.json");

    json diag = report_to_json(result.final_report);
    diag["status"] = to_string(result.status);
    diag["iterations"] = result.iterations;
    diag["initial_energy"] = result.energy_history.front();
    diag["particles"] = grid.positions.rows();
    write_json_file(diag, out / "diagnostics.json");

    log << "match: " << to_string(result.status) << " after " << result.iterations << " iterations, E = "
        << result.final_report.energy << " (E0 = " << result.energy_history.front() << ")\n";
    return result.status == OptimStatus::LineSearchFailed ? 2 : 0;
}

inline int cmd_shoot(const RunConfig& cfg, std::ostream& log) {
    std::optional<ScalarField> tmpl;
    const ControlsFile file = detail::load_controls(cfg, tmpl);
    const SolverConfig solver = file.solver;
    const Trajectory<2> traj = shoot<2>(file.x0, file.m0, file.controls, solver);

    RunConfig echo = cfg;
    echo.tau_v = solver.kernel_v.tau;
    echo.tau_h = solver.kernel_h.tau;
    echo.sigma = solver.sigma;
    echo.timesteps = solver.timesteps;
    echo.stride = file.stride;
    detail::write_config(echo);

    const fs::path out(cfg.out);
    {
        std::ofstream os(out / "trajectory.csv");
        if (!os) throw std::runtime_error("cannot write trajectory.csv");
        write_trajectory_csv(traj, os);
    }
    json summary = {{"timesteps", traj.timesteps()},
                    {"particles", file.x0.rows()},
                    {"hamiltonian_initial", hamiltonian(traj.initial(), file.controls.alpha, solver)},
                    {"hamiltonian_final", hamiltonian(traj.final(), file.controls.alpha, solver)}};
    const std::string target_path = cfg.target_path.empty() ? file.target_path : cfg.target_path;
    if (!target_path.empty()) {
        const double e = energy(traj, load_image(target_path));
        summary["energy"] = e;
        log << "shoot: E = " << e << '\n';
    }
    write_json_file(summary, out / "summary.json");
    return 0;
}

inline int cmd_render(const RunConfig& cfg, std::ostream& log) {
    std::optional<ScalarField> tmpl;
    const ControlsFile file = detail::load_controls(cfg, tmpl);
    const Trajectory<2> traj = shoot<2>(file.x0, file.m0, file.controls, file.solver);
    detail::write_config(cfg);
    const auto written = export_sequence(traj, *tmpl, file.controls.alpha, cfg.render(), file.solver, cfg.out);
    log << "render: wrote " << written.size() << " files to " << cfg.out << '\n';
    return 0;
}

inline int cmd_sample(const RunConfig& cfg, std::ostream& log) {
    const MomentumSetFile file = momentum_set_from_json(read_json_file(cfg.input));
    const std::string tpath = cfg.template_path.empty() ? file.set.template_id : cfg.template_path;
    const ScalarField tmpl = load_image(tpath);
    if (cfg.count < 1) throw InvalidArgument("count must be >= 1");
    const int n = cfg.n > 0 ? cfg.n : static_cast<int>(file.set.alphas.size());
    detail::write_config(cfg);
    const RenderConfig render = cfg.render();
    for (int s = 0; s < cfg.count; ++s) {
        const ScalarField frame =
            shoot_sample(file.set, cfg.c, n, cfg.seed + static_cast<std::uint64_t>(s), tmpl, file.solver,
                         cfg.constrained, render);
        char name[64];
        std::snprintf(name, sizeof name, "sample_%04d%s", s, extension(render.format));
        save_image(frame, fs::path(cfg.out) / name, render.format);
    }
    log << "sample: wrote " << cfg.count << " frames to " << cfg.out << '\n';
    return 0;
}

/// Gathers the alphas of several controls files (same grid and solver) into
/// a momentum set.
inline int cmd_collect(const RunConfig& cfg, std::ostream& log) {
    if (cfg.inputs.empty()) throw InvalidArgument("collect needs at least one controls file");
    MomentumSetFile set;
    for (std::size_t i = 0; i < cfg.inputs.size(); ++i) {
        const ControlsFile f = controls_from_json(read_json_file(cfg.inputs[i]));
        if (i == 0) {
            set.set.x0 = f.x0;
            set.set.template_id = f.template_path;
            set.solver = f.solver;
        } else if (f.x0.rows() != set.set.x0.rows() || !(f.x0.array() == set.set.x0.array()).all()) {
            throw FormatError(cfg.inputs[i] + ": particle grid differs from " + cfg.inputs[0]);
        } else if (solver_to_json(f.solver) != solver_to_json(set.solver)) {
            throw FormatError(cfg.inputs[i] + ": solver parameters differ from " + cfg.inputs[0]);
        }
        set.set.alphas.push_back(f.controls.alpha);
    }
    if (!cfg.template_path.empty()) set.set.template_id = cfg.template_path;
    const fs::path out(cfg.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_json_file(to_json(set), out);
    log << "collect: " << set.set.alphas.size() << " momenta -> " << cfg.out << '\n';
    return 0;
}

namespace detail {

/// Returns the value of --config if present, so it can seed the defaults
/// before the real parse.
inline std::optional<std::string> find_config(const std::vector<std::string>& args) {
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
    }
    return std::nullopt;
}

inline void add_solver_flags(CLI::App* app, RunConfig& c) {
    app->add_option("--tau-v", c.tau_v, "deformation kernel scale")->capture_default_str();
    app->add_option("--tau-h", c.tau_h, "intensity kernel scale")->capture_default_str();
    app->add_option("--sigma", c.sigma, "intensity/deformation trade-off")->capture_default_str();
    app->add_option("--timesteps", c.timesteps, "RK4 steps on [0,1]")->capture_default_str();
}

inline void add_render_flags(CLI::App* app, RunConfig& c) {
    app->add_option("--frames", c.frames, "frames in the sequence")->capture_default_str();
    app->add_option("--gridlines", c.gridlines, "grid line spacing in pixels, 0 = off")->capture_default_str();
    app->add_option("--substeps", c.substeps, "flow refinement per stored step")->capture_default_str();
    app->add_option("--width", c.width, "output width (0 = template)");
    app->add_option("--height", c.height, "output height (0 = template)");
    app->add_option("--format", c.format, "frame format")->check(CLI::IsMember({"pgm", "png"}))->capture_default_str();
}

}  // namespace detail

/// Parses `args` (without the program name) and runs the command.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    RunConfig cfg;
    try {
        if (auto path = detail::find_config(args)) cfg = run_config_from_json(read_json_file(*path));
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }

    CLI::App app{"Particle geodesic shooting for image metamorphosis"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "reload a config.json written by an earlier run");
    app.fallthrough();  // accept --config after the subcommand too

    auto* match = app.add_subcommand("match", "register a template to a target");
    match->add_option("--template", cfg.template_path, "template image (PGM/PNG)")->required(cfg.template_path.empty());
    match->add_option("--target", cfg.target_path, "target image (PGM/PNG)")->required(cfg.target_path.empty());
    match->add_option("--out", cfg.out, "output directory")->capture_default_str();
    detail::add_solver_flags(match, cfg);
    match->add_option("--stride", cfg.stride, "particle spacing in pixels")->capture_default_str();
    match->add_flag("--constrained", cfg.constrained, "tie z(0) to alpha through the template gradient");
    match->add_flag("--precondition", cfg.precondition, "kernel Gram preconditioning");
    match->add_option("--max-iters", cfg.max_iters, "CG iteration cap")->capture_default_str();
    match->add_option("--grad-tol", cfg.grad_tol, "relative gradient tolerance")->capture_default_str();
    match->add_option("--energy-tol", cfg.energy_tol, "relative energy change tolerance")->capture_default_str();

    auto* shoot_cmd = app.add_subcommand("shoot", "re-integrate stored controls");
    shoot_cmd->add_option("controls", cfg.input, "controls.json from match")->required(cfg.input.empty());
    shoot_cmd->add_option("--template", cfg.template_path, "override the stored template path");
    shoot_cmd->add_option("--target", cfg.target_path, "override the stored target path");
    shoot_cmd->add_option("--out", cfg.out, "output directory")->capture_default_str();

    auto* render_cmd = app.add_subcommand("render", "write the morph as an image sequence");
    render_cmd->add_option("controls", cfg.input, "controls.json from match")->required(cfg.input.empty());
    render_cmd->add_option("--template", cfg.template_path, "override the stored template path");
    render_cmd->add_option("--out", cfg.out, "output directory")->capture_default_str();
    detail::add_render_flags(render_cmd, cfg);

    auto* sample_cmd = app.add_subcommand("sample", "shoot random momenta drawn around a momentum set");
    sample_cmd->add_option("momenta", cfg.input, "momentum set JSON")->required(cfg.input.empty());
    sample_cmd->add_option("--template", cfg.template_path, "template image (default: the set's template_id)");
    sample_cmd->add_option("--out", cfg.out, "output directory")->capture_default_str();
    sample_cmd->add_option("--c", cfg.c, "spread of the random momenta")->required();
    sample_cmd->add_option("--n", cfg.n, "normalization count (default: size of the set)");
    sample_cmd->add_option("--seed", cfg.seed, "first seed")->capture_default_str();
    sample_cmd->add_option("--count", cfg.count, "number of samples")->capture_default_str();
    sample_cmd->add_flag("--constrained", cfg.constrained, "z(0) = -alpha grad(template)");
    sample_cmd->add_option("--substeps", cfg.substeps, "flow refinement per stored step")->capture_default_str();
    sample_cmd->add_option("--format", cfg.format, "frame format")->check(CLI::IsMember({"pgm", "png"}));

    auto* collect_cmd = app.add_subcommand("collect", "build a momentum set from controls files");
    collect_cmd->add_option("controls", cfg.inputs, "controls.json files")->required();
    collect_cmd->add_option("--template", cfg.template_path, "template path stored as template_id");
    collect_cmd->add_option("--out", cfg.out, "output JSON path")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*match) return cfg.command = "match", cmd_match(cfg, out);
        if (*shoot_cmd) return cfg.command = "shoot", cmd_shoot(cfg, out);
        if (*render_cmd) return cfg.command = "render", cmd_render(cfg, out);
        if (*sample_cmd) return cfg.command = "sample", cmd_sample(cfg, out);
        if (*collect_cmd) return cfg.command = "collect", cmd_collect(cfg, out);
    } catch (const NotFoundError& e) {
        err << "not found: " << e.what() << '\n';
    } catch (const DivergenceError& e) {
        err << "diverged at step " << e.step() << ": " << e.what() << '\n';
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
    }
    return 1;
}

}  // namespace metashoot::cli
