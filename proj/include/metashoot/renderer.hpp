#pragma once

// Image reconstruction from a stored trajectory.
//
// Query points are advected together with the particle system: within each
// stored step the particles are re-integrated from the stored state with
// the same RK4 stages as dynamics::shoot, and the points see the velocity
// field generated by those stage states. With substeps == 1 a point placed
// on a particle follows it up to round-off. Backward characteristics restart
// from the stored state at the end of each step and integrate with a
// negative step.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "metashoot/dynamics.hpp"
#include "metashoot/image_field.hpp"
#include "metashoot/image_io.hpp"

namespace metashoot {

struct RenderConfig {
    int out_width = 0;   // 0: template width
    int out_height = 0;  // 0: template height
    int frames = 11;
    int gridline_stride = 0;  // 0 disables grid overlays
    int substeps = 4;
    ImageFormat format = ImageFormat::Pgm;

    void validate(int timesteps) const {
        if (out_width < 0 || out_height < 0) throw InvalidArgument("output size must be >= 0");
        if (frames < 1 || frames > timesteps + 1) {
            throw InvalidArgument("frames must lie in [1, T+1]");
        }
        if (substeps < 1) throw InvalidArgument("substeps must be >= 1");
        if (gridline_stride < 0) throw InvalidArgument("gridline stride must be >= 0");
    }
};

/// Points carried by the flow plus the intensity accumulated along them.
template <int D>
struct FlowPoints {
    PointArray<D> y;
    Eigen::VectorXd acc;
};

namespace detail {

template <int D>
void point_fields(const ParticleState<D>& s, const PointArray<D>& pts, const Eigen::VectorXd& alpha,
                  const SolverConfig& cfg, PointArray<D>& vel, Eigen::VectorXd& zeta) {
    const Eigen::Index n = s.size();
    const Eigen::Index m = pts.rows();
    vel.setZero(m, D);
    zeta.setZero(m);
    const double* x = s.x.data();
    const double* z = s.z.data();
    for (Eigen::Index p = 0; p < m; ++p) {
        const double* q = pts.data() + p * D;
        double* o = vel.data() + p * D;
        double acc = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
            const double dist = std::sqrt(squared_distance<D>(q, x + k * D));
            const double kv = radial_terms(cfg.kernel_v, dist).value;
            for (int i = 0; i < D; ++i) o[i] += kv * z[k * D + i];
            acc += radial_terms(cfg.kernel_h, dist).value * alpha[k];
        }
        zeta[p] = acc;
    }
}

/// One RK4 step of (particles, points, accumulated intensity) with step h.
template <int D>
void flow_step(ParticleState<D>& particles, FlowPoints<D>& pts, const Eigen::VectorXd& alpha,
               const SolverConfig& cfg, double h) {
    const Rk4Stages<D> st = rk4_stages(particles, alpha, cfg, h);
    const std::array<double, 4> feed{0.0, 0.5 * h, 0.5 * h, h};
    const std::array<double, 4> weight{h / 6.0, h / 3.0, h / 3.0, h / 6.0};
    PointArray<D> vel;
    Eigen::VectorXd zeta;
    PointArray<D> stage_y = pts.y;
    PointArray<D> dy = PointArray<D>::Zero(pts.y.rows(), D);
    Eigen::VectorXd dacc = Eigen::VectorXd::Zero(pts.y.rows());
    for (int i = 0; i < 4; ++i) {
        point_fields(st.inputs[i], stage_y, alpha, cfg, vel, zeta);
        dy += weight[i] * vel;
        dacc += weight[i] * zeta;
        if (i < 3) stage_y = pts.y + feed[i + 1] * vel;
    }
    const auto& k = st.slopes;
    particles = {particles.x + (h / 6.0) * (k[0].x + 2.0 * k[1].x + 2.0 * k[2].x + k[3].x),
                 particles.m + (h / 6.0) * (k[0].m + 2.0 * k[1].m + 2.0 * k[2].m + k[3].m),
                 particles.z + (h / 6.0) * (k[0].z + 2.0 * k[1].z + 2.0 * k[2].z + k[3].z)};
    pts.y += dy;
    pts.acc += dacc;
}

}  // namespace detail

/// Advects `points` from t = 0 forward through stored steps, calling
/// `on_step(index, pts)` at every stored time index 0..t_index.
template <int D>
FlowPoints<D> forward_flow(const Trajectory<D>& traj, const Eigen::VectorXd& alpha,
                           const SolverConfig& config, const PointArray<D>& points, int t_index,
                           int substeps,
                           const std::function<void(int, const FlowPoints<D>&)>& on_step = {}) {
    if (t_index < 0 || t_index > traj.timesteps()) throw InvalidArgument("t_index out of range");
    if (substeps < 1) throw InvalidArgument("substeps must be >= 1");
    FlowPoints<D> pts{points, Eigen::VectorXd::Zero(points.rows())};
    if (on_step) on_step(0, pts);
    const double h = traj.dt / substeps;
    for (int n = 0; n < t_index; ++n) {
        ParticleState<D> particles = traj.states[n];
        for (int s = 0; s < substeps; ++s) detail::flow_step(particles, pts, alpha, config, h);
        if (!pts.y.allFinite() || !pts.acc.allFinite()) {
            throw DivergenceError("forward flow produced non-finite positions", static_cast<std::size_t>(n + 1));
        }
        if (on_step) on_step(n + 1, pts);
    }
    return pts;
}

/// Characteristics from time t_index back to 0. The returned `acc` holds
/// the intensity gained between 0 and t along each characteristic.
template <int D>
FlowPoints<D> backward_flow(const Trajectory<D>& traj, const Eigen::VectorXd& alpha,
                            const SolverConfig& config, const PointArray<D>& points, int t_index,
                            int substeps) {
    if (t_index < 0 || t_index > traj.timesteps()) throw InvalidArgument("t_index out of range");
    if (substeps < 1) throw InvalidArgument("substeps must be >= 1");
    FlowPoints<D> pts{points, Eigen::VectorXd::Zero(points.rows())};
    const double h = -traj.dt / substeps;
    for (int n = t_index - 1; n >= 0; --n) {
        ParticleState<D> particles = traj.states[n + 1];
        for (int s = 0; s < substeps; ++s) detail::flow_step(particles, pts, alpha, config, h);
        if (!pts.y.allFinite() || !pts.acc.allFinite()) {
            throw DivergenceError("backward flow produced non-finite positions", static_cast<std::size_t>(n));
        }
    }
    pts.acc = -pts.acc;
    return pts;
}

/// m(t) at material points: q0(y0) plus the intensity accumulated along the
/// forward path of y0.
template <int D, typename Field>
Eigen::VectorXd template_frame(const Trajectory<D>& traj, const Field& tmpl, const Eigen::VectorXd& alpha,
                               int t_index, const PointArray<D>& points, const SolverConfig& config,
                               int substeps = 1) {
    const FlowPoints<D> pts = forward_flow(traj, alpha, config, points, t_index, substeps);
    Eigen::VectorXd out(points.rows());
    for (Eigen::Index p = 0; p < points.rows(); ++p) {
        out[p] = tmpl.eval(Vec<D>(points.row(p).transpose())) + pts.acc[p];
    }
    return out;
}

/// q(t) = m(t) o phi(t)^-1 at arbitrary points.
template <int D, typename Field>
Eigen::VectorXd deformed_at(const Trajectory<D>& traj, const Field& tmpl, const Eigen::VectorXd& alpha,
                            int t_index, const PointArray<D>& points, const SolverConfig& config,
                            int substeps) {
    const FlowPoints<D> back = backward_flow(traj, alpha, config, points, t_index, substeps);
    Eigen::VectorXd out(points.rows());
    for (Eigen::Index p = 0; p < points.rows(); ++p) {
        out[p] = tmpl.eval(Vec<D>(back.y.row(p).transpose())) + back.acc[p];
    }
    return out;
}

/// Output grid geometry: the template's extent at the requested size.
inline ScalarField output_geometry(const ScalarField& tmpl, const RenderConfig& out) {
    const int w = out.out_width > 0 ? out.out_width : tmpl.width();
    const int h = out.out_height > 0 ? out.out_height : tmpl.height();
    return resample(tmpl, w, h);
}

inline PointArray<2> node_positions(const ScalarField& geometry) {
    PointArray<2> pts(static_cast<Eigen::Index>(geometry.width()) * geometry.height(), 2);
    Eigen::Index k = 0;
    for (int j = 0; j < geometry.height(); ++j)
        for (int i = 0; i < geometry.width(); ++i) pts.row(k++) = geometry.node_position(i, j).transpose();
    return pts;
}

inline ScalarField with_values(const ScalarField& geometry, const Eigen::VectorXd& v) {
    return {geometry.width(), geometry.height(), std::vector<double>(v.data(), v.data() + v.size()),
            geometry.spacing(), geometry.origin()};
}

inline ScalarField deformed_frame(const Trajectory<2>& traj, const ScalarField& tmpl,
                                  const Eigen::VectorXd& alpha, int t_index, const RenderConfig& out,
                                  const SolverConfig& config) {
    const ScalarField geom = output_geometry(tmpl, out);
    return with_values(geom, deformed_at<2>(traj, tmpl, alpha, t_index, node_positions(geom), config,
                                            out.substeps));
}

namespace detail {

struct GridLines {
    PointArray<2> samples;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> segments;
};

inline GridLines gridline_samples(const ScalarField& geom, int stride) {
    std::vector<Vec<2>> pts;
    GridLines g;
    auto add_line = [&](int count, const std::function<Vec<2>(int)>& at) {
        const auto first = static_cast<Eigen::Index>(pts.size());
        for (int s = 0; s < count; ++s) pts.push_back(at(s));
        for (int s = 1; s < count; ++s) g.segments.emplace_back(first + s - 1, first + s);
    };
    for (int j = 0; j < geom.height(); j += stride)
        add_line(geom.width(), [&](int i) { return geom.node_position(i, j); });
    for (int i = 0; i < geom.width(); i += stride)
        add_line(geom.height(), [&](int j) { return geom.node_position(i, j); });
    g.samples.resize(static_cast<Eigen::Index>(pts.size()), 2);
    for (std::size_t k = 0; k < pts.size(); ++k) g.samples.row(static_cast<Eigen::Index>(k)) = pts[k].transpose();
    return g;
}

inline void draw_segment(std::vector<double>& img, int w, int h, long x0, long y0, long x1, long y1) {
    const long dx = std::abs(x1 - x0);
    const long dy = -std::abs(y1 - y0);
    const long sx = x0 < x1 ? 1 : -1;
    const long sy = y0 < y1 ? 1 : -1;
    long err = dx + dy;
    for (long guard = 0; guard < 4L * (w + h) + 8; ++guard) {
        if (x0 >= 0 && y0 >= 0 && x0 < w && y0 < h) img[static_cast<std::size_t>(y0) * w + x0] = 0.0;
        if (x0 == x1 && y0 == y1) break;
        const long e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

inline ScalarField rasterize(const ScalarField& geom, const GridLines& lines, const PointArray<2>& moved) {
    const int w = geom.width();
    const int h = geom.height();
    std::vector<double> img(static_cast<std::size_t>(w) * h, 1.0);
    auto to_pixel = [&](Eigen::Index k) {
        const Vec<2> c = (Vec<2>(moved.row(k).transpose()) - geom.origin()).cwiseQuotient(geom.spacing());
        // clamp far-away samples so the line walk stays bounded
        const double lim = 4.0 * (w + h);
        return std::pair<long, long>(std::lround(std::clamp(c.x(), -lim, lim)),
                                     std::lround(std::clamp(c.y(), -lim, lim)));
    };
    for (const auto& [a, b] : lines.segments) {
        const auto [xa, ya] = to_pixel(a);
        const auto [xb, yb] = to_pixel(b);
        draw_segment(img, w, h, xa, ya, xb, yb);
    }
    return {w, h, std::move(img), geom.spacing(), geom.origin()};
}

inline std::vector<int> frame_indices(int frames, int timesteps) {
    std::vector<int> idx;
    if (frames == 1) return {timesteps};
    for (int f = 0; f < frames; ++f) {
        idx.push_back(static_cast<int>(std::lround(static_cast<double>(f) * timesteps / (frames - 1))));
    }
    return idx;
}

}  // namespace detail

/// Dark grid lines (value 0) on white (value 1), advected forward to t.
/// Stride 0 gives an all-white image.
inline ScalarField gridlines_frame(const Trajectory<2>& traj, const ScalarField& tmpl,
                                   const Eigen::VectorXd& alpha, int t_index, const RenderConfig& out,
                                   const SolverConfig& config) {
    const ScalarField geom = output_geometry(tmpl, out);
    if (out.gridline_stride == 0) return ScalarField::constant(geom.width(), geom.height(), 1.0);
    const auto lines = detail::gridline_samples(geom, out.gridline_stride);
    const auto moved = forward_flow<2>(traj, alpha, config, lines.samples, t_index, out.substeps);
    return detail::rasterize(geom, lines, moved.y);
}

/// Writes deformed_NNNN, template_NNNN (and grid_NNNN when grid lines are
/// enabled) plus trajectory.csv into `dir`. Returns the written paths.
inline std::vector<std::filesystem::path> export_sequence(const Trajectory<2>& traj, const ScalarField& tmpl,
                                                          const Eigen::VectorXd& alpha,
                                                          const RenderConfig& out, const SolverConfig& config,
                                                          const std::filesystem::path& dir) {
    out.validate(traj.timesteps());
    std::filesystem::create_directories(dir);
    const ScalarField geom = output_geometry(tmpl, out);
    const PointArray<2> nodes = node_positions(geom);
    const std::vector<int> indices = detail::frame_indices(out.frames, traj.timesteps());
    const int last = indices.back();
    const char* ext = extension(out.format);

    auto name = [&](const char* stem, int f) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%s_%04d%s", stem, f, ext);
        return dir / buf;
    };
    std::vector<std::filesystem::path> written;

    // Lagrangian template m(t) and grid lines share one forward sweep each.
    std::vector<Eigen::VectorXd> tmpl_acc(traj.timesteps() + 1);
    forward_flow<2>(traj, alpha, config, nodes, last, out.substeps,
                    [&](int n, const FlowPoints<2>& p) { tmpl_acc[n] = p.acc; });
    Eigen::VectorXd q0(nodes.rows());
    for (Eigen::Index p = 0; p < nodes.rows(); ++p) q0[p] = tmpl.eval(Vec<2>(nodes.row(p).transpose()));

    std::vector<PointArray<2>> grid_pos(traj.timesteps() + 1);
    detail::GridLines lines;
    if (out.gridline_stride > 0) {
        lines = detail::gridline_samples(geom, out.gridline_stride);
        forward_flow<2>(traj, alpha, config, lines.samples, last, out.substeps,
                        [&](int n, const FlowPoints<2>& p) { grid_pos[n] = p.y; });
    }

    for (int f = 0; f < static_cast<int>(indices.size()); ++f) {
        const int t = indices[f];
        const ScalarField deformed = deformed_frame(traj, tmpl, alpha, t, out, config);
        save_image(deformed, name("deformed", f), out.format);
        written.push_back(name("deformed", f));
        save_image(with_values(geom, q0 + tmpl_acc[t]), name("template", f), out.format);
        written.push_back(name("template", f));
        if (out.gridline_stride > 0) {
            save_image(multiply(deformed, detail::rasterize(geom, lines, grid_pos[t])), name("grid", f),
                       out.format);
            written.push_back(name("grid", f));
        }
    }

    const auto csv = dir / "trajectory.csv";
    std::ofstream os(csv);
    if (!os) throw std::runtime_error("cannot write " + csv.string());
    write_trajectory_csv(traj, os);
    written.push_back(csv);
    return written;
}

}  // namespace metashoot
