#pragma once

// Gridded 2-D grayscale image with a continuous bilinear interpolant.
//
// Node (i, j) (column i, row j) sits at physical position
// origin + (i * spacing_x, j * spacing_y). Nodes outside the grid are taken
// to be zero, so the interpolant is continuous everywhere and vanishes one
// cell beyond the border.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "metashoot/error.hpp"
#include "metashoot/kernels.hpp"
#include "metashoot/particles.hpp"

namespace metashoot {

class ScalarField {
public:
    ScalarField() = default;

    ScalarField(int width, int height, std::vector<double> values,
                Vec<2> spacing = Vec<2>::Ones(), Vec<2> origin = Vec<2>::Zero())
        : width_(width), height_(height), values_(std::move(values)), spacing_(spacing),
          origin_(origin) {
        if (width < 1 || height < 1) {
            throw InvalidArgument("image dimensions must be positive");
        }
        if (values_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
            throw InvalidArgument("image value count does not match width*height");
        }
        if (!(spacing_.array() > 0.0).all() || !spacing_.allFinite() || !origin_.allFinite()) {
            throw InvalidArgument("image spacing must be positive and origin finite");
        }
        for (double v : values_) {
            if (!std::isfinite(v)) throw InvalidArgument("image contains non-finite values");
        }
    }

    static ScalarField constant(int width, int height, double value) {
        return {width, height, std::vector<double>(static_cast<std::size_t>(width) * height, value)};
    }

    /// Builds a field from f(i, j) with unit spacing.
    static ScalarField from_function(int width, int height,
                                     const std::function<double(int, int)>& f) {
        std::vector<double> v(static_cast<std::size_t>(width) * height);
        for (int j = 0; j < height; ++j)
            for (int i = 0; i < width; ++i) v[static_cast<std::size_t>(j) * width + i] = f(i, j);
        return {width, height, std::move(v)};
    }

    int width() const { return width_; }
    int height() const { return height_; }
    const Vec<2>& spacing() const { return spacing_; }
    const Vec<2>& origin() const { return origin_; }
    std::span<const double> values() const { return values_; }

    double at(int i, int j) const { return values_[static_cast<std::size_t>(j) * width_ + i]; }

    Vec<2> node_position(int i, int j) const {
        return origin_ + Vec<2>(i * spacing_.x(), j * spacing_.y());
    }

    double eval(const Vec<2>& p) const {
        Cell c;
        if (!locate(p, c)) return 0.0;
        const double fx = c.fx;
        const double fy = c.fy;
        return (1.0 - fx) * (1.0 - fy) * c.v00 + fx * (1.0 - fy) * c.v10 + (1.0 - fx) * fy * c.v01 +
               fx * fy * c.v11;
    }

    /// Exact gradient of the interpolant. On a cell edge the cell with the
    /// lower index is used.
    Vec<2> grad(const Vec<2>& p) const {
        Cell c;
        if (!locate(p, c)) return Vec<2>::Zero();
        const double gx = (1.0 - c.fy) * (c.v10 - c.v00) + c.fy * (c.v11 - c.v01);
        const double gy = (1.0 - c.fx) * (c.v01 - c.v00) + c.fx * (c.v11 - c.v10);
        return {gx / spacing_.x(), gy / spacing_.y()};
    }

    double sum() const {
        double s = 0.0;
        for (double v : values_) s += v;
        return s;
    }

private:
    struct Cell {
        double fx, fy, v00, v10, v01, v11;
    };

    double node_or_zero(long i, long j) const {
        if (i < 0 || j < 0 || i >= width_ || j >= height_) return 0.0;
        return values_[static_cast<std::size_t>(j) * width_ + static_cast<std::size_t>(i)];
    }

    bool locate(const Vec<2>& p, Cell& c) const {
        const double cx = (p.x() - origin_.x()) / spacing_.x();
        const double cy = (p.y() - origin_.y()) / spacing_.y();
        if (!(cx >= -1.0 && cx < width_ && cy >= -1.0 && cy < height_)) return false;
        const double ix = std::floor(cx);
        const double iy = std::floor(cy);
        const long i = static_cast<long>(ix);
        const long j = static_cast<long>(iy);
        c.fx = cx - ix;
        c.fy = cy - iy;
        c.v00 = node_or_zero(i, j);
        c.v10 = node_or_zero(i + 1, j);
        c.v01 = node_or_zero(i, j + 1);
        c.v11 = node_or_zero(i + 1, j + 1);
        return true;
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<double> values_;
    Vec<2> spacing_ = Vec<2>::Ones();
    Vec<2> origin_ = Vec<2>::Zero();
};

/// Gaussian blur with standard deviation `radius` pixels, truncated at four
/// standard deviations. Borders use half-sample symmetric reflection, which
/// keeps constants fixed and preserves total mass.
inline ScalarField smooth(const ScalarField& field, double radius) {
    if (!(radius >= 0.0) || !std::isfinite(radius)) {
        throw InvalidArgument("smoothing radius must be >= 0");
    }
    if (radius == 0.0) return field;

    const int half = static_cast<int>(std::ceil(4.0 * radius));
    std::vector<double> w(2 * half + 1);
    double total = 0.0;
    for (int o = -half; o <= half; ++o) {
        w[o + half] = std::exp(-0.5 * (o * o) / (radius * radius));
        total += w[o + half];
    }
    for (double& x : w) x /= total;

    auto reflect = [](long i, long n) {
        const long period = 2 * n;
        i %= period;
        if (i < 0) i += period;
        return i < n ? i : period - 1 - i;
    };

    const int nx = field.width();
    const int ny = field.height();
    std::vector<double> tmp(static_cast<std::size_t>(nx) * ny, 0.0);
    std::vector<double> out(tmp.size(), 0.0);
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            double s = 0.0;
            for (int o = -half; o <= half; ++o)
                s += w[o + half] * field.at(static_cast<int>(reflect(i + o, nx)), j);
            tmp[static_cast<std::size_t>(j) * nx + i] = s;
        }
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            double s = 0.0;
            for (int o = -half; o <= half; ++o)
                s += w[o + half] * tmp[static_cast<std::size_t>(reflect(j + o, ny)) * nx + i];
            out[static_cast<std::size_t>(j) * nx + i] = s;
        }
    return {nx, ny, std::move(out), field.spacing(), field.origin()};
}

/// Bilinear resize to a new pixel grid with unit spacing (corner nodes
/// aligned with the source corners).
inline ScalarField resize(const ScalarField& field, int width, int height) {
    if (width < 1 || height < 1) throw InvalidArgument("resize target must be positive");
    const double sx = width > 1 ? (field.width() - 1.0) / (width - 1.0) : 0.0;
    const double sy = height > 1 ? (field.height() - 1.0) / (height - 1.0) : 0.0;
    std::vector<double> v(static_cast<std::size_t>(width) * height);
    for (int j = 0; j < height; ++j)
        for (int i = 0; i < width; ++i)
            v[static_cast<std::size_t>(j) * width + i] = field.eval(field.node_position(0, 0) +
                Vec<2>(i * sx * field.spacing().x(), j * sy * field.spacing().y()));
    return {width, height, std::move(v)};
}

/// Resize followed by a unit-radius blur; used to bring small inputs onto
/// the working grid.
inline ScalarField upsample(const ScalarField& field, int width, int height) {
    return smooth(resize(field, width, height), 1.0);
}

/// Output geometry covering the same physical extent as `field` with
/// width × height nodes.
inline ScalarField resample(const ScalarField& field, int width, int height) {
    if (width < 1 || height < 1) throw InvalidArgument("resample target must be positive");
    const Vec<2> extent((field.width() - 1) * field.spacing().x(),
                        (field.height() - 1) * field.spacing().y());
    const Vec<2> spacing(width > 1 ? extent.x() / (width - 1) : field.spacing().x(),
                         height > 1 ? extent.y() / (height - 1) : field.spacing().y());
    const Vec<2> safe_spacing(spacing.x() > 0 ? spacing.x() : 1.0, spacing.y() > 0 ? spacing.y() : 1.0);
    std::vector<double> v(static_cast<std::size_t>(width) * height);
    for (int j = 0; j < height; ++j)
        for (int i = 0; i < width; ++i)
            v[static_cast<std::size_t>(j) * width + i] =
                field.eval(field.origin() + Vec<2>(i * safe_spacing.x(), j * safe_spacing.y()));
    return {width, height, std::move(v), safe_spacing, field.origin()};
}

struct GridSample {
    PointArray<2> positions;
    Eigen::VectorXd values;
};

/// Every stride-th node in row-major order, with the field value there.
inline GridSample sample_grid(const ScalarField& field, int stride) {
    if (stride < 1) throw InvalidArgument("stride must be >= 1");
    const int nx = (field.width() + stride - 1) / stride;
    const int ny = (field.height() + stride - 1) / stride;
    GridSample out{PointArray<2>(nx * ny, 2), Eigen::VectorXd(nx * ny)};
    int k = 0;
    for (int j = 0; j < field.height(); j += stride)
        for (int i = 0; i < field.width(); i += stride) {
            out.positions.row(k) = field.node_position(i, j).transpose();
            out.values[k] = field.at(i, j);
            ++k;
        }
    return out;
}

/// Pointwise product of two fields on the same grid.
inline ScalarField multiply(const ScalarField& a, const ScalarField& b) {
    if (a.width() != b.width() || a.height() != b.height()) {
        throw InvalidArgument("multiply: image sizes differ");
    }
    std::vector<double> v(a.values().begin(), a.values().end());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= b.values()[i];
    return {a.width(), a.height(), std::move(v), a.spacing(), a.origin()};
}

}  // namespace metashoot
