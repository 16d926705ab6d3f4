#include "vipde/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vipde/error.hpp"
#include "vipde/models.hpp"

namespace vipde {

bool Box::contains(std::span<const double> x, double tol) const {
    for (std::size_t d = 0; d < dim(); ++d)
        if (x[d] < lo[d] - tol || x[d] > hi[d] + tol) return false;
    return true;
}

bool Box::contains(const Box& inner, double tol) const {
    for (std::size_t d = 0; d < dim(); ++d)
        if (inner.lo[d] < lo[d] - tol || inner.hi[d] > hi[d] + tol) return false;
    return true;
}

Box hull(const Box& a, const Box& b) {
    if (a.dim() != b.dim()) throw Error(ErrorCode::BadBox, "hull of boxes with different dimension");
    Box out = a;
    for (std::size_t d = 0; d < a.dim(); ++d) {
        out.lo[d] = std::min(a.lo[d], b.lo[d]);
        out.hi[d] = std::max(a.hi[d], b.hi[d]);
    }
    return out;
}

Grid::Grid(std::vector<std::vector<double>> axes, std::vector<std::array<BoundaryKind, 2>> faces)
    : axes_(std::move(axes)), faces_(std::move(faces)) {
    if (axes_.empty()) throw Error(ErrorCode::BadSize, "grid needs at least one axis");
    if (faces_.size() != axes_.size()) throw Error(ErrorCode::BadSize, "one face pair per axis required");
    for (std::size_t d = 0; d < axes_.size(); ++d) {
        const auto& a = axes_[d];
        if (a.size() < 3) throw Error(ErrorCode::BadSize, "axis " + std::to_string(d) + " has fewer than 3 nodes");
        for (std::size_t i = 1; i < a.size(); ++i)
            if (!(a[i] > a[i - 1]))
                throw Error(ErrorCode::BadBox, "axis " + std::to_string(d) + " is not strictly increasing");
    }
    strides_.assign(axes_.size(), 1);
    for (std::size_t d = axes_.size() - 1; d > 0; --d) strides_[d - 1] = strides_[d] * axes_[d].size();
    size_ = strides_[0] * axes_[0].size();
}

Box Grid::box() const {
    Box b;
    for (const auto& a : axes_) {
        b.lo.push_back(a.front());
        b.hi.push_back(a.back());
    }
    return b;
}

std::size_t Grid::flatten(std::span<const std::size_t> multi) const {
    std::size_t flat = 0;
    for (std::size_t d = 0; d < dim(); ++d) flat += multi[d] * strides_[d];
    return flat;
}

void Grid::unflatten(std::size_t flat, std::span<std::size_t> multi) const {
    for (std::size_t d = 0; d < dim(); ++d) multi[d] = (flat / strides_[d]) % axes_[d].size();
}

void Grid::coords(std::size_t flat, std::span<double> x) const {
    for (std::size_t d = 0; d < dim(); ++d) x[d] = axes_[d][axis_index(flat, d)];
}

std::vector<double> Grid::coords(std::size_t flat) const {
    std::vector<double> x(dim());
    coords(flat, x);
    return x;
}

bool Grid::on_boundary(std::size_t flat) const {
    for (std::size_t d = 0; d < dim(); ++d) {
        const std::size_t i = axis_index(flat, d);
        if (i == 0 || i + 1 == axes_[d].size()) return true;
    }
    return false;
}

bool Grid::on_dirichlet_face(std::size_t flat) const {
    for (std::size_t d = 0; d < dim(); ++d) {
        const std::size_t i = axis_index(flat, d);
        if (i == 0 && faces_[d][0] == BoundaryKind::DirichletPayoff) return true;
        if (i + 1 == axes_[d].size() && faces_[d][1] == BoundaryKind::DirichletPayoff) return true;
    }
    return false;
}

Grid Grid::refined() const {
    std::vector<std::vector<double>> axes;
    for (const auto& a : axes_) {
        std::vector<double> r;
        r.reserve(2 * a.size() - 1);
        for (std::size_t i = 0; i + 1 < a.size(); ++i) {
            r.push_back(a[i]);
            r.push_back(0.5 * (a[i] + a[i + 1]));
        }
        r.push_back(a.back());
        axes.push_back(std::move(r));
    }
    return Grid(std::move(axes), faces_);
}

namespace {

std::vector<double> make_axis(double lo, double hi, std::size_t n, const AxisGrading& g) {
    std::vector<double> a(n);
    if (g.kind == Grading::Uniform) {
        for (std::size_t i = 0; i < n; ++i) a[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    } else {
        if (!(g.intensity > 0.0)) throw Error(ErrorCode::BadSize, "geometric grading needs a positive intensity");
        const double focus = std::clamp(g.focus, lo, hi);
        const double width = g.intensity * (hi - lo);
        const double c1 = std::asinh((lo - focus) / width);
        const double c2 = std::asinh((hi - focus) / width);
        for (std::size_t i = 0; i < n; ++i) {
            const double xi = static_cast<double>(i) / static_cast<double>(n - 1);
            a[i] = focus + width * std::sinh(c1 + (c2 - c1) * xi);
        }
    }
    a.front() = lo;
    a.back() = hi;
    return a;
}

}  // namespace

Grid make_grid(const Box& box, std::span<const std::size_t> sizes, std::span<const AxisGrading> grading) {
    if (box.dim() == 0 || box.hi.size() != box.dim()) throw Error(ErrorCode::BadBox, "box has no dimensions");
    if (sizes.size() != box.dim()) throw Error(ErrorCode::BadSize, "sizes do not match box dimension");
    if (!grading.empty() && grading.size() != box.dim())
        throw Error(ErrorCode::BadSize, "grading does not match box dimension");
    std::vector<std::vector<double>> axes;
    for (std::size_t d = 0; d < box.dim(); ++d) {
        if (!(box.lo[d] < box.hi[d]) || !std::isfinite(box.lo[d]) || !std::isfinite(box.hi[d]))
            throw Error(ErrorCode::BadBox, "axis " + std::to_string(d) + " needs finite lo < hi");
        if (sizes[d] < 3) throw Error(ErrorCode::BadSize, "axis " + std::to_string(d) + " needs at least 3 nodes");
        axes.push_back(make_axis(box.lo[d], box.hi[d], sizes[d], grading.empty() ? AxisGrading{} : grading[d]));
    }
    std::vector<std::array<BoundaryKind, 2>> faces(
        box.dim(), {BoundaryKind::DirichletPayoff, BoundaryKind::DirichletPayoff});
    return Grid(std::move(axes), std::move(faces));
}

Eigen::VectorXd trapezoid_volumes(const Grid& grid) {
    std::vector<std::vector<double>> w1(grid.dim());
    for (std::size_t d = 0; d < grid.dim(); ++d) {
        const auto& a = grid.axis(d);
        auto& w = w1[d];
        w.assign(a.size(), 0.0);
        for (std::size_t i = 0; i + 1 < a.size(); ++i) {
            const double h = a[i + 1] - a[i];
            w[i] += 0.5 * h;
            w[i + 1] += 0.5 * h;
        }
    }
    Eigen::VectorXd vol(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        double v = 1.0;
        for (std::size_t d = 0; d < grid.dim(); ++d) v *= w1[d][grid.axis_index(k, d)];
        vol[k] = v;
    }
    return vol;
}

Eigen::VectorXd quadrature_weights(const Grid& grid, const ExcessiveDensity& density) {
    Eigen::VectorXd w = trapezoid_volumes(grid);
    std::vector<double> x(grid.dim());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        grid.coords(k, x);
        w[k] *= density.normalizer * density.rho(x);
    }
    return w;
}

double interpolate(const Grid& grid, const Eigen::VectorXd& values, std::span<const double> x) {
    const std::size_t dim = grid.dim();
    std::vector<std::size_t> lo(dim);
    std::vector<double> frac(dim);
    for (std::size_t d = 0; d < dim; ++d) {
        const auto& a = grid.axis(d);
        const double xd = std::clamp(x[d], a.front(), a.back());
        auto it = std::upper_bound(a.begin(), a.end(), xd);
        std::size_t i = static_cast<std::size_t>(std::distance(a.begin(), it));
        i = std::clamp<std::size_t>(i, 1, a.size() - 1) - 1;
        lo[d] = i;
        frac[d] = (xd - a[i]) / (a[i + 1] - a[i]);
    }
    double out = 0.0;
    std::vector<std::size_t> idx(dim);
    for (std::size_t corner = 0; corner < (std::size_t{1} << dim); ++corner) {
        double w = 1.0;
        for (std::size_t d = 0; d < dim; ++d) {
            const bool up = (corner >> d) & 1U;
            idx[d] = lo[d] + (up ? 1 : 0);
            w *= up ? frac[d] : 1.0 - frac[d];
        }
        if (w != 0.0) out += w * values[static_cast<Eigen::Index>(grid.flatten(idx))];
    }
    return out;
}

}  // namespace vipde
