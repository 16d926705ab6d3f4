#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace vipde {

struct ExcessiveDensity;

/// Axis-aligned box; bounds may be infinite when describing a natural state domain.
struct Box {
    std::vector<double> lo;
    std::vector<double> hi;

    std::size_t dim() const noexcept { return lo.size(); }
    bool contains(std::span<const double> x, double tol = 0.0) const;
    bool contains(const Box& inner, double tol = 0.0) const;
};

/// Smallest box containing both arguments (same dimension required).
Box hull(const Box& a, const Box& b);

enum class BoundaryKind { DirichletPayoff, NeumannZero, OutflowOneSided };

enum class Grading { Uniform, Geometric };

struct AxisGrading {
    Grading kind = Grading::Uniform;
    double focus = 0.0;      // coordinate the nodes cluster around
    double intensity = 0.1;  // sinh stretch width as a fraction of the axis length
};

/// Tensor-product grid. Flat indices are row-major: the last axis varies fastest.
class Grid {
public:
    Grid(std::vector<std::vector<double>> axes,
         std::vector<std::array<BoundaryKind, 2>> faces);

    std::size_t dim() const noexcept { return axes_.size(); }
    std::size_t size() const noexcept { return size_; }
    std::size_t axis_size(std::size_t d) const { return axes_[d].size(); }
    const std::vector<double>& axis(std::size_t d) const { return axes_[d]; }
    std::size_t stride(std::size_t d) const { return strides_[d]; }
    Box box() const;

    BoundaryKind face(std::size_t d, int side) const { return faces_[d][side]; }
    void set_face(std::size_t d, int side, BoundaryKind kind) { faces_[d][side] = kind; }

    std::size_t flatten(std::span<const std::size_t> multi) const;
    void unflatten(std::size_t flat, std::span<std::size_t> multi) const;
    std::size_t axis_index(std::size_t flat, std::size_t d) const { return (flat / strides_[d]) % axes_[d].size(); }
    void coords(std::size_t flat, std::span<double> x) const;
    std::vector<double> coords(std::size_t flat) const;

    /// True when the node lies on any face of the box.
    bool on_boundary(std::size_t flat) const;
    /// True when the node lies on a face whose kind is DirichletPayoff.
    bool on_dirichlet_face(std::size_t flat) const;

    /// Grid with every cell bisected; original nodes are kept.
    Grid refined() const;

private:
    std::vector<std::vector<double>> axes_;
    std::vector<std::array<BoundaryKind, 2>> faces_;
    std::vector<std::size_t> strides_;
    std::size_t size_ = 0;
};

/// Builds a grid over `box`. Geometric grading uses a sinh map that clusters nodes near the
/// focus. All faces default to DirichletPayoff.
Grid make_grid(const Box& box, std::span<const std::size_t> sizes,
               std::span<const AxisGrading> grading = {});

/// Trapezoidal weights w_i = a * rho(x_i) * cell volume, so that sum_i w_i f(x_i) ~ int f dmu.
Eigen::VectorXd quadrature_weights(const Grid& grid, const ExcessiveDensity& density);

/// Trapezoidal cell volumes only (no density).
Eigen::VectorXd trapezoid_volumes(const Grid& grid);

/// Multilinear interpolation of nodal values at a point inside the grid box.
double interpolate(const Grid& grid, const Eigen::VectorXd& values, std::span<const double> x);

}  // namespace vipde
