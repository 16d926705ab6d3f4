#pragma once

#include <memory>
#include <optional>
#include <ostream>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "vipde/grid.hpp"
#include "vipde/models.hpp"

namespace vipde {

using RowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using ColMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor>;

/// How first derivatives are discretized.
///  - Upwind: one-sided in the direction of the drift everywhere.
///  - Hybrid: central where the row stays monotone, upwind otherwise.
///  - Central: central everywhere; the M-matrix sign pattern is then not guaranteed.
enum class DriftScheme { Upwind, Hybrid, Central };

struct AssembleOptions {
    DriftScheme drift = DriftScheme::Hybrid;
    /// Compute the discrete accretivity shift by a dense eigen solve when the grid is this small.
    std::size_t discrete_shift_max_nodes = 0;
};

/// N_h = -L_h + c I on a tensor grid together with the L2(mu) weights.
struct DiscreteOperator {
    Grid grid;
    RowMatrix matrix_N;
    Eigen::VectorXd mu_weights;
    Eigen::VectorXd discount;
    /// Rows held at their value (DirichletPayoff faces): N row = c e_i.
    std::vector<char> frozen;
    double omega_certified = 0.0;
    std::optional<double> omega_discrete;
    /// Shift used for resolvent parameter bounds: max of the certified and discrete shifts.
    double omega = 0.0;
    DriftScheme drift = DriftScheme::Hybrid;
    /// Interior rows with a positive off-diagonal entry (only possible with mixed derivatives
    /// or central drift).
    std::vector<std::size_t> nonmonotone_rows;

    std::size_t size() const noexcept { return grid.size(); }
};

DiscreteOperator assemble(const ModelSpec& model, const Grid& grid, const ExcessiveDensity& density,
                          const AssembleOptions& options = {});

/// Wraps an explicit matrix as an operator on a unit-spaced 1D grid (for LCP tests and toy problems).
DiscreteOperator make_operator(const RowMatrix& matrix_N, const Eigen::VectorXd& mu_weights, double omega = 0.0);

/// Nodewise (L0* rho)/rho on the grid; same pointwise evaluator as certify_excessive.
Eigen::VectorXd apply_adjoint_to_density(const ModelSpec& model, const Grid& grid, const ExcessiveDensity& density);

/// Smallest w such that <N u, u>_mu >= -w |u|_mu^2 for all grid vectors vanishing on frozen rows
/// (dense eigen solve).
double discrete_accretivity_shift(const DiscreteOperator& op);

/// Sparse direct factorization below 2e5 unknowns, ILUT-preconditioned BiCGSTAB above.
class SparseSolver {
public:
    SparseSolver();
    ~SparseSolver();
    SparseSolver(SparseSolver&&) noexcept;
    SparseSolver& operator=(SparseSolver&&) noexcept;

    /// Factorizes A. The sparsity pattern is analyzed once and reused while it is unchanged.
    void compute(const ColMatrix& a);
    /// Solves A x = b to a relative residual of 1e-10.
    Eigen::VectorXd solve(const Eigen::VectorXd& b) const;

    static constexpr Eigen::Index kDirectLimit = 200000;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Factorized (I + lam N)^{-1}.
class Resolvent {
public:
    Resolvent(const DiscreteOperator& op, double lam);
    Eigen::VectorXd operator()(const Eigen::VectorXd& rhs) const;
    double lam() const noexcept { return lam_; }

private:
    double lam_;
    SparseSolver solver_;
};

/// Throws BadLambda unless 0 <= lam and lam * omega < 1.
void check_lambda(const DiscreteOperator& op, double lam);

Eigen::VectorXd resolvent(const DiscreteOperator& op, double lam, const Eigen::VectorXd& rhs);

/// Yosida approximation (u - (I + lam N)^{-1} u) / lam.
Eigen::VectorXd yosida(const DiscreteOperator& op, double lam, const Eigen::VectorXd& u);

double weighted_dot(const DiscreteOperator& op, const Eigen::VectorXd& u, const Eigen::VectorXd& v);
double weighted_norm(const DiscreteOperator& op, const Eigen::VectorXd& u);

/// Writes "row col value" lines, one per stored entry of N.
void dump_coo(const DiscreteOperator& op, std::ostream& os);

/// (I + lam N) in column-major storage with an explicit diagonal entry in every column.
ColMatrix shifted_identity(const DiscreteOperator& op, double lam);

}  // namespace vipde
