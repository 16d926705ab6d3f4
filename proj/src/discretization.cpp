#include "vipde/discretization.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseLU>

#include "vipde/error.hpp"
#include "vipde/stencil.hpp"

namespace vipde {

namespace {

struct RowBuilder {
    std::map<std::size_t, double> entries;  // L_h coefficients
    void add(std::size_t col, double v) {
        if (v != 0.0) entries[col] += v;
    }
};

}  // namespace

DiscreteOperator assemble(const ModelSpec& model, const Grid& grid, const ExcessiveDensity& density,
                          const AssembleOptions& options) {
    if (grid.dim() != model.dim) throw Error(ErrorCode::BadBox, "grid and model dimensions differ");
    if (!density.truncation.contains(grid.box(), 1e-12))
        throw Error(ErrorCode::BadBox, "grid box is not inside the density truncation box");

    const std::size_t n = grid.size();
    const std::size_t dim = grid.dim();
    DiscreteOperator op{grid, RowMatrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)),
                        quadrature_weights(grid, density), Eigen::VectorXd(n), std::vector<char>(n, 0),
                        0.0, std::nullopt, 0.0, options.drift, {}};

    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(n * (2 * dim + 1 + 4 * dim * (dim - 1) / 2));
    std::vector<double> x(dim), a(dim * dim), b(dim);
    std::vector<std::size_t> idx(dim);

    for (std::size_t k = 0; k < n; ++k) {
        grid.coords(k, x);
        grid.unflatten(k, idx);
        const double c = model.discount_rate(x);
        op.discount[static_cast<Eigen::Index>(k)] = c;
        if (grid.on_dirichlet_face(k)) {
            op.frozen[k] = 1;
            triplets.emplace_back(k, k, c);
            continue;
        }
        model.covariance(x, a);
        model.drift(x, b);
        RowBuilder row;

        for (std::size_t d = 0; d < dim; ++d) {
            const auto& ax = grid.axis(d);
            const std::size_t i = idx[d];
            const std::size_t last = ax.size() - 1;
            const std::size_t s = grid.stride(d);
            const double half_a = 0.5 * a[d * dim + d];
            const double bd = b[d];
            if (i > 0 && i < last) {
                const double hm = ax[i] - ax[i - 1];
                const double hp = ax[i + 1] - ax[i];
                if (!(hm > 0.0) || !(hp > 0.0))
                    throw Error(ErrorCode::StencilFailure, "degenerate spacing on axis " + std::to_string(d));
                const auto w2 = stencil::second_derivative(hm, hp);
                stencil::ThreePoint w1{0.0, 0.0, 0.0};
                const auto central = stencil::central_first(hm, hp);
                const auto upwind = bd > 0.0 ? stencil::forward_first(hp)
                                             : (bd < 0.0 ? stencil::backward_first(hm) : stencil::ThreePoint{0, 0, 0});
                switch (options.drift) {
                    case DriftScheme::Central: w1 = central; break;
                    case DriftScheme::Upwind: w1 = upwind; break;
                    case DriftScheme::Hybrid: {
                        const bool monotone = half_a * w2.lo + bd * central.lo >= 0.0 &&
                                              half_a * w2.hi + bd * central.hi >= 0.0;
                        w1 = monotone ? central : upwind;
                        break;
                    }
                }
                row.add(k - s, half_a * w2.lo + bd * w1.lo);
                row.add(k, half_a * w2.mid + bd * w1.mid);
                row.add(k + s, half_a * w2.hi + bd * w1.hi);
            } else {
                const int side = i == 0 ? 0 : 1;
                const std::size_t inward = side == 0 ? k + s : k - s;
                const double h = side == 0 ? ax[1] - ax[0] : ax[last] - ax[last - 1];
                if (grid.face(d, side) == BoundaryKind::NeumannZero) {
                    // Mirror ghost node: zero normal derivative, drift term vanishes.
                    row.add(inward, half_a * 2.0 / (h * h));
                    row.add(k, -half_a * 2.0 / (h * h));
                } else {
                    // Outflow: no normal diffusion; drift kept only when it points into the box.
                    const bool points_in = side == 0 ? bd > 0.0 : bd < 0.0;
                    if (points_in) {
                        row.add(inward, std::abs(bd) / h);
                        row.add(k, -std::abs(bd) / h);
                    }
                }
            }
        }

        for (std::size_t d = 0; d < dim; ++d)
            for (std::size_t e = d + 1; e < dim; ++e) {
                const double ade = a[d * dim + e];
                if (ade == 0.0) continue;
                const std::size_t i = idx[d], j = idx[e];
                if (i == 0 || j == 0 || i + 1 == grid.axis_size(d) || j + 1 == grid.axis_size(e)) continue;
                const auto& xd = grid.axis(d);
                const auto& xe = grid.axis(e);
                const double den = (xd[i + 1] - xd[i - 1]) * (xe[j + 1] - xe[j - 1]);
                const std::size_t sd = grid.stride(d), se = grid.stride(e);
                row.add(k + sd + se, ade / den);
                row.add(k - sd - se, ade / den);
                row.add(k + sd - se, -ade / den);
                row.add(k - sd + se, -ade / den);
            }

        bool monotone = true;
        double diag = c;
        for (const auto& [col, v] : row.entries) {
            if (col == k) {
                diag -= v;
            } else {
                triplets.emplace_back(k, col, -v);
                if (-v > 1e-12 * std::max(1.0, std::abs(diag))) monotone = false;
            }
        }
        triplets.emplace_back(k, k, diag);
        if (!monotone) op.nonmonotone_rows.push_back(k);
    }
    op.matrix_N.setFromTriplets(triplets.begin(), triplets.end());
    op.matrix_N.makeCompressed();

    op.omega_certified = density.omega_certified.value_or(0.0);
    if (!density.omega_certified) {
        const ExcessiveDensity cert = certify_excessive(model, density, grid);
        op.omega_certified = *cert.omega_certified;
    }
    op.omega = std::max(op.omega_certified, 0.0);
    if (options.discrete_shift_max_nodes > 0 && n <= options.discrete_shift_max_nodes) {
        op.omega_discrete = discrete_accretivity_shift(op);
        op.omega = std::max(op.omega, *op.omega_discrete);
    }
    return op;
}

DiscreteOperator make_operator(const RowMatrix& matrix_N, const Eigen::VectorXd& mu_weights, double omega) {
    const Eigen::Index n = matrix_N.rows();
    if (matrix_N.cols() != n || mu_weights.size() != n)
        throw Error(ErrorCode::LengthMismatch, "operator must be square and match the weights");
    std::vector<double> axis(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < axis.size(); ++i) axis[i] = static_cast<double>(i);
    Grid grid({axis}, {{BoundaryKind::NeumannZero, BoundaryKind::NeumannZero}});
    RowMatrix m = matrix_N;
    m.makeCompressed();
    return DiscreteOperator{std::move(grid), std::move(m), mu_weights, Eigen::VectorXd::Zero(n),
                            std::vector<char>(static_cast<std::size_t>(n), 0), omega, std::nullopt, omega,
                            DriftScheme::Hybrid, {}};
}

Eigen::VectorXd apply_adjoint_to_density(const ModelSpec& model, const Grid& grid, const ExcessiveDensity& density) {
    Eigen::VectorXd out(grid.size());
    std::vector<double> x(grid.dim());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        grid.coords(k, x);
        const double rho = density.rho(x);
        if (!(rho > 0.0) || !std::isfinite(rho))
            throw Error(ErrorCode::NonPositiveDensity, "rho <= 0 at node " + std::to_string(k));
        out[static_cast<Eigen::Index>(k)] = adjoint_ratio(model, density, x);
    }
    return out;
}

double discrete_accretivity_shift(const DiscreteOperator& op) {
    // Restricted to vectors that vanish on frozen (Dirichlet) rows.
    std::vector<Eigen::Index> free;
    for (std::size_t i = 0; i < op.size(); ++i)
        if (!op.frozen[i]) free.push_back(static_cast<Eigen::Index>(i));
    const auto m = static_cast<Eigen::Index>(free.size());
    if (m == 0) return 0.0;
    const Eigen::MatrixXd full = Eigen::MatrixXd(op.matrix_N);
    Eigen::MatrixXd q(m, m);
    for (Eigen::Index r = 0; r < m; ++r)
        for (Eigen::Index c = 0; c < m; ++c) q(r, c) = op.mu_weights[free[r]] * full(free[r], free[c]);
    // <N u, u>_mu = u^T W N u; substitute u = W^{-1/2} y and symmetrize.
    Eigen::VectorXd inv(m);
    for (Eigen::Index r = 0; r < m; ++r) inv[r] = 1.0 / std::sqrt(op.mu_weights[free[r]]);
    const Eigen::MatrixXd sym = inv.asDiagonal() * (0.5 * (q + q.transpose())) * inv.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
    return -es.eigenvalues().minCoeff();
}

// ---------------------------------------------------------------------------------------------

struct SparseSolver::Impl {
    bool direct = true;
    Eigen::SparseLU<ColMatrix, Eigen::COLAMDOrdering<int>> lu;
    Eigen::BiCGSTAB<ColMatrix, Eigen::IncompleteLUT<double>> iterative;
    bool analyzed = false;
    Eigen::Index nnz = -1;
    ColMatrix a;
};

SparseSolver::SparseSolver() : impl_(std::make_unique<Impl>()) {}
SparseSolver::~SparseSolver() = default;
SparseSolver::SparseSolver(SparseSolver&&) noexcept = default;
SparseSolver& SparseSolver::operator=(SparseSolver&&) noexcept = default;

void SparseSolver::compute(const ColMatrix& a) {
    auto& s = *impl_;
    s.a = a;
    s.direct = a.rows() < kDirectLimit;
    if (s.direct) {
        if (!s.analyzed || s.nnz != a.nonZeros()) {
            s.lu.analyzePattern(s.a);
            s.analyzed = true;
            s.nnz = a.nonZeros();
        }
        s.lu.factorize(s.a);
        if (s.lu.info() != Eigen::Success)
            throw Error(ErrorCode::SolveFailure, "sparse LU factorization failed: " + s.lu.lastErrorMessage());
    } else {
        s.iterative.setTolerance(1e-12);
        s.iterative.setMaxIterations(2000);
        s.iterative.compute(s.a);
        if (s.iterative.info() != Eigen::Success) throw Error(ErrorCode::SolveFailure, "ILUT preconditioner failed");
    }
}

Eigen::VectorXd SparseSolver::solve(const Eigen::VectorXd& b) const {
    auto& s = *impl_;
    Eigen::VectorXd x = s.direct ? Eigen::VectorXd(s.lu.solve(b)) : Eigen::VectorXd(s.iterative.solve(b));
    const double bn = b.norm();
    Eigen::VectorXd r = b - s.a * x;
    if (r.norm() > 1e-10 * bn) {
        // one step of iterative refinement
        x += s.direct ? Eigen::VectorXd(s.lu.solve(r)) : Eigen::VectorXd(s.iterative.solve(r));
        r = b - s.a * x;
    }
    if (!x.allFinite() || r.norm() > 1e-10 * bn) {
        std::ostringstream os;
        os << "linear solve residual " << r.norm() << " exceeds 1e-10 * |rhs| = " << 1e-10 * bn;
        throw Error(ErrorCode::SolveFailure, os.str());
    }
    return x;
}

ColMatrix shifted_identity(const DiscreteOperator& op, double lam) {
    RowMatrix id(op.matrix_N.rows(), op.matrix_N.cols());
    id.setIdentity();
    ColMatrix a = ColMatrix(id + lam * op.matrix_N);
    a.makeCompressed();
    return a;
}

void check_lambda(const DiscreteOperator& op, double lam) {
    if (!(lam >= 0.0) || !std::isfinite(lam)) throw Error(ErrorCode::BadLambda, "lambda must be >= 0");
    if (op.omega > 0.0 && !(lam * op.omega < 1.0)) {
        std::ostringstream os;
        os << "lambda=" << lam << " violates lambda < 1/omega = " << 1.0 / op.omega;
        throw Error(ErrorCode::BadLambda, os.str());
    }
}

Resolvent::Resolvent(const DiscreteOperator& op, double lam) : lam_(lam) {
    check_lambda(op, lam);
    solver_.compute(shifted_identity(op, lam));
}

Eigen::VectorXd Resolvent::operator()(const Eigen::VectorXd& rhs) const {
    if (lam_ == 0.0) return rhs;
    return solver_.solve(rhs);
}

Eigen::VectorXd resolvent(const DiscreteOperator& op, double lam, const Eigen::VectorXd& rhs) {
    if (static_cast<std::size_t>(rhs.size()) != op.size()) throw Error(ErrorCode::LengthMismatch, "rhs length");
    check_lambda(op, lam);
    if (lam == 0.0) return rhs;
    return Resolvent(op, lam)(rhs);
}

Eigen::VectorXd yosida(const DiscreteOperator& op, double lam, const Eigen::VectorXd& u) {
    if (!(lam > 0.0)) throw Error(ErrorCode::BadLambda, "Yosida approximation needs lambda > 0");
    return (u - resolvent(op, lam, u)) / lam;
}

double weighted_dot(const DiscreteOperator& op, const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
    if (u.size() != op.mu_weights.size() || v.size() != op.mu_weights.size())
        throw Error(ErrorCode::LengthMismatch, "vector length does not match the grid");
    return (op.mu_weights.array() * u.array() * v.array()).sum();
}

double weighted_norm(const DiscreteOperator& op, const Eigen::VectorXd& u) {
    return std::sqrt(std::max(weighted_dot(op, u, u), 0.0));
}

void dump_coo(const DiscreteOperator& op, std::ostream& os) {
    os.precision(17);
    for (Eigen::Index r = 0; r < op.matrix_N.outerSize(); ++r)
        for (RowMatrix::InnerIterator it(op.matrix_N, r); it; ++it) os << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
}

}  // namespace vipde
